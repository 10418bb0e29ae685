"""Probability that a bounded random walk leaves [0, 4] within 30 and 40 rounds.

Here there is no score, so Z = 1 and the query masses are probabilities.  The
bounded range caps ``count`` at the query threshold: runs that would pass it are
cut off and count as misses for the lower bound.
"""
import math

from postbound import AnalysisConfig, Query, analyze, load_program, simulate
from postbound.cli import resolve_program

wpts = load_program(str(resolve_program("cav_ex_7")))
for k in (30, 40):
    cfg = AnalysisConfig(degree=6, mode="path-prob", bounds={"x": (0, 4), "count": (0, k)},
                         queries=[Query("count", -math.inf, k, f"count<={k}")])
    rep = analyze(wpts, cfg, "cav_ex_7")
    q = rep.queries[0]
    est = simulate(wpts, None, 200_000, seed=1, query=(-math.inf, k))
    print(f"P(count <= {k}) in [{q['l']:.4f}, {q['u']:.4f}]   simulated {est.mean:.4f}   ({rep.seconds:.1f} s)")
