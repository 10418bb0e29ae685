"""Score-recursive programs: integrability first, bounds second.

The birth process multiplies its weight by 1.1 on every birth, inside the loop.
Bounds only make sense once the stopping time is shown to decay faster than the
weight can grow.  The program with weight 3 per round fails that test.
"""
import math

from postbound import AnalysisConfig, OstRejected, analyze, load_program
from postbound.cli import resolve_program


def load(name):
    return load_program(str(resolve_program(name)))


try:
    analyze(load("nonintegrable"))
except OstRejected as exc:
    v = exc.verdict
    print(f"nonintegrable: rejected (c2 = {v.c2:.3f}, c3 = {v.c3:.3f})")
    print(f"  {v.reason}")

cfg = AnalysisConfig(degree=4, partitions=10, bounds={"lambda": (0, 2), "time": (0, 10)},
                     ost={"c3": math.log(1.1)}, oracle_n=20_000)
rep = analyze(load("birth"), cfg, "birth")
print()
print(rep.summary())
print()
print(f"{'lambda':>14}  {'lower':>9}  {'oracle':>9}  {'upper':>9}")
for p in rep.z.partitions:
    lo, hi = p.box["lambda"]
    print(f"[{lo:4.2f}, {hi:4.2f}]  {p.lower.value:9.3f}  {p.oracle['mean']:9.3f}  {p.upper.value:9.3f}")
