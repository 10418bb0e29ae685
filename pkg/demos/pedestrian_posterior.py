"""Posterior over the starting point of the low-precision pedestrian walk.

Bounds the unnormalised density on each slice of the prior, integrates them into
bounds on Z, and turns a query on ``start`` into posterior probability bounds.
Small settings so it runs in well under a minute; raise --d / --m for tighter bounds.
"""
import argparse
import math

from postbound import AnalysisConfig, Query, analyze, load_program
from postbound.cli import resolve_program


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--m", type=int, default=6)
    ap.add_argument("--box", type=float, default=10.0, help="bounded range for pos and dis")
    args = ap.parse_args()

    wpts = load_program(str(resolve_program("pedestrian_ld")))
    cfg = AnalysisConfig(degree=args.d, partitions=args.m,
                         bounds={"pos": (0, args.box), "dis": (0, args.box)},
                         queries=[Query("start", -math.inf, 1.0, "start<=1")],
                         oracle_n=5000, oracle_max_steps=300)
    rep = analyze(wpts, cfg, "pedestrian_ld")
    print(rep.summary())
    print()
    print(f"{'start':>14}  {'lower':>10}  {'oracle':>10}  {'upper':>10}")
    for p in rep.z.partitions:
        lo, hi = p.box["start"]
        print(f"[{lo:4.2f}, {hi:4.2f}]  {p.lower.value:10.5f}  {p.oracle['mean']:10.5f}  {p.upper.value:10.5f}")
    q = rep.queries[0]
    if q["npd"] is not None:
        print(f"\nP(start <= 1 | observation) in [{q['npd'][0]:.3f}, {q['npd'][1]:.3f}]")


if __name__ == "__main__":
    main()
