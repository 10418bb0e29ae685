"""Command-line entry point: ``postbound analyze <program> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

from .frontend import FrontendError, load_program
from .oracle import RNG_NAME, simulate, simulate_points, write_csv
from .pipeline import (ENGINE_ALIASES, AnalysisConfig, AnalysisError, OstRejected, Query, analyze,
                       partition_init)

EXIT_OK, EXIT_ERROR, EXIT_DEGRADED, EXIT_OST = 0, 1, 2, 3
TIME_LIMIT_ENV = "POSTBOUND_TIME_LIMIT"


def _number(text: str) -> float:
    """Float literal, ``inf``, or ``ln<x>`` / ``log<x>`` for a natural logarithm."""
    t = text.strip().lower()
    for p in ("ln", "log"):
        if t.startswith(p):
            arg = t[len(p):].strip("()")
            return math.log(float(arg))
    return float(t)


def _bounds(items: list[str]) -> dict[str, tuple[float, float]]:
    out = {}
    for it in items:
        try:
            var, rng = it.split("=", 1)
            lo, hi = rng.split(":", 1)
            out[var.strip()] = (_number(lo), _number(hi))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad bound {it!r}; use var=lo:hi") from None
    return out


def _ost(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        k, _, v = part.partition("=")
        k = k.strip()
        if k not in ("c1", "c2", "c3") or not v:
            raise argparse.ArgumentTypeError(f"bad OST assertion {part!r}; use c1=..,c2=..,c3=..")
        out[k] = _number(v)
    return out


def resolve_program(name: str) -> Path:
    """A file path, or the name of a bundled benchmark (with or without ``.bppl``)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".bppl") else p.name
    bundled = resources.files("postbound") / "benchmarks" / f"{stem}.bppl"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no program file {name!r} and no bundled benchmark named {stem!r}"
                            f" (bundled: {', '.join(list_benchmarks())})")


def list_benchmarks() -> list[str]:
    d = resources.files("postbound") / "benchmarks"
    return sorted(f.name[:-5] for f in d.iterdir() if f.name.endswith(".bppl"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="postbound", description="Guaranteed posterior bounds for probabilistic programs.")
    sub = ap.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="bound the normalising constant, query masses or posterior probabilities")
    a.add_argument("program", help="program file or bundled benchmark name")
    a.add_argument("--mode", choices=["npd", "z-bounds", "path-prob", "simulate"], default=None)
    a.add_argument("--d", type=int, default=None, help="template degree")
    a.add_argument("--m", type=int, default=None, help="number of partitions of the initial distribution")
    a.add_argument("--engine", choices=["auto", "handelman", "putinar", *ENGINE_ALIASES], default=None)
    a.add_argument("--bounds", nargs="+", default=[], metavar="VAR=LO:HI", help="bounded-range overrides")
    a.add_argument("--delta", type=float, default=None, help="widening of the default bounded range")
    a.add_argument("--eps", type=float, default=None, help="score approximation error target")
    a.add_argument("--ost", type=_ost, default=None, metavar="c1=..,c2=..,c3=..",
                   help="asserted tail and growth constants (ln<x> accepted)")
    a.add_argument("--query", action="append", default=[], metavar="[NAME@]VAR=LO:HI")
    a.add_argument("--oracle-n", type=int, default=None, help="oracle samples per partition midpoint")
    a.add_argument("--oracle-max-steps", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--out", default="postbound-out", help="output directory")
    a.add_argument("--config", help="JSON file with analysis settings; flags override it")
    a.add_argument("--quiet", action="store_true")
    sub.add_parser("benchmarks", help="list bundled benchmark programs")
    return ap


def make_config(args) -> AnalysisConfig:
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    cfg = AnalysisConfig.from_json(base)
    flags = {"mode": args.mode, "degree": args.d, "partitions": args.m, "engine": args.engine,
             "delta": args.delta, "eps_target": args.eps, "oracle_n": args.oracle_n,
             "oracle_max_steps": args.oracle_max_steps, "seed": args.seed}
    for k, v in flags.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.bounds:
        cfg.bounds = {**cfg.bounds, **_bounds(args.bounds)}
    if args.ost:
        cfg.ost = {**cfg.ost, **args.ost}
    if args.query:
        cfg.queries = cfg.queries + [Query.parse(q) for q in args.query]
    env = os.environ.get(TIME_LIMIT_ENV)
    if env:
        cfg.time_limit = float(env)
    if cfg.degree < 1 or cfg.partitions < 1 or cfg.oracle_n < 0:
        raise ValueError("need --d >= 1, --m >= 1 and --oracle-n >= 0")
    return cfg


def _simulate_only(wpts, cfg: AnalysisConfig, out: Path, name: str, quiet: bool) -> int:
    n = cfg.oracle_n or 10_000
    parts = partition_init(wpts, cfg.partitions)
    mids = [wpts.initial.values_at(p.witness) for p in parts]
    ests = simulate_points(wpts, mids, n, cfg.seed, cfg.oracle_max_steps)
    write_csv(str(out / "oracle.csv"), [p.witness for p in parts], ests)
    z = simulate(wpts, None, n, cfg.seed + 1, cfg.oracle_max_steps)
    report = {"program": name, "config": cfg.to_json(), "rng": RNG_NAME, "oracle": {"z": z.to_json()},
              "midpoints": [{"witness": p.witness, **e.to_json()} for p, e in zip(parts, ests)]}
    for q in cfg.queries:
        e = simulate(wpts, None, n, cfg.seed + 1, cfg.oracle_max_steps, (q.lo, q.hi))
        report["oracle"][q.label] = e.to_json()
    (out / "report.json").write_text(json.dumps(report, indent=1))
    if not quiet:
        print(f"program      {name}")
        print(f"oracle Z     {z.mean:.6g} +- {z.stderr:.2g} (n={z.n}, truncated {z.truncated})")
        for q in cfg.queries:
            o = report["oracle"][q.label]
            print(f"query {q.label:<12} {o['mean']:.6g} +- {o['stderr']:.2g}")
    return EXIT_OK


def run(args) -> int:
    path = resolve_program(args.program)
    cfg = make_config(args)
    wpts = load_program(str(path))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = path.stem
    if cfg.mode == "simulate":
        return _simulate_only(wpts, cfg, out, name, args.quiet)
    try:
        report = analyze(wpts, cfg, name)
    except OstRejected as exc:
        (out / "report.json").write_text(json.dumps(
            {"program": name, "config": cfg.to_json(), "ost": exc.verdict.to_json(), "verified": False}, indent=1))
        print(f"OST prerequisites rejected: {exc.verdict.reason}", file=sys.stderr)
        print("the posterior may not be integrable; supply --ost constants only if they are known to hold",
              file=sys.stderr)
        return EXIT_OST
    (out / "report.json").write_text(report.dumps())
    report.write_csv(str(out / "bounds.csv"))
    if report.z is not None and any(p.oracle for p in report.z.partitions):
        with open(out / "oracle.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["witness", "estimate", "stderr", "n", "truncated"])
            for p in report.z.partitions:
                o = p.oracle or {}
                wr.writerow([json.dumps(p.witness), o.get("mean", ""), o.get("stderr", ""), o.get("n", ""),
                             o.get("truncated", "")])
    if not args.quiet:
        print(report.summary())
        print(f"wrote        {out}/report.json, bounds.csv")
    if report.degraded or not report.verified:
        return EXIT_DEGRADED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "benchmarks":
        print("\n".join(list_benchmarks()))
        return EXIT_OK
    try:
        return run(args)
    except (FileNotFoundError, FrontendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (AnalysisError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
