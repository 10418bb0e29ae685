"""End-to-end bound analysis: queries, partitions, OST checks, synthesis and integration."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Mapping

import numpy as np

from .cases import TemplateSet, UnsupportedError, terminal_value
from .certificates import BoundResult, Scaling, build_constraints, choose_engine, encode, synthesize_bound
from .conic import verify_posthoc
from .distributions import Normal, PointMass, partial_moment
from .oracle import RNG_NAME, NoEvidence, simulate, simulate_points, tail_fit
from .polynomial import Box, Polynomial
from .regions import Atom
from .scoreapprox import approximate_pdf, replace_score
from .truncation import TruncationContext, derive_trunc_approx, extend_range, ost_upper_constant
from .wpts import Classification, Fork, Guard, Transition, Weight, Wpts, classify, validate, working_box

ENGINE_ALIASES = {"lp": "handelman", "sdp": "putinar"}


class AnalysisError(Exception):
    pass


class OstRejected(AnalysisError):
    def __init__(self, verdict: "OstVerdict"):
        super().__init__(verdict.reason)
        self.verdict = verdict


# ---------------------------------------------------------------------------
# queries


@dataclass(frozen=True)
class Query:
    """``lo <= ret <= hi`` on the returned variable; unbounded sides mean the full line."""

    var: str | None = None
    lo: float = -math.inf
    hi: float = math.inf
    name: str = ""

    def is_full(self) -> bool:
        return self.lo == -math.inf and self.hi == math.inf

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.is_full():
            return "full"
        return f"{self.var} in [{self.lo:g},{self.hi:g}]"

    @staticmethod
    def parse(text: str) -> "Query":
        """``var=lo:hi`` with either side optional, e.g. ``count=:30``."""
        name = ""
        if "@" in text:
            name, text = text.split("@", 1)
        var, rng = text.split("=", 1)
        lo, hi = rng.split(":", 1)
        return Query(var.strip(), float(lo) if lo.strip() else -math.inf,
                     float(hi) if hi.strip() else math.inf, name)

    def to_json(self):
        return {"var": self.var, "lo": _jnum(self.lo), "hi": _jnum(self.hi), "name": self.label}


def _jnum(x):
    if x is None:
        return None
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _fixed_return(wpts: Wpts) -> bool:
    rv = wpts.ret_var
    return all(rv not in f.update for t in wpts.transitions for f in t.forks)


def restrict_query(wpts: Wpts, q: Query) -> tuple[Wpts, str]:
    """System whose expected weight is the query mass, and which construction was used.

    ``"full"`` returns the system unchanged; ``"case1"`` also returns it unchanged because
    the returned variable keeps its initial value, so the query is applied when integrating
    over the initial distribution; ``"case2"`` zeroes the weight of every exit whose
    returned value falls outside the query set.
    """
    if q.var is not None and q.var != wpts.ret_var:
        raise ValueError(f"query over {q.var}, but the program returns {wpts.ret_var}")
    if q.is_full():
        return wpts, "full"
    if _fixed_return(wpts):
        return wpts, "case1"
    rv = Polynomial.var(wpts.ret_var)
    atoms = []
    if q.lo > -math.inf:
        atoms.append(Atom(rv - q.lo))
    if q.hi < math.inf:
        atoms.append(Atom(Polynomial.const(q.hi) - rv))
    inside = Guard.of([atoms])
    out = wpts.copy()
    ts = []
    for t in out.transitions:
        exits = [f for f in t.forks if f.dest == wpts.out_loc]
        if wpts.terminal(t.source) or not exits:
            ts.append(t)
            continue
        conds = {json.dumps(inside.subs(f.substitution(wpts.program_vars)).to_json(), sort_keys=True) for f in exits}
        if len(conds) != 1:
            raise UnsupportedError("exits of one transition set the returned value differently")
        cond = inside.subs(exits[0].substitution(wpts.program_vars))
        if cond.variables() & set(wpts.sampling_vars):
            raise UnsupportedError("returned value depends on a value sampled at exit")
        gin = t.guard.and_(cond)
        if not gin.is_false():
            ts.append(Transition(t.source, gin, t.forks, t.origin, t.region))
        gout = t.guard.and_(cond.negate())
        if not gout.is_false():
            forks = [Fork(f.dest, f.prob, dict(f.update), Weight.const(0.0)) if f.dest == wpts.out_loc else f
                     for f in t.forks]
            ts.append(Transition(t.source, gout, forks, t.origin, t.region))
    out.transitions = ts
    out.meta = dict(out.meta, query=q.to_json())
    return out, "case2"


# ---------------------------------------------------------------------------
# partitions


@dataclass
class Partition:
    index: int
    box: Box  # over prior variables
    witness: dict[str, float]
    mass: float
    volume: float


def partition_init(wpts: Wpts, m: int) -> list[Partition]:
    """``m`` equal slices of the prior support along its first non-degenerate axis."""
    if m < 1:
        raise ValueError("need at least one partition")
    if m > 10_000:
        raise ValueError("at most 10^4 partitions are supported")
    pri = wpts.initial.priors
    box = wpts.initial.prior_box()
    nd = wpts.initial.nondegenerate()
    if not nd:
        return [Partition(0, box, box.midpoint(), 1.0, 1.0)]
    axis = nd[0]
    a, b = box[axis]
    edges = np.linspace(a, b, m + 1)
    out = []
    for i in range(m):
        bb = dict(box.bounds)
        bb[axis] = (float(edges[i]), float(edges[i + 1]))
        pb = Box(bb)
        mass = 1.0
        vol = 1.0
        for v in nd:
            lo, hi = pb[v]
            mass *= partial_moment(pri[v], 0, lo, hi).constant_term()
            vol *= hi - lo
        out.append(Partition(i, pb, pb.midpoint(), mass, vol))
    return out


def integrate_prior(p: Polynomial, wpts: Wpts, box: Box) -> float:
    """Integral of ``p`` (a polynomial in prior variables) against the prior over ``box``."""
    pri = wpts.initial.priors
    cur = p
    for v in sorted(pri):
        d = pri[v]
        if isinstance(d, PointMass):
            cur = cur.subs({v: float(d.c)})
            continue
        lo, hi = box[v]
        if hi <= lo:
            return 0.0
        acc = Polynomial()
        for mono, cof in cur.split_by({v}).items():
            k = dict(mono).get(v, 0)
            acc = acc + cof * partial_moment(d, k, lo, hi)
        cur = acc
    if not cur.is_constant():
        raise AnalysisError(f"integrand still depends on {sorted(cur.variables())}")
    return cur.constant_term()


def _clip_case1(wpts: Wpts, q: Query, box: Box) -> Box | None:
    """Part of the prior box where the (fixed) returned value lies in the query set."""
    val = wpts.initial.values[wpts.ret_var]
    if val.is_constant():
        c = val.constant_term()
        return box if q.lo <= c <= q.hi else None
    if not val.is_affine() or len(val.variables()) != 1:
        raise UnsupportedError("query on a returned value that is not affine in one prior")
    c0, lin = val.linear_coeffs()
    (v, a), = lin.items()
    lo, hi = (q.lo - c0) / a, (q.hi - c0) / a
    if a < 0:
        lo, hi = hi, lo
    blo, bhi = box[v]
    lo, hi = max(lo, blo), min(hi, bhi)
    if hi <= lo:
        return None
    bb = dict(box.bounds)
    bb[v] = (lo, hi)
    return Box(bb)


# ---------------------------------------------------------------------------
# OST prerequisites


@dataclass
class OstPrereq:
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    evidence: str = ""


@dataclass
class OstVerdict:
    passed: bool
    c1: float | None
    c2: float | None
    c3: float | None
    evidence: str
    kappa: float
    reason: str
    checks: dict = field(default_factory=dict)

    def to_json(self):
        return {k: _jnum(v) for k, v in asdict(self).items()}


def _check_points(wpts: Wpts, box: Box, extra: list[dict]) -> list[dict]:
    """Full valuations at the corners of ``box`` (other variables from ``extra[0]``)."""
    base = extra[0] if extra else {v: 0.0 for v in wpts.program_vars}
    vs = box.variables
    pts = []
    for mask in range(2 ** len(vs)):
        p = dict(base)
        for i, v in enumerate(vs):
            p[v] = box[v][1] if mask >> i & 1 else box[v][0]
        pts.append(p)
    return pts + extra


def check_ost_prereqs(wpts: Wpts, cls: Classification, box: Box, user: OstPrereq | None = None,
                      oracle_n: int = 10_000, seed: int = 0, start_points: list[dict] | None = None,
                      max_steps: int = 100_000) -> OstVerdict:
    """Exponential stopping-time tail (E1) and bounded step weights (E2) with c2 > c3."""
    user = user or OstPrereq()
    kappa = cls.update_bound
    if cls.kind == "score-at-end":
        return OstVerdict(True, None, None, None, "not needed", kappa, "score-at-end program")
    if cls.kind != "score-recursive":
        return OstVerdict(False, None, None, None, "", kappa, f"unsupported program: {cls.reason}")
    checks: dict = {"step_weight_bound": cls.step_weight_bound}
    c3 = cls.c3
    if user.c3 is not None:
        if cls.step_weight_bound > math.exp(user.c3) * (1 + 1e-9):
            return OstVerdict(False, user.c1, user.c2, user.c3, "user", kappa,
                              f"in-loop weights reach {cls.step_weight_bound:g} > exp(c3)={math.exp(user.c3):g}", checks)
        c3 = user.c3
    checks["E2"] = f"in-loop weights <= {cls.step_weight_bound:g} = exp({c3:g})"
    pts = _check_points(wpts, box, start_points or [])
    if user.c1 is not None and user.c2 is not None:
        c1, c2, evidence = user.c1, user.c2, "user-asserted"
        if oracle_n:
            worst = 0.0
            slack = math.log(2.0)
            for i, p in enumerate(pts):
                est = simulate(wpts, p, oracle_n, seed + i, max_steps)
                ns, tail = est.tail()
                ok = tail > 0
                excess = np.log(tail[ok]) - (math.log(c1) - c2 * ns[ok])
                worst = max(worst, float(excess.max()) if ok.any() else -math.inf)
            checks["tail_cross_check_excess"] = worst
            if worst > slack:
                return OstVerdict(False, c1, c2, c3, evidence, kappa,
                                  "simulated stopping times exceed the asserted tail bound", checks)
    elif cls.exit_probability is not None and cls.exit_probability > 0:
        p = cls.exit_probability
        c1, c2, evidence = 1.0, -math.log(1.0 - p) if p < 1 else math.inf, "geometric exit"
        checks["exit_probability"] = p
    else:
        if not oracle_n:
            return OstVerdict(False, None, None, c3, "", kappa, "no tail evidence: give c1,c2 or enable the oracle", checks)
        c1, c2 = 1.0, math.inf
        try:
            for i, p in enumerate(pts):
                a, b = tail_fit(simulate(wpts, p, oracle_n, seed + i, max_steps))
                c1, c2 = max(c1, a), min(c2, b)
        except NoEvidence as exc:
            return OstVerdict(False, None, None, c3, "oracle tail fit", kappa, f"no tail evidence: {exc}", checks)
        evidence = "oracle tail fit"
        checks["tail_fit_states"] = len(pts)
    if not c2 > c3:
        return OstVerdict(False, c1, c2, c3, evidence, kappa,
                          f"tail decay c2={c2:.4g} does not exceed weight growth c3={c3:.4g}; "
                          "the normalising constant may be infinite", checks)
    return OstVerdict(True, c1, c2, c3, evidence, kappa, "c2 > c3", checks)


# ---------------------------------------------------------------------------
# configuration and report


@dataclass
class AnalysisConfig:
    degree: int = 4
    partitions: int = 1
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    delta: float = 0.0
    engine: str = "auto"
    eps_target: float = 1e-4
    score_degree: int = 6
    ost: dict = field(default_factory=dict)
    ast: bool = True
    oracle_n: int = 0
    oracle_max_steps: int = 100_000
    seed: int = 0
    queries: list[Query] = field(default_factory=list)
    mode: str = "npd"
    time_limit: float | None = None
    verify_points: int = 10_000
    handelman_extra: int = 0
    default_rounds: int = 5

    def to_json(self):
        d = asdict(self)
        d["queries"] = [q.to_json() for q in self.queries]
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        return d

    @staticmethod
    def from_json(d: Mapping) -> "AnalysisConfig":
        d = dict(d)
        if "queries" in d:
            d["queries"] = [Query.parse(q) if isinstance(q, str) else
                            Query(q.get("var"), float(q.get("lo", -math.inf)), float(q.get("hi", math.inf)),
                                  q.get("name", "")) for q in d["queries"]]
        if "bounds" in d:
            d["bounds"] = {k: (float(v[0]), float(v[1])) for k, v in d["bounds"].items()}
        known = set(AnalysisConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return AnalysisConfig(**d)


@dataclass
class Side:
    value: float | None
    integral: float
    status: str
    verified: bool | None = None
    violations: int = 0
    polynomial: str = ""
    solve_seconds: float = 0.0

    def to_json(self):
        return {k: _jnum(v) for k, v in asdict(self).items()}


@dataclass
class PartitionResult:
    index: int
    box: dict
    witness: dict
    point: dict
    mass: float
    upper: Side
    lower: Side
    degraded: bool = False
    note: str = ""
    oracle: dict | None = None

    def to_json(self):
        d = {"index": self.index, "box": self.box, "witness": self.witness, "point": self.point,
             "mass": self.mass, "upper": self.upper.to_json(), "lower": self.lower.to_json(),
             "degraded": self.degraded, "note": self.note}
        if self.oracle is not None:
            d["oracle"] = self.oracle
        return d


@dataclass
class RunResult:
    """Bounds on the expected weight of one system (the program or a restricted one)."""

    label: str
    l: float
    u: float
    l_raw: float
    u_raw: float
    varsigma: float
    partitions: list[PartitionResult]
    stats: dict = field(default_factory=dict)

    @property
    def degraded(self) -> int:
        return sum(p.degraded for p in self.partitions)

    @property
    def verified(self) -> bool:
        return all((p.upper.verified is not False) and (p.lower.verified is not False) for p in self.partitions)

    def to_json(self):
        return {"label": self.label, "l": self.l, "u": self.u, "l_raw": self.l_raw, "u_raw": self.u_raw,
                "varsigma": self.varsigma, "degraded_partitions": self.degraded, "verified": self.verified,
                "stats": self.stats, "partitions": [p.to_json() for p in self.partitions]}


@dataclass
class BoundReport:
    program: str
    config: AnalysisConfig
    classification: Classification
    ost: OstVerdict | None
    bounds: Box | None
    extended: Box | None
    z: RunResult | None
    queries: list[dict] = field(default_factory=list)
    oracle: dict = field(default_factory=dict)
    score: dict = field(default_factory=dict)
    truncation: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def degraded(self) -> int:
        n = self.z.degraded if self.z else 0
        return n + sum(q.get("degraded_partitions", 0) for q in self.queries)

    @property
    def verified(self) -> bool:
        return (self.z is None or self.z.verified) and all(q.get("verified", True) for q in self.queries)

    def to_json(self):
        return {
            "program": self.program,
            "config": self.config.to_json(),
            "classification": self.classification.to_json(),
            "ost": self.ost.to_json() if self.ost else None,
            "bounds": self.bounds.to_json() if self.bounds else None,
            "extended_bounds": self.extended.to_json() if self.extended else None,
            "score_approximation": self.score,
            "truncation": self.truncation,
            "z": self.z.to_json() if self.z else None,
            "queries": [{k: v for k, v in q.items() if k != "_run"} for q in self.queries],
            "oracle": self.oracle,
            "warnings": self.warnings,
            "degraded_partitions": self.degraded,
            "verified": self.verified,
            "rng": RNG_NAME,
            "seconds": self.seconds,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, default=_jdefault)

    def write_csv(self, path: str) -> None:
        """One row per partition of the normalising-constant run."""
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["run", "partition", "witness", "lower", "upper", "integral_lower", "integral_upper",
                         "oracle_mean", "oracle_stderr", "degraded"])
            runs = [self.z] if self.z else []
            runs += [q["_run"] for q in self.queries if q.get("_run") is not None]
            for r in runs:
                for p in r.partitions:
                    o = p.oracle or {}
                    wr.writerow([r.label, p.index, json.dumps(p.witness), p.lower.value, p.upper.value,
                                 p.lower.integral, p.upper.integral, o.get("mean", ""), o.get("stderr", ""),
                                 int(p.degraded)])

    def summary(self) -> str:
        lines = []
        c = self.classification
        lines.append(f"program      {self.program}")
        lines.append(f"class        {c.kind} ({c.reason})")
        if self.ost is not None and self.ost.evidence != "not needed":
            lines.append(f"OST          {'PASS' if self.ost.passed else 'REJECT'}: {self.ost.reason}")
        if self.bounds is not None:
            lines.append(f"bounded box  {self.bounds}")
        cfg = self.config
        lines.append(f"parameters   d={cfg.degree}, m={cfg.partitions}, engine={cfg.engine}")
        if self.z is not None:
            z = self.z
            lines.append(f"Z            [{z.l:.6g}, {z.u:.6g}]  (varsigma {z.varsigma:.2e})")
            lines.append(f"time (s)     upper {z.stats.get('upper_seconds', 0):.2f}  lower {z.stats.get('lower_seconds', 0):.2f}")
        for q in self.queries:
            line = f"query {q['query']['name']:<12} [{q['l']:.6g}, {q['u']:.6g}]"
            if q.get("npd") is not None:
                line += f"  NPD [{q['npd'][0]:.6g}, {q['npd'][1]:.6g}]"
            lines.append(line)
        if "z" in self.oracle:
            o = self.oracle["z"]
            lines.append(f"oracle Z     {o['mean']:.6g} +- {o['stderr']:.2g} (n={o['n']})")
        lines.append(f"degraded     {self.degraded}    verified {self.verified}")
        for w in self.warnings:
            lines.append(f"warning      {w}")
        return "\n".join(lines)


def _jdefault(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, RunResult):
        return None
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# analysis


def default_bounds(wpts: Wpts, variables: list[str], delta: float = 0.0, rounds: int = 5) -> Box:
    """Range covered by a few steps from the initial states, clipped by one-variable
    loop-guard constraints and widened by ``delta``."""
    vb = wpts.initial.value_box()
    wb = working_box(wpts, vb, rounds=rounds)
    lo_clip: dict[str, float] = {}
    hi_clip: dict[str, float] = {}
    for loc in wpts.template_locations():
        inv = wpts.invariant(loc)
        if len(inv.conjs) != 1:
            continue
        for a in inv.conjs[0]:
            if not a.expr.is_affine() or len(a.expr.variables()) != 1:
                continue
            c0, lin = a.expr.linear_coeffs()
            (v, k), = lin.items()
            if k > 0:
                lo_clip[v] = max(lo_clip.get(v, -math.inf), -c0 / k)
            else:
                hi_clip[v] = min(hi_clip.get(v, math.inf), -c0 / k)
    out = {}
    for v in variables:
        a, b = wb[v]
        a = max(a, lo_clip.get(v, -math.inf))
        b = min(b, hi_clip.get(v, math.inf))
        if vb.bounds.get(v) is not None:
            a = min(a, vb[v][0])
            b = max(b, vb[v][1])
        out[v] = (a - delta, b + delta)
    return Box(out)


def _guard_contains(g: Guard, box: Mapping[str, tuple[float, float]]) -> bool:
    for conj in g.conjs:
        ok = True
        for a in conj:
            lo = a.expr.interval(box)[0]
            if lo < 0 or (a.strict and lo <= 0):
                ok = False
                break
        if ok:
            return True
    return False


def _box_within(inner: Mapping[str, tuple[float, float]], outer: Box, tol: float = 1e-12) -> bool:
    return all(outer[v][0] - tol <= inner[v][0] and inner[v][1] <= outer[v][1] + tol for v in outer.variables)


@dataclass
class _Prepared:
    wpts: Wpts  # scores in polynomial form
    cls: Classification
    box: Box
    extended: Box
    ctx: TruncationContext
    eps: float
    rel: list[str]
    trivial_upper: float


def _prepare(wpts: Wpts, cfg: AnalysisConfig, cls: Classification, ost: OstVerdict | None,
             report: BoundReport) -> _Prepared:
    rel = wpts.relevant_variables()
    user = {v: tuple(b) for v, b in cfg.bounds.items()}
    box = default_bounds(wpts, rel, cfg.delta, cfg.default_rounds)
    if user:
        bb = dict(box.bounds)
        for v, b in user.items():
            if v in rel:
                bb[v] = b
        box = Box(bb)
    ext = extend_range(wpts, box) if rel else box
    ctx = TruncationContext(wpts, box, ext)
    ost_for_trunc = None
    if cls.kind == "score-recursive" and ost is not None and ost.passed:
        ost_for_trunc = OstPrereq(ost.c1, ost.c2, ost.c3)
    ctx.upper = derive_trunc_approx(wpts, box, ext, cls, "upper", ost_for_trunc)
    ctx.lower = derive_trunc_approx(wpts, box, ext, cls, "lower")
    trivial = ctx.upper.value if ctx.upper.kind != "poly" else math.inf
    if cls.kind == "score-at-end":
        trivial = cls.score_bound
    # score approximation over the extended range of the pdf arguments
    approx = {}
    for t in wpts.transitions:
        for f in t.forks:
            if f.weight.pdf is None:
                continue
            dist = f.weight.pdf.dist
            arg = f.weight.pdf.arg
            x = next(iter(arg.variables())) if len(arg.variables()) == 1 else None
            if x is None:
                raise UnsupportedError("pdf score argument must be a single variable")
            dom = ext[x] if x in ext else wpts.initial.value_box()[x]
            if dom[1] - dom[0] <= 1e-12:
                dom = (dom[0] - 0.5, dom[1] + 0.5)
            prev = approx.get(dist)
            if prev is None or prev.domain[0] > dom[0] or prev.domain[1] < dom[1]:
                if prev is not None:
                    dom = (min(dom[0], prev.domain[0]), max(dom[1], prev.domain[1]))
                approx[dist] = approximate_pdf(dist, dom, n=cfg.score_degree, target_eps=cfg.eps_target)
    eps = 0.0
    w2 = wpts
    if approx:
        w2, eps = replace_score(wpts, approx)
        report.score = {
            "epsilon": eps,
            "functions": [{"dist": [d.name, *d.params], "domain": list(pw.domain), "pieces": len(pw.pieces),
                           "degree": pw.degree, "epsilon": pw.epsilon} for d, pw in approx.items()],
            "certification": "per-piece radius uses a sampled slope bound of the residual",
        }
    report.truncation = {
        "upper": ctx.upper.to_json(),
        "lower": ctx.lower.to_json(),
        "upper_on_box_complement": ctx.upper.describe_on(ext),
    }
    return _Prepared(w2, cls, box, ext, ctx, eps, rel, trivial)


def _prior_volume(wpts: Wpts, box: Box) -> float:
    vol = 1.0
    for v in wpts.initial.nondegenerate():
        lo, hi = box[v]
        vol *= hi - lo
    return vol


def _run_bounds(label: str, prep: _Prepared, wpts_orig: Wpts, cfg: AnalysisConfig,
                parts: list[Partition], clip=None) -> RunResult:
    """Upper and lower bounds per partition and their integrals."""
    w2 = prep.wpts
    rel = prep.rel
    init = w2.init_loc
    stats: dict = {}
    templated = init in w2.template_locations()
    pts = [w2.initial.values_at(p.witness) for p in parts]
    results: dict[str, list] = {"upper": [None] * len(parts), "lower": [None] * len(parts)}
    css = {}
    notes = [""] * len(parts)
    usable = [True] * len(parts)
    exact: dict[int, Polynomial] = {}
    for i, p in enumerate(parts):
        vb = w2.initial.value_box(p.box).bounds
        if templated and rel and _box_within({v: vb[v] for v in rel}, prep.box) and _guard_contains(w2.invariant(init), vb):
            continue
        usable[i] = False
        for t in w2.transitions_from(init):
            if not w2.is_template_transition(t) and _guard_contains(t.guard, vb):
                exact[i] = t
                notes[i] = "initial states take a transition that ends the run"
                break
        else:
            notes[i] = "initial states are not inside the bounded box and loop invariant"
    if templated and any(usable):
        tpl = TemplateSet.build(w2, rel, cfg.degree)
        sc = Scaling.of_box(Box({v: prep.extended[v] for v in rel}))
        engine = ENGINE_ALIASES.get(cfg.engine, cfg.engine)
        for direction in ("upper", "lower"):
            t0 = time.time()
            try:
                cs = build_constraints(prep.ctx, w2, tpl, direction, sc)
                enc = encode(cs, engine, extra=cfg.handelman_extra)
            except (UnsupportedError, ValueError) as exc:
                stats[f"{direction}_error"] = str(exc)
                continue
            css[direction] = cs
            targets = [i for i in range(len(parts)) if usable[i]]
            res = synthesize_bound(cs, enc, [{v: pts[i][v] for v in rel} for i in targets], cfg.time_limit)
            for i, r in zip(targets, res):
                results[direction][i] = r
            stats[f"{direction}_seconds"] = time.time() - t0
            stats[f"{direction}_engine"] = enc.meta.get("encoding")
            stats[f"{direction}_certificate_degree"] = enc.meta.get("multiplier_degree", enc.meta.get("product_degree"))
            stats[f"{direction}_obligations"] = len(cs.obligations)
            stats[f"{direction}_lp_shape"] = list(enc.program.shape)
            stats[f"{direction}_cells"] = cs.stats.get("cells")
    out: list[PartitionResult] = []
    for i, p in enumerate(parts):
        ibox = p.box if clip is None else clip(p.box)
        sides = {}
        degraded = False
        for direction in ("upper", "lower"):
            r: BoundResult | None = results[direction][i]
            if i in exact:
                t = exact[i]
                ident = {v: Polynomial.var(v) for v in w2.program_vars}
                poly = terminal_value(w2, t, ident, direction)
                val = poly.eval(pts[i])
                comp = poly.subs(w2.initial.values)
                integ = integrate_prior(comp, w2, ibox) if ibox is not None else 0.0
                sides[direction] = Side(val, integ, "exact", True, 0, str(poly))
                continue
            ok = r is not None and r.status == "optimal"
            ver = None
            if ok:
                rep = verify_posthoc(css[direction], r.coefficients, n=cfg.verify_points, seed=cfg.seed)
                ver = rep.ok
                if rep.ok:
                    poly = r.polynomial(css[direction])
                    comp = poly.subs({v: w2.initial.values[v] for v in rel})
                    integ = integrate_prior(comp, w2, ibox) if ibox is not None else 0.0
                    sides[direction] = Side(r.value, integ, "optimal", True,
                                            0, str(poly), r.solve_seconds)
                    continue
                sides[direction] = None
                notes[i] = (notes[i] + "; " if notes[i] else "") + f"{direction} certificate failed verification"
                viol = len(rep.violations)
            else:
                viol = 0
                if r is not None:
                    notes[i] = (notes[i] + "; " if notes[i] else "") + f"{direction} solver status {r.status}"
                elif usable[i]:
                    notes[i] = (notes[i] + "; " if notes[i] else "") + \
                        f"{direction} constraints unavailable: {stats.get(direction + '_error', 'unknown')}"
            degraded = True
            mass = 0.0 if ibox is None else integrate_prior(Polynomial.const(1.0), w2, ibox)
            if direction == "upper":
                sides[direction] = Side(prep.trivial_upper, mass * prep.trivial_upper, "degraded", ver, viol)
            else:
                sides[direction] = Side(0.0, 0.0, "degraded", ver, viol)
        out.append(PartitionResult(i, p.box.to_json(), dict(p.witness), {v: pts[i][v] for v in rel}, p.mass,
                                   sides["upper"], sides["lower"], degraded, notes[i]))
    u_raw = sum(p.upper.integral for p in out)
    l_raw = sum(p.lower.integral for p in out)
    vs = _prior_volume(w2, w2.initial.prior_box()) * prep.eps
    return RunResult(label, max(0.0, l_raw - vs), u_raw + vs, l_raw, u_raw, vs, out, stats)


def _attach_oracle(run: RunResult, wpts: Wpts, cfg: AnalysisConfig, parts: list[Partition],
                   query: tuple[float, float] | None, eps_vol: list[float]) -> dict:
    pts = [wpts.initial.values_at(p.witness) for p in parts]
    ests = simulate_points(wpts, pts, cfg.oracle_n, cfg.seed, cfg.oracle_max_steps, query)
    inside = 0
    for pr, e, sv in zip(run.partitions, ests, eps_vol):
        lo = pr.lower.value - sv - 3 * e.stderr
        hi = pr.upper.value + sv + 3 * e.stderr
        ok = lo <= e.mean <= hi
        inside += ok
        pr.oracle = {"mean": e.mean, "stderr": e.stderr, "n": e.n, "truncated": e.truncated, "contained": bool(ok)}
    return {"witnesses_contained": inside, "witnesses": len(parts)}


def analyze(wpts: Wpts, cfg: AnalysisConfig | None = None, program: str = "") -> BoundReport:
    """Bounds on the normalising constant, query masses and posterior probabilities."""
    cfg = cfg or AnalysisConfig()
    if cfg.degree < 1 or cfg.partitions < 1 or cfg.oracle_n < 0:
        raise ValueError("need d >= 1, m >= 1 and a nonnegative oracle sample count")
    t_start = time.time()
    vb = wpts.initial.value_box()
    diags = validate(wpts, working_box(wpts, vb))
    if diags:
        raise AnalysisError("invalid system: " + "; ".join(str(d) for d in diags))
    rel = wpts.relevant_variables()
    pre_box = default_bounds(wpts, rel, cfg.delta, cfg.default_rounds) if rel else Box({})
    if cfg.bounds:
        pre_box = Box({**pre_box.bounds, **{v: tuple(b) for v, b in cfg.bounds.items() if v in rel}})
    cls = classify(wpts, extend_range(wpts, pre_box) if rel else None)
    report = BoundReport(program, cfg, cls, None, None, None, None)
    if cls.kind == "unsupported":
        raise AnalysisError(f"unsupported program: {cls.reason}")
    parts = partition_init(wpts, cfg.partitions)
    mids = [wpts.initial.values_at(p.witness) for p in parts]
    ost = None
    if cls.kind == "score-recursive":
        user = OstPrereq(cfg.ost.get("c1"), cfg.ost.get("c2"), cfg.ost.get("c3"))
        ost_box = extend_range(wpts, pre_box) if rel else pre_box
        ost = check_ost_prereqs(wpts, cls, ost_box, user, cfg.oracle_n or 2000, cfg.seed, mids[:1],
                                cfg.oracle_max_steps)
        report.ost = ost
        if not ost.passed:
            raise OstRejected(ost)
        cls.assumptions.append("expected weight functions are polynomially bounded; only the exponential "
                               "stopping-time tail is checked")
    else:
        report.ost = check_ost_prereqs(wpts, cls, pre_box)
    if not cfg.ast:
        report.warnings.append("almost-sure termination not asserted; bounds assume it")
    prep = _prepare(wpts, cfg, cls, ost, report)
    report.bounds, report.extended = prep.box, prep.extended
    eps_vol = [p.volume * prep.eps for p in parts]
    if cfg.mode in ("npd", "z-bounds") or (cfg.mode == "path-prob" and not cfg.queries):
        report.z = _run_bounds("Z", prep, wpts, cfg, parts)
        if cfg.oracle_n:
            report.oracle["z_witnesses"] = _attach_oracle(report.z, wpts, cfg, parts, None, eps_vol)
    if cfg.mode in ("npd", "path-prob"):
        for q in cfg.queries:
            rw, case = restrict_query(wpts, q)
            if case in ("full", "case1") and report.z is not None:
                if case == "full":
                    run = report.z
                else:
                    run = _run_bounds(q.label, prep, wpts, cfg, parts, clip=lambda b, q=q: _clip_case1(wpts, q, b))
            elif case in ("full", "case1"):
                run = _run_bounds(q.label, prep, wpts, cfg, parts,
                                  clip=None if case == "full" else (lambda b, q=q: _clip_case1(wpts, q, b)))
            else:
                qcls = classify(rw, prep.extended)
                qprep = _prepare(rw, replace_bounds(cfg, prep.box), qcls, ost, BoundReport(program, cfg, qcls, None, None, None, None))
                run = _run_bounds(q.label, qprep, rw, cfg, parts)
                if cfg.oracle_n:
                    _attach_oracle(run, wpts, cfg, parts, (q.lo, q.hi), eps_vol)
            entry = {"query": q.to_json(), "case": case, "l": run.l, "u": run.u,
                     "degraded_partitions": run.degraded, "verified": run.verified, "_run": run if run is not report.z else None}
            if case == "case2" or run is not report.z:
                entry["run"] = run.to_json()
            if report.z is not None and cfg.mode == "npd":
                entry["npd"] = npd_interval(run.l, run.u, report.z.l, report.z.u)
                if entry["npd"] is None:
                    report.warnings.append(f"lower bound of Z is 0; NPD for {q.label} omitted")
            if cfg.oracle_n:
                e = simulate(wpts, None, cfg.oracle_n, cfg.seed + 1, cfg.oracle_max_steps, (q.lo, q.hi))
                entry["oracle"] = {"mean": e.mean, "stderr": e.stderr, "n": e.n}
            report.queries.append(entry)
    if cfg.oracle_n:
        e = simulate(wpts, None, cfg.oracle_n, cfg.seed + 1, cfg.oracle_max_steps)
        report.oracle["z"] = {**e.to_json(), "rng": RNG_NAME, "seed": cfg.seed + 1}
        if e.terminated_fraction < 0.999:
            report.warnings.append(
                f"only {e.terminated_fraction:.4f} of simulated runs stopped within {cfg.oracle_max_steps} steps")
        if rel and report.bounds is not None:
            kappa_obs = max((e.max_step_change.get(v, 0.0) for v in rel), default=0.0)
            report.oracle["max_step_change"] = kappa_obs
            if kappa_obs > cls.update_bound + 1e-9:
                report.warnings.append(f"observed step change {kappa_obs:g} exceeds the static bound {cls.update_bound:g}")
    if report.z is not None and report.z.l <= 0 and cfg.mode == "npd":
        report.warnings.append("lower bound of Z is 0: integrability not established, NPD omitted")
    report.seconds = time.time() - t_start
    return report


def replace_bounds(cfg: AnalysisConfig, box: Box) -> AnalysisConfig:
    d = dict(cfg.__dict__)
    d["bounds"] = {**{v: box[v] for v in box.variables}, **cfg.bounds}
    return AnalysisConfig(**d)


def npd_interval(l_u: float, u_u: float, l_z: float, u_z: float) -> tuple[float, float] | None:
    """Posterior probability interval ``[l_U / u_Z, u_U / l_Z]`` clipped to [0, 1];
    None when ``l_Z <= 0``."""
    if l_z <= 0:
        return None
    return (min(1.0, l_u / u_z), min(1.0, u_u / l_z))
