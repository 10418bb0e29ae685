"""Weighted probabilistic transition systems: data model, validation, classification, JSON."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import (
    Beta,
    Distribution,
    Normal,
    PointMass,
    Uniform,
    dist_from_json,
    dist_to_json,
)
from .polynomial import Box, Polynomial
from .regions import Atom, Region

Conj = tuple[Atom, ...]


def _simplify_conj(conj: Iterable[Atom]) -> Conj | None:
    """Drop constant-true atoms; None if some atom is constant-false."""
    out = []
    for a in conj:
        t = a.constant_truth()
        if t is None:
            if a not in out:
                out.append(a)
        elif not t:
            return None
    return tuple(out)


@dataclass(frozen=True)
class Guard:
    """Disjunction of pairwise disjoint conjunctions of atoms."""

    conjs: tuple[Conj, ...]

    @staticmethod
    def true() -> "Guard":
        return Guard(((),))

    @staticmethod
    def false() -> "Guard":
        return Guard(())

    @staticmethod
    def atom(a: Atom) -> "Guard":
        return Guard.of([[a]])

    @staticmethod
    def of(conjs: Iterable[Iterable[Atom]]) -> "Guard":
        out = []
        for c in conjs:
            s = _simplify_conj(c)
            if s is not None:
                out.append(s)
        return Guard(tuple(out))

    def is_true(self) -> bool:
        return any(len(c) == 0 for c in self.conjs)

    def is_false(self) -> bool:
        return len(self.conjs) == 0

    def and_(self, other: "Guard") -> "Guard":
        return Guard.of([a + b for a in self.conjs for b in other.conjs])

    def negate(self) -> "Guard":
        result = Guard.true()
        for conj in self.conjs:
            pieces = []
            prefix: list[Atom] = []
            for a in conj:
                pieces.append(prefix + [a.negate()])
                prefix = prefix + [a]
            result = result.and_(Guard.of(pieces))
        return result

    def holds(self, point) -> bool:
        return any(all(a.holds(point) for a in c) for c in self.conjs)

    def holds_many(self, env, size: int) -> np.ndarray:
        out = np.zeros(size, dtype=bool)
        for c in self.conjs:
            ok = np.ones(size, dtype=bool)
            for a in c:
                ok &= a.holds_many(env, size)
            out |= ok
        return out

    def variables(self) -> set[str]:
        return {v for c in self.conjs for a in c for v in a.expr.variables()}

    def subs(self, mapping) -> "Guard":
        return Guard.of([[a.subs(mapping) for a in c] for c in self.conjs])

    def is_affine(self) -> bool:
        return all(a.expr.is_affine() for c in self.conjs for a in c)

    def to_json(self):
        return [[a.to_json() for a in c] for c in self.conjs]

    @staticmethod
    def from_json(d) -> "Guard":
        return Guard(tuple(tuple(Atom.from_json(a) for a in c) for c in d))

    def __str__(self):
        if self.is_true():
            return "true"
        if self.is_false():
            return "false"
        return " | ".join("(" + " & ".join(str(a) for a in c) + ")" for c in self.conjs)


@dataclass(frozen=True)
class PdfFactor:
    dist: Distribution
    arg: Polynomial


@dataclass(frozen=True)
class PieceFactor:
    """Polynomial piece ``sum_j coeffs[j] * u^j`` with ``u = (arg - center) / half``."""

    coeffs: tuple[float, ...]
    center: float
    half: float
    arg: Polynomial

    def compose(self, arg: Polynomial) -> Polynomial:
        u = (arg - self.center) * (1.0 / self.half)
        out = Polynomial()
        for c in reversed(self.coeffs):
            out = out * u + c
        return out

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        u = (x - self.center) / self.half
        return np.polynomial.polynomial.polyval(u, np.array(self.coeffs))


@dataclass(frozen=True)
class Weight:
    """Product ``factor * pdf(arg) * piece(arg)``; ``residual`` is an additive error radius."""

    factor: Polynomial = field(default_factory=lambda: Polynomial.const(1.0))
    pdf: PdfFactor | None = None
    piece: PieceFactor | None = None
    residual: float = 0.0

    @property
    def kind(self) -> str:
        if self.pdf is not None:
            return "pdf"
        if self.piece is not None:
            return "piece"
        return "const" if self.factor.is_constant() else "poly"

    def is_one(self) -> bool:
        return self.kind == "const" and self.factor.constant_term() == 1.0 and self.residual == 0.0

    def times(self, other: "Weight") -> "Weight":
        if (self.pdf and other.pdf) or (self.piece or other.piece):
            raise ValueError("at most one pdf score per path is supported")
        return Weight(self.factor * other.factor, self.pdf or other.pdf, None, self.residual + other.residual)

    def variables(self) -> set[str]:
        out = self.factor.variables()
        if self.pdf:
            out |= self.pdf.arg.variables()
        if self.piece:
            out |= self.piece.arg.variables()
        return out

    def subs(self, mapping) -> "Weight":
        return Weight(
            self.factor.subs(mapping),
            PdfFactor(self.pdf.dist, self.pdf.arg.subs(mapping)) if self.pdf else None,
            replace(self.piece, arg=self.piece.arg.subs(mapping)) if self.piece else None,
            self.residual,
        )

    def eval_many(self, env, size: int) -> np.ndarray:
        v = self.factor.eval_many(env, size)
        if self.pdf is not None:
            v = v * self.pdf.dist.pdf(self.pdf.arg.eval_many(env, size))
        if self.piece is not None:
            v = v * self.piece.eval_many(self.piece.arg.eval_many(env, size))
        return v

    def upper_bound(self, box: Mapping[str, tuple[float, float]]) -> float:
        """Upper bound of the weight over a box (interval arithmetic)."""
        hi = self.factor.interval(box)[1]
        if self.pdf is not None:
            lo_f = self.factor.interval(box)[0]
            if lo_f < 0:
                return math.inf
            hi *= self.pdf.dist.max_pdf()
        if self.piece is not None:
            return math.inf
        return hi + self.residual

    def to_json(self):
        d: dict = {"kind": self.kind, "factor": self.factor.to_json()}
        if self.pdf is not None:
            d["pdf"] = {**dist_to_json(self.pdf.dist), "arg": self.pdf.arg.to_json()}
        if self.piece is not None:
            p = self.piece
            d["piece"] = {"coeffs": list(p.coeffs), "center": p.center, "half": p.half, "arg": p.arg.to_json()}
        if self.residual:
            d["residual"] = self.residual
        return d

    @staticmethod
    def from_json(d) -> "Weight":
        pdf = None
        piece = None
        if "pdf" in d:
            pdf = PdfFactor(dist_from_json(d["pdf"]), Polynomial.from_json(d["pdf"]["arg"]))
        if "piece" in d:
            p = d["piece"]
            piece = PieceFactor(tuple(p["coeffs"]), p["center"], p["half"], Polynomial.from_json(p["arg"]))
        return Weight(Polynomial.from_json(d.get("factor", 1.0)), pdf, piece, float(d.get("residual", 0.0)))

    @staticmethod
    def const(c: float) -> "Weight":
        return Weight(Polynomial.const(c))


@dataclass
class Fork:
    dest: str
    prob: Polynomial
    update: dict[str, Polynomial]
    weight: Weight = field(default_factory=Weight)

    def value_of(self, var: str) -> Polynomial:
        return self.update.get(var, Polynomial.var(var))

    def substitution(self, variables: Iterable[str]) -> dict[str, Polynomial]:
        return {v: self.value_of(v) for v in variables}

    def to_json(self):
        return {
            "dest": self.dest,
            "prob": self.prob.to_json(),
            "update": {k: v.to_json() for k, v in self.update.items()},
            "weight": self.weight.to_json(),
        }

    @staticmethod
    def from_json(d) -> "Fork":
        return Fork(
            d["dest"],
            Polynomial.from_json(d["prob"]),
            {k: Polynomial.from_json(v) for k, v in d.get("update", {}).items()},
            Weight.from_json(d.get("weight", {"factor": 1.0})),
        )


@dataclass
class Transition:
    source: str
    guard: Guard
    forks: list[Fork]
    origin: int | None = None
    region: str = ""

    def to_json(self):
        d = {"source": self.source, "guard": self.guard.to_json(), "forks": [f.to_json() for f in self.forks]}
        if self.origin is not None:
            d["origin"] = self.origin
            d["region"] = self.region
        return d

    @staticmethod
    def from_json(d) -> "Transition":
        return Transition(
            d["source"],
            Guard.from_json(d["guard"]),
            [Fork.from_json(f) for f in d["forks"]],
            d.get("origin"),
            d.get("region", ""),
        )


@dataclass
class InitialDistribution:
    """Independent bounded priors plus polynomial initial values of program variables."""

    priors: dict[str, Distribution]
    values: dict[str, Polynomial]

    def prior_box(self) -> Box:
        return Box({k: d.support for k, d in self.priors.items()})

    def nondegenerate(self) -> list[str]:
        return [k for k, d in self.priors.items() if not isinstance(d, PointMass)]

    def value_box(self, prior_box: Box | None = None) -> Box:
        pb = (prior_box or self.prior_box()).bounds
        return Box({v: p.interval(pb) for v, p in self.values.items()})

    def values_at(self, prior_point: Mapping[str, float]) -> dict[str, float]:
        return {v: p.eval(prior_point) for v, p in self.values.items()}

    def sample(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        prior = {k: d.sample(rng, n) for k, d in self.priors.items()}
        return {v: p.eval_many(prior, n) for v, p in self.values.items()}

    def to_json(self):
        return {
            "priors": {k: dist_to_json(d) for k, d in self.priors.items()},
            "values": {k: p.to_json() for k, p in self.values.items()},
        }

    @staticmethod
    def from_json(d) -> "InitialDistribution":
        return InitialDistribution(
            {k: dist_from_json(v) for k, v in d["priors"].items()},
            {k: Polynomial.from_json(v) for k, v in d["values"].items()},
        )


@dataclass
class Wpts:
    program_vars: list[str]
    sampling_vars: dict[str, Distribution]
    locations: list[str]
    init_loc: str
    out_loc: str
    initial: InitialDistribution
    transitions: list[Transition]
    ret_var: str | None = None
    sink_loc: str | None = None
    meta: dict = field(default_factory=dict)

    def terminal(self, loc: str) -> bool:
        return loc == self.out_loc or loc == self.sink_loc

    def transitions_from(self, loc: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == loc]

    def is_template_transition(self, t: Transition) -> bool:
        return any(not self.terminal(f.dest) for f in t.forks)

    def template_locations(self) -> list[str]:
        return [
            l for l in self.locations
            if not self.terminal(l) and any(self.is_template_transition(t) for t in self.transitions_from(l))
        ]

    def loop_transitions(self) -> list[Transition]:
        return [t for t in self.transitions if not self.terminal(t.source) and self.is_template_transition(t)]

    def exit_forks(self) -> list[Fork]:
        return [f for t in self.transitions if not self.terminal(t.source) for f in t.forks if f.dest == self.out_loc]

    def invariant(self, loc: str) -> Guard:
        """Union of guards of transitions at ``loc`` that lead to non-terminal locations."""
        conjs: list[Conj] = []
        for t in self.transitions_from(loc):
            if self.is_template_transition(t):
                conjs.extend(t.guard.conjs)
        return Guard(tuple(conjs))

    def relevant_variables(self) -> list[str]:
        """Variables that can influence guards, probabilities or weights."""
        rel: set[str] = set()
        for t in self.transitions:
            rel |= t.guard.variables()
            for f in t.forks:
                rel |= f.prob.variables() | f.weight.variables()
        rel &= set(self.program_vars)
        changed = True
        while changed:
            changed = False
            for t in self.transitions:
                for f in t.forks:
                    for v in list(rel):
                        dep = f.value_of(v).variables() & set(self.program_vars)
                        if not dep <= rel:
                            rel |= dep
                            changed = True
        return [v for v in self.program_vars if v in rel]

    def copy(self) -> "Wpts":
        return Wpts.from_json(self.to_json())

    def to_json(self) -> dict:
        return {
            "program_vars": self.program_vars,
            "sampling_vars": {k: dist_to_json(d) for k, d in self.sampling_vars.items()},
            "locations": self.locations,
            "init_loc": self.init_loc,
            "out_loc": self.out_loc,
            "sink_loc": self.sink_loc,
            "ret_var": self.ret_var,
            "initial": self.initial.to_json(),
            "transitions": [t.to_json() for t in self.transitions],
            "meta": self.meta,
        }

    @staticmethod
    def from_json(d) -> "Wpts":
        return Wpts(
            list(d["program_vars"]),
            {k: dist_from_json(v) for k, v in d["sampling_vars"].items()},
            list(d["locations"]),
            d["init_loc"],
            d["out_loc"],
            InitialDistribution.from_json(d["initial"]),
            [Transition.from_json(t) for t in d["transitions"]],
            d.get("ret_var"),
            d.get("sink_loc"),
            dict(d.get("meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @staticmethod
    def loads(s: str) -> "Wpts":
        return Wpts.from_json(json.loads(s))


# ---------------------------------------------------------------------------
# validation

@dataclass
class Diagnostic:
    code: str
    message: str
    location: str | None = None
    witness: dict | None = None

    def __str__(self):
        loc = f" at {self.location}" if self.location else ""
        w = f" (witness {self.witness})" if self.witness else ""
        return f"{self.code}{loc}: {self.message}{w}"


def working_box(wpts: Wpts, base: Box | None = None, rounds: int = 3) -> Box:
    """Box over all program variables from the initial support and a few update images."""
    box = wpts.initial.value_box()
    if base is not None:
        box = box.union(base)
    for v in wpts.program_vars:
        if v not in box:
            box = box.union(Box({v: (0.0, 0.0)}))
    for _ in range(rounds):
        env = dict(box.bounds)
        env.update({r: d.support for r, d in wpts.sampling_vars.items()})
        img = {}
        for t in wpts.transitions:
            for f in t.forks:
                for v, p in f.update.items():
                    lo, hi = p.interval(env)
                    if base is not None and v in base:
                        lo, hi = max(lo, base[v][0]), min(hi, base[v][1])
                        if lo > hi:
                            continue
                    a, b = img.get(v, (lo, hi))
                    img[v] = (min(a, lo), max(b, hi))
        box = box.union(Box(img))
    return box


def _conj_region(box: Box, conj: Conj) -> Region:
    return Region(box, list(conj))


def _sample_box(box: Box, n: int, seed: int = 0) -> dict[str, np.ndarray]:
    from scipy.stats import qmc

    vs = box.variables
    u = qmc.Sobol(len(vs), scramble=True, seed=seed).random(n)
    env = {v: box[v][0] + u[:, i] * (box[v][1] - box[v][0]) for i, v in enumerate(vs)}
    corners = np.array(np.meshgrid(*[[0, 1]] * len(vs))).reshape(len(vs), -1).T if len(vs) <= 10 else np.zeros((0, len(vs)))
    for i, v in enumerate(vs):
        env[v] = np.concatenate([env[v], box[v][0] + corners[:, i] * (box[v][1] - box[v][0])])
    return env


def validate(wpts: Wpts, box: Box | None = None) -> list[Diagnostic]:
    """Structural checks; returns an empty list for a well-formed system."""
    diags: list[Diagnostic] = []
    pv = set(wpts.program_vars)
    rv = set(wpts.sampling_vars)
    if wpts.init_loc not in wpts.locations or wpts.out_loc not in wpts.locations:
        diags.append(Diagnostic("locations", "initial/output location missing from location list"))
    box = working_box(wpts, box)
    env_box = dict(box.bounds)
    env_box.update({r: d.support for r, d in wpts.sampling_vars.items()})
    for ti, t in enumerate(wpts.transitions):
        where = f"transition {ti} from {t.source}"
        if t.source == wpts.out_loc or t.source == wpts.sink_loc:
            for f in t.forks:
                if f.dest != t.source or not f.weight.is_one() or f.update:
                    diags.append(Diagnostic("absorbing", "terminal location must only carry unit self-loops", where))
            continue
        gv = t.guard.variables()
        if not gv <= pv:
            diags.append(Diagnostic("guard-vars", f"guard mentions non-program variables {sorted(gv - pv)}", where))
        total = Polynomial()
        for fi, f in enumerate(t.forks):
            fw = f"{where}, fork {fi}"
            if f.dest not in wpts.locations:
                diags.append(Diagnostic("dest", f"unknown destination {f.dest}", fw))
            if not f.prob.variables() <= pv:
                diags.append(Diagnostic("prob-vars", "fork probability must depend on program variables only", fw))
            if f.prob.is_constant():
                p = f.prob.constant_term()
                if not 0.0 < p <= 1.0 + 1e-12:
                    diags.append(Diagnostic("prob-range", f"fork probability {p} outside (0,1]", fw))
            else:
                lo, hi = f.prob.interval(box.bounds)
                if lo < -1e-12 or hi > 1 + 1e-12:
                    diags.append(Diagnostic("prob-range", f"fork probability ranges over [{lo:g},{hi:g}]", fw))
            total = total + f.prob
            for v, p in f.update.items():
                if v not in pv:
                    diags.append(Diagnostic("update-vars", f"update of undeclared variable {v}", fw))
                if not p.variables() <= pv | rv:
                    diags.append(Diagnostic("update-vars", f"update of {v} mentions unknown variables", fw))
            w = f.weight
            if w.kind == "const" and w.factor.constant_term() < 0:
                diags.append(Diagnostic("weight", "negative constant weight", fw))
            if w.kind in ("pdf", "piece") and f.dest != wpts.out_loc:
                diags.append(Diagnostic("weight", "pdf scores are only allowed on transitions into the output location", fw))
            if w.kind == "poly" and w.factor.interval(env_box)[0] < -1e-12:
                diags.append(Diagnostic("weight", "polynomial weight may be negative on the working box", fw))
        if not (total - 1.0).almost_equal(Polynomial(), 1e-9):
            diags.append(Diagnostic("prob-sum", f"fork probabilities sum to {total}, not 1", where))
    # determinism
    for loc in wpts.locations:
        if wpts.terminal(loc):
            continue
        ts = wpts.transitions_from(loc)
        for i in range(len(ts)):
            for j in range(i + 1, len(ts)):
                w = _guards_intersect(ts[i].guard, ts[j].guard, box)
                if w is not None:
                    diags.append(Diagnostic("determinism", f"guards of transitions {i} and {j} overlap", loc, w))
        # totality (grid falsification)
        if ts:
            vs = sorted(set().union(*[t.guard.variables() for t in ts]) or set())
            if vs:
                sub = Box({v: box[v] for v in vs})
                env = _sample_box(sub, 1024)
                n = len(env[vs[0]])
                covered = np.zeros(n, dtype=bool)
                for t in ts:
                    covered |= t.guard.holds_many(env, n)
                if not covered.all():
                    k = int(np.argmin(covered))
                    diags.append(Diagnostic("totality", "guards do not cover the working box", loc, {v: float(env[v][k]) for v in vs}))
        elif loc in wpts.locations:
            diags.append(Diagnostic("totality", "no outgoing transitions", loc))
    return diags


def _guards_intersect(g1: Guard, g2: Guard, box: Box) -> dict | None:
    for c1 in g1.conjs:
        for c2 in g2.conjs:
            conj = c1 + c2
            vs = sorted({v for a in conj for v in a.expr.variables()})
            sub = Box({v: box[v] for v in vs}) if vs else Box({})
            if all(a.expr.is_affine() for a in conj):
                if not vs:
                    if all(a.constant_truth() for a in conj):
                        return {}
                    continue
                reg = Region(sub, list(conj))
                if reg.is_feasible(respect_strict=True):
                    return reg.witness()
            else:
                env = _sample_box(sub, 4096)
                n = len(env[vs[0]])
                ok = np.ones(n, dtype=bool)
                for a in conj:
                    ok &= a.holds_many(env, n)
                if ok.any():
                    k = int(np.argmax(ok))
                    return {v: float(env[v][k]) for v in vs}
    return None


# ---------------------------------------------------------------------------
# classification

@dataclass
class Classification:
    kind: str  # "score-at-end", "score-recursive", "unsupported"
    score_bound: float = math.inf
    update_bound: float = math.inf
    step_weight_bound: float = 1.0
    exit_probability: float | None = None
    reason: str = ""
    assumptions: list[str] = field(default_factory=list)

    @property
    def c3(self) -> float:
        return math.log(max(self.step_weight_bound, 1.0))

    def to_json(self):
        return {
            "kind": self.kind,
            "score_bound": self.score_bound,
            "update_bound": self.update_bound,
            "step_weight_bound": self.step_weight_bound,
            "exit_probability": self.exit_probability,
            "reason": self.reason,
            "assumptions": self.assumptions,
        }


def update_bound(wpts: Wpts, box: Box) -> float:
    env = dict(box.bounds)
    env.update({r: d.support for r, d in wpts.sampling_vars.items()})
    kappa = 0.0
    for t in wpts.transitions:
        if wpts.terminal(t.source):
            continue
        for f in t.forks:
            for v, p in f.update.items():
                lo, hi = (p - Polynomial.var(v)).interval(env)
                kappa = max(kappa, abs(lo), abs(hi))
    return kappa


def static_exit_probability(wpts: Wpts, box: Box) -> float | None:
    """Lower bound on the per-iteration probability of leaving the loop, from forks
    whose successor state violates every loop guard."""
    env = dict(box.bounds)
    env.update({r: d.support for r, d in wpts.sampling_vars.items()})
    best = None
    for t in wpts.loop_transitions():
        p_exit = Polynomial()
        for f in t.forks:
            if wpts.terminal(f.dest):
                p_exit = p_exit + f.prob
                continue
            inv = wpts.invariant(f.dest)
            sub = f.substitution(wpts.program_vars)
            leaves = True
            for conj in inv.conjs:
                falsified = False
                for a in conj:
                    lo, hi = a.expr.subs(sub).interval(env)
                    if hi < 0 or (a.strict and hi <= 0):
                        falsified = True
                        break
                if not falsified:
                    leaves = False
                    break
            if leaves:
                p_exit = p_exit + f.prob
        lo = p_exit.interval(box.bounds)[0] if not p_exit.is_zero() else 0.0
        best = lo if best is None else min(best, lo)
    return best


def classify(wpts: Wpts, box: Box | None = None) -> Classification:
    wb = working_box(wpts, box)
    env = dict(wb.bounds)
    env.update({r: d.support for r, d in wpts.sampling_vars.items()})
    loops = wpts.loop_transitions()
    step_bound = 1.0
    all_one = True
    for t in loops:
        for f in t.forks:
            w = f.weight
            if w.kind in ("pdf", "piece"):
                return Classification("unsupported", reason="pdf score inside a loop")
            if not w.is_one():
                all_one = False
                step_bound = max(step_bound, w.upper_bound(env))
    exit_bound = 0.0
    for f in wpts.exit_forks():
        exit_bound = max(exit_bound, f.weight.upper_bound(env))
    kappa = update_bound(wpts, wb)
    pexit = static_exit_probability(wpts, wb)
    if all_one:
        return Classification("score-at-end", score_bound=exit_bound, update_bound=kappa,
                              step_weight_bound=1.0, exit_probability=pexit,
                              reason="all in-loop weights are 1")
    if math.isinf(step_bound):
        return Classification("unsupported", update_bound=kappa, reason="in-loop weight is unbounded on the working box")
    return Classification("score-recursive", score_bound=exit_bound, update_bound=kappa,
                          step_weight_bound=step_bound, exit_probability=pexit,
                          reason=f"in-loop weights bounded by {step_bound:g}")
