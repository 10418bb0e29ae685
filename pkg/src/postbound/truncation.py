"""Truncation of a WPTS to a bounded box of program states."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .distributions import Normal
from .polynomial import Box, Polynomial
from .regions import Atom, Region
from .wpts import Classification, Fork, Guard, Transition, Weight, Wpts, working_box

SINK = "sink"


def extend_range(wpts: Wpts, box: Box) -> Box:
    """``box`` joined with the one-step image of ``box`` over its own variables."""
    wb = working_box(wpts, box)
    env = dict(wb.bounds)
    env.update(box.bounds)
    env.update({r: d.support for r, d in wpts.sampling_vars.items()})
    out = dict(box.bounds)
    for t in wpts.transitions:
        if wpts.terminal(t.source):
            continue
        for f in t.forks:
            for v in box.variables:
                lo, hi = f.value_of(v).interval(env)
                a, b = out[v]
                out[v] = (min(a, lo), max(b, hi))
    return Box(out)


def box_guard(box: Box) -> Guard:
    atoms = []
    for v, (a, b) in box.bounds.items():
        x = Polynomial.var(v)
        atoms.append(Atom(x - a))
        atoms.append(Atom(Polynomial.const(b) - x))
    return Guard.of([atoms])


def outside_pieces(inner: Box, outer: Box) -> list[tuple[Box, list[Atom]]]:
    """Decompose ``outer \\ inner`` into boxes, each with the strict atom that keeps it
    off ``inner``."""
    pieces = []
    cur = dict(outer.bounds)
    for v in inner.variables:
        a, b = inner[v]
        lo, hi = cur[v]
        x = Polynomial.var(v)
        if lo < a:
            bx = dict(cur)
            bx[v] = (lo, a)
            pieces.append((Box(bx), [Atom(Polynomial.const(a) - x, strict=True)]))
        if hi > b:
            bx = dict(cur)
            bx[v] = (b, hi)
            pieces.append((Box(bx), [Atom(x - b, strict=True)]))
        cur[v] = (max(lo, a), min(hi, b))
        if cur[v][0] > cur[v][1]:
            break
    return pieces


@dataclass
class TruncApprox:
    """Bound on the expected weight of runs from states outside the box."""

    direction: str  # "upper" or "lower"
    kind: str  # "const", "poly", "monotone"
    value: float = 0.0
    log_value: float | None = None
    poly: Polynomial | None = None
    monotone: list = field(default_factory=list)  # [(phi, dist, factor)]
    note: str = ""

    def bound_on(self, box: Box) -> Polynomial:
        """Bound valid on every state of ``box`` (original coordinates)."""
        if self.kind == "poly":
            return self.poly
        if self.kind == "monotone":
            best = self.value
            for phi, dist, factor in self.monotone:
                lo = phi.interval(box.bounds)[0]
                v, lv = dist.sup_pdf_from(lo)
                v = v * factor
                if v == 0.0 and lv > -math.inf:
                    v = math.ulp(0.0)
                best = min(best, v)
            return Polynomial.const(best)
        return Polynomial.const(self.value)

    def describe_on(self, box: Box) -> dict:
        d = {"kind": self.kind, "value": self.bound_on(box).constant_term() if self.kind != "poly" else str(self.poly)}
        if self.kind == "monotone":
            lows = []
            for phi, dist, factor in self.monotone:
                lo = phi.interval(box.bounds)[0]
                lows.append({"phi": str(phi), "phi_min": lo, "log10_bound": dist.sup_pdf_from(lo)[1] / math.log(10) + math.log10(factor)})
            d["monotone"] = lows
        return d

    def to_json(self):
        d = {"direction": self.direction, "kind": self.kind, "value": self.value, "note": self.note}
        if self.log_value is not None:
            d["log_value"] = self.log_value
        if self.poly is not None:
            d["poly"] = self.poly.to_json()
        if self.monotone:
            d["monotone"] = [{"phi": str(p), "dist": [dist.name, *dist.params], "factor": f} for p, dist, f in self.monotone]
        return d


def ost_upper_constant(c1: float, c2: float, c3: float, n_star: int | None = None) -> tuple[float, int]:
    """Upper bound on the expected weight from any state, from the exponential tail
    ``P(T > n) <= c1 exp(-c2 n)`` and step weights bounded by ``exp(c3)``."""
    if c2 <= c3:
        raise ValueError("tail decay must exceed the weight growth rate")
    if n_star is None:
        n_star = 1
        while c1 * math.exp((c3 - c2) * n_star) >= 1.0:
            n_star += 1
    m = sum(math.exp(c3 * n) for n in range(1, n_star))
    q = math.exp(c3 - c2)
    a = q**n_star
    return 1.0 + m + c1 * a / (1.0 - q), n_star


def monotone_tails(wpts: Wpts, box: Box) -> list:
    """Affine functions phi that never decrease along runs and lower-bound the final
    pdf argument, for exit scores of the form c * pdf(normal, x)."""
    exits = wpts.exit_forks()
    if not exits or any(f.weight.pdf is None for f in exits):
        return []
    pdfs = {(f.weight.pdf.dist, str(f.weight.pdf.arg)) for f in exits}
    if len(pdfs) != 1:
        return []
    dist = exits[0].weight.pdf.dist
    if not isinstance(dist, Normal):
        return []
    arg = exits[0].weight.pdf.arg
    if len(arg.variables()) != 1 or arg != Polynomial.var(next(iter(arg.variables()))):
        return []
    x = next(iter(arg.variables()))
    if any(not f.weight.factor.is_constant() for f in exits):
        return []
    factor = max(f.weight.factor.constant_term() for f in exits)
    if any(x in f.update for f in exits):
        return []
    locs = wpts.template_locations()
    if len(locs) != 1:
        return []
    inv = wpts.invariant(locs[0])
    cands = [Polynomial()]
    if len(inv.conjs) == 1 and len(inv.conjs[0]) == 1:
        cands.append(inv.conjs[0][0].expr)
    wb = working_box(wpts, box)
    env = dict(wb.bounds)
    env.update(box.bounds)
    env.update({r: d.support for r, d in wpts.sampling_vars.items()})
    out = []
    for g in cands:
        for c in ([0.0] if g.is_zero() else [4.0, 3.0, 2.0, 1.5, 1.0, 0.75, 0.5, 0.25]):
            phi = Polynomial.var(x) + g * c
            ok = True
            for t in wpts.loop_transitions():
                for f in t.forks:
                    delta = phi.subs(f.substitution(wpts.program_vars)) - phi
                    if delta.interval(env)[0] < -1e-12:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                out.append((phi, dist, factor))
                break
    return out


def derive_trunc_approx(wpts: Wpts, box: Box, extended: Box, cls: Classification,
                        direction: str, ost=None) -> TruncApprox:
    if direction == "lower":
        return TruncApprox("lower", "const", 0.0, note="weights are nonnegative")
    if cls.kind == "score-at-end":
        mono = monotone_tails(wpts, extended)
        if mono:
            return TruncApprox("upper", "monotone", cls.score_bound, monotone=mono,
                               note="score bound tightened by a non-decreasing lower bound on the pdf argument")
        return TruncApprox("upper", "const", cls.score_bound, note="maximum of the exit score")
    if cls.kind == "score-recursive":
        if ost is None or ost.c1 is None or ost.c2 is None:
            return TruncApprox("upper", "const", math.inf, note="no tail constants available")
        c3 = ost.c3 if ost.c3 is not None else cls.c3
        val, n_star = ost_upper_constant(ost.c1, ost.c2, c3)
        val *= max(cls.score_bound, 1.0)
        return TruncApprox("upper", "const", val, note=f"tail-sum bound with n*={n_star}")
    raise ValueError(f"cannot derive truncation bound for {cls.kind} system")


def truncate(wpts: Wpts, box: Box, approx: TruncApprox | None = None) -> Wpts:
    """Truncated system: outside ``box`` every step into a non-output location jumps to
    an absorbing sink with weight bounded by ``approx``."""
    phi = box_guard(box)
    nphi = phi.negate()
    out = wpts.copy()
    sink = SINK
    ts: list[Transition] = []
    wsink = Weight(Polynomial.const(approx.value if approx and math.isfinite(approx.value) else 0.0)) if approx else Weight()
    if approx and approx.kind == "poly":
        wsink = Weight(approx.poly)
    for i, t in enumerate(wpts.transitions):
        if wpts.terminal(t.source):
            continue
        gin = t.guard.and_(phi)
        if not gin.is_false():
            ts.append(Transition(t.source, gin, [Fork(f.dest, f.prob, dict(f.update), f.weight) for f in t.forks], i, "in"))
        gout = t.guard.and_(nphi)
        if not gout.is_false():
            forks = []
            for f in t.forks:
                if f.dest == wpts.out_loc:
                    forks.append(Fork(f.dest, f.prob, dict(f.update), f.weight))
                else:
                    forks.append(Fork(sink, f.prob, {}, wsink))
            ts.append(Transition(t.source, gout, forks, i, "out"))
    ts.append(Transition(wpts.out_loc, Guard.true(), [Fork(wpts.out_loc, Polynomial.const(1.0), {}, Weight())]))
    ts.append(Transition(sink, Guard.true(), [Fork(sink, Polynomial.const(1.0), {}, Weight())]))
    out.transitions = ts
    out.sink_loc = sink
    if sink not in out.locations:
        out.locations = out.locations + [sink]
    out.meta = dict(out.meta, truncation_box=box.to_json())
    return out


@dataclass
class TruncationContext:
    original: Wpts
    box: Box
    extended: Box
    upper: TruncApprox | None = None
    lower: TruncApprox | None = None

    def approx(self, direction: str) -> TruncApprox:
        a = self.upper if direction == "upper" else self.lower
        if a is None:
            raise ValueError(f"no {direction} truncation approximation")
        return a

    def d2_regions(self, loc: str) -> list[tuple[Region, Box]]:
        """Pieces of the invariant at ``loc`` inside the extended box but outside the box."""
        out = []
        inv = self.original.invariant(loc)
        for pbox, atoms in outside_pieces(self.box, self.extended):
            for conj in inv.conjs:
                reg = Region(pbox, list(conj) + atoms)
                if reg.is_feasible(respect_strict=True):
                    out.append((Region(pbox, list(conj)), pbox))
        return out
