"""Case enumeration and the expected-weight transformer on polynomial templates.

For a transition and a polyhedral region of source states, ``enumerate_cases`` splits
the region into cells on which every (fork, successor situation) pair has a fixed
shape: the successor lands in a fixed guard conjunct for sampled values in an
interval whose endpoints are affine in the source state.  ``apply_ewt`` then computes
the expected weight of a template exactly on a cell, as a polynomial whose
coefficients are affine in the template unknowns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .distributions import Distribution, Normal, moment, partial_moment_scaled
from .polynomial import Box, LinPoly, Monomial, Polynomial, monomials_upto, mono_str
from .regions import Atom, Region
from .wpts import Fork, Transition, Weight, Wpts


class UnsupportedError(Exception):
    pass


# ---------------------------------------------------------------------------
# templates

@dataclass
class TemplateSet:
    """Polynomial templates ``h_l(v) = sum_a c_{l,a} v^a`` per location."""

    variables: list[str]
    degree: int
    monomials: dict[str, list[Monomial]]

    @staticmethod
    def build(wpts: Wpts, variables: list[str], degree: int) -> "TemplateSet":
        monos = monomials_upto(variables, degree)
        return TemplateSet(list(variables), degree, {l: list(monos) for l in wpts.template_locations()})

    def unknown(self, loc: str, m: Monomial) -> str:
        return f"{loc}:{mono_str(m) or '1'}"

    def unknowns(self) -> list[str]:
        return [self.unknown(l, m) for l, ms in self.monomials.items() for m in ms]

    def has(self, loc: str) -> bool:
        return loc in self.monomials

    def as_linpoly(self, loc: str, subs: Mapping[str, Polynomial] | None = None) -> LinPoly:
        """The template at ``loc`` with its variables replaced by ``subs``."""
        parts: dict[str | None, Polynomial] = {}
        cache: dict[Monomial, Polynomial] = {(): Polynomial.const(1.0)}

        def power(m: Monomial) -> Polynomial:
            if m in cache:
                return cache[m]
            v, e = m[-1]
            prev = m[:-1] + (((v, e - 1),) if e > 1 else ())
            val = power(prev) * (subs[v] if subs is not None else Polynomial.var(v))
            cache[m] = val
            return val

        for m in self.monomials[loc]:
            parts[self.unknown(loc, m)] = power(m) if subs is not None else Polynomial({m: 1.0})
        return LinPoly(parts)

    def instantiate(self, loc: str, values: Mapping[str, float]) -> Polynomial:
        return Polynomial({m: values.get(self.unknown(loc, m), 0.0) for m in self.monomials[loc]})


# ---------------------------------------------------------------------------
# situations and cells

@dataclass
class Situation:
    """A place a successor state can land in: a guard conjunct of a transition at
    ``loc``, or a terminal location."""

    loc: str
    kind: str  # "template", "terminal", "final"
    atoms: tuple[Atom, ...] = ()
    transition: Transition | None = None


def situations(wpts: Wpts, loc: str, templates: TemplateSet | None = None) -> list[Situation]:
    if wpts.terminal(loc):
        return [Situation(loc, "final")]
    out = []
    for t in wpts.transitions_from(loc):
        kind = "template" if wpts.is_template_transition(t) else "terminal"
        for conj in t.guard.conjs:
            out.append(Situation(loc, kind, conj, t))
    return out


def _affine_key(p: Polynomial) -> tuple:
    s = p.max_abs_coeff()
    if s == 0:
        return ()
    return tuple(sorted((m, round(c / s, 12)) for m, c in p.terms.items()))


@dataclass
class RBound:
    """Bounds of one sampling variable for a (fork, situation) pair."""

    lowers: list[Polynomial]
    uppers: list[Polynomial]


@dataclass
class Combo:
    fork: int
    situation: Situation
    vatoms: list[Atom]
    rbounds: dict[str, RBound]
    # filled per cell
    active: dict[str, tuple[Polynomial, Polynomial]] = field(default_factory=dict)


@dataclass
class Cell:
    region: Region
    combos: list[Combo]
    signs: dict = field(default_factory=dict)
    bbox: Box | None = None


def _split_atom(a: Atom, rvars: set[str]) -> tuple[str | None, Polynomial | None, str | None]:
    """Classify an atom in (v, r): ('v', expr, None) or ('r', bound, 'lo'|'hi') with r-name."""
    pr = a.expr.variables() & rvars
    if not pr:
        return None, None, None
    if len(pr) > 1:
        raise UnsupportedError(f"guard atom depends on several sampled values: {a}")
    r = next(iter(pr))
    parts = a.expr.split_by({r})
    if any(dict(m).get(r, 0) > 1 for m in parts):
        raise UnsupportedError(f"guard atom is not affine in the sampled value {r}: {a}")
    coef = parts.get(((r, 1),), Polynomial())
    rest = parts.get((), Polynomial())
    if not coef.is_constant():
        raise UnsupportedError(f"coefficient of {r} depends on program state: {a}")
    c = coef.constant_term()
    bound = -rest * (1.0 / c)
    return r, bound, "lo" if c > 0 else "hi"


def make_combos(wpts: Wpts, t: Transition, templates: TemplateSet | None = None) -> list[Combo]:
    rv = set(wpts.sampling_vars)
    combos = []
    for j, f in enumerate(t.forks):
        sub = f.substitution(wpts.program_vars)
        for s in situations(wpts, f.dest, templates):
            vatoms = []
            rb: dict[str, RBound] = {}
            dead = False
            for a in s.atoms:
                sa = a.subs(sub)
                ct = sa.constant_truth()
                if ct is True:
                    continue
                if ct is False:
                    dead = True
                    break
                r, bound, side = _split_atom(sa, rv)
                if r is None:
                    vatoms.append(sa)
                else:
                    b = rb.setdefault(r, RBound([], []))
                    (b.lowers if side == "lo" else b.uppers).append(bound)
            if dead:
                continue
            for r, b in rb.items():
                lo, hi = wpts.sampling_vars[r].support
                if math.isinf(lo) or math.isinf(hi):
                    raise UnsupportedError(f"guard depends on unbounded sampled value {r}")
                b.lowers.insert(0, Polynomial.const(lo))
                b.uppers.insert(0, Polynomial.const(hi))
            combos.append(Combo(j, s, vatoms, rb))
    return combos


def _sign_on(cell: Cell, f: Polynomial, tol: float = 1e-12) -> tuple[float, float] | None:
    """(min, max) of f on the cell or None when the cell is empty; uses the box first."""
    key = _affine_key(f)
    if key in cell.signs:
        s = cell.signs[key]
        return (0.0, math.inf) if s > 0 else (-math.inf, 0.0)
    nkey = _affine_key(-f)
    if nkey in cell.signs:
        s = cell.signs[nkey]
        return (-math.inf, 0.0) if s > 0 else (0.0, math.inf)
    lo, hi = f.interval(cell.bbox.bounds)
    if lo >= -tol or hi <= tol:
        return lo, hi
    if not f.is_affine():
        return lo, hi
    mn = cell.region.optimize(f)
    mx = cell.region.optimize(f, maximize=True)
    return mn, mx


def _split(cell: Cell, f: Polynomial) -> list[Cell]:
    out = []
    for sign in (1, -1):
        reg = cell.region.with_atoms([Atom(f * sign)])
        bb = reg.bounding_box()
        if bb is None:
            continue
        signs = dict(cell.signs)
        signs[_affine_key(f)] = sign
        out.append(Cell(reg, cell.combos, signs, bb))
    return out


def _atom_status(cell: Cell, a: Atom, tol: float = 1e-12) -> str:
    key = _affine_key(a.expr)
    if key in cell.signs:
        return "sat" if cell.signs[key] > 0 else ("unsat" if a.strict else "check")
    mnmx = _sign_on(cell, a.expr)
    mn, mx = mnmx
    if a.strict:
        if mn > tol:
            return "sat"
        if mx <= tol:
            return "unsat"
    else:
        if mn >= -tol:
            return "sat"
        if mx < -tol:
            return "unsat"
    return "mixed"


def enumerate_cases(wpts: Wpts, t: Transition, region: Region,
                    templates: TemplateSet | None = None, max_cells: int = 20000) -> list[Cell]:
    """Split ``region`` into cells where each fork/situation pair has a fixed shape."""
    combos = make_combos(wpts, t, templates)
    bb = region.bounding_box()
    if bb is None:
        return []
    work = [Cell(region, combos, {}, bb)]
    done: list[Cell] = []
    while work:
        cell = work.pop()
        split_on = None
        live: list[Combo] = []
        for c in cell.combos:
            status = "sat"
            for a in c.vatoms:
                st = _atom_status(cell, a)
                if st == "check":
                    # the non-strict atom holds only on the face shared with the sibling
                    # cell, whose obligation already covers it
                    st = "unsat"
                if st == "unsat":
                    status = "unsat"
                    break
                if st == "mixed":
                    if not a.expr.is_affine():
                        raise UnsupportedError(f"cannot decide non-affine condition {a} on a cell")
                    split_on = a.expr
                    break
            if split_on is not None:
                break
            if status == "unsat":
                continue
            active: dict[str, tuple[Polynomial, Polynomial]] = {}
            empty = False
            for r, b in c.rbounds.items():
                lo = _select(cell, b.lowers, maximize=True)
                if isinstance(lo, tuple):
                    split_on = lo[1]
                    break
                hi = _select(cell, b.uppers, maximize=False)
                if isinstance(hi, tuple):
                    split_on = hi[1]
                    break
                width = hi - lo
                mn, mx = _sign_on(cell, width)
                if mx <= 1e-12:
                    empty = True
                    break
                if mn < -1e-12:
                    split_on = width
                    break
                active[r] = (lo, hi)
            if split_on is not None:
                break
            if empty:
                continue
            live.append(Combo(c.fork, c.situation, c.vatoms, c.rbounds, active))
        if split_on is not None:
            work.extend(_split(cell, split_on))
            if len(work) + len(done) > max_cells:
                raise UnsupportedError("case enumeration exceeded the cell limit")
            continue
        done.append(Cell(cell.region, live, cell.signs, cell.bbox))
    return done


def _select(cell: Cell, cands: list[Polynomial], maximize: bool):
    """The candidate that is largest (or smallest) on the whole cell, or ('split', f)."""
    best = cands[0]
    for c in cands[1:]:
        d = c - best
        if d.is_zero():
            continue
        mn, mx = _sign_on(cell, d)
        if maximize:
            if mn >= -1e-12:
                best = c
            elif mx <= 1e-12:
                pass
            else:
                return ("split", d)
        else:
            if mx <= 1e-12:
                best = c
            elif mn >= -1e-12:
                pass
            else:
                return ("split", d)
    return best


# ---------------------------------------------------------------------------
# expected weights on a cell

@dataclass
class Frame:
    """Affine change of variables ``y = shift + scale * z`` for program variables.
    Variables with zero scale are fixed to their shift."""

    shift: dict[str, float]
    scale: dict[str, float]

    @staticmethod
    def identity(variables) -> "Frame":
        return Frame({v: 0.0 for v in variables}, {v: 1.0 for v in variables})

    @staticmethod
    def of_box(box: Box, tol: float = 1e-12) -> "Frame":
        shift, scale = {}, {}
        for v, (a, b) in box.bounds.items():
            shift[v] = a
            scale[v] = b - a if b - a > tol else 0.0
        return Frame(shift, scale)

    def free(self) -> list[str]:
        return [v for v, s in self.scale.items() if s != 0.0]

    def to_local(self) -> dict[str, Polynomial]:
        """Substitution y -> shift + scale * z."""
        return {v: Polynomial.const(self.shift[v]) + Polynomial.var(v) * self.scale[v] if self.scale[v] else
                Polynomial.const(self.shift[v]) for v in self.shift}

    def to_global(self, point: Mapping[str, float]) -> dict[str, float]:
        return {v: self.shift[v] + self.scale[v] * point.get(v, 0.0) for v in self.shift}

    def from_global(self, point: Mapping[str, float]) -> dict[str, float]:
        return {v: (point[v] - self.shift[v]) / self.scale[v] for v in self.free()}


def _integrate_r(p: LinPoly | Polynomial, r: str, dist: Distribution,
                 limits: tuple[Polynomial, Polynomial] | None, frame: tuple[float, float] | None,
                 cache: dict) -> LinPoly | Polynomial:
    """Integrate a polynomial in ``r`` (possibly with template coefficients) against
    the law of ``r``; with ``limits`` over ``[lo, hi]`` in the frame ``r = a + s*rho``."""
    def one(poly: Polynomial) -> Polynomial:
        if r not in poly.variables():
            if limits is None:
                return poly
            return poly * _pm(0)
        acc = Polynomial()
        for mono, cof in poly.split_by({r}).items():
            e = dict(mono).get(r, 0)
            acc = acc + cof * _pm(e)
        return acc

    def _pm(e: int) -> Polynomial:
        key = (r, e, id(limits) if limits is not None else None)
        if key not in cache:
            if limits is None:
                cache[key] = Polynomial.const(moment(dist, e))
            else:
                a, s = frame
                cache[key] = partial_moment_scaled(dist, e, a, s, limits[0], limits[1]).rename({"__r": r})
        return cache[key]

    if isinstance(p, LinPoly):
        return LinPoly({k: one(q) for k, q in p.parts.items()})
    return one(p)


def weight_poly(w: Weight, sub: Mapping[str, Polynomial], direction: str) -> Polynomial:
    """Weight with variables substituted; the residual is added (upper) or subtracted (lower)."""
    val = w.factor.subs(sub)
    if w.pdf is not None:
        raise UnsupportedError("pdf scores must be replaced by polynomial approximations first")
    if w.piece is not None:
        val = val * w.piece.compose(w.piece.arg.subs(sub))
    if w.residual:
        val = val + (w.residual if direction == "upper" else -w.residual)
    return val


def terminal_value(wpts: Wpts, t: Transition, sub: Mapping[str, Polynomial], direction: str) -> Polynomial:
    """Expected weight of a transition whose forks all end the run, at substituted state."""
    acc = Polynomial()
    for f in t.forks:
        fsub = dict(sub)
        w = weight_poly(f.weight, {**fsub}, direction)
        for r in sorted(w.variables() & set(wpts.sampling_vars)):
            w = _integrate_r(w, r, wpts.sampling_vars[r], None, None, {})
        acc = acc + f.prob.subs(sub) * w
    return acc


def apply_ewt(templates: TemplateSet, wpts: Wpts, t: Transition, cell: Cell, direction: str = "upper",
              frame: Frame | None = None, rescale_samples: bool = True) -> LinPoly:
    """Expected weight of the templates after one step of ``t`` from states in ``cell``.

    The result is a polynomial in the local coordinates of ``frame`` (identity when
    omitted) whose coefficients are affine in the template unknowns.
    """
    pv = wpts.program_vars
    if frame is None:
        frame = Frame.identity([v for v in cell.region.vars])
    loc = frame.to_local()
    total = LinPoly()
    for c in cell.combos:
        f: Fork = t.forks[c.fork]
        rframes: dict[str, tuple[float, float]] = {}
        rsub: dict[str, Polynomial] = {}
        limits: dict[str, tuple[Polynomial, Polynomial]] = {}
        for r, (lo, hi) in c.active.items():
            if rescale_samples:
                a = _range_on(cell, lo)[0]
                b = _range_on(cell, hi)[1]
                s = b - a if b > a else 1.0
            else:
                a, s = 0.0, 1.0
            rframes[r] = (a, s)
            rsub[r] = Polynomial.const(a) + Polynomial.var(r) * s
            limits[r] = ((lo.subs(loc) - a) * (1.0 / s), (hi.subs(loc) - a) * (1.0 / s))
        full = {**loc, **rsub}
        nxt = {v: f.value_of(v).subs(full) for v in pv}
        sit = c.situation
        if sit.kind == "final":
            val = LinPoly.from_poly(Polynomial.const(1.0))
        elif sit.kind == "terminal":
            val = LinPoly.from_poly(terminal_value(wpts, sit.transition, nxt, direction))
        else:
            val = templates.as_linpoly(sit.loc, {v: nxt[v] for v in templates.variables})
        wt = weight_poly(f.weight, full, direction) * f.prob.subs(loc)
        contrib = val * wt
        present = contrib.variables()
        cache: dict = {}
        for r in sorted(set(wpts.sampling_vars) & (present | set(c.active))):
            dist = wpts.sampling_vars[r]
            if r in c.active:
                if r in present:
                    contrib = _integrate_r(contrib, r, dist, limits[r], rframes[r], cache)
                else:
                    contrib = contrib * _prob_interval(dist, limits[r], rframes[r])
            else:
                contrib = _integrate_r(contrib, r, dist, None, None, cache)
        total = total + contrib
    return total


def _range_on(cell: Cell, f: Polynomial) -> tuple[float, float]:
    if f.is_constant():
        c = f.constant_term()
        return c, c
    if f.is_affine():
        mn = cell.region.optimize(f)
        mx = cell.region.optimize(f, maximize=True)
        if mn is not None and mx is not None:
            return mn, mx
    return f.interval(cell.bbox.bounds)


def _prob_interval(dist: Distribution, limits, frame) -> Polynomial:
    a, s = frame
    return partial_moment_scaled(dist, 0, a, s, limits[0], limits[1])
