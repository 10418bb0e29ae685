"""Constraint generation for bound certificates and their LP/SDP encodings."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .cases import Frame, TemplateSet, UnsupportedError, apply_ewt, enumerate_cases
from .conic import ConicProgram, Solution, solve
from .polynomial import Box, LinPoly, Monomial, Polynomial, monomials_upto
from .regions import Atom, Region
from .truncation import TruncationContext
from .wpts import Fork, Guard, InitialDistribution, PieceFactor, Transition, Weight, Wpts

# ---------------------------------------------------------------------------
# normalised coordinates


@dataclass
class Scaling:
    """``x = lo + s * y`` per template variable, mapping the extended box to the unit box."""

    lo: dict[str, float]
    s: dict[str, float]

    @staticmethod
    def of_box(box: Box) -> "Scaling":
        lo, s = {}, {}
        for v, (a, b) in box.bounds.items():
            lo[v] = a
            s[v] = b - a if b - a > 1e-12 else 1.0
        return Scaling(lo, s)

    def x_of_y(self) -> dict[str, Polynomial]:
        return {v: Polynomial.const(self.lo[v]) + Polynomial.var(v) * self.s[v] for v in self.lo}

    def y_of_x(self) -> dict[str, Polynomial]:
        return {v: (Polynomial.var(v) - self.lo[v]) * (1.0 / self.s[v]) for v in self.lo}

    def box_to_y(self, box: Box) -> Box:
        return Box({v: ((a - self.lo[v]) / self.s[v], (b - self.lo[v]) / self.s[v]) for v, (a, b) in box.bounds.items()})

    def point_to_y(self, point: Mapping[str, float]) -> dict[str, float]:
        return {v: (point[v] - self.lo[v]) / self.s[v] for v in self.lo}

    def to_json(self):
        return {v: {"lo": self.lo[v], "scale": self.s[v]} for v in self.lo}


def scale_wpts(wpts: Wpts, sc: Scaling) -> Wpts:
    fwd = sc.x_of_y()
    ts = []
    for t in wpts.transitions:
        forks = []
        for f in t.forks:
            upd = {}
            for v, p in f.update.items():
                q = p.subs(fwd)
                if v in sc.lo:
                    q = (q - sc.lo[v]) * (1.0 / sc.s[v])
                upd[v] = q
            forks.append(Fork(f.dest, f.prob.subs(fwd), upd, f.weight.subs(fwd)))
        ts.append(Transition(t.source, t.guard.subs(fwd), forks, t.origin, t.region))
    values = {}
    for v, p in wpts.initial.values.items():
        values[v] = (p - sc.lo[v]) * (1.0 / sc.s[v]) if v in sc.lo else p
    out = Wpts(list(wpts.program_vars), dict(wpts.sampling_vars), list(wpts.locations), wpts.init_loc,
               wpts.out_loc, InitialDistribution(dict(wpts.initial.priors), values), ts, wpts.ret_var,
               wpts.sink_loc, dict(wpts.meta))
    return out


# ---------------------------------------------------------------------------
# obligations


@dataclass
class Obligation:
    """``body >= 0`` on ``region``; both in the local coordinates given by ``frame``
    relative to the normalised coordinates."""

    name: str
    kind: str
    location: str
    region: Region
    body: LinPoly
    frame: Frame
    note: str = ""

    def to_json(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "location": self.location,
            "box": self.region.box.to_json(),
            "atoms": [str(a) for a in self.region.atoms],
            "frame": {"shift": self.frame.shift, "scale": self.frame.scale},
            "body_degree": self.body.degree(),
            "note": self.note,
        }


@dataclass
class ConstraintSet:
    direction: str
    templates: TemplateSet
    obligations: list[Obligation]
    scaling: Scaling
    scaled: Wpts
    stats: dict = field(default_factory=dict)
    _samples: dict = field(default_factory=dict, repr=False)

    def objective(self, point_y: Mapping[str, float], loc: str | None = None) -> dict[str, float]:
        loc = loc or self.scaled.init_loc
        out = {}
        for m in self.templates.monomials[loc]:
            val = 1.0
            for v, e in m:
                val *= point_y[v] ** e
            out[self.templates.unknown(loc, m)] = val
        return out


def _local_region(reg_y: Region, frame: Frame) -> Region:
    loc = frame.to_local()
    free = frame.free()
    box = Box({v: (0.0, 1.0) for v in free})
    atoms = []
    for a in reg_y.atoms:
        e = a.expr.subs(loc)
        if e.is_constant():
            continue
        lo, hi = e.interval(box.bounds)
        if lo >= -1e-12:
            continue
        atoms.append(Atom(e))
    return Region(box, atoms)


def build_constraints(ctx: TruncationContext, wpts: Wpts, templates: TemplateSet, direction: str,
                      sc: Scaling, approx=None) -> ConstraintSet:
    """Obligations of a bound certificate on the truncated system.

    ``wpts`` is the system with scores already in polynomial form, in original coordinates.
    """
    if direction not in ("upper", "lower"):
        raise ValueError(direction)
    t0 = time.time()
    sw = scale_wpts(wpts, sc)
    rel = templates.variables
    box_y = sc.box_to_y(Box({v: ctx.box[v] for v in rel}))
    obls: list[Obligation] = []
    ncells = 0
    tag = "D1" if direction == "upper" else "D1'"
    for loc in templates.monomials:
        for ti, t in enumerate(sw.transitions_from(loc)):
            if not sw.is_template_transition(t):
                continue
            for ci, conj in enumerate(t.guard.conjs):
                reg = Region(box_y, list(conj))
                if not reg.is_feasible():
                    continue
                cells = enumerate_cases(sw, t, reg, templates)
                ncells += len(cells)
                for k, cell in enumerate(cells):
                    frame = Frame.of_box(cell.bbox)
                    ewt = apply_ewt(templates, sw, t, cell, direction, frame)
                    h = templates.as_linpoly(loc, {v: frame.to_local()[v] for v in rel})
                    body = h - ewt if direction == "upper" else ewt - h
                    obls.append(Obligation(f"{tag}.{loc}.{ti}.{ci}.{k}", tag, loc, _local_region(cell.region, frame),
                                           body, frame, f"{len(cell.combos)} successor cases"))
    tag2 = "D2" if direction == "upper" else "D2'"
    ta = approx if approx is not None else ctx.approx(direction)
    back = sc.x_of_y()
    for loc in templates.monomials:
        for k, (reg_x, pbox) in enumerate(ctx.d2_regions(loc)):
            reg_y = Region(sc.box_to_y(Box({v: pbox[v] for v in rel})), [a.subs(back) for a in reg_x.atoms])
            bb = reg_y.bounding_box()
            if bb is None:
                continue
            frame = Frame.of_box(bb)
            m = ta.bound_on(pbox)
            if not all(math.isfinite(c) for c in m.terms.values()):
                raise UnsupportedError("no finite truncation bound for states outside the box")
            mloc = m.subs(back).subs(frame.to_local())
            h = templates.as_linpoly(loc, {v: frame.to_local()[v] for v in rel})
            body = h - mloc if direction == "upper" else LinPoly.from_poly(mloc) - h
            obls.append(Obligation(f"{tag2}.{loc}.{k}", tag2, loc, _local_region(reg_y, frame), body, frame,
                                   f"truncation bound {m}"))
    stats = {"obligations": len(obls), "cells": ncells, "build_seconds": time.time() - t0}
    return ConstraintSet(direction, templates, obls, sc, sw, stats)


# ---------------------------------------------------------------------------
# dense polynomial helpers for encodings


class _Basis:
    def __init__(self, variables: list[str], degree: int):
        self.vars = variables
        self.degree = degree
        self.monos = monomials_upto(variables, degree)
        self.index = {m: i for i, m in enumerate(self.monos)}
        self.shift = {}
        for v in variables:
            src, dst = [], []
            for i, m in enumerate(self.monos):
                d = dict(m)
                d[v] = d.get(v, 0) + 1
                nm = tuple(sorted(d.items()))
                if nm in self.index:
                    src.append(i)
                    dst.append(self.index[nm])
            self.shift[v] = (np.array(src, dtype=int), np.array(dst, dtype=int))

    def dense(self, p: Polynomial) -> np.ndarray:
        out = np.zeros(len(self.monos))
        for m, c in p.terms.items():
            if m not in self.index:
                raise ValueError(f"monomial {m} outside basis of degree {self.degree}")
            out[self.index[m]] += c
        return out

    def mul_affine(self, vec: np.ndarray, g: Polynomial) -> np.ndarray:
        c0, lin = g.linear_coeffs()
        out = vec * c0
        for v, c in lin.items():
            src, dst = self.shift[v]
            np.add.at(out, dst, c * vec[src])
        return out


def _normalised_generators(ob: Obligation) -> list[Polynomial]:
    gens = []
    for v in ob.region.vars:
        gens.append(Polynomial.var(v))
        gens.append(1 - Polynomial.var(v))
    for a in ob.region.atoms:
        e = a.expr
        if not e.is_affine():
            raise UnsupportedError("Handelman encoding needs affine regions")
        hi = e.interval(ob.region.box.bounds)[1]
        gens.append(e * (1.0 / hi) if hi > 0 else e)
    return gens


def _exponents(k: int, degree: int, exact: bool = False):
    """Multisets of generator indices of size <= degree (== degree when ``exact``).

    With the pairs z, 1 - z among the generators, a product of lower degree is a sum
    of products of full degree, so ``exact`` loses nothing.
    """
    for d in range(degree if exact else 0, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), d):
            yield combo


@dataclass
class Encoding:
    program: ConicProgram
    unknowns: list[str]
    meta: dict = field(default_factory=dict)


def _body_rows(ob: Obligation, basis: _Basis, col: dict[str, int]):
    rows, cols, vals = [], [], []
    rhs = np.zeros(len(basis.monos))
    for k, p in ob.body.parts.items():
        d = basis.dense(p)
        nz = np.nonzero(d)[0]
        if k is None:
            rhs[nz] -= d[nz]
        else:
            rows.extend(nz.tolist())
            cols.extend([col[k]] * len(nz))
            vals.extend(d[nz].tolist())
    return rows, cols, vals, rhs


def encode_handelman(cs: ConstraintSet, degree: int | None = None, extra: int = 0) -> Encoding:
    """LP: each body equals a nonnegative combination of products of the region's
    normalised affine constraints."""
    unknowns = cs.templates.unknowns()
    col = {u: i for i, u in enumerate(unknowns)}
    nfree = len(unknowns)
    A_rows, A_cols, A_vals, b_parts = [], [], [], []
    row0 = 0
    nn = 0
    nn_meta = []
    for ob in cs.obligations:
        bdeg = ob.body.degree()
        D = max(2, bdeg) + extra if degree is None else max(degree, bdeg)
        free = ob.region.vars
        basis = _Basis(free, D)
        rows, cols, vals, rhs = _body_rows(ob, basis, col)
        A_rows += [row0 + r for r in rows]
        A_cols += cols
        A_vals += vals
        gens = _normalised_generators(ob)
        prods: dict[tuple, np.ndarray] = {(): basis.dense(Polynomial.const(1.0))}
        exact = bool(free)
        for e in _exponents(len(gens), D if free else 0, exact):
            for j in range(1, len(e) + 1):
                if e[:j] not in prods:
                    prods[e[:j]] = basis.mul_affine(prods[e[:j - 1]], gens[e[j - 1]])
            vec = prods[e]
            nz = np.nonzero(np.abs(vec) > 1e-15)[0]
            A_rows += (row0 + nz).tolist()
            A_cols += [nfree + nn] * len(nz)
            A_vals += (-vec[nz]).tolist()
            nn += 1
        nn_meta.append((ob.name, len(gens), D))
        b_parts.append(rhs)
        row0 += len(basis.monos)
    A = sp.csr_matrix((A_vals, (A_rows, A_cols)), shape=(row0, nfree + nn))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    prog = ConicProgram(nfree, nn, [], A, b, unknowns)
    return Encoding(prog, unknowns, {"encoding": "handelman", "multipliers": nn, "obligations": nn_meta,
                                          "product_degree": max((m[2] for m in nn_meta), default=0)})


def encode_putinar(cs: ConstraintSet, degree: int | None = None, extra: int = 0) -> Encoding:
    """SDP: each body equals sigma_0 + sum_i sigma_i g_i with SOS multipliers sigma."""
    unknowns = cs.templates.unknowns()
    col = {u: i for i, u in enumerate(unknowns)}
    nfree = len(unknowns)
    rows_all, cols_all, vals_all, b_parts = [], [], [], []
    psd_sizes: list[int] = []
    psd_offset = 0
    row0 = 0
    psd_entries = []  # (row, block, i, j, val)
    degrees: list[int] = []
    for ob in cs.obligations:
        bdeg = ob.body.degree()
        D = max(bdeg, 2) + extra if degree is None else max(degree, bdeg)
        D = D + (D % 2)
        free = ob.region.vars
        basis = _Basis(free, D)
        rows, cols, vals, rhs = _body_rows(ob, basis, col)
        rows_all += [row0 + r for r in rows]
        cols_all += cols
        vals_all += vals
        gens = [Polynomial.const(1.0)]
        for v in free:
            gens.append(Polynomial.var(v) * (1 - Polynomial.var(v)))
        for a in ob.region.atoms:
            hi = a.expr.interval(ob.region.box.bounds)[1]
            gens.append(a.expr * (1.0 / hi) if hi > 0 else a.expr)
        for g in gens:
            gd = g.degree()
            half = (D - gd) // 2
            if half < 0:
                continue
            mon = monomials_upto(free, half)
            blk = len(psd_sizes)
            psd_sizes.append(len(mon))
            for i in range(len(mon)):
                for j in range(len(mon)):
                    prod = Polynomial({mon[i]: 1.0}) * Polynomial({mon[j]: 1.0}) * g
                    for m, c in prod.terms.items():
                        psd_entries.append((row0 + basis.index[m], blk, i, j, -c))
        b_parts.append(rhs)
        row0 += len(basis.monos)
        degrees.append(D)
    offsets = np.cumsum([0] + [s * s for s in psd_sizes])
    npsd = int(offsets[-1])
    r2 = [e[0] for e in psd_entries]
    c2 = [nfree + int(offsets[e[1]]) + e[2] + e[3] * psd_sizes[e[1]] for e in psd_entries]
    v2 = [e[4] for e in psd_entries]
    A = sp.csr_matrix((vals_all + v2, (rows_all + r2, cols_all + c2)), shape=(row0, nfree + npsd))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    prog = ConicProgram(nfree, 0, psd_sizes, A, b, unknowns)
    return Encoding(prog, unknowns, {"encoding": "putinar", "psd_blocks": len(psd_sizes),
                                          "multiplier_degree": max(degrees, default=0)})


def choose_engine(cs: ConstraintSet, engine: str) -> str:
    if engine != "auto":
        return engine
    if all(a.expr.is_affine() for ob in cs.obligations for a in ob.region.atoms):
        return "handelman"
    return "putinar"


def encode(cs: ConstraintSet, engine: str = "auto", extra: int = 0) -> Encoding:
    e = choose_engine(cs, engine)
    if e == "handelman":
        return encode_handelman(cs, extra=extra)
    if e == "putinar":
        return encode_putinar(cs, extra=extra)
    raise ValueError(f"unknown engine {engine}")


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class BoundResult:
    point: dict[str, float]
    value: float | None
    coefficients: dict[str, float] | None
    status: str
    solve_seconds: float = 0.0

    def polynomial(self, cs: ConstraintSet) -> Polynomial | None:
        """Bound polynomial in original coordinates."""
        if self.coefficients is None:
            return None
        p = cs.templates.instantiate(cs.scaled.init_loc, self.coefficients)
        return p.subs(cs.scaling.y_of_x())


def synthesize_bound(cs: ConstraintSet, enc: Encoding, points: list[Mapping[str, float]],
                     time_limit: float | None = None) -> list[BoundResult]:
    """Optimise the template value at each point (original coordinates of template
    variables); minimise for upper bounds and maximise for lower bounds."""
    out = []
    sense = "min" if cs.direction == "upper" else "max"
    for pt in points:
        y = cs.scaling.point_to_y(pt)
        obj = cs.objective(y)
        c = np.zeros(enc.program.n_free)
        idx = {u: i for i, u in enumerate(enc.unknowns)}
        for u, v in obj.items():
            c[idx[u]] = v
        t0 = time.time()
        sol = solve(enc.program, c, sense, time_limit=time_limit)
        dt = time.time() - t0
        if sol.status != "optimal":
            out.append(BoundResult(dict(pt), None, None, sol.status, dt))
            continue
        coeffs = {u: float(sol.x_free[i]) for i, u in enumerate(enc.unknowns)}
        out.append(BoundResult(dict(pt), float(sol.objective), coeffs, "optimal", dt))
    return out
