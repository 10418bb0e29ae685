"""Polyhedral regions (a box plus inequality atoms) with LP-based queries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .polynomial import Box, Polynomial


@dataclass(frozen=True)
class Atom:
    """``expr > 0`` if strict else ``expr >= 0``."""

    expr: Polynomial
    strict: bool = False

    def negate(self) -> "Atom":
        return Atom(-self.expr, not self.strict)

    def holds(self, point) -> bool:
        v = self.expr.eval(point)
        return v > 0 if self.strict else v >= 0

    def holds_many(self, env, size: int) -> np.ndarray:
        v = self.expr.eval_many(env, size)
        return v > 0 if self.strict else v >= 0

    def subs(self, mapping) -> "Atom":
        return Atom(self.expr.subs(mapping), self.strict)

    def constant_truth(self) -> bool | None:
        if not self.expr.is_constant():
            return None
        c = self.expr.constant_term()
        return c > 0 if self.strict else c >= 0

    def to_json(self):
        return {"expr": self.expr.to_json(), "strict": self.strict}

    @staticmethod
    def from_json(d) -> "Atom":
        return Atom(Polynomial.from_json(d["expr"]), bool(d.get("strict", False)))

    def __str__(self):
        return f"{self.expr} {'>' if self.strict else '>='} 0"


class Region:
    """Intersection of a box with closed versions of a list of atoms."""

    def __init__(self, box: Box, atoms: Sequence[Atom] = ()):
        self.box = box
        self.atoms: list[Atom] = list(atoms)
        self.vars = box.variables

    def with_atoms(self, atoms: Sequence[Atom]) -> "Region":
        return Region(self.box, self.atoms + list(atoms))

    def affine_atoms(self) -> list[Atom]:
        return [a for a in self.atoms if a.expr.is_affine()]

    def _lp(self, extra_t: bool = False):
        n = len(self.vars)
        idx = {v: i for i, v in enumerate(self.vars)}
        rows, rhs = [], []
        for a in self.affine_atoms():
            c0, lin = a.expr.linear_coeffs()
            row = np.zeros(n + (1 if extra_t else 0))
            for v, c in lin.items():
                if v not in idx:
                    raise KeyError(f"variable {v} not in region box")
                row[idx[v]] = -c
            if extra_t and a.strict:
                row[n] = 1.0
            rows.append(row)
            rhs.append(c0)
        bounds = [self.box[v] for v in self.vars]
        if extra_t:
            bounds = bounds + [(None, 1.0)]
        A = np.array(rows) if rows else None
        b = np.array(rhs) if rows else None
        return A, b, bounds, idx

    def optimize(self, f: Polynomial, maximize: bool = False) -> float | None:
        """min (or max) of an affine ``f`` over the closed region; None if empty."""
        c0, lin = f.linear_coeffs()
        A, b, bounds, idx = self._lp()
        c = np.zeros(len(self.vars))
        for v, k in lin.items():
            c[idx[v]] = k
        if maximize:
            c = -c
        if not np.any(c):
            return c0 if self.is_feasible() else None
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise RuntimeError(f"LP failure: {res.message}")
        val = float(res.fun)
        return c0 + (-val if maximize else val)

    def argopt(self, direction: np.ndarray) -> np.ndarray | None:
        A, b, bounds, _ = self._lp()
        res = linprog(direction, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            return None
        return np.asarray(res.x)

    def is_feasible(self, respect_strict: bool = False, tol: float = 1e-9) -> bool:
        if not respect_strict or not any(a.strict for a in self.affine_atoms()):
            A, b, bounds, _ = self._lp()
            res = linprog(np.zeros(len(self.vars)), A_ub=A, b_ub=b, bounds=bounds, method="highs")
            return res.status == 0
        A, b, bounds, _ = self._lp(extra_t=True)
        c = np.zeros(len(self.vars) + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        return res.status == 0 and -res.fun > tol

    def witness(self) -> dict[str, float] | None:
        A, b, bounds, _ = self._lp(extra_t=True)
        c = np.zeros(len(self.vars) + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            return None
        return {v: float(res.x[i]) for i, v in enumerate(self.vars)}

    def bounding_box(self) -> Box | None:
        out = {}
        for v in self.vars:
            f = Polynomial.var(v)
            lo = self.optimize(f)
            if lo is None:
                return None
            hi = self.optimize(f, maximize=True)
            lo, hi = max(lo, self.box[v][0]), min(hi, self.box[v][1])
            if hi < lo:
                hi = lo
            out[v] = (lo, hi)
        return Box(out)

    def contains_many(self, env, size: int, tol: float = 1e-12) -> np.ndarray:
        ok = np.ones(size, dtype=bool)
        for v in self.vars:
            a, b = self.box[v]
            ok &= (env[v] >= a - tol) & (env[v] <= b + tol)
        for at in self.atoms:
            ok &= at.expr.eval_many(env, size) >= -tol
        return ok

    def sample(self, n: int, seed: int = 0) -> dict[str, np.ndarray]:
        """Quasi-random points of the closed region, with vertices; empty dict if none found."""
        bb = self.bounding_box()
        if bb is None:
            return {}
        vs = self.vars
        d = len(vs)
        pts: list[np.ndarray] = []
        if d:
            m = int(2 ** np.ceil(np.log2(max(n, 2))))
            u = qmc.Sobol(d, scramble=True, seed=seed).random(m)
            lo = np.array([bb[v][0] for v in vs])
            hi = np.array([bb[v][1] for v in vs])
            cand = lo + u * (hi - lo)
            env = {v: cand[:, i] for i, v in enumerate(vs)}
            keep = self.contains_many(env, len(cand), tol=1e-9)
            rng = np.random.default_rng(seed)
            verts = []
            for _ in range(4 * d + 4):
                x = self.argopt(rng.normal(size=d))
                if x is not None:
                    verts.append(x)
            for i in range(d):
                for s in (1.0, -1.0):
                    e = np.zeros(d)
                    e[i] = s
                    x = self.argopt(e)
                    if x is not None:
                        verts.append(x)
            if verts:
                V = np.array(verts)
                pts.append(V)
                k = max(n - int(keep.sum()) - len(V), n // 4)
                w = rng.dirichlet(np.ones(len(V)), size=k)
                pts.append(w @ V)
            pts.append(cand[keep])
            allp = np.vstack(pts)
            allp = allp[:n] if len(allp) > n else allp
            return {v: allp[:, i] for i, v in enumerate(vs)}
        return {}

    def __repr__(self):
        return f"Region({self.box}, [{'; '.join(str(a) for a in self.atoms)}])"
