"""Sparse multivariate polynomials, interval arithmetic and affine-coefficient polynomials.

A monomial is a tuple of ``(variable, exponent)`` pairs sorted by variable name;
the empty tuple is the constant monomial.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

Monomial = tuple[tuple[str, int], ...]
ONE: Monomial = ()


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, e in b:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_str(m: Monomial) -> str:
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)


def monomials_upto(variables: Iterable[str], degree: int) -> list[Monomial]:
    """All monomials over ``variables`` of total degree at most ``degree``, graded order."""
    vs = sorted(variables)
    out: list[Monomial] = [ONE]
    frontier: list[Monomial] = [ONE]
    for _ in range(degree):
        nxt = []
        seen = set()
        for m in frontier:
            last = m[-1][0] if m else None
            for v in vs:
                if last is not None and v < last:
                    continue
                nm = mono_mul(m, ((v, 1),))
                if nm not in seen:
                    seen.add(nm)
                    nxt.append(nm)
        out.extend(nxt)
        frontier = nxt
    return out


class Polynomial:
    """Polynomial with float coefficients; zero coefficients are never stored."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        self.terms: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                if c != 0.0:
                    self.terms[m] = float(c)

    @staticmethod
    def const(c: float) -> "Polynomial":
        return Polynomial({ONE: c})

    @staticmethod
    def var(name: str) -> "Polynomial":
        return Polynomial({((name, 1),): 1.0})

    @staticmethod
    def lift(x: "Polynomial | float | int") -> "Polynomial":
        return x if isinstance(x, Polynomial) else Polynomial.const(float(x))

    # arithmetic
    def __add__(self, other):
        other = Polynomial.lift(other)
        t = dict(self.terms)
        for m, c in other.terms.items():
            s = t.get(m, 0.0) + c
            if s == 0.0:
                t.pop(m, None)
            else:
                t[m] = s
        p = Polynomial()
        p.terms = t
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Polynomial()
        p.terms = {m: -c for m, c in self.terms.items()}
        return p

    def __sub__(self, other):
        return self + (-Polynomial.lift(other))

    def __rsub__(self, other):
        return Polynomial.lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            k = float(other)
            if k == 0.0:
                return Polynomial()
            p = Polynomial()
            p.terms = {m: c * k for m, c in self.terms.items()}
            return p
        t: dict[Monomial, float] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = mono_mul(m1, m2)
                t[m] = t.get(m, 0.0) + c1 * c2
        return Polynomial(t)

    __rmul__ = __mul__

    def __truediv__(self, k: float):
        return self * (1.0 / float(k))

    def __pow__(self, n: int):
        if n < 0 or int(n) != n:
            raise ValueError("only nonnegative integer powers")
        result = Polynomial.const(1.0)
        base = self
        n = int(n)
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            try:
                other = Polynomial.lift(other)
            except (TypeError, ValueError):
                return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def almost_equal(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        d = self - other
        return all(abs(c) <= tol for c in d.terms.values())

    # inspection
    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def degree_in(self, var: str) -> int:
        return max((dict(m).get(var, 0) for m in self.terms), default=0)

    def variables(self) -> set[str]:
        return {v for m in self.terms for v, _ in m}

    def constant_term(self) -> float:
        return self.terms.get(ONE, 0.0)

    def is_constant(self) -> bool:
        return all(m == ONE for m in self.terms)

    def is_affine(self) -> bool:
        return self.degree() <= 1

    def coefficient(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def linear_coeffs(self) -> tuple[float, dict[str, float]]:
        """(constant, {var: coefficient}) of an affine polynomial."""
        if not self.is_affine():
            raise ValueError(f"polynomial is not affine: {self}")
        lin = {m[0][0]: c for m, c in self.terms.items() if m}
        return self.constant_term(), lin

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def prune(self, tol: float = 0.0) -> "Polynomial":
        return Polynomial({m: c for m, c in self.terms.items() if abs(c) > tol})

    # evaluation and substitution
    def __call__(self, point: Mapping[str, float]) -> float:
        return self.eval(point)

    def eval(self, point: Mapping[str, float]) -> float:
        total = 0.0
        for m, c in self.terms.items():
            v = c
            for x, e in m:
                v *= point[x] ** e
            total += v
        return total

    def eval_many(self, env: Mapping[str, np.ndarray], size: int | None = None) -> np.ndarray:
        if size is None:
            size = len(next(iter(env.values()))) if env else 1
        out = np.zeros(size)
        for m, c in self.terms.items():
            v = np.full(size, c)
            for x, e in m:
                v = v * (env[x] ** e)
            out += v
        return out

    def subs(self, mapping: Mapping[str, "Polynomial | float"]) -> "Polynomial":
        """Simultaneous substitution of variables by polynomials."""
        if not any(v in mapping for v in self.variables()):
            return self
        cache: dict[tuple[str, int], Polynomial] = {}

        def power(x: str, e: int) -> Polynomial:
            key = (x, e)
            if key not in cache:
                cache[key] = Polynomial.lift(mapping[x]) ** e
            return cache[key]

        acc: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            keep = tuple((x, e) for x, e in m if x not in mapping)
            part = Polynomial({keep: c})
            for x, e in m:
                if x in mapping:
                    part = part * power(x, e)
            for mm, cc in part.terms.items():
                acc[mm] = acc.get(mm, 0.0) + cc
        return Polynomial(acc)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return self.subs({k: Polynomial.var(v) for k, v in mapping.items()})

    def diff(self, var: str) -> "Polynomial":
        t: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            d = dict(m)
            e = d.get(var, 0)
            if e == 0:
                continue
            if e == 1:
                del d[var]
            else:
                d[var] = e - 1
            nm = tuple(sorted(d.items()))
            t[nm] = t.get(nm, 0.0) + c * e
        return Polynomial(t)

    def split_by(self, variables: set[str]) -> dict[Monomial, "Polynomial"]:
        """Group terms by their monomial in ``variables``; values are the remaining cofactors."""
        out: dict[Monomial, dict[Monomial, float]] = {}
        for m, c in self.terms.items():
            inner = tuple((x, e) for x, e in m if x in variables)
            rest = tuple((x, e) for x, e in m if x not in variables)
            d = out.setdefault(inner, {})
            d[rest] = d.get(rest, 0.0) + c
        return {k: Polynomial(v) for k, v in out.items()}

    def interval(self, box: Mapping[str, tuple[float, float]]) -> tuple[float, float]:
        lo = hi = 0.0
        for m, c in self.terms.items():
            a, b = c, c
            for x, e in m:
                ia, ib = ipow(box[x], e)
                a, b = imul((a, b), (ia, ib))
            lo += a
            hi += b
        return lo, hi

    # serialisation
    def to_json(self) -> list:
        return [[c, [[v, e] for v, e in m]] for m, c in sorted(self.terms.items())]

    @staticmethod
    def from_json(data) -> "Polynomial":
        if isinstance(data, (int, float)):
            return Polynomial.const(float(data))
        return Polynomial({tuple(sorted((str(v), int(e)) for v, e in m)): float(c) for c, m in data})

    def __repr__(self):
        return f"Polynomial({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for m, c in sorted(self.terms.items(), key=lambda kv: (-mono_degree(kv[0]), kv[0])):
            if not m:
                parts.append(f"{c:.12g}")
            elif c == 1.0:
                parts.append(mono_str(m))
            elif c == -1.0:
                parts.append("-" + mono_str(m))
            else:
                parts.append(f"{c:.12g}*{mono_str(m)}")
        return " + ".join(parts).replace("+ -", "- ")


def ipow(iv: tuple[float, float], e: int) -> tuple[float, float]:
    a, b = iv
    if e == 0:
        return 1.0, 1.0
    if e == 1:
        return a, b
    pa, pb = a**e, b**e
    if e % 2 == 0:
        if a <= 0.0 <= b:
            return 0.0, max(pa, pb)
        return min(pa, pb), max(pa, pb)
    return pa, pb


def imul(x: tuple[float, float], y: tuple[float, float]) -> tuple[float, float]:
    cands = []
    for p in x:
        for q in y:
            if (p == 0.0 and math.isinf(q)) or (q == 0.0 and math.isinf(p)):
                cands.append(0.0)
            else:
                cands.append(p * q)
    return min(cands), max(cands)


class Box:
    """Axis-aligned box over named variables."""

    def __init__(self, bounds: Mapping[str, tuple[float, float]]):
        self.bounds: dict[str, tuple[float, float]] = {k: (float(a), float(b)) for k, (a, b) in bounds.items()}
        for k, (a, b) in self.bounds.items():
            if a > b:
                raise ValueError(f"empty interval for {k}: [{a}, {b}]")

    @property
    def variables(self) -> list[str]:
        return list(self.bounds)

    def __getitem__(self, k):
        return self.bounds[k]

    def __contains__(self, k):
        return k in self.bounds

    def __eq__(self, other):
        return isinstance(other, Box) and self.bounds == other.bounds

    def __repr__(self):
        return "Box(" + ", ".join(f"{k}=[{a:g},{b:g}]" for k, (a, b) in self.bounds.items()) + ")"

    def union(self, other: "Box") -> "Box":
        out = dict(self.bounds)
        for k, (a, b) in other.bounds.items():
            if k in out:
                out[k] = (min(out[k][0], a), max(out[k][1], b))
            else:
                out[k] = (a, b)
        return Box(out)

    def contains_box(self, other: "Box", tol: float = 1e-12) -> bool:
        return all(
            k in self.bounds and self.bounds[k][0] - tol <= a and b <= self.bounds[k][1] + tol
            for k, (a, b) in other.bounds.items()
        )

    def contains_point(self, point: Mapping[str, float], tol: float = 1e-12) -> bool:
        return all(a - tol <= point[k] <= b + tol for k, (a, b) in self.bounds.items())

    def midpoint(self) -> dict[str, float]:
        return {k: 0.5 * (a + b) for k, (a, b) in self.bounds.items()}

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.bounds.values()])) if self.bounds else 1.0

    def to_json(self):
        return {k: [a, b] for k, (a, b) in self.bounds.items()}

    @staticmethod
    def from_json(d) -> "Box":
        return Box({k: (v[0], v[1]) for k, v in d.items()})


class LinPoly:
    """Polynomial whose coefficients are affine in named unknowns.

    Stored as ``{unknown: Polynomial}`` with key ``None`` for the unknown-free part.
    """

    __slots__ = ("parts",)

    def __init__(self, parts: Mapping[str | None, Polynomial] | None = None):
        self.parts: dict[str | None, Polynomial] = {}
        if parts:
            for k, p in parts.items():
                if not p.is_zero():
                    self.parts[k] = p

    @staticmethod
    def from_poly(p: Polynomial) -> "LinPoly":
        return LinPoly({None: p})

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = LinPoly.from_poly(other)
        out = dict(self.parts)
        for k, p in other.parts.items():
            out[k] = out[k] + p if k in out else p
        return LinPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return LinPoly({k: -p for k, p in self.parts.items()})

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = LinPoly.from_poly(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, LinPoly):
            raise TypeError("product of two LinPoly objects is not affine in the unknowns")
        return LinPoly({k: p * other for k, p in self.parts.items()})

    __rmul__ = __mul__

    @property
    def unknowns(self) -> list[str]:
        return [k for k in self.parts if k is not None]

    def degree(self) -> int:
        return max((p.degree() for p in self.parts.values()), default=0)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for p in self.parts.values():
            out |= p.variables()
        return out

    def monomials(self) -> set[Monomial]:
        out: set[Monomial] = set()
        for p in self.parts.values():
            out |= set(p.terms)
        return out

    def instantiate(self, values: Mapping[str, float]) -> Polynomial:
        acc = self.parts.get(None, Polynomial())
        for k, p in self.parts.items():
            if k is not None:
                acc = acc + p * float(values.get(k, 0.0))
        return acc

    def subs(self, mapping: Mapping[str, Polynomial]) -> "LinPoly":
        return LinPoly({k: p.subs(mapping) for k, p in self.parts.items()})

    def __repr__(self):
        items = []
        for k, p in self.parts.items():
            items.append(f"({p})" if k is None else f"{k}*({p})")
        return "LinPoly(" + " + ".join(items) + ")"
