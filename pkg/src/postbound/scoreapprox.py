"""Certified piecewise-polynomial approximation of pdf scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .distributions import Beta, Normal, Uniform
from .polynomial import Polynomial
from .regions import Atom
from .wpts import Guard, PieceFactor, Transition, Weight, Wpts


@dataclass
class Piece:
    lo: float
    hi: float
    coeffs: np.ndarray  # in u = (x - center) / half
    gamma: float

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def __call__(self, x):
        u = (np.asarray(x, dtype=float) - self.center) / self.half
        return np.polynomial.polynomial.polyval(u, self.coeffs)

    def deriv(self, x):
        u = (np.asarray(x, dtype=float) - self.center) / self.half
        return np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyder(self.coeffs)) / self.half

    def poly(self, var: str) -> Polynomial:
        """The piece as a polynomial in ``var`` (global monomial basis)."""
        return PieceFactor(tuple(self.coeffs), self.center, self.half, Polynomial.var(var)).compose(Polynomial.var(var))


@dataclass
class PiecewisePoly:
    pieces: list[Piece]
    degree: int
    samples_per_piece: int
    meta: dict = field(default_factory=dict)

    @property
    def domain(self) -> tuple[float, float]:
        return self.pieces[0].lo, self.pieces[-1].hi

    @property
    def epsilon(self) -> float:
        return max(p.gamma for p in self.pieces)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i, p in enumerate(self.pieces):
            last = i == len(self.pieces) - 1
            mask = (x >= p.lo) & ((x <= p.hi) if last else (x < p.hi))
            out[mask] = p(x[mask])
        return out

    def to_json(self):
        return {
            "degree": self.degree,
            "samples_per_piece": self.samples_per_piece,
            "epsilon": self.epsilon,
            "pieces": [{"lo": p.lo, "hi": p.hi, "coeffs": list(map(float, p.coeffs)), "gamma": p.gamma} for p in self.pieces],
        }


def pdf_function(dist) -> tuple[Callable, Callable]:
    """(f, f') for the pdf of a supported distribution."""
    if isinstance(dist, Normal):
        f = dist.pdf

        def df(x):
            x = np.asarray(x, dtype=float)
            return -(x - dist.mu) / dist.sigma**2 * dist.pdf(x)

        return f, df
    if isinstance(dist, (Beta, Uniform)):
        f = dist.pdf
        lo, hi = dist.support

        def df(x, h=1e-6):
            # keep the stencil inside the support so the jump at its ends is not sampled
            x = np.asarray(x, dtype=float)
            a = np.clip(x - h, lo, hi)
            b = np.clip(x + h, lo, hi)
            return (f(b) - f(a)) / np.maximum(b - a, 1e-300)

        return f, df
    raise ValueError(f"no pdf for {dist}")


def _fit_piece(f: Callable, df: Callable, lo: float, hi: float, n: int, k: int, grad_samples: int) -> Piece:
    c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
    xs = np.linspace(lo, hi, k)
    coeffs = np.polynomial.polynomial.polyfit((xs - c) / h, f(xs), n)
    piece = Piece(float(lo), float(hi), coeffs, 0.0)
    r0 = float(np.max(np.abs(f(xs) - piece(xs))))
    xg = np.linspace(lo, hi, grad_samples)
    beta = float(np.max(np.abs(df(xg) - piece.deriv(xg))))
    piece.gamma = beta * (hi - lo) / (k - 1) + r0
    return piece


def fit_pieces(f: Callable, df: Callable, domain: tuple[float, float], n: int, m: int,
               k: int | None = None, grad_samples: int = 10_000) -> PiecewisePoly:
    k = k or 4 * (n + 1)
    edges = np.linspace(domain[0], domain[1], m + 1)
    pieces = [_fit_piece(f, df, lo, hi, n, k, grad_samples) for lo, hi in zip(edges[:-1], edges[1:])]
    return PiecewisePoly(pieces, n, k)


def interpolate_piecewise(f: Callable, domain: tuple[float, float], n: int, m: int,
                          k: int | None = None, df: Callable | None = None,
                          target_eps: float | None = None, max_pieces: int = 1024,
                          grad_samples: int = 10_000) -> PiecewisePoly:
    """Least-squares piecewise fit with a per-piece error radius.

    The radius of piece i is ``beta_i * s + r0_i`` where ``s`` is the sample spacing,
    ``r0_i`` the largest residual at the samples and ``beta_i`` the largest sampled
    slope of the residual.  With ``target_eps`` every piece whose radius misses the
    target is halved until all meet it or ``max_pieces`` is reached.
    """
    if n < 0 or m < 1:
        raise ValueError("need degree >= 0 and at least one piece")
    if df is None:
        def df(x, h=1e-6):
            x = np.asarray(x, dtype=float)
            return (f(x + h) - f(x - h)) / (2 * h)
    pw = fit_pieces(f, df, domain, n, m, k, grad_samples)
    k = pw.samples_per_piece
    while target_eps is not None and pw.epsilon > target_eps:
        bad = [p for p in pw.pieces if p.gamma > target_eps]
        if len(pw.pieces) + len(bad) > max_pieces:
            break
        pieces = []
        for p in pw.pieces:
            if p.gamma <= target_eps:
                pieces.append(p)
                continue
            mid = p.center
            pieces.append(_fit_piece(f, df, p.lo, mid, n, k, grad_samples))
            pieces.append(_fit_piece(f, df, mid, p.hi, n, k, grad_samples))
        pw = PiecewisePoly(pieces, n, k)
    pw.meta["target_eps"] = target_eps
    return pw


def approximate_pdf(dist, domain: tuple[float, float], n: int = 6, m: int = 4,
                    target_eps: float | None = 1e-4, max_pieces: int = 1024) -> PiecewisePoly:
    f, df = pdf_function(dist)
    return interpolate_piecewise(f, domain, n, m, df=df, target_eps=target_eps, max_pieces=max_pieces)


def replace_score(wpts: Wpts, approximations: dict, outside_bound: float | None = None) -> tuple[Wpts, float]:
    """Replace pdf scores by polynomial pieces, splitting the carrying transitions.

    ``approximations`` maps the pdf's distribution to its ``PiecewisePoly``.  The argument
    of each pdf score must be a program variable left unchanged by its fork.  Values
    outside the approximation domain get the weight interval ``[0, sup pdf]``.
    Returns the new system and the largest error radius.
    """
    out = wpts.copy()
    new_ts: list[Transition] = []
    eps = 0.0
    for t in out.transitions:
        pdf_forks = [f for f in t.forks if f.weight.pdf is not None]
        if not pdf_forks:
            new_ts.append(t)
            continue
        args = {str(f.weight.pdf.arg) for f in pdf_forks}
        if len(args) != 1:
            raise ValueError("all pdf scores of a transition must share the argument")
        arg = pdf_forks[0].weight.pdf.arg
        if len(arg.variables()) != 1 or not arg.is_affine() or arg != Polynomial.var(next(iter(arg.variables()))):
            raise ValueError("pdf score argument must be a program variable")
        x = next(iter(arg.variables()))
        if x not in wpts.program_vars:
            raise ValueError("pdf score argument depends on a sampled value")
        dists = {f.weight.pdf.dist for f in pdf_forks}
        if len(dists) != 1:
            raise ValueError("one pdf per transition is supported")
        dist = next(iter(dists))
        pw = approximations[dist]
        eps = max(eps, pw.epsilon)
        xv = Polynomial.var(x)
        npieces = len(pw.pieces)
        for i, p in enumerate(pw.pieces):
            atoms = [Atom(xv - p.lo), Atom(Polynomial.const(p.hi) - xv, strict=(i < npieces - 1))]
            g = t.guard.and_(Guard.of([atoms]))
            if g.is_false():
                continue
            forks = []
            for f in t.forks:
                if f.weight.pdf is None:
                    forks.append(f)
                    continue
                fac = f.weight.factor
                scale = abs(fac.constant_term()) if fac.is_constant() else math.inf
                w = Weight(fac, None, PieceFactor(tuple(map(float, p.coeffs)), p.center, p.half, xv),
                           f.weight.residual + p.gamma * scale)
                forks.append(type(f)(f.dest, f.prob, dict(f.update), w))
            new_ts.append(Transition(t.source, g, forks, t.origin, t.region))
        sup = outside_bound if outside_bound is not None else dist.max_pdf()
        lo, hi = pw.domain
        for atom in (Atom(Polynomial.const(lo) - xv, strict=True), Atom(xv - hi, strict=True)):
            g = t.guard.and_(Guard.atom(atom))
            if g.is_false():
                continue
            forks = []
            for f in t.forks:
                if f.weight.pdf is None:
                    forks.append(f)
                    continue
                fac = f.weight.factor
                if not fac.is_constant():
                    raise ValueError("non-constant factor on a pdf score")
                c = fac.constant_term()
                w = Weight(Polynomial.const(0.5 * sup * c), residual=f.weight.residual + 0.5 * sup * abs(c))
                forks.append(type(f)(f.dest, f.prob, dict(f.update), w))
            new_ts.append(Transition(t.source, g, forks, t.origin, t.region))
    out.transitions = new_ts
    out.meta = dict(out.meta, score_epsilon=eps)
    return out, eps
