"""Distributions used by samplings, priors and pdf scores, with closed-form (partial) moments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .polynomial import Polynomial

_R = "__r"


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    name = "uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"uniform({self.a},{self.b}) needs a < b")

    @property
    def params(self):
        return (self.a, self.b)

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def density_poly(self) -> Polynomial:
        return Polynomial.const(1.0 / (self.b - self.a))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.a, self.b, size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def max_pdf(self) -> float:
        return 1.0 / (self.b - self.a)


@dataclass(frozen=True)
class Beta:
    alpha: float
    beta: float

    name = "beta"

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("beta parameters must be positive")

    @property
    def params(self):
        return (self.alpha, self.beta)

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def density_poly(self) -> Polynomial:
        a, b = self.alpha, self.beta
        if a != int(a) or b != int(b):
            raise ValueError("beta density is polynomial only for integer parameters")
        r = Polynomial.var(_R)
        return (r ** int(a - 1)) * ((1 - r) ** int(b - 1)) / special.beta(a, b)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.beta(self.alpha, self.beta, size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        xc = np.clip(x, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.exp((self.alpha - 1) * np.log(xc) + (self.beta - 1) * np.log1p(-xc) - special.betaln(self.alpha, self.beta))
        return np.where(inside, np.nan_to_num(v, nan=0.0, posinf=np.inf), 0.0)

    def max_pdf(self) -> float:
        a, b = self.alpha, self.beta
        if a < 1 or b < 1:
            return math.inf
        if a == 1 and b == 1:
            return 1.0
        mode = (a - 1) / (a + b - 2)
        return float(self.pdf(mode))


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma: float

    name = "normal"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("normal sigma must be positive")

    @property
    def params(self):
        return (self.mu, self.sigma)

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def density_poly(self) -> Polynomial:
        raise ValueError("normal density is not polynomial")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mu, self.sigma, size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def log_pdf(self, x: float) -> float:
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma * math.sqrt(2 * math.pi))

    def max_pdf(self) -> float:
        return 1.0 / (self.sigma * math.sqrt(2 * math.pi))

    def sup_pdf_from(self, t: float) -> tuple[float, float]:
        """sup of the pdf on [t, inf) as (value, log value)."""
        x = max(t, self.mu)
        lv = self.log_pdf(x)
        return math.exp(lv), lv


@dataclass(frozen=True)
class PointMass:
    c: float

    name = "dirac"

    @property
    def params(self):
        return (self.c,)

    @property
    def support(self) -> tuple[float, float]:
        return (self.c, self.c)

    def density_poly(self) -> Polynomial:
        raise ValueError("point mass has no density")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.c))

    def pdf(self, x):
        raise ValueError("point mass has no density")


Distribution = Uniform | Beta | Normal | PointMass

_BY_NAME = {"uniform": Uniform, "beta": Beta, "normal": Normal, "dirac": PointMass}


def make_distribution(name: str, params) -> Distribution:
    if name not in _BY_NAME:
        raise ValueError(f"unknown distribution '{name}'")
    return _BY_NAME[name](*[float(p) for p in params])


def dist_to_json(d: Distribution) -> dict:
    return {"dist": d.name, "params": list(d.params)}


def dist_from_json(data: dict) -> Distribution:
    return make_distribution(data["dist"], data["params"])


def moment(dist: Distribution, k: int) -> float:
    """E[X^k]."""
    if isinstance(dist, PointMass):
        return float(dist.c) ** k
    if isinstance(dist, Uniform):
        a, b = dist.a, dist.b
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
    if isinstance(dist, Beta):
        a, b = dist.alpha, dist.beta
        out = 1.0
        for i in range(k):
            out *= (a + i) / (a + b + i)
        return out
    if isinstance(dist, Normal):
        m0, m1 = 1.0, dist.mu
        if k == 0:
            return m0
        for j in range(2, k + 1):
            m0, m1 = m1, dist.mu * m1 + (j - 1) * dist.sigma**2 * m0
        return m1
    raise TypeError(dist)


def _antiderivative(dist: Distribution, k: int, shift: float = 0.0, scale: float = 1.0) -> Polynomial:
    """Antiderivative in ``__r`` of ``(shift + scale*r)^k * density(shift + scale*r) * scale``."""
    x = Polynomial.const(shift) + Polynomial.var(_R) * scale
    integrand = (x**k) * dist.density_poly().subs({_R: x}) * scale
    t: dict = {}
    for m, c in integrand.terms.items():
        e = dict(m).get(_R, 0)
        t[((_R, e + 1),)] = c / (e + 1)
    return Polynomial(t)


def partial_moment(
    dist: Distribution,
    k: int,
    lower: Polynomial | float,
    upper: Polynomial | float,
) -> Polynomial:
    """Integral of ``r^k`` against the density over ``[lower, upper]``.

    The limits are polynomials in program variables and must lie inside the support
    wherever the result is used.
    """
    anti = _antiderivative(dist, k)
    return anti.subs({_R: Polynomial.lift(upper)}) - anti.subs({_R: Polynomial.lift(lower)})


def partial_moment_scaled(
    dist: Distribution,
    k: int,
    shift: float,
    scale: float,
    lower: Polynomial,
    upper: Polynomial,
) -> Polynomial:
    """Integral of ``rho^k`` over ``rho`` in ``[lower, upper]`` where ``r = shift + scale*rho``
    is distributed as ``dist``."""
    x = Polynomial.const(shift) + Polynomial.var(_R) * scale
    integrand = (Polynomial.var(_R) ** k) * dist.density_poly().subs({_R: x}) * scale
    t: dict = {}
    for m, c in integrand.terms.items():
        e = dict(m).get(_R, 0)
        t[((_R, e + 1),)] = c / (e + 1)
    anti = Polynomial(t)
    return anti.subs({_R: upper}) - anti.subs({_R: lower})
