import math

import numpy as np
import pytest
from scipy import integrate, stats

from postbound.distributions import (Beta, Normal, PointMass, Uniform, dist_from_json, dist_to_json,
                                     make_distribution, moment, partial_moment)
from postbound.polynomial import Polynomial


@pytest.mark.parametrize("d,ref", [
    (Uniform(0, 1), stats.uniform(0, 1)),
    (Uniform(-1.6, 1.6), stats.uniform(-1.6, 3.2)),
    (Beta(2, 3), stats.beta(2, 3)),
    (Normal(1.1, 0.1), stats.norm(1.1, 0.1)),
])
def test_moments_match_scipy(d, ref):
    for k in range(6):
        assert moment(d, k) == pytest.approx(ref.moment(k), rel=1e-9, abs=1e-12)


def test_point_mass_moment():
    assert moment(PointMass(3.0), 2) == 9.0


def test_partial_moment_uniform():
    d = Uniform(0, 1)
    got = partial_moment(d, 2, 0.2, 0.7)
    assert got.constant_term() == pytest.approx((0.7**3 - 0.2**3) / 3)


def test_partial_moment_symbolic_limits():
    d = Beta(2, 2)
    t = Polynomial.var("t")
    p = partial_moment(d, 1, 0.0, t)
    val = integrate.quad(lambda r: r * stats.beta(2, 2).pdf(r), 0, 0.4)[0]
    assert p.eval({"t": 0.4}) == pytest.approx(val, rel=1e-10)


def test_pdf_values():
    # peak of N(1.1, 0.1) is 1/(0.1 sqrt(2 pi))
    assert Normal(1.1, 0.1).pdf(1.1) == pytest.approx(3.989422804, rel=1e-9)
    assert Normal(1.1, 0.1).max_pdf() == pytest.approx(3.989422804, rel=1e-9)
    assert Uniform(0, 2).pdf(0.5) == pytest.approx(0.5)


def test_sup_pdf_from_is_tail_sup():
    d = Normal(1.1, 5.0)
    v, lv = d.sup_pdf_from(5.0)
    assert v == pytest.approx(stats.norm(1.1, 5).pdf(5.0))
    assert lv == pytest.approx(math.log(v))
    assert d.sup_pdf_from(0.0)[0] == pytest.approx(d.max_pdf())


def test_sample_support():
    rng = np.random.default_rng(1)
    s = Uniform(-1, 2).sample(rng, 1000)
    assert s.min() >= -1 and s.max() <= 2


def test_make_and_json():
    d = make_distribution("normal", ["1.1", "5"])
    assert isinstance(d, Normal) and d.sigma == 5.0
    assert dist_from_json(dist_to_json(Beta(2, 5))).params == Beta(2, 5).params
    with pytest.raises(ValueError):
        make_distribution("cauchy", [0, 1])
