import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postbound.polynomial import Box, LinPoly, Polynomial, imul, ipow, monomials_upto

x, y = Polynomial.var("x"), Polynomial.var("y")

coef = st.floats(-5, 5, allow_nan=False).map(lambda c: round(c, 3))


@st.composite
def polys(draw):
    terms = draw(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), coef), max_size=5))
    p = Polynomial()
    for a, b, c in terms:
        p = p + c * x**a * y**b
    return p


points = st.fixed_dictionaries({"x": st.floats(-2, 2), "y": st.floats(-2, 2)})


@given(polys(), polys(), points)
@settings(max_examples=60, deadline=None)
def test_ring_ops_commute_with_eval(p, q, pt):
    assert (p + q).eval(pt) == pytest.approx(p.eval(pt) + q.eval(pt), abs=1e-9)
    assert (p * q).eval(pt) == pytest.approx(p.eval(pt) * q.eval(pt), rel=1e-9, abs=1e-9)


@given(polys(), polys())
@settings(max_examples=40, deadline=None)
def test_subs_is_composition(p, q):
    r = p.subs({"x": q})
    for pt in ({"x": 0.3, "y": -1.1}, {"x": -0.7, "y": 0.4}):
        assert r.eval(pt) == pytest.approx(p.eval({"x": q.eval(pt), "y": pt["y"]}), rel=1e-8, abs=1e-8)


@given(polys(), st.floats(-1, 1), st.floats(0, 1), st.floats(-1, 0), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_interval_encloses_samples(p, a, w1, b, w2):
    box = {"x": (a, a + w1), "y": (b, b + w2)}
    lo, hi = p.interval(box)
    rng = np.random.default_rng(0)
    env = {"x": rng.uniform(*box["x"], 200), "y": rng.uniform(*box["y"], 200)}
    v = p.eval_many(env, 200)
    assert np.all(v >= lo - 1e-9) and np.all(v <= hi + 1e-9)


def test_zero_coefficients_dropped():
    assert (x - x).is_zero()
    assert (x + 1 - 1).terms == x.terms


def test_degree_and_vars():
    p = 3 * x**2 * y + y - 2
    assert p.degree() == 3
    assert p.degree_in("y") == 1
    assert p.variables() == {"x", "y"}
    assert p.constant_term() == -2


def test_diff():
    p = x**3 * y + 2 * x
    assert p.diff("x") == 3 * x**2 * y + 2


def test_pow_rejects_negative():
    with pytest.raises(ValueError):
        x ** -1


def test_json_roundtrip():
    p = 0.5 * x**2 - y + 7
    assert Polynomial.from_json(p.to_json()) == p


def test_monomials_count():
    # C(n+d, d)
    assert len(monomials_upto(["a", "b", "c"], 4)) == math.comb(7, 4)
    assert len(set(monomials_upto(["a", "b"], 3))) == 10


def test_interval_helpers():
    assert ipow((-2, 1), 2) == (0.0, 4.0)
    assert ipow((-2, -1), 3) == (-8, -1)
    assert imul((0.0, 1.0), (-math.inf, 2.0)) == (-math.inf, 2.0)


def test_box():
    b = Box({"x": (0, 2), "y": (1, 3)})
    assert b.volume() == 4
    assert b.midpoint() == {"x": 1, "y": 2}
    assert b.contains_box(Box({"x": (0.5, 1)}))
    assert not b.contains_point({"x": 3, "y": 2})
    assert Box.from_json(b.to_json()) == b
    with pytest.raises(ValueError):
        Box({"x": (1, 0)})


def test_linpoly_affine_in_unknowns():
    lp = LinPoly({"a": x, "b": Polynomial.const(2.0), None: y})
    assert set(lp.unknowns) == {"a", "b"}
    inst = lp.instantiate({"a": 3.0, "b": -1.0})
    assert inst == 3 * x - 2 + y
    with pytest.raises(TypeError):
        lp * lp
