import numpy as np
import pytest
from scipy import integrate

from postbound.cases import TemplateSet, apply_ewt, enumerate_cases
from postbound.polynomial import Box, Polynomial
from postbound.regions import Atom, Region

pos = Polynomial.var("pos")


def _cells(w, t, box, inv=(), degree=1):
    tpl = TemplateSet.build(w, list(box.variables), degree)
    return tpl, enumerate_cases(w, t, Region(box, list(inv)), tpl)


def test_pedestrian_loop_splits_at_one(bench):
    w = bench("pedestrian")
    _, cells = _cells(w, w.transitions[0], Box({"pos": (0, 5), "dis": (0, 5)}), [Atom(pos)])
    boxes = sorted(c.region.bounding_box()["pos"] for c in cells)
    assert boxes == [pytest.approx((0, 1)), pytest.approx((1, 5))]
    mixed = [c for c in cells if c.region.bounding_box()["pos"][1] <= 1 + 1e-9][0]
    assert {c.situation.kind for c in mixed.combos} == {"template", "terminal"}


def test_no_sampling_dependence_gives_single_cell(bench):
    w = bench("geometric_exit")
    _, cells = _cells(w, w.transitions[0], Box({"c": (1, 2)}))
    assert len(cells) == 1


def test_birth_splits_at_half(bench):
    w = bench("birth")
    _, cells = _cells(w, w.transitions[0], Box({"lambda": (0, 2), "time": (0, 10)}))
    cuts = sorted(c.region.bounding_box()["time"] for c in cells)
    assert cuts == [pytest.approx((0, 0.5)), pytest.approx((0.5, 10))]
    # sampled check: below the cut some wait values end the loop, above none do
    rng = np.random.default_rng(0)
    wait = rng.uniform(0, 0.5, 10_000)
    assert np.any(0.3 - wait < 0) and not np.any(3.0 - wait < 0)


def test_ewt_linear_template_inside(bench):
    w = bench("pedestrian")
    t = w.transitions[0]
    tpl, cells = _cells(w, t, Box({"pos": (0, 5), "dis": (0, 5)}), [Atom(pos)])
    inner = next(c for c in cells if c.region.bounding_box()["pos"][0] >= 1 - 1e-9)
    e = apply_ewt(tpl, w, t, inner, rescale_samples=False)
    dis = Polynomial.var("dis")
    assert e.parts["loop1:pos"].almost_equal(pos)
    assert e.parts["loop1:dis"].almost_equal(dis + 0.5)
    assert e.parts["loop1:1"].almost_equal(Polynomial.const(1.0))
    # against quadrature at random states
    rng = np.random.default_rng(4)
    a = {"loop1:pos": 0.3, "loop1:dis": -1.2, "loop1:1": 0.7}
    h = lambda p, d: a["loop1:pos"] * p + a["loop1:dis"] * d + a["loop1:1"]
    for _ in range(20):
        p0, d0 = rng.uniform(1, 5), rng.uniform(0, 5)
        q = integrate.quad(lambda s: 0.5 * h(p0 - s, d0 + s) + 0.5 * h(p0 + s, d0 + s), 0, 1)[0]
        assert e.instantiate(a).eval({"pos": p0, "dis": d0}) == pytest.approx(q, rel=1e-9)


def test_ewt_mixed_cell_matches_quadrature(bench):
    # exit into the terminal location contributes the exit score
    w = bench("geometric_exit")
    t = w.transitions[0]
    tpl, cells = _cells(w, t, Box({"c": (1, 2)}), degree=2)
    e = apply_ewt(tpl, w, t, cells[0])
    a = {u: float(i + 1) for i, u in enumerate(tpl.unknowns())}
    h = tpl.instantiate("loop1", a)
    for c in (1.0, 1.5, 2.0):
        # c := 0 goes to the exit (score 2), otherwise stay
        want = 0.5 * 2.0 + 0.5 * h.eval({"c": c})
        assert e.instantiate(a).eval({"c": c}) == pytest.approx(want)


def test_ewt_birth_has_lambda_product(bench):
    w = bench("birth")
    t = w.transitions[0]
    tpl, cells = _cells(w, t, Box({"lambda": (0, 2), "time": (0, 10)}))
    inner = next(c for c in cells if c.region.bounding_box()["time"][0] >= 0.5 - 1e-9)
    e = apply_ewt(tpl, w, t, inner, rescale_samples=False)
    lam = Polynomial.var("lambda")
    # constant template part: (1 - lambda/2) + 1.1 * lambda/2
    assert e.parts["loop1:1"].almost_equal(1 + 0.05 * lam)
