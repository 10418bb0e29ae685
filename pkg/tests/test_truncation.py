import math

import numpy as np
import pytest

from postbound.oracle import simulate, simulate_points, tail_fit
from postbound.polynomial import Box, Polynomial
from postbound.truncation import (SINK, TruncationContext, derive_trunc_approx, extend_range,
                                  ost_upper_constant, outside_pieces, truncate)
from postbound.wpts import classify

PED_BOX = Box({"pos": (0, 5), "dis": (0, 5)})


def test_extend_pedestrian(bench):
    assert extend_range(bench("pedestrian"), PED_BOX) == Box({"pos": (-1, 6), "dis": (0, 6)})


def test_extend_identity_updates(bench):
    b = Box({"c": (0, 1)})
    assert extend_range(bench("geometric_exit"), b) == b


def test_extend_birth(bench):
    ext = extend_range(bench("birth"), Box({"lambda": (0, 2), "time": (0, 10)}))
    assert ext["time"] == (-0.5, 10) and ext["lambda"] == (0, 2)


def test_outside_pieces_partition_the_shell():
    inner, outer = Box({"x": (0, 1), "y": (0, 1)}), Box({"x": (-1, 2), "y": (0, 3)})
    pieces = outside_pieces(inner, outer)
    vol = sum(b.volume() for b, _ in pieces)
    assert vol == pytest.approx(outer.volume() - inner.volume())
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = {"x": rng.uniform(-1, 2), "y": rng.uniform(0, 3)}
        hits = [b for b, atoms in pieces if b.contains_point(p) and all(a.holds(p) for a in atoms)]
        assert len(hits) == (0 if inner.contains_point(p) else 1)


def test_pedestrian_tail_bound(bench):
    w = bench("pedestrian")
    ext = extend_range(w, PED_BOX)
    up = derive_trunc_approx(w, PED_BOX, ext, classify(w), "upper")
    assert up.kind == "monotone"
    far = Box({"pos": (0, 5), "dis": (5, 6)})
    lg = min(m["log10_bound"] for m in up.describe_on(far)["monotone"])
    assert 10 ** (lg + 330) == pytest.approx(2.1, abs=0.05)
    # below the box in pos the walk may still score near the peak
    near = Box({"pos": (-1, 0), "dis": (0, 6)})
    assert up.bound_on(near).constant_term() == pytest.approx(3.98942, rel=1e-5)


def test_lower_is_zero(bench):
    w = bench("birth")
    lo = derive_trunc_approx(w, PED_BOX, PED_BOX, classify(w), "lower")
    assert lo.kind == "const" and lo.value == 0.0


def test_ost_constant_geometric_series():
    c1, c2, c3 = 1.0, math.log(2), math.log(1.1)
    val, n_star = ost_upper_constant(c1, c2, c3)
    q = math.exp(c3 - c2)
    assert n_star == 1
    assert val == pytest.approx(1 + q / (1 - q))
    with pytest.raises(ValueError):
        ost_upper_constant(1.0, 0.1, 0.2)


def test_ost_constant_dominates_oracle(bench):
    # tail constants fitted at the slowest corner bound the expected weight at other states
    w = bench("birth")
    state = lambda lam, t: {"lambda": lam, "time": t, "amount": 0.0, "wait": 0.0, "birth": 0.0}
    c1, c2 = tail_fit(simulate(w, state(2.0, 10.5), n=20_000, seed=1))
    val, _ = ost_upper_constant(c1, c2, math.log(1.1))
    pts = [state(lam, t) for lam in np.linspace(0, 2, 5) for t in (10.0, 10.2, 10.4, 10.5)]
    for est in simulate_points(w, pts, n=2000, seed=2):
        assert est.mean + 3 * est.stderr < val


def test_truncate_structure(bench):
    w = bench("pedestrian")
    tw = truncate(w, PED_BOX, derive_trunc_approx(w, PED_BOX, extend_range(w, PED_BOX), classify(w), "upper"))
    assert SINK in tw.locations and tw.sink_loc == SINK
    outs = [t for t in tw.transitions if t.region == "out"]
    # exit forks keep their destination and score
    for t in outs:
        for f, g in zip(t.forks, w.transitions[t.origin].forks):
            if g.dest == w.out_loc:
                assert f.dest == w.out_loc and f.weight is g.weight
            else:
                assert f.dest == SINK


def test_truncate_full_box_is_identical(bench):
    w = bench("geometric_exit")
    tw = truncate(w, Box({"c": (0, 1)}))
    a = simulate(w, n=5000, seed=3)
    b = simulate(tw, n=5000, seed=3)
    assert a.mean == b.mean == 2.0


def test_context_requires_approx(bench):
    ctx = TruncationContext(bench("pedestrian"), PED_BOX, PED_BOX)
    with pytest.raises(ValueError):
        ctx.approx("upper")
