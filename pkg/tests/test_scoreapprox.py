import numpy as np
import pytest

from postbound.distributions import Beta, Normal
from postbound.oracle import simulate
from postbound.scoreapprox import approximate_pdf, interpolate_piecewise, replace_score


def _scan(pw, f, n=200_000):
    x = np.linspace(*pw.domain, n)
    return float(np.max(np.abs(pw(x) - f(x))))


def test_polynomial_is_fit_exactly():
    pw = interpolate_piecewise(lambda x: 1 + x - 2 * x**3, (0, 2), n=3, m=2, df=lambda x: 1 - 6 * x**2)
    assert pw.epsilon <= 1e-12


def test_gamma_covers_scan():
    d = Normal(1.1, 0.5)
    pw = approximate_pdf(d, (0, 6), n=4, m=4, target_eps=None)
    assert _scan(pw, d.pdf) <= pw.epsilon


def test_target_refines_piece_count():
    d = Normal(1.1, 0.1)
    pw = approximate_pdf(d, (0, 6), n=6, m=4, target_eps=1e-5)
    assert pw.epsilon <= 1e-5 and len(pw.pieces) > 4
    assert _scan(pw, d.pdf) <= pw.epsilon


def test_wide_normal_small_pieces():
    d = Normal(0.0, 5.0)
    pw = approximate_pdf(d, (0, 11), n=8, m=4, target_eps=1e-5)
    assert pw.epsilon <= 1e-5 and len(pw.pieces) <= 40


def test_beta_pdf():
    d = Beta(2, 5)
    pw = approximate_pdf(d, (0, 1), n=6, m=2, target_eps=1e-4)
    assert _scan(pw, d.pdf) <= pw.epsilon <= 1e-4


def test_invalid_arguments():
    with pytest.raises(ValueError):
        interpolate_piecewise(np.sin, (0, 1), n=2, m=0)


def test_replace_score_splits_exit_only(bench):
    w = bench("pedestrian")
    d = Normal(1.1, 0.1)
    pw = approximate_pdf(d, (0, 6), n=6, m=8, target_eps=None)
    w2, eps = replace_score(w, {d: pw})
    assert eps == pw.epsilon
    loops = lambda s: [t for t in s.transitions if any(f.dest == "loop1" for f in t.forks)]
    assert len(loops(w2)) == len(loops(w))
    exits = [t for t in w2.transitions if t not in loops(w2)]
    assert len(exits) >= len(pw.pieces)


def test_replace_score_preserves_semantics_within_eps(bench):
    w = bench("pedestrian_ld")
    d = Normal(1.1, 5.0)
    # runs stop within 500 steps of length <= 1, so dis stays inside the domain
    pw = approximate_pdf(d, (0, 501), n=6, m=64, target_eps=1e-6)
    w2, eps = replace_score(w, {d: pw})
    a = simulate(w, {"start": 1.0, "pos": 1.0, "dis": 0.0, "step": 0.0}, n=4000, seed=5, max_steps=500)
    b = simulate(w2, {"start": 1.0, "pos": 1.0, "dis": 0.0, "step": 0.0}, n=4000, seed=5, max_steps=500)
    assert abs(a.mean - b.mean) <= eps + 1e-12
