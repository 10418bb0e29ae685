import csv
import math

import numpy as np
import pytest

from postbound.frontend import compile_program
from postbound.oracle import NoEvidence, RNG_NAME, make_rng, simulate, simulate_points, tail_fit, write_csv


def test_loop_free_constant_score():
    e = simulate(compile_program("x := 0; score(0.5); return x"), n=1000)
    assert e.mean == 0.5 and e.stderr == 0.0 and e.terminated_fraction == 1.0


def test_pdf_weight_at_the_mode():
    src = ("dis := 1.1; pos := -1; while pos >= 0 do step := sample uniform(0, 1); pos := pos - step;"
           " dis := dis + step od; score(pdf(normal(1.1, 0.1), dis)); return pos")
    e = simulate(compile_program(src), n=10)
    assert e.mean == pytest.approx(3.9894, abs=1e-4)


def test_unbiased_on_loop_free():
    w = compile_program("x := sample uniform(0, 1); score(x); return x")
    misses = 0
    for seed in range(20):
        e = simulate(w, n=2000, seed=seed)
        misses += abs(e.mean - 0.5) > 4 * e.stderr
    assert misses == 0


def test_seed_determinism(bench):
    w = bench("pedestrian")
    a = simulate(w, n=3000, seed=11, max_steps=300)
    b = simulate(w, n=3000, seed=11, max_steps=300)
    c = simulate(w, n=3000, seed=12, max_steps=300)
    assert a.mean == b.mean and np.array_equal(a.weights, b.weights)
    assert a.mean != c.mean


def test_truncated_runs_are_counted(bench):
    w = bench("pedestrian")
    e = simulate(w, n=2000, seed=0, max_steps=5)
    assert e.truncated > 0
    assert e.terminated_fraction == pytest.approx(1 - e.truncated / e.n)
    assert np.count_nonzero(e.weights == 0) >= e.truncated


def test_geometric_exit_mean(bench):
    e = simulate(bench("geometric_exit"), n=10_000)
    assert e.mean == 2.0


def test_geometric_tail_fit(bench):
    e = simulate(bench("geometric_exit"), n=100_000, seed=3)
    c1, c2 = tail_fit(e)
    assert c2 == pytest.approx(math.log(2), rel=0.05)
    ns, p = e.tail()
    assert np.all(p <= c1 * np.exp(-c2 * ns) + 1e-12)


def test_degenerate_tail():
    e = simulate(compile_program("x := 0; while x <= 0 do x := 1 od; return x"), n=500)
    assert tail_fit(e) == (1.0, math.inf)


def test_birth_tail_beats_growth(bench):
    e = simulate(bench("birth"), n=20_000, seed=0)
    _, c2 = tail_fit(e)
    assert c2 > math.log(1.1)


def test_tail_fit_refuses_censored(bench):
    e = simulate(bench("pedestrian"), n=500, max_steps=10)
    with pytest.raises(NoEvidence):
        tail_fit(e)


def test_query_restriction(bench):
    w = bench("cav_ex_7")
    full = simulate(w, n=20_000, seed=4)
    q = simulate(w, n=20_000, seed=4, query=(-math.inf, 30))
    assert full.mean == pytest.approx(1.0)
    assert q.mean == pytest.approx(0.9938, abs=0.003)


def test_points_and_csv(bench, tmp_path):
    w = bench("geometric_exit")
    ests = simulate_points(w, [{"c": 1.0}, {"c": 0.0}], n=500)
    assert [e.mean for e in ests] == [2.0, 2.0]
    write_csv(str(tmp_path / "o.csv"), [{"c": 1.0}, {"c": 0.0}], ests)
    rows = list(csv.DictReader(open(tmp_path / "o.csv")))
    assert rows[0]["estimate"] == "2.0" and len(rows) == 2


def test_rng_is_named():
    assert "Philox" in RNG_NAME
    assert make_rng(1).random() == make_rng(1).random()
