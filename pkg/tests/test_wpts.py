import math

import pytest

from postbound.distributions import Uniform
from postbound.frontend import compile_program
from postbound.polynomial import Box, Polynomial
from postbound.regions import Atom
from postbound.wpts import Fork, Guard, Transition, Weight, classify, validate

pos = Polynomial.var("pos")


def test_pedestrian_valid(bench):
    assert validate(bench("pedestrian")) == []


def test_overlapping_guards_reported(bench):
    w = bench("pedestrian")
    t = w.transitions[0]
    w.transitions.append(Transition(t.source, Guard.atom(Atom(pos + 1)), t.forks))
    codes = {d.code for d in validate(w)}
    assert "determinism" in codes
    d = next(d for d in validate(w) if d.code == "determinism")
    assert d.witness is not None and d.witness["pos"] >= -1


def test_probability_sum_reported(bench):
    w = bench("pedestrian")
    t = w.transitions[0]
    t.forks[1] = Fork(t.forks[1].dest, Polynomial.const(0.4), t.forks[1].update, t.forks[1].weight)
    assert "prob-sum" in {d.code for d in validate(w)}


def test_classify_pedestrian(bench):
    c = classify(bench("pedestrian"))
    assert c.kind == "score-at-end"
    assert c.score_bound == pytest.approx(3.98942280, rel=1e-8)


def test_classify_birth(bench):
    c = classify(bench("birth"))
    assert c.kind == "score-recursive"
    assert c.step_weight_bound == pytest.approx(1.1)
    assert c.c3 == pytest.approx(math.log(1.1))
    assert c.update_bound == pytest.approx(0.5)


def test_classify_loop_free():
    c = classify(compile_program("x := 0; score(0.5); return x"))
    assert c.kind == "score-at-end" and c.score_bound == 0.5


def test_classify_geometric(bench):
    c = classify(bench("geometric_exit"))
    assert c.exit_probability == pytest.approx(0.5)


def test_guard_algebra():
    g = Guard.atom(Atom(pos))
    assert g.holds({"pos": 0.0})
    n = g.negate()
    assert not n.holds({"pos": 0.0}) and n.holds({"pos": -0.1})
    assert g.and_(n).is_false() or not any(g.and_(n).holds({"pos": v}) for v in (-1, 0, 1))
    assert Guard.true().is_true()
    assert Guard.from_json(g.to_json()).holds({"pos": 2})


def test_weight_bounds():
    w = Weight(Polynomial.const(2.0)).times(Weight(Polynomial.const(0.5)))
    assert w.upper_bound({}) == pytest.approx(1.0)
    assert Weight().is_one()
    assert Weight.from_json(Weight.const(3.0).to_json()).upper_bound({}) == 3.0
