import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from postbound.cases import Frame, TemplateSet
from postbound.certificates import (ConstraintSet, Obligation, Scaling, build_constraints, encode,
                                    encode_handelman, encode_putinar, synthesize_bound)
from postbound.conic import solve, verify_posthoc
from postbound.frontend import compile_program
from postbound.polynomial import Box, LinPoly, Polynomial
from postbound.regions import Region
from postbound.truncation import TruncationContext, derive_trunc_approx, extend_range
from postbound.wpts import classify

z = Polynomial.var("z")


def _single(body: LinPoly, unknowns=("a",)) -> ConstraintSet:
    """One obligation ``body >= 0`` on z in [0, 1] with unknowns as template coefficients."""
    tpl = TemplateSet(["z"], 0, {"L": [()]})
    tpl.unknown = lambda loc, m: "a"
    ob = Obligation("g", "D1", "L", Region(Box({"z": (0, 1)})), body, Frame.identity(["z"]))
    return ConstraintSet("lower", tpl, [ob], None, None)


def _max_a(enc):
    sol = solve(enc.program, np.array([1.0]), "max")
    assert sol.status == "optimal"
    return sol.objective


def test_handelman_certifies_linear():
    # 5z - a >= 0 on [0,1]: best a = 0 at z = 0
    cs = _single(LinPoly({None: 5 * z, "a": Polynomial.const(-1.0)}))
    assert _max_a(encode_handelman(cs, degree=1)) == pytest.approx(0.0, abs=1e-9)


def test_handelman_matches_bruteforce_monoid():
    # g = 1 + x^2 on [-1, 1], x = 2z - 1; maximise a with g - a in the degree-2 cone
    g = 1 + (2 * z - 1) ** 2
    cs = _single(LinPoly({None: g, "a": Polynomial.const(-1.0)}))
    ours = _max_a(encode_handelman(cs, degree=2))
    # independent LP over the six products 1, z, 1-z, z^2, z(1-z), (1-z)^2
    gens = [Polynomial.const(1.0), z, 1 - z]
    monoid = [gens[i] * gens[j] for i, j in itertools.combinations_with_replacement(range(3), 2)]
    assert len(monoid) == 6
    coeffs = lambda p: [p.coefficient(m) for m in [(), (("z", 1),), (("z", 2),)]]
    # variables: a, lambda_1..6 ; g - a = sum lambda_k m_k
    A = np.zeros((3, 7))
    A[0, 0] = 1.0
    for k, m in enumerate(monoid):
        A[:, k + 1] = coeffs(m)
    res = linprog(np.r_[-1.0, np.zeros(6)], A_eq=A, b_eq=coeffs(g), bounds=[(None, None)] + [(0, None)] * 6)
    assert ours == pytest.approx(-res.fun, abs=1e-7)
    assert ours <= 1.0 + 1e-9


def test_putinar_is_tight_on_sos():
    g = 1 + (2 * z - 1) ** 2
    cs = _single(LinPoly({None: g, "a": Polynomial.const(-1.0)}))
    assert _max_a(encode_putinar(cs, degree=2)) == pytest.approx(1.0, abs=1e-5)


def _ped_constant(score="2"):
    src = (
        "start := sample uniform(0, 3); pos := start; dis := 0;"
        "while pos >= 0 do step := sample uniform(0, 1);"
        "if prob(0.5) then pos := pos - step else pos := pos + step fi; dis := dis + step od;"
        f"score({score}); return start"
    )
    w = compile_program(src)
    box = Box({"pos": (0, 5), "dis": (0, 5)})
    ext = extend_range(w, box)
    ctx = TruncationContext(w, box, ext)
    cls = classify(w)
    ctx.upper = derive_trunc_approx(w, box, ext, cls, "upper")
    ctx.lower = derive_trunc_approx(w, box, ext, cls, "lower")
    return w, ctx, ext


@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_pedestrian_degree_one_has_four_obligations(direction):
    w, ctx, ext = _ped_constant()
    tpl = TemplateSet.build(w, ["pos", "dis"], 1)
    cs = build_constraints(ctx, w, tpl, direction, Scaling.of_box(ext))
    kinds = sorted(o.kind.rstrip("'") for o in cs.obligations)
    assert kinds == ["D1", "D1", "D2", "D2"]


def test_pedestrian_constant_score_bounds_and_verification():
    w, ctx, ext = _ped_constant()
    tpl = TemplateSet.build(w, ["pos", "dis"], 2)
    vals = {}
    for d in ("upper", "lower"):
        cs = build_constraints(ctx, w, tpl, d, Scaling.of_box(ext))
        (r,) = synthesize_bound(cs, encode(cs, "handelman"), [{"pos": 0.05, "dis": 0.0}])
        assert r.status == "optimal"
        assert verify_posthoc(cs, r.coefficients, n=2000).ok
        vals[d] = r.value
    # the walk stops almost surely, so the expected weight is 2
    assert vals["lower"] <= 2.0 + 1e-6 <= vals["upper"] + 2e-6
    assert vals["lower"] > 1.0


def test_perturbed_certificate_is_caught():
    w, ctx, ext = _ped_constant()
    tpl = TemplateSet.build(w, ["pos", "dis"], 1)
    cs = build_constraints(ctx, w, tpl, "upper", Scaling.of_box(ext))
    (r,) = synthesize_bound(cs, encode(cs, "handelman"), [{"pos": 0.05, "dis": 0.0}])
    assert verify_posthoc(cs, r.coefficients, n=2000).ok
    bad = dict(r.coefficients)
    bad["loop1:1"] -= 1e-3
    rep = verify_posthoc(cs, bad, n=2000)
    assert not rep.ok and rep.max_violation > 0


def test_loop_free_needs_no_templates():
    w = compile_program("x := 0; score(0.5); return x")
    assert w.template_locations() == []


def test_scaling_roundtrip():
    sc = Scaling.of_box(Box({"x": (-1, 3)}))
    y = sc.point_to_y({"x": 1.0})
    assert y["x"] == pytest.approx(0.5)
    assert Polynomial.var("x").subs(sc.x_of_y()).eval(y) == pytest.approx(1.0)
