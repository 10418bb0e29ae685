import pytest

from postbound.frontend import (FrontendError, ParseError, ScorePdf, Sample, While, compile_program, lower,
                                parse)
from postbound.polynomial import Polynomial
from conftest import BENCH


def _walk(s):
    yield s
    for attr in ("stmts", "body", "then", "orelse"):
        sub = getattr(s, attr, None)
        if sub is None:
            continue
        for c in (sub if isinstance(sub, list) else [sub]):
            yield from _walk(c)


def test_pedestrian_ast_shape():
    ast = parse((BENCH / "pedestrian.bppl").read_text())
    nodes = list(_walk(ast))
    assert sum(isinstance(n, While) for n in nodes) == 1
    assert sum(isinstance(n, Sample) for n in nodes) == 2
    scores = [n for n in nodes if isinstance(n, ScorePdf)]
    assert len(scores) == 1 and scores[0].var == "dis"


def test_pedestrian_lowering(bench):
    w = bench("pedestrian")
    assert w.locations == ["loop1", "out"]
    loop, exit_ = w.transitions
    assert [f.prob for f in loop.forks] == [Polynomial.const(0.5)] * 2
    assert exit_.forks[0].dest == "out"
    assert exit_.forks[0].weight.pdf is not None
    assert w.ret_var == "start"


def test_birth_lowering_has_inloop_weight(bench):
    w = bench("birth")
    weights = [f.weight.factor.constant_term() for t in w.loop_transitions() for f in t.forks]
    assert 1.1 in weights
    lam = Polynomial.var("lambda")
    assert any(f.prob.almost_equal(0.5 * lam) for t in w.loop_transitions() for f in t.forks)


def test_identity_program():
    w = compile_program("x := 1; return x")
    assert len(w.transitions) == 1
    (t,) = w.transitions
    assert t.source == w.init_loc and t.forks[0].dest == w.out_loc
    assert t.forks[0].weight.is_one()


def test_loop_free_score():
    w = compile_program("x := 0; score(0.5); return x")
    assert w.transitions[0].forks[0].weight.factor == Polynomial.const(0.5)


def test_use_before_assign():
    with pytest.raises(FrontendError, match="before assignment"):
        compile_program("skip; return x")


@pytest.mark.parametrize("src,msg", [
    ("x := ;", "expected expression"),
    ("x := 0; while x < 1 do while x < 2 do x := x + 1 od od; return x", "nested loops"),
    ("x := 1; score(pdf(foo(1), x)); return x", "unknown distribution"),
])
def test_errors_have_positions(src, msg):
    with pytest.raises(FrontendError) as ei:
        compile_program(src)
    assert msg in str(ei.value)
    assert ei.value.line >= 1 and ei.value.col >= 1


def test_parse_error_lists_expected():
    with pytest.raises(ParseError) as ei:
        compile_program("x := 0; return 0")
    assert "identifier" in ei.value.expected


def test_lowering_map_points_to_source():
    w, lm = lower(parse((BENCH / "pedestrian.bppl").read_text()))
    assert set(lm.locations) == set(w.locations)
    assert any(v[0] == "step" for v in lm.sample_sites.values())


@pytest.mark.parametrize("name", ["trivial", "geometric_exit", "nonintegrable", "pedestrian", "pedestrian_ld",
                                  "pedestrian_beta", "birth", "cav_ex_7"])
def test_benchmarks_compile_and_roundtrip(bench, name):
    from postbound.wpts import Wpts
    w = bench(name)
    w2 = Wpts.loads(w.dumps())
    assert w2.dumps() == w.dumps()
