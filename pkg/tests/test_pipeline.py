import json
import math

import pytest

from postbound.frontend import compile_program
from postbound.pipeline import (AnalysisConfig, OstPrereq, OstRejected, Query, analyze, check_ost_prereqs,
                                integrate_prior, npd_interval, partition_init, restrict_query)
from postbound.polynomial import Box, Polynomial
from postbound.wpts import classify


def test_query_parse():
    q = Query.parse("Q1@count=:30")
    assert (q.var, q.lo, q.hi, q.name) == ("count", -math.inf, 30.0, "Q1")
    assert Query.parse("x=0.5:").hi == math.inf
    assert Query(None, -math.inf, math.inf).is_full()


def test_config_roundtrip_and_unknown_keys():
    cfg = AnalysisConfig(degree=3, bounds={"x": (0, 1)}, queries=[Query("x", 0, 1, "a")])
    back = AnalysisConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back.to_json() == cfg.to_json()
    with pytest.raises(ValueError, match="unknown config keys"):
        AnalysisConfig.from_json({"degre": 3})


def test_partition_midpoints(bench):
    parts = partition_init(bench("pedestrian"), 30)
    assert [round(p.witness["start"], 10) for p in parts] == [round(0.05 + 0.1 * i, 10) for i in range(30)]
    assert sum(p.mass for p in parts) == pytest.approx(1.0)
    one = partition_init(bench("pedestrian"), 1)
    assert one[0].box == Box({"start": (0, 3)})


def test_partition_birth_width(bench):
    parts = partition_init(bench("birth"), 40)
    assert all(p.box["lambda"][1] - p.box["lambda"][0] == pytest.approx(0.05) for p in parts)


def test_partition_limits(bench):
    with pytest.raises(ValueError):
        partition_init(bench("pedestrian"), 0)


def test_integrate_prior(bench):
    w = bench("pedestrian")
    s = Polynomial.var("start")
    # E[start^2 ; start in [0, 3]] under uniform(0, 3)
    assert integrate_prior(s * s, w, Box({"start": (0, 3)})) == pytest.approx(3.0)
    assert integrate_prior(Polynomial.const(1.0), w, Box({"start": (1, 2)})) == pytest.approx(1 / 3)


def test_restrict_full_and_case1(bench):
    w = bench("pedestrian")
    assert restrict_query(w, Query(None, -math.inf, math.inf))[1] == "full"
    w1, case = restrict_query(w, Query("start", -math.inf, 1.0))
    assert case == "case1" and w1 is w


def test_restrict_case2_zeroes_outside(bench):
    w = bench("cav_ex_7")
    w2, case = restrict_query(w, Query("count", -math.inf, 30))
    assert case == "case2"
    zero = [f for t in w2.transitions for f in t.forks if f.dest == w.out_loc and f.weight.upper_bound({}) == 0.0]
    assert zero


def test_restrict_wrong_variable(bench):
    with pytest.raises(ValueError):
        restrict_query(bench("pedestrian"), Query("pos", 0, 1))


def test_npd_interval():
    assert npd_interval(0.2, 0.4, 0.5, 1.0) == (0.2, 0.8)
    assert npd_interval(0.2, 0.4, 0.0, 1.0) is None
    assert npd_interval(0.2, 0.6, 0.5, 1.0) == (0.2, 1.0)


def test_ost_rejects_nonintegrable(bench):
    w = bench("nonintegrable")
    v = check_ost_prereqs(w, classify(w), Box({}))
    assert not v.passed
    assert v.c3 == pytest.approx(math.log(3)) and v.c2 == pytest.approx(math.log(2))


def test_ost_vacuous_for_score_at_end(bench):
    w = bench("pedestrian")
    v = check_ost_prereqs(w, classify(w), Box({}))
    assert v.passed and v.evidence == "not needed"


def test_ost_birth_passes_with_fitted_tail(bench):
    w = bench("birth")
    box = Box({"lambda": (0, 2), "time": (-0.5, 10)})
    v = check_ost_prereqs(w, classify(w), box, OstPrereq(c3=math.log(1.1)), oracle_n=5000)
    assert v.passed and v.evidence == "oracle tail fit" and v.c2 > math.log(1.1)


def test_ost_rejects_small_user_c3(bench):
    w = bench("birth")
    v = check_ost_prereqs(w, classify(w), Box({}), OstPrereq(c3=math.log(1.05)), oracle_n=0)
    assert not v.passed and "exp(c3)" in v.reason


def test_analyze_trivial():
    r = analyze(compile_program("x := 0; score(0.5); return x"), AnalysisConfig(queries=[Query.parse("x=:")]))
    assert r.z.l == pytest.approx(0.5, abs=1e-6) and r.z.u == pytest.approx(0.5, abs=1e-6)
    assert r.queries[0]["npd"] == pytest.approx((1.0, 1.0))
    assert r.verified and r.degraded == 0


def test_analyze_geometric_handelman(bench):
    r = analyze(bench("geometric_exit"), AnalysisConfig(degree=2, engine="handelman", oracle_n=2000))
    assert r.z.l <= 2.0 <= r.z.u and r.z.u - r.z.l <= 2e-3
    assert r.oracle["z_witnesses"]["witnesses_contained"] == 1


def test_analyze_nonintegrable_raises(bench):
    with pytest.raises(OstRejected):
        analyze(bench("nonintegrable"))


def test_case1_query_matches_clipped_integral(bench):
    # the returned start never changes: Q = P(start <= 1.5) part of Z
    w = bench("pedestrian_ld")
    cfg = AnalysisConfig(degree=2, partitions=2, bounds={"pos": (0, 4), "dis": (0, 4)},
                         queries=[Query("start", -math.inf, 1.5, "half")])
    r = analyze(w, cfg)
    (q,) = r.queries
    assert q["case"] == "case1"
    assert 0 <= q["l"] <= r.z.l + 1e-12 and q["u"] <= r.z.u + 1e-12
    lo, hi = q["npd"]
    assert 0 <= lo <= hi


def test_report_json_and_csv(bench, tmp_path):
    r = analyze(bench("geometric_exit"), AnalysisConfig(degree=2))
    d = json.loads(r.dumps())
    assert d["verified"] and d["z"]["l"] <= 2 <= d["z"]["u"]
    assert d["config"]["degree"] == 2 and "Philox" in d["rng"]
    r.write_csv(str(tmp_path / "b.csv"))
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].startswith("run,partition") and len(lines) == 2
    assert "Z" in r.summary()
