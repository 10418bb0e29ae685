import json

import numpy as np
import pytest
import scipy.sparse as sp

from postbound.conic import ConicProgram, VerificationReport, export, solve, verify_posthoc


def test_lp_min_x_ge_3():
    # x - s = 3, s >= 0
    prog = ConicProgram(1, 1, [], sp.csr_matrix([[1.0, -1.0]]), np.array([3.0]), ["x"])
    sol = solve(prog, np.array([1.0]))
    assert sol.status == "optimal" and sol.objective == pytest.approx(3.0)
    assert sol.residual < 1e-9


def test_lp_warm_start_new_objective():
    # x1 + x2 + s = 1, x >= 0 encoded as free minus slack
    A = sp.csr_matrix([[1.0, 1.0, 1.0, 0, 0], [1.0, 0, 0, -1.0, 0], [0, 1.0, 0, 0, -1.0]])
    prog = ConicProgram(2, 3, [], A, np.array([1.0, 0.0, 0.0]), ["x1", "x2"])
    assert solve(prog, np.array([1.0, 0.0]), "max").objective == pytest.approx(1.0)
    assert "highs" in prog._cache
    assert solve(prog, np.array([1.0, 2.0]), "max").objective == pytest.approx(2.0)


def test_lp_infeasible():
    A = sp.csr_matrix([[1.0, 1.0]])
    prog = ConicProgram(0, 2, [], A, np.array([-1.0]), [])
    assert solve(prog, np.zeros(0)).status == "infeasible"


def test_sdp_eigenvalue():
    # [[t,1],[1,t]] = Q PSD, column-major vec(Q) = (q11, q21, q12, q22)
    A = sp.csr_matrix([
        [1.0, -1.0, 0, 0, 0],
        [0, 0, 1.0, 0, 0],
        [0, 0, 0, 1.0, 0],
        [1.0, 0, 0, 0, -1.0],
    ])
    prog = ConicProgram(1, 0, [2], A, np.array([0.0, 1.0, 1.0, 0.0]), ["t"])
    assert prog.kind == "sdp"
    sol = solve(prog, np.array([1.0]))
    assert sol.status == "optimal" and sol.objective == pytest.approx(1.0, abs=1e-5)


def test_json_roundtrip_and_mps(tmp_path):
    prog = ConicProgram(1, 1, [], sp.csr_matrix([[1.0, -1.0]]), np.array([3.0]), ["x"])
    export(prog, str(tmp_path / "p.json"))
    back = ConicProgram.from_json(json.loads((tmp_path / "p.json").read_text()))
    assert solve(back, np.array([1.0])).objective == pytest.approx(3.0)
    export(prog, str(tmp_path / "p.mps"))
    text = (tmp_path / "p.mps").read_text()
    assert text.startswith("NAME") and "FR bnd x0" in text and text.rstrip().endswith("ENDATA")
    sdp = ConicProgram(1, 0, [1], sp.csr_matrix([[1.0, -1.0]]), np.array([0.0]), ["t"])
    with pytest.raises(ValueError):
        export(sdp, str(tmp_path / "s.mps"))


def test_verify_empty_constraint_set():
    class Empty:
        obligations = []
    rep = verify_posthoc(Empty(), {})
    assert isinstance(rep, VerificationReport) and rep.ok and rep.checked == 0
