"""Conic programs (LP with optional PSD blocks), solver adapters, post-hoc checks and export."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class ConicProgram:
    """Equality-form program ``A [x_free; x_nonneg; vec(Q_1); ...] = b`` with
    ``x_nonneg >= 0`` and each ``Q_k`` positive semidefinite (column-major vec)."""

    n_free: int
    n_nonneg: int
    psd_sizes: list[int]
    A: sp.csr_matrix
    b: np.ndarray
    free_names: list[str]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        return "sdp" if self.psd_sizes else "lp"

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def to_json(self) -> dict:
        A = self.A.tocoo()
        return {
            "format": "equality-conic-v1",
            "n_free": self.n_free,
            "n_nonneg": self.n_nonneg,
            "psd_sizes": self.psd_sizes,
            "free_names": self.free_names,
            "A": {"rows": A.row.tolist(), "cols": A.col.tolist(), "vals": A.data.tolist(), "shape": list(A.shape)},
            "b": self.b.tolist(),
        }

    @staticmethod
    def from_json(d) -> "ConicProgram":
        A = sp.csr_matrix((d["A"]["vals"], (d["A"]["rows"], d["A"]["cols"])), shape=tuple(d["A"]["shape"]))
        return ConicProgram(d["n_free"], d["n_nonneg"], list(d["psd_sizes"]), A, np.array(d["b"]), list(d["free_names"]))


@dataclass
class Solution:
    status: str  # optimal, infeasible, unbounded, error, time_limit
    objective: float | None = None
    x_free: np.ndarray | None = None
    x_nonneg: np.ndarray | None = None
    solver: str = ""
    seconds: float = 0.0
    residual: float | None = None
    message: str = ""


def _highs_model(prog: ConicProgram):
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    # certificates are checked pointwise afterwards, so ask for tight equality residuals
    h.setOptionValue("primal_feasibility_tolerance", 1e-10)
    h.setOptionValue("dual_feasibility_tolerance", 1e-10)
    n = prog.n_free + prog.n_nonneg
    A = prog.A.tocsc()
    lp = highspy.HighsLp()
    lp.num_col_ = n
    lp.num_row_ = A.shape[0]
    lp.col_cost_ = np.zeros(n)
    lp.col_lower_ = np.concatenate([np.full(prog.n_free, -highspy.kHighsInf), np.zeros(prog.n_nonneg)])
    lp.col_upper_ = np.full(n, highspy.kHighsInf)
    lp.row_lower_ = np.asarray(prog.b, dtype=float)
    lp.row_upper_ = np.asarray(prog.b, dtype=float)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr
    lp.a_matrix_.index_ = A.indices
    lp.a_matrix_.value_ = A.data
    h.passModel(lp)
    return h


def _solve_lp(prog: ConicProgram, c: np.ndarray, sense: str, time_limit: float | None) -> Solution:
    """HiGHS simplex; the model is kept on the program so later objectives warm-start."""
    import highspy

    if "highs" not in prog._cache:
        prog._cache["highs"] = _highs_model(prog)
    h = prog._cache["highs"]
    cc = c if sense == "min" else -c
    h.changeColsCost(prog.n_free, np.arange(prog.n_free, dtype=np.int32), np.asarray(cc, dtype=float))
    h.setOptionValue("time_limit", float(time_limit) if time_limit else highspy.kHighsInf)
    t0 = time.time()
    h.run()
    dt = time.time() - t0
    st = h.getModelStatus()
    M = highspy.HighsModelStatus
    if st != M.kOptimal:
        status = {M.kInfeasible: "infeasible", M.kUnbounded: "unbounded", M.kUnboundedOrInfeasible: "infeasible",
                  M.kTimeLimit: "time_limit"}.get(st, "error")
        if status != "time_limit":
            # drop the basis so the next objective starts cleanly
            prog._cache.pop("highs", None)
        return Solution(status, solver="highs", seconds=dt, message=h.modelStatusToString(st))
    x = np.asarray(h.getSolution().col_value)
    obj = float(c @ x[: prog.n_free])
    resid = float(np.max(np.abs(prog.A @ x - prog.b))) if prog.A.shape[0] else 0.0
    return Solution("optimal", obj, x[: prog.n_free], x[prog.n_free:], "highs", dt, resid, "optimal")


def _solve_sdp(prog: ConicProgram, c: np.ndarray, sense: str, time_limit: float | None, solver: str | None) -> Solution:
    import cvxpy as cp

    key = "cvx"
    if key not in prog._cache:
        xf = cp.Variable(prog.n_free)
        parts = [prog.A[:, : prog.n_free] @ xf]
        cons = []
        xn = None
        if prog.n_nonneg:
            xn = cp.Variable(prog.n_nonneg, nonneg=True)
            parts.append(prog.A[:, prog.n_free: prog.n_free + prog.n_nonneg] @ xn)
        off = prog.n_free + prog.n_nonneg
        Qs = []
        for s in prog.psd_sizes:
            Q = cp.Variable((s, s), PSD=True)
            Qs.append(Q)
            parts.append(prog.A[:, off: off + s * s] @ cp.vec(Q, order="F"))
            off += s * s
        cons.append(sum(parts) == prog.b)
        cpar = cp.Parameter(prog.n_free)
        prob = cp.Problem(cp.Minimize(cpar @ xf), cons)
        prog._cache[key] = (prob, xf, xn, cpar)
    prob, xf, xn, cpar = prog._cache[key]
    cpar.value = c if sense == "min" else -c
    installed = cp.installed_solvers()
    chosen = solver or ("CLARABEL" if "CLARABEL" in installed else "SCS")
    kwargs = {}
    if time_limit and chosen == "CLARABEL":
        kwargs["time_limit"] = float(time_limit)
    t0 = time.time()
    try:
        prob.solve(solver=chosen, **kwargs)
    except cp.error.SolverError as exc:
        return Solution("error", solver=chosen, seconds=time.time() - t0, message=str(exc))
    dt = time.time() - t0
    st = prob.status
    if st in ("optimal", "optimal_inaccurate"):
        x = np.asarray(xf.value)
        return Solution("optimal", float(c @ x), x, None if xn is None else np.asarray(xn.value), chosen, dt,
                        None, st)
    status = {"infeasible": "infeasible", "unbounded": "unbounded"}.get(st.split("_")[0], "error")
    return Solution(status, solver=chosen, seconds=dt, message=st)


def solve(prog: ConicProgram, c: np.ndarray, sense: str = "min", time_limit: float | None = None,
          solver: str | None = None) -> Solution:
    """Optimise ``c . x_free``.  LPs go to HiGHS, programs with PSD blocks to cvxpy."""
    if prog.kind == "lp":
        return _solve_lp(prog, np.asarray(c, dtype=float), sense, time_limit)
    return _solve_sdp(prog, np.asarray(c, dtype=float), sense, time_limit, solver)


def export(prog: ConicProgram, path: str) -> None:
    """Write the program as JSON, or as free MPS when ``path`` ends in ``.mps`` (LP only)."""
    if path.endswith(".mps"):
        if prog.kind != "lp":
            raise ValueError("MPS export supports LPs only")
        _write_mps(prog, path)
        return
    with open(path, "w") as f:
        json.dump(prog.to_json(), f)


def _write_mps(prog: ConicProgram, path: str, c: np.ndarray | None = None) -> None:
    A = prog.A.tocsc()
    m, n = A.shape
    lines = ["NAME certificate", "ROWS", " N obj"]
    lines += [f" E r{i}" for i in range(m)]
    lines.append("COLUMNS")
    for j in range(n):
        name = f"x{j}"
        if c is not None and j < prog.n_free and c[j] != 0:
            lines.append(f" {name} obj {c[j]:.17g}")
        col = A.getcol(j)
        for i, v in zip(col.indices, col.data):
            lines.append(f" {name} r{i} {v:.17g}")
    lines.append("RHS")
    for i, v in enumerate(prog.b):
        if v != 0:
            lines.append(f" rhs r{i} {v:.17g}")
    lines.append("BOUNDS")
    for j in range(prog.n_free):
        lines.append(f" FR bnd x{j}")
    lines.append("ENDATA")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# post-hoc verification


@dataclass
class Violation:
    obligation: str
    point: dict
    value: float
    tolerance: float


@dataclass
class VerificationReport:
    checked: int
    points: int
    violations: list[Violation]
    max_violation: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self):
        return {
            "obligations_checked": self.checked,
            "points": self.points,
            "violations": [
                {"obligation": v.obligation, "point": v.point, "value": v.value, "tolerance": v.tolerance}
                for v in self.violations[:20]
            ],
            "violation_count": len(self.violations),
            "max_violation": self.max_violation,
        }


def verify_posthoc(cs, coefficients: dict[str, float], n: int = 10_000, rel_tol: float = 1e-6,
                   seed: int = 0) -> VerificationReport:
    """Evaluate every obligation body at quasi-random points of its region.

    A point violates its obligation when the body is below ``-rel_tol * scale`` with
    ``scale`` the largest ``|body|`` on the sampled points.  The tolerance never drops
    below the rounding noise of the evaluation (``1e-12`` times the largest absolute
    term sum), which matters only for bodies that vanish identically.
    """
    violations: list[Violation] = []
    total = 0
    worst = 0.0
    # sample points depend only on the regions, so they are reused across certificates
    cache = getattr(cs, "_samples", None)
    if cache is None:
        cache = {}
    for k, ob in enumerate(cs.obligations):
        body = ob.body.instantiate(coefficients)
        if ob.region.vars:
            key = (k, n, seed)
            if key not in cache:
                cache[key] = ob.region.sample(n, seed=seed + k)
            pts = cache[key]
            if not pts:
                continue
            size = len(next(iter(pts.values())))
        else:
            pts, size = {}, 1
        vals = body.eval_many(pts, size)
        mag = np.zeros(size)
        for m, c in body.terms.items():
            v = np.full(size, abs(c))
            for x, e in m:
                v = v * np.abs(pts[x]) ** e
            mag += v
        scale = float(np.max(np.abs(vals))) if size else 0.0
        noise = 1e-12 * (float(mag.max()) if size else 0.0)
        tol = max(rel_tol * scale, noise, 1e-300)
        total += size
        bad = np.nonzero(vals < -tol)[0]
        if len(bad):
            i = int(bad[np.argmin(vals[bad])])
            worst = max(worst, float(-vals[i]))
            violations.append(Violation(ob.name, {v: float(pts[v][i]) for v in pts}, float(vals[i]), tol))
    return VerificationReport(len(cs.obligations), total, violations, worst)
