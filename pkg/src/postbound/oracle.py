"""Likelihood-weighting simulator of a WPTS, used as ground truth and for tail diagnostics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .wpts import Wpts

RNG_NAME = "numpy Philox4x64-10"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SimEstimate:
    mean: float
    stderr: float
    n: int
    terminated_fraction: float
    truncated: int
    steps: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    max_step_change: dict[str, float] = field(default_factory=dict)
    stuck: int = 0

    def ci(self, z: float = 3.0) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def tail(self, ns: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Empirical ``P(T > n)``; truncated runs count as not yet stopped."""
        s = np.sort(self.steps)
        if ns is None:
            ns = np.arange(int(s.max()) + 1 if len(s) else 1)
        ns = np.asarray(ns)
        return ns, 1.0 - np.searchsorted(s, ns, side="right") / len(s)

    def to_json(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "terminated_fraction": self.terminated_fraction,
            "truncated_runs": self.truncated,
            "stuck_runs": self.stuck,
            "max_steps_seen": int(self.steps.max()) if len(self.steps) else 0,
            "max_step_change": self.max_step_change,
        }


def _estimate(w: np.ndarray, steps: np.ndarray, done: np.ndarray, truncated: int, stuck: int,
              deltas: dict[str, float]) -> SimEstimate:
    n = len(w)
    sd = float(np.std(w, ddof=1)) if n > 1 else 0.0
    return SimEstimate(float(np.mean(w)), sd / math.sqrt(n), n, float(np.mean(done)), truncated,
                       steps, w, deltas, stuck)


def _run(wpts: Wpts, vals: dict[str, np.ndarray], rng: np.random.Generator, max_steps: int,
         query: tuple[float, float] | None):
    n = len(next(iter(vals.values()))) if vals else 0
    pv = list(wpts.program_vars)
    locs = list(wpts.locations)
    lidx = {l: i for i, l in enumerate(locs)}
    terminal = np.array([wpts.terminal(l) for l in locs])
    out_i = lidx[wpts.out_loc]
    by_loc = {lidx[l]: wpts.transitions_from(l) for l in locs if not wpts.terminal(l)}
    deltas = {v: 0.0 for v in pv}
    # final results
    w_fin = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    loc_fin = np.full(n, lidx[wpts.init_loc])
    ret_fin = np.zeros(n)
    stuck = np.zeros(n, dtype=bool)
    # active runs, kept compact
    ids = np.arange(n)
    cur = {v: vals[v].copy() for v in pv}
    loc = np.full(n, lidx[wpts.init_loc])
    w = np.ones(n)
    rv = wpts.ret_var

    def retire(mask, it):
        i = ids[mask]
        w_fin[i] = w[mask]
        steps[i] = it
        loc_fin[i] = loc[mask]
        if rv is not None:
            ret_fin[i] = cur[rv][mask]

    it = 0
    done = terminal[loc]
    if done.any():
        retire(done, 0)
    keep = ~done
    ids, loc, w = ids[keep], loc[keep], w[keep]
    cur = {v: a[keep] for v, a in cur.items()}
    while len(ids) and it < max_steps:
        k = len(ids)
        env = dict(cur)
        for r, dist in wpts.sampling_vars.items():
            env[r] = dist.sample(rng, k)
        u = rng.random(k)
        handled = np.zeros(k, dtype=bool)
        new_vals = {v: cur[v].copy() for v in pv}
        new_loc = loc.copy()
        new_w = np.ones(k)
        for li, ts in by_loc.items():
            at = loc == li
            if not at.any():
                continue
            for t in ts:
                m = at & ~handled
                if not m.any():
                    break
                m &= t.guard.holds_many(env, k)
                if not m.any():
                    continue
                handled |= m
                cum = np.zeros(k)
                taken = np.zeros(k, dtype=bool)
                nf = len(t.forks)
                for j, f in enumerate(t.forks):
                    if j < nf - 1:
                        cum = cum + f.prob.eval_many(env, k)
                        pick = m & ~taken & (u < cum)
                    else:
                        pick = m & ~taken
                    taken |= pick
                    if not pick.any():
                        continue
                    for v, p in f.update.items():
                        nv = p.eval_many(env, k)
                        deltas[v] = max(deltas[v], float(np.max(np.abs(nv - env[v])[pick])))
                        new_vals[v] = np.where(pick, nv, new_vals[v])
                    if not f.weight.is_one():
                        new_w = np.where(pick, f.weight.eval_many(env, k), new_w)
                    new_loc[pick] = lidx[f.dest]
        if not handled.all():
            stuck[ids[~handled]] = True
            new_w[~handled] = 0.0
            new_loc[~handled] = out_i
        cur = new_vals
        w = w * new_w
        loc = new_loc
        it += 1
        done = terminal[loc]
        if done.any():
            retire(done, it)
            keep = ~done
            ids, loc, w = ids[keep], loc[keep], w[keep]
            cur = {v: a[keep] for v, a in cur.items()}
    truncated = np.zeros(n, dtype=bool)
    truncated[ids] = True
    steps[ids] = it
    if query is not None:
        lo, hi = query
        w_fin = w_fin * ((ret_fin >= lo) & (ret_fin <= hi) & (loc_fin == out_i))
    return w_fin, steps, ~truncated, truncated, stuck, deltas


def simulate(wpts: Wpts, init: Mapping[str, float] | None = None, n: int = 10_000, seed: int = 0,
             max_steps: int = 100_000, query: tuple[float, float] | None = None) -> SimEstimate:
    """Estimate the expected weight from ``init`` (or from the initial distribution).

    Runs still going after ``max_steps`` steps get weight 0, so estimates of
    nonnegative weights are biased low by at most the censored mass.  ``query``
    restricts to runs whose returned value lies in ``[lo, hi]``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = make_rng(seed)
    if init is None:
        vals = wpts.initial.sample(rng, n)
    else:
        vals = {v: np.full(n, float(init[v])) for v in wpts.program_vars}
    for v in wpts.program_vars:
        vals.setdefault(v, np.zeros(n))
        vals[v] = np.array(vals[v], dtype=float)
    w, steps, done, trunc, stuck, deltas = _run(wpts, vals, rng, max_steps, query)
    return _estimate(w, steps, done, int(trunc.sum()), int(stuck.sum()), deltas)


def simulate_points(wpts: Wpts, points: Sequence[Mapping[str, float]], n: int = 10_000, seed: int = 0,
                    max_steps: int = 100_000, query: tuple[float, float] | None = None) -> list[SimEstimate]:
    """Independent estimates at several initial states, simulated in one batch."""
    k = len(points)
    if k == 0:
        return []
    rng = make_rng(seed)
    vals = {v: np.repeat([float(p[v]) for p in points], n) for v in wpts.program_vars}
    w, steps, done, trunc, stuck, deltas = _run(wpts, vals, rng, max_steps, query)
    out = []
    for i in range(k):
        s = slice(i * n, (i + 1) * n)
        out.append(_estimate(w[s], steps[s], done[s], int(trunc[s].sum()), int(stuck[s].sum()), deltas))
    return out


class NoEvidence(Exception):
    """The simulated stopping times show no exponential tail."""


def tail_fit(est: SimEstimate, min_count: int = 20) -> tuple[float, float]:
    """Conservative ``(c1, c2)`` with ``P(T > n) <= c1 exp(-c2 n)`` on the observed range.

    The log tail is fitted by least squares over the upper half of the steps with at
    least ``min_count`` surviving runs; ``c2`` is reduced by one standard error of the
    slope and ``c1`` is the smallest constant covering every observed tail point.
    """
    if est.truncated:
        raise NoEvidence(f"{est.truncated} runs did not stop within the step budget")
    ns, p = est.tail()
    counts = np.rint(p * est.n)
    if len(ns) < 2 or counts[1:].sum() == 0 or np.count_nonzero(counts) < 10:
        if np.count_nonzero(counts) <= 2:
            return 1.0, math.inf
        raise NoEvidence("too few tail points with nonzero mass")
    usable = np.nonzero(counts >= min_count)[0]
    if len(usable) < 10:
        raise NoEvidence("too few tail points with enough surviving runs")
    lo = usable[len(usable) // 2]
    hi = usable[-1]
    x = ns[lo: hi + 1].astype(float)
    y = np.log(p[lo: hi + 1])
    if len(x) < 3:
        raise NoEvidence("tail regime too short")
    A = np.vstack([np.ones_like(x), x]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = coef[1]
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    c2 = -slope - se
    if c2 <= 0:
        raise NoEvidence("fitted tail does not decay")
    mask = p > 0
    c1 = float(np.max(p[mask] * np.exp(c2 * ns[mask])))
    return max(c1, 1.0), float(c2)


def write_csv(path: str, rows: Sequence[Mapping[str, float]], estimates: Sequence[SimEstimate]) -> None:
    """One line per initial state: its coordinates, the estimate and its standard error."""
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(keys + ["estimate", "stderr", "n", "truncated"])
        for r, e in zip(rows, estimates):
            wr.writerow([r.get(k, "") for k in keys] + [e.mean, e.stderr, e.n, e.truncated])
