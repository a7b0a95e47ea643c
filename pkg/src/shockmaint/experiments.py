"""Fixed-cost sweeps, the small-k limit check and figure data for the shipped examples."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretize import DEFAULT_N, discretize_model
from .model import ModelError, example_model
from .policy import extract_policy
from .solve import ConvergenceError, SolverConfig, qvi_solve, residual_check, write_values_csv

log = logging.getLogger(__name__)

LADDER_SIZE = 16
LADDER_RANGE = (1e-3, 0.3)
RESIDUAL_GATE = 1e-4


def k_ladder(n=LADDER_SIZE, lo=LADDER_RANGE[0], hi=LADDER_RANGE[1]):
    """``n`` log-spaced fixed costs from ``hi`` down to ``lo``."""
    return tuple(float(k) for k in np.geomspace(hi, lo, n))


DEFAULT_K_LADDER = k_ladder()


class SweepError(ConvergenceError):
    def __init__(self, k, iterations, change):
        self.k = k
        super().__init__(f"solver did not converge at k={k!r} "
                         f"({iterations} sweeps, last change {change:.3e})")


def k_label(k):
    return f"{k:.6g}"


@dataclass(frozen=True, eq=False)
class SweepRow:
    k: float
    policy: object
    values: np.ndarray = field(repr=False)
    iterations: int
    residual: float

    @property
    def value_file(self):
        return f"values_k={k_label(self.k)}.csv"


@dataclass(frozen=True, eq=False)
class SweepTable:
    r: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    rows: tuple

    def __len__(self):
        return len(self.rows)

    @property
    def ks(self):
        return np.array([row.k for row in self.rows])

    def thresholds(self):
        """``(k, s_low, s_high, S, iters)`` per row as a float array."""
        return np.array([(row.k, row.policy.s_low, row.policy.s_high, row.policy.S_target,
                          row.iterations) for row in self.rows], dtype=float)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for row in self.rows:
            p = out / row.value_file
            write_values_csv(p, self.r, row.values)
            paths.append(p)
        p = out / "thresholds.csv"
        with open(p, "w") as fh:
            fh.write("k,s_low,s_high,S,iters\n")
            for row in self.rows:
                pol = row.policy
                fh.write("%.17g,%.17g,%.17g,%.17g,%d\n"
                         % (row.k, pol.s_low, pol.s_high, pol.S_target, row.iterations))
        paths.append(p)
        return paths


def _solve_one(base, k, N, cfg):
    dm = discretize_model(base.with_k(k), N)
    vf = qvi_solve(dm, cfg)
    if not vf.converged:
        raise SweepError(k, vf.iterations, vf.sup_change)
    pol = extract_policy(dm, vf)
    res = residual_check(dm, vf).max_abs_min
    if res > RESIDUAL_GATE:
        log.warning("k=%s: QVI residual %.3e above %.0e", k_label(k), res, RESIDUAL_GATE)
    return dm, SweepRow(float(k), pol, vf.values, vf.iterations, res)


def sweep_k(base, k_list, N=DEFAULT_N, cfg=None, threads=None):
    """Solve and extract the policy for every fixed cost; rows come out by descending k."""
    ks = sorted((float(k) for k in k_list), reverse=True)
    if not ks:
        raise ValueError("empty k list")
    if any(not (k > 0 and math.isfinite(k)) for k in ks):
        raise ModelError("every k must be positive and finite", "domain")
    cfg = cfg or SolverConfig()
    if threads and threads > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(lambda k: _solve_one(base, k, N, cfg), ks))
    else:
        done = [_solve_one(base, k, N, cfg) for k in ks]
    dm = done[0][0]
    return SweepTable(dm.r, dm.H, tuple(row for _, row in done))


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LimitReport:
    k_list: tuple
    probes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # (len(k_list), len(probes))
    violations: tuple  # (j, probe, drop) with V_{j+1} < V_j - tol
    gaps: tuple
    flatness: tuple
    tol: float
    check_flatness: bool = False

    @property
    def monotone(self):
        return not self.violations

    @property
    def gaps_decreasing(self):
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def flatness_decreasing(self):
        return all(b < a for a, b in zip(self.flatness, self.flatness[1:]))

    @property
    def ok(self):
        return self.monotone and self.gaps_decreasing and (
            self.flatness_decreasing or not self.check_flatness)

    def to_dict(self):
        return {
            "k_list": list(self.k_list),
            "tol": self.tol,
            "monotone": self.monotone,
            "violations": [{"j": j, "r": r, "drop": d} for j, r, d in self.violations],
            "cauchy_gaps": list(self.gaps),
            "gaps_decreasing": self.gaps_decreasing,
            "flatness_defect": list(self.flatness),
            "flatness_decreasing": self.flatness_decreasing,
            "ok": self.ok,
        }


def _flatness(V, H):
    d = V - H
    return float(np.max(np.abs(d - np.mean(d))))


def limit_report(k_list, r, curves, H, probes=None, tol=1e-6, check_flatness=False):
    """Monotonicity, Cauchy gaps and flatness of ``V - H`` for already-solved curves."""
    ks = tuple(float(k) for k in k_list)
    if any(b >= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be strictly decreasing")
    probes = np.asarray(r if probes is None else probes, dtype=float)
    vals = np.array([np.interp(probes, r, V) for V in curves])
    violations = []
    gaps = []
    for j in range(len(ks) - 1):
        diff = vals[j + 1] - vals[j]
        for i in np.nonzero(diff < -tol)[0]:
            violations.append((j, float(probes[i]), float(-diff[i])))
        gaps.append(float(np.max(np.abs(diff))))
    for j, p, d in violations:
        log.warning("V decreased by %.3e at r=%.6g between k=%s and k=%s",
                    d, p, k_label(ks[j]), k_label(ks[j + 1]))
    flat = tuple(_flatness(V, H) for V in curves)
    return LimitReport(ks, probes, vals, tuple(violations), tuple(gaps), flat, tol,
                       check_flatness)


def limit_check(base, k_list, probes=None, N=DEFAULT_N, tol=1e-6, check_flatness=False,
                cfg=None, threads=None):
    """Check that ``V_k`` increases as ``k`` decreases to zero, with shrinking increments."""
    ks = [float(k) for k in k_list]
    if any(b >= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be strictly decreasing")
    table = sweep_k(base, ks, N, cfg, threads)
    return limit_report(ks, table.r, [row.values for row in table.rows], table.H, probes, tol,
                        check_flatness)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingularGapReport:
    r: np.ndarray = field(repr=False)  # interior nodes
    gap: np.ndarray = field(repr=False)  # H'(r_i) - (V_i - V_{i-1}) / h
    threshold: float
    min_gap: float
    argmin: float
    violations: np.ndarray = field(repr=False)

    def to_dict(self):
        return {"min_gap": self.min_gap, "argmin_r": self.argmin,
                "threshold": self.threshold, "n_violations": int(self.violations.size)}


def singular_gap(dm, vf, cost, threshold=0.0):
    """Marginal cost minus the backward-difference slope of ``V`` at interior nodes.

    Diagnostic for the small-k regime: a negative gap means ``V`` climbs faster
    than ``H`` there. Needs an analytic ``H'``.
    """
    if not cost.has_derivative:
        raise ModelError(f"cost kind {cost.kind!r} has no analytic derivative", "unsupported")
    V = vf.values if hasattr(vf, "values") else np.asarray(vf, dtype=float)
    r = dm.r[1:-1]
    slope = (V[1:-1] - V[:-2]) / dm.h
    gap = np.asarray(cost.dH(r), dtype=float) - slope
    i = int(np.argmin(gap))
    return SingularGapReport(r, gap, float(threshold), float(gap[i]), float(r[i]),
                             np.nonzero(gap < -threshold)[0] + 1)


# ---------------------------------------------------------------------------


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def reproduce_figures(example_id, out_dir="out", k_list=None, N=DEFAULT_N, threads=None):
    """Sweep one shipped example over the k ladder and write its figure data.

    Writes ``values_k=<k>.csv`` per row, ``thresholds.csv`` and ``report.json``
    under ``out_dir/ex<id>``; returns ``(table, report_dict, paths)``.
    """
    eid = int(example_id)
    if eid not in (1, 2, 3):
        raise ModelError(f"unknown example {example_id!r}", "domain")
    base = example_model(eid)
    ks = DEFAULT_K_LADDER if k_list is None else tuple(sorted(map(float, k_list), reverse=True))
    table = sweep_k(base, ks, N, threads=threads)
    dest = Path(out_dir) / f"ex{eid}"
    paths = table.write(dest)
    limit = limit_report([row.k for row in table.rows], table.r,
                         [row.values for row in table.rows], table.H,
                         check_flatness=(eid == 1))
    report = {
        "example": f"ex{eid}",
        "N": int(N),
        "rows": [{"k": row.k, "residual": row.residual, "empty": row.policy.empty,
                  "holes": len(row.policy.holes), "file": row.value_file}
                 for row in table.rows],
        "limit": limit.to_dict(),
    }
    if base.cost.has_derivative:
        last = table.rows[-1]
        dm = discretize_model(base.with_k(last.k), N)
        report["singular_gap"] = dict(singular_gap(dm, last.values, base.cost).to_dict(),
                                      k=last.k)
    p = dest / "report.json"
    _dump(p, report)
    paths.append(p)
    return table, report, paths
