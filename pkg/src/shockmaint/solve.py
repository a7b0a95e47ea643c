"""Jacobi value iteration for the discrete quasi-variational inequality.

One sweep maps ``V`` to ``max(continuation(V), intervention(V))`` at every node,
where continuation is the upwind/uniformised drift-plus-jump average and
intervention is the best restore-and-pay value. Started from zero the iterates
increase monotonically to the least fixed point.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import FixedCostError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7


class ConvergenceError(RuntimeError):
    code = "solver did not converge"


class NumericalError(RuntimeError):
    code = "numerical failure"


@dataclass(frozen=True)
class SolverConfig:
    tol: float = DEFAULT_TOL
    max_iter: int = 1_000_000
    report_every: int = 1000
    # "prefix" (O(N) per sweep) or "exhaustive" (O(N^2)); both give identical values
    intervention: str = "prefix"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.intervention not in ("prefix", "exhaustive"):
            raise ValueError(f"unknown intervention scan {self.intervention!r}")


@dataclass(frozen=True, eq=False)
class ValueField:
    values: np.ndarray
    iterations: int
    sup_change: float
    converged: bool
    k: float
    model_id: str
    tol: float
    log: tuple = field(default=(), repr=False)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class ResidualReport:
    continuation: np.ndarray
    obstacle_gap: np.ndarray
    min_branch: np.ndarray
    max_abs_min: float
    active: np.ndarray
    flagged: np.ndarray
    report_tol: float

    @property
    def ok(self):
        return bool(np.all(self.min_branch >= -self.report_tol))


def _left(V):
    out = np.empty_like(V)
    out[0] = 0.0
    out[1:] = V[:-1]
    return out


def continuation_values(dm, V):
    """Continuation branch at every node; drift out of node 0 is failure (value 0)."""
    V = np.asarray(V, dtype=float)
    a = dm.drift_rate
    J = dm.kernel.apply(V) if dm.lam > 0 else np.zeros_like(V)
    return (dm.G + a * _left(V) + dm.lam * J) / (dm.delta + a + dm.lam)


def continuation_value(dm, V, i):
    V = np.asarray(V, dtype=float)
    a = dm.drift_rate[i]
    left = V[i - 1] if i > 0 else 0.0
    jump = 0.0
    if dm.lam > 0:
        js, ps = dm.kernel.row(i)
        jump = float(np.dot(ps, V[js]))
    return float((dm.G[i] + a * left + dm.lam * jump) / (dm.delta + a + dm.lam))


def intervention_values(dm, V, exhaustive=False):
    """Intervention branch and its smallest maximising target node, for every node."""
    V = np.asarray(V, dtype=float)
    if exhaustive:
        return _kernels.intervention_exhaustive(V, dm.H, dm.k)
    best, arg = _kernels.suffix_argmax(V - dm.H)
    return best + dm.H - dm.k, arg


def intervention_value(dm, V, i):
    V = np.asarray(V, dtype=float)
    x = V[i:] - dm.H[i:]
    j = int(np.argmax(x))  # first occurrence = smallest maximiser
    return float(x[j] + dm.H[i] - dm.k), i + j


def bellman(dm, V, exhaustive=False):
    """One Jacobi sweep ``T V``."""
    cont = continuation_values(dm, V)
    interv, _ = intervention_values(dm, V, exhaustive)
    return np.maximum(cont, interv)


def qvi_solve(dm, cfg=None, V0=None):
    """Iterate ``V <- T V`` from zero until the sup-norm change drops below ``cfg.tol``.

    Returns a ``ValueField`` with ``converged=False`` if ``cfg.max_iter`` is hit.
    Raises ``NumericalError`` on non-finite values or a monotonicity break.
    """
    cfg = cfg or SolverConfig()
    if not dm.k > 0:
        raise FixedCostError(dm.k)
    N = dm.N
    V = np.zeros(N) if V0 is None else np.array(V0, dtype=float)
    out = np.empty(N)
    a = np.ascontiguousarray(dm.drift_rate)
    G, H = np.ascontiguousarray(dm.G), np.ascontiguousarray(dm.H)
    lam, delta, k = float(dm.lam), float(dm.delta), float(dm.k)
    zeros = np.zeros(N)
    use_jumps = lam > 0 and not dm.kernel.is_empty
    trace = []
    change = math.inf
    it = 0
    mono_eps = 1e-12
    while it < cfg.max_iter:
        it += 1
        J = dm.kernel.apply(V) if use_jumps else zeros
        if cfg.intervention == "exhaustive":
            Vn = bellman(dm, V, exhaustive=True)
            d = Vn - V
            change, min_inc = float(np.max(np.abs(d))), float(np.min(d))
            out[:] = Vn
        else:
            change, min_inc = _kernels.sweep(V, J, G, a, lam, delta, H, k, out)
        if not math.isfinite(change):
            raise NumericalError(f"non-finite value at sweep {it}")
        if V0 is None and min_inc < -mono_eps * (1.0 + float(np.max(np.abs(V)))):
            raise NumericalError(f"iterates decreased by {-min_inc:.3g} at sweep {it}")
        V, out = out, V
        if cfg.report_every and it % cfg.report_every == 0:
            trace.append((it, change))
            log.debug("sweep %d sup change %.3e", it, change)
        if change < cfg.tol:
            break
    converged = change < cfg.tol
    if cfg.report_every and (not trace or trace[-1][0] != it):
        trace.append((it, change))
    if not converged:
        log.warning("no convergence after %d sweeps (change %.3e)", it, change)
    return ValueField(values=V.copy(), iterations=it, sup_change=float(change),
                      converged=bool(converged), k=k, model_id=dm.fingerprint, tol=cfg.tol,
                      log=tuple(trace))


def residual_check(dm, vf, gap_tol=None, report_tol=1e-4):
    """Discrete residuals of both branches of ``min{dV - A_h V - G, V - M V} = 0``."""
    V = vf.values if isinstance(vf, ValueField) else np.asarray(vf, dtype=float)
    if gap_tol is None:
        gap_tol = 100 * (vf.tol if isinstance(vf, ValueField) else DEFAULT_TOL)
    a = dm.drift_rate
    J = dm.kernel.apply(V) if dm.lam > 0 else np.zeros_like(V)
    cont_res = (dm.delta + a + dm.lam) * V - a * _left(V) - dm.lam * J - dm.G
    interv, _ = intervention_values(dm, V)
    gap = V - interv
    mins = np.minimum(cont_res, gap)
    return ResidualReport(
        continuation=cont_res,
        obstacle_gap=gap,
        min_branch=mins,
        max_abs_min=float(np.max(np.abs(mins))),
        active=np.nonzero(gap <= gap_tol)[0],
        flagged=np.nonzero(np.abs(mins) > report_tol)[0],
        report_tol=report_tol,
    )


def write_values_csv(path, r, V):
    """``r,V`` per node, 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("r,V\n")
        for x, v in zip(np.asarray(r).tolist(), np.asarray(V).tolist()):
            fh.write("%.17g,%.17g\n" % (x, v))


def write_solver_log(path, vf):
    with open(path, "w") as fh:
        fh.write("iter,sup_change\n")
        for it, ch in vf.log:
            fh.write("%d,%.17g\n" % (it, ch))
