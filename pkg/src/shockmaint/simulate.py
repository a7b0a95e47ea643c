"""Exact-event simulation of the controlled process and Monte Carlo payoff estimates.

Between shocks the state follows ``dR/dt = -c(R)``, which is solved in closed
form on each linear piece of ``c``; shocks arrive as a Poisson stream whose
variates come from a counter-based generator, so path ``i`` of seed ``s`` is
the same no matter how many other paths are drawn or in what order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .model import (DIST_EMPIRICAL, DIST_LOGNORMAL, DIST_POINT, DIST_UNIFORM, VALIDATION_SAMPLES,
                    ModelError)

BENEFIT_TOL = 1e-10
MAX_STEPS = 10_000_000


class _Arrays(NamedTuple):
    xs: np.ndarray
    cs: np.ndarray
    lam: float
    delta: float
    k: float
    gcode: int
    gpar: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    hcode: int
    hpar: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    dcode: int
    dpar: np.ndarray
    dx: np.ndarray
    dcw: np.ndarray


def _encode_dist(dist):
    p = dist.params
    z = np.zeros(1)
    if dist.kind == "lognormal":
        return DIST_LOGNORMAL, np.array([p["mu"], math.sqrt(p["sigma_sq"])]), z, z
    if dist.kind == "uniform":
        return DIST_UNIFORM, np.array([p["a"], p["b"]]), z, z
    if dist.kind == "point_mass":
        return DIST_POINT, np.array([p["s0"]]), z, z
    vals, cw = dist._empirical()
    return DIST_EMPIRICAL, z, vals, cw


def model_arrays(model):
    xs, cs = model.rate.knots(model.m, model.M)
    if np.any(cs <= 0):
        raise ModelError("rate not positive", "rate_not_positive")
    return _Arrays(np.ascontiguousarray(xs), np.ascontiguousarray(cs), model.lam, model.delta,
                   model.k, *model.econ.encode(), *model.cost.encode(), *_encode_dist(model.shocks))


def _policy_args(pol):
    if pol is None or pol.empty:
        return False, math.inf, math.inf, 0.0
    return True, pol.s_low, pol.s_high, pol.S_target


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShockStream:
    """Counter-based variate stream: variate ``i`` is a pure function of (seed, stream, i).

    Shock ``n`` (0-based) uses variate ``2n`` for its waiting time and ``2n + 1``
    for its size.
    """

    seed: int = 0
    stream: int = 0

    def uniform(self, i):
        return K.uniform01(np.uint64(self.seed), np.uint64(self.stream), np.uint64(i))

    def shocks(self, n, lam, dist):
        """First ``n`` shock ``(times, sizes)``."""
        code, par, dx, dcw = _encode_dist(dist)
        times = np.empty(n)
        sizes = np.empty(n)
        t = 0.0
        for j in range(n):
            t += -math.log(self.uniform(2 * j)) / lam
            times[j] = t
            sizes[j] = K.sample_shock(code, par, dx, dcw, self.uniform(2 * j + 1))
        return times, sizes


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    kinds: np.ndarray  # event codes, see EVENT_NAMES
    before: np.ndarray
    after: np.ndarray
    benefit_cum: np.ndarray
    cost_cum: np.ndarray
    benefit: float
    cost: float
    failure_time: float | None
    end_time: float
    n_shocks: int
    n_interventions: int

    @property
    def payoff(self):
        return self.benefit - self.cost

    @property
    def events(self):
        return [(float(t), K.EVENT_NAMES[c], float(b), float(a))
                for t, c, b, a in zip(self.times, self.kinds, self.before, self.after)]

    def __len__(self):
        return self.times.size

    def same_as(self, other):
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("times", "kinds", "before", "after", "benefit_cum", "cost_cum")) \
            and (self.benefit, self.cost, self.failure_time) == (other.benefit, other.cost,
                                                                 other.failure_time)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("time,event,state_before,state_after,disc_benefit_cum,disc_cost_cum\n")
            for row in zip(self.times, self.kinds, self.before, self.after,
                           self.benefit_cum, self.cost_cum):
                fh.write("%.17g,%s,%.17g,%.17g,%.17g,%.17g\n"
                         % (row[0], K.EVENT_NAMES[row[1]], *row[2:]))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed: int
    truncation_bound: float = 0.0

    def to_dict(self):
        d = {"mean": self.mean, "stderr": self.stderr, "n": self.n, "seed": self.seed}
        if self.truncation_bound:
            d["truncation_bound"] = self.truncation_bound
        return d


# ---------------------------------------------------------------------------


def drift_flow(model, r0, t):
    """State after drifting for ``t`` from ``r0``, clamped at ``m`` once it gets there."""
    if not model.m <= r0 <= model.M:
        raise ModelError(f"state {r0} outside [{model.m}, {model.M}]", "domain")
    if t < 0:
        raise ModelError("negative duration", "domain")
    if t == 0:
        return float(r0)
    xs, cs = model_arrays(model)[:2]
    y, _ = K.flow(xs, cs, float(r0), float(t))
    return float(y)


def hitting_time(model, r0, level=None):
    """Time for the drift alone to carry ``r0`` down to ``level`` (default ``m``)."""
    level = model.m if level is None else level
    if not model.m <= level <= model.M:
        raise ModelError(f"level {level} outside [{model.m}, {model.M}]", "domain")
    xs, cs = model_arrays(model)[:2]
    return float(K.hit_time(xs, cs, float(r0), float(level)))


def segment_benefit(model, r, L, tol=BENEFIT_TOL):
    """Discounted benefit ``int_0^L exp(-delta u) G(R_u) du`` along a shock-free drift."""
    A = model_arrays(model)
    return float(K.segment_benefit(A.xs, A.cs, float(r), float(L), A.delta,
                                   A.gcode, A.gpar, A.gx, A.gy, tol,
                                   K.simpson_workspace()))


def _run(A, pol, r0, horizon, seed, stream, capacity, tol=BENEFIT_TOL, max_steps=MAX_STEPS):
    active, lo, hi, S = _policy_args(pol)
    bufs = (np.empty(capacity), np.empty(capacity, dtype=np.int8), np.empty(capacity),
            np.empty(capacity), np.empty(capacity), np.empty(capacity))
    out = K.run_path(A.xs, A.cs, A.lam, A.delta, A.k, A.gcode, A.gpar, A.gx, A.gy,
                     A.hcode, A.hpar, A.hx, A.hy, A.dcode, A.dpar, A.dx, A.dcw,
                     active, lo, hi, S, float(r0), float(horizon),
                     np.uint64(seed), np.uint64(stream), tol, max_steps, *bufs)
    return out, bufs


def simulate_policy(model, pol, r0, horizon=None, stream=None, tol=BENEFIT_TOL):
    """One event-by-event path of ``pol`` (``None`` or an empty policy = uncontrolled)."""
    if not model.m <= r0 <= model.M:
        raise ModelError(f"state {r0} outside [{model.m}, {model.M}]", "domain")
    stream = stream or ShockStream()
    horizon = math.inf if horizon is None else float(horizon)
    A = model_arrays(model)
    capacity = 256
    while True:
        (ben, cost, t_end, status, ne, nshock, nint), bufs = _run(
            A, pol, r0, horizon, stream.seed, stream.stream, capacity, tol)
        if ne <= capacity:
            break
        capacity = ne
    if status == K.END_STEP_CAP:
        raise RuntimeError("path did not terminate; pass a finite horizon")
    t, kind, b, a, bc, cc = (x[:ne].copy() for x in bufs)
    return TrajectoryRecord(t, kind, b, a, bc, cc, float(ben), float(cost),
                            float(t_end) if status == K.END_FAILURE else None,
                            float(t_end), int(nshock), int(nint))


def truncation_bound(model, horizon, pol=None):
    """Bound on ``|J - J_T|`` from stopping paths at ``horizon``.

    Benefits after ``T`` are at most ``e^{-delta T} max G / delta``; each later
    intervention costs at most ``H(M) - H(m) + k`` and they arrive no faster
    than shocks plus one drift cycle from ``S`` down to ``s_high``.
    """
    if horizon is None or math.isinf(horizon):
        return 0.0
    horizon = float(horizon)
    r = np.linspace(model.m, model.M, VALIDATION_SAMPLES)
    gmax = float(np.max(model.G(r)))
    tail = gmax / model.delta
    if pol is not None and not pol.empty:
        cmax = float(model.H(model.M) - model.H(model.m)) + model.k
        cycle = float(K.hit_time(*model_arrays(model)[:2], pol.S_target, pol.s_high))
        rate = model.lam + (1.0 / cycle if cycle > 0 else math.inf)
        tail = max(tail, cmax * rate / model.delta)
    return math.exp(-model.delta * horizon) * tail


def horizon_for(model, pol, eps):
    """Shortest horizon whose ``truncation_bound`` is at most ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    tail = truncation_bound(model, 0.0, pol)
    return max(0.0, math.log(tail / eps) / model.delta) if tail > eps else 0.0


def estimate_J(model, pol, r0, n, seed=0, horizon=None, tol=BENEFIT_TOL, threads=None,
               trunc_tol=None):
    """Mean and standard error of the discounted profit over ``n`` paths (streams 0..n-1).

    Paths run to failure unless a ``horizon`` is given, or ``trunc_tol`` asks for
    the shortest horizon whose truncation error is provably below it; either way
    the bound is returned as ``truncation_bound``.
    """
    if n < 2:
        raise ValueError("need at least two paths")
    if not model.m <= r0 <= model.M:
        raise ModelError(f"state {r0} outside [{model.m}, {model.M}]", "domain")
    if trunc_tol is not None:
        if horizon is not None:
            raise ValueError("give either horizon or trunc_tol, not both")
        horizon = horizon_for(model, pol, trunc_tol)
    payoffs = sample_payoffs(model, pol, r0, n, seed, horizon, tol, threads)
    # shifted by the first sample so that a deterministic run has exactly zero spread
    dev = payoffs - payoffs[0]
    return MCEstimate(float(payoffs[0] + np.mean(dev)),
                      float(np.std(dev, ddof=1) / math.sqrt(n)),
                      int(n), int(seed), truncation_bound(model, horizon, pol))


def sample_payoffs(model, pol, r0, n, seed=0, horizon=None, tol=BENEFIT_TOL, threads=None):
    """Discounted profit of paths ``0..n-1``; identical for any thread count."""
    A = model_arrays(model)
    active, lo, hi, S = _policy_args(pol)
    horizon = math.inf if horizon is None else float(horizon)
    out = np.empty(n)
    status = np.empty(n, dtype=np.int64)

    def run(a, b):
        K.mc_payoffs(A.xs, A.cs, A.lam, A.delta, A.k, A.gcode, A.gpar, A.gx, A.gy,
                     A.hcode, A.hpar, A.hx, A.hy, A.dcode, A.dpar, A.dx, A.dcw,
                     active, lo, hi, S, float(r0), horizon, np.uint64(seed), a, tol, MAX_STEPS,
                     out[a:b], status[a:b])

    threads = int(threads or 1)
    if threads > 1 and n > threads:
        edges = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda ab: run(*ab), zip(edges[:-1], edges[1:])))
    else:
        run(0, n)
    if np.any(status == K.END_STEP_CAP):
        raise RuntimeError("some paths did not terminate; pass a finite horizon")
    return out


def coupled_pair(model, r, r2, T, stream=None):
    """Common-shock deviation ``sup |R^r - R^r2|`` up to ``T`` and the Gronwall bound."""
    for x in (r, r2):
        if not model.m <= x <= model.M:
            raise ModelError(f"state {x} outside [{model.m}, {model.M}]", "domain")
    stream = stream or ShockStream()
    A = model_arrays(model)
    sup = K.coupled_sup(A.xs, A.cs, A.lam, A.dcode, A.dpar, A.dx, A.dcw, float(r), float(r2),
                        float(T), np.uint64(stream.seed), np.uint64(stream.stream))
    return float(sup), abs(r - r2) * math.exp(model.rate.lipschitz_L * T)


def coupling_experiment(model, n, T, seed=0):
    """``n`` random ``(r, r', seed)`` triples; returns ``(observed_sup, bound)`` arrays."""
    rng = np.random.default_rng(seed)
    r1 = rng.uniform(model.m, model.M, n)
    r2 = rng.uniform(model.m, model.M, n)
    seeds = rng.integers(0, 2**63, n, dtype=np.uint64)
    A = model_arrays(model)
    out = np.empty(n)
    K.coupled_batch(A.xs, A.cs, A.lam, A.dcode, A.dpar, A.dx, A.dcw, r1, r2, float(T), seeds, out)
    return out, np.abs(r1 - r2) * math.exp(model.rate.lipschitz_L * T)
