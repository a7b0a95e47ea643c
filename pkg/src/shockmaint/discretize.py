"""Markov-chain approximation on a uniform grid.

Shock sizes are lumped to the nearest node offset (midpoint binning), so on a
uniform grid the jump kernel is Toeplitz: node ``i`` sends mass ``w[d]`` to node
``i - d`` and the remainder ``q[i]`` to failure.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft, sparse

from .model import FixedCostError, ModelError, ValidationError, validate_model

DEFAULT_N = 2001
# Per-row truncation of the shock tail; dropped mass is below this.
TAIL_CUTOFF = 1e-14
# Above this many multiply-adds per application the FFT route is used.
_DIRECT_LIMIT = 200_000


@dataclass(frozen=True)
class Grid:
    m: float
    M: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ModelError(f"grid needs N >= 3 nodes (got {self.N})", "domain")
        if not self.m < self.M:
            raise ModelError(f"grid needs m < M (got m={self.m}, M={self.M})", "domain")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self):
        return (self.M - self.m) / (self.N - 1)

    @cached_property
    def nodes(self):
        r = self.m + np.arange(self.N) * self.h
        r[-1] = self.M
        r.flags.writeable = False
        return r

    def index(self, r):
        """Nearest node index of state ``r``."""
        return int(np.clip(np.rint((r - self.m) / self.h), 0, self.N - 1))


def build_grid(m, M, N):
    return Grid(float(m), float(M), N)


class JumpKernel:
    """Sub-stochastic lower-triangular jump matrix with explicit failure mass.

    ``weights[d]`` is the probability that a shock moves the state down by ``d``
    cells; ``fail_mass[i]`` is the probability that a shock from node ``i`` lands
    below ``m``.
    """

    def __init__(self, weights, fail_mass):
        self.weights = np.asarray(weights, dtype=float)
        self.fail_mass = np.asarray(fail_mass, dtype=float)
        self.N = self.fail_mass.size
        self.weights.flags.writeable = False
        self.fail_mass.flags.writeable = False
        self._fft = None

    @classmethod
    def empty(cls, N):
        return cls(np.zeros(0), np.zeros(N))

    @property
    def is_empty(self):
        return self.weights.size == 0 or not np.any(self.weights)

    def row(self, i):
        """Nonzero ``(j, p_ij)`` pairs of row ``i``, ascending in ``j``."""
        d = np.arange(min(i, self.weights.size - 1), -1, -1)
        p = self.weights[d]
        keep = p > 0
        return (i - d)[keep], p[keep]

    def row_sums(self):
        """``sum_j p_ij + q_i`` for every node."""
        cs = np.cumsum(self.weights)
        if cs.size == 0:
            return self.fail_mass.copy()
        idx = np.minimum(np.arange(self.N), cs.size - 1)
        return cs[idx] + self.fail_mass

    def to_sparse(self):
        rows, cols, vals = [], [], []
        for i in range(self.N):
            j, p = self.row(i)
            rows.append(np.full(j.size, i))
            cols.append(j)
            vals.append(p)
        if not rows:
            return sparse.csr_matrix((self.N, self.N))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.N, self.N))

    def apply(self, V):
        """``(P V)_i = sum_d w[d] V[i-d]``: a causal convolution."""
        V = np.asarray(V, dtype=float)
        D = self.weights.size
        if D == 0:
            return np.zeros_like(V)
        if self.N * D <= _DIRECT_LIMIT:
            return np.convolve(V, self.weights)[: self.N]
        if self._fft is None:
            n = fft.next_fast_len(self.N + D - 1, real=True)
            self._fft = (n, fft.rfft(self.weights, n))
        n, W = self._fft
        out = fft.irfft(fft.rfft(V, n) * W, n)[: self.N]
        if V.min() >= 0.0:
            # P >= 0 maps V >= 0 to PV >= 0; drop the FFT's sign noise
            np.maximum(out, 0.0, out=out)
        return out


def build_jump_kernel(grid, dist, cutoff=TAIL_CUTOFF):
    h = grid.h
    upper = np.arange(grid.N) * h + 0.5 * h
    F_up = np.asarray(dist.cdf(upper), dtype=float)
    F_0m = float(dist.cdf(np.nextafter(0.0, -1.0)))
    w = np.diff(np.concatenate(([F_0m], F_up)))
    np.maximum(w, 0.0, out=w)
    q = np.clip(1.0 - F_up, 0.0, 1.0)
    reach = np.nonzero(F_up >= 1.0 - cutoff)[0]
    if reach.size:
        w = w[: reach[0] + 1]
    nz = np.nonzero(w)[0]
    w = w[: nz[-1] + 1] if nz.size else w[:0]
    return JumpKernel(w, q)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    grid: Grid
    kernel: JumpKernel
    c: np.ndarray
    G: np.ndarray
    H: np.ndarray
    lam: float
    delta: float
    k: float

    @property
    def N(self):
        return self.grid.N

    @property
    def h(self):
        return self.grid.h

    @property
    def r(self):
        return self.grid.nodes

    @cached_property
    def drift_rate(self):
        """Upwind jump rate ``c_i / h`` to the left neighbour."""
        return self.c / self.grid.h

    @cached_property
    def fingerprint(self):
        sha = hashlib.sha1()
        for arr in (self.grid.nodes, self.kernel.weights, self.kernel.fail_mass,
                    self.c, self.G, self.H, np.array([self.lam, self.delta, self.k])):
            sha.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return sha.hexdigest()[:16]

    def contraction_modulus(self):
        a = self.drift_rate
        return float(np.max((a + self.lam) / (self.delta + a + self.lam)))


def discretize_model(model, N=DEFAULT_N):
    report = validate_model(model)
    if not report.ok:
        raise ValidationError(report)
    if not model.k > 0:
        raise FixedCostError(model.k)
    grid = build_grid(model.m, model.M, N)
    r = grid.nodes
    kernel = (build_jump_kernel(grid, model.shocks) if model.lam > 0
              else JumpKernel.empty(grid.N))
    arrays = [np.asarray(f(r), dtype=float) for f in (model.c, model.G, model.H)]
    for a in arrays:
        a.flags.writeable = False
    return DiscreteModel(grid, kernel, *arrays, lam=model.lam, delta=model.delta, k=model.k)
