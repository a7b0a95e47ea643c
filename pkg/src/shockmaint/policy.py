"""Threshold policy read off a converged value field."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelError
from .solve import DEFAULT_TOL, intervention_values

log = logging.getLogger(__name__)

LET_IT_DIE = "let-it-die"
INTERVENTION = "intervention"
CONTINUATION = "continuation"


class PolicyError(ValueError):
    code = "policy_error"


@dataclass(frozen=True, eq=False)
class ThresholdPolicy:
    """Intervene on ``[s_low, s_high]`` by restoring to ``S_target``; otherwise wait.

    With an empty intervention set the thresholds are all ``M`` and ``empty`` is set.
    """

    s_low: float
    s_high: float
    S_target: float
    m: float
    M: float
    empty: bool = False
    gap_tol: float = 100 * DEFAULT_TOL
    N: int | None = None
    intervention_mask: np.ndarray | None = field(default=None, repr=False)
    # (first, last) node indices of runs missing from the mask inside [s_low, s_high]
    holes: tuple = ()

    def __post_init__(self):
        if self.empty:
            return
        if not self.m <= self.s_low <= self.s_high <= self.M:
            raise PolicyError(f"need m <= s_low <= s_high <= M, got "
                              f"({self.s_low}, {self.s_high}) on [{self.m}, {self.M}]")
        if not self.s_high < self.S_target <= self.M:
            raise PolicyError(f"need s_high < S <= M, got s_high={self.s_high}, S={self.S_target}")

    @classmethod
    def empty_policy(cls, m, M, **kw):
        return cls(M, M, M, m, M, empty=True, **kw)

    @property
    def is_interval(self):
        return not self.holes

    def to_dict(self):
        return {"s_low": self.s_low, "s_high": self.s_high, "S": self.S_target,
                "empty": self.empty, "gap_tol": self.gap_tol, "N": self.N,
                "m": self.m, "M": self.M}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(float(doc["s_low"]), float(doc["s_high"]), float(doc["S"]),
                       float(doc["m"]), float(doc["M"]), empty=bool(doc.get("empty", False)),
                       gap_tol=float(doc.get("gap_tol", 100 * DEFAULT_TOL)), N=doc.get("N"))
        except KeyError as exc:
            raise PolicyError(f"policy document missing {exc}") from None


def _runs(idx):
    """Maximal runs of consecutive integers in a sorted index array."""
    if idx.size == 0:
        return []
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    return list(zip(starts.tolist(), ends.tolist()))


def extract_policy(dm, vf, gap_tol=None):
    """Intervention set ``{V - M V <= gap_tol}``, its hull ``[s_low, s_high]``, and target S.

    ``S`` is the smallest maximiser of ``V_j - H_j`` over nodes at or above ``s_high``.
    Holes in the set are logged and kept in ``holes`` rather than raised.
    """
    if not vf.converged:
        raise PolicyError("value field did not converge; refusing to extract a policy")
    if vf.model_id != dm.fingerprint:
        raise PolicyError("value field was computed on a different discrete model")
    if gap_tol is None:
        gap_tol = 100 * vf.tol
    V = vf.values
    r = dm.r
    interv, _ = intervention_values(dm, V)
    mask = (V - interv) <= gap_tol
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return ThresholdPolicy.empty_policy(dm.grid.m, dm.grid.M, gap_tol=gap_tol, N=dm.N,
                                            intervention_mask=mask)
    lo, hi = int(idx[0]), int(idx[-1])
    tail = V[hi:] - dm.H[hi:]
    j = hi + int(np.argmax(tail))
    runs = _runs(np.nonzero(~mask[lo:hi + 1])[0] + lo)
    for a, b in runs:
        log.info("intervention set hole at nodes %d..%d (width %.3g)", a, b, (b - a + 1) * dm.h)
    return ThresholdPolicy(float(r[lo]), float(r[hi]), float(r[j]), dm.grid.m, dm.grid.M,
                           gap_tol=gap_tol, N=dm.N, intervention_mask=mask, holes=tuple(runs))


def policy_action(pol, r):
    """``(action, classification)``; action is ``None`` or ``("intervene", S)``."""
    if not pol.m <= r <= pol.M:
        raise ModelError(f"state {r} outside [{pol.m}, {pol.M}]", "domain")
    if pol.empty:
        return None, CONTINUATION
    if r < pol.s_low:
        return None, LET_IT_DIE
    if r <= pol.s_high:
        return ("intervene", pol.S_target), INTERVENTION
    return None, CONTINUATION
