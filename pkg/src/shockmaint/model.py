"""Problem instance: deterioration dynamics, shock law, benefit and maintenance cost.

Every component is a small frozen dataclass holding a ``kind`` tag and its
parameters exactly as they appear in the JSON configuration, so a model
round-trips through :func:`model_from_dict` / :func:`model_to_dict` unchanged.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
from scipy.special import ndtr

# Function codes shared with the compiled kernels (see _kernels._eval_fn).
FN_CONSTANT = 0
FN_SATEXP = 1
FN_TABULATED = 2
FN_SQRT = 3
FN_POWER = 4

DIST_LOGNORMAL = 0
DIST_UNIFORM = 1
DIST_POINT = 2
DIST_EMPIRICAL = 3

VALIDATION_SAMPLES = 2048


class ModelError(ValueError):
    """Malformed configuration or an operation outside the model's domain."""

    code = "model_error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(ModelError):
    code = "validation_failed"

    def __init__(self, report):
        self.report = report
        msgs = "; ".join(i.message for i in report.errors)
        super().__init__(f"model failed validation: {msgs}")


class FixedCostError(ModelError):
    code = "QVI requires positive fixed cost"

    def __init__(self, k):
        super().__init__(f"QVI requires positive fixed cost (got k={k!r})")


def _freeze(params):
    out = {}
    for key, val in params.items():
        if isinstance(val, (list, tuple, np.ndarray)):
            val = tuple(float(v) for v in val)
        elif isinstance(val, (int, float, np.floating, np.integer)) and not isinstance(val, bool):
            val = float(val)
        out[key] = val
    return MappingProxyType(out)


def _table(params, xkey, ykey):
    xs = np.asarray(params[xkey], dtype=float)
    ys = np.asarray(params[ykey], dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ModelError(f"tabulated '{xkey}'/'{ykey}' must be equal-length lists of >= 2 numbers",
                         "schema")
    if np.any(np.diff(xs) <= 0):
        raise ModelError(f"tabulated '{xkey}' must be strictly increasing", "schema")
    return xs, ys


def _check_keys(section, given, required, optional=()):
    given = set(given)
    missing = set(required) - given
    unknown = given - set(required) - set(optional)
    if missing:
        raise ModelError(f"{section}: missing key(s) {sorted(missing)}", "schema")
    if unknown:
        raise ModelError(f"{section}: unknown key(s) {sorted(unknown)}", "schema")


# ---------------------------------------------------------------------------
# Deterioration rate


_RATE_KEYS = {"constant": ("c0",), "affine": ("alpha", "kappa"), "tabulated": ("r", "c")}


@dataclass(frozen=True)
class DeteriorationRate:
    """Progressive decay rate ``c(r)``; every built-in kind is piecewise linear."""

    kind: str
    params: Mapping[str, Any]
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in _RATE_KEYS:
            raise ModelError(f"rate: unknown kind {self.kind!r}", "schema")
        _check_keys("rate", self.params, _RATE_KEYS[self.kind])
        object.__setattr__(self, "params", _freeze(self.params))
        if self.kind == "tabulated":
            _table(self.params, "r", "c")

    @classmethod
    def constant(cls, c0):
        return cls("constant", {"c0": c0})

    @classmethod
    def affine(cls, alpha, kappa):
        return cls("affine", {"alpha": alpha, "kappa": kappa})

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(r, p["c0"])
        if self.kind == "affine":
            return p["alpha"] * (p["kappa"] - r)
        xs, ys = _table(p, "r", "c")
        return np.interp(r, xs, ys)

    def knots(self, m, M):
        """Breakpoints ``(xs, cs)`` of the rate restricted to ``[m, M]``."""
        if self.kind == "tabulated":
            xs, ys = _table(self.params, "r", "c")
            inner = xs[(xs > m) & (xs < M)]
            xs = np.concatenate(([m], inner, [M]))
        else:
            xs = np.array([m, M], dtype=float)
        return xs, np.asarray(self(xs), dtype=float)

    @property
    def lipschitz_L(self):
        if self.lipschitz is not None:
            return float(self.lipschitz)
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            return abs(self.params["alpha"])
        xs, ys = _table(self.params, "r", "c")
        return float(np.max(np.abs(np.diff(ys) / np.diff(xs))))


def estimate_lipschitz(func, m, M, n=10_000, safety=1.05):
    """Max adjacent slope of ``func`` over ``n`` uniform samples, times ``safety``."""
    r = np.linspace(m, M, n)
    v = np.asarray(func(r), dtype=float)
    return float(np.max(np.abs(np.diff(v)) / np.diff(r))) * safety


# ---------------------------------------------------------------------------
# Shock size distribution


_DIST_KEYS = {
    "lognormal": (("mu", "sigma_sq"), ()),
    "uniform": (("a", "b"), ()),
    "point_mass": (("s0",), ()),
    "empirical": (("values",), ("weights",)),
}


@dataclass(frozen=True)
class ShockDistribution:
    """Law ``F`` of a single shock size. ``cdf(x) = P(S <= x)``."""

    kind: str
    params: Mapping[str, Any]

    def __post_init__(self):
        if self.kind not in _DIST_KEYS:
            raise ModelError(f"shocks.dist: unknown kind {self.kind!r}", "schema")
        _check_keys("shocks.dist", self.params, *_DIST_KEYS[self.kind])
        object.__setattr__(self, "params", _freeze(self.params))
        p = self.params
        if self.kind == "lognormal" and not p["sigma_sq"] > 0:
            raise ModelError("lognormal sigma_sq must be positive", "schema")
        if self.kind == "uniform" and not p["b"] > p["a"]:
            raise ModelError("uniform requires a < b", "schema")
        if self.kind == "empirical":
            vals = np.asarray(p["values"], dtype=float)
            w = np.asarray(p.get("weights", np.ones_like(vals)), dtype=float)
            if vals.size == 0 or w.shape != vals.shape or np.any(w < 0) or w.sum() <= 0:
                raise ModelError("empirical needs values and matching non-negative weights", "schema")

    @classmethod
    def lognormal(cls, mu, sigma_sq):
        return cls("lognormal", {"mu": mu, "sigma_sq": sigma_sq})

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", {"a": a, "b": b})

    @classmethod
    def point_mass(cls, s0):
        return cls("point_mass", {"s0": s0})

    def _empirical(self):
        vals = np.asarray(self.params["values"], dtype=float)
        w = np.asarray(self.params.get("weights", np.ones_like(vals)), dtype=float)
        order = np.argsort(vals, kind="stable")
        vals, w = vals[order], w[order]
        return vals, np.cumsum(w) / w.sum()

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "lognormal":
            sigma = math.sqrt(p["sigma_sq"])
            with np.errstate(divide="ignore"):
                z = (np.log(np.where(x > 0, x, 1.0)) - p["mu"]) / sigma
            return np.where(x > 0, ndtr(z), 0.0)
        if self.kind == "uniform":
            return np.clip((x - p["a"]) / (p["b"] - p["a"]), 0.0, 1.0)
        if self.kind == "point_mass":
            return np.where(x >= p["s0"], 1.0, 0.0)
        vals, cw = self._empirical()
        idx = np.searchsorted(vals, x, side="right")
        return np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)

    def __call__(self, x):
        return self.cdf(x)

    def density_bound(self):
        """Upper bound on the density, or ``inf`` for atoms."""
        p = self.params
        if self.kind == "lognormal":
            sigma = math.sqrt(p["sigma_sq"])
            # mode of the lognormal density
            mode = math.exp(p["mu"] - p["sigma_sq"])
            return math.exp(-(math.log(mode) - p["mu"]) ** 2 / (2 * p["sigma_sq"])) / (
                mode * sigma * math.sqrt(2 * math.pi))
        if self.kind == "uniform":
            return 1.0 / (p["b"] - p["a"])
        return math.inf


# ---------------------------------------------------------------------------
# Benefit and cost


_BENEFIT_KEYS = {"constant": ("g0",), "saturating_exp": ("C", "rate"), "tabulated": ("r", "g")}
_COST_KEYS = {
    "sqrt": (("shift",), ("scale",)),
    "power": (("p",), ("scale",)),
    "saturating_exp": (("a", "b"), ()),
    "tabulated": (("r", "H"), ()),
}


def _saturating(amp, rate, r):
    return amp * (1.0 - np.exp(-rate * r))


@dataclass(frozen=True)
class EconomicModel:
    """Running benefit ``G`` and discount rate ``delta``.

    ``saturating_exp`` is ``C * (1 - exp(-rate * r))``; a negative ``rate``
    reproduces the misprinted benefit, which validation rejects.
    """

    kind: str
    params: Mapping[str, Any]
    delta: float

    def __post_init__(self):
        if self.kind not in _BENEFIT_KEYS:
            raise ModelError(f"benefit: unknown kind {self.kind!r}", "schema")
        _check_keys("benefit", self.params, _BENEFIT_KEYS[self.kind])
        object.__setattr__(self, "params", _freeze(self.params))
        object.__setattr__(self, "delta", float(self.delta))
        if self.kind == "tabulated":
            _table(self.params, "r", "g")

    def G(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(r, p["g0"])
        if self.kind == "saturating_exp":
            return _saturating(p["C"], p["rate"], r)
        xs, ys = _table(p, "r", "g")
        return np.interp(r, xs, ys)

    def encode(self):
        p = self.params
        if self.kind == "constant":
            return FN_CONSTANT, np.array([p["g0"]]), np.zeros(1), np.zeros(1)
        if self.kind == "saturating_exp":
            return FN_SATEXP, np.array([p["C"], p["rate"]]), np.zeros(1), np.zeros(1)
        xs, ys = _table(p, "r", "g")
        return FN_TABULATED, np.zeros(1), xs, ys


@dataclass(frozen=True)
class CostModel:
    """Variable repair cost ``H`` and fixed cost ``k`` per intervention."""

    kind: str
    params: Mapping[str, Any]
    k: float

    def __post_init__(self):
        if self.kind not in _COST_KEYS:
            raise ModelError(f"cost: unknown kind {self.kind!r}", "schema")
        _check_keys("cost", self.params, *_COST_KEYS[self.kind])
        object.__setattr__(self, "params", _freeze(self.params))
        object.__setattr__(self, "k", float(self.k))
        if self.kind == "tabulated":
            _table(self.params, "r", "H")

    def H(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        scale = p.get("scale", 1.0)
        if self.kind == "sqrt":
            return scale * np.sqrt(r + p["shift"])
        if self.kind == "power":
            return scale * r ** p["p"]
        if self.kind == "saturating_exp":
            return _saturating(p["a"], p["b"], r)
        xs, ys = _table(p, "r", "H")
        return np.interp(r, xs, ys)

    @property
    def has_derivative(self):
        return self.kind != "tabulated"

    def dH(self, r):
        """Analytic derivative ``H'``; tabulated costs have none."""
        r = np.asarray(r, dtype=float)
        p = self.params
        scale = p.get("scale", 1.0)
        if self.kind == "sqrt":
            return 0.5 * scale / np.sqrt(r + p["shift"])
        if self.kind == "power":
            return scale * p["p"] * r ** (p["p"] - 1.0)
        if self.kind == "saturating_exp":
            return p["a"] * p["b"] * np.exp(-p["b"] * r)
        raise ModelError("tabulated cost has no analytic derivative", "unsupported")

    def encode(self):
        p = self.params
        scale = p.get("scale", 1.0)
        if self.kind == "sqrt":
            return FN_SQRT, np.array([p["shift"], scale]), np.zeros(1), np.zeros(1)
        if self.kind == "power":
            return FN_POWER, np.array([p["p"], scale]), np.zeros(1), np.zeros(1)
        if self.kind == "saturating_exp":
            return FN_SATEXP, np.array([p["a"], p["b"]]), np.zeros(1), np.zeros(1)
        xs, ys = _table(p, "r", "H")
        return FN_TABULATED, np.zeros(1), xs, ys


def intervention_cost(cost, r, zeta, upper=None):
    """Cost ``H(r + zeta) - H(r) + k`` of lifting the state from ``r`` by ``zeta``."""
    if zeta < 0:
        raise ModelError("intervention size must be non-negative", "domain")
    if upper is not None and r + zeta > upper:
        raise ModelError(f"r + zeta = {r + zeta} exceeds the maximum level {upper}", "domain")
    if zeta == 0:
        return cost.k
    return float(cost.H(r + zeta) - cost.H(r)) + cost.k


# ---------------------------------------------------------------------------
# Full instance


@dataclass(frozen=True)
class SystemModel:
    m: float
    M: float
    rate: DeteriorationRate
    lam: float
    shocks: ShockDistribution
    econ: EconomicModel
    cost: CostModel
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def delta(self):
        return self.econ.delta

    @property
    def k(self):
        return self.cost.k

    def with_k(self, k):
        return replace(self, cost=replace(self.cost, k=float(k)))

    def c(self, r):
        return self.rate(r)

    def G(self, r):
        return self.econ.G(r)

    def H(self, r):
        return self.cost.H(r)

    def F(self, x):
        return self.shocks.cdf(x)


def evaluate(model, r):
    """Pointwise values of ``c``, ``G``, ``H`` at ``r`` plus a handle on the shock CDF."""
    if not model.m <= r <= model.M:
        raise ModelError(f"state {r} outside [{model.m}, {model.M}]", "domain")
    return {
        "c": float(model.c(r)),
        "G": float(model.G(r)),
        "H": float(model.H(r)),
        "F": model.shocks.cdf,
    }


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def errors(self):
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return {"ok": self.ok,
                "issues": [{"severity": i.severity, "code": i.code, "message": i.message}
                           for i in self.issues]}


def validate_model(model, n=VALIDATION_SAMPLES):
    """Check the standing assumptions on a uniform sample of ``[m, M]``.

    Errors block solving; warnings (e.g. a shock law whose support misses part of
    ``[0, M - m]``) are informational.
    """
    out = []

    def err(code, msg):
        out.append(Issue("error", code, msg))

    if not (np.isfinite(model.m) and np.isfinite(model.M) and model.m < model.M):
        err("bounds", f"need finite m < M (got m={model.m}, M={model.M})")
        return ValidationReport(tuple(out))
    if not (np.isfinite(model.lam) and model.lam >= 0):
        err("intensity_negative", f"shock intensity must be >= 0 (got {model.lam})")
    if not (np.isfinite(model.delta) and model.delta > 0):
        err("discount_nonpositive", f"discount rate must be positive (got {model.delta})")
    if not (np.isfinite(model.k) and model.k >= 0):
        err("fixed_cost_negative", f"fixed cost must be >= 0 (got {model.k})")

    r = np.linspace(model.m, model.M, n)
    with np.errstate(all="ignore"):
        c = model.c(r)
        g = model.G(r)
        h = model.H(r)

    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        err("rate_not_positive", "rate not positive on [m, M]")
    elif np.any(np.diff(c) > 0):
        err("rate_increasing", "rate increasing somewhere on [m, M]")
    if np.all(np.isfinite(c)):
        L = model.rate.lipschitz_L
        slopes = np.abs(np.diff(c)) / np.diff(r)
        if np.any(slopes > L * (1 + 1e-9) + 1e-12):
            err("rate_lipschitz", f"rate slope {slopes.max():.6g} exceeds Lipschitz constant {L:.6g}")

    if not np.all(np.isfinite(g)) or np.any(g < 0) or np.any(np.diff(g) < 0):
        err("benefit_invalid", "benefit decreasing/negative on (0,M]" if model.m == 0
            else "benefit decreasing/negative on [m,M]")
    if not np.all(np.isfinite(h)) or np.any(np.diff(h) <= 0):
        err("cost_not_increasing", "maintenance cost H not strictly increasing on [m, M]")

    span = model.M - model.m
    xs = np.linspace(0.0, span, n)
    F = model.shocks.cdf(xs)
    if np.any(np.diff(F) < 0):
        err("cdf_decreasing", "shock CDF decreasing")
    if float(model.shocks.cdf(np.nextafter(0.0, -1.0))) != 0.0:
        err("cdf_negative_support", "shock CDF has mass below zero")
    far = max(1e6, 1e3 * span)
    if float(model.shocks.cdf(far)) < 1 - 1e-12:
        err("cdf_not_normalized", "shock CDF does not tend to 1")
    if not np.all(np.diff(F) > 0):
        out.append(Issue("warning", "support_gap",
                         "shock support does not contain [0, M - m]"))
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# JSON configuration


def model_from_dict(doc):
    _check_keys("model", doc, ("bounds", "rate", "shocks", "benefit", "cost"), ("name",))
    b = doc["bounds"]
    _check_keys("bounds", b, ("m", "M"))

    rate = dict(doc["rate"])
    kind = rate.pop("kind", None)
    lip = rate.pop("lipschitz", None)

    shocks = doc["shocks"]
    _check_keys("shocks", shocks, ("lambda", "dist"))
    dist = dict(shocks["dist"])
    dkind = dist.pop("kind", None)

    ben = dict(doc["benefit"])
    bkind = ben.pop("kind", None)
    if "delta" not in ben:
        raise ModelError("benefit: missing key ['delta']", "schema")
    delta = ben.pop("delta")

    cost = dict(doc["cost"])
    ckind = cost.pop("kind", None)
    if "k" not in cost:
        raise ModelError("cost: missing key ['k']", "schema")
    k = cost.pop("k")

    nums = [b["m"], b["M"], shocks["lambda"], delta, k]
    if lip is not None:
        nums.append(lip)
    for v in nums:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ModelError(f"expected a finite number, got {v!r}", "schema")

    return SystemModel(
        m=b["m"], M=b["M"],
        rate=DeteriorationRate(kind, rate, None if lip is None else float(lip)),
        lam=shocks["lambda"],
        shocks=ShockDistribution(dkind, dist),
        econ=EconomicModel(bkind, ben, delta),
        cost=CostModel(ckind, cost, k),
        name=str(doc.get("name", "")),
    )


def _plain(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def model_to_dict(model):
    rate = {"kind": model.rate.kind, **_plain(model.rate.params)}
    if model.rate.lipschitz is not None:
        rate["lipschitz"] = model.rate.lipschitz
    doc = {
        "bounds": {"m": model.m, "M": model.M},
        "rate": rate,
        "shocks": {"lambda": model.lam,
                   "dist": {"kind": model.shocks.kind, **_plain(model.shocks.params)}},
        "benefit": {"kind": model.econ.kind, **_plain(model.econ.params), "delta": model.delta},
        "cost": {"kind": model.cost.kind, **_plain(model.cost.params), "k": model.k},
    }
    if model.name:
        doc = {"name": model.name, **doc}
    return doc


_DATA = Path(__file__).parent / "data"
BUILTIN_EXAMPLES = ("ex1", "ex2", "ex3")


def builtin_path(name):
    stem = Path(str(name)).stem
    if stem not in BUILTIN_EXAMPLES:
        raise ModelError(f"no built-in example {name!r}", "io")
    return _DATA / f"{stem}.json"


def resolve_config_path(path):
    """Filesystem path, falling back to the bundled ``ex1``..``ex3`` by basename."""
    p = Path(path)
    if p.exists():
        return p
    if p.stem in BUILTIN_EXAMPLES and p.suffix in ("", ".json"):
        return builtin_path(p.stem)
    raise ModelError(f"config not found: {path}", "io")


def load_model(path):
    p = resolve_config_path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: invalid JSON ({exc})", "schema") from None
    if not isinstance(doc, dict):
        raise ModelError(f"{p}: top level must be an object", "schema")
    return model_from_dict(doc)


def example_model(which, k=0.05):
    """One of the three shipped numerical examples, optionally with another fixed cost."""
    return load_model(builtin_path(f"ex{int(which)}")).with_k(k)
