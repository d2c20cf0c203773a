"""Input-level DP: calibrated Gaussian noise on features at inference time.

Modes: ``off`` (identity), ``full`` (noise every feature), ``selective``
(noise only an attribution-chosen subset — the point of the whole exercise:
fewer targeted features means each one gets a larger share of the budget and
therefore less noise).

Mechanism: normalized features are clamped to [-B, B] (so per-feature
sensitivity is Delta = 2B), the total (epsilon, delta) is split uniformly
across the targeted set under basic composition, and each targeted coordinate
receives Gaussian noise with the *analytic* calibration (binary search on the
exact Gaussian-mechanism condition) — valid at any epsilon, unlike the
classical sqrt(2 ln(1.25/delta))/epsilon rule which only holds for
epsilon < 1.

The budget split is represented as (total, share count), so the "shares sum
to the total" invariant is exact by construction rather than a float identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources as _importlib_resources

import numpy as np
from scipy.special import log_ndtr, ndtr

MODES = ("off", "full", "selective")
DEFAULT_CLAMP = 3.0  # ~3 standard deviations on normalized features


def privacy_levels() -> dict[str, float]:
    """Named privacy level -> total epsilon, loaded from package data.

    Note the naming convention: *high privacy* is the smallest budget.
    """
    ref = _importlib_resources.files("privatexr") / "resources" / "privacy_levels.json"
    levels = json.loads(ref.read_text(encoding="utf-8"))
    return {name: float(eps) for name, eps in levels.items()}


@dataclass(frozen=True)
class FeatureDpSpec:
    """What to noise and with what budget."""

    mode: str
    epsilon: float | None = None  # total budget across targeted features
    delta: float | None = None
    selected: tuple[int, ...] | None = None  # selective mode only
    clamp: float = DEFAULT_CLAMP
    level: str | None = None  # informational: which preset produced epsilon

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "off":
            if self.selected is not None:
                raise ValueError("mode 'off' takes no feature selection")
            return
        if self.epsilon is None or self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta is None or not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0,1)")
        if self.clamp <= 0:
            raise ValueError("clamp bound must be positive")
        if self.mode == "selective":
            if not self.selected:
                raise ValueError("selective mode requires a non-empty feature selection")
            sel = tuple(int(i) for i in self.selected)
            if len(set(sel)) != len(sel) or min(sel) < 0:
                raise ValueError("selected indices must be distinct and non-negative")
            object.__setattr__(self, "selected", sel)
        elif self.selected is not None:
            raise ValueError("mode 'full' takes no feature selection")

    @classmethod
    def from_level(cls, mode: str, level: str, delta: float, selected=None,
                   clamp: float = DEFAULT_CLAMP) -> "FeatureDpSpec":
        table = privacy_levels()
        if level not in table:
            raise ValueError(f"unknown privacy level {level!r}; have {sorted(table)}")
        return cls(mode=mode, epsilon=table[level], delta=delta,
                   selected=selected, clamp=clamp, level=level)


def gaussian_mechanism_holds(sigma: float, eps: float, delta: float, sensitivity: float) -> bool:
    """Exact (eps, delta)-DP condition for N(0, sigma^2) noise on a
    sensitivity-Delta query: Phi(D/2s - es/D) - e^eps Phi(-D/2s - es/D) <= delta."""
    a = sensitivity / (2 * sigma) - eps * sigma / sensitivity
    b = -sensitivity / (2 * sigma) - eps * sigma / sensitivity
    # e^eps * Phi(b) in log space; eps can be huge (limit checks use 1e6)
    return ndtr(a) - np.exp(eps + log_ndtr(b)) <= delta


def calibrate_sigma(eps: float, delta: float, sensitivity: float) -> float:
    """Smallest sigma meeting the exact Gaussian-mechanism condition.

    Binary search to relative tolerance 1e-9; the condition is monotone
    (larger sigma is always at least as private).
    """
    if eps <= 0 or not 0.0 < delta < 1.0 or sensitivity <= 0:
        raise ValueError("need eps > 0, delta in (0,1), sensitivity > 0")
    hi = sensitivity
    while not gaussian_mechanism_holds(hi, eps, delta, sensitivity):
        hi *= 2.0
        if hi > 1e12 * sensitivity:  # pragma: no cover - condition always attainable
            raise RuntimeError("sigma search diverged")
    lo = hi / 2.0
    while gaussian_mechanism_holds(lo, eps, delta, sensitivity):
        hi = lo
        lo /= 2.0
        if lo < 1e-15 * sensitivity:
            return hi  # sigma -> 0 limit (enormous eps)
    while (hi - lo) / hi > 1e-9:
        mid = 0.5 * (lo + hi)
        if gaussian_mechanism_holds(mid, eps, delta, sensitivity):
            hi = mid
        else:
            lo = mid
    return hi


def budget_split(spec: FeatureDpSpec, d: int) -> tuple[tuple[int, ...], float, float]:
    """(targeted indices, per-feature epsilon, per-feature delta)."""
    if spec.mode == "off":
        return (), 0.0, 0.0
    if spec.mode == "full":
        targets = tuple(range(d))
    else:
        targets = spec.selected
        if max(targets) >= d:
            raise ValueError(f"selected feature {max(targets)} out of range for d={d}")
    share = len(targets)
    return targets, spec.epsilon / share, spec.delta / share


def feature_sigma(spec: FeatureDpSpec, d: int) -> float:
    """Per-feature noise scale for the uniform budget split."""
    targets, eps_i, delta_i = budget_split(spec, d)
    if not targets:
        return 0.0
    return calibrate_sigma(eps_i, delta_i, 2.0 * spec.clamp)


def privatize_batch(features: np.ndarray, spec: FeatureDpSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Row-wise privatization; rows consume the rng stream in order."""
    x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("features must be a vector or an (n, d) matrix")
    out = x.copy()
    if spec.mode != "off":
        targets, _, _ = budget_split(spec, x.shape[1])
        sigma = feature_sigma(spec, x.shape[1])
        idx = np.array(targets, dtype=np.int64)
        clamped = np.clip(x[:, idx], -spec.clamp, spec.clamp)
        out[:, idx] = clamped + sigma * rng.standard_normal(clamped.shape)
    return out[0] if squeeze else out


def privatize(x: np.ndarray, spec: FeatureDpSpec, rng: np.random.Generator) -> np.ndarray:
    """Single-vector form of privatize_batch (same stream semantics)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("privatize takes a single feature vector; use privatize_batch")
    return privatize_batch(x, spec, rng)


def audit_record(spec: FeatureDpSpec, d: int) -> dict:
    """JSON-ready description of exactly what noise a spec applies at width d."""
    targets, eps_i, delta_i = budget_split(spec, d)
    return {
        "mode": spec.mode,
        "level": spec.level,
        "selected": list(targets) if spec.mode == "selective" else None,
        "targeted_count": len(targets),
        "epsilon_total": spec.epsilon,
        "delta_total": spec.delta,
        "per_feature_epsilon": eps_i if targets else None,
        "per_feature_delta": delta_i if targets else None,
        "sigma_feature": feature_sigma(spec, d) if targets else None,
        "clamp": spec.clamp if spec.mode != "off" else None,
        "sensitivity": 2.0 * spec.clamp if spec.mode != "off" else None,
    }
