"""Rényi-DP accounting for the subsampled Gaussian mechanism.

Integer-order bound (see Mironov et al., arXiv:1908.10530): for sampling rate
q, noise multiplier sigma and integer order alpha >= 2,

    eps_alpha = 1/(alpha-1) * ln( sum_{k=0}^{alpha} C(alpha,k)
                 (1-q)^(alpha-k) q^k exp(k(k-1)/(2 sigma^2)) )

evaluated in log-space (the exp factor overflows float64 for small sigma and
large alpha). RDP composes additively over steps; conversion to (eps, delta)
takes the minimum over orders of eps_alpha + ln(1/delta)/(alpha-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ORDERS = tuple(range(2, 65))


@dataclass(frozen=True)
class PrivacySpec:
    """An (epsilon, delta) budget."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0,1)")


@dataclass(frozen=True)
class RdpCurve:
    """Per-order Rényi divergence bound eps_alpha."""

    orders: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) != len(self.values):
            raise ValueError("orders and values must align")
        if any(v < 0 for v in self.values):
            raise ValueError("RDP values must be non-negative")


def _log_binom(n: int, k: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def rdp_one_step(q: float, sigma: float, alpha: int) -> float:
    """eps_alpha of one subsampled-Gaussian step at integer order alpha."""
    if not isinstance(alpha, (int, np.integer)):
        raise ValueError(f"fractional orders are unsupported, got alpha={alpha!r}")
    if alpha < 2:
        raise ValueError("alpha must be an integer >= 2")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    k = np.arange(alpha + 1)
    gauss = k * (k - 1) / (2.0 * sigma * sigma)
    if q == 1.0:
        # only the k = alpha term survives; avoids log(0) below
        return float(alpha / (2.0 * sigma * sigma))
    if q == 0.0:
        return 0.0
    log_terms = _log_binom(alpha, k) + k * np.log(q) + (alpha - k) * np.log1p(-q) + gauss
    val = float(logsumexp(log_terms) / (alpha - 1))
    # the series is a binomial average of factors >= 1, so the bound is >= 0;
    # clamp the round-off that tiny q can leave behind
    return max(val, 0.0)


def curve(q: float, sigma: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    """One-step RDP curve over the order grid."""
    return RdpCurve(tuple(int(a) for a in orders), tuple(rdp_one_step(q, sigma, a) for a in orders))


def compose(c: RdpCurve, steps: int) -> RdpCurve:
    """T-fold composition: RDP adds, so every eps_alpha is multiplied by T."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    return RdpCurve(c.orders, tuple(v * steps for v in c.values))


def to_epsilon(c: RdpCurve, delta: float) -> tuple[float, int]:
    """(eps, best order) with eps = min_alpha [eps_alpha + ln(1/delta)/(alpha-1)]."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0,1)")
    if not c.orders:
        raise ValueError("empty RDP curve")
    log_inv_delta = -np.log(delta)
    candidates = [(v + log_inv_delta / (a - 1), a) for a, v in zip(c.orders, c.values)]
    eps, alpha = min(candidates)
    return float(eps), int(alpha)


def epsilon_after(q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS):
    """Convenience: (eps, alpha*) after ``steps`` subsampled-Gaussian steps."""
    return to_epsilon(compose(curve(q, sigma, orders), steps), delta)


SIGMA_BRACKET = (0.3, 100.0)


def find_sigma(target: PrivacySpec, q: float, steps: int, orders=DEFAULT_ORDERS) -> float:
    """Smallest noise multiplier meeting ``target`` after ``steps`` steps.

    Bisects until the realized eps lands in [0.999 * eps_target, eps_target],
    so the returned sigma satisfies the budget while 0.97 * sigma does not.
    """
    lo, hi = SIGMA_BRACKET

    def eps_at(s: float) -> float:
        return epsilon_after(q, s, steps, target.delta, orders)[0]

    if eps_at(hi) > target.epsilon:
        raise ValueError(
            f"target eps={target.epsilon} infeasible within sigma bracket {SIGMA_BRACKET}: "
            f"even sigma={hi} spends {eps_at(hi):.4g}"
        )
    if eps_at(lo) < 0.999 * target.epsilon:
        raise ValueError(
            f"target eps={target.epsilon} infeasible within sigma bracket {SIGMA_BRACKET}: "
            f"sigma={lo} already spends only {eps_at(lo):.4g}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if eps_at(mid) > target.epsilon:
            lo = mid
        else:
            hi = mid
        got = eps_at(hi)
        if 0.999 * target.epsilon <= got <= target.epsilon:
            return hi
    raise RuntimeError("sigma bisection failed to converge")  # pragma: no cover
