"""Shapley-value feature attribution and the top-quarter selection rule.

Features are players; the payoff of a coalition S is the model's probability
of the explained sample's (fixed, unmasked-argmax) class on a hybrid input
that takes coordinates in S from the sample and the rest from a baseline
vector. ``exact_shapley`` enumerates all 2^d coalitions (d <= 20, values
memoized per bitmask, evaluated in batched forwards); ``sampled_shapley`` is
the permutation estimator with antithetic pairs (every drawn permutation also
contributes its reverse, which cancels the first-order ordering bias).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import predict_proba
from .rng import stream

EXACT_DIM_LIMIT = 20
VALUE_KIND = "predicted_class_probability"


@dataclass(frozen=True)
class AttributionReport:
    per_sample_phi: np.ndarray  # (n, d)
    baseline: np.ndarray        # (d,)
    value_kind: str = VALUE_KIND


@dataclass(frozen=True)
class GlobalImportance:
    mean_abs_phi: np.ndarray  # (d,)
    ranking: tuple[int, ...]  # descending |phi|, ties by ascending index

    def __post_init__(self):
        d = len(self.mean_abs_phi)
        if sorted(self.ranking) != list(range(d)):
            raise ValueError("ranking must be a permutation of feature indices")
        if np.any(self.mean_abs_phi < 0):
            raise ValueError("mean_abs_phi must be non-negative")


def _default_score(model, x):
    """Probability of the unmasked prediction's class, fixed per sample."""
    cls = int(predict_proba(model, x[None, :]).argmax())
    return lambda batch: predict_proba(model, batch)[:, cls]


def value_function(model, x, baseline, subset, score=None) -> float:
    """Payoff of coalition ``subset``: model score on the hybrid input."""
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if score is None:
        score = _default_score(model, x)
    mask = np.zeros(x.shape[0], dtype=bool)
    idx = list(subset)
    if idx:
        mask[idx] = True
    hybrid = np.where(mask, x, baseline)
    return float(score(hybrid[None, :])[0])


def _coalition_values(x, baseline, score, d):
    """Memo table v[mask] for every coalition bitmask, batched evaluation."""
    masks = np.arange(1 << d, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    values = np.empty(1 << d)
    chunk = 8192
    for start in range(0, len(masks), chunk):
        b = bits[start : start + chunk]
        hybrids = np.where(b, x, baseline)
        values[start : start + chunk] = score(hybrids)
    return values, masks


def exact_shapley(model, x, baseline, score=None) -> np.ndarray:
    """phi_i = sum over coalitions S (i not in S) of |S|!(d-|S|-1)!/d! * marginal."""
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    d = x.shape[0]
    if d > EXACT_DIM_LIMIT:
        raise ValueError(
            f"exact enumeration needs d <= {EXACT_DIM_LIMIT} (got {d}); use sampled_shapley"
        )
    if score is None:
        score = _default_score(model, x)
    values, masks = _coalition_values(x, baseline, score, d)

    pop = np.zeros(1 << d, dtype=np.int64)
    tmp = masks.copy()
    while tmp.any():
        pop += tmp & 1
        tmp >>= 1
    fact = [math.factorial(i) for i in range(d + 1)]
    weight = np.array([fact[s] * fact[d - s - 1] / fact[d] for s in range(d)])

    phi = np.zeros(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        marg = values[without | (1 << i)] - values[without]
        phi[i] = float((weight[pop[without]] * marg).sum())
    return phi


def sampled_shapley(model, x, baseline, permutations, seed, score=None) -> np.ndarray:
    """Permutation-sampling estimate; each draw also contributes its reverse."""
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    d = x.shape[0]
    if score is None:
        score = _default_score(model, x)
    rng = stream(seed, "shap")
    perms = np.empty((2 * permutations, d), dtype=np.int64)
    for p in range(permutations):
        perm = rng.permutation(d)
        perms[2 * p] = perm
        perms[2 * p + 1] = perm[::-1]

    # membership[p, k, j]: feature j is in the length-k prefix of permutation p
    inv = np.argsort(perms, axis=1)  # position of each feature in each perm
    member = inv[:, None, :] < np.arange(d + 1)[None, :, None]
    hybrids = np.where(member, x, baseline).reshape(-1, d)
    vals = score(hybrids).reshape(len(perms), d + 1)
    marginals = np.diff(vals, axis=1)  # (2P, d), entry k belongs to perms[p, k]

    phi = np.zeros(d)
    np.add.at(phi, perms.ravel(), marginals.ravel())
    return phi / len(perms)


def importance_ranking(mean_abs_phi) -> tuple[int, ...]:
    """Feature indices by descending mean |phi|; ties broken by ascending index."""
    mean_abs_phi = np.asarray(mean_abs_phi, dtype=np.float64)
    order = np.lexsort((np.arange(len(mean_abs_phi)), -mean_abs_phi))
    return tuple(int(j) for j in order)


def explain_batch(model, batch, baseline, mode="exact", permutations=200, seed=0):
    """Per-sample phi for a batch; returns (AttributionReport, GlobalImportance)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty (n, d) matrix")
    if mode not in ("exact", "sampled"):
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    baseline = np.asarray(baseline, dtype=np.float64)
    rows = []
    for i, x in enumerate(batch):
        if mode == "exact":
            rows.append(exact_shapley(model, x, baseline))
        else:
            rows.append(sampled_shapley(model, x, baseline, permutations,
                                        seed=stream(seed, "shap", i).integers(2**63)))
    phi = np.stack(rows)
    report = AttributionReport(per_sample_phi=phi, baseline=baseline)
    mean_abs = np.abs(phi).mean(axis=0)
    gi = GlobalImportance(mean_abs_phi=mean_abs, ranking=importance_ranking(mean_abs))
    return report, gi


def global_importance(model, sample_batch, baseline, mode="exact",
                      permutations=200, seed=0) -> GlobalImportance:
    """Mean |phi| per feature over the batch, with the tie-broken ranking."""
    return explain_batch(model, sample_batch, baseline, mode, permutations, seed)[1]


def select_top_quarter(gi: GlobalImportance, d: int) -> tuple[int, ...]:
    """First ceil(d/4) entries of the importance ranking."""
    if d < 1 or len(gi.ranking) != d:
        raise ValueError(f"d={d} does not match ranking of length {len(gi.ranking)}")
    return tuple(gi.ranking[: math.ceil(d / 4)])
