"""The two adversaries used to audit trained models and privatized data.

Membership inference (MIA): shadow models trained with the target's exact
recipe produce labeled member/non-member examples; a small binary MLP learns
to tell them apart from [sorted probability vector | cross-entropy loss |
one-hot true label]; the attack is scored by AUC on the target's own
member/non-member evaluation sets. AUC is computed twice — exact
Mann-Whitney on integer pair counts, and a trapezoidal threshold sweep — and
the two must agree.

Re-identification (RDA): a radial-basis-function network over per-user
k-means centers maps frames to user-identity probabilities; frames are
averaged per (user, stimulus) group, argmaxed, and the per-user majority over
stimuli is the identification. The reported rate averages over repeated
re-split/retrain runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SplitSpec, normalize, normalize_with, split
from .nn import ModelSpec, TrainedModel, forward, predict_proba
from .privatizer import FeatureDpSpec, privatize_batch
from .rng import derive_seed, stream
from .training import TrainConfig, train


@dataclass(frozen=True)
class MiaConfig:
    """Shadow-ensemble membership attack parameters.

    The attack feature layout is fixed: descending-sorted class probabilities,
    then the per-example cross-entropy loss, then the one-hot true label
    (length 2K + 1).
    """

    shadow_count: int
    shadow_train_size: int
    shadow_spec: ModelSpec
    shadow_train: TrainConfig
    attack_hidden: tuple[int, ...] = (32,)
    attack_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=40, batch_size=64, lr=0.005, patience=40)
    )
    seed: int = 0

    def __post_init__(self):
        if self.shadow_count < 2:
            raise ValueError("need at least 2 shadow models")
        if self.shadow_train_size < 2:
            raise ValueError("shadow_train_size must be >= 2")


@dataclass(frozen=True)
class ShadowRecord:
    model: TrainedModel
    members: Dataset
    nonmembers: Dataset


@dataclass(frozen=True)
class RbfnModel:
    """One hidden layer of Gaussian kernels feeding a linear-softmax identifier."""

    centers: np.ndarray   # (M, d)
    widths: np.ndarray    # (M,) all positive
    weights: np.ndarray   # (M, U)
    user_ids: tuple[int, ...]  # column -> actual user id

    def __post_init__(self):
        m, d = self.centers.shape
        u = len(self.user_ids)
        if self.widths.shape != (m,) or np.any(self.widths <= 0):
            raise ValueError("need one positive width per center")
        if self.weights.shape != (m, u):
            raise ValueError("weights must map M kernels to U identities")
        if m < u:
            raise ValueError(f"need at least as many centers ({m}) as identities ({u})")


@dataclass(frozen=True)
class AttackReport:
    """Scores for one evaluated condition."""

    condition: str
    mia_auc: float | None = None
    rda_identification_rate: float | None = None
    utility: dict | None = None
    runs: int | None = None
    seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        for val in (self.mia_auc, self.rda_identification_rate):
            if val is not None and not 0.0 <= val <= 1.0:
                raise ValueError(f"rates must lie in [0,1], got {val}")


# --- AUC, two independent ways ------------------------------------------------

def mann_whitney_auc(pos_scores, neg_scores) -> float:
    """(#concordant + 0.5 #ties) / #pairs, on exact integer doubled counts."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score sets must be non-empty")
    lo = np.searchsorted(neg, pos, side="left")
    hi = np.searchsorted(neg, pos, side="right")
    num2 = int(2 * lo.sum() + (hi - lo).sum())  # 2*concordant + ties
    den2 = 2 * pos.size * neg.size
    return num2 / den2


def roc_auc_threshold_sweep(pos_scores, neg_scores) -> float:
    """Trapezoidal area under the ROC built by sweeping score thresholds."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score sets must be non-empty")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size, bool), np.zeros(neg.size, bool)])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    # group equal scores so ties produce diagonal ROC segments
    boundary = np.flatnonzero(np.diff(scores)) + 1
    tp_cum = np.concatenate([[0], np.cumsum(labels)[np.append(boundary - 1, len(labels) - 1)]])
    fp_cum = np.concatenate([[0], np.cumsum(~labels)[np.append(boundary - 1, len(labels) - 1)]])
    tpr = tp_cum / pos.size
    fpr = fp_cum / neg.size
    return float(np.trapezoid(tpr, fpr))


# --- membership inference -------------------------------------------------------

def attack_features(model: TrainedModel, ds: Dataset) -> np.ndarray:
    """[sorted probs desc | CE loss | one-hot label] per frame, (n, 2K+1)."""
    logits = forward(model, ds.features)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    losses = lse - logits[np.arange(len(ds)), ds.labels]
    probs = np.exp(logits - lse[:, None])
    k = probs.shape[1]
    onehot = np.zeros((len(ds), k))
    onehot[np.arange(len(ds)), ds.labels] = 1.0
    return np.concatenate(
        [np.sort(probs, axis=1)[:, ::-1], losses[:, None], onehot], axis=1
    )


def train_shadow_ensemble(pool: Dataset, cfg: MiaConfig) -> list[ShadowRecord]:
    """N shadows, each trained on a disjoint member/non-member pair drawn from
    the pool with the target's exact recipe."""
    size = cfg.shadow_train_size
    if len(pool) < 2 * size:
        raise ValueError(
            f"attacker pool has {len(pool)} frames; need >= {2 * size} "
            f"for disjoint member/non-member halves of {size}"
        )
    records = []
    for i in range(cfg.shadow_count):
        rng = stream(cfg.seed, "attacks", "shadow", i)
        order = rng.permutation(len(pool))
        members = pool.take(np.sort(order[:size]))
        nonmembers = pool.take(np.sort(order[size : 2 * size]))
        shadow_cfg = TrainConfig(
            epochs=cfg.shadow_train.epochs,
            batch_size=cfg.shadow_train.batch_size,
            lr=cfg.shadow_train.lr,
            patience=cfg.shadow_train.patience,
            seed=derive_seed(cfg.seed, "attacks", "shadow-train", i),
            private=cfg.shadow_train.private,
        )
        model = train(members, members, cfg.shadow_spec, shadow_cfg)
        records.append(ShadowRecord(model=model, members=members, nonmembers=nonmembers))
    return records


def build_attack_dataset(shadows: list[ShadowRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked attack features with in/out labels, balanced per shadow."""
    feats, labels = [], []
    for rec in shadows:
        feats.append(attack_features(rec.model, rec.members))
        labels.append(np.ones(len(rec.members), dtype=np.int64))
        feats.append(attack_features(rec.model, rec.nonmembers))
        labels.append(np.zeros(len(rec.nonmembers), dtype=np.int64))
    return np.concatenate(feats), np.concatenate(labels)


def _as_attack_dataset(x: np.ndarray, y: np.ndarray) -> Dataset:
    n, w = x.shape
    return Dataset(
        feature_names=tuple(f"a{i}" for i in range(w)),
        class_names=("out", "in"),
        user_ids=np.zeros(n, dtype=np.int64),
        stimulus_ids=np.zeros(n, dtype=np.int64),
        timestamps_ms=np.arange(n, dtype=np.int64),
        labels=y,
        features=x,
    )


def train_attack_model(shadows: list[ShadowRecord], cfg: MiaConfig):
    """Binary member/non-member classifier; returns (model, attack norm stats)."""
    x, y = build_attack_dataset(shadows)
    ds = normalize(_as_attack_dataset(x, y))
    spec = ModelSpec("mlp", input_dim=x.shape[1], class_count=2, hidden=cfg.attack_hidden)
    tc = cfg.attack_train
    model = train(ds, ds, spec, TrainConfig(
        epochs=tc.epochs, batch_size=tc.batch_size, lr=tc.lr, patience=tc.patience,
        seed=derive_seed(cfg.seed, "attacks", "attack-train")))
    return model, ds.norm_stats


def run_mia(target: TrainedModel, member_eval: Dataset, nonmember_eval: Dataset,
            attack_model: TrainedModel, attack_norm_stats=None) -> float:
    """AUC of the attack model's member scores on the target's frames."""
    if len(member_eval) == 0 or len(nonmember_eval) == 0:
        raise ValueError("member and non-member evaluation sets must be non-empty")

    def score(ds):
        feats = attack_features(target, ds)
        if attack_norm_stats is not None:
            mu, sd = attack_norm_stats
            safe = np.where(sd < 1e-12, 1.0, sd)
            feats = np.where(sd < 1e-12, 0.0, (feats - mu) / safe)
        return predict_proba(attack_model, feats)[:, 1]

    return mann_whitney_auc(score(member_eval), score(nonmember_eval))


def shadow_mia(target: TrainedModel, pool: Dataset, member_eval: Dataset,
               nonmember_eval: Dataset, cfg: MiaConfig) -> float:
    """Full pipeline: shadows -> attack dataset -> attack model -> target AUC."""
    shadows = train_shadow_ensemble(pool, cfg)
    attack_model, norm_stats = train_attack_model(shadows, cfg)
    return run_mia(target, member_eval, nonmember_eval, attack_model, norm_stats)


# --- re-identification ------------------------------------------------------------

def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 20) -> np.ndarray:
    """Plain Lloyd iterations with seeded distinct-point init; fixed iteration
    count keeps runs bitwise reproducible."""
    centers = x[rng.choice(len(x), size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = x[mask].mean(axis=0)
        # empty clusters keep their previous center
    return centers


def train_rbfn(train_ds: Dataset, centers_per_user: int = 4, ridge: float = 1e-3,
               seed: int = 0) -> RbfnModel:
    """Per-user k-means centers, global-median kernel width, ridge readout."""
    if centers_per_user < 1:
        raise ValueError("centers_per_user must be >= 1")
    users = np.unique(train_ds.user_ids)
    centers = []
    for u in users:
        xu = train_ds.features[train_ds.user_ids == u]
        if len(xu) < centers_per_user:
            raise ValueError(
                f"user {int(u)} has {len(xu)} frames; k-means needs >= {centers_per_user}"
            )
        centers.append(_kmeans(xu, centers_per_user, stream(seed, "attacks", "rbfn", int(u))))
    centers = np.vstack(centers)  # (M, d), user-major order

    diff = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(len(centers), k=1)
    width = float(np.median(dists[iu])) if len(iu[0]) else float("nan")
    if not np.isfinite(width) or width <= 0:
        # single center or coincident centers: no pairwise scale to take
        width = 1.0
    widths = np.full(len(centers), width)

    acts = _rbf_activations(train_ds.features, centers, widths)
    onehot = np.zeros((len(train_ds), len(users)))
    col = {int(u): j for j, u in enumerate(users)}
    for i, u in enumerate(train_ds.user_ids):
        onehot[i, col[int(u)]] = 1.0
    gram = acts.T @ acts + ridge * np.eye(acts.shape[1])
    weights = np.linalg.solve(gram, acts.T @ onehot)
    return RbfnModel(centers=centers, widths=widths, weights=weights,
                     user_ids=tuple(int(u) for u in users))


def _rbf_activations(x, centers, widths):
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * widths[None, :] ** 2))


def rbfn_probs(model: RbfnModel, features: np.ndarray) -> np.ndarray:
    """Identity probabilities per frame (rows sum to 1)."""
    z = _rbf_activations(np.asarray(features, dtype=np.float64),
                         model.centers, model.widths) @ model.weights
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def identify_groups(model: RbfnModel, test: Dataset):
    """[(user, stimulus, averaged probability vector)] in sorted group order."""
    probs = rbfn_probs(model, test.features)
    out = []
    for u in np.unique(test.user_ids):
        for s in np.unique(test.stimulus_ids[test.user_ids == u]):
            mask = (test.user_ids == u) & (test.stimulus_ids == s)
            out.append((int(u), int(s), probs[mask].mean(axis=0)))
    return out


def identify(model: RbfnModel, test: Dataset) -> float:
    """Fraction of users whose per-stimulus majority argmax names them.

    Majority ties resolve to the smallest predicted identity column
    (np.bincount argmax), which keeps runs deterministic.
    """
    groups = identify_groups(model, test)
    per_user_votes: dict[int, list[int]] = {}
    for u, _s, avg in groups:
        per_user_votes.setdefault(u, []).append(int(avg.argmax()))
    correct = 0
    for u, votes in per_user_votes.items():
        majority_col = int(np.bincount(votes).argmax())
        if u in model.user_ids and model.user_ids[majority_col] == u:
            correct += 1
    return correct / len(per_user_votes)


@dataclass(frozen=True)
class RdaResult:
    mean_rate: float
    per_run_rates: tuple[float, ...]


def run_rda(ds: Dataset, runs: int = 30, centers_per_user: int = 4,
            train_fraction: float = 0.6, seed: int = 0,
            feature_spec: FeatureDpSpec | None = None) -> RdaResult:
    """Mean identification rate over ``runs`` re-split/retrain rounds.

    ``feature_spec`` (optional) privatizes the *test* features each run with
    fresh noise, measuring how input-level DP degrades re-identification.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rates = []
    for r in range(runs):
        split_seed = derive_seed(seed, "attacks", "rda-split", r)
        tr, te = split(ds, SplitSpec(train_fraction, seed=split_seed))
        model = train_rbfn(tr, centers_per_user=centers_per_user,
                           seed=derive_seed(seed, "attacks", "rda-km", r))
        if feature_spec is not None and feature_spec.mode != "off":
            noised = privatize_batch(te.features, feature_spec,
                                     stream(seed, "feature-noise", "rda", r))
            te = te.with_features(noised)
        rates.append(identify(model, te))
    return RdaResult(mean_rate=float(np.mean(rates)), per_run_rates=tuple(rates))
