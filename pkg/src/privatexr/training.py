"""Training loops: non-private mini-batch Adam and DPSGD.

The private path follows the clip-noise-average recipe: per-example L2
clipping at C, Gaussian noise N(0, sigma^2 C^2 I) on the clipped sum, division
by the *expected* lot size q*n, applied with the plain SGD rule. Lots are
Poisson-sampled (each frame independently with rate q) because that is what
the accountant's subsampled-Gaussian bound assumes. One epoch is round(1/q)
lots (one expected data pass); privacy is accounted per lot, including lots
that came up empty.

All stochasticity (batch order, lot masks, noise) flows from one named child
stream of the run seed, consumed in a fixed documented order: per private step
first the lot mask, then (for non-empty lots) the noise vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .accounting import epsilon_after
from .data import Dataset
from .nn import (
    Adam,
    ModelSpec,
    Sgd,
    TrainedModel,
    forward,
    init_params,
    loss_and_grads,
    optimizer_step,
)
from .rng import stream


@dataclass(frozen=True)
class DpTrainConfig:
    """Private training recipe (clipping, noise, sampling, loop controls)."""

    clip_norm: float
    noise_multiplier: float
    sampling_rate: float
    epochs: int = 250
    lr: float = 0.001
    target_delta: float = 1e-5
    target_epsilon: float | None = None
    patience: int = 30

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError("sampling_rate must be in (0,1]")
        if not 0.0 < self.target_delta < 1.0:
            raise ValueError("target_delta must be in (0,1)")
        if self.target_epsilon is not None and self.target_epsilon <= 0:
            raise ValueError("target_epsilon must be positive")
        if self.epochs < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError("epochs/lr/patience must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Loop controls; ``private`` switches to the DPSGD path."""

    epochs: int = 250
    batch_size: int = 256
    lr: float = 0.001
    patience: int = 30
    seed: int = 0
    private: DpTrainConfig | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError("epochs/batch_size/lr/patience must be positive")


def clip_per_example(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    """grad * min(1, C/||grad||_2); rows clipped independently for matrices."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    g = np.asarray(grad, dtype=np.float64)
    if g.ndim == 1:
        norm = float(np.linalg.norm(g))
        return g * min(1.0, clip_norm / norm) if norm > 0 else g.copy()
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    factors = np.minimum(1.0, np.where(norms > 0, clip_norm / norms, 1.0))
    return g * factors


def dpsgd_step(
    spec_or_model,
    lot_x,
    lot_y,
    cfg: DpTrainConfig,
    rng: np.random.Generator,
    expected_lot: float,
    params=None,
    trace: list | None = None,
):
    """One DPSGD update on an already-sampled lot; returns new flat params.

    Empty lots return the parameters unchanged (the caller still counts the
    step for accounting). ``trace``, if a list, receives per-step diagnostics.
    """
    if isinstance(spec_or_model, TrainedModel):
        spec, params = spec_or_model.spec, spec_or_model.params
    else:
        spec = spec_or_model
    params = np.asarray(params, dtype=np.float64)
    if expected_lot <= 0:
        raise ValueError("expected_lot must be positive")

    lot_n = len(lot_y)
    if lot_n == 0:
        if trace is not None:
            trace.append({"lot_size": 0, "max_clipped_norm": 0.0, "noise_applied": False})
        return params.copy()

    _, per_grads = loss_and_grads(spec, lot_x, lot_y, reduction="per_example", params=params)
    clipped = clip_per_example(per_grads, cfg.clip_norm)
    max_norm = float(np.linalg.norm(clipped, axis=1).max())
    if max_norm > cfg.clip_norm + 1e-9:
        raise RuntimeError(f"clipped norm {max_norm} exceeds C={cfg.clip_norm}")
    total = clipped.sum(axis=0)
    noisy = cfg.noise_multiplier > 0
    if noisy:
        total = total + rng.standard_normal(total.shape) * cfg.noise_multiplier * cfg.clip_norm
    update = total / expected_lot
    new_params, _ = optimizer_step(params, update, None, Sgd(lr=cfg.lr))
    if trace is not None:
        trace.append({"lot_size": lot_n, "max_clipped_norm": max_norm, "noise_applied": noisy})
    return new_params


def _mean_loss(spec, params, x, y) -> float:
    logits = forward(spec, x, params=params)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    return float((lse - logits[np.arange(len(y)), y]).mean())


def _check_datasets(ds_train: Dataset, ds_val: Dataset, spec: ModelSpec):
    for name, ds in (("train", ds_train), ("val", ds_val)):
        if ds.norm_stats is None:
            raise ValueError(f"{name} dataset is not normalized (no norm_stats recorded)")
        if ds.feature_dim != spec.input_dim:
            raise ValueError(
                f"{name} dataset has {ds.feature_dim} features, spec expects {spec.input_dim}"
            )
        if ds.class_count != spec.class_count:
            raise ValueError(
                f"{name} dataset has {ds.class_count} classes, spec expects {spec.class_count}"
            )
    if len(ds_train) == 0 or len(ds_val) == 0:
        raise ValueError("train and val datasets must be non-empty")


def _max_affordable_steps(dp: DpTrainConfig, planned: int) -> int:
    """Largest step count whose accounted epsilon stays within target_epsilon."""
    def eps(t: int) -> float:
        if t == 0:
            return 0.0
        return epsilon_after(dp.sampling_rate, dp.noise_multiplier, t, dp.target_delta)[0]

    if eps(planned) <= dp.target_epsilon:
        return planned
    lo, hi = 0, planned  # eps(lo) ok, eps(hi) too big
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eps(mid) <= dp.target_epsilon:
            lo = mid
        else:
            hi = mid
    return lo


def train(
    ds_train: Dataset,
    ds_val: Dataset,
    spec: ModelSpec,
    cfg: TrainConfig,
    progress_path: str | None = None,
    trace: list | None = None,
) -> TrainedModel:
    """Train a model; returns parameters as of the stopping epoch.

    Early stopping: stop once validation loss has not improved for
    ``patience`` consecutive epochs (no rollback to the best epoch).
    """
    _check_datasets(ds_train, ds_val, spec)
    dp = cfg.private
    rng = stream(cfg.seed, "training-noise")
    params = init_params(spec, cfg.seed)
    x_tr, y_tr = ds_train.features, ds_train.labels
    x_va, y_va = ds_val.features, ds_val.labels
    n = len(ds_train)

    log: list[dict] = []
    best_val = math.inf
    stale = 0
    epochs_run = 0
    executed_steps = 0
    budget_exhausted = False

    if dp is not None:
        if dp.noise_multiplier == 0 and dp.target_epsilon is not None:
            raise ValueError("target_epsilon requires a positive noise_multiplier")
        steps_per_epoch = max(1, round(1.0 / dp.sampling_rate))
        planned = dp.epochs * steps_per_epoch
        max_steps = planned
        if dp.target_epsilon is not None:
            max_steps = _max_affordable_steps(dp, planned)
        truncated = max_steps < planned
        epochs, patience = dp.epochs, dp.patience
    else:
        epochs, patience = cfg.epochs, cfg.patience
        adam_state = None
        rule = Adam(lr=cfg.lr)

    for epoch in range(epochs):
        if dp is not None:
            for _ in range(steps_per_epoch):
                if executed_steps >= max_steps:
                    break
                mask = rng.random(n) < dp.sampling_rate
                idx = np.flatnonzero(mask)
                params = dpsgd_step(
                    spec, x_tr[idx], y_tr[idx], dp, rng,
                    expected_lot=dp.sampling_rate * n, params=params, trace=trace,
                )
                executed_steps += 1
        else:
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                _, grads = loss_and_grads(spec, x_tr[idx], y_tr[idx], params=params)
                params, adam_state = optimizer_step(params, grads, adam_state, rule)

        epochs_run = epoch + 1
        train_loss = _mean_loss(spec, params, x_tr, y_tr)
        val_loss = _mean_loss(spec, params, x_va, y_va)
        if dp is not None and dp.noise_multiplier > 0 and executed_steps > 0:
            eps_spent = epsilon_after(
                dp.sampling_rate, dp.noise_multiplier, executed_steps, dp.target_delta
            )[0]
        else:
            eps_spent = None
        log.append(
            {"epoch": epochs_run, "train_loss": train_loss, "val_loss": val_loss,
             "epsilon_spent": eps_spent}
        )

        if val_loss < best_val - 1e-12:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
        if dp is not None and truncated and executed_steps >= max_steps:
            budget_exhausted = True
            break
        if stale >= patience:
            break

    if progress_path is not None:
        with open(progress_path, "w", encoding="utf-8") as fh:
            for rec in log:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")

    meta = {
        "epochs_run": epochs_run,
        "final_loss": log[-1]["train_loss"] if log else None,
    }
    if dp is not None:
        meta["executed_steps"] = executed_steps
        meta["budget_exhausted"] = budget_exhausted
        # sigma = 0 disables the mechanism: no finite guarantee exists, so no
        # privacy_spent is claimed rather than a misleading epsilon
        if dp.noise_multiplier > 0:
            if executed_steps > 0:
                eps, _ = epsilon_after(
                    dp.sampling_rate, dp.noise_multiplier, executed_steps, dp.target_delta
                )
            else:
                eps = 0.0  # nothing released
            meta["privacy_spent"] = {"epsilon": eps, "delta": dp.target_delta}
    return TrainedModel(spec, params, meta)
