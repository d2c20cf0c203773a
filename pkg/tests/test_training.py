import json

import numpy as np
import pytest

from privatexr.accounting import PrivacySpec, epsilon_after, find_sigma
from privatexr.data import SplitSpec, SynthConfig, normalize, normalize_with, split, synth_generate
from privatexr.nn import ModelSpec, Sgd, TrainedModel, loss_and_grads, optimizer_step, param_count, predict_proba
from privatexr.rng import stream
from privatexr.training import DpTrainConfig, TrainConfig, clip_per_example, dpsgd_step, train


def make_splits(cfg: SynthConfig, frac=0.7, seed=0):
    ds = synth_generate(cfg)
    tr, va = split(ds, SplitSpec(frac, seed=seed))
    trn = normalize(tr)
    return trn, normalize_with(va, trn.norm_stats)


SMALL = SynthConfig(users=10, stimuli=2, frames_per_user_stimulus=20, feature_dim=12,
                    class_count=4, seed=5)


def balanced_accuracy_oracle(pred, labels):
    recalls = []
    for c in np.unique(labels):
        m = labels == c
        recalls.append((pred[m] == c).mean())
    return float(np.mean(recalls))


# --- clipping ---------------------------------------------------------------

def test_clip_inside_ball_unchanged():
    g = np.array([0.3, 0.4])  # norm 0.5
    assert np.array_equal(clip_per_example(g, 1.0), g)


def test_clip_at_twice_radius_halves():
    g = np.array([1.2, 1.6])  # norm 2.0
    out = clip_per_example(g, 1.0)
    assert np.allclose(out, g / 2.0, atol=1e-15)


def test_clip_norm_identity_random():
    rng = stream(0, "clip")
    for _ in range(50):
        g = rng.standard_normal(rng.integers(1, 40))
        c = float(rng.uniform(0.1, 3.0))
        clipped = clip_per_example(g, c)
        assert abs(np.linalg.norm(clipped) - min(np.linalg.norm(g), c)) < 1e-10


def test_clip_matrix_rows_independent():
    rng = stream(1, "clip")
    g = rng.standard_normal((30, 17))
    c = 0.8
    out = clip_per_example(g, c)
    for i in range(30):
        assert np.allclose(out[i], clip_per_example(g[i], c), atol=1e-15)
        assert np.linalg.norm(out[i]) <= c + 1e-9


def test_clip_zero_vector_and_bad_c():
    assert np.array_equal(clip_per_example(np.zeros(4), 1.0), np.zeros(4))
    with pytest.raises(ValueError):
        clip_per_example(np.ones(2), 0.0)


# --- dpsgd_step ----------------------------------------------------------------

def tiny_model():
    spec = ModelSpec("mlp", input_dim=3, class_count=2, hidden=(4,))
    rng = stream(9, "p")
    return spec, rng.standard_normal(param_count(spec)) * 0.4


def test_step_with_mechanism_disabled_is_plain_sgd():
    spec, params = tiny_model()
    rng = stream(1, "x")
    x = rng.standard_normal((16, 3))
    y = rng.integers(0, 2, 16)
    cfg = DpTrainConfig(clip_norm=np.inf, noise_multiplier=0.0, sampling_rate=1.0, lr=0.3)
    got = dpsgd_step(spec, x, y, cfg, stream(0, "n"), expected_lot=16.0, params=params)
    _, mean_grad = loss_and_grads(spec, x, y, params=params)
    want, _ = optimizer_step(params, mean_grad, None, Sgd(lr=0.3))
    assert np.allclose(got, want, atol=1e-12)


def test_step_clipping_only_halves_long_gradient():
    spec, params = tiny_model()
    x = stream(2, "x").standard_normal((1, 3))
    y = np.array([0])
    _, per = loss_and_grads(spec, x, y, reduction="per_example", params=params)
    g = per[0]
    c = float(np.linalg.norm(g)) / 2.0  # force ||g|| = 2C
    cfg = DpTrainConfig(clip_norm=c, noise_multiplier=0.0, sampling_rate=1.0, lr=1.0)
    got = dpsgd_step(spec, x, y, cfg, stream(0, "n"), expected_lot=1.0, params=params)
    assert np.allclose(got, params - g / 2.0, atol=1e-14)


def test_step_empty_lot_is_identity():
    spec, params = tiny_model()
    cfg = DpTrainConfig(clip_norm=1.0, noise_multiplier=1.0, sampling_rate=0.5, lr=0.1)
    trace = []
    got = dpsgd_step(spec, np.zeros((0, 3)), np.zeros(0, dtype=int), cfg,
                     stream(0, "n"), expected_lot=8.0, params=params, trace=trace)
    assert np.array_equal(got, params)
    assert trace[0]["lot_size"] == 0


def test_step_noise_moments_monte_carlo():
    # tiny model so 20k step recoveries stay fast; acceptance runs the 1e5 version
    spec = ModelSpec("mlp", input_dim=1, class_count=2, hidden=())
    params = np.array([0.3, -0.2, 0.05, -0.05])
    x = np.array([[1.0]])
    y = np.array([0])
    sigma, c, lot = 1.3, 0.7, 5.0
    cfg = DpTrainConfig(clip_norm=c, noise_multiplier=sigma, sampling_rate=1.0, lr=0.25)
    _, per = loss_and_grads(spec, x, y, reduction="per_example", params=params)
    clipsum = clip_per_example(per, c).sum(axis=0)
    rng = stream(7, "noise")
    draws = np.empty((20000, params.size))
    for i in range(draws.shape[0]):
        new = dpsgd_step(spec, x, y, cfg, rng, expected_lot=lot, params=params)
        draws[i] = (params - new) / cfg.lr * lot - clipsum
    assert np.allclose(draws.std(axis=0), sigma * c, rtol=0.04)
    assert np.allclose(draws.mean(axis=0), 0.0, atol=4 * sigma * c / np.sqrt(draws.shape[0]))


def test_step_validation():
    spec, params = tiny_model()
    cfg = DpTrainConfig(clip_norm=1.0, noise_multiplier=0.0, sampling_rate=1.0)
    with pytest.raises(ValueError, match="expected_lot"):
        dpsgd_step(spec, np.zeros((1, 3)), np.array([0]), cfg, stream(0, "n"),
                   expected_lot=0.0, params=params)
    with pytest.raises(ValueError):
        DpTrainConfig(clip_norm=-1, noise_multiplier=1, sampling_rate=0.5)
    with pytest.raises(ValueError):
        DpTrainConfig(clip_norm=1, noise_multiplier=-0.1, sampling_rate=0.5)
    with pytest.raises(ValueError):
        DpTrainConfig(clip_norm=1, noise_multiplier=1, sampling_rate=0.0)


# --- non-private training --------------------------------------------------------

def test_train_rejects_unnormalized_or_mismatched():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4)
    raw = synth_generate(SMALL)
    with pytest.raises(ValueError, match="not normalized"):
        train(raw, va, spec, TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="features"):
        train(tr, va, ModelSpec("mlp", input_dim=11, class_count=4), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="classes"):
        train(tr, va, ModelSpec("mlp", input_dim=12, class_count=3), TrainConfig(epochs=1))


def test_train_learns_separable_synthetic():
    tr, va = make_splits(SynthConfig(users=10, stimuli=2, frames_per_user_stimulus=20,
                                     feature_dim=12, class_count=4,
                                     label_signal_strength=1.5, seed=4))
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(32,))
    model = train(tr, va, spec, TrainConfig(epochs=60, batch_size=64, lr=0.01, seed=1))
    pred = predict_proba(model, va.features).argmax(axis=1)
    assert balanced_accuracy_oracle(pred, va.labels) >= 0.85


def test_train_chance_level_without_signal():
    tr, va = make_splits(SynthConfig(users=10, stimuli=2, frames_per_user_stimulus=25,
                                     feature_dim=12, class_count=4,
                                     label_signal_strength=0.0, seed=8))
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(16,))
    model = train(tr, va, spec, TrainConfig(epochs=30, batch_size=64, lr=0.005, seed=1))
    pred = predict_proba(model, va.features).argmax(axis=1)
    assert abs(balanced_accuracy_oracle(pred, va.labels) - 0.25) <= 0.08


def test_train_deterministic_bitwise():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(16,))
    cfg = TrainConfig(epochs=5, batch_size=32, lr=0.01, seed=33)
    a = train(tr, va, spec, cfg)
    b = train(tr, va, spec, cfg)
    assert np.array_equal(a.params, b.params)
    assert a.meta == b.meta
    c = train(tr, va, spec, TrainConfig(epochs=5, batch_size=32, lr=0.01, seed=34))
    assert not np.array_equal(a.params, c.params)


def test_train_loss_mostly_decreasing(tmp_path):
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(32,))
    path = str(tmp_path / "log.jsonl")
    train(tr, va, spec, TrainConfig(epochs=25, batch_size=64, lr=0.005, seed=0),
          progress_path=path)
    losses = [json.loads(line)["train_loss"] for line in open(path)]
    drops = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert drops / (len(losses) - 1) >= 0.9


def test_progress_log_schema(tmp_path):
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    path = str(tmp_path / "log.jsonl")
    train(tr, va, spec, TrainConfig(epochs=3, batch_size=64, seed=0), progress_path=path)
    recs = [json.loads(line) for line in open(path)]
    assert len(recs) == 3
    for i, rec in enumerate(recs):
        assert rec["epoch"] == i + 1
        assert set(rec) == {"epoch", "train_loss", "val_loss", "epsilon_spent"}
        assert rec["epsilon_spent"] is None  # non-private


def test_early_stopping_on_stale_validation():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    # lr tiny enough that adam's ~lr-sized steps move val loss by < the
    # improvement threshold -> plateau detected, patience fires
    model = train(tr, va, spec, TrainConfig(epochs=200, batch_size=64, lr=1e-16,
                                            patience=4, seed=0))
    assert model.meta["epochs_run"] <= 6
    assert "privacy_spent" not in model.meta


# --- private training -------------------------------------------------------------

def private_cfg(**kw):
    seed = kw.pop("seed", 0)
    base = dict(clip_norm=1.0, noise_multiplier=1.2, sampling_rate=0.1,
                epochs=4, lr=0.05, target_delta=1e-5, patience=30)
    base.update(kw)
    return TrainConfig(seed=seed, private=DpTrainConfig(**base))


def test_private_run_clips_every_step():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    trace = []
    model = train(tr, va, spec, private_cfg(), trace=trace)
    steps = model.meta["executed_steps"]
    assert steps == 4 * round(1 / 0.1)
    assert len(trace) == steps
    assert all(rec["max_clipped_norm"] <= 1.0 + 1e-9 for rec in trace)
    assert any(rec["lot_size"] > 0 for rec in trace)


def test_private_meta_and_accountant_agreement():
    tr, va = make_splits(SMALL)
    n = len(tr)
    delta = 1.0 / (2 * n)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    q, epochs = 0.1, 4
    planned = epochs * round(1 / q)
    sigma = find_sigma(PrivacySpec(5.0, delta), q=q, steps=planned)
    cfg = TrainConfig(seed=3, private=DpTrainConfig(
        clip_norm=1.0, noise_multiplier=sigma, sampling_rate=q, epochs=epochs,
        lr=0.05, target_delta=delta))
    model = train(tr, va, spec, cfg)
    spent = model.meta["privacy_spent"]
    assert spent["epsilon"] <= 5.0
    want = epsilon_after(q, sigma, model.meta["executed_steps"], delta)[0]
    assert spent["epsilon"] == want
    assert spent["delta"] == delta


def test_private_epsilon_monotone_in_steps(tmp_path):
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    path = str(tmp_path / "log.jsonl")
    train(tr, va, spec, private_cfg(), progress_path=path)
    eps = [json.loads(line)["epsilon_spent"] for line in open(path)]
    assert all(e is not None for e in eps)
    assert all(b > a for a, b in zip(eps, eps[1:]))


def test_private_budget_exhaustion_truncates():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    # loose noise + tight target -> cap far below the planned step count
    cfg = TrainConfig(seed=0, private=DpTrainConfig(
        clip_norm=1.0, noise_multiplier=1.0, sampling_rate=0.2, epochs=50,
        lr=0.05, target_delta=1e-5, target_epsilon=1.0))
    model = train(tr, va, spec, cfg)
    assert model.meta["budget_exhausted"] is True
    assert model.meta["privacy_spent"]["epsilon"] <= 1.0
    steps = model.meta["executed_steps"]
    assert steps < 50 * round(1 / 0.2)
    # one more step would overshoot the target
    over = epsilon_after(0.2, 1.0, steps + 1, 1e-5)[0]
    assert over > 1.0


def test_private_deterministic_bitwise():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    a = train(tr, va, spec, private_cfg(seed=11))
    b = train(tr, va, spec, private_cfg(seed=11))
    assert np.array_equal(a.params, b.params)
    assert a.meta == b.meta


def test_private_zero_noise_claims_no_guarantee():
    tr, va = make_splits(SMALL)
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(8,))
    cfg = TrainConfig(seed=0, private=DpTrainConfig(
        clip_norm=1.0, noise_multiplier=0.0, sampling_rate=0.5, epochs=2, lr=0.05,
        target_delta=1e-5))
    model = train(tr, va, spec, cfg)
    # sigma=0 means no DP guarantee: clipping ran, but no epsilon may be claimed
    assert "privacy_spent" not in model.meta
    assert model.meta["executed_steps"] == 2 * round(1 / 0.5)
    with pytest.raises(ValueError, match="target_epsilon"):
        train(tr, va, spec, TrainConfig(seed=0, private=DpTrainConfig(
            clip_norm=1.0, noise_multiplier=0.0, sampling_rate=0.5, epochs=2,
            lr=0.05, target_delta=1e-5, target_epsilon=1.0)))
