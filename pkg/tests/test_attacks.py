"""Attack-suite checks: AUC dual routes, shadow bookkeeping, RBFN identification."""

import numpy as np
import pytest

from privatexr.accounting import PrivacySpec, find_sigma
from privatexr.attacks import (
    AttackReport,
    MiaConfig,
    RbfnModel,
    attack_features,
    build_attack_dataset,
    identify,
    identify_groups,
    mann_whitney_auc,
    rbfn_probs,
    roc_auc_threshold_sweep,
    run_rda,
    shadow_mia,
    train_rbfn,
    train_shadow_ensemble,
)
from privatexr.data import SynthConfig, normalize, synth_generate
from privatexr.nn import ModelSpec, forward, predict_proba
from privatexr.privatizer import FeatureDpSpec
from privatexr.rng import derive_seed, stream
from privatexr.training import DpTrainConfig, TrainConfig, train


# --- AUC, both routes -------------------------------------------------------

def test_mann_whitney_hand_values():
    assert mann_whitney_auc([3.0, 4.0], [1.0, 2.0]) == 1.0
    assert mann_whitney_auc([1.0, 2.0], [3.0, 4.0]) == 0.0
    # pairs: (2>1), (2==2 tie), (3>1), (3>2) -> 3.5 / 4
    assert mann_whitney_auc([2.0, 3.0], [1.0, 2.0]) == 3.5 / 4


def test_constant_scores_exactly_half():
    assert mann_whitney_auc([0.7] * 5, [0.7] * 9) == 0.5
    assert roc_auc_threshold_sweep([0.7] * 5, [0.7] * 9) == 0.5


def test_perfect_separation_is_one():
    rng = np.random.default_rng(0)
    pos = rng.uniform(2, 3, size=40)
    neg = rng.uniform(0, 1, size=30)
    assert mann_whitney_auc(pos, neg) == 1.0
    assert abs(roc_auc_threshold_sweep(pos, neg) - 1.0) < 1e-15


def test_flip_symmetry_exact_with_ties():
    rng = np.random.default_rng(3)
    # coarse grid forces plenty of ties; flip identity must hold exactly
    pos = rng.integers(0, 7, size=83) / 7.0
    neg = rng.integers(0, 7, size=61) / 7.0
    a = mann_whitney_auc(pos, neg)
    b = mann_whitney_auc(neg, pos)
    assert a + b == 1.0


def test_two_auc_routes_agree_on_random_scores():
    rng = np.random.default_rng(11)
    pos = rng.normal(0.3, 1.0, size=120)
    neg = rng.normal(0.0, 1.0, size=80)
    assert abs(mann_whitney_auc(pos, neg) - roc_auc_threshold_sweep(pos, neg)) < 1e-10

    # and with heavy ties from a 5-point grid
    pos = rng.integers(0, 5, size=130) / 4.0
    neg = rng.integers(0, 5, size=70) / 4.0
    assert abs(mann_whitney_auc(pos, neg) - roc_auc_threshold_sweep(pos, neg)) < 1e-10


def test_auc_rejects_empty_side():
    with pytest.raises(ValueError, match="non-empty"):
        mann_whitney_auc([], [1.0])
    with pytest.raises(ValueError, match="non-empty"):
        roc_auc_threshold_sweep([1.0], [])


# --- shared fixtures ---------------------------------------------------------

def _small_ds(seed=7, beta=1.5, gamma=1.0, users=10, frames=20, signal_dims=(0, 1)):
    cfg = SynthConfig(users=users, stimuli=4, frames_per_user_stimulus=frames,
                      feature_dim=12, class_count=4, user_signature_strength=gamma,
                      label_signal_strength=beta, seed=seed, signal_dims=signal_dims)
    return normalize(synth_generate(cfg))


SHADOW_SPEC = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(48, 48))
SHADOW_RECIPE = TrainConfig(epochs=100, batch_size=64, lr=0.003, patience=100, seed=5)


def _shadows(n=2, size=128, seed=9):
    cfg = MiaConfig(shadow_count=n, shadow_train_size=size, shadow_spec=SHADOW_SPEC,
                    shadow_train=SHADOW_RECIPE, seed=seed)
    return train_shadow_ensemble(_small_ds(), cfg)


# --- shadow ensemble -----------------------------------------------------------

def test_shadow_bookkeeping_disjoint_halves():
    shadows = _shadows(n=2, size=150)
    assert len(shadows) == 2
    for rec in shadows:
        assert len(rec.members) == 150 and len(rec.nonmembers) == 150
        # synthetic timestamps are globally unique, so they identify rows
        m = set(rec.members.timestamps_ms.tolist())
        o = set(rec.nonmembers.timestamps_ms.tolist())
        assert m.isdisjoint(o)


def test_shadow_pool_too_small_errors():
    ds = _small_ds().take(np.arange(400))
    cfg = MiaConfig(shadow_count=2, shadow_train_size=256, shadow_spec=SHADOW_SPEC,
                    shadow_train=SHADOW_RECIPE, seed=0)
    with pytest.raises(ValueError, match="disjoint"):
        train_shadow_ensemble(ds, cfg)


def test_shadows_overfit_their_members():
    for rec in _shadows():
        tr_acc = (forward(rec.model, rec.members.features).argmax(1)
                  == rec.members.labels).mean()
        out_acc = (forward(rec.model, rec.nonmembers.features).argmax(1)
                   == rec.nonmembers.labels).mean()
        assert tr_acc > out_acc  # the gap the whole attack rests on


def test_mia_config_validation():
    with pytest.raises(ValueError, match="2 shadow"):
        MiaConfig(shadow_count=1, shadow_train_size=10, shadow_spec=SHADOW_SPEC,
                  shadow_train=SHADOW_RECIPE)
    with pytest.raises(ValueError, match="shadow_train_size"):
        MiaConfig(shadow_count=2, shadow_train_size=1, shadow_spec=SHADOW_SPEC,
                  shadow_train=SHADOW_RECIPE)


# --- attack dataset ------------------------------------------------------------

def test_attack_feature_layout():
    shadows = _shadows(n=2, size=64)
    rec = shadows[0]
    feats = attack_features(rec.model, rec.members)
    k = rec.members.class_count
    assert feats.shape == (64, 2 * k + 1)
    # descending-sorted probability prefix
    prefix = feats[:, :k]
    assert np.all(np.diff(prefix, axis=1) <= 0)
    assert np.allclose(prefix.sum(axis=1), 1.0, atol=1e-12)
    # loss column: cross-entropy against the true label
    probs = predict_proba(rec.model, rec.members.features)
    p_true = probs[np.arange(64), rec.members.labels]
    assert np.allclose(feats[:, k], -np.log(p_true), atol=1e-9)
    # one-hot block matches labels
    onehot = feats[:, k + 1:]
    assert np.array_equal(onehot.argmax(axis=1), rec.members.labels)
    assert np.all(onehot.sum(axis=1) == 1.0)


def test_attack_dataset_balanced():
    shadows = _shadows(n=2, size=64)
    x, y = build_attack_dataset(shadows)
    assert x.shape == (2 * 2 * 64, 9)
    assert y.sum() == 2 * 64  # half members, half non-members
    # assembled in shadow order: members first within each shadow
    assert y[:64].all() and not y[64:128].any()


# --- full membership attack, one seed -------------------------------------------

def test_mia_overfit_target_beats_dp_target():
    cfg = SynthConfig(users=20, stimuli=4, frames_per_user_stimulus=50, feature_dim=12,
                      class_count=4, user_signature_strength=1.0,
                      label_signal_strength=0.8, seed=101)
    ds = normalize(synth_generate(cfg))
    perm = stream(0, "mia", "partition").permutation(len(ds))
    tr = ds.take(np.sort(perm[:256]))
    non = ds.take(np.sort(perm[256:512]))
    pool = ds.take(np.sort(perm[512:]))
    spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(64, 64))

    recipe = TrainConfig(epochs=150, batch_size=64, lr=0.003, patience=150,
                         seed=derive_seed(0, "mia", "target"))
    target = train(tr, non, spec, recipe)
    mia = MiaConfig(shadow_count=3, shadow_train_size=256, shadow_spec=spec,
                    shadow_train=recipe, seed=derive_seed(0, "mia", "attack"))
    auc_overfit = shadow_mia(target, pool, tr, non, mia)

    q, epochs, delta = 0.1, 30, 1 / 512
    sigma = find_sigma(PrivacySpec(1.0, delta), q, epochs * round(1 / q))
    dp = DpTrainConfig(clip_norm=1.0, noise_multiplier=sigma, sampling_rate=q,
                       epochs=epochs, lr=0.01, target_delta=delta, patience=epochs)
    recipe_dp = TrainConfig(epochs=epochs, batch_size=64, lr=0.01, patience=epochs,
                            seed=derive_seed(0, "mia", "dp-target"), private=dp)
    target_dp = train(tr, non, spec, recipe_dp)
    mia_dp = MiaConfig(shadow_count=3, shadow_train_size=256, shadow_spec=spec,
                       shadow_train=recipe_dp, seed=derive_seed(0, "mia", "attack"))
    auc_dp = shadow_mia(target_dp, pool, tr, non, mia_dp)

    assert auc_overfit >= 0.60
    assert auc_dp <= 0.58
    assert auc_overfit - auc_dp >= 0.05


# --- RBFN --------------------------------------------------------------------

def test_rbfn_shapes_and_row_sums():
    ds = _small_ds()
    model = train_rbfn(ds, centers_per_user=4, seed=1)
    assert model.centers.shape == (10 * 4, 12)
    assert model.weights.shape == (10 * 4, 10)
    assert np.all(model.widths > 0) and len(set(model.widths.tolist())) == 1
    probs = rbfn_probs(model, ds.features[:50])
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)
    assert np.all(probs >= 0)


def test_rbfn_single_user_is_trivially_identified():
    ds = _small_ds()
    one = ds.take(np.flatnonzero(ds.user_ids == ds.user_ids[0]))
    model = train_rbfn(one, centers_per_user=4, seed=2)
    assert identify(model, one) == 1.0


def test_rbfn_rejects_user_with_too_few_frames():
    ds = _small_ds()
    keep = np.concatenate([
        np.flatnonzero(ds.user_ids == 0)[:2],      # starve user 0
        np.flatnonzero(ds.user_ids != 0),
    ])
    with pytest.raises(ValueError, match="k-means needs"):
        train_rbfn(ds.take(np.sort(keep)), centers_per_user=4, seed=0)


def test_rbfn_model_validation():
    with pytest.raises(ValueError, match="at least as many centers"):
        RbfnModel(centers=np.zeros((2, 3)), widths=np.ones(2),
                  weights=np.zeros((2, 4)), user_ids=(0, 1, 2, 3))
    with pytest.raises(ValueError, match="positive width"):
        RbfnModel(centers=np.zeros((4, 3)), widths=np.zeros(4),
                  weights=np.zeros((4, 2)), user_ids=(0, 1))


def test_identify_invariant_to_frame_duplication():
    ds = _small_ds()
    tr = ds.take(np.arange(0, len(ds), 2))
    te = ds.take(np.arange(1, len(ds), 2))
    model = train_rbfn(tr, seed=3)
    doubled = te.take(np.repeat(np.arange(len(te)), 2))
    assert identify(model, te) == identify(model, doubled)


def test_group_argmax_invariant_to_positive_scaling():
    ds = _small_ds()
    model = train_rbfn(ds.take(np.arange(0, len(ds), 2)), seed=3)
    groups = identify_groups(model, ds.take(np.arange(1, len(ds), 2)))
    assert groups  # non-empty
    for _u, _s, avg in groups:
        assert int(avg.argmax()) == int((7.3 * avg).argmax())


# --- repeated-runs RDA ------------------------------------------------------------

def _rda_ds(gamma, seed=11):
    cfg = SynthConfig(users=20, stimuli=4, frames_per_user_stimulus=12, feature_dim=12,
                      class_count=4, user_signature_strength=gamma,
                      label_signal_strength=1.5, seed=seed)
    return normalize(synth_generate(cfg))


def test_rda_identity_signal_and_selective_reduction():
    ds = _rda_ds(gamma=2.0)
    base = run_rda(ds, runs=5, seed=3)
    assert base.mean_rate >= 0.25
    assert len(base.per_run_rates) == 5
    assert all(0.0 <= r <= 1.0 for r in base.per_run_rates)

    spec = FeatureDpSpec.from_level("selective", "high", delta=1e-5, selected=(0, 1, 2))
    noised = run_rda(ds, runs=5, seed=3, feature_spec=spec)
    assert noised.mean_rate <= 0.75 * base.mean_rate


def test_rda_chance_level_without_identity_signal():
    res = run_rda(_rda_ds(gamma=0.0), runs=30, seed=3)
    rates = np.array(res.per_run_rates)
    se = rates.std(ddof=1) / np.sqrt(len(rates))
    assert abs(res.mean_rate - 1 / 20) <= 3 * se


def test_rda_deterministic_and_validated():
    ds = _rda_ds(gamma=2.0)
    r1 = run_rda(ds, runs=3, seed=5)
    r2 = run_rda(ds, runs=3, seed=5)
    assert r1 == r2
    with pytest.raises(ValueError, match="runs"):
        run_rda(ds, runs=0)


def test_rda_off_mode_spec_is_noop():
    ds = _rda_ds(gamma=2.0)
    plain = run_rda(ds, runs=2, seed=1)
    off = run_rda(ds, runs=2, seed=1, feature_spec=FeatureDpSpec(mode="off"))
    assert plain == off


# --- report type ------------------------------------------------------------------

def test_attack_report_validation():
    rep = AttackReport(condition="no-privacy", mia_auc=0.7, rda_identification_rate=0.9)
    assert rep.condition == "no-privacy"
    with pytest.raises(ValueError, match="rates"):
        AttackReport(condition="x", mia_auc=1.2)
    with pytest.raises(ValueError, match="rates"):
        AttackReport(condition="x", rda_identification_rate=-0.1)
