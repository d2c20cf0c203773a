"""End-to-end tests of the command-line surface (main() called in-process)."""

import json
import math

import numpy as np
import pytest

from privatexr.cli import main
from privatexr.data import SynthConfig, load_csv, normalize, synth_generate, write_csv
from privatexr.nn import ModelSpec, load_model, save_model
from privatexr.pipeline import validate_report
from privatexr.training import TrainConfig, train

SYNTH = {"users": 6, "stimuli": 2, "frames_per_user_stimulus": 10,
         "feature_dim": 8, "class_count": 3, "user_signature_strength": 1.0,
         "label_signal_strength": 1.5, "seed": 3, "signal_dims": [0, 1]}


def _cfg(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _run(capsys, *args):
    rc = main(list(args))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def _emitted(out):
    lines = [l for l in out.splitlines() if l.strip()]
    assert len(lines) == 1, f"expected one summary line, got: {lines}"
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def art(tmp_path_factory):
    """Shared artifacts: a normalized dataset CSV and a trained model."""
    root = tmp_path_factory.mktemp("cli")
    ds = normalize(synth_generate(SynthConfig(
        users=6, stimuli=2, frames_per_user_stimulus=10, feature_dim=8,
        class_count=3, user_signature_strength=1.0, label_signal_strength=1.5,
        seed=3, signal_dims=(0, 1))))
    data_csv = root / "data.csv"
    write_csv(ds, data_csv)
    model = train(ds, ds,
                  ModelSpec(arch="mlp", input_dim=8, class_count=3, hidden=(16,)),
                  TrainConfig(epochs=20, batch_size=32, lr=0.01, seed=2))
    model_path = root / "model.json"
    save_model(model, model_path)
    return {"root": root, "ds": ds, "data_csv": str(data_csv),
            "model": str(model_path)}


# --- synth ---------------------------------------------------------------------


def test_synth_writes_loadable_csv(tmp_path, capsys):
    out_csv = tmp_path / "frames.csv"
    cfg = _cfg(tmp_path / "c.json", {"synth": SYNTH, "out_csv": str(out_csv)})
    rc, out, _ = _run(capsys, "synth", "--config", cfg)
    assert rc == 0
    summary = _emitted(out)
    assert summary == {"out_csv": str(out_csv), "frames": 120, "users": 6,
                       "feature_dim": 8, "classes": 3}
    ds = load_csv(str(out_csv))
    assert len(ds) == 120 and ds.feature_dim == 8
    assert (tmp_path / "frames.csv.manifest.json").exists()


def test_synth_seed_override(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json",
               {"synth": SYNTH, "out_csv": str(tmp_path / "a.csv")})
    assert _run(capsys, "synth", "--config", cfg, "--seed", "1")[0] == 0
    first = (tmp_path / "a.csv").read_text()
    assert _run(capsys, "synth", "--config", cfg, "--seed", "2")[0] == 0
    assert (tmp_path / "a.csv").read_text() != first
    assert _run(capsys, "synth", "--config", cfg, "--seed", "1")[0] == 0
    assert (tmp_path / "a.csv").read_text() == first


# --- train ---------------------------------------------------------------------


def test_train_saves_model(tmp_path, capsys, art):
    out_model = tmp_path / "m.json"
    cfg = _cfg(tmp_path / "c.json", {
        "data_csv": art["data_csv"],
        "model": {"hidden": [8]},
        "train": {"epochs": 5, "batch_size": 32, "lr": 0.01},
        "out_model": str(out_model),
    })
    rc, out, _ = _run(capsys, "train", "--config", cfg)
    assert rc == 0
    summary = _emitted(out)
    assert summary["epochs_run"] >= 1
    assert math.isfinite(summary["final_loss"])
    assert "privacy_spent" not in summary
    model = load_model(str(out_model))
    assert model.spec.input_dim == 8 and model.spec.class_count == 3


def test_train_with_dpsgd_reports_privacy(tmp_path, capsys, art):
    out_model = tmp_path / "m.json"
    cfg = _cfg(tmp_path / "c.json", {
        "data_csv": art["data_csv"],
        "train": {"epochs": 2},
        "dp_train": {"clip_norm": 1.0, "noise_multiplier": 2.0,
                     "sampling_rate": 0.25, "epochs": 2, "lr": 0.01},
        "out_model": str(out_model),
    })
    rc, out, _ = _run(capsys, "train", "--config", cfg)
    assert rc == 0
    spent = _emitted(out)["privacy_spent"]
    assert spent["epsilon"] > 0
    assert 0 < spent["delta"] < 1


# --- explain ---------------------------------------------------------------------


def test_explain_writes_ranking_and_phi(tmp_path, capsys, art):
    out_json = tmp_path / "xai.json"
    out_csv = tmp_path / "phi.csv"
    cfg = _cfg(tmp_path / "c.json", {
        "model": art["model"], "data_csv": art["data_csv"], "samples": 8,
        "out_json": str(out_json), "out_csv": str(out_csv),
    })
    rc, out, _ = _run(capsys, "explain", "--config", cfg)
    assert rc == 0
    doc = json.loads(out_json.read_text())
    assert sorted(doc["ranking"]) == list(range(8))
    assert len(doc["mean_abs_phi"]) == 8
    assert doc["selected_top_quarter"] == doc["ranking"][:2]
    assert doc["mode"] == "exact" and doc["samples"] == 8
    rows = out_csv.read_text().splitlines()
    assert rows[0].split(",") == [f"f{i}" for i in range(8)]
    assert len(rows) == 1 + 8
    assert all(len(r.split(",")) == 8 for r in rows[1:])
    assert _emitted(out)["ranking"] == doc["ranking"]


# --- privatize ---------------------------------------------------------------------


def test_privatize_noises_only_selected(tmp_path, capsys, art):
    out_csv = tmp_path / "noised.csv"
    out_audit = tmp_path / "audit.json"
    cfg = _cfg(tmp_path / "c.json", {
        "data_csv": art["data_csv"],
        "spec": {"mode": "selective", "level": "high", "delta": 1e-3,
                 "selected": [0, 1]},
        "out_csv": str(out_csv), "out_audit": str(out_audit),
    })
    rc, out, _ = _run(capsys, "privatize", "--config", cfg)
    assert rc == 0
    noised = load_csv(str(out_csv))
    raw = art["ds"].features
    assert np.array_equal(noised.features[:, 2:], raw[:, 2:])  # untouched
    assert not np.array_equal(noised.features[:, :2], raw[:, :2])
    audit = json.loads(out_audit.read_text())
    assert audit["mode"] == "selective"
    assert _emitted(out)["audit"] == audit


# --- account ---------------------------------------------------------------------


def test_account_epsilon_for_sigma(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json",
               {"q": 0.02, "sigma": 1.3, "steps": 500, "delta": 1e-5})
    rc, out, _ = _run(capsys, "account", "--config", cfg)
    assert rc == 0
    doc = _emitted(out)
    assert abs(doc["epsilon"] - 2.263531793353626) < 1e-6
    assert doc["alpha"] >= 2


def test_account_sigma_for_epsilon(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json",
               {"q": 0.1, "target_epsilon": 1.0, "steps": 300, "delta": 1 / 512})
    rc, out, _ = _run(capsys, "account", "--config", cfg)
    assert rc == 0
    doc = _emitted(out)
    assert doc["sigma"] > 0
    assert 0.999 <= doc["epsilon_at_sigma"] <= 1.0


def test_account_needs_exactly_one_goal(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json",
               {"q": 0.1, "sigma": 1.0, "target_epsilon": 1.0,
                "steps": 10, "delta": 1e-5})
    rc, _, err = _run(capsys, "account", "--config", cfg)
    assert rc == 2
    assert "config error:" in err


# --- attacks ---------------------------------------------------------------------


def test_attack_rda_report(tmp_path, capsys, art):
    out_json = tmp_path / "rda.json"
    cfg = _cfg(tmp_path / "c.json", {
        "data_csv": art["data_csv"],
        "rda": {"runs": 2, "centers_per_user": 2, "train_fraction": 0.6},
        "out_json": str(out_json),
    })
    rc, out, _ = _run(capsys, "attack", "rda", "--config", cfg)
    assert rc == 0
    doc = json.loads(out_json.read_text())
    assert 0.0 <= doc["rda_identification_rate"] <= 1.0
    assert len(doc["per_run_rates"]) == 2
    assert _emitted(out)["rda_identification_rate"] == doc["rda_identification_rate"]


def test_attack_mia_end_to_end(tmp_path, capsys, art):
    pool = normalize(synth_generate(SynthConfig(
        users=8, stimuli=2, frames_per_user_stimulus=10, feature_dim=8,
        class_count=3, user_signature_strength=1.0, label_signal_strength=1.5,
        seed=31, signal_dims=(0, 1))))
    nonmember = normalize(synth_generate(SynthConfig(
        users=6, stimuli=2, frames_per_user_stimulus=10, feature_dim=8,
        class_count=3, user_signature_strength=1.0, label_signal_strength=1.5,
        seed=77, signal_dims=(0, 1))))
    write_csv(pool, tmp_path / "pool.csv")
    write_csv(art["ds"].take(np.arange(32)), tmp_path / "member.csv")
    write_csv(nonmember.take(np.arange(32)), tmp_path / "nonmember.csv")
    out_json = tmp_path / "mia.json"
    cfg = _cfg(tmp_path / "c.json", {
        "model": art["model"],
        "pool_csv": str(tmp_path / "pool.csv"),
        "member_csv": str(tmp_path / "member.csv"),
        "nonmember_csv": str(tmp_path / "nonmember.csv"),
        "shadow_train": {"epochs": 10, "batch_size": 32, "lr": 0.01},
        "attack": {"shadow_count": 2, "shadow_train_size": 32},
        "out_json": str(out_json),
    })
    rc, out, _ = _run(capsys, "attack", "mia", "--config", cfg)
    assert rc == 0
    doc = json.loads(out_json.read_text())
    assert 0.0 <= doc["mia_auc"] <= 1.0
    assert doc["shadow_count"] == 2
    assert _emitted(out)["mia_auc"] == doc["mia_auc"]


# --- pipeline / bench ---------------------------------------------------------------


def test_pipeline_report_from_cli(tmp_path, capsys):
    out_json = tmp_path / "report.json"
    cfg = _cfg(tmp_path / "c.json", {
        "synth": SYNTH,
        "model": {"hidden": [16]},
        "train": {"epochs": 10, "batch_size": 32, "lr": 0.01},
        "rda": {"runs": 2, "centers_per_user": 2, "train_fraction": 0.6},
        "condition": "PD+NPM", "level": "medium",
        "out_json": str(out_json),
    })
    rc, out, _ = _run(capsys, "pipeline", "--config", cfg)
    assert rc == 0
    report = json.loads(out_json.read_text())
    validate_report(report)
    summary = _emitted(out)
    assert summary["condition"] == "PD+NPM"
    assert summary["balanced_accuracy"] == report["balanced_accuracy"]
    assert summary["epsilon_spent"] is None  # data-only condition


def test_bench_latencies(tmp_path, capsys, art):
    cfg = _cfg(tmp_path / "c.json",
               {"model": art["model"], "data_csv": art["data_csv"],
                "repetitions": 2})
    rc, out, _ = _run(capsys, "bench", "--config", cfg)
    assert rc == 0
    doc = _emitted(out)
    for key in ("no_dp", "full_dp", "selective_dp"):
        assert doc[key] > 0
    assert doc["selective_over_full_ratio"] == doc["selective_dp"] / doc["full_dp"]
    assert doc["samples"] >= 1000


# --- exit codes ---------------------------------------------------------------------


def test_exit_2_on_unparseable_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    rc, _, err = _run(capsys, "synth", "--config", str(bad))
    assert rc == 2 and err.startswith("config error:")


def test_exit_2_on_missing_config(tmp_path, capsys):
    rc, _, err = _run(capsys, "synth", "--config", str(tmp_path / "absent.json"))
    assert rc == 2 and err.startswith("config error:")


def test_exit_2_on_non_object_config(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json", [1, 2, 3])
    rc, _, err = _run(capsys, "synth", "--config", cfg)
    assert rc == 2 and "JSON object" in err


def test_exit_2_on_bad_field_values(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.json",
               {"synth": dict(SYNTH, users=0), "out_csv": str(tmp_path / "x.csv")})
    rc, _, err = _run(capsys, "synth", "--config", cfg)
    assert rc == 2 and err.startswith("config error:")

    cfg = _cfg(tmp_path / "c2.json", {"out_csv": str(tmp_path / "x.csv")})
    rc, _, err = _run(capsys, "synth", "--config", cfg)
    assert rc == 2  # missing the synth section entirely


def test_exit_1_on_runtime_failure(tmp_path, capsys, art):
    cfg = _cfg(tmp_path / "c.json", {
        "data_csv": art["data_csv"],
        "model": {"input_dim": 4},  # dataset is 8 wide; fails inside training
        "train": {"epochs": 2},
        "out_model": str(tmp_path / "m.json"),
    })
    rc, _, err = _run(capsys, "train", "--config", cfg)
    assert rc == 1 and err.startswith("error:")


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", "x.json"])
    assert exc.value.code == 2
