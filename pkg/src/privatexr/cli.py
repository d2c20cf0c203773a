"""Command-line entry points for the workbench.

Every subcommand takes ``--config <json>`` (paths and knobs live in the file)
and an optional ``--seed`` override. Exit codes: 0 success, 2 bad config,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .accounting import PrivacySpec, epsilon_after, find_sigma
from .attacks import MiaConfig, run_mia, run_rda, train_attack_model, train_shadow_ensemble
from .attribution import EXACT_DIM_LIMIT, explain_batch, select_top_quarter
from .data import Dataset, SynthConfig, load_csv, normalize, normalize_with, synth_generate, write_csv
from .nn import load_model, save_model
from .pipeline import (
    ConfigError,
    _model_spec_from_doc,
    _train_config_from_doc,
    bench_inference,
    config_from_json,
    run_pipeline,
)
from .privatizer import FeatureDpSpec, audit_record, privatize_batch
from .rng import derive_seed, stream
from .training import DpTrainConfig, TrainConfig, train


@contextmanager
def _config_phase():
    """Convert malformed-config exceptions into ConfigError (exit code 2)."""
    try:
        yield
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _load_normalized(path: str) -> Dataset:
    ds = load_csv(path)
    return ds if ds.norm_stats is not None else normalize(ds)


# --- subcommand handlers -----------------------------------------------------

def _cmd_synth(doc: dict) -> int:
    with _config_phase():
        synth_doc = dict(doc["synth"])
        if doc.get("seed") is not None:
            synth_doc["seed"] = int(doc["seed"])
        if synth_doc.get("signal_dims") is not None:
            synth_doc["signal_dims"] = tuple(synth_doc["signal_dims"])
        cfg = SynthConfig(**synth_doc)
        out = doc["out_csv"]
    ds = synth_generate(cfg)
    write_csv(ds, out)
    _emit({"out_csv": out, "frames": len(ds), "users": cfg.users,
           "feature_dim": ds.feature_dim, "classes": ds.class_count})
    return 0


def _dp_from_doc(doc: dict) -> DpTrainConfig:
    allowed = {"clip_norm", "noise_multiplier", "sampling_rate", "epochs", "lr",
               "target_delta", "target_epsilon", "patience"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown dp_train keys: {sorted(extra)}")
    return DpTrainConfig(**doc)


def _cmd_train(doc: dict) -> int:
    with _config_phase():
        ds = _load_normalized(doc["data_csv"])
        spec = _model_spec_from_doc(doc.get("model", {}),
                                    (ds.feature_dim, ds.class_count))
        base = _train_config_from_doc(doc.get("train", {}))
        seed = int(doc.get("seed", 0))
        dp = _dp_from_doc(doc["dp_train"]) if doc.get("dp_train") else None
        frac = float(doc.get("split_fraction", 0.8))
        if not 0.0 < frac < 1.0:
            raise ConfigError("split_fraction must lie in (0,1)")
        out_model = doc["out_model"]
    from dataclasses import replace
    from .data import SplitSpec, split

    tr, te = split(ds, SplitSpec(frac, seed=derive_seed(seed, "split")))
    recipe = replace(base, seed=derive_seed(seed, "target"), private=dp)
    model = train(tr, te, spec, recipe, progress_path=doc.get("progress_log"))
    save_model(model, out_model)
    summary = {"out_model": out_model, "epochs_run": model.meta.get("epochs_run"),
               "final_loss": model.meta.get("final_loss")}
    if "privacy_spent" in model.meta:
        summary["privacy_spent"] = model.meta["privacy_spent"]
    _emit(summary)
    return 0


def _cmd_explain(doc: dict) -> int:
    with _config_phase():
        model = load_model(doc["model"])
        ds = _load_normalized(doc["data_csv"])
        samples = int(doc.get("samples", 32))
        mode = doc.get("mode", "exact" if ds.feature_dim <= EXACT_DIM_LIMIT else "sampled")
        permutations = int(doc.get("permutations", 200))
        seed = int(doc.get("seed", 0))
        out_json = doc["out_json"]
        if samples < 1:
            raise ConfigError("samples must be >= 1")
    n = min(samples, len(ds))
    pick = np.sort(stream(seed, "explain").choice(len(ds), size=n, replace=False))
    batch = ds.features[pick]
    report, gi = explain_batch(model, batch, np.zeros(ds.feature_dim), mode=mode,
                               permutations=permutations, seed=seed)
    selected = select_top_quarter(gi, ds.feature_dim)
    out = {
        "ranking": list(gi.ranking),
        "mean_abs_phi": [float(v) for v in gi.mean_abs_phi],
        "selected_top_quarter": list(selected),
        "value_kind": report.value_kind,
        "mode": mode,
        "samples": n,
        "feature_names": list(ds.feature_names),
    }
    Path(out_json).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    if doc.get("out_csv"):
        with open(doc["out_csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ds.feature_names)
            for row in report.per_sample_phi:
                w.writerow([repr(float(v)) for v in row])
    _emit({"out_json": out_json, "ranking": out["ranking"],
           "selected_top_quarter": out["selected_top_quarter"]})
    return 0


def _feature_spec_from_doc(doc: dict) -> FeatureDpSpec:
    sel = doc.get("selected")
    kwargs = {
        "selected": tuple(sel) if sel is not None else None,
        "clamp": float(doc.get("clamp", 3.0)),
    }
    if "level" in doc:
        return FeatureDpSpec.from_level(doc["mode"], doc["level"],
                                        float(doc["delta"]), **kwargs)
    return FeatureDpSpec(mode=doc["mode"], epsilon=doc.get("epsilon"),
                         delta=doc.get("delta"), **kwargs)


def _cmd_privatize(doc: dict) -> int:
    with _config_phase():
        ds = _load_normalized(doc["data_csv"])
        spec = _feature_spec_from_doc(doc["spec"])
        seed = int(doc.get("seed", 0))
        out_csv = doc["out_csv"]
    noised = privatize_batch(ds.features, spec, stream(seed, "feature-noise"))
    write_csv(ds.with_features(noised), out_csv)
    audit = audit_record(spec, ds.feature_dim)
    if doc.get("out_audit"):
        Path(doc["out_audit"]).write_text(json.dumps(audit, indent=1) + "\n",
                                          encoding="utf-8")
    _emit({"out_csv": out_csv, "audit": audit})
    return 0


def _cmd_attack_mia(doc: dict) -> int:
    with _config_phase():
        target = load_model(doc["model"])
        pool = _load_normalized(doc["pool_csv"])
        member = load_csv(doc["member_csv"])
        nonmember = load_csv(doc["nonmember_csv"])
        if member.norm_stats is None:
            member = normalize_with(member, pool.norm_stats)
        if nonmember.norm_stats is None:
            nonmember = normalize_with(nonmember, pool.norm_stats)
        a = dict(doc.get("attack", {}))
        if "attack_hidden" in a:
            a["attack_hidden"] = tuple(a["attack_hidden"])
        shadow_train = _train_config_from_doc(doc.get("shadow_train", {}))
        if doc.get("shadow_dp"):
            from dataclasses import replace
            shadow_train = replace(shadow_train, private=_dp_from_doc(doc["shadow_dp"]))
        seed = int(doc.get("seed", 0))
        cfg = MiaConfig(shadow_spec=target.spec, shadow_train=shadow_train,
                        seed=seed, **a)
        out_json = doc["out_json"]
    shadows = train_shadow_ensemble(pool, cfg)
    attack_model, norm_stats = train_attack_model(shadows, cfg)
    auc = run_mia(target, member, nonmember, attack_model, norm_stats)
    out = {"attack": "mia", "mia_auc": auc, "shadow_count": cfg.shadow_count,
           "seed": seed}
    Path(out_json).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    _emit(out)
    return 0


def _cmd_attack_rda(doc: dict) -> int:
    with _config_phase():
        ds = _load_normalized(doc["data_csv"])
        plan = dict(doc.get("rda", {}))
        allowed = {"runs", "centers_per_user", "train_fraction"}
        extra = set(plan) - allowed
        if extra:
            raise ConfigError(f"unknown rda keys: {sorted(extra)}")
        fspec = _feature_spec_from_doc(doc["feature_spec"]) if doc.get("feature_spec") else None
        seed = int(doc.get("seed", 0))
        out_json = doc["out_json"]
    res = run_rda(ds, seed=seed, feature_spec=fspec, **plan)
    out = {"attack": "rda", "rda_identification_rate": res.mean_rate,
           "per_run_rates": list(res.per_run_rates), "runs": len(res.per_run_rates),
           "seed": seed}
    Path(out_json).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    _emit({k: out[k] for k in ("attack", "rda_identification_rate", "runs", "seed")})
    return 0


def _cmd_pipeline(doc: dict) -> int:
    with _config_phase():
        cfg = config_from_json(doc)
        out_json = doc.get("out_json")
    report = run_pipeline(cfg)
    if out_json:
        Path(out_json).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                                  encoding="utf-8")
    _emit({
        "condition": report["condition"],
        "balanced_accuracy": report["balanced_accuracy"],
        "mean_accuracy": report["mean_accuracy"],
        "mia_auc": report["mia_auc"],
        "rda_rate": report["rda_rate"],
        "epsilon_spent": report.get("epsilon_spent"),
        "out_json": out_json,
    })
    return 0


def _cmd_bench(doc: dict) -> int:
    with _config_phase():
        model = load_model(doc["model"])
        ds = _load_normalized(doc["data_csv"])
        level = doc.get("level", "high")
        selected = doc.get("selected")
        reps = int(doc.get("repetitions", 5))
        seed = int(doc.get("seed", 0))
        delta = float(doc.get("delta", 1.0 / (2 * len(ds))))
        d = ds.feature_dim
        if selected is None:
            selected = list(range(-(-d // 4)))  # leading quarter as a stand-in
        specs = [
            FeatureDpSpec(mode="off"),
            FeatureDpSpec.from_level("full", level, delta),
            FeatureDpSpec.from_level("selective", level, delta,
                                     selected=tuple(selected)),
        ]
    import math

    bench_ds = ds
    if len(bench_ds) < 1000:
        bench_ds = ds.take(np.tile(np.arange(len(ds)), math.ceil(1000 / len(ds))))
    ms = bench_inference(model, bench_ds, specs, repetitions=reps, seed=seed)
    out = {"no_dp": ms[0], "full_dp": ms[1], "selective_dp": ms[2],
           "selective_over_full_ratio": ms[2] / ms[1], "samples": len(bench_ds)}
    if doc.get("out_json"):
        Path(doc["out_json"]).write_text(json.dumps(out, indent=1) + "\n",
                                         encoding="utf-8")
    _emit(out)
    return 0


def _cmd_account(doc: dict) -> int:
    with _config_phase():
        q = float(doc["q"])
        steps = int(doc["steps"])
        delta = float(doc["delta"])
        has_sigma = doc.get("sigma") is not None
        has_target = doc.get("target_epsilon") is not None
        if has_sigma == has_target:
            raise ConfigError("give exactly one of 'sigma' or 'target_epsilon'")
    if has_sigma:
        sigma = float(doc["sigma"])
        eps, alpha = epsilon_after(q, sigma, steps, delta)
        _emit({"epsilon": eps, "alpha": alpha, "q": q, "sigma": sigma,
               "steps": steps, "delta": delta})
    else:
        target = float(doc["target_epsilon"])
        sigma = find_sigma(PrivacySpec(target, delta), q, steps)
        eps, alpha = epsilon_after(q, sigma, steps, delta)
        _emit({"sigma": sigma, "epsilon_at_sigma": eps, "alpha": alpha, "q": q,
               "steps": steps, "delta": delta, "target_epsilon": target})
    return 0


def _cmd_serve(doc: dict) -> int:
    from .serve import bundle_from_config, create_app

    with _config_phase():
        bundle = bundle_from_config(doc)
        host = doc.get("host", "127.0.0.1")
        port = int(doc.get("port", 8000))
    import uvicorn

    uvicorn.run(create_app(bundle), host=host, port=port, log_level="warning")
    return 0


_DISPATCH = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "explain": _cmd_explain,
    "privatize": _cmd_privatize,
    ("attack", "mia"): _cmd_attack_mia,
    ("attack", "rda"): _cmd_attack_rda,
    "pipeline": _cmd_pipeline,
    "bench": _cmd_bench,
    "account": _cmd_account,
    "serve": _cmd_serve,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privatexr",
        description="Privacy workbench: data, training, attribution, attacks, serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, parent=sub):
        p = parent.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        return p

    add("synth", "generate a synthetic dataset CSV")
    add("train", "train a model (optionally with DPSGD) and save it")
    add("explain", "Shapley attribution report for a saved model")
    add("privatize", "apply calibrated feature noise to a dataset CSV")
    attack = sub.add_parser("attack", help="run an adversarial evaluation")
    attack_sub = attack.add_subparsers(dest="attack_kind", required=True)
    add("mia", "shadow-model membership inference", parent=attack_sub)
    add("rda", "RBFN re-identification", parent=attack_sub)
    add("pipeline", "full experiment: one condition, one report")
    add("bench", "inference latency per privatization mode")
    add("account", "RDP accounting: epsilon for sigma, or sigma for epsilon")
    add("serve", "serve models over HTTP + stream")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    key = (args.command, args.attack_kind) if args.command == "attack" else args.command
    try:
        with _config_phase():
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
        if args.seed is not None:
            doc["seed"] = args.seed
        return _DISPATCH[key](doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:  # pragma: no cover - interactive only
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
