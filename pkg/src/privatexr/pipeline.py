"""Experiment pipelines: the four privacy conditions, benchmarking, reporting.

A run is fully described by an ExperimentConfig and a seed. Conditions:

- ``no-privacy``    raw data, plain training
- ``PD+NPM``        privatized data (input-level DP), non-private model
- ``NPD+PM``        raw data, DPSGD-trained model
- ``PD+PM``         both mechanisms

``xai_selective`` (valid only with privatized data) concentrates the feature
budget on the top-quarter Shapley-ranked features instead of all of them.

Every run emits a schema-validated JSON report; reports from identical
configs and seeds are identical except for wall-clock fields.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources as _importlib_resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .accounting import PrivacySpec, find_sigma
from .attacks import MiaConfig, run_rda, shadow_mia
from .attribution import EXACT_DIM_LIMIT, global_importance, select_top_quarter
from .data import Dataset, SynthConfig, load_csv, normalize, synth_generate
from .metrics import balanced_accuracy, mean_accuracy, zero_support_classes
from .nn import AttnConfig, ConvConfig, ModelSpec, TrainedModel, forward
from .privatizer import FeatureDpSpec, audit_record, privacy_levels, privatize_batch
from .rng import derive_seed, stream
from .training import DpTrainConfig, TrainConfig, train

CONDITIONS = ("no-privacy", "PD+NPM", "NPD+PM", "PD+PM")
REPORT_VERSION = 1
WALL_CLOCK_KEYS = ("timing", "inference_ms_per_sample")


class ConfigError(ValueError):
    """Bad experiment configuration (CLI exit code 2)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage label."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class MiaPlan:
    """Membership-attack sizing for pipeline runs."""

    shadow_count: int = 6
    shadow_train_size: int = 256
    eval_size: int = 256
    attack_hidden: tuple[int, ...] = (32,)
    attack_epochs: int = 40
    attack_lr: float = 0.005


@dataclass(frozen=True)
class RdaPlan:
    runs: int = 30
    centers_per_user: int = 4
    train_fraction: float = 0.6


@dataclass(frozen=True)
class ExperimentConfig:
    source: SynthConfig | str  # generator config or csv path
    model: ModelSpec
    train: TrainConfig
    condition: str = "no-privacy"
    xai_selective: bool = False
    level: str | None = None
    dp_train: DpTrainConfig | None = None
    split_fraction: float = 0.8
    explain_samples: int = 32
    attack: MiaPlan | None = None
    rda: RdaPlan | None = field(default_factory=RdaPlan)
    seed: int = 0
    output_dir: str | None = None

    @property
    def privatize_data(self) -> bool:
        return self.condition in ("PD+NPM", "PD+PM")

    @property
    def private_model(self) -> bool:
        return self.condition in ("NPD+PM", "PD+PM")

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if self.xai_selective and not self.privatize_data:
            raise ConfigError("xai_selective requires a privatized-data condition (PD+...)")
        if (self.privatize_data or self.private_model) and self.level is None:
            raise ConfigError(f"condition {self.condition!r} needs a privacy level")
        if self.level is not None and self.level not in privacy_levels():
            raise ConfigError(
                f"unknown level {self.level!r}; have {sorted(privacy_levels())}"
            )
        if self.private_model and self.dp_train is None:
            raise ConfigError(f"condition {self.condition!r} needs a dp_train recipe")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0,1)")
        if self.explain_samples < 1:
            raise ConfigError("explain_samples must be >= 1")


# --- config JSON (the CLI surface) ----------------------------------------------

def _model_spec_from_doc(doc: dict, defaults: tuple[int, int] | None) -> ModelSpec:
    """defaults = (input_dim, class_count) inferred from the data source, if any."""
    kwargs = {
        "arch": doc.get("arch", "mlp"),
        "input_dim": doc.get("input_dim"),
        "class_count": doc.get("class_count"),
    }
    if kwargs["input_dim"] is None:
        if defaults is None:
            raise ConfigError("model.input_dim is required for csv sources")
        kwargs["input_dim"] = defaults[0]
    if kwargs["class_count"] is None:
        if defaults is None:
            raise ConfigError("model.class_count is required for csv sources")
        kwargs["class_count"] = defaults[1]
    if "hidden" in doc:
        kwargs["hidden"] = tuple(doc["hidden"])
    if "conv" in doc:
        kwargs["conv"] = ConvConfig(**doc["conv"])
    if "attn" in doc:
        kwargs["attn"] = AttnConfig(**doc["attn"])
    return ModelSpec(**kwargs)


def _train_config_from_doc(doc: dict) -> TrainConfig:
    allowed = {"epochs", "batch_size", "lr", "patience"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown train keys: {sorted(extra)}")
    return TrainConfig(**doc)


def _dp_train_from_doc(doc: dict) -> DpTrainConfig:
    if "noise_multiplier" in doc or "target_epsilon" in doc:
        raise ConfigError(
            "pipeline dp_train derives noise_multiplier/target_epsilon "
            "from the privacy level; do not set them"
        )
    allowed = {"sampling_rate", "epochs", "lr", "clip_norm", "patience"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown dp_train keys: {sorted(extra)}")
    return DpTrainConfig(noise_multiplier=0.0, **doc)


def config_from_json(doc: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Build a validated ExperimentConfig from a parsed JSON document."""
    try:
        if ("synth" in doc) == ("csv" in doc):
            raise ConfigError("config needs exactly one of 'synth' or 'csv'")
        synth = None
        if "synth" in doc:
            synth_doc = dict(doc["synth"])
            if "signal_dims" in synth_doc and synth_doc["signal_dims"] is not None:
                synth_doc["signal_dims"] = tuple(synth_doc["signal_dims"])
            synth = SynthConfig(**synth_doc)
            source: SynthConfig | str = synth
        else:
            source = str(Path(base_dir) / doc["csv"])
        defaults = (synth.feature_dim, synth.class_count) if synth else None
        model = _model_spec_from_doc(doc.get("model", {}), defaults)
        train_cfg = _train_config_from_doc(doc.get("train", {}))
        dp_train = _dp_train_from_doc(doc["dp_train"]) if doc.get("dp_train") else None
        attack = None
        if doc.get("attack"):
            a = dict(doc["attack"])
            if "attack_hidden" in a:
                a["attack_hidden"] = tuple(a["attack_hidden"])
            attack = MiaPlan(**a)
        rda = RdaPlan(**doc["rda"]) if doc.get("rda") else None
        return ExperimentConfig(
            source=source,
            model=model,
            train=train_cfg,
            condition=doc.get("condition", "no-privacy"),
            xai_selective=bool(doc.get("xai_selective", False)),
            level=doc.get("level"),
            dp_train=dp_train,
            split_fraction=float(doc.get("split_fraction", 0.8)),
            explain_samples=int(doc.get("explain_samples", 32)),
            attack=attack,
            rda=rda,
            seed=int(doc.get("seed", 0)),
            output_dir=doc.get("output_dir"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_doc(cfg: ExperimentConfig) -> dict:
    """Canonical JSON echo of a config (what the report records)."""
    doc: dict = {}
    if isinstance(cfg.source, SynthConfig):
        s = cfg.source
        doc["synth"] = {
            "users": s.users, "stimuli": s.stimuli,
            "frames_per_user_stimulus": s.frames_per_user_stimulus,
            "feature_dim": s.feature_dim, "class_count": s.class_count,
            "user_signature_strength": s.user_signature_strength,
            "label_signal_strength": s.label_signal_strength,
            "seed": s.seed,
            "signal_dims": list(s.signal_dims) if s.signal_dims else None,
        }
    else:
        doc["csv"] = str(cfg.source)
    m = cfg.model
    doc["model"] = {"arch": m.arch, "input_dim": m.input_dim,
                    "class_count": m.class_count, "hidden": list(m.hidden)}
    if m.arch == "conv1d":
        doc["model"]["conv"] = {"filters": m.conv.filters, "kernel": m.conv.kernel,
                                "stride": m.conv.stride}
    if m.arch == "attn_encoder":
        doc["model"]["attn"] = {"model_dim": m.attn.model_dim,
                                "ff_hidden": m.attn.ff_hidden, "heads": m.attn.heads}
    t = cfg.train
    doc["train"] = {"epochs": t.epochs, "batch_size": t.batch_size,
                    "lr": t.lr, "patience": t.patience}
    if cfg.dp_train is not None:
        d = cfg.dp_train
        doc["dp_train"] = {"sampling_rate": d.sampling_rate, "epochs": d.epochs,
                           "lr": d.lr, "clip_norm": d.clip_norm, "patience": d.patience}
    doc["condition"] = cfg.condition
    doc["xai_selective"] = cfg.xai_selective
    doc["level"] = cfg.level
    doc["split_fraction"] = cfg.split_fraction
    doc["explain_samples"] = cfg.explain_samples
    if cfg.attack is not None:
        a = cfg.attack
        doc["attack"] = {"shadow_count": a.shadow_count,
                         "shadow_train_size": a.shadow_train_size,
                         "eval_size": a.eval_size,
                         "attack_hidden": list(a.attack_hidden),
                         "attack_epochs": a.attack_epochs, "attack_lr": a.attack_lr}
    if cfg.rda is not None:
        doc["rda"] = {"runs": cfg.rda.runs, "centers_per_user": cfg.rda.centers_per_user,
                      "train_fraction": cfg.rda.train_fraction}
    doc["seed"] = cfg.seed
    return doc


# --- report helpers ----------------------------------------------------------------

def report_schema() -> dict:
    ref = _importlib_resources.files("privatexr") / "resources" / "report_schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def validate_report(report: dict) -> None:
    """Schema-check a report; raises jsonschema.ValidationError on violation."""
    jsonschema.validate(instance=report, schema=report_schema())


def report_equal_modulo_timing(a: dict, b: dict) -> bool:
    """Determinism comparison: ignore wall-clock fields (timing, latencies)."""
    strip = lambda r: {k: v for k, v in r.items() if k not in WALL_CLOCK_KEYS}
    return strip(a) == strip(b)


# --- benchmark -------------------------------------------------------------------

def bench_inference(model: TrainedModel, dataset: Dataset,
                    specs: list[FeatureDpSpec], repetitions: int = 5,
                    seed: int = 0) -> list[float]:
    """Median ms/sample of (privatize + forward) per spec, 1 warm-up + 5 reps."""
    if len(dataset) < 1000:
        raise ValueError(f"benchmark needs >= 1000 samples, got {len(dataset)}")
    x = dataset.features
    out = []
    for si, spec in enumerate(specs):
        forward(model, privatize_batch(x, spec, stream(seed, "bench", si, "warmup")))
        times = []
        for rep in range(repetitions):
            rng = stream(seed, "bench", si, rep)
            t0 = time.perf_counter()
            noised = privatize_batch(x, spec, rng)
            forward(model, noised)
            times.append((time.perf_counter() - t0) / len(dataset) * 1000.0)
        out.append(float(np.median(times)))
    return out


# --- the pipeline ----------------------------------------------------------------

def _load_source(source: SynthConfig | str) -> Dataset:
    if isinstance(source, SynthConfig):
        return synth_generate(source)
    return load_csv(source)


def run_pipeline(cfg: ExperimentConfig) -> dict:
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()

    with _stage("data"):
        ds = normalize(_load_source(cfg.source))
        n, d, k = len(ds), ds.feature_dim, ds.class_count
    if cfg.model.input_dim != d:
        raise ConfigError(f"model input_dim {cfg.model.input_dim} != dataset width {d}")
    if cfg.model.class_count != k:
        raise ConfigError(f"model class_count {cfg.model.class_count} != dataset classes {k}")

    with _stage("partition"):
        pool_n = 2 * cfg.attack.shadow_train_size if cfg.attack else 0
        perm = stream(cfg.seed, "partition").permutation(n)
        rest = perm[pool_n:]
        cut = round(cfg.split_fraction * len(rest))
        if pool_n and len(rest) < 4:
            raise ConfigError("attacker pool consumes the whole dataset")
        if cut < 2 or len(rest) - cut < 2:
            raise ConfigError("split leaves an empty train or test side")
        pool_idx = np.sort(perm[:pool_n])
        tr_idx = np.sort(rest[:cut])
        te_idx = np.sort(rest[cut:])

    # Feature ranking always comes from a reference model fit on raw data:
    # selection must exist before data privatization can target it, and using
    # one ranking everywhere keeps conditions comparable at equal seeds.
    with _stage("selection"):
        ref_recipe = replace(cfg.train, seed=derive_seed(cfg.seed, "reference"))
        ref_model = train(ds.take(tr_idx), ds.take(te_idx), cfg.model, ref_recipe)
        n_expl = min(cfg.explain_samples, len(te_idx))
        pick = np.sort(stream(cfg.seed, "explain").choice(len(te_idx), size=n_expl,
                                                          replace=False))
        sample = ds.take(te_idx).features[pick]
        gi = global_importance(
            ref_model, sample, np.zeros(d),
            mode="exact" if d <= EXACT_DIM_LIMIT else "sampled",
            seed=derive_seed(cfg.seed, "explain"),
        )
        selected = select_top_quarter(gi, d)

    feature_spec = None
    work = ds
    if cfg.privatize_data:
        with _stage("privatize"):
            feature_spec = FeatureDpSpec.from_level(
                "selective" if cfg.xai_selective else "full",
                cfg.level, delta=1.0 / (2 * n),
                selected=selected if cfg.xai_selective else None,
            )
            noised = privatize_batch(ds.features, feature_spec,
                                     stream(cfg.seed, "feature-noise", "dataset"))
            work = ds.with_features(noised)

    tr, te, pool = work.take(tr_idx), work.take(te_idx), work.take(pool_idx)

    with _stage("train"):
        recipe = replace(cfg.train, seed=derive_seed(cfg.seed, "target"))
        if cfg.private_model:
            eps = privacy_levels()[cfg.level]
            delta = 1.0 / (2 * len(tr))
            q = cfg.dp_train.sampling_rate
            planned = cfg.dp_train.epochs * max(1, round(1.0 / q))
            sigma = find_sigma(PrivacySpec(eps, delta), q, planned)
            dp = replace(cfg.dp_train, noise_multiplier=sigma,
                         target_epsilon=eps, target_delta=delta)
            recipe = replace(recipe, private=dp)
        target = train(tr, te, cfg.model, recipe)

    with _stage("utility"):
        preds = forward(target, te.features).argmax(axis=1)
        bacc = balanced_accuracy(preds, te.labels, k)
        macc = mean_accuracy(preds, te.labels)
        zero_support = zero_support_classes(te.labels, k)

    mia_auc = None
    if cfg.attack is not None:
        with _stage("mia"):
            esize = min(cfg.attack.eval_size, len(tr), len(te))
            mi = np.sort(stream(cfg.seed, "mia", "members").choice(
                len(tr), size=esize, replace=False))
            ni = np.sort(stream(cfg.seed, "mia", "nonmembers").choice(
                len(te), size=esize, replace=False))
            mcfg = MiaConfig(
                shadow_count=cfg.attack.shadow_count,
                shadow_train_size=cfg.attack.shadow_train_size,
                shadow_spec=cfg.model,
                shadow_train=recipe,
                attack_hidden=cfg.attack.attack_hidden,
                attack_train=TrainConfig(epochs=cfg.attack.attack_epochs, batch_size=64,
                                         lr=cfg.attack.attack_lr,
                                         patience=cfg.attack.attack_epochs),
                seed=derive_seed(cfg.seed, "mia"),
            )
            mia_auc = shadow_mia(target, pool, tr.take(mi), te.take(ni), mcfg)

    rda_rate = None
    if cfg.rda is not None:
        with _stage("rda"):
            # model-side DP never touches the frames, so the identification
            # input is the raw dataset unless the data itself was privatized
            rda_input = work if cfg.privatize_data else ds
            rda_rate = run_rda(rda_input, runs=cfg.rda.runs,
                               centers_per_user=cfg.rda.centers_per_user,
                               train_fraction=cfg.rda.train_fraction,
                               seed=derive_seed(cfg.seed, "rda")).mean_rate

    with _stage("bench"):
        bench_level = cfg.level or "high"
        bench_delta = 1.0 / (2 * n)
        specs = [
            FeatureDpSpec(mode="off"),
            FeatureDpSpec.from_level("full", bench_level, bench_delta),
            FeatureDpSpec.from_level("selective", bench_level, bench_delta,
                                     selected=selected),
        ]
        bench_ds = ds
        if len(bench_ds) < 1000:
            reps = math.ceil(1000 / len(bench_ds))
            bench_ds = ds.take(np.tile(np.arange(len(ds)), reps))
        ms = bench_inference(target, bench_ds, specs, seed=derive_seed(cfg.seed, "bench"))
        latencies = {
            "no_dp": ms[0],
            "full_dp": ms[1],
            "selective_dp": ms[2],
            "selective_over_full_ratio": ms[2] / ms[1],
        }

    finished = datetime.now(timezone.utc)
    report = {
        "report_version": REPORT_VERSION,
        "generator": f"privatexr {__version__}",
        "condition": cfg.condition,
        "xai_selective": cfg.xai_selective,
        "level": cfg.level,
        "seed": cfg.seed,
        "balanced_accuracy": bacc,
        "mean_accuracy": macc,
        "zero_support_classes": list(zero_support),
        "mia_auc": mia_auc,
        "rda_rate": rda_rate,
        "feature_dp": audit_record(feature_spec, d) if feature_spec else None,
        "selected_features": list(selected),
        "importance_ranking": list(gi.ranking),
        "inference_ms_per_sample": latencies,
        "config": config_to_doc(cfg),
        "timing": {
            "started_at": started.isoformat(),
            "finished_at": finished.isoformat(),
            "duration_s": time.perf_counter() - t0,
        },
    }
    if cfg.private_model and "privacy_spent" in target.meta:
        report["epsilon_spent"] = dict(target.meta["privacy_spent"])
    validate_report(report)

    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"report_{cfg.condition.replace('+', '_')}_seed{cfg.seed}.json"
        path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
    return report
