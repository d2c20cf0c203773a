"""Multi-user time-series dataset: CSV ingestion, normalization, splits, and a
synthetic generator with controllable identity and label signal.

A dataset is columnar (numpy arrays) but exposes per-row ``Frame`` views.
All operations are pure: they return new ``Dataset`` values and never mutate
their inputs (arrays are frozen read-only at construction).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .rng import stream

STANDARD_COLUMNS = ("user_id", "stimulus_id", "timestamp_ms", "label")


class SchemaError(ValueError):
    """A required column is missing or the column mapping is unusable."""


class CsvFormatError(ValueError):
    """Structurally broken CSV (inconsistent column counts, empty file)."""


class CsvParseError(ValueError):
    """A cell failed to parse; message carries the 1-based data row number."""


@dataclass(frozen=True)
class Frame:
    """One timestamped sample: who, which scene, when, the features, the class."""

    user_id: int
    stimulus_id: int
    timestamp_ms: int
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class SplitSpec:
    """Train/test partition recipe. Same seed -> byte-identical membership."""

    train_fraction: float
    seed: int
    granularity: str = "frame"  # "frame" | "user"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        if self.granularity not in ("frame", "user"):
            raise ValueError(f"granularity must be 'frame' or 'user', got {self.granularity!r}")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic multi-user generator knobs.

    Every user carries a persistent per-feature offset (scale ``user_signature_strength``,
    the identity signal); every class a persistent direction (scale
    ``label_signal_strength``, the utility signal). Frames are
    class direction + user offset + unit Gaussian noise.
    ``signal_dims`` optionally restricts the class direction to a feature subset.
    """

    users: int = 20
    stimuli: int = 4
    frames_per_user_stimulus: int = 50
    feature_dim: int = 12
    class_count: int = 4
    user_signature_strength: float = 1.5
    label_signal_strength: float = 1.5
    seed: int = 0
    signal_dims: tuple[int, ...] | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.users < 2 or self.class_count < 2 or self.feature_dim < 4:
            raise ValueError("need users >= 2, class_count >= 2, feature_dim >= 4")
        if min(self.stimuli, self.frames_per_user_stimulus) <= 0:
            raise ValueError("stimuli and frames_per_user_stimulus must be positive")
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ValueError("class_names length must equal class_count")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar frame collection. Immutable; safe to share across threads."""

    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    user_ids: np.ndarray          # (n,) int64
    stimulus_ids: np.ndarray      # (n,) int64
    timestamps_ms: np.ndarray     # (n,) int64
    labels: np.ndarray            # (n,) int64
    features: np.ndarray          # (n, d) float64
    norm_stats: tuple[np.ndarray, np.ndarray] | None = None  # (mu, sigma), each (d,)

    def __post_init__(self):
        n, d = self.features.shape
        if d != len(self.feature_names):
            raise ValueError(f"features width {d} != {len(self.feature_names)} feature names")
        for arr in (self.user_ids, self.stimulus_ids, self.timestamps_ms, self.labels):
            if arr.shape != (n,):
                raise ValueError("column arrays must all have one entry per frame")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels must lie in [0, class_count)")
        if n and self.timestamps_ms.min() < 0:
            raise ValueError("timestamps must be non-negative")
        if self.norm_stats is not None and (
            self.norm_stats[0].shape != (d,) or self.norm_stats[1].shape != (d,)
        ):
            raise ValueError("norm_stats must be per-feature (mu, sigma) vectors")
        for name in ("user_ids", "stimulus_ids", "timestamps_ms", "labels", "features"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.norm_stats is not None:
            object.__setattr__(
                self, "norm_stats", (_frozen(self.norm_stats[0]), _frozen(self.norm_stats[1]))
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def frame(self, i: int) -> Frame:
        return Frame(
            user_id=int(self.user_ids[i]),
            stimulus_id=int(self.stimulus_ids[i]),
            timestamp_ms=int(self.timestamps_ms[i]),
            features=self.features[i],
            label=int(self.labels[i]),
        )

    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    def take(self, indices) -> "Dataset":
        """New dataset holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            feature_names=self.feature_names,
            class_names=self.class_names,
            user_ids=self.user_ids[idx],
            stimulus_ids=self.stimulus_ids[idx],
            timestamps_ms=self.timestamps_ms[idx],
            labels=self.labels[idx],
            features=self.features[idx],
            norm_stats=self.norm_stats,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        """Same rows with a replacement feature matrix (e.g. after noising)."""
        if features.shape != self.features.shape:
            raise ValueError("replacement features must keep the same shape")
        return replace(self, features=np.array(features, dtype=np.float64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.feature_names, self.class_names) != (other.feature_names, other.class_names):
            return False
        cols = ("user_ids", "stimulus_ids", "timestamps_ms", "labels", "features")
        if not all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols):
            return False
        if (self.norm_stats is None) != (other.norm_stats is None):
            return False
        if self.norm_stats is not None:
            return np.array_equal(self.norm_stats[0], other.norm_stats[0]) and np.array_equal(
                self.norm_stats[1], other.norm_stats[1]
            )
        return True


def from_frames(
    frames,
    feature_names,
    class_names,
    norm_stats=None,
) -> Dataset:
    """Assemble a Dataset from an ordered iterable of Frames."""
    frames = list(frames)
    d = len(feature_names)
    feats = np.array([f.features for f in frames], dtype=np.float64).reshape(len(frames), d)
    return Dataset(
        feature_names=tuple(feature_names),
        class_names=tuple(class_names),
        user_ids=np.array([f.user_id for f in frames], dtype=np.int64),
        stimulus_ids=np.array([f.stimulus_id for f in frames], dtype=np.int64),
        timestamps_ms=np.array([f.timestamp_ms for f in frames], dtype=np.int64),
        labels=np.array([f.label for f in frames], dtype=np.int64),
        features=feats,
        norm_stats=norm_stats,
    )


# --- CSV ingestion --------------------------------------------------------

def _manifest_path(path) -> str:
    return os.fspath(path) + ".manifest.json"


def load_csv(path: str, schema: dict | None = None) -> Dataset:
    """Read a dataset from CSV.

    The header must contain the user/stimulus/timestamp/label columns (names
    overridable through ``schema`` or a ``<path>.manifest.json`` sidecar);
    every other column is a feature. Row order is preserved.
    """
    manifest = {}
    if os.path.exists(_manifest_path(path)):
        with open(_manifest_path(path), encoding="utf-8") as fh:
            manifest = json.load(fh)
    colmap = dict(zip(STANDARD_COLUMNS, STANDARD_COLUMNS))
    colmap.update(manifest.get("columns", {}))
    if schema:
        colmap.update(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        for role in STANDARD_COLUMNS:
            if colmap[role] not in header:
                raise SchemaError(f"{path}: missing required column {colmap[role]!r} ({role})")
        role_idx = {role: header.index(colmap[role]) for role in STANDARD_COLUMNS}
        feat_idx = [i for i in range(len(header)) if i not in role_idx.values()]
        feature_names = tuple(header[i] for i in feat_idx)

        users, stims, times, labels, feats = [], [], [], [], []
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}"
                )
            try:
                users.append(int(row[role_idx["user_id"]]))
                stims.append(int(row[role_idx["stimulus_id"]]))
                times.append(int(row[role_idx["timestamp_ms"]]))
                labels.append(int(row[role_idx["label"]]))
            except ValueError as exc:
                raise CsvParseError(f"{path}: row {rownum}: bad id/label cell ({exc})") from None
            try:
                feats.append([float(row[i]) for i in feat_idx])
            except ValueError:
                bad = next(row[i] for i in feat_idx if not _is_float(row[i]))
                raise CsvParseError(
                    f"{path}: row {rownum}: non-numeric feature cell {bad!r}"
                ) from None

    n = len(users)
    if manifest.get("class_names"):
        class_names = tuple(manifest["class_names"])
    else:
        k = (max(labels) + 1) if labels else 2
        class_names = tuple(f"class_{i}" for i in range(k))
    norm_stats = None
    if manifest.get("norm_stats"):
        norm_stats = (
            np.array(manifest["norm_stats"]["mu"], dtype=np.float64),
            np.array(manifest["norm_stats"]["sigma"], dtype=np.float64),
        )
    return Dataset(
        feature_names=feature_names,
        class_names=class_names,
        user_ids=np.array(users, dtype=np.int64),
        stimulus_ids=np.array(stims, dtype=np.int64),
        timestamps_ms=np.array(times, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        features=np.array(feats, dtype=np.float64).reshape(n, len(feature_names)),
        norm_stats=norm_stats,
    )


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(ds: Dataset, path: str, manifest: bool = True) -> None:
    """Write ``ds`` as CSV (floats as shortest round-trippable decimals, LF
    endings) plus, by default, a sidecar manifest that preserves class names
    and normalization stats so ``load_csv`` round-trips to an equal Dataset."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(STANDARD_COLUMNS) + list(ds.feature_names))
        for i in range(len(ds)):
            writer.writerow(
                [
                    int(ds.user_ids[i]),
                    int(ds.stimulus_ids[i]),
                    int(ds.timestamps_ms[i]),
                    int(ds.labels[i]),
                ]
                + [repr(float(v)) for v in ds.features[i]]
            )
    if manifest:
        doc = {"class_names": list(ds.class_names)}
        if ds.norm_stats is not None:
            doc["norm_stats"] = {
                "mu": [float(v) for v in ds.norm_stats[0]],
                "sigma": [float(v) for v in ds.norm_stats[1]],
            }
        with open(_manifest_path(path), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


# --- normalization --------------------------------------------------------

CONSTANT_SIGMA_FLOOR = 1e-12


def normalize(ds: Dataset) -> Dataset:
    """Column-wise (x - mu) / sigma with population sigma, stats recorded.

    Constant columns (sigma < 1e-12) map to all-zeros and record sigma = 0,
    so re-normalizing is a no-op there too.
    """
    if len(ds) < 2:
        raise ValueError("normalization needs at least 2 frames")
    mu = ds.features.mean(axis=0)
    sigma = ds.features.std(axis=0)  # population std, no Bessel correction
    return normalize_with(ds, (mu, sigma))


def normalize_with(ds: Dataset, stats: tuple[np.ndarray, np.ndarray]) -> Dataset:
    """Apply precomputed per-feature (mu, sigma); used for train-only stats."""
    mu = np.asarray(stats[0], dtype=np.float64)
    sigma = np.asarray(stats[1], dtype=np.float64)
    constant = sigma < CONSTANT_SIGMA_FLOOR
    safe = np.where(constant, 1.0, sigma)
    out = (ds.features - mu) / safe
    out[:, constant] = 0.0
    recorded = np.where(constant, 0.0, sigma)
    return replace(ds, features=out, norm_stats=(mu, recorded))


# --- splitting ------------------------------------------------------------

def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition.

    Frame granularity shuffles rows with the seeded generator and cuts at
    round(train_fraction * n); user granularity assigns whole users (at least
    one user on each side).
    """
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = stream(spec.seed, "split")
    if spec.granularity == "frame":
        order = rng.permutation(len(ds))
        cut = round(spec.train_fraction * len(ds))
        return ds.take(order[:cut]), ds.take(order[cut:])

    users = np.unique(ds.user_ids)
    if len(users) < 2:
        raise ValueError("user-level split needs at least 2 users")
    order = rng.permutation(len(users))
    cut = round(spec.train_fraction * len(users))
    cut = min(max(cut, 1), len(users) - 1)  # both sides non-empty
    train_users = set(users[order[:cut]].tolist())
    mask = np.array([u in train_users for u in ds.user_ids])
    idx = np.arange(len(ds))
    return ds.take(idx[mask]), ds.take(idx[~mask])


def kfold_split(ds: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """k (train, validation) pairs; folds disjoint, sizes differ by <= 1,
    every frame validates exactly once."""
    n = len(ds)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    order = stream(seed, "kfold").permutation(n)
    folds = [order[i::k] for i in range(k)]
    pairs = []
    for i, val in enumerate(folds):
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        pairs.append((ds.take(np.sort(train)), ds.take(np.sort(val))))
    return pairs


# --- synthetic generation ---------------------------------------------------

def synth_generate(cfg: SynthConfig) -> Dataset:
    """Seed-deterministic synthetic dataset per the SynthConfig recipe."""
    rng = stream(cfg.seed, "synth")
    d, k = cfg.feature_dim, cfg.class_count
    user_offsets = cfg.user_signature_strength * rng.standard_normal((cfg.users, d))
    dims = np.arange(d) if cfg.signal_dims is None else np.asarray(cfg.signal_dims, dtype=int)
    class_dirs = np.zeros((k, d))
    class_dirs[:, dims] = cfg.label_signal_strength * rng.standard_normal((k, len(dims)))

    per_group = cfg.frames_per_user_stimulus
    blocks, users, stims, labels, times = [], [], [], [], []
    t = 0
    for u in range(cfg.users):
        for s in range(cfg.stimuli):
            ls = rng.integers(0, k, size=per_group)
            noise = rng.standard_normal((per_group, d))
            blocks.append(class_dirs[ls] + user_offsets[u] + noise)
            users.append(np.full(per_group, u))
            stims.append(np.full(per_group, s))
            labels.append(ls)
            times.append(np.arange(t, t + per_group) * 100)
            t += per_group
    names = cfg.class_names or tuple(f"class_{i}" for i in range(k))
    return Dataset(
        feature_names=tuple(f"f{i}" for i in range(d)),
        class_names=tuple(names),
        user_ids=np.concatenate(users).astype(np.int64),
        stimulus_ids=np.concatenate(stims).astype(np.int64),
        timestamps_ms=np.concatenate(times).astype(np.int64),
        labels=np.concatenate(labels).astype(np.int64),
        features=np.vstack(blocks),
    )
