"""Minimal float64 neural-network engine with hand-written reverse mode.

Three fixed architectures over (n, T, d) frame batches:

* ``mlp``          — dense ReLU stack on flattened inputs
* ``conv1d``       — one time-axis convolution (channels last, symmetric pad
                     5), ReLU, mean-pool over time, dense head
* ``attn_encoder`` — input projection, sinusoidal positions, one pre-LN
                     self-attention block with residuals, mean-pool, linear head

Parameters live in one flat float64 vector (fixed layout per spec, see
``param_layout``); gradients come in two reductions:

* ``mean``        — ordinary summed backprop, divided by n
* ``per_example`` — exact per-sample gradient matrix (n, P), computed by
                    keeping the batch axis un-contracted in every einsum

The two reductions are independent contractions of the same backward pass, so
their agreement (mean of per-example rows vs direct mean) is a meaningful
numerical check, not an identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

MODEL_VERSION = 1
ARCHS = ("mlp", "conv1d", "attn_encoder")
CONV_PAD = 5  # symmetric time padding, both sides
LN_EPS = 1e-5


class DimensionError(ValueError):
    """Input shape disagrees with the model spec; message names both."""


@dataclass(frozen=True)
class ConvConfig:
    filters: int = 64
    kernel: int = 10
    stride: int = 1

    def __post_init__(self):
        if min(self.filters, self.kernel, self.stride) < 1:
            raise ValueError("conv filters/kernel/stride must be >= 1")


@dataclass(frozen=True)
class AttnConfig:
    model_dim: int = 64
    ff_hidden: int = 256
    heads: int = 1

    def __post_init__(self):
        if min(self.model_dim, self.ff_hidden, self.heads) < 1:
            raise ValueError("attn dims must be >= 1")
        if self.model_dim % self.heads:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_dim: int
    class_count: int
    hidden: tuple[int, ...] = (32,)
    conv: ConvConfig | None = None
    attn: AttnConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.input_dim < 1 or self.class_count < 2:
            raise ValueError("need input_dim >= 1 and class_count >= 2")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        # arch-specific blocks exist exactly for their architecture
        if self.arch == "conv1d" and self.conv is None:
            object.__setattr__(self, "conv", ConvConfig())
        if self.arch == "attn_encoder" and self.attn is None:
            object.__setattr__(self, "attn", AttnConfig())
        if self.arch != "conv1d" and self.conv is not None:
            raise ValueError(f"conv config is only valid for conv1d, not {self.arch}")
        if self.arch != "attn_encoder" and self.attn is not None:
            raise ValueError(f"attn config is only valid for attn_encoder, not {self.arch}")


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed (name, shape) order defining the flat parameter vector."""
    d, k = spec.input_dim, spec.class_count
    names: list[tuple[str, tuple[int, ...]]] = []

    def dense_stack(prefix, sizes):
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            names.append((f"{prefix}W{i}", (a, b)))
            names.append((f"{prefix}b{i}", (b,)))

    if spec.arch == "mlp":
        dense_stack("", (d, *spec.hidden, k))
    elif spec.arch == "conv1d":
        c = spec.conv
        names.append(("convW", (c.kernel, d, c.filters)))
        names.append(("convb", (c.filters,)))
        dense_stack("head_", (c.filters, *spec.hidden, k))
    else:
        m, f = spec.attn.model_dim, spec.attn.ff_hidden
        names.append(("inW", (d, m)))
        names.append(("inb", (m,)))
        names.append(("ln1g", (m,)))
        names.append(("ln1b", (m,)))
        for nm in ("q", "k", "v", "o"):
            names.append((f"W{nm}", (m, m)))
            names.append((f"b{nm}", (m,)))
        names.append(("ln2g", (m,)))
        names.append(("ln2b", (m,)))
        names.append(("ffW1", (m, f)))
        names.append(("ffb1", (f,)))
        names.append(("ffW2", (f, m)))
        names.append(("ffb2", (m,)))
        names.append(("headW", (m, k)))
        names.append(("headb", (k,)))
    return names


def param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(spec))


def _views(spec: ModelSpec, flat: np.ndarray) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, shape in param_layout(spec):
        size = int(np.prod(shape))
        out[name] = flat[off : off + size].reshape(shape)
        off += size
    if off != flat.shape[0]:
        raise ValueError(f"parameter vector has {flat.shape[0]} entries, spec needs {off}")
    return out


def _xavier_fans(name: str, shape) -> tuple[int, int]:
    if name == "convW":  # (kernel, in_channels, filters)
        k, cin, cout = shape
        return k * cin, k * cout
    return shape[0], shape[1]


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Flat parameter vector: Xavier-uniform weights, zero biases, unit LN gains."""
    rng = stream(seed, "init")
    chunks = []
    for name, shape in param_layout(spec):
        if len(shape) == 1:
            chunks.append(np.ones(shape) if name.endswith("g") else np.zeros(shape))
            continue
        fan_in, fan_out = _xavier_fans(name, shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=shape).ravel())
    return np.concatenate([np.asarray(c, dtype=np.float64).ravel() for c in chunks])


# --- forward passes (with caches for backward) ------------------------------

def _as_time_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3:
        raise DimensionError(f"expected batch of rank 2 or 3, got rank {x.ndim}")
    if x.shape[2] != spec.input_dim:
        raise DimensionError(
            f"expected feature width {spec.input_dim}, got {x.shape[2]}"
        )
    return x


def _flat_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"expected batch of rank >= 2, got rank {x.ndim}")
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != spec.input_dim:
        raise DimensionError(
            f"expected flattened width {spec.input_dim}, got {x.shape[1]}"
        )
    return x


def _dense_forward(p, prefix, n_layers, h, cache):
    for i in range(n_layers):
        z = h @ p[f"{prefix}W{i}"] + p[f"{prefix}b{i}"]
        last = i == n_layers - 1
        cache.append((h, z))
        h = z if last else np.maximum(z, 0.0)
    return h


def _sinusoidal_positions(t_len: int, m: int) -> np.ndarray:
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, m, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i2 / m)
    pe = np.zeros((t_len, m))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : m // 2])
    return pe


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _forward(spec: ModelSpec, params: np.ndarray, batch: np.ndarray):
    p = _views(spec, np.asarray(params, dtype=np.float64))
    cache: dict = {"p": p}

    if spec.arch == "mlp":
        h = _flat_batch(spec, batch)
        cache["dense"] = []
        logits = _dense_forward(p, "", len(spec.hidden) + 1, h, cache["dense"])
        return logits, cache

    x = _as_time_batch(spec, batch)
    n, t_len, d = x.shape

    if spec.arch == "conv1d":
        c = spec.conv
        xp = np.pad(x, ((0, 0), (CONV_PAD, CONV_PAD), (0, 0)))
        t_pad = t_len + 2 * CONV_PAD
        t_out = (t_pad - c.kernel) // c.stride + 1
        if t_out < 1:
            raise DimensionError(
                f"conv kernel {c.kernel} exceeds padded length {t_pad}"
            )
        win = np.arange(t_out)[:, None] * c.stride + np.arange(c.kernel)[None, :]
        xw = xp[:, win, :]  # (n, t_out, kernel, d)
        z = np.einsum("ntkd,kdf->ntf", xw, p["convW"]) + p["convb"]
        a = np.maximum(z, 0.0)
        pooled = a.mean(axis=1)
        cache.update(xw=xw, z=z, t_out=t_out)
        cache["dense"] = []
        logits = _dense_forward(p, "head_", len(spec.hidden) + 1, pooled, cache["dense"])
        return logits, cache

    # attn_encoder
    m = spec.attn.model_dim
    heads, hd = spec.attn.heads, m // spec.attn.heads
    pe = _sinusoidal_positions(t_len, m)
    h0 = x @ p["inW"] + p["inb"] + pe
    a1, ln1c = _layernorm(h0, p["ln1g"], p["ln1b"])

    def split(v):  # (n,T,m) -> (n,heads,T,hd)
        return v.reshape(n, t_len, heads, hd).transpose(0, 2, 1, 3)

    q = split(a1 @ p["Wq"] + p["bq"])
    kk = split(a1 @ p["Wk"] + p["bk"])
    v = split(a1 @ p["Wv"] + p["bv"])
    scores = q @ kk.transpose(0, 1, 3, 2) / np.sqrt(hd)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)  # (n,heads,T,T)
    ctx = attn @ v  # (n,heads,T,hd)
    ctx_m = ctx.transpose(0, 2, 1, 3).reshape(n, t_len, m)
    attn_out = ctx_m @ p["Wo"] + p["bo"]
    h1 = h0 + attn_out

    a2, ln2c = _layernorm(h1, p["ln2g"], p["ln2b"])
    ffz = a2 @ p["ffW1"] + p["ffb1"]
    ffa = np.maximum(ffz, 0.0)
    h2 = h1 + ffa @ p["ffW2"] + p["ffb2"]
    pooled = h2.mean(axis=1)
    logits = pooled @ p["headW"] + p["headb"]
    cache.update(
        x=x, h0=h0, a1=a1, ln1c=ln1c, q=q, k=kk, v=v, attn=attn, ctx_m=ctx_m,
        h1=h1, a2=a2, ln2c=ln2c, ffz=ffz, ffa=ffa, pooled=pooled,
        t_len=t_len, heads=heads, hd=hd,
    )
    return logits, cache


# --- backward passes ---------------------------------------------------------

def _g2(x, dy, pe: bool):
    """Weight gradient of y = x @ W for 2-D activations; (n,i,j) if per-example."""
    return np.einsum("ni,nj->nij", x, dy) if pe else x.T @ dy


def _g3(x, dy, pe: bool):
    """Weight gradient for 3-D (n,T,·) activations."""
    return np.einsum("nti,ntj->nij", x, dy) if pe else np.einsum("nti,ntj->ij", x, dy)


def _b2(dy, pe: bool):
    return dy if pe else dy.sum(axis=0)


def _b3(dy, pe: bool):
    return dy.sum(axis=1) if pe else dy.sum(axis=(0, 1))


def _dense_backward(p, prefix, cache_list, dlogits, grads, pe):
    dh = dlogits
    for i in reversed(range(len(cache_list))):
        h, z = cache_list[i]
        dz = dh if i == len(cache_list) - 1 else dh * (z > 0)
        grads[f"{prefix}W{i}"] = _g2(h, dz, pe)
        grads[f"{prefix}b{i}"] = _b2(dz, pe)
        dh = dz @ p[f"{prefix}W{i}"].T
    return dh


def _layernorm_backward(dy, g, ln_cache, grads, gname, bname, pe):
    xhat, inv = ln_cache
    grads[gname] = (dy * xhat).sum(axis=1) if pe else (dy * xhat).sum(axis=(0, 1))
    grads[bname] = _b3(dy, pe)
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - mean1 - xhat * mean2)


def _backward(spec: ModelSpec, cache: dict, dlogits: np.ndarray, pe: bool):
    p = cache["p"]
    grads: dict[str, np.ndarray] = {}

    if spec.arch == "mlp":
        _dense_backward(p, "", cache["dense"], dlogits, grads, pe)
        return grads

    if spec.arch == "conv1d":
        dpool = _dense_backward(p, "head_", cache["dense"], dlogits, grads, pe)
        t_out = cache["t_out"]
        da = np.repeat(dpool[:, None, :], t_out, axis=1) / t_out
        dz = da * (cache["z"] > 0)
        grads["convW"] = (
            np.einsum("ntkd,ntf->nkdf", cache["xw"], dz)
            if pe
            else np.einsum("ntkd,ntf->kdf", cache["xw"], dz)
        )
        grads["convb"] = _b3(dz, pe)
        return grads

    # attn_encoder
    n = dlogits.shape[0]
    t_len, heads, hd = cache["t_len"], cache["heads"], cache["hd"]
    m = spec.attn.model_dim

    grads["headW"] = _g2(cache["pooled"], dlogits, pe)
    grads["headb"] = _b2(dlogits, pe)
    dpool = dlogits @ p["headW"].T
    dh2 = np.repeat(dpool[:, None, :], t_len, axis=1) / t_len

    # feed-forward sublayer (residual)
    grads["ffW2"] = _g3(cache["ffa"], dh2, pe)
    grads["ffb2"] = _b3(dh2, pe)
    dffa = dh2 @ p["ffW2"].T
    dffz = dffa * (cache["ffz"] > 0)
    grads["ffW1"] = _g3(cache["a2"], dffz, pe)
    grads["ffb1"] = _b3(dffz, pe)
    da2 = dffz @ p["ffW1"].T
    dh1 = dh2 + _layernorm_backward(da2, p["ln2g"], cache["ln2c"], grads, "ln2g", "ln2b", pe)

    # attention sublayer (residual)
    grads["Wo"] = _g3(cache["ctx_m"], dh1, pe)
    grads["bo"] = _b3(dh1, pe)
    dctx_m = dh1 @ p["Wo"].T
    dctx = dctx_m.reshape(n, t_len, heads, hd).transpose(0, 2, 1, 3)
    attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(hd)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(vh):  # (n,heads,T,hd) -> (n,T,m)
        return vh.transpose(0, 2, 1, 3).reshape(n, t_len, m)

    dq, dk, dv = merge(dq), merge(dk), merge(dv)
    a1 = cache["a1"]
    for nm, dval in (("q", dq), ("k", dk), ("v", dv)):
        grads[f"W{nm}"] = _g3(a1, dval, pe)
        grads[f"b{nm}"] = _b3(dval, pe)
    da1 = dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T
    dh0 = dh1 + _layernorm_backward(da1, p["ln1g"], cache["ln1c"], grads, "ln1g", "ln1b", pe)

    grads["inW"] = _g3(cache["x"], dh0, pe)
    grads["inb"] = _b3(dh0, pe)
    return grads


def _flatten_grads(spec: ModelSpec, grads: dict, pe: bool, n: int) -> np.ndarray:
    parts = []
    for name, shape in param_layout(spec):
        g = grads[name]
        parts.append(g.reshape(n, -1) if pe else g.ravel())
    return np.concatenate(parts, axis=1 if pe else 0)


# --- public model surface ----------------------------------------------------

@dataclass(frozen=True)
class TrainedModel:
    """Immutable (spec, flat params, meta) triple."""

    spec: ModelSpec
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        flat = np.ascontiguousarray(np.asarray(self.params, dtype=np.float64).ravel())
        if flat.shape[0] != param_count(self.spec):
            raise ValueError(
                f"params length {flat.shape[0]} != spec parameter count {param_count(self.spec)}"
            )
        flat.flags.writeable = False
        object.__setattr__(self, "params", flat)


def _spec_params(model_or_spec, params=None):
    if isinstance(model_or_spec, TrainedModel):
        return model_or_spec.spec, model_or_spec.params
    return model_or_spec, params


def forward(model_or_spec, batch, params=None) -> np.ndarray:
    """Logits (n, K)."""
    spec, p = _spec_params(model_or_spec, params)
    logits, _ = _forward(spec, p, batch)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    return logits


def predict_proba(model_or_spec, batch, params=None) -> np.ndarray:
    """Row-stochastic softmax probabilities (n, K)."""
    logits = forward(model_or_spec, batch, params)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, k):
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= k):
        bad = y[(y < 0) | (y >= k)][0]
        raise ValueError(f"label {bad} outside [0, {k})")
    return y.astype(np.int64)


def loss_and_grads(model_or_spec, batch, labels, reduction="mean", params=None):
    """Categorical cross-entropy and its parameter gradient(s).

    reduction="mean":        (scalar loss, flat gradient (P,))
    reduction="per_example": (per-sample losses (n,), gradient matrix (n, P))
    """
    if reduction not in ("mean", "per_example"):
        raise ValueError(f"unknown reduction {reduction!r}")
    spec, p = _spec_params(model_or_spec, params)
    y = _check_labels(labels, spec.class_count)
    logits, cache = _forward(spec, p, batch)
    n = logits.shape[0]
    if n != y.shape[0]:
        raise ValueError(f"batch has {n} rows but {y.shape[0]} labels")

    zmax = logits.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    per_loss = logsumexp - logits[np.arange(n), y]
    probs = np.exp(logits - logsumexp[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0

    if reduction == "mean":
        grads = _backward(spec, cache, dlogits / n, pe=False)
        return float(per_loss.mean()), _flatten_grads(spec, grads, pe=False, n=n)
    grads = _backward(spec, cache, dlogits, pe=True)
    return per_loss, _flatten_grads(spec, grads, pe=True, n=n)


# --- optimizers ---------------------------------------------------------------

@dataclass(frozen=True)
class Sgd:
    lr: float


@dataclass(frozen=True)
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def optimizer_step(params, grads, state, rule):
    """One update; returns (new params, new state). SGD carries no state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"params shape {params.shape} != grads shape {grads.shape}")
    if isinstance(rule, Sgd):
        return params - rule.lr * grads, state
    if not isinstance(rule, Adam):
        raise ValueError(f"unknown optimizer rule {rule!r}")
    if state is None:
        state = AdamState(np.zeros_like(params), np.zeros_like(params), 0)
    t = state.t + 1
    m = rule.beta1 * state.m + (1 - rule.beta1) * grads
    v = rule.beta2 * state.v + (1 - rule.beta2) * grads * grads
    mhat = m / (1 - rule.beta1**t)
    vhat = v / (1 - rule.beta2**t)
    return params - rule.lr * mhat / (np.sqrt(vhat) + rule.eps), AdamState(m, v, t)


# --- serialization ------------------------------------------------------------

def _spec_to_doc(spec: ModelSpec) -> dict:
    doc = {
        "arch": spec.arch,
        "input_dim": spec.input_dim,
        "class_count": spec.class_count,
        "hidden": list(spec.hidden),
        "seed": spec.seed,
    }
    if spec.conv is not None:
        doc["conv"] = {"filters": spec.conv.filters, "kernel": spec.conv.kernel,
                       "stride": spec.conv.stride}
    if spec.attn is not None:
        doc["attn"] = {"model_dim": spec.attn.model_dim, "ff_hidden": spec.attn.ff_hidden,
                       "heads": spec.attn.heads}
    return doc


def _spec_from_doc(doc: dict) -> ModelSpec:
    return ModelSpec(
        arch=doc["arch"],
        input_dim=doc["input_dim"],
        class_count=doc["class_count"],
        hidden=tuple(doc.get("hidden", (32,))),
        conv=ConvConfig(**doc["conv"]) if "conv" in doc else None,
        attn=AttnConfig(**doc["attn"]) if "attn" in doc else None,
        seed=doc.get("seed", 0),
    )


def to_json(model: TrainedModel) -> str:
    """Versioned, byte-stable JSON (sorted keys, shortest round-trip floats)."""
    doc = {
        "model_version": MODEL_VERSION,
        "spec": _spec_to_doc(model.spec),
        "params": [float(v) for v in model.params],
        "meta": model.meta,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> TrainedModel:
    doc = json.loads(text)
    version = doc.get("model_version")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model_version {version!r} (expected {MODEL_VERSION})")
    return TrainedModel(
        spec=_spec_from_doc(doc["spec"]),
        params=np.array(doc["params"], dtype=np.float64),
        meta=doc.get("meta", {}),
    )


def save_model(model: TrainedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(model))
        fh.write("\n")


def load_model(path: str) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())
