"""Model serving: REST prediction plus a full-duplex streaming endpoint.

The bundle pairs one non-private model (mode ``off``) with three private
models (modes ``low``/``medium``/``high``), each private mode also privatizing
the incoming features with its calibrated spec — so a served prediction under
a private mode reflects both mechanisms end to end.

Endpoints:
  GET  /health         liveness
  GET  /model/info     specs, feature names, levels, selected features
  POST /predict        one frame -> class/label/proba/epsilon/latency
  WS   /stream         replays a dataset at a fixed frame rate; the client
                       can switch modes mid-stream and each change is
                       acknowledged before the next prediction
"""

from __future__ import annotations

import asyncio
import itertools
import json
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .data import Dataset, load_csv, normalize
from .nn import TrainedModel, load_model, predict_proba
from .privatizer import FeatureDpSpec, privacy_levels, privatize
from .rng import stream

SEVERITY_LABELS = {0: "none", 1: "low", 2: "medium", 3: "high"}
SERVE_MODES = ("off", "low", "medium", "high")
PRIVATE_MODES = ("low", "medium", "high")


class BundleError(RuntimeError):
    """The bundle's parts disagree; the server must refuse to start."""


@dataclass(frozen=True)
class ServeBundle:
    off_model: TrainedModel
    private_models: dict[str, TrainedModel]  # keyed by low/medium/high
    feature_specs: dict[str, FeatureDpSpec]  # keyed by low/medium/high
    stream_data: Dataset
    fps: float = 10.0
    seed: int = 0

    def __post_init__(self):
        d = self.stream_data.feature_dim
        k = self.off_model.spec.class_count
        if sorted(self.private_models) != sorted(PRIVATE_MODES):
            raise BundleError(f"private_models must cover {PRIVATE_MODES}")
        if sorted(self.feature_specs) != sorted(PRIVATE_MODES):
            raise BundleError(f"feature_specs must cover {PRIVATE_MODES}")
        for name, model in self.models().items():
            if model.spec.input_dim != d:
                raise BundleError(
                    f"model {name!r} expects input_dim {model.spec.input_dim}, "
                    f"stream data has {d} features"
                )
            if model.spec.class_count != k:
                raise BundleError("models disagree on class_count")
        if k != len(self.stream_data.class_names):
            raise BundleError("class_count does not match dataset class names")
        for name, spec in self.feature_specs.items():
            if spec.mode == "off":
                raise BundleError(f"feature spec for {name!r} must actually add noise")
            if spec.mode == "selective" and max(spec.selected) >= d:
                raise BundleError(f"selected feature out of range for width {d}")
        if self.fps <= 0:
            raise BundleError("fps must be positive")

    def models(self) -> dict[str, TrainedModel]:
        return {"off": self.off_model, **self.private_models}


def bundle_from_config(doc: dict, base_dir: str = ".") -> ServeBundle:
    """Load a bundle from a JSON document of artifact paths."""
    from pathlib import Path

    base = Path(base_dir)
    off = load_model(base / doc["off_model"])
    private = {m: load_model(base / p) for m, p in doc["private_models"].items()}
    data = normalize(load_csv(base / doc["stream_csv"]))
    selected = doc.get("selected_features")
    delta = float(doc.get("delta", 1.0 / (2 * len(data))))
    clamp = float(doc.get("clamp", 3.0))
    # mode names double as privacy-level names (low/medium/high)
    specs = {
        mode: FeatureDpSpec.from_level(
            "selective" if selected else "full", mode, delta,
            selected=tuple(selected) if selected else None, clamp=clamp)
        for mode in PRIVATE_MODES
    }
    return ServeBundle(off_model=off, private_models=private, feature_specs=specs,
                       stream_data=data, fps=float(doc.get("fps", 10.0)),
                       seed=int(doc.get("seed", 0)))


def _predict_one(bundle: ServeBundle, features: np.ndarray, mode: str,
                 rng: np.random.Generator) -> dict:
    t0 = time.perf_counter()
    if mode == "off":
        x = features
        model = bundle.off_model
        epsilon = None
    else:
        spec = bundle.feature_specs[mode]
        x = privatize(features, spec, rng)
        model = bundle.private_models[mode]
        epsilon = spec.epsilon
    proba = predict_proba(model, x[None, :])[0]
    cls = int(proba.argmax())
    return {
        "class": cls,
        "label": bundle.stream_data.class_names[cls],
        "proba": [float(p) for p in proba],
        "epsilon": epsilon,
        "latency_ms": (time.perf_counter() - t0) * 1000.0,
    }


def create_app(bundle: ServeBundle) -> FastAPI:
    """Build the service around a self-checked bundle."""
    app = FastAPI(title="privatexr", docs_url=None, redoc_url=None)
    app.state.bundle = bundle
    app.state.noise_counter = itertools.count()

    def _request_rng() -> np.random.Generator:
        return stream(bundle.seed, "serve", next(app.state.noise_counter))

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/model/info")
    async def model_info():
        d = bundle.stream_data.feature_dim
        return {
            "feature_names": list(bundle.stream_data.feature_names),
            "class_names": list(bundle.stream_data.class_names),
            "severity_labels": {str(k): v for k, v in SEVERITY_LABELS.items()},
            "modes": list(SERVE_MODES),
            "privacy_levels": privacy_levels(),
            "selected_features": (
                list(bundle.feature_specs["high"].selected)
                if bundle.feature_specs["high"].mode == "selective" else None
            ),
            "models": {
                name: {"arch": m.spec.arch, "input_dim": m.spec.input_dim,
                       "class_count": m.spec.class_count}
                for name, m in bundle.models().items()
            },
            "fps": bundle.fps,
        }

    @app.post("/predict")
    async def predict(request: Request):
        try:
            doc = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be valid JSON")
        if not isinstance(doc, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        feats = doc.get("features")
        if not isinstance(feats, list) or not feats or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats
        ):
            raise HTTPException(status_code=400,
                                detail="features must be a non-empty list of numbers")
        d = bundle.stream_data.feature_dim
        if len(feats) != d:
            raise HTTPException(status_code=400,
                                detail=f"features must have length {d}, got {len(feats)}")
        mode = doc.get("mode", "off")
        if mode not in SERVE_MODES:
            raise HTTPException(status_code=400,
                                detail=f"mode must be one of {list(SERVE_MODES)}")
        x = np.asarray(feats, dtype=np.float64)
        return JSONResponse(_predict_one(bundle, x, mode, _request_rng()))

    @app.websocket("/stream")
    async def stream_frames(ws: WebSocket):
        await ws.accept()
        mode = "off"
        cursor = 0
        interval = 1.0 / bundle.fps
        n = len(bundle.stream_data)
        try:
            while True:
                try:
                    raw = await asyncio.wait_for(ws.receive_text(), timeout=interval)
                except asyncio.TimeoutError:
                    raw = None
                if raw is not None:
                    try:
                        msg = json.loads(raw)
                    except json.JSONDecodeError:
                        await ws.send_json({"type": "error",
                                            "message": "messages must be JSON"})
                        continue
                    if not isinstance(msg, dict) or msg.get("type") != "set_mode":
                        await ws.send_json({"type": "error",
                                            "message": "unknown message type"})
                        continue
                    wanted = msg.get("mode")
                    if wanted not in SERVE_MODES:
                        await ws.send_json({
                            "type": "error",
                            "message": f"mode must be one of {list(SERVE_MODES)}",
                        })
                        continue
                    mode = wanted
                    # the ack goes out before any prediction under the new mode
                    await ws.send_json({"type": "mode_ack", "mode": mode})
                    continue
                frame = bundle.stream_data.features[cursor % n]
                pred = _predict_one(bundle, frame, mode, _request_rng())
                await ws.send_json({
                    "type": "prediction",
                    "t": cursor,
                    "class": pred["class"],
                    "label": pred["label"],
                    "mode": mode,
                    "epsilon": pred["epsilon"],
                    "latency_ms": pred["latency_ms"],
                })
                cursor += 1
        except WebSocketDisconnect:
            return

    return app
