"""Serve a trained classifier with switchable privacy over HTTP and WebSocket.

A serve bundle carries one open model plus one model per privacy level, each
trained on frames noised at that level, so a mode switch swaps both the
input noising and the matching classifier. The stream pushes one prediction
per frame; a set_mode message is acknowledged before the next prediction, so
a client can attribute every prediction to a mode unambiguously.
"""

import json
import warnings

warnings.filterwarnings("ignore", message=r".*`httpx` with `starlette.testclient`.*")
from fastapi.testclient import TestClient

from privatexr.data import SynthConfig, normalize, synth_generate
from privatexr.nn import ModelSpec
from privatexr.privatizer import FeatureDpSpec, privacy_levels, privatize_batch
from privatexr.rng import stream
from privatexr.serve import ServeBundle, create_app
from privatexr.training import TrainConfig, train

SEVERITY = ("none", "low", "medium", "high")

ds = normalize(synth_generate(SynthConfig(
    users=8, stimuli=2, frames_per_user_stimulus=25, feature_dim=12,
    class_count=4, seed=21, class_names=SEVERITY)))
spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(16,))
recipe = TrainConfig(epochs=20, batch_size=32, lr=0.01, seed=0)

off_model = train(ds, ds, spec, recipe)
private_models, feature_specs = {}, {}
for i, level in enumerate(privacy_levels()):
    fspec = FeatureDpSpec.from_level("full", level, delta=1e-3)
    noised = ds.with_features(privatize_batch(ds.features, fspec, stream(3 + i, "noise")))
    private_models[level] = train(noised, noised, spec,
                                  TrainConfig(epochs=20, batch_size=32, lr=0.01, seed=3 + i))
    feature_specs[level] = fspec

bundle = ServeBundle(off_model=off_model, private_models=private_models,
                     feature_specs=feature_specs, stream_data=ds, fps=120.0, seed=0)

with TestClient(create_app(bundle)) as client:
    info = client.get("/model/info").json()
    print("GET /model/info ->", json.dumps(
        {k: info[k] for k in ("modes", "privacy_levels", "severity_labels")}))

    frame = ds.features[0].tolist()
    for mode in ("off", "high"):
        out = client.post("/predict", json={"features": frame, "mode": mode}).json()
        print(f"POST /predict mode={mode:4s} -> class {out['class']} "
              f"({out['label']}), epsilon={out['epsilon']}")

    print("\nwebsocket stream:")
    with client.websocket_connect("/stream") as ws:
        for _ in range(2):
            msg = ws.receive_json()
            print("  ", msg)
        ws.send_text(json.dumps({"type": "set_mode", "mode": "medium"}))
        while True:
            msg = ws.receive_json()
            print("  ", msg)
            if msg["type"] == "prediction" and msg["mode"] == "medium":
                break
