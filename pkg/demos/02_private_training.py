"""Train the same classifier openly and under differential privacy.

The private run clips every per-example gradient to a fixed norm, sums the lot,
adds calibrated Gaussian noise, and lets the accountant convert the noise
level into an (epsilon, delta) statement. Calibration runs first: solve for
the noise multiplier that lands the planned step count on the target budget,
then hand that multiplier (and the target, as a hard cap) to the trainer.
"""

from privatexr.accounting import PrivacySpec, find_sigma
from privatexr.data import SplitSpec, SynthConfig, normalize, split, synth_generate
from privatexr.metrics import balanced_accuracy
from privatexr.nn import ModelSpec, forward
from privatexr.training import DpTrainConfig, TrainConfig, train

ds = normalize(synth_generate(SynthConfig(
    users=20, stimuli=4, frames_per_user_stimulus=50, feature_dim=12,
    class_count=4, user_signature_strength=1.5, label_signal_strength=1.5,
    seed=7)))
tr, te = split(ds, SplitSpec(train_fraction=0.8, seed=0))
spec = ModelSpec("mlp", input_dim=12, class_count=4, hidden=(32,))


def bacc(model):
    return balanced_accuracy(te.labels, forward(model, te.features).argmax(axis=1))


open_model = train(tr, te, spec, TrainConfig(epochs=40, batch_size=64, lr=0.01, seed=1))
print(f"open training:        balanced accuracy {bacc(open_model):.3f}")

for target_eps in (5.0, 1.0):
    q, epochs = 0.05, 15
    delta = 1.0 / (2 * len(tr))
    sigma = find_sigma(PrivacySpec(target_eps, delta), q, epochs * round(1 / q))
    dp = DpTrainConfig(clip_norm=1.0, noise_multiplier=sigma, sampling_rate=q,
                       epochs=epochs, lr=0.05, target_delta=delta,
                       target_epsilon=target_eps, patience=epochs)
    trace: list[dict] = []
    model = train(tr, te, spec, TrainConfig(seed=1, private=dp), trace=trace)
    spent = model.meta["privacy_spent"]
    worst = max(t["max_clipped_norm"] for t in trace)
    print(f"dpsgd eps<={target_eps:.0f}:        balanced accuracy {bacc(model):.3f}  "
          f"spent eps={spent['epsilon']:.3f} delta={spent['delta']:.1e}  "
          f"max clipped norm {worst:.3f} over {len(trace)} lots")
