"""Walk the subsampled-Gaussian accountant through its three jobs.

One job: turn a mechanism (sampling rate q, noise multiplier sigma) into a
Renyi divergence curve over integer orders. Second: compose T steps, which
is a single multiply on that curve. Third: convert the composed curve into
the tightest (epsilon, delta) pair over the tracked orders — and invert the
whole chain to calibrate sigma for a target budget.
"""

import numpy as np

from privatexr.accounting import (DEFAULT_ORDERS, PrivacySpec, compose, curve,
                                  epsilon_after, find_sigma, rdp_one_step)

q, sigma, delta = 0.02, 1.3, 1e-5

c = curve(q, sigma)
print(f"one step at q={q}, sigma={sigma}: renyi divergence at alpha=2 "
      f"is {c.values[0]:.3e}, at alpha=64 is {c.values[-1]:.3e}")

print("\nepsilon grows sublinearly in steps (strong composition):")
for steps in (100, 500, 2500):
    eps, alpha = epsilon_after(q, sigma, steps, delta)
    print(f"  T={steps:5d}  epsilon={eps:.4f}  (best order alpha={alpha})")

eps_ref, _ = epsilon_after(q, sigma, 500, delta)
print(f"\nat q=1 the curve is the exact Gaussian closed form alpha/(2 sigma^2): "
      f"max deviation {max(abs(rdp_one_step(1.0, sigma, a) - a / (2 * sigma**2)) for a in DEFAULT_ORDERS):.1e}")

whole = np.array(compose(c, 500).values)
parts = np.array(compose(c, 200).values) + np.array(compose(c, 300).values)
print(f"composition is additive: splitting 500 steps as 200+300 changes the "
      f"curve by at most {np.abs(whole - parts).max():.1e}")

target = PrivacySpec(epsilon=1.0, delta=delta)
sig = find_sigma(target, q, 500)
eps_back, _ = epsilon_after(q, sig, 500, delta)
print(f"\ncalibration: epsilon<=1.0 over 500 steps needs sigma={sig:.4f}; "
      f"accounting that sigma back gives epsilon={eps_back:.6f}")
