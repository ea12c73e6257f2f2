"""Compare the robust loss against cross-entropy on a single pixel.

Sweeps the predicted probability of the labeled class and plots the loss
value and the gradient magnitude on the true-class logit for several beta
values. The robust loss stays bounded and its gradient fades as the
prediction becomes confidently wrong, which is exactly the behaviour that
discounts mislabeled pixels. Writes loss_behaviour.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from betaseg.losses import bce_loss, ce_loss

K = 2
P_GRID = np.linspace(0.001, 0.999, 400)
BETAS = (1e-4, 0.1, 0.5, 1.0)


def logits_for_p(p):
    # two-class logits whose softmax puts probability p on class 0
    gap = np.log(p / (1 - p))
    return np.array([[[[gap]], [[0.0]]]])


labels = np.zeros((1, 1, 1), dtype=np.int64)

fig, (ax_val, ax_grad) = plt.subplots(1, 2, figsize=(11, 4))
ce_vals = [ce_loss(logits_for_p(p), labels).value for p in P_GRID]
ce_grads = [abs(ce_loss(logits_for_p(p), labels).grad_logits[0, 0, 0, 0])
            for p in P_GRID]
ax_val.plot(P_GRID, ce_vals, "k--", label="ce")
ax_grad.plot(P_GRID, ce_grads, "k--", label="ce")
for beta in BETAS:
    vals = [bce_loss(logits_for_p(p), labels, beta).value for p in P_GRID]
    grads = [abs(bce_loss(logits_for_p(p), labels, beta).grad_logits[0, 0, 0, 0])
             for p in P_GRID]
    ax_val.plot(P_GRID, vals, label=f"beta={beta:g}")
    ax_grad.plot(P_GRID, grads, label=f"beta={beta:g}")
ax_val.set_xlabel("softmax probability of the labeled class")
ax_val.set_ylabel("per-pixel loss")
ax_val.legend()
ax_grad.set_xlabel("softmax probability of the labeled class")
ax_grad.set_ylabel("|gradient| on the true-class logit")
ax_grad.legend()
fig.tight_layout()
out = Path(__file__).with_name("loss_behaviour.png")
fig.savefig(out, dpi=110)
print(f"wrote {out}")

# numbers behind the picture: gradient ratio robust/ce at a confidently
# wrong pixel (p -> 0) vs a well fitted one (p -> 1)
for beta in BETAS:
    lo = bce_loss(logits_for_p(0.001), labels, beta).grad_logits[0, 0, 0, 0]
    lo_ce = ce_loss(logits_for_p(0.001), labels).grad_logits[0, 0, 0, 0]
    print(f"beta={beta:<8g} gradient on a confidently wrong pixel, "
          f"relative to ce: {lo / lo_ce:8.4f}")

# the small-beta limit: bce -> ce + 1
rng = np.random.default_rng(0)
logits = rng.standard_normal((2, 5, 4, 4))
rand_labels = rng.integers(0, 5, size=(2, 4, 4))
gap = bce_loss(logits, rand_labels, 1e-6).value - ce_loss(logits, rand_labels).value
print(f"\nbce(beta=1e-6) - ce on random logits: {gap:.8f} (limit is exactly 1)")
