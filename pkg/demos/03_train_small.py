"""Train one small model end to end and plot its learning curve.

Builds a 30-sample dataset at 32x32, trains the robust loss with a two
epoch warmup, and writes train_small.png with the loss curve, the
validation Dice curve, and a test-set prediction next to its ground truth.
Runs in well under a minute on one CPU core.
"""

import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from betaseg.harness import TrainConfig, predict_labels, train
from betaseg.losses import LossConfig, LossKind
from betaseg.network import NetworkSpec
from betaseg.phantom import (NoiseSpec, PhantomSpec, build_dataset,
                             read_dataset, write_dataset)

with tempfile.TemporaryDirectory() as tmp:
    data_dir = Path(tmp) / "data"
    dataset = build_dataset(30, PhantomSpec(resolution=(32, 32), seed=0),
                            NoiseSpec(seed=0), seed=0)
    write_dataset(dataset, data_dir)

    config = TrainConfig(
        data_dir=str(data_dir),
        network=NetworkSpec(base_width=8, depth=2, seed=0),
        loss=LossConfig(kind=LossKind.BCE, beta=1e-4),
        epochs=30, warmup_epochs=2, batch_size=8, seed=0,
        label_source="noisy")
    params, log = train(config)

    for record in log.records:
        print(f"epoch {record.epoch}: loss_kind={record.loss_kind} "
              f"train_loss={record.train_loss:.4f} "
              f"val_mean_dice={record.val_mean_dice:.4f}")

    images, clean, _ = read_dataset(data_dir).subset("test")
    pred = predict_labels(params, images)

fig, axes = plt.subplots(1, 4, figsize=(13, 3.2))
epochs = [r.epoch for r in log.records]
axes[0].plot(epochs, [r.train_loss for r in log.records], marker="o")
axes[0].axvline(config.warmup_epochs + 0.5, color="gray", linestyle=":")
axes[0].set_xlabel("epoch")
axes[0].set_title("train loss (warmup left of dotted line)")
axes[1].plot(epochs, [r.val_mean_dice for r in log.records], marker="o")
axes[1].set_xlabel("epoch")
axes[1].set_title("validation mean Dice")
axes[2].imshow(clean[0], cmap="tab10", vmin=0, vmax=9)
axes[2].set_title("test ground truth")
axes[3].imshow(pred[0], cmap="tab10", vmin=0, vmax=9)
axes[3].set_title("test prediction")
for ax in axes[2:]:
    ax.set_xticks(())
    ax.set_yticks(())
fig.tight_layout()
out = Path(__file__).with_name("train_small.png")
fig.savefig(out, dpi=110)
print(f"wrote {out}")
