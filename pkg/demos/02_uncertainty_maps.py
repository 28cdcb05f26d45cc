"""Train a small MC-dropout segmenter and compare uncertainty maps.

Shows VarRatio, Entropy, and BALD side by side on a held-out image: the
three rules agree on the hot spots but differ in how they weight model
disagreement versus plain low confidence.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from segal.acquisition import bald_map, entropy_map, varratio_map
from segal.data import SyntheticConfig, extract_contours, generate_synthetic
from segal.model import (
    LossConfig,
    NetworkConfig,
    TrainExample,
    init_parameters,
    mc_predict,
    train,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

records = generate_synthetic(SyntheticConfig(train_images=9, test_images=1, seed=21))
train_recs = [r for r in records if r.split == "train"]
held_out = [r for r in records if r.split == "test"][0]

examples = [
    TrainExample(r.image, r.mask, extract_contours(r.mask), np.ones(r.mask.shape, np.int64))
    for r in train_recs
]
net = NetworkConfig(encoder_blocks=2, base_width=4, dropout_rate=0.25, seed=3)
print("training on 9 images...")
params, trace = train(init_parameters(net), examples, 60, 0.1,
                      LossConfig(aux_weight=0.25), np.random.default_rng(0))
print(f"loss {trace[0]:.3f} -> {np.mean(trace[-20:]):.3f}")

mean_map, stack = mc_predict(params, held_out.image, 20, np.random.default_rng(1))
maps = {
    "VarRatio": varratio_map(mean_map),
    "Entropy": entropy_map(mean_map),
    "BALD": bald_map(stack),
}

fig, axes = plt.subplots(1, 5, figsize=(16, 3.2))
axes[0].imshow(held_out.image[:, :, 0], cmap="gray", vmin=0, vmax=1)
axes[0].set_title("held-out image")
axes[1].imshow(np.argmax(mean_map, axis=2), cmap="viridis")
axes[1].set_title("MC-averaged prediction")
for ax, (name, umap) in zip(axes[2:], maps.items()):
    im = ax.imshow(umap, cmap="inferno")
    ax.set_title(f"{name} (max {umap.max():.3f})")
    fig.colorbar(im, ax=ax, fraction=0.04)
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out_dir / "uncertainty_maps.png", dpi=120)
print(f"wrote {out_dir / 'uncertainty_maps.png'}")
