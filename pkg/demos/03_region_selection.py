"""Window scoring and greedy non-overlapping region selection.

Builds a synthetic uncertainty map with two hot spots, scores every
window placement with the summed-area table, and shows which windows the
greedy selector claims (they never overlap, and a second round avoids
everything already chosen).
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.patches as patches
import matplotlib.pyplot as plt
import numpy as np

from segal.acquisition import RegionScoringConfig, region_scores, select_regions

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

rng = np.random.default_rng(5)
umap = 0.05 * rng.random((64, 96))
yy, xx = np.mgrid[0:64, 0:96]
for cy, cx, amp in [(18, 25, 0.8), (45, 70, 0.6)]:
    umap += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 120.0)

cfg = RegionScoringConfig(kernel_width=16, kernel_height=16, stride=8,
                          kernel_value=1.0, regions_per_step=4)
tops, lefts, scores = region_scores(umap, cfg)
print(f"{scores.size} window placements, best score {scores.max():.2f}")

first_round = select_regions({"demo": umap}, cfg)
second_round = select_regions({"demo": umap}, cfg, {"demo": first_round})

fig, axes = plt.subplots(1, 3, figsize=(15, 4))
axes[0].imshow(umap, cmap="inferno")
axes[0].set_title("uncertainty map")
axes[1].imshow(scores, cmap="inferno")
axes[1].set_title("window scores (stride grid)")
axes[2].imshow(umap, cmap="inferno")
for reg, color, label in [(first_round, "cyan", "step 1"), (second_round, "lime", "step 2")]:
    for r in reg:
        axes[2].add_patch(patches.Rectangle((r.left, r.top), r.width, r.height,
                                            fill=False, edgecolor=color, linewidth=2))
axes[2].set_title("greedy picks: step 1 (cyan), step 2 (green)")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out_dir / "region_selection.png", dpi=120)
print(f"step 1 regions: {[(r.top, r.left) for r in first_round]}")
print(f"step 2 regions: {[(r.top, r.left) for r in second_round]}")
print(f"wrote {out_dir / 'region_selection.png'}")
