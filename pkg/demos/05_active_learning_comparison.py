"""Miniature full-image vs region acquisition comparison.

Runs both loops on a small synthetic dataset and plots object Dice and
Brier score against the annotated-pixel budget.  The full desk-scale
version of this comparison lives in tests/test_acceptance.py; this demo
uses reduced sizes so it finishes in about a minute.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from segal.acquisition import AcquisitionFunction, RegionScoringConfig
from segal.data import SyntheticConfig, generate_synthetic
from segal.orchestrator import (
    ExperimentConfig,
    TrainingConfig,
    run_experiment,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

records = generate_synthetic(SyntheticConfig(train_images=16, test_images=8, seed=42))
common = dict(
    acq_fn=AcquisitionFunction.ENTROPY,
    seed=1,
    initial_labeled=4,
    images_per_step=2,
    passes=6,
    restarts=2,
    region=RegionScoringConfig(kernel_width=16, kernel_height=16, stride=8,
                               kernel_value=1.0, regions_per_step=8),
    training=TrainingConfig(encoder_blocks=2, base_width=4, dropout_rate=0.15,
                            learning_rate=0.1, aux_weight=0.25,
                            steps_per_restart=500),
)

print("running full-image loop...")
full = run_experiment(ExperimentConfig(strategy="full_image", query_steps=3, **common), records)
print("running region loop...")
region = run_experiment(ExperimentConfig(strategy="region", query_steps=5, **common), records)

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for result, style, name in [(full, "o-", "full image"), (region, "s-", "region")]:
    px = [r.labeled_pixels for r in result.rows]
    axes[0].plot(px, [r.dice_obj for r in result.rows], style, label=name)
    axes[1].plot(px, [r.calibration.brier for r in result.rows], style, label=name)
axes[0].set_xlabel("annotated pixels")
axes[0].set_ylabel("object Dice")
axes[1].set_xlabel("annotated pixels")
axes[1].set_ylabel("Brier score")
for ax in axes:
    ax.legend()
    ax.grid(alpha=0.3)
fig.suptitle("region acquisition reaches accuracy with fewer annotated pixels")
fig.tight_layout()
fig.savefig(out_dir / "al_comparison.png", dpi=120)
print(f"wrote {out_dir / 'al_comparison.png'}")
for name, result in [("full", full), ("region", region)]:
    last = result.rows[-1]
    print(f"{name:>7}: final dice {last.dice_obj:.3f} at {last.labeled_pixels} px, "
          f"brier {last.calibration.brier:.4f}")
