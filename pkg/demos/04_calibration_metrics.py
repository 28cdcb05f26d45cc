"""Reliability diagrams and the Brier decomposition on synthetic streams.

A perfectly calibrated stream hugs the diagonal; an overconfident one
gaps below it.  The decomposition splits the Brier score into
reliability (calibration), resolution (discrimination) and the
irreducible outcome uncertainty.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from segal.calibration import (
    bin_predictions,
    brier,
    brier_decomposition,
    ece,
    reliability_diagram,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)
rng = np.random.default_rng(0)
n = 20_000


def stream(confidences, correct):
    preds = np.stack([1.0 - confidences, confidences], axis=1)[None, :, :]
    labels = np.where(correct, 1, 0)[None, :]
    return preds, labels


calibrated = stream(rng.uniform(0.5, 1.0, n), rng.random(n) < rng.uniform(0.5, 1.0, n))
# regenerate with shared draws so P(correct) == confidence exactly
conf = rng.uniform(0.5, 1.0, n)
calibrated = stream(conf, rng.random(n) < conf)
overconfident = stream(np.full(n, 0.92), rng.random(n) < 0.62)

fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
for ax, (name, (preds, labels)) in zip(
    axes, {"calibrated": calibrated, "overconfident": overconfident}.items()
):
    bins = bin_predictions(preds, labels, 10)
    rows = reliability_diagram(bins)
    centers = [r[0] for r in rows if r[3] > 0]
    confs = [r[1] for r in rows if r[3] > 0]
    accs = [r[2] for r in rows if r[3] > 0]
    ax.plot([0, 1], [0, 1], "k--", lw=1, label="perfect")
    ax.bar(centers, accs, width=0.095, alpha=0.7, label="accuracy")
    ax.plot(centers, confs, "ro-", label="confidence")
    ax.set_title(f"{name}: ECE {ece(bins):.3f}")
    ax.set_xlabel("confidence bin")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(out_dir / "reliability_diagrams.png", dpi=120)
print(f"wrote {out_dir / 'reliability_diagrams.png'}")

for name, (preds, labels) in {"calibrated": calibrated, "overconfident": overconfident}.items():
    rel, res, unc = brier_decomposition(preds, labels, 10)
    print(f"{name:>14}: brier={brier(preds, labels):.4f}  "
          f"REL={rel:.4f} RES={res:.4f} UNC={unc:.4f}  (REL-RES+UNC={rel - res + unc:.4f})")
