"""Walk the annotation service API end to end with a scripted "human".

Starts the server in-process, waits for the bootstrap training, fetches
suggested regions, submits labels for them (here: copied from ground
truth, standing in for a human), and watches the retrain land.
"""

import tempfile
import time

import numpy as np
from fastapi.testclient import TestClient

from segal.acquisition import AcquisitionFunction, RegionScoringConfig
from segal.data import SyntheticConfig, generate_synthetic
from segal.orchestrator import ExperimentConfig, TrainingConfig
from segal.service import AnnotationServer, create_app

records = generate_synthetic(SyntheticConfig(train_images=8, test_images=3,
                                             height=32, width=32, seed=9))
cfg = ExperimentConfig(
    strategy="region",
    acq_fn=AcquisitionFunction.ENTROPY,
    seed=0,
    initial_labeled=3,
    passes=4,
    restarts=1,
    region=RegionScoringConfig(kernel_width=8, kernel_height=8, stride=8,
                               kernel_value=1.0, regions_per_step=3),
    training=TrainingConfig(encoder_blocks=2, base_width=3, dropout_rate=0.2,
                            learning_rate=0.1, aux_weight=0.25, steps_per_restart=300),
)

state_dir = tempfile.mkdtemp(prefix="segal-service-demo-")
server = AnnotationServer(cfg, records, state_dir)
client = TestClient(create_app(server))
masks = {r.id: r.mask for r in records}

print("bootstrap training...")
server.start_initial_training()
server.wait_ready()
print("state:", client.get("/api/state").json())

for round_no in range(2):
    batch = client.get("/api/suggestions").json()
    print(f"\nbatch {batch['batch_id']}: "
          f"{[(r['image_id'], r['top'], r['left']) for r in batch['regions']]}")
    submission = {"batch_id": batch["batch_id"], "regions": []}
    for reg in batch["regions"]:
        gt = masks[reg["image_id"]][reg["top"]:reg["top"] + reg["height"],
                                    reg["left"]:reg["left"] + reg["width"]]
        submission["regions"].append({**{k: reg[k] for k in
                                         ("image_id", "top", "left", "width", "height")},
                                      "labels": gt.tolist()})
    ack = client.post("/api/annotations", json=submission).json()
    print(f"accepted: {ack['labeled_pixels']} labeled pixels, retraining...")
    while client.get("/api/state").json()["phase"] == "TRAINING":
        time.sleep(0.2)
    metrics = client.get("/api/state").json()["metrics"]
    print(f"step {metrics['step']}: dice {metrics['dice_obj']:.3f}, "
          f"brier {metrics['brier']:.4f}")

overlay = client.get(f"/api/overlay/{server.pool[0]}").json()
print(f"\noverlay for {overlay['image_id']}: {overlay['width']}x{overlay['height']}, "
      f"{len(overlay['regions'])} suggested rectangles, "
      f"pseudo-label PNG {len(overlay['pseudo_labels_png'])} b64 chars")
print(f"state persisted under {state_dir}")
