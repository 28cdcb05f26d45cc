"""HTTP annotation service: the region loop with a human oracle.

The server owns one AnnotationState and one model snapshot.  Reads serve
immutable snapshots; writes (submissions, retrains) are serialized behind
a lock, and a retrain in progress makes dependent endpoints answer busy.
Every submission is persisted (JSON + PNG label files) before the
retrain starts, so human labeling effort survives crashes.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from dataclasses import asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image as PILImage

from segal.acquisition import (
    ImageAnnotation,
    Region,
    mask_selected,
    prepare_pseudo_labels,
    select_regions,
    uncertainty_map,
)
from segal.core import UNLABELED
from segal.data import SampleRecord, extract_contours
from segal.model import load_checkpoint, mc_predict, save_checkpoint
from segal.orchestrator import (
    REGION,
    ConfigError,
    ExperimentConfig,
    SimulatedOracle,
    StepRow,
    _evaluate,
    _examples_from,
    _initial_ids,
    _rng,
    _TAG_POOL,
    _TAG_PSEUDO,
    train_restart_best,
)

IDLE = "IDLE"
SUGGESTING = "SUGGESTING"
TRAINING = "TRAINING"

_UNLABELED_PNG = 255  # sentinel byte for UNLABELED in persisted label files


class ServiceConflict(Exception):
    """Request conflicts with the current phase or batch (HTTP 409)."""


class ServiceValidation(Exception):
    """Submitted payload is malformed (HTTP 422)."""


class NotFound(Exception):
    """Unknown image id (HTTP 404)."""


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(array.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def _b64_png(array: np.ndarray) -> str:
    return base64.b64encode(_png_bytes(array)).decode("ascii")


def region_contours(labels: np.ndarray) -> np.ndarray:
    """Contour targets derived from one region's dense object labels."""
    return extract_contours(np.asarray(labels, dtype=np.int64))


class AnnotationServer:
    """Single-writer state machine around the region acquisition loop."""

    def __init__(self, cfg: ExperimentConfig, records: list[SampleRecord], state_dir):
        if cfg.strategy != REGION:
            raise ConfigError("the annotation service drives the region strategy")
        self.cfg = cfg
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        (self.state_dir / "labels").mkdir(exist_ok=True)

        self.train_records = [r for r in records if r.split == "train"]
        self.test_records = [r for r in records if r.split == "test"]
        self.images = {r.id: r.image for r in self.train_records}
        self.height, self.width = self.train_records[0].mask.shape

        self._lock = threading.RLock()
        self._train_thread: threading.Thread | None = None
        self.phase = IDLE
        self.step = 0            # completed acquisition steps
        self.model_step = -1     # step index of the current snapshot (-1: none)
        self.params = None
        self.batch = None        # {"batch_id", "regions": [Region], "scores": [...]}
        self.pseudo: dict[str, np.ndarray] = {}
        self.rows: list[StepRow] = []

        bootstrap = SimulatedOracle(self.train_records)
        self.annotations: dict[str, ImageAnnotation] = {}
        self.initial_ids = _initial_ids(cfg, self.train_records)
        for image_id in sorted(self.images):
            ann = ImageAnnotation.empty(self.height, self.width)
            if image_id in self.initial_ids:
                ann.annotate_fully(*bootstrap.full_image(image_id))
            self.annotations[image_id] = ann
        self.pool = sorted(set(self.images) - set(self.initial_ids))

        if (self.state_dir / "state.json").exists():
            self._load_state()

    # -- state machine ----------------------------------------------------

    def labeled_pixels(self) -> int:
        return sum(a.labeled_pixels() for a in self.annotations.values())

    def get_state(self) -> dict:
        with self._lock:
            latest = self.rows[-1] if self.rows else None
            return {
                "phase": self.phase,
                "step": self.step,
                "labeled_pixels": self.labeled_pixels(),
                "batch_id": self.batch["batch_id"] if self.batch else None,
                "classes": 2,
                "metrics": _row_dict(latest) if latest else None,
            }

    def start_initial_training(self) -> None:
        """Train the starting model if no snapshot exists yet."""
        with self._lock:
            if self.phase == TRAINING:
                raise ServiceConflict("training already in progress")
            if self.model_step >= self.step and self.params is not None:
                raise ServiceConflict("model is already up to date")
            self.phase = TRAINING
            self._train_thread = threading.Thread(target=self._train_worker, daemon=True)
            self._train_thread.start()

    def _train_worker(self) -> None:
        examples = _examples_from(self.annotations, self.images)
        params, _ = train_restart_best(examples, self.cfg, self.step)
        row = _evaluate(params, self.cfg, self.test_records, self.step, 0.0)
        row.labeled_pixels = self.labeled_pixels()
        with self._lock:
            self.params = params
            self.model_step = self.step
            self.rows.append(row)
            self.batch = None
            self.pseudo = {}
            self.phase = IDLE
            self._persist()

    def wait_ready(self, timeout: float = 120.0) -> None:
        thread = self._train_thread
        if thread is not None:
            thread.join(timeout)
        if self.phase == TRAINING:
            raise TimeoutError("training did not finish in time")

    def get_suggestions(self) -> dict:
        with self._lock:
            if self.phase == TRAINING:
                raise ServiceConflict("retrain in progress")
            if self.params is None:
                raise ServiceConflict("no model snapshot yet; POST /api/retrain first")
            if self.batch is None:
                self._compute_batch()
            return self._batch_payload()

    def _compute_batch(self) -> None:
        step = self.step + 1
        maps = {}
        for i, image_id in enumerate(self.pool):
            mean_map, stack = mc_predict(
                self.params, self.images[image_id], self.cfg.passes,
                _rng(self.cfg.seed, _TAG_POOL, step, i),
            )
            maps[image_id] = uncertainty_map(
                self.cfg.acq_fn, mean_map, stack,
                _rng(self.cfg.seed, _TAG_POOL, step, i, 1),
            )
        prior = {image_id: self.annotations[image_id].regions for image_id in self.pool}
        regions = select_regions(maps, self.cfg.region, prior)
        masked = {iid: mask_selected(maps[iid], prior[iid]) for iid in self.pool}
        scores = [
            self.cfg.region.kernel_value * float(masked[r.image_id][r.rows(), r.cols()].sum())
            for r in regions
        ]
        order = np.argsort([-s for s in scores], kind="stable")
        regions = [regions[i] for i in order]
        scores = [scores[i] for i in order]
        self.pseudo = {}
        for i, image_id in enumerate(sorted({r.image_id for r in regions})):
            ann = self.annotations[image_id]
            self.pseudo[image_id] = prepare_pseudo_labels(
                self.params, self.images[image_id], ann.human_mask, ann.human_labels,
                self.cfg.passes, _rng(self.cfg.seed, _TAG_PSEUDO, step, i),
            )
        self.batch = {
            "batch_id": f"batch{self.model_step:04d}",
            "regions": regions,
            "scores": scores,
        }

    def _batch_payload(self) -> dict:
        return {
            "batch_id": self.batch["batch_id"],
            "model_step": self.model_step,
            "regions": [
                {**_region_dict(r), "score": s}
                for r, s in zip(self.batch["regions"], self.batch["scores"])
            ],
        }

    def get_overlay(self, image_id: str) -> dict:
        with self._lock:
            if image_id not in self.images:
                raise NotFound(f"unknown image id {image_id!r}")
            image8 = np.round(self.images[image_id][:, :, 0] * 255.0)
            ann = self.annotations[image_id]
            if image_id in self.pseudo:
                pseudo = self.pseudo[image_id]
            elif self.params is not None:
                pseudo = prepare_pseudo_labels(
                    self.params, self.images[image_id], ann.human_mask, ann.human_labels,
                    self.cfg.passes, _rng(self.cfg.seed, _TAG_PSEUDO, self.step + 1, 9999),
                )
            else:
                pseudo = np.zeros((self.height, self.width), dtype=np.int64)
            rectangles = []
            if self.batch is not None:
                rectangles = [
                    {**_region_dict(r), "score": s}
                    for r, s in zip(self.batch["regions"], self.batch["scores"])
                    if r.image_id == image_id
                ]
            return {
                "image_id": image_id,
                "height": self.height,
                "width": self.width,
                "image_png": _b64_png(image8),
                "pseudo_labels_png": _b64_png(pseudo),
                "regions": rectangles,
                "annotated_regions": [_region_dict(r) for r in ann.regions],
            }

    def submit_annotations(self, payload: dict) -> dict:
        with self._lock:
            if self.phase == TRAINING:
                raise ServiceConflict("retrain in progress")
            if self.batch is None or payload.get("batch_id") != self.batch["batch_id"]:
                raise ServiceConflict(
                    f"batch {payload.get('batch_id')!r} is not the outstanding batch"
                )
            submitted = payload.get("regions", [])
            expected = {_region_key(r): r for r in self.batch["regions"]}
            seen = {}
            for entry in submitted:
                try:
                    key = (entry["image_id"], int(entry["top"]), int(entry["left"]),
                           int(entry["width"]), int(entry["height"]))
                    labels = np.asarray(entry["labels"], dtype=np.int64)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ServiceValidation(f"malformed region entry: {exc}") from exc
                if key not in expected:
                    raise ServiceValidation(f"region {key} was not suggested in this batch")
                region = expected[key]
                if labels.shape != (region.height, region.width):
                    raise ServiceValidation(
                        f"region {key}: labels shape {labels.shape} != "
                        f"({region.height}, {region.width})"
                    )
                bad = np.argwhere((labels < 0) | (labels >= 2))
                if bad.size:
                    offenders = [
                        (int(region.top + r), int(region.left + c)) for r, c in bad[:20]
                    ]
                    raise ServiceValidation(
                        f"region {key}: label values outside [0, 2) at pixels {offenders}"
                    )
                seen[key] = (region, labels)
            missing = sorted(set(expected) - set(seen))
            if missing:
                raise ServiceValidation(f"batch incomplete; missing regions {missing}")

            for region, labels in seen.values():
                self.annotations[region.image_id].add_region(
                    region, labels, region_contours(labels)
                )
            self.step += 1
            self.batch = None
            self.pseudo = {}
            self._persist()
            count = self.labeled_pixels()
            self.phase = TRAINING
            self._train_thread = threading.Thread(target=self._train_worker, daemon=True)
            self._train_thread.start()
            return {"labeled_pixels": count, "step": self.step, "training": True}

    # -- persistence -------------------------------------------------------

    def _persist(self) -> None:
        state = {
            "step": self.step,
            "model_step": self.model_step,
            "initial_ids": self.initial_ids,
            "rows": [_row_dict(r) for r in self.rows],
            "batch": None
            if self.batch is None
            else {
                "batch_id": self.batch["batch_id"],
                "regions": [_region_dict(r) for r in self.batch["regions"]],
                "scores": self.batch["scores"],
            },
            "regions": {
                image_id: [_region_dict(r) for r in ann.regions]
                for image_id, ann in self.annotations.items()
                if ann.regions
            },
        }
        tmp = self.state_dir / "state.json.tmp"
        tmp.write_text(json.dumps(state, indent=2))
        tmp.replace(self.state_dir / "state.json")
        for image_id, ann in self.annotations.items():
            if ann.labeled_pixels() == 0 or image_id in self.initial_ids:
                continue
            labels = ann.human_labels.copy()
            labels[labels == UNLABELED] = _UNLABELED_PNG
            contours = ann.human_contours.copy()
            contours[contours == UNLABELED] = _UNLABELED_PNG
            base = self.state_dir / "labels"
            PILImage.fromarray(labels.astype(np.uint8)).save(base / f"{image_id}_labels.png")
            PILImage.fromarray(contours.astype(np.uint8)).save(base / f"{image_id}_contours.png")
            PILImage.fromarray((ann.human_mask * 255).astype(np.uint8)).save(
                base / f"{image_id}_mask.png"
            )
        if self.params is not None:
            save_checkpoint(self.params, self.state_dir / "checkpoint.segal")

    def _load_state(self) -> None:
        state = json.loads((self.state_dir / "state.json").read_text())
        self.step = state["step"]
        self.model_step = state["model_step"]
        self.rows = [_row_from_dict(d) for d in state["rows"]]
        base = self.state_dir / "labels"
        for image_id, region_dicts in state.get("regions", {}).items():
            ann = self.annotations[image_id]
            labels = np.asarray(PILImage.open(base / f"{image_id}_labels.png"), dtype=np.int64)
            contours = np.asarray(PILImage.open(base / f"{image_id}_contours.png"), dtype=np.int64)
            labels[labels == _UNLABELED_PNG] = UNLABELED
            contours[contours == _UNLABELED_PNG] = UNLABELED
            mask = np.asarray(PILImage.open(base / f"{image_id}_mask.png"), dtype=np.int64) // 255
            ann.human_mask = mask
            ann.human_labels = labels
            ann.human_contours = contours
            ann.regions = [_region_from_dict(d) for d in region_dicts]
        if (self.state_dir / "checkpoint.segal").exists():
            self.params = load_checkpoint(self.state_dir / "checkpoint.segal")
        if state.get("batch"):
            self.batch = {
                "batch_id": state["batch"]["batch_id"],
                "regions": [_region_from_dict(d) for d in state["batch"]["regions"]],
                "scores": state["batch"]["scores"],
            }
        if self.model_step < self.step or self.params is None:
            # crash happened before the retrain finished; redo it
            self.phase = TRAINING
            self._train_thread = threading.Thread(target=self._train_worker, daemon=True)
            self._train_thread.start()


def _region_dict(r: Region) -> dict:
    return {"image_id": r.image_id, "top": r.top, "left": r.left,
            "width": r.width, "height": r.height}


def _region_key(r: Region):
    return (r.image_id, r.top, r.left, r.width, r.height)


def _region_from_dict(d: dict) -> Region:
    return Region(d["image_id"], d["top"], d["left"], d["width"], d["height"])


def _row_dict(row: StepRow) -> dict:
    cal = row.calibration
    return {
        "step": row.step, "strategy": row.strategy, "acq_fn": row.acq_fn,
        "seed": row.seed, "labeled_pixels": row.labeled_pixels,
        "f1": row.f1, "dice_obj": row.dice_obj, "jaccard": row.jaccard,
        "nll": cal.nll, "ece": cal.ece, "brier": cal.brier,
        "rel": cal.reliability, "res": cal.resolution, "unc": cal.uncertainty,
    }


def _row_from_dict(d: dict) -> StepRow:
    from segal.calibration import CalibrationReport, ReliabilityBins

    cal = CalibrationReport(
        step=d["step"], nll=d["nll"], ece=d["ece"], brier=d["brier"],
        reliability=d["rel"], resolution=d["res"], uncertainty=d["unc"],
        bins=ReliabilityBins(1),
    )
    return StepRow(
        step=d["step"], strategy=d["strategy"], acq_fn=d["acq_fn"], seed=d["seed"],
        labeled_pixels=d["labeled_pixels"], f1=d["f1"], dice_obj=d["dice_obj"],
        jaccard=d["jaccard"], calibration=cal, wallclock_s=0.0,
    )


def create_app(server: AnnotationServer) -> FastAPI:
    """FastAPI wiring over one AnnotationServer."""
    app = FastAPI(title="segal annotation service")
    app.state.server = server

    @app.exception_handler(ServiceConflict)
    async def _conflict(request: Request, exc: ServiceConflict):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(ServiceValidation)
    async def _validation(request: Request, exc: ServiceValidation):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(NotFound)
    async def _not_found(request: Request, exc: NotFound):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.get("/api/state")
    async def state():
        return server.get_state()

    @app.get("/api/suggestions")
    async def suggestions():
        return server.get_suggestions()

    @app.get("/api/overlay/{image_id}")
    async def overlay(image_id: str):
        return server.get_overlay(image_id)

    @app.post("/api/annotations")
    async def annotations(request: Request):
        payload = await request.json()
        return server.submit_annotations(payload)

    @app.post("/api/retrain")
    async def retrain():
        server.start_initial_training()
        return {"training": True}

    return app
