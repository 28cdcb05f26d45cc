"""End-to-end active-learning loops with a simulated oracle.

Both strategies share the same skeleton: train an initial model on a
random starter set with the restart-and-pick-best protocol, then per
acquisition step score the pool with the chosen uncertainty rule, spend
the annotation budget (whole images or windows), retrain from scratch,
and evaluate segmentation plus calibration on the held-out test split.

Everything is keyed off integer seeds through named rng substreams, so a
run is a pure function of (config, seed) and its CSV outputs are
byte-reproducible.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from segal.acquisition import (
    AcquisitionFunction,
    ImageAnnotation,
    Region,
    RegionScoringConfig,
    image_utility,
    mask_selected,
    prepare_pseudo_labels,
    region_scores,
    select_images,
    select_regions,
    uncertainty_map,
)
from segal.calibration import (
    CalibrationReport,
    calibration_report,
    reliability_diagram,
    uncertainty_histogram,
)
from segal.core import InvalidInputError
from segal.data import SampleRecord, extract_contours
from segal.model import (
    LossConfig,
    NetworkConfig,
    Parameters,
    TrainExample,
    evaluate_loss,
    init_parameters,
    mc_predict,
    save_checkpoint,
    train,
)
from segal.segmetrics import segmentation_scores

FULL_IMAGE = "full_image"
REGION = "region"

# rng substream tags; every consumer gets its own keyed stream
_TAG_INITIAL, _TAG_VALSPLIT, _TAG_TRAIN, _TAG_POOL, _TAG_EVAL, _TAG_PSEUDO = range(6)


class ConfigError(ValueError):
    """An experiment configuration is structurally invalid."""


@dataclass(frozen=True)
class TrainingConfig:
    encoder_blocks: int = 3
    base_width: int = 8
    dropout_rate: float = 0.5
    epochs: int = 150
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    aux_weight: float = 0.5
    # When set, overrides `epochs`: each restart runs ~this many SGD steps
    # at a 10-image set.  Small early sets then train to convergence while
    # late retrains stay affordable.  With steps_scale="sqrt" the budget
    # grows as sqrt(n/10) so larger sets are not starved of optimization.
    steps_per_restart: int | None = None
    steps_scale: str = "constant"

    def epochs_for(self, n_images: int) -> int:
        if self.steps_per_restart is None:
            return self.epochs
        n = max(1, n_images)
        budget = float(self.steps_per_restart)
        if self.steps_scale == "sqrt":
            budget *= math.sqrt(n / 10.0)
        elif self.steps_scale != "constant":
            raise ConfigError(f"unknown steps_scale {self.steps_scale!r}")
        return max(1, round(budget / n))


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str = FULL_IMAGE
    acq_fn: AcquisitionFunction = AcquisitionFunction.ENTROPY
    seed: int = 0
    initial_labeled: int = 10
    images_per_step: int = 5
    query_steps: int = 4
    passes: int = 20
    restarts: int = 4
    validation_fraction: float = 0.2
    calibration_bins: int = 10
    region: RegionScoringConfig = field(default_factory=RegionScoringConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        if self.strategy not in (FULL_IMAGE, REGION):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if min(self.initial_labeled, self.images_per_step, self.passes, self.restarts) < 1:
            raise ConfigError("counts must be positive")
        if self.query_steps < 0:
            raise ConfigError("query_steps must be >= 0")

    def network(self) -> NetworkConfig:
        t = self.training
        return NetworkConfig(
            encoder_blocks=t.encoder_blocks,
            base_width=t.base_width,
            dropout_rate=t.dropout_rate,
            classes=2,
            in_channels=1,
            seed=self.seed,
        )

    def loss(self) -> LossConfig:
        return LossConfig(self.training.weight_decay, self.training.aux_weight)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


@dataclass
class AcquisitionRecord:
    step: int
    strategy: str
    acq_fn: str
    image_id: str
    top: int
    left: int
    width: int
    height: int
    score: float


@dataclass
class StepRow:
    step: int
    strategy: str
    acq_fn: str
    seed: int
    labeled_pixels: int
    f1: float
    dice_obj: float
    jaccard: float
    calibration: CalibrationReport
    wallclock_s: float
    low_uncertainty_fraction: float | None = None   # selected pixels < 0.1 rescaled
    histogram: tuple | None = None                  # (masses, edges) of selection


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[StepRow]
    acquisition_log: list[AcquisitionRecord]
    final_params: Parameters
    restart_losses: list[list[float]]
    exhausted: bool = False


class SimulatedOracle:
    """Error-free label source backed by the ground-truth masks."""

    def __init__(self, records: list[SampleRecord]):
        self._masks = {r.id: r.mask for r in records}
        self._contours = {r.id: extract_contours(r.mask) for r in records}

    def full_image(self, image_id: str):
        if image_id not in self._masks:
            raise InvalidInputError(f"unknown image id {image_id!r}")
        return self._masks[image_id].copy(), self._contours[image_id].copy()

    def region(self, region: Region):
        if region.image_id not in self._masks:
            raise InvalidInputError(f"unknown image id {region.image_id!r}")
        mask = self._masks[region.image_id]
        region.check_inside(mask.shape)
        rows, cols = region.rows(), region.cols()
        return mask[rows, cols].copy(), self._contours[region.image_id][rows, cols].copy()


def _examples_from(annotations: dict, images: dict) -> list[TrainExample]:
    out = []
    for image_id in sorted(annotations):
        ann = annotations[image_id]
        if ann.labeled_pixels() > 0:
            out.append(
                TrainExample(
                    images[image_id], ann.human_labels, ann.human_contours, ann.human_mask
                )
            )
    return out


def train_restart_best(
    examples: list[TrainExample], cfg: ExperimentConfig, step: int
) -> tuple[Parameters, list[float]]:
    """Train ``restarts`` models from independent seeds; keep the one with
    the lowest validation loss.

    Validation images are a deterministic fraction of the labeled set
    (at least 2 when possible), held out from SGD and used only here.
    """
    if not examples:
        raise InvalidInputError("no labeled examples to train on")
    n = len(examples)
    val_count = min(max(2, math.ceil(cfg.validation_fraction * n)), n - 1) if n > 1 else 0
    order = _rng(cfg.seed, _TAG_VALSPLIT, step).permutation(n)
    val_idx = set(order[:val_count].tolist())
    train_set = [ex for i, ex in enumerate(examples) if i not in val_idx]
    val_set = [ex for i, ex in enumerate(examples) if i in val_idx] or train_set

    loss_cfg = cfg.loss()
    best = None
    losses = []
    for k in range(cfg.restarts):
        net = NetworkConfig(
            encoder_blocks=cfg.training.encoder_blocks,
            base_width=cfg.training.base_width,
            dropout_rate=cfg.training.dropout_rate,
            classes=2,
            in_channels=1,
            seed=int(_rng(cfg.seed, _TAG_TRAIN, step, k).integers(2**31)),
        )
        params0 = init_parameters(net)
        trained, _ = train(
            params0,
            train_set,
            cfg.training.epochs_for(len(train_set)),
            cfg.training.learning_rate,
            loss_cfg,
            _rng(cfg.seed, _TAG_TRAIN, step, k, 1),
        )
        val_loss = evaluate_loss(trained, val_set, loss_cfg)
        losses.append(val_loss)
        if best is None or val_loss < best[0]:
            best = (val_loss, trained)
    return best[1], losses


def _evaluate(params, cfg, test_records, step, elapsed, extra=None) -> StepRow:
    preds = []
    labels = []
    per_image = []
    for i, rec in enumerate(test_records):
        mean_map, _ = mc_predict(params, rec.image, cfg.passes, _rng(cfg.seed, _TAG_EVAL, step, i))
        preds.append(mean_map)
        labels.append(rec.mask)
        per_image.append(segmentation_scores(np.argmax(mean_map, axis=2), rec.mask))
    report = calibration_report(preds, labels, step, cfg.calibration_bins)
    row = StepRow(
        step=step,
        strategy=cfg.strategy,
        acq_fn=cfg.acq_fn.value,
        seed=cfg.seed,
        labeled_pixels=0,
        f1=float(np.mean([m["f1"] for m in per_image])),
        dice_obj=float(np.mean([m["dice_obj"] for m in per_image])),
        jaccard=float(np.mean([m["jaccard"] for m in per_image])),
        calibration=report,
        wallclock_s=elapsed,
    )
    if extra:
        row.low_uncertainty_fraction = extra["low_fraction"]
        row.histogram = extra["histogram"]
    return row


def _split_records(records):
    train_records = [r for r in records if r.split == "train"]
    test_records = [r for r in records if r.split == "test"]
    if not train_records or not test_records:
        raise ConfigError("dataset needs both train and test records")
    return train_records, test_records


def _initial_ids(cfg, train_records) -> list[str]:
    ids = sorted(r.id for r in train_records)
    if cfg.initial_labeled > len(ids):
        raise ConfigError("initial_labeled exceeds the training set size")
    picked = _rng(cfg.seed, _TAG_INITIAL).choice(len(ids), cfg.initial_labeled, replace=False)
    return [ids[i] for i in sorted(picked.tolist())]


def _selection_stats(cfg, maps, selection_masks):
    masses, edges = uncertainty_histogram(
        maps, selection_masks, cfg.acq_fn, classes=2, bins=10
    )
    values = np.concatenate(
        [np.asarray(u)[np.asarray(sel, dtype=bool)] for u, sel in zip(maps, selection_masks)]
    )
    low = float((values / cfg.acq_fn.analytic_max(2) < 0.1).mean())
    return {"low_fraction": low, "histogram": (masses.tolist(), edges.tolist())}


def run_full_image_loop(cfg: ExperimentConfig, records: list[SampleRecord]) -> RunResult:
    """Acquire whole images ranked by summed pixel uncertainty."""
    if cfg.strategy != FULL_IMAGE:
        raise ConfigError("run_full_image_loop needs strategy full_image")
    train_records, test_records = _split_records(records)
    images = {r.id: r.image for r in train_records}
    oracle = SimulatedOracle(train_records)
    height, width = train_records[0].mask.shape

    annotations: dict[str, ImageAnnotation] = {}
    for image_id in _initial_ids(cfg, train_records):
        ann = ImageAnnotation.empty(height, width)
        ann.annotate_fully(*oracle.full_image(image_id))
        annotations[image_id] = ann
    pool = sorted(set(images) - set(annotations))

    rows: list[StepRow] = []
    log: list[AcquisitionRecord] = []
    restart_losses: list[list[float]] = []
    exhausted = False

    t0 = time.perf_counter()
    params, losses = train_restart_best(_examples_from(annotations, images), cfg, 0)
    restart_losses.append(losses)
    row = _evaluate(params, cfg, test_records, 0, time.perf_counter() - t0)
    row.labeled_pixels = sum(a.labeled_pixels() for a in annotations.values())
    rows.append(row)

    for step in range(1, cfg.query_steps + 1):
        if not pool:
            exhausted = True
            break
        t0 = time.perf_counter()
        maps = {}
        for i, image_id in enumerate(pool):
            mean_map, stack = mc_predict(
                params, images[image_id], cfg.passes, _rng(cfg.seed, _TAG_POOL, step, i)
            )
            maps[image_id] = uncertainty_map(
                cfg.acq_fn, mean_map, stack, _rng(cfg.seed, _TAG_POOL, step, i, 1)
            )
        utilities = [(image_id, image_utility(maps[image_id])) for image_id in pool]
        picked = select_images(utilities, cfg.images_per_step)
        utility_of = dict(utilities)
        for image_id in picked:
            ann = ImageAnnotation.empty(height, width)
            ann.annotate_fully(*oracle.full_image(image_id))
            annotations[image_id] = ann
            pool.remove(image_id)
            log.append(
                AcquisitionRecord(
                    step, cfg.strategy, cfg.acq_fn.value, image_id,
                    0, 0, width, height, float(utility_of[image_id]),
                )
            )
        extra = _selection_stats(
            cfg,
            [maps[i] for i in picked],
            [np.ones((height, width), dtype=bool)] * len(picked),
        )
        params, losses = train_restart_best(_examples_from(annotations, images), cfg, step)
        restart_losses.append(losses)
        row = _evaluate(params, cfg, test_records, step, time.perf_counter() - t0, extra)
        row.labeled_pixels = sum(a.labeled_pixels() for a in annotations.values())
        rows.append(row)

    return RunResult(cfg, rows, log, params, restart_losses, exhausted)


def run_region_loop(cfg: ExperimentConfig, records: list[SampleRecord]) -> RunResult:
    """Acquire fixed-size windows; partially labeled images stay in the pool."""
    if cfg.strategy != REGION:
        raise ConfigError("run_region_loop needs strategy region")
    train_records, test_records = _split_records(records)
    images = {r.id: r.image for r in train_records}
    oracle = SimulatedOracle(train_records)
    height, width = train_records[0].mask.shape

    annotations: dict[str, ImageAnnotation] = {}
    for image_id in _initial_ids(cfg, train_records):
        ann = ImageAnnotation.empty(height, width)
        ann.annotate_fully(*oracle.full_image(image_id))
        annotations[image_id] = ann
    pool = sorted(set(images) - set(annotations))
    pool_annotations = {image_id: ImageAnnotation.empty(height, width) for image_id in pool}

    rows: list[StepRow] = []
    log: list[AcquisitionRecord] = []
    restart_losses: list[list[float]] = []
    exhausted = False

    def all_annotations():
        merged = dict(annotations)
        merged.update(pool_annotations)
        return merged

    t0 = time.perf_counter()
    params, losses = train_restart_best(_examples_from(all_annotations(), images), cfg, 0)
    restart_losses.append(losses)
    row = _evaluate(params, cfg, test_records, 0, time.perf_counter() - t0)
    row.labeled_pixels = sum(a.labeled_pixels() for a in all_annotations().values())
    rows.append(row)

    for step in range(1, cfg.query_steps + 1):
        t0 = time.perf_counter()
        maps = {}
        for i, image_id in enumerate(pool):
            mean_map, stack = mc_predict(
                params, images[image_id], cfg.passes, _rng(cfg.seed, _TAG_POOL, step, i)
            )
            maps[image_id] = uncertainty_map(
                cfg.acq_fn, mean_map, stack, _rng(cfg.seed, _TAG_POOL, step, i, 1)
            )
        prior = {image_id: pool_annotations[image_id].regions for image_id in pool}
        picked = select_regions(maps, cfg.region, prior)
        if not picked:
            exhausted = True
            break
        masked_maps = {
            image_id: mask_selected(maps[image_id], prior[image_id]) for image_id in pool
        }
        selection_masks = {image_id: np.zeros((height, width), dtype=bool) for image_id in pool}
        for reg in picked:
            labels, contours = oracle.region(reg)
            pool_annotations[reg.image_id].add_region(reg, labels, contours)
            selection_masks[reg.image_id][reg.rows(), reg.cols()] = True
            score = cfg.region.kernel_value * float(
                masked_maps[reg.image_id][reg.rows(), reg.cols()].sum()
            )
            log.append(
                AcquisitionRecord(
                    step, cfg.strategy, cfg.acq_fn.value, reg.image_id,
                    reg.top, reg.left, reg.width, reg.height, score,
                )
            )
        touched = sorted({reg.image_id for reg in picked})
        for i, image_id in enumerate(touched):
            ann = pool_annotations[image_id]
            ann.pseudo_labels = prepare_pseudo_labels(
                params, images[image_id], ann.human_mask, ann.human_labels,
                cfg.passes, _rng(cfg.seed, _TAG_PSEUDO, step, i),
            )
        extra = _selection_stats(
            cfg,
            [masked_maps[i] for i in touched],
            [selection_masks[i] for i in touched],
        )
        params, losses = train_restart_best(_examples_from(all_annotations(), images), cfg, step)
        restart_losses.append(losses)
        row = _evaluate(params, cfg, test_records, step, time.perf_counter() - t0, extra)
        row.labeled_pixels = sum(a.labeled_pixels() for a in all_annotations().values())
        rows.append(row)

    return RunResult(cfg, rows, log, params, restart_losses, exhausted)


def run_experiment(cfg: ExperimentConfig, records: list[SampleRecord]) -> RunResult:
    if cfg.strategy == FULL_IMAGE:
        return run_full_image_loop(cfg, records)
    return run_region_loop(cfg, records)


def train_full_reference(cfg: ExperimentConfig, records: list[SampleRecord]) -> StepRow:
    """Train on the entire training split; the Table-1-style yardstick."""
    train_records, test_records = _split_records(records)
    images = {r.id: r.image for r in train_records}
    oracle = SimulatedOracle(train_records)
    height, width = train_records[0].mask.shape
    annotations = {}
    for rec in train_records:
        ann = ImageAnnotation.empty(height, width)
        ann.annotate_fully(*oracle.full_image(rec.id))
        annotations[rec.id] = ann
    t0 = time.perf_counter()
    params, _ = train_restart_best(_examples_from(annotations, images), cfg, 0)
    row = _evaluate(params, cfg, test_records, 0, time.perf_counter() - t0)
    row.labeled_pixels = sum(a.labeled_pixels() for a in annotations.values())
    return row


# -- persistence ---------------------------------------------------------

RESULTS_COLUMNS = [
    "step", "strategy", "acq_fn", "seed", "labeled_pixels",
    "f1", "dice_obj", "jaccard", "nll", "ece", "brier", "rel", "res", "unc",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(result: RunResult, out_dir) -> dict[str, Path]:
    """Write the CSV/JSON/checkpoint bundle for one run.

    Wall-clock timings go to a sidecar (timings.csv) so that results.csv
    and acquisition.csv are byte-identical across reruns of the same
    (config, seed).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    lines = [",".join(RESULTS_COLUMNS)]
    for row in result.rows:
        cal = row.calibration
        lines.append(",".join(_fmt(v) for v in [
            row.step, row.strategy, row.acq_fn, row.seed, row.labeled_pixels,
            row.f1, row.dice_obj, row.jaccard, cal.nll, cal.ece, cal.brier,
            cal.reliability, cal.resolution, cal.uncertainty,
        ]))
    paths["results"] = out / "results.csv"
    paths["results"].write_text("\n".join(lines) + "\n")

    lines = ["step,strategy,acq_fn,image_id,top,left,k_w,k_h,score"]
    for rec in result.acquisition_log:
        lines.append(",".join(_fmt(v) for v in [
            rec.step, rec.strategy, rec.acq_fn, rec.image_id,
            rec.top, rec.left, rec.width, rec.height, rec.score,
        ]))
    paths["acquisition"] = out / "acquisition.csv"
    paths["acquisition"].write_text("\n".join(lines) + "\n")

    lines = ["step,wallclock_s"]
    for row in result.rows:
        lines.append(f"{row.step},{row.wallclock_s!r}")
    paths["timings"] = out / "timings.csv"
    paths["timings"].write_text("\n".join(lines) + "\n")

    for row in result.rows:
        diagram = reliability_diagram(row.calibration.bins)
        lines = ["bin_center,confidence,accuracy,count"]
        for center, conf, acc, count in diagram:
            lines.append(f"{center!r},{conf!r},{acc!r},{count}")
        path = out / f"reliability_step{row.step}.csv"
        path.write_text("\n".join(lines) + "\n")
        paths[f"reliability_step{row.step}"] = path
        if row.histogram is not None:
            masses, edges = row.histogram
            lines = ["bin_left,bin_right,mass"]
            for k, mass in enumerate(masses):
                lines.append(f"{edges[k]!r},{edges[k + 1]!r},{mass!r}")
            path = out / f"histogram_step{row.step}.csv"
            path.write_text("\n".join(lines) + "\n")
            paths[f"histogram_step{row.step}"] = path

    paths["config"] = out / "config.json"
    paths["config"].write_text(json.dumps(config_to_dict(result.config), indent=2) + "\n")
    paths["checkpoint"] = out / "checkpoint.segal"
    save_checkpoint(result.final_params, paths["checkpoint"])
    return paths


def pixels_to_target(rows: list[StepRow], target: float, metric: str = "dice_obj"):
    """First step (and its pixel budget) at which the metric reaches target."""
    for row in rows:
        if getattr(row, metric) >= target:
            return row.step, row.labeled_pixels
    return None, None


def summarize_runs(
    results: dict[str, list[StepRow]],
    reference: float,
    fractions=(0.75, 0.80, 0.85),
    metric: str = "dice_obj",
) -> dict:
    """Table-1-style summary: pixels needed to reach fractions of the
    full-data reference metric, per strategy."""
    summary = {"reference": reference, "metric": metric, "targets": {}}
    for fraction in fractions:
        target = fraction * reference
        entry = {}
        for name, rows in results.items():
            step, pixels = pixels_to_target(rows, target, metric)
            entry[name] = {"step": step, "labeled_pixels": pixels}
        summary["targets"][f"{fraction:.2f}"] = entry
    return summary


# -- config (de)serialization --------------------------------------------

def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["acq_fn"] = cfg.acq_fn.value
    return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        d = dict(raw)
        if "acq_fn" in d:
            d["acq_fn"] = AcquisitionFunction(d["acq_fn"])
        if "region" in d:
            d["region"] = RegionScoringConfig(**d["region"])
        if "training" in d:
            d["training"] = TrainingConfig(**d["training"])
        return ExperimentConfig(**d)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc
