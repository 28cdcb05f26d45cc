"""Active learning for image segmentation with MC-dropout uncertainty.

Grids are plain numpy arrays with fixed conventions:

* images            float64, shape (H, W, channels), values in [0, 1]
* label masks       int, shape (H, W), class ids in {0..C-1} or UNLABELED (-1)
* probability maps  float64, shape (H, W, C), each pixel on the simplex
* probability stack float64, shape (T, H, W, C), one map per stochastic pass
* uncertainty maps  float64, shape (H, W), non-negative
"""

from segal.acquisition import (
    AcquisitionFunction,
    Region,
    RegionScoringConfig,
    bald_map,
    entropy_map,
    image_utility,
    mask_selected,
    prepare_pseudo_labels,
    random_map,
    region_scores,
    select_images,
    select_regions,
    varratio_map,
)
from segal.calibration import (
    CalibrationReport,
    ReliabilityBins,
    bin_predictions,
    brier,
    brier_decomposition,
    calibration_report,
    ece,
    nll,
    reliability_diagram,
    uncertainty_histogram,
)
from segal.core import UNLABELED, InvalidInputError, mc_average, one_hot, softmax
from segal.data import (
    DatasetError,
    SampleRecord,
    SyntheticConfig,
    downsample_bilinear,
    extract_contours,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from segal.model import (
    DropoutMask,
    LossConfig,
    NetworkConfig,
    Parameters,
    TrainExample,
    forward,
    gradient,
    init_parameters,
    load_checkpoint,
    loss,
    mc_predict,
    parameter_count,
    sample_dropout_mask,
    save_checkpoint,
    train,
)
from segal.orchestrator import (
    ExperimentConfig,
    RunResult,
    SimulatedOracle,
    TrainingConfig,
    emit_results,
    run_experiment,
    run_full_image_loop,
    run_region_loop,
    summarize_runs,
    train_full_reference,
    train_restart_best,
)
from segal.segmetrics import (
    connected_components,
    jaccard,
    object_dice,
    object_f1,
    segmentation_scores,
)

__all__ = [name for name in dir() if not name.startswith("_")]
