"""Checkpoint interpolation and generalization-surface analysis toolkit,
with a synthetic two-domain transfer lab that exercises the whole pipeline.
"""

from .aggregate import (
    AggregateRecord,
    VariancePoint,
    aggregate_records,
    flatness_score,
    flatness_score_grid,
    normalize_by_reference,
    surface_matrix,
    variance_profile,
)
from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CompatibilityError,
    DegenerateDirectionError,
    DegenerateReferenceError,
    EmptyGroupError,
    EvaluationError,
    IncompleteGridError,
    InsufficientSeedsError,
    InterplabError,
    MissingReferenceError,
    MissingTensorError,
    ShapeMismatchError,
    UnsupportedDtypeError,
)
from .grid import (
    DEFAULT_EXTRA_POINTS,
    EvaluationRecord,
    EvaluatorBinding,
    GridSpec,
    ResultCache,
    build_grid_1d,
    build_grid_2d,
    cache_key,
    evaluate_grid_1d,
    evaluate_grid_2d,
)
from .interp import (
    Delta,
    DirectionDiagnostics,
    compute_delta,
    direction_diagnostics,
    lerp_pair,
    model_analogy,
    plane_point,
)
from .report import (
    HeatmapSpec,
    LinePlotSpec,
    LineSeries,
    aggregates_to_doc,
    emit_aggregates_json,
    emit_heatmap,
    emit_line_plot,
    emit_records_csv,
    heatmap_spec_from_aggregates,
    line_spec_from_aggregates,
    parse_aggregates_json,
    parse_records_csv,
)
from .tensor_store import (
    ALL,
    ENCODER,
    HEAD,
    ParameterSet,
    SubsetFilter,
    TensorSpec,
    apply_subset_filter,
    flatten,
    load_checkpoint,
    save_checkpoint,
    validate_compatibility,
)
from .toylab import (
    AdamState,
    ExperimentResult,
    ToyDataset,
    ToyTaskConfig,
    adam_step,
    backward,
    compute_loss,
    evaluate_accuracy,
    finetune,
    forward,
    generate_task,
    init_adam_state,
    init_weights,
    pretrain_autoencoder,
    run_transfer_experiment,
)

__version__ = "0.1.0"
