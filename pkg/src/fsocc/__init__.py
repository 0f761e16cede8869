"""Few-shot one-class classification with a differentiable minimum-ball layer.

The package meta-trains a feature encoder so that a small support set of a
single class describes the class well: support features are wrapped in their
minimum enclosing ball (a small QP solved exactly and differentiated
implicitly), and queries are scored by distance to the ball center. A
uniform-weight variant, two evaluation protocols, and a PCA + one-class SVM
baseline round out the toolkit.
"""

from .autodiff import Tape, Tensor, apply_primitive, backward, grad_check
from .baseline import (
    GAMMA_GRID,
    NU_GRID,
    BaselineGridReport,
    OcsvmModel,
    PcaModel,
    baseline_grid_eval,
    baseline_report_csv,
    baseline_scorer,
    ocsvm_decision,
    ocsvm_fit,
    pca_fit_transform,
    pca_transform,
)
from .data_io import (
    augment_rotations,
    dumps_checkpoint,
    dumps_occb,
    ingest_idx,
    load_checkpoint,
    load_occb,
    load_split_datasets,
    load_split_manifest,
    loads_checkpoint,
    loads_occb,
    resize_bilinear,
    save_checkpoint,
    save_occb,
    save_split_manifest,
)
from .encoder import ARCHITECTURES, EncoderParams, bind_params, encode, init_encoder, param_count
from .episodes import (
    SPLIT_TAGS,
    ClassIndexedDataset,
    Episode,
    EpisodeConfig,
    make_rng,
    sample_episode,
    sample_meta_batch,
    sample_pair_episode,
    split_by_class,
    synthetic_splits,
    synthetic_tasks,
    take_classes,
)
from .errors import (
    ConfigError,
    ContractError,
    DifferentiationError,
    FsoccError,
    NumericError,
    ParseError,
    SolverError,
)
from .heads import HEADS, EpisodeOutput, classify, compute_center, episode_forward, score_queries
from .metrics import (
    AccuracyProtocolReport,
    AucProtocolReport,
    ClassSummary,
    PairResult,
    accuracy_protocol,
    accuracy_report_csv,
    auc,
    auc_protocol,
    auc_report_csv,
    run_accuracy_protocol,
    run_auc_protocol,
)
from .svdd import (
    DEFAULT_LAMBDA,
    DEFAULT_TOLERANCE,
    DualSolution,
    KernelMatrix,
    build_kernel,
    decide,
    meb_oracle,
    qp_backward,
    solve_dual,
    solve_svdd,
    svdd_alpha,
)
from .train import (
    OptimizerState,
    TrainConfig,
    TrainState,
    adam_step,
    init_optimizer,
    meta_train,
    validate,
    write_train_log,
)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "apply_primitive", "backward", "grad_check",
    "GAMMA_GRID", "NU_GRID", "BaselineGridReport", "OcsvmModel", "PcaModel",
    "baseline_grid_eval", "baseline_report_csv", "baseline_scorer",
    "ocsvm_decision", "ocsvm_fit", "pca_fit_transform", "pca_transform",
    "augment_rotations", "dumps_checkpoint", "dumps_occb", "ingest_idx",
    "load_checkpoint", "load_occb", "load_split_datasets", "load_split_manifest",
    "loads_checkpoint", "loads_occb", "resize_bilinear", "save_checkpoint",
    "save_occb", "save_split_manifest",
    "ARCHITECTURES", "EncoderParams", "bind_params", "encode", "init_encoder",
    "param_count",
    "SPLIT_TAGS", "ClassIndexedDataset", "Episode", "EpisodeConfig", "make_rng",
    "sample_episode", "sample_meta_batch", "sample_pair_episode",
    "split_by_class", "synthetic_splits", "synthetic_tasks", "take_classes",
    "ConfigError", "ContractError", "DifferentiationError", "FsoccError",
    "NumericError", "ParseError", "SolverError",
    "HEADS", "EpisodeOutput", "classify", "compute_center", "episode_forward",
    "score_queries",
    "AccuracyProtocolReport", "AucProtocolReport", "ClassSummary", "PairResult",
    "accuracy_protocol", "accuracy_report_csv", "auc", "auc_protocol",
    "auc_report_csv", "run_accuracy_protocol", "run_auc_protocol",
    "DEFAULT_LAMBDA", "DEFAULT_TOLERANCE", "DualSolution", "KernelMatrix",
    "build_kernel", "decide", "meb_oracle", "qp_backward", "solve_dual",
    "solve_svdd", "svdd_alpha",
    "OptimizerState", "TrainConfig", "TrainState", "adam_step", "init_optimizer",
    "meta_train", "validate", "write_train_log",
    "__version__",
]
