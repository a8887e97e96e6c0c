"""Multi-scenario ranking models trained with hierarchical contrastive objectives."""

from .autodiff import DiffNode, backward, finite_difference_check
from .data import Dataset, SynthConfig, batch_iter, load_csv, load_dataset, \
    synth_generate, write_csv
from .errors import (HC2Error, ConfigError, ContractError, DataError,
                     DimensionError, GraphError, NumericError)
from .losses import (IndividualTriple, WeightedPair, augment_positive,
                     cross_scenario_negative, generalized_loss, individual_loss,
                     reciprocal_weight)
from .model import (ModelDims, ModelParams, Sample, Schema, init_params,
                    load_model, save_model)
from .rng import RngStream
from .sampling import (BatchView, Candidate, ContrastiveSet, DiffusionSchedule,
                       MemoryBank, MemoryBankEntry, add_diffused_negatives,
                       assign_cluster, assign_clusters, bank_push, build_schedule, diffuse,
                       diffuse_step, diffused_count, kmeans_fit,
                       select_contrastive)
from .training import (Adam, MetricsRow, TrainConfig, TrainResult, TrainState,
                       auc, evaluate, format_metrics, total_loss, train,
                       uniformity, write_metrics)

__version__ = "0.1.0"

__all__ = [
    "DiffNode", "backward", "finite_difference_check",
    "Dataset", "SynthConfig", "batch_iter", "load_csv", "load_dataset",
    "synth_generate", "write_csv",
    "HC2Error", "ConfigError", "ContractError", "DataError",
    "DimensionError", "GraphError", "NumericError",
    "IndividualTriple", "WeightedPair", "augment_positive",
    "cross_scenario_negative", "generalized_loss", "individual_loss",
    "reciprocal_weight",
    "ModelDims", "ModelParams", "Sample", "Schema", "init_params",
    "load_model", "save_model",
    "RngStream",
    "BatchView", "Candidate", "ContrastiveSet", "DiffusionSchedule",
    "MemoryBank", "MemoryBankEntry", "add_diffused_negatives",
    "assign_cluster", "assign_clusters", "bank_push", "build_schedule", "diffuse",
    "diffuse_step", "diffused_count", "kmeans_fit", "select_contrastive",
    "Adam", "MetricsRow", "TrainConfig", "TrainResult", "TrainState",
    "auc", "evaluate", "format_metrics", "total_loss", "train",
    "uniformity", "write_metrics",
    "__version__",
]
