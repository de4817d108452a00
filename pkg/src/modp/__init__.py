"""Synthetic categorical microdata from a masked multi-blade predictor.

Each row is regenerated question by question from a model that sees every
answer except the ones it is predicting, then scored on two-way crosstab
fidelity and audited with simple empirical privacy measures.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DataValidationError, FormatError, ModpError, NumericalError,
                     OneHotError, SchemaError)
from .schema import CategoricalSchema, QuestionSpec, infer_schema, parse_directives, read_table
from .dataset import (Crosstab, ResponseMatrix, bootstrap_resample, crosstab, load_matrix,
                      read_matrix, write_matrix)
from .model import (GatingNet, MaskedAffine, MultiBladeModel, blade_diagnostics, load_checkpoint,
                    model_forward, save_checkpoint)
from .training import TrainConfig, TrainResult, dataset_loss, train
from .synthesis import (SynthesisConfig, SynthesisResult, instantiate, randomized_response,
                        remove_structural_zero_rows, synthesize, two_instance_select)
from .metrics import (AggregateAccuracy, MetricConfig, blended_fm, evaluate, logdev_cell,
                      zvalue_cell)
from .privacy import hamming_causal_rank, privacy_report, true_multiplicity
from .testbed import generate_testbed, load_population_spec

__all__ = [
    "AggregateAccuracy", "CategoricalSchema", "ConfigError", "Crosstab", "DataValidationError",
    "FormatError", "GatingNet", "MaskedAffine", "MetricConfig", "ModpError", "MultiBladeModel",
    "NumericalError", "OneHotError", "QuestionSpec", "ResponseMatrix", "SchemaError",
    "SynthesisConfig", "SynthesisResult", "TrainConfig", "TrainResult", "blade_diagnostics",
    "blended_fm", "bootstrap_resample", "crosstab", "dataset_loss", "evaluate", "generate_testbed",
    "hamming_causal_rank", "infer_schema", "instantiate", "load_checkpoint", "load_matrix",
    "load_population_spec", "logdev_cell", "model_forward", "parse_directives", "privacy_report",
    "randomized_response", "read_matrix", "read_table", "remove_structural_zero_rows",
    "save_checkpoint", "synthesize", "train", "true_multiplicity", "two_instance_select",
    "write_matrix", "zvalue_cell",
]
