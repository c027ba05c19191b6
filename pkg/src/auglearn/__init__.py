"""auglearn: learned data augmentation for domain generalization.

An augmentation network is trained jointly with a task classifier as a
bilevel problem: the inner loop fits the classifier on augmented
pseudo-source domains, the outer loop updates the augmenter so the
classifier transfers to a held-out pseudo-target domain, with the outer
gradient taken through the inner optimum via an implicit-function
hypergradient and a Neumann-series inverse-Hessian approximation.
"""

from .autodiff import grad, hvp, mixed_vjp
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig, load_run_config, run_config_to_dict
from .data import (
    DomainDataset,
    DomainTransform,
    SyntheticSpec,
    generate,
    load_dataset,
    read_domain_file,
    save_dataset,
    write_domain_file,
)
from .errors import (
    AugLearnError,
    ConfigError,
    ContractViolation,
    IngestionError,
    NumericError,
    SingularMatrixError,
    SplitError,
    TrainingError,
    UndefinedRateError,
)
from .evalattack import (
    AttackConfig,
    EvalReport,
    aggregate,
    attack_curve,
    attack_success_rate,
    evaluate,
    fgsm,
)
from .freq import dct2, dct_matrix, idct2
from .gradcheck import CHECKS, QuadraticBilevel, run_checks
from .hypergrad import (
    HypergradConfig,
    HypergradResult,
    exact_inv_hvp,
    hypergradient,
    neumann_inv_hvp,
    unrolled_hypergradient,
)
from .layers import (
    AugmenterNet,
    ClassifierNet,
    LayerSpec,
    cross_entropy,
    forward,
    init_params,
    parameter_count,
)
from .params import ParamSet
from .trainer import (
    EpisodeSplit,
    MetricRow,
    TrainConfig,
    TrainState,
    erm_step,
    init_state,
    inner_step,
    make_split,
    outer_step,
    predict,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AugLearnError",
    "AugmenterNet",
    "CHECKS",
    "ClassifierNet",
    "ConfigError",
    "ContractViolation",
    "DomainDataset",
    "DomainTransform",
    "EpisodeSplit",
    "EvalReport",
    "HypergradConfig",
    "HypergradResult",
    "IngestionError",
    "LayerSpec",
    "MetricRow",
    "NumericError",
    "ParamSet",
    "QuadraticBilevel",
    "RunConfig",
    "SingularMatrixError",
    "SplitError",
    "SyntheticSpec",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "UndefinedRateError",
    "aggregate",
    "attack_curve",
    "attack_success_rate",
    "cross_entropy",
    "dct2",
    "dct_matrix",
    "erm_step",
    "evaluate",
    "exact_inv_hvp",
    "fgsm",
    "forward",
    "generate",
    "grad",
    "hvp",
    "hypergradient",
    "idct2",
    "init_params",
    "init_state",
    "inner_step",
    "load_dataset",
    "load_run_config",
    "make_split",
    "mixed_vjp",
    "neumann_inv_hvp",
    "outer_step",
    "parameter_count",
    "predict",
    "read_checkpoint",
    "read_domain_file",
    "run_checks",
    "run_config_to_dict",
    "save_dataset",
    "train",
    "unrolled_hypergradient",
    "write_checkpoint",
    "write_domain_file",
    "write_metrics_csv",
]
