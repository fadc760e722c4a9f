"""Domain generalization with domain-conditioned, low-rank weight generation.

One network is trained on several labeled source domains. Every generated
layer stores a weight tensor with a trailing domain mode (optionally Tucker
factorized); a per-domain descriptor selects concrete weights, and the
bias-only descriptor yields a domain-agnostic model for unseen domains.
"""

from .dataset_io import (
    Domain,
    MultiDomainDataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    reference_spec,
    save_dataset,
    split_train_val,
)
from .domain_param import (
    DomainDescriptor,
    FactoredGenerator,
    FullGenerator,
    SharedWeights,
    agnostic_descriptor,
    encode_domain,
    generate,
    undo_bias_linear,
)
from .errors import (
    ConfigError,
    EmptyBatch,
    EmptyDomain,
    FormatError,
    InvalidDomain,
    InvalidMode,
    InvalidRank,
    LabelSpaceError,
    LowRankDGError,
    NumericError,
    ShapeError,
)
from .estimator import DomainGeneralizationClassifier
from .network import (
    ConcreteNetwork,
    Network,
    TrainConfig,
    TrainReport,
    build_convnet,
    build_mlp,
    evaluate,
    train,
)
from .shift_metrics import accuracy_margin, domain_distribution, domain_shift, kld
from .tensor_core import fold, mode_n_product, mode_n_vec_product, svd, unfold
from .tucker import (
    TuckerFactors,
    hosvd,
    init_from_stack,
    param_count_full,
    param_count_tucker,
    reconstruct,
    select_ranks,
)

__version__ = "0.1.0"

__all__ = [
    "ConcreteNetwork",
    "ConfigError",
    "Domain",
    "DomainDescriptor",
    "DomainGeneralizationClassifier",
    "EmptyBatch",
    "EmptyDomain",
    "FactoredGenerator",
    "FormatError",
    "FullGenerator",
    "InvalidDomain",
    "InvalidMode",
    "InvalidRank",
    "LabelSpaceError",
    "LowRankDGError",
    "MultiDomainDataset",
    "Network",
    "NumericError",
    "ShapeError",
    "SharedWeights",
    "SyntheticSpec",
    "TrainConfig",
    "TrainReport",
    "TuckerFactors",
    "accuracy_margin",
    "agnostic_descriptor",
    "build_convnet",
    "build_mlp",
    "domain_distribution",
    "domain_shift",
    "encode_domain",
    "evaluate",
    "fold",
    "generate",
    "generate_synthetic",
    "hosvd",
    "init_from_stack",
    "kld",
    "load_dataset",
    "mode_n_product",
    "mode_n_vec_product",
    "param_count_full",
    "param_count_tucker",
    "reconstruct",
    "reference_spec",
    "save_dataset",
    "select_ranks",
    "split_train_val",
    "svd",
    "train",
    "undo_bias_linear",
    "unfold",
]
