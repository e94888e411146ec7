"""Kernel-regression loss for graph representation learning.

The KR loss rho(Y|X) measures how much of Y is left unexplained by smooth
(RBF-kernel) functions of X. It serves as a mutual-information surrogate for
self-supervised (GIRL) and regularized supervised training of small GNNs.
"""

from .errors import (DegenerateInputError, InvalidArgumentError, KRGNNError, ParseError,
                     SingularSystemError)
from .kernel import (KernelConfig, kr_loss_exact, kr_loss_ridge, median_bandwidth, rbf_gram,
                     spectral_projector)
from .graph import NodeGraph, generate_sbm, load_graph, sample_neighbor, split_masks
from .training import TrainConfig, downstream_eval, girl_train, supervised_train

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError", "InvalidArgumentError", "KRGNNError", "ParseError",
    "SingularSystemError", "KernelConfig", "kr_loss_exact", "kr_loss_ridge",
    "median_bandwidth", "rbf_gram", "spectral_projector", "NodeGraph", "generate_sbm",
    "load_graph", "sample_neighbor", "split_masks", "TrainConfig", "downstream_eval",
    "girl_train", "supervised_train", "__version__",
]
