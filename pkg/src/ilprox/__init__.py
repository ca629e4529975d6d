"""Inference-learning and proximal training algorithms for MLPs.

Subpackages follow the pipeline: ``linalg`` (dense primitives), ``nn``
(MLP substrate), ``energy`` (free energy, proximal objective, inference),
``learners`` (per-iteration training steps), ``gn`` (closed-form linear
targets), ``verify``/``checks`` (oracles and verification suites),
``datasets`` (loaders), ``experiments``/``cli`` (batch runner).
"""

from .energy import (
    Clamp,
    GammaConfig,
    PredictionMode,
    kernel_available,
    run_inference,
    run_prox_inference,
)
from .learners import AdamState, AlgorithmKind, TrainConfig, TrainRecord, train_step
from .nn import Activation, LossKind, NetworkParams, feedforward, init_params

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "AdamState",
    "AlgorithmKind",
    "Clamp",
    "GammaConfig",
    "LossKind",
    "NetworkParams",
    "PredictionMode",
    "TrainConfig",
    "TrainRecord",
    "feedforward",
    "init_params",
    "kernel_available",
    "run_inference",
    "run_prox_inference",
    "train_step",
    "__version__",
]
