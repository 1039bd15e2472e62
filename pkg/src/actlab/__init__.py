"""Activation stress-test lab for normalization-free plain conv nets.

A minimal numpy autodiff engine, four activation functions (relu, gelu,
swish, and the learnable per-channel zero-centered swish), BN-free
VGG-style PlainNet models, a CIFAR-100 training harness for a
deliberately bare regime, and diagnostics for layer-wise activation
mean drift. The ``actlab`` command line is the human interface.
"""

from actlab.activations import (
    ActivationKind,
    ZCSwishParams,
    find_centering_anchor,
    gelu,
    relu,
    swish,
    zc_swish,
)
from actlab.config import ExperimentConfig
from actlab.data import Dataset, load_cifar100, subset, write_synthetic_cifar100
from actlab.plainnet import PlainNet, PlainNetConfig, audit, build, count_params
from actlab.probes import drift_experiment, grad_flow, layer_stats
from actlab.tensor import ShapeError, Tape, Tensor, gradcheck
from actlab.trainer import AdamW, RunRecord, evaluate, multi_seed, train

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "AdamW",
    "Dataset",
    "ExperimentConfig",
    "PlainNet",
    "PlainNetConfig",
    "RunRecord",
    "ShapeError",
    "Tape",
    "Tensor",
    "ZCSwishParams",
    "audit",
    "build",
    "count_params",
    "drift_experiment",
    "evaluate",
    "find_centering_anchor",
    "gelu",
    "grad_flow",
    "gradcheck",
    "layer_stats",
    "load_cifar100",
    "multi_seed",
    "relu",
    "subset",
    "swish",
    "train",
    "write_synthetic_cifar100",
    "zc_swish",
    "__version__",
]
