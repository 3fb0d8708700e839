"""Reliability-balancing classification head over precomputed embeddings.

The head blends a primary MLP distribution with two corrections, one from
learnable class anchors and one from multi-head attention over learned
tokens, each weighted by entropy-based confidence. Training, metrics,
synthetic benchmarks and a command-line tool are built on numpy alone.
"""
from .head import HeadConfig, HeadParameters, forward, init_params, load_checkpoint, predict, save_checkpoint
from .losses import LossWeights, total_loss
from .metrics import evaluate
from .numerics import InvalidInputError, ShapeError, make_rng
from .train import TrainConfig, finite_difference_audit, train

__version__ = "0.1.0"

__all__ = [
    "HeadConfig",
    "HeadParameters",
    "InvalidInputError",
    "LossWeights",
    "ShapeError",
    "TrainConfig",
    "evaluate",
    "finite_difference_audit",
    "forward",
    "init_params",
    "load_checkpoint",
    "make_rng",
    "predict",
    "save_checkpoint",
    "total_loss",
    "train",
]
