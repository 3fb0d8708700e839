"""Small dense-array kernel shared by every other module.

Arrays are plain ``numpy.ndarray`` (row-major, float64). Random streams come
from :func:`make_rng`, which wraps numpy's Philox4x64 counter-based generator
so that a seed plus a call sequence fully determines every draw.
"""
from __future__ import annotations

import numpy as np

LOG_FLOOR = 1e-12


class InvalidInputError(ValueError):
    """Raised when an operand violates an operation's precondition."""


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator.

    ``seed`` may be an int or a ``numpy.random.SeedSequence`` (as produced by
    :func:`spawn_seeds`).
    """
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Split one seed into ``n`` independent child seeds."""
    return np.random.SeedSequence(seed).spawn(n)


def softmax(logits, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("softmax input contains non-finite values")
    z = x / temperature
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (grad_p - np.sum(p * grad_p, axis=axis, keepdims=True))


def stable_log(p, floor: float = LOG_FLOOR) -> np.ndarray:
    return np.log(np.maximum(np.asarray(p, dtype=np.float64), floor))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def pairwise_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of ``x`` (B, d) and rows of ``y`` (P, d)."""
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("bpd,bpd->bp", diff, diff))


def argmax_lowest(p: np.ndarray, axis: int = -1) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(p, axis=axis)
