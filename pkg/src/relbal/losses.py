"""Training objective: class-distribution NLL, anchor margin, center loss.

``total_loss`` runs the head forward in train mode and returns the weighted
sum together with its exact gradient for every trainable array. Gradients
flow through the confidence weights and the similarity softmax; the center
loss min is differentiated through the selected (lowest-index) anchor.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import head as H
from .data import one_hot
from .numerics import LOG_FLOOR, InvalidInputError, ShapeError, stable_log


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    anchor: float = 0.1
    center: float = 0.1

    def __post_init__(self):
        ws = (self.cls, self.anchor, self.center)
        if min(ws) < 0 or max(ws) <= 0:
            raise InvalidInputError(f"loss weights must be nonnegative with one positive, got {ws}")


@dataclass
class LossReport:
    cls: float
    anchor: float
    center: float
    total: float
    grads: dict = field(repr=False)
    batch_stats: dict = field(default_factory=dict, repr=False)
    anchor_degenerate: bool = False

    @property
    def gradient(self) -> np.ndarray:
        return H.flatten(self.grads)


def class_distribution_loss(L, Y) -> float:
    """Batch mean of ``-sum_j y_j log L_j`` (log floored at 1e-12)."""
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if L.shape != Y.shape:
        raise ShapeError(f"prediction shape {L.shape} != target shape {Y.shape}")
    return float(-(Y * stable_log(L)).sum() / L.shape[0])


def anchor_loss(anchors) -> float:
    """Negative mean squared distance over ordered pairs of distinct anchors.

    With ``P`` anchors: ``-1/(P(P-1)) * sum_{p != q} |a_p - a_q|^2``. Fewer than
    two anchors gives 0 and a warning.
    """
    a = np.asarray(anchors, dtype=np.float64)
    a = a.reshape(-1, a.shape[-1]) if a.size else a.reshape(0, 1)
    n = a.shape[0]
    if n < 2:
        warnings.warn("anchor loss needs at least two anchors; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    centred = a - a.mean(axis=0)
    # sum over ordered pairs = 2 P sum |a_p - mean|^2
    return float(-2.0 * n * np.sum(centred * centred) / (n * (n - 1)))


def anchor_loss_grad(anchors) -> np.ndarray:
    a = np.asarray(anchors, dtype=np.float64)
    flat = a.reshape(-1, a.shape[-1])
    n = flat.shape[0]
    if n < 2:
        return np.zeros_like(a)
    return (-4.0 / (n - 1) * (flat - flat.mean(axis=0))).reshape(a.shape)


def _nearest_same_class(z, labels, anchors):
    own = anchors[labels]  # (B, K, d)
    diff = z[:, None, :] - own
    sq = (diff * diff).sum(axis=-1)
    k = np.argmin(sq, axis=1)
    rows = np.arange(z.shape[0])
    return sq[rows, k], diff[rows, k], k


def center_loss(E, labels, anchors) -> float:
    """Batch mean of the squared distance to the nearest anchor of the sample's class."""
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.ndim != 3 or anchors.shape[1] == 0:
        raise H.DisabledFeatureError("center loss needs at least one anchor per class")
    z = np.atleast_2d(np.asarray(E, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != z.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {z.shape[0]} embeddings")
    sq, _, _ = _nearest_same_class(z, labels, anchors)
    return float(sq.mean())


def total_loss(E, labels, params: H.HeadParameters, weights: LossWeights = LossWeights(),
               targets=None, mode: str = "train", rng=None) -> LossReport:
    """Weighted objective and its gradient for one batch.

    ``targets`` defaults to one-hot ``labels``; pass smoothed targets to train
    against label distributions. The center loss always uses ``labels``.
    """
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if E.shape[0] == 0:
        raise InvalidInputError("empty batch")
    c = params.config
    Y = one_hot(labels, c.num_classes) if targets is None else np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if Y.shape != (E.shape[0], c.num_classes):
        raise ShapeError(f"targets have shape {Y.shape}, expected {(E.shape[0], c.num_classes)}")

    cache = H.forward(E, params, train=(mode == "train"), rng=rng)
    b = E.shape[0]
    final = cache["final"]
    l_cls = class_distribution_loss(final, Y)
    g_final = -weights.cls * Y / np.maximum(final, LOG_FLOOR) * (final > LOG_FLOOR) / b

    anchors = params.params["anchors"]
    g_z = None
    l_anchor = l_center = 0.0
    g_anchor_extra = np.zeros_like(anchors)
    degenerate = False
    if c.anchors_per_class > 0:
        l_anchor = anchor_loss(anchors) if anchors.shape[0] * anchors.shape[1] >= 2 else 0.0
        degenerate = anchors.shape[0] * anchors.shape[1] < 2
        g_anchor_extra += weights.anchor * anchor_loss_grad(anchors)
        z = cache["z"]
        kk = c.anchors_per_class
        own = cache["dist"].reshape(b, c.num_classes, kk)[np.arange(b), labels]
        k = np.argmin(own, axis=1)
        diff = z - anchors[labels, k]
        sq = (diff * diff).sum(axis=1)
        l_center = float(sq.mean())
        coef = 2.0 * weights.center / b
        g_z = coef * diff
        np.add.at(g_anchor_extra, (labels, k), -coef * diff)

    grads = H.backward(cache, params, g_final, g_z)
    grads["anchors"] += g_anchor_extra
    total = weights.cls * l_cls + weights.anchor * l_anchor + weights.center * l_center
    stats = H.batch_stats(cache) if mode == "train" else {}
    return LossReport(l_cls, l_anchor, l_center, total, grads, stats, degenerate)
