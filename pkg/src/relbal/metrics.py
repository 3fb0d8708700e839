"""Accuracy, macro precision/recall/F1, cluster validity and stability statistics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import head as H
from .numerics import InvalidInputError, ShapeError


def accuracy(preds, truth) -> float:
    preds = np.asarray(preds).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if preds.shape != truth.shape:
        raise ShapeError(f"{preds.size} predictions for {truth.size} labels")
    if preds.size == 0:
        raise InvalidInputError("accuracy of an empty prediction set")
    return float(np.mean(preds == truth))


def confusion_matrix(preds, truth, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def macro_prf(confusion) -> tuple[float, float, float]:
    """Unweighted class means of precision, recall and per-class F1 (0/0 counts as 0)."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.size == 0:
        raise InvalidInputError("empty confusion matrix")
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(precision.mean()), float(recall.mean()), float(f1.mean())


def cluster_scores(embeddings, labels) -> tuple[float, float]:
    """Davies-Bouldin (lower is better) and Calinski-Harabasz (higher is better).

    DB averages, over clusters, the worst ratio ``(s_i + s_j) / |c_i - c_j|``
    where ``s_i`` is the mean distance of cluster members to their centroid.
    CH is ``(B / (k - 1)) / (W / (n - k))`` with between- and within-cluster
    dispersions ``B`` and ``W``.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    classes = np.unique(y)
    k, n = classes.size, x.shape[0]
    if k < 2:
        raise InvalidInputError("cluster scores need at least two classes")
    centroids = np.stack([x[y == c].mean(axis=0) for c in classes])
    spread = np.array([np.linalg.norm(x[y == c] - centroids[i], axis=1).mean() for i, c in enumerate(classes)])
    gap = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=-1)
    # coincident centroids contribute nothing rather than dividing by zero
    gap[gap == 0] = np.inf
    ratio = (spread[:, None] + spread[None, :]) / gap
    np.fill_diagonal(ratio, 0.0)
    db = float(np.mean(ratio.max(axis=1)))

    overall = x.mean(axis=0)
    counts = np.array([np.sum(y == c) for c in classes])
    between = float(np.sum(counts * np.sum((centroids - overall) ** 2, axis=1)))
    within = float(sum(np.sum((x[y == c] - centroids[i]) ** 2) for i, c in enumerate(classes)))
    if n == k:
        ch = float("inf") if between > 0 else 0.0
    elif within == 0:
        ch = float("inf") if between > 0 else 1.0
    else:
        ch = (between / (k - 1)) / (within / (n - k))
    return db, float(ch)


@dataclass
class StabilityStats:
    primary_std: float
    corrected_std: float
    primary_confidence: float
    corrected_confidence: float


def stability_stats(primary, final) -> StabilityStats:
    """Spread of every probability entry of the primary vs the final distributions.

    ``primary`` and ``final`` are (n, N) arrays (or sequences of vectors);
    :func:`stability_from_records` accepts prediction records.
    """
    primary = np.atleast_2d(np.asarray(primary, dtype=np.float64))
    final = np.atleast_2d(np.asarray(final, dtype=np.float64))
    if primary.size == 0:
        raise InvalidInputError("no distributions given")
    return StabilityStats(
        float(primary.std()), float(final.std()),
        float(H.confidence(primary).mean()), float(H.confidence(final).mean()),
    )


def stability_from_records(records: Sequence[H.PredictionRecord]) -> StabilityStats:
    if not records:
        raise InvalidInputError("no prediction records given")
    return stability_stats([r.primary for r in records], [r.final for r in records])


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list
    davies_bouldin: Optional[float]
    calinski_harabasz: Optional[float]
    primary_std: float
    corrected_std: float
    primary_confidence: float
    corrected_confidence: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def hidden_features(params: H.HeadParameters, E: np.ndarray) -> np.ndarray:
    """Eval-mode output of the last hidden block (the input of the logit layer)."""
    return H.forward(E, params, train=False)["hidden"]


def evaluate(params: H.HeadParameters, E, labels, with_clusters: bool = True, chunk: int = 2048):
    """Run the head over a labelled set; returns ``(MetricsReport, batch outputs)``."""
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    parts = [H.predict_batch(E[i:i + chunk], params) for i in range(0, E.shape[0], chunk)]
    out = {}
    for key in ("l", "t_a", "t", "final", "c_l", "c_g", "c_a", "c_t", "pred", "hidden"):
        out[key] = np.concatenate([p[key] for p in parts])
    out["t_g"] = None if parts[0]["t_g"] is None else np.concatenate([p["t_g"] for p in parts])
    n = params.config.num_classes
    cm = confusion_matrix(out["pred"], labels, n)
    prec, rec, f1 = macro_prf(cm)
    db = ch = None
    if with_clusters and np.unique(labels).size >= 2:
        db, ch = cluster_scores(out["hidden"], labels)
    st = stability_stats(out["l"], out["final"])
    report = MetricsReport(
        accuracy(out["pred"], labels), prec, rec, f1, cm.tolist(), db, ch,
        st.primary_std, st.corrected_std, st.primary_confidence, st.corrected_confidence,
    )
    return report, out
