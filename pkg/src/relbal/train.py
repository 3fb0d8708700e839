"""Adam training loop with per-epoch exponential learning-rate decay."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import head as H
from .data import Dataset, one_hot, refine_batch, smooth_labels
from .losses import LossWeights, total_loss
from .numerics import InvalidInputError, ShapeError, make_rng, spawn_seeds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    base_lr: float = 3e-4
    gamma: float = 0.995
    batch_size: int = 64
    weights: LossWeights = LossWeights()
    smoothing: float = 0.0
    anchors: int = 8
    delta: float = 1.0
    tokens: int = 8
    n_heads: int = 4
    hidden: int = 64
    dropout: float = 0.5
    reduce_dim: Optional[int] = None
    per_group: int = 512
    per_class: int = 500
    clip_norm: Optional[float] = None
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if not self.base_lr > 0:
            raise InvalidInputError("base_lr must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2 (batch normalisation)")
        if self.eval_every < 1:
            raise InvalidInputError("eval_every must be >= 1")

    def head_config(self, num_classes: int, input_dim: int) -> H.HeadConfig:
        return H.HeadConfig(
            num_classes=num_classes, dim=self.reduce_dim or input_dim,
            input_dim=input_dim if self.reduce_dim else None,
            hidden=self.hidden, anchors_per_class=self.anchors, delta=self.delta,
            tokens=self.tokens, n_heads=self.n_heads, dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        w = d.pop("weights")
        d.update(lambda_cls=w["cls"], lambda_a=w["anchor"], lambda_c=w["center"])
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise InvalidInputError("epoch must be >= 0")
    return cfg.base_lr * cfg.gamma ** epoch


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})

    def arrays(self) -> dict:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.step"] = np.array([float(self.step)])
        return out


def adam_step(params: dict, grads: dict, opt: OptimizerState, lr: float) -> tuple[dict, OptimizerState]:
    """One bias-corrected Adam update; returns new arrays and state."""
    if params.keys() != grads.keys():
        raise ShapeError("parameter and gradient names differ")
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = b1 * opt.m[name] + (1 - b1) * g
        v = b2 * opt.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p[name] = p - lr * mhat / (np.sqrt(vhat) + opt.eps)
        new_m[name], new_v[name] = m, v
    return new_p, OptimizerState(new_m, new_v, t, b1, b2, opt.eps)


def _clip(grads: dict, max_norm: float) -> dict:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def predict_labels(params: H.HeadParameters, E: np.ndarray, chunk: int = 1024) -> np.ndarray:
    preds = [H.predict_batch(E[i:i + chunk], params)["pred"] for i in range(0, E.shape[0], chunk)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


@dataclass
class TrainResult:
    params: H.HeadParameters
    history: list = field(default_factory=list)
    optimizer: Optional[OptimizerState] = None


def train(ds_train: Dataset, ds_eval: Optional[Dataset], cfg: TrainConfig,
          log_path=None, checkpoint_path=None, init: Optional[H.HeadParameters] = None) -> TrainResult:
    """Train a head from scratch (or from ``init``); deterministic given ``cfg.seed``.

    Each epoch draws a fresh balanced set with :func:`refine_batch`, walks it
    in minibatches and takes one Adam step per batch at ``lr_at(epoch)``.
    Batches smaller than two samples are skipped. History records hold the
    batch-averaged losses and, every ``eval_every`` epochs, eval accuracy.
    """
    if ds_eval is not None and (ds_eval.dim != ds_train.dim or ds_eval.num_classes != ds_train.num_classes):
        raise ShapeError("train and eval datasets disagree on dimension or class count")
    init_seed, sample_seed, drop_seed = spawn_seeds(cfg.seed, 3)
    config = cfg.head_config(ds_train.num_classes, ds_train.dim)
    params = init.copy() if init is not None else H.init_params(config, make_rng(init_seed))
    sampler = make_rng(sample_seed)
    dropout_rng = make_rng(drop_seed)
    opt = OptimizerState.zeros_like(params.params)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            epoch_ds = refine_batch(ds_train, cfg.per_group, cfg.per_class, sampler)
            targets = smooth_labels(one_hot(epoch_ds.labels, ds_train.num_classes), cfg.smoothing)
            sums = np.zeros(4)
            batches = 0
            for start in range(0, len(epoch_ds), cfg.batch_size):
                stop = min(start + cfg.batch_size, len(epoch_ds))
                if stop - start < 2:
                    continue
                rep = total_loss(epoch_ds.embeddings[start:stop], epoch_ds.labels[start:stop], params,
                                 cfg.weights, targets=targets[start:stop], mode="train", rng=dropout_rng)
                H.update_running_stats(params, rep.batch_stats)
                grads = _clip(rep.grads, cfg.clip_norm) if cfg.clip_norm else rep.grads
                params.params, opt = adam_step(params.params, grads, opt, lr)
                sums += (rep.cls, rep.anchor, rep.center, rep.total)
                batches += 1
            means = sums / max(batches, 1)
            record = {
                "epoch": epoch,
                "lr": lr,
                "loss_cls": float(means[0]),
                "loss_anchor": float(means[1]),
                "loss_center": float(means[2]),
                "loss_total": float(means[3]),
                "eval_accuracy": None,
            }
            last = epoch == cfg.epochs - 1
            if (epoch + 1) % cfg.eval_every == 0 or last:
                if ds_eval is not None:
                    preds = predict_labels(params, ds_eval.embeddings)
                    record["eval_accuracy"] = float(np.mean(preds == ds_eval.labels))
                if checkpoint_path:
                    H.save_checkpoint(checkpoint_path, params, opt.arrays())
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            log.debug("epoch %d lr %.3g loss %.4f acc %s", epoch, lr, record["loss_total"], record["eval_accuracy"])
        if checkpoint_path and cfg.epochs == 0:
            H.save_checkpoint(checkpoint_path, params, opt.arrays())
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params, history, opt)


# --- gradient audit ------------------------------------------------------------

@dataclass
class AuditReport:
    max_rel_error: float
    worst_index: int
    worst_name: str
    flagged: list
    tolerance: float
    passed: bool
    n_coords: int


def finite_difference_audit(params: H.HeadParameters, E, labels, weights: LossWeights = LossWeights(),
                            step: float = 1e-5, tolerance: float = 1e-4, targets=None, seed: int = 0,
                            floor: Optional[float] = None,
                            tamper: Optional[Callable[[dict], dict]] = None) -> AuditReport:
    """Compare analytic gradients of the total loss against central differences.

    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``; the floor keeps
    coordinates whose true gradient is at the round-off level of the
    difference quotient from dominating. It defaults to
    ``1e-11 * max(1, S) / step`` with ``S`` the weighted sum of the absolute
    loss terms, since central-difference round-off grows like ``S / step``.
    Dropout masks are regenerated from
    ``seed`` for every evaluation so the objective is a fixed function.
    ``tamper`` may rewrite the analytic gradients (fault injection).
    """

    def loss_and_grads(p):
        return total_loss(E, labels, p, weights, targets=targets, mode="train", rng=make_rng(seed))

    base = loss_and_grads(params)
    if floor is None:
        # round-off in the difference quotient is about eps * |terms| / step
        scale = weights.cls * abs(base.cls) + weights.anchor * abs(base.anchor) + weights.center * abs(base.center)
        floor = 1e-11 * max(1.0, scale) / step
    grads = base.grads
    if tamper is not None:
        grads = tamper({k: v.copy() for k, v in grads.items()})
    g = H.flatten(grads)
    x = params.flat()
    names = [name for name, arr in params.params.items() for _ in range(arr.size)]
    fd = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + step
        up = loss_and_grads(params.with_flat(x)).total
        x[i] = old - step
        down = loss_and_grads(params.with_flat(x)).total
        x[i] = old
        fd[i] = (up - down) / (2 * step)
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    flagged = sorted({names[i] for i in np.flatnonzero(rel >= tolerance)})
    max_rel = float(rel.max()) if rel.size else 0.0
    return AuditReport(max_rel, worst, names[worst] if names else "", flagged, tolerance,
                       max_rel < tolerance, int(x.size))
