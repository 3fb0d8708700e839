"""Reliability-balancing classification head.

The head maps an embedding to three class distributions and fuses them:

* ``l``   softmax of an MLP (primary distribution),
* ``t_g`` softmax-normalised proximity to ``K`` learnable anchors per class,
* ``t_a`` softmax of a multi-head self-attention map over the embedding,

then ``t`` is the confidence-weighted mix of ``t_g`` and ``t_a`` and ``L_final``
the confidence-weighted mix of ``l`` and ``t``. Confidence is one minus the
entropy normalised by ``log N``.

Everything is batched over a leading axis. :func:`forward` keeps the
intermediates needed by :func:`backward`, which the loss module uses to get
exact parameter gradients.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .numerics import (
    InvalidInputError,
    ShapeError,
    make_rng,
    softmax,
    softmax_backward,
)

FUSE_EPS = 1e-12
CHECKPOINT_MAGIC = b"RBHEAD\x00\x01"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class DisabledFeatureError(RuntimeError):
    """Anchor operations were requested with ``K = 0``."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int = 8
    dim: int = 128
    input_dim: Optional[int] = None  # None: no reduction layer; otherwise a linear map input_dim -> dim
    hidden: int = 64
    anchors_per_class: int = 8
    delta: float = 1.0
    tokens: int = 8
    n_heads: int = 4
    dropout: float = 0.5
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.num_classes < 1 or self.dim < 1 or self.hidden < 1:
            raise ConfigError("num_classes, dim and hidden must be positive")
        if self.anchors_per_class < 0:
            raise ConfigError("anchors_per_class must be >= 0")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.tokens < 1 or self.dim % self.tokens:
            raise ConfigError(f"dim {self.dim} is not divisible by tokens {self.tokens}")
        if self.n_heads < 1:
            raise ConfigError("n_heads must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def token_dim(self) -> int:
        return self.dim // self.tokens

    @property
    def head_dim(self) -> int:
        return max(1, self.token_dim // self.n_heads)

    @property
    def reduces(self) -> bool:
        return self.input_dim is not None

    @property
    def in_dim(self) -> int:
        return self.input_dim if self.input_dim is not None else self.dim


@dataclass
class HeadParameters:
    """Trainable arrays (``params``) plus batch-norm running statistics (``buffers``).

    Both dicts keep declaration order, which fixes the flat gradient layout and
    the checkpoint layout.
    """

    config: HeadConfig
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    @property
    def anchor_labels(self) -> np.ndarray:
        """Fixed one-hot label distributions of the anchors, shape (N, K, N)."""
        n, k = self.config.num_classes, self.config.anchors_per_class
        return np.broadcast_to(np.eye(n)[:, None, :], (n, k, n)).copy()

    def copy(self) -> "HeadParameters":
        return HeadParameters(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def flat(self) -> np.ndarray:
        return flatten(self.params)

    def with_flat(self, vec: np.ndarray) -> "HeadParameters":
        out = self.copy()
        out.params = unflatten(vec, self.params)
        return out


def flatten(arrays: dict) -> np.ndarray:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(v) for v in arrays.values()])


def unflatten(vec: np.ndarray, like: dict) -> dict:
    out, pos = {}, 0
    for name, ref in like.items():
        out[name] = np.asarray(vec[pos:pos + ref.size], dtype=np.float64).reshape(ref.shape).copy()
        pos += ref.size
    if pos != len(vec):
        raise ShapeError(f"flat vector has {len(vec)} entries, expected {pos}")
    return out


def init_params(config: HeadConfig, rng: np.random.Generator) -> HeadParameters:
    """Normal(0, 1/fan_in) weights, zero biases, anchors Normal(0, 1/d)."""

    def linear(fan_in, *shape):
        return rng.standard_normal((fan_in,) + shape) / np.sqrt(fan_in)

    c = config
    p: dict = {}
    if c.reduces:
        p["reduce.w"] = linear(c.in_dim, c.dim)
        p["reduce.b"] = np.zeros(c.dim)
    p["mlp.w1"] = linear(c.dim, c.hidden)
    p["mlp.b1"] = np.zeros(c.hidden)
    p["bn1.gamma"] = np.ones(c.hidden)
    p["bn1.beta"] = np.zeros(c.hidden)
    p["mlp.w2"] = linear(c.hidden, c.hidden)
    p["mlp.b2"] = np.zeros(c.hidden)
    p["bn2.gamma"] = np.ones(c.hidden)
    p["bn2.beta"] = np.zeros(c.hidden)
    p["mlp.w3"] = linear(c.hidden, c.num_classes)
    p["mlp.b3"] = np.zeros(c.num_classes)
    p["anchors"] = rng.standard_normal((c.num_classes, c.anchors_per_class, c.dim)) / np.sqrt(c.dim)
    hp = c.head_dim
    p["attn.wq"] = rng.standard_normal((c.n_heads, c.token_dim, hp)) / np.sqrt(c.token_dim)
    p["attn.wk"] = rng.standard_normal((c.n_heads, c.token_dim, hp)) / np.sqrt(c.token_dim)
    p["attn.wv"] = rng.standard_normal((c.n_heads, c.token_dim, hp)) / np.sqrt(c.token_dim)
    p["attn.wout"] = linear(c.n_heads * hp, c.num_classes)
    buffers = {
        "bn1.running_mean": np.zeros(c.hidden),
        "bn1.running_var": np.ones(c.hidden),
        "bn2.running_mean": np.zeros(c.hidden),
        "bn2.running_var": np.ones(c.hidden),
    }
    return HeadParameters(config, p, buffers)


# --- confidence --------------------------------------------------------------

def confidence(p) -> np.ndarray:
    """``1 - H(p) / log N`` along the last axis, with ``0 log 0 = 0``.

    Uniform gives 0, one-hot gives 1. Returns a scalar array for a single
    distribution.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[-1]
    if n < 2:
        return np.ones(p.shape[:-1])
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    c = 1.0 + plogp.sum(axis=-1) / np.log(n)
    return np.clip(c, 0.0, 1.0)


def confidence_grad(p: np.ndarray) -> np.ndarray:
    n = p.shape[-1]
    if n < 2:
        return np.zeros_like(p)
    return (np.log(np.maximum(p, 1e-300)) + 1.0) / np.log(n)


def _weighted_pair(u, v):
    cu, cv = confidence(u), confidence(v)
    w = cu + cv
    ok = w >= FUSE_EPS
    safe = np.where(ok, w, 1.0)[..., None]
    mixed = (cu[..., None] * u + cv[..., None] * v) / safe
    out = np.where(ok[..., None], mixed, 0.5 * (u + v))
    return out, cu, cv


def _weighted_pair_backward(u, v, out, cu, cv, g_out):
    w = cu + cv
    ok = (w >= FUSE_EPS)[..., None]
    safe = np.where(ok[..., 0], w, 1.0)[..., None]
    g_cu = np.sum(g_out * (u - out), axis=-1, keepdims=True) / safe
    g_cv = np.sum(g_out * (v - out), axis=-1, keepdims=True) / safe
    g_u = g_out * cu[..., None] / safe + g_cu * confidence_grad(u)
    g_v = g_out * cv[..., None] / safe + g_cv * confidence_grad(v)
    g_u = np.where(ok, g_u, 0.5 * g_out)
    g_v = np.where(ok, g_v, 0.5 * g_out)
    return g_u, g_v


def fuse_corrections(t_g, t_a):
    """Mix the anchor and attentive corrections by their confidences.

    Returns ``(t, c_g, c_a)``; falls back to the plain average when both
    confidences are (numerically) zero.
    """
    return _weighted_pair(np.asarray(t_g, float), np.asarray(t_a, float))


def final_distribution(l, t):
    """Mix the primary distribution with the fused correction; returns ``(L_final, c_l, c_t)``."""
    return _weighted_pair(np.asarray(l, float), np.asarray(t, float))


# --- components --------------------------------------------------------------

def _as_batch(e, params: HeadParameters):
    e = np.asarray(e, dtype=np.float64)
    single = e.ndim == 1
    e = np.atleast_2d(e)
    if e.shape[1] != params.config.in_dim:
        raise ShapeError(f"embedding has dimension {e.shape[1]}, head expects {params.config.in_dim}")
    return e, single


def reduce(e: np.ndarray, params: HeadParameters) -> np.ndarray:
    if params.config.reduces:
        return e @ params.params["reduce.w"] + params.params["reduce.b"]
    return e


def _mlp(z, params: HeadParameters, train: bool, rng, cache=None):
    c, p, buf = params.config, params.params, params.buffers
    h = z
    keep = 1.0 - c.dropout
    for i in (1, 2):
        a = h @ p[f"mlp.w{i}"] + p[f"mlp.b{i}"]
        r = np.maximum(a, 0.0)
        if train and c.dropout > 0:
            mask = (rng.random(r.shape) < keep) / keep
            r = r * mask
        else:
            mask = None
        if train:
            mu = r.mean(axis=0)
            var = r.var(axis=0)
        else:
            mu = buf[f"bn{i}.running_mean"]
            var = buf[f"bn{i}.running_var"]
        inv = 1.0 / np.sqrt(var + c.bn_eps)
        xhat = (r - mu) * inv
        out = p[f"bn{i}.gamma"] * xhat + p[f"bn{i}.beta"]
        if cache is not None:
            cache[f"layer{i}"] = dict(inp=h, pre=a, mask=mask, xhat=xhat, inv=inv, mu=mu, var=var, n=r.shape[0])
        h = out
    logits = h @ p["mlp.w3"] + p["mlp.b3"]
    if cache is not None:
        cache["hidden"] = h
    return logits, h


def primary_distribution(e, params: HeadParameters, mode: str = "eval", rng=None) -> np.ndarray:
    """``softmax(mlp(reduce(e)))``; dropout and batch statistics only in ``train`` mode."""
    e, single = _as_batch(e, params)
    train = _check_mode(mode, rng, params)
    logits, _ = _mlp(reduce(e, params), params, train, rng)
    l = softmax(logits)
    return l[0] if single else l


def _check_mode(mode, rng, params):
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None and params.config.dropout > 0:
        raise InvalidInputError("train mode needs an rng for dropout masks")
    return mode == "train"


def _anchor_distances(z, anchors):
    flat = anchors.reshape(-1, anchors.shape[-1])
    sq = (z * z).sum(axis=1)[:, None] - 2.0 * z @ flat.T + (flat * flat).sum(axis=1)[None, :]
    return np.sqrt(np.maximum(sq, 0.0))


def _anchor_softmax(d, c: HeadConfig):
    """Softmax of ``-d / delta`` over all anchors, plus the per-class sums ``t_g``.

    Sums run over sorted values within each class, then over classes in order,
    so ``t_g`` is bit-for-bit invariant under permuting a class's anchors.
    """
    x = -d / c.delta
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("anchor distances must be finite")
    ex = np.exp(x - x.max(axis=-1, keepdims=True)).reshape(-1, c.num_classes, c.anchors_per_class)
    per_class = np.sort(ex, axis=-1).sum(axis=-1)
    total = per_class.sum(axis=-1)
    return ex / total[:, None, None], per_class / total[:, None]


def anchor_similarities(e, params: HeadParameters) -> np.ndarray:
    """Softmax of ``-distance / delta`` over all ``N * K`` anchors; shape (N, K) per embedding."""
    c = params.config
    if c.anchors_per_class == 0:
        raise DisabledFeatureError("anchor correction is disabled (K = 0)")
    e, single = _as_batch(e, params)
    z = reduce(e, params)
    s, _ = _anchor_softmax(_anchor_distances(z, params.params["anchors"]), c)
    return s[0] if single else s


def anchor_correction(e, params: HeadParameters) -> np.ndarray:
    c = params.config
    if c.anchors_per_class == 0:
        raise DisabledFeatureError("anchor correction is disabled (K = 0)")
    e, single = _as_batch(e, params)
    # anchor label distributions are one-hots, so sum_ij s_ij m_ij = per-class sums
    _, t_g = _anchor_softmax(_anchor_distances(reduce(e, params), params.params["anchors"]), c)
    return t_g[0] if single else t_g


def _qkv_weight(p, c):
    # (h, dt, 3p) -> (dt, h * 3p) so one matmul projects every head at once
    w = np.concatenate([p["attn.wq"], p["attn.wk"], p["attn.wv"]], axis=-1)
    return w.transpose(1, 0, 2).reshape(c.token_dim, -1)


def _attention(z, params: HeadParameters, cache=None):
    c, p = params.config, params.params
    b, hp = z.shape[0], c.head_dim
    x = z.reshape(b * c.tokens, c.token_dim)
    qkv = (x @ _qkv_weight(p, c)).reshape(b, c.tokens, c.n_heads, 3 * hp).transpose(0, 2, 1, 3)
    q, k, v = qkv[..., :hp], qkv[..., hp:2 * hp], qkv[..., 2 * hp:]
    scale = 1.0 / np.sqrt(hp)
    scores = (q @ k.swapaxes(-1, -2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    att = np.exp(scores)
    att /= att.sum(axis=-1, keepdims=True)
    # mean over query tokens of att @ v
    pooled = (att.mean(axis=2)[:, :, None, :] @ v)[:, :, 0, :].reshape(b, -1)
    logits = pooled @ p["attn.wout"]
    if cache is not None:
        cache["attn"] = dict(x=x, q=q, k=k, v=v, att=att, pooled=pooled, scale=scale)
    return logits


def attention_pool(e, params: HeadParameters) -> np.ndarray:
    """Concatenated, token-averaged head outputs before the output map."""
    e, single = _as_batch(e, params)
    cache: dict = {}
    _attention(reduce(e, params), params, cache)
    pooled = cache["attn"]["pooled"]
    return pooled[0] if single else pooled


def attentive_correction(e, params: HeadParameters) -> np.ndarray:
    """Self-attention over ``T`` tokens of the embedding, mapped to class probabilities."""
    e, single = _as_batch(e, params)
    t_a = softmax(_attention(reduce(e, params), params))
    return t_a[0] if single else t_a


# --- full pass ---------------------------------------------------------------

@dataclass
class PredictionRecord:
    primary: np.ndarray
    anchor_term: np.ndarray
    attentive_term: np.ndarray
    fused_correction: np.ndarray
    final: np.ndarray
    c_l: float
    c_g: float
    c_a: float
    c_t: float
    label: int

    def to_json(self) -> dict:
        return {
            "primary": self.primary.tolist(),
            "anchor_term": self.anchor_term.tolist(),
            "attentive_term": self.attentive_term.tolist(),
            "fused_correction": self.fused_correction.tolist(),
            "final": self.final.tolist(),
            "c_l": self.c_l,
            "c_g": self.c_g,
            "c_a": self.c_a,
            "c_t": self.c_t,
            "label": self.label,
        }


def forward(e, params: HeadParameters, train: bool = False, rng=None) -> dict:
    """Batched pass over ``e`` (B, in_dim); returns every intermediate."""
    c, p = params.config, params.params
    e, _ = _as_batch(e, params)
    if train and rng is None and c.dropout > 0:
        raise InvalidInputError("train mode needs an rng for dropout masks")
    cache: dict = {"e": e, "train": train}
    z = reduce(e, params)
    cache["z"] = z
    logits, _ = _mlp(z, params, train, rng, cache)
    l = softmax(logits)
    t_a = softmax(_attention(z, params, cache))
    if c.anchors_per_class > 0:
        d = _anchor_distances(z, p["anchors"])
        s, t_g = _anchor_softmax(d, c)
        s = s.reshape(d.shape)
        t, c_g, c_a = fuse_corrections(t_g, t_a)
        cache.update(dist=d, sim=s)
    else:
        t_g = None
        t = t_a
        c_g = np.zeros(e.shape[0])
        c_a = confidence(t_a)
    final, c_l, c_t = final_distribution(l, t)
    cache.update(l=l, t_g=t_g, t_a=t_a, t=t, final=final, c_l=c_l, c_g=c_g, c_a=c_a, c_t=c_t)
    return cache


def backward(cache: dict, params: HeadParameters, g_final: np.ndarray, g_z: Optional[np.ndarray] = None) -> dict:
    """Gradients of ``sum(g_final * L_final) + sum(g_z * z)`` for every trainable array."""
    c, p = params.config, params.params
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    z = cache["z"]
    gz = np.zeros_like(z) if g_z is None else g_z.copy()

    g_l, g_t = _weighted_pair_backward(
        cache["l"], cache["t"], cache["final"], cache["c_l"], cache["c_t"], g_final)
    if c.anchors_per_class > 0:
        g_tg, g_ta = _weighted_pair_backward(
            cache["t_g"], cache["t_a"], cache["t"], cache["c_g"], cache["c_a"], g_t)
        # t_g[i] = sum_j s_ij
        g_s = np.repeat(g_tg, c.anchors_per_class, axis=1)
        g_x = softmax_backward(cache["sim"], g_s)
        g_d = -g_x / c.delta
        d = cache["dist"]
        w = g_d / np.maximum(d, 1e-300) * (d > 0)
        flat = p["anchors"].reshape(-1, c.dim)
        gz += z * w.sum(axis=1, keepdims=True) - w @ flat
        g_flat = flat * w.sum(axis=0)[:, None] - w.T @ z
        grads["anchors"] += g_flat.reshape(p["anchors"].shape)
    else:
        g_ta = g_t

    # attentive branch
    a = cache["attn"]
    b, hp = z.shape[0], c.head_dim
    g_logit_a = softmax_backward(cache["t_a"], g_ta)
    grads["attn.wout"] += a["pooled"].T @ g_logit_a
    g_pooled = (g_logit_a @ p["attn.wout"].T).reshape(b, c.n_heads, 1, hp) / c.tokens
    att = a["att"]
    # every query row receives the same upstream gradient g_pooled
    g_att = (g_pooled @ a["v"].swapaxes(-1, -2))  # (b, h, 1, T), broadcast over queries
    g_v = att.sum(axis=2)[..., None] * g_pooled  # (b, h, T, p)
    g_scores = att * (g_att - np.sum(att * g_att, axis=-1, keepdims=True)) * a["scale"]
    g_q = g_scores @ a["k"]
    g_k = g_scores.swapaxes(-1, -2) @ a["q"]
    g_qkv = np.concatenate([g_q, g_k, g_v], axis=-1).transpose(0, 2, 1, 3).reshape(b * c.tokens, -1)
    g_w = (a["x"].T @ g_qkv).reshape(c.token_dim, c.n_heads, 3 * hp).transpose(1, 0, 2)
    grads["attn.wq"] += g_w[..., :hp]
    grads["attn.wk"] += g_w[..., hp:2 * hp]
    grads["attn.wv"] += g_w[..., 2 * hp:]
    gz += (g_qkv @ _qkv_weight(p, c).T).reshape(z.shape)

    # primary branch
    g_logits = softmax_backward(cache["l"], g_l)
    grads["mlp.w3"] += cache["hidden"].T @ g_logits
    grads["mlp.b3"] += g_logits.sum(axis=0)
    g_h = g_logits @ p["mlp.w3"].T
    for i in (2, 1):
        lay = cache[f"layer{i}"]
        grads[f"bn{i}.gamma"] += (g_h * lay["xhat"]).sum(axis=0)
        grads[f"bn{i}.beta"] += g_h.sum(axis=0)
        g_xhat = g_h * p[f"bn{i}.gamma"]
        if cache["train"]:
            g_r = lay["inv"] * (g_xhat - g_xhat.mean(axis=0) - lay["xhat"] * (g_xhat * lay["xhat"]).mean(axis=0))
        else:
            g_r = g_xhat * lay["inv"]
        if lay["mask"] is not None:
            g_r = g_r * lay["mask"]
        g_a = g_r * (lay["pre"] > 0)
        grads[f"mlp.w{i}"] += lay["inp"].T @ g_a
        grads[f"mlp.b{i}"] += g_a.sum(axis=0)
        g_h = g_a @ p[f"mlp.w{i}"].T
    gz += g_h

    if c.reduces:
        grads["reduce.w"] += cache["e"].T @ gz
        grads["reduce.b"] += gz.sum(axis=0)
    return grads


def batch_stats(cache: dict) -> dict:
    """Batch-norm statistics observed in a train-mode pass (unbiased variance)."""
    out = {}
    for i in (1, 2):
        lay = cache[f"layer{i}"]
        n = lay["n"]
        out[f"bn{i}.mean"] = lay["mu"]
        out[f"bn{i}.var"] = lay["var"] * n / max(n - 1, 1)
    return out


def update_running_stats(params: HeadParameters, stats: dict) -> None:
    m = params.config.bn_momentum
    for i in (1, 2):
        rm, rv = params.buffers[f"bn{i}.running_mean"], params.buffers[f"bn{i}.running_var"]
        rm *= m
        rm += (1.0 - m) * stats[f"bn{i}.mean"]
        rv *= m
        rv += (1.0 - m) * stats[f"bn{i}.var"]


def predict_batch(e, params: HeadParameters) -> dict:
    """Eval-mode pass; adds ``pred`` (argmax of ``final``, lowest index on ties)."""
    out = forward(e, params, train=False)
    out["pred"] = np.argmax(out["final"], axis=-1)
    return out


def predict(e, params: HeadParameters) -> PredictionRecord:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise ShapeError("predict takes a single embedding; use predict_batch for batches")
    out = predict_batch(e[None, :], params)
    n = params.config.num_classes
    t_g = out["t_g"][0] if out["t_g"] is not None else np.full(n, 1.0 / n)
    return PredictionRecord(
        primary=out["l"][0],
        anchor_term=t_g,
        attentive_term=out["t_a"][0],
        fused_correction=out["t"][0],
        final=out["final"][0],
        c_l=float(out["c_l"][0]),
        c_g=float(out["c_g"][0]),
        c_a=float(out["c_a"][0]),
        c_t=float(out["c_t"][0]),
        label=int(out["pred"][0]),
    )


def records_from_batch(out: dict) -> list[PredictionRecord]:
    n = out["l"].shape[1]
    recs = []
    for b in range(out["l"].shape[0]):
        t_g = out["t_g"][b] if out["t_g"] is not None else np.full(n, 1.0 / n)
        recs.append(PredictionRecord(
            out["l"][b], t_g, out["t_a"][b], out["t"][b], out["final"][b],
            float(out["c_l"][b]), float(out["c_g"][b]), float(out["c_a"][b]), float(out["c_t"][b]),
            int(out["pred"][b])))
    return recs


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params: HeadParameters, extra: Optional[dict] = None) -> None:
    """Binary checkpoint, little-endian throughout.

    Header: magic (8 bytes), ``<u4`` version, N, K, d, T, n_heads, ``<f8`` delta,
    ``<f8`` dropout, ``<u4`` array count. Each array: ``<u2`` name length, UTF-8
    name, ``<u1`` ndim, ``<u4`` dims, ``<f8`` values. Arrays follow declaration
    order: parameters, buffers, then any ``extra`` arrays (optimizer moments).
    """
    c = params.config
    arrays = dict(params.params)
    arrays.update(params.buffers)
    if extra:
        arrays.update(extra)
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<6I", CHECKPOINT_VERSION, c.num_classes, c.anchors_per_class, c.dim, c.tokens, c.n_heads)
    out += struct.pack("<2d", c.delta, c.dropout)
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path, expect: Optional[HeadConfig] = None) -> tuple[HeadParameters, dict]:
    """Read a checkpoint; returns ``(params, extra_arrays)``.

    With ``expect`` given, every array must match the shapes that config implies.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a head checkpoint")
    version, n, k, d, t, nh = struct.unpack_from("<6I", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    delta, dropout = struct.unpack_from("<2d", raw, 32)
    (count,) = struct.unpack_from("<I", raw, 48)
    off = 52
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, "<f8", size, off).reshape(shape).astype(np.float64)
        off += 8 * size
    hidden = arrays["mlp.w1"].shape[1]
    input_dim = arrays["reduce.w"].shape[0] if "reduce.w" in arrays else None
    config = HeadConfig(num_classes=n, dim=d, input_dim=input_dim, hidden=hidden, anchors_per_class=k,
                        delta=delta, tokens=t, n_heads=nh, dropout=dropout)
    if expect is not None:
        for key in ("num_classes", "anchors_per_class", "dim", "tokens", "n_heads", "in_dim", "hidden"):
            got, want = getattr(config, key), getattr(expect, key)
            if got != want:
                raise CheckpointError(f"{path}: {key} is {got}, expected {want}")
    template = init_params(config, make_rng(0))
    params = {}
    for name, ref in template.params.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name!r}")
        if arrays[name].shape != ref.shape:
            raise CheckpointError(f"{path}: array {name!r} has shape {arrays[name].shape}, expected {ref.shape}")
        params[name] = arrays.pop(name)
    buffers = {}
    for name, ref in template.buffers.items():
        if name not in arrays or arrays[name].shape != ref.shape:
            raise CheckpointError(f"{path}: buffer {name!r} missing or misshapen")
        buffers[name] = arrays.pop(name)
    return HeadParameters(config, params, buffers), arrays
