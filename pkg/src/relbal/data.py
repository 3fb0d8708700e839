"""Embedding datasets: synthetic generation, label noise, smoothing, sampling, I/O."""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .numerics import InvalidInputError, ShapeError, make_rng

BINARY_MAGIC = b"RBEMB001"


class MissingClassError(ValueError):
    """A class has no samples in the pooled set."""

    def __init__(self, cls: int):
        super().__init__(f"class {cls} is absent from the sampling pool")
        self.cls = cls


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Sample(NamedTuple):
    embedding: np.ndarray
    label: int
    group: Optional[int]


@dataclass(frozen=True)
class Dataset:
    embeddings: np.ndarray
    labels: np.ndarray
    num_classes: int
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 2:
            raise ShapeError(f"embeddings must be 2-D, got shape {emb.shape}")
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if labels.shape[0] != emb.shape[0]:
            raise ShapeError(f"{labels.shape[0]} labels for {emb.shape[0]} embeddings")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(emb)):
            raise InvalidInputError("embeddings contain non-finite values")
        groups = self.groups
        if groups is not None:
            groups = np.array(groups, dtype=np.int64, copy=True).reshape(-1)
            if groups.shape[0] != emb.shape[0]:
                raise ShapeError(f"{groups.shape[0]} group ids for {emb.shape[0]} embeddings")
            groups.setflags(write=False)
        emb.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def sample(self, i: int) -> Sample:
        group = None if self.groups is None else int(self.groups[i])
        return Sample(self.embeddings[i], int(self.labels[i]), group)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        groups = None if self.groups is None else self.groups[idx]
        return Dataset(self.embeddings[idx], self.labels[idx], self.num_classes, groups)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.embeddings, labels, self.num_classes, self.groups)

    def checksum(self) -> str:
        buf = io.BytesIO()
        write_binary(buf, self)
        return hashlib.sha256(buf.getvalue()).hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    dim: int = 128
    per_class: int = 600
    spread: float = 1.0
    separation: float = 2.5
    seed: int = 7

    def __post_init__(self):
        if self.spread <= 0:
            raise InvalidInputError(f"spread must be positive, got {self.spread}")
        if self.separation < 0:
            raise InvalidInputError(f"separation must be nonnegative, got {self.separation}")
        if self.num_classes < 1 or self.dim < 1 or self.per_class < 1:
            raise InvalidInputError("num_classes, dim and per_class must be positive")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Class centres drawn uniformly on the sphere of radius ``spec.separation``."""
    rng = make_rng(np.random.SeedSequence([spec.seed, 0]))
    g = rng.standard_normal((spec.num_classes, spec.dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * spec.separation


def generate_synthetic(spec: SyntheticSpec, per_class: Optional[int] = None, stream: int = 1) -> Dataset:
    """Isotropic Gaussian clusters around :func:`class_means`; group id = class.

    Different ``stream`` values give fresh samples around the same means, which
    is how held-out sets are produced.
    """
    per_class = spec.per_class if per_class is None else per_class
    means = class_means(spec)
    rng = make_rng(np.random.SeedSequence([spec.seed, stream]))
    labels = np.repeat(np.arange(spec.num_classes), per_class)
    noise = rng.standard_normal((labels.size, spec.dim)) * spec.spread
    return Dataset(means[labels] + noise, labels, spec.num_classes, groups=labels.copy())


def generate_split(spec: SyntheticSpec, test_per_class: int) -> tuple[Dataset, Dataset]:
    return generate_synthetic(spec, stream=1), generate_synthetic(spec, test_per_class, stream=2)


def inject_label_noise(ds: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    """Flip each label with probability ``rate`` to a uniformly chosen *other* class."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidInputError(f"noise rate must lie in [0, 1], got {rate}")
    n, k = len(ds), ds.num_classes
    flip = rng.random(n) < rate
    shift = rng.integers(1, max(k, 2), size=n)
    labels = ds.labels.copy()
    if k > 1:
        labels[flip] = (labels[flip] + shift[flip]) % k
    return ds.with_labels(labels)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def smooth_labels(y, term: float) -> np.ndarray:
    """Mix one-hot targets toward uniform: ``(1 - eps) * y + eps / N``, eps = term / 100."""
    if not 0.0 <= term < 100.0:
        raise InvalidInputError(f"smoothing term must lie in [0, 100), got {term}")
    y = np.asarray(y, dtype=np.float64)
    eps = term / 100.0
    return (1.0 - eps) * y + eps / y.shape[-1]


def refine_batch(ds: Dataset, per_group: int, per_class: int, rng: np.random.Generator) -> Dataset:
    """Two-stage balanced draw for one epoch.

    Up to ``per_group`` samples are taken without replacement from every group
    into a pool; then exactly ``per_class`` samples per class are drawn from
    the pool, with replacement only for classes that pooled fewer than that.
    Without group ids each sample is its own group. The result is shuffled.
    """
    if per_group < 1 or per_class < 1:
        raise InvalidInputError("per_group and per_class must be at least 1")
    n = len(ds)
    if ds.groups is None:
        pool = np.arange(n)
    else:
        chosen = []
        order = np.argsort(ds.groups, kind="stable")
        uniq, starts = np.unique(ds.groups[order], return_index=True)
        bounds = list(starts[1:]) + [n]
        for start, stop in zip(starts, bounds):
            members = order[start:stop]
            if members.size > per_group:
                members = np.sort(rng.choice(members, per_group, replace=False))
            chosen.append(members)
        pool = np.concatenate(chosen) if chosen else np.arange(0)
    picked = []
    pool_labels = ds.labels[pool]
    for cls in range(ds.num_classes):
        members = pool[pool_labels == cls]
        if members.size == 0:
            raise MissingClassError(cls)
        picked.append(rng.choice(members, per_class, replace=members.size < per_class))
    idx = np.concatenate(picked)
    return ds.subset(idx[rng.permutation(idx.size)])


# --- file formats -----------------------------------------------------------

def write_text(path, ds: Dataset) -> None:
    """Header ``d N``; then ``label group v1 ... vd`` per sample (group -1 = none)."""
    groups = ds.groups if ds.groups is not None else np.full(len(ds), -1)
    lines = [f"{ds.dim} {ds.num_classes}"]
    for emb, label, group in zip(ds.embeddings, ds.labels, groups):
        lines.append(f"{label} {group} " + " ".join(repr(float(v)) for v in emb))
    Path(path).write_text("\n".join(lines) + "\n")


def read_text(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DatasetFormatError("header must be 'd N'", 1)
        try:
            d, k = int(header[0]), int(header[1])
        except ValueError:
            raise DatasetFormatError("header must contain two integers", 1) from None
        embs, labels, groups = [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 2:
                raise DatasetFormatError(f"expected {d + 2} fields, found {len(parts)}", lineno)
            try:
                label, group = int(parts[0]), int(parts[1])
                vec = [float(v) for v in parts[2:]]
            except ValueError as exc:
                raise DatasetFormatError(str(exc), lineno) from None
            if not 0 <= label < k:
                raise DatasetFormatError(f"label {label} outside [0, {k})", lineno)
            labels.append(label)
            groups.append(group)
            embs.append(vec)
    groups_arr = np.array(groups, dtype=np.int64)
    emb = np.array(embs, dtype=np.float64).reshape(len(embs), d)
    return Dataset(emb, labels, k, None if np.all(groups_arr < 0) else groups_arr)


def write_binary(target, ds: Dataset) -> None:
    """Magic, then ``<u4`` n, d, N, has_groups; ``<i4`` labels and groups; ``<f8`` values."""
    out = bytearray(BINARY_MAGIC)
    has_groups = ds.groups is not None
    out += struct.pack("<4I", len(ds), ds.dim, ds.num_classes, int(has_groups))
    out += ds.labels.astype("<i4").tobytes()
    if has_groups:
        out += ds.groups.astype("<i4").tobytes()
    out += ds.embeddings.astype("<f8").tobytes()
    if hasattr(target, "write"):
        target.write(bytes(out))
    else:
        Path(target).write_bytes(bytes(out))


def read_binary(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")
    n, d, k, has_groups = struct.unpack_from("<4I", raw, 8)
    off = 24
    need = off + 4 * n * (1 + has_groups) + 8 * n * d
    if len(raw) != need:
        raise DatasetFormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, "<i4", n, off).astype(np.int64)
    off += 4 * n
    groups = None
    if has_groups:
        groups = np.frombuffer(raw, "<i4", n, off).astype(np.int64)
        off += 4 * n
    emb = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d)
    return Dataset(emb, labels, k, groups)


def save_dataset(path, ds: Dataset) -> None:
    if str(path).endswith(".txt"):
        write_text(path, ds)
    else:
        write_binary(path, ds)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return read_binary(path) if magic == BINARY_MAGIC else read_text(path)


def write_manifest(path, train: str, test: str, seed: int, **extra) -> None:
    doc = {"train": str(train), "test": str(test), "seed": seed, **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    base = Path(path).parent
    for key in ("train", "test"):
        p = Path(doc[key])
        doc[key] = str(p if p.is_absolute() else base / p)
    return doc
