"""Dataset ingestion, the raw image container, k-means and batch iteration."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
IMAGE_MAGIC = b"SPIM"


def as_binary(batch, num_vars: int | None = None) -> np.ndarray:
    """Validate a ``b x N`` 0/1 matrix and return it as ``int8``."""
    x = np.asarray(batch)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError(f"expected a b x N matrix, got shape {x.shape}")
    if num_vars is not None and x.shape[1] != num_vars:
        raise DataError(f"expected {num_vars} variables, got {x.shape[1]}")
    if x.size and not np.isin(x, (0, 1)).all():
        raise DataError("batch entries must be 0 or 1")
    return x.astype(np.int8, copy=False)


@dataclass
class BinaryDataset:
    name: str
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def num_vars(self) -> int:
        return self.train.shape[1]

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


def read_binary_file(path) -> np.ndarray:
    """Parse one split file: one sample per line, 0/1 tokens separated by commas or whitespace."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing data file {path}")
    rows: list[list[int]] = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.replace(",", " ").split()
            try:
                row = [int(t) for t in tokens]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer token") from None
            if any(v not in (0, 1) for v in row):
                raise DataError(f"{path}: line {lineno}: non-binary token")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: line {lineno}: expected {width} values, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no samples")
    return np.asarray(rows, dtype=np.int8)


def write_binary_file(path, x) -> None:
    x = as_binary(x)
    with Path(path).open("w", newline="\n") as fh:
        for row in x:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_binary_dataset(directory, name: str) -> BinaryDataset:
    """Load ``name.{train,valid,test}.data`` from ``directory``."""
    directory = Path(directory)
    parts = {}
    for split in SPLITS:
        candidates = [directory / f"{name}.{split}.data", directory / name / f"{name}.{split}.data"]
        path = next((p for p in candidates if p.is_file()), candidates[0])
        parts[split] = read_binary_file(path)
    widths = {s: a.shape[1] for s, a in parts.items()}
    if len(set(widths.values())) != 1:
        raise DataError(f"{name}: splits disagree on variable count {widths}")
    return BinaryDataset(name, parts["train"], parts["valid"], parts["test"])


# --------------------------------------------------------------------------
# images


@dataclass
class ImageSet:
    images: np.ndarray  # n x H x W x C, uint8
    labels: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def normalized(self) -> np.ndarray:
        return self.images.astype(np.float64) / 255.0

    def binarized(self, threshold: float = 0.5) -> np.ndarray:
        """Flattened (channel-last raster) 0/1 matrix for Bernoulli leaves."""
        log.info("binarizing %d images at threshold %.3f", len(self.images), threshold)
        flat = self.normalized().reshape(len(self.images), -1)
        return (flat > threshold).astype(np.int8)


def save_images(path, images) -> None:
    images = np.asarray(images)
    if images.ndim != 4 or images.dtype != np.uint8:
        raise DataError(f"expected uint8 n x H x W x C images, got {images.dtype} {images.shape}")
    header = IMAGE_MAGIC + struct.pack("<4I", *images.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(images).tobytes())


def load_images(path) -> ImageSet:
    raw = Path(path).read_bytes()
    if raw[:4] != IMAGE_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {IMAGE_MAGIC!r}")
    if len(raw) < 20:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    n, h, w, c = struct.unpack("<4I", raw[4:20])
    expected = n * h * w * c
    payload = raw[20:]
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w, c).copy()
    return ImageSet(images)


# --------------------------------------------------------------------------
# clustering


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: list[float]  # after each assignment step


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = int(rng.integers(n))
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def kmeans(points, k: int, seed: int = 0, iters: int = 20) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on flattened samples."""
    x = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    n = len(x)
    if k < 1 or k > n:
        raise ContractError(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    if k == n:
        order = rng.permutation(n)
        centroids = x[order].copy()
        labels = np.empty(n, dtype=np.int64)
        labels[order] = np.arange(n)
        return KMeansResult(labels, centroids, [0.0])
    centroids = _kmeans_pp(x, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), labels].sum()))
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        if len(history) > 1 and history[-1] == history[-2]:
            break
    return KMeansResult(labels, centroids, history)


# --------------------------------------------------------------------------
# batching


def batches(split, batch_size: int, seed: int | None = None, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Yield consecutive row blocks covering ``split``; the last may be short."""
    if batch_size <= 0:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    split = np.asarray(split)
    order = np.random.default_rng(seed).permutation(len(split)) if shuffle else np.arange(len(split))
    for lo in range(0, len(split), batch_size):
        yield split[order[lo:lo + batch_size]]
