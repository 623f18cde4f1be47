"""Per-image statistical descriptors and descriptor-space distances.

Images are float arrays of shape ``(C, H, W)`` with values in ``[0, 1]``.
Every descriptor function also has a ``*_batch`` twin that takes a stack of
images ``(B, C, H, W)`` and returns a ``(B, dim)`` matrix; the memory and the
harness use the batch forms, the scalar forms exist for clarity and tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Kind(str, Enum):
    CHANNEL_STATS = "channel_stats"
    SPATIAL_MEAN = "spatial_mean"
    COLOR_HISTOGRAM = "color_histogram"


DEFAULT_GRID = 4
DEFAULT_BINS = 8


@dataclass(frozen=True)
class Descriptor:
    kind: Kind
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or min(img.shape) < 1:
        raise ValueError(f"image must have shape (C, H, W) with C, H, W >= 1, got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def _as_batch(imgs) -> np.ndarray:
    imgs = np.asarray(imgs, dtype=float)
    if imgs.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) stack, got shape {imgs.shape}")
    return imgs


# -- channel statistics -----------------------------------------------------

def channel_stats_batch(imgs) -> np.ndarray:
    """Interleaved per-channel ``[mean, variance]`` for a stack of images.

    Variance is the population variance over the H*W pixels of a channel.
    """
    imgs = _as_batch(imgs)
    flat = imgs.reshape(imgs.shape[0], imgs.shape[1], -1)
    mu = flat.mean(axis=2)
    var = flat.var(axis=2)
    out = np.empty((imgs.shape[0], 2 * imgs.shape[1]))
    out[:, 0::2] = mu
    out[:, 1::2] = var
    return out


def channel_stats(img) -> Descriptor:
    img = check_image(img)
    return Descriptor(Kind.CHANNEL_STATS, channel_stats_batch(img[None])[0])


# -- spatial mean -----------------------------------------------------------

def _cell_index(n: int, g: int) -> np.ndarray:
    # pixel coordinate -> grid cell by floor division
    return (np.arange(n) * g) // n


def spatial_mean_batch(imgs, g: int = DEFAULT_GRID) -> np.ndarray:
    imgs = _as_batch(imgs)
    _, _, h, w = imgs.shape
    if g < 1:
        raise ValueError("grid size must be >= 1")
    if g > min(h, w):
        raise ValueError(f"grid size {g} exceeds image size {h}x{w}")
    lum = imgs.mean(axis=1)
    rows, cols = _cell_index(h, g), _cell_index(w, g)
    cell = (rows[:, None] * g + cols[None, :]).ravel()
    counts = np.bincount(cell, minlength=g * g)
    flat = lum.reshape(lum.shape[0], -1)
    sums = np.zeros((flat.shape[0], g * g))
    for k in range(g * g):
        sums[:, k] = flat[:, cell == k].sum(axis=1)
    return sums / counts


def spatial_mean(img, g: int = DEFAULT_GRID) -> Descriptor:
    img = check_image(img)
    return Descriptor(Kind.SPATIAL_MEAN, spatial_mean_batch(img[None], g)[0])


# -- colour histogram -------------------------------------------------------

def color_histogram_batch(imgs, bins: int = DEFAULT_BINS) -> np.ndarray:
    imgs = _as_batch(imgs)
    if bins < 2:
        raise ValueError("histogram needs at least 2 bins")
    b, c, h, w = imgs.shape
    idx = np.minimum((imgs * bins).astype(np.int64), bins - 1).reshape(b * c, -1)
    offsets = np.arange(b * c)[:, None] * bins
    counts = np.bincount((idx + offsets).ravel(), minlength=b * c * bins)
    return counts.reshape(b, c * bins) / float(h * w)


def color_histogram(img, bins: int = DEFAULT_BINS) -> Descriptor:
    img = check_image(img)
    return Descriptor(Kind.COLOR_HISTOGRAM, color_histogram_batch(img[None], bins)[0])


def describe_batch(imgs, kind: Kind | str, grid: int = DEFAULT_GRID, bins: int = DEFAULT_BINS) -> np.ndarray:
    kind = Kind(kind)
    if kind is Kind.CHANNEL_STATS:
        return channel_stats_batch(imgs)
    if kind is Kind.SPATIAL_MEAN:
        return spatial_mean_batch(imgs, grid)
    return color_histogram_batch(imgs, bins)


# -- distances --------------------------------------------------------------

METRICS = ("euclidean", "manhattan", "cosine", "mahalanobis")


@dataclass(frozen=True)
class Metric:
    """Distance metric for descriptor space.

    ``cov`` is a diagonal covariance (one variance per coordinate) and is only
    used by ``"mahalanobis"``; ``eps`` is added to every variance.
    """

    name: str = "euclidean"
    cov: np.ndarray | None = None
    eps: float = 1e-6

    def __post_init__(self):
        if self.name not in METRICS:
            raise ValueError(f"unknown metric {self.name!r}; expected one of {METRICS}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def with_cov(self, cov) -> "Metric":
        return Metric(self.name, np.asarray(cov, dtype=float), self.eps)


def distances_to(x, points, metric: Metric = Metric()) -> np.ndarray:
    """Distances from one vector ``x`` to each row of ``points``."""
    x = np.asarray(x, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {points.shape[1]}")
    diff = points - x
    if metric.name == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric.name == "manhattan":
        return np.abs(diff).sum(axis=1)
    if metric.name == "cosine":
        nx = np.linalg.norm(x)
        npts = np.linalg.norm(points, axis=1)
        if nx == 0.0 or np.any(npts == 0.0):
            raise ValueError("cosine distance is undefined for a zero vector")
        sim = points @ x / (npts * nx)
        return np.maximum(0.0, 1.0 - np.clip(sim, -1.0, 1.0))
    if metric.cov is None:
        raise ValueError("mahalanobis distance needs a diagonal covariance")
    cov = np.asarray(metric.cov, dtype=float)
    if cov.shape != x.shape or np.any(cov < 0):
        raise ValueError("mahalanobis covariance must be a nonnegative vector of descriptor length")
    return np.sqrt((diff**2 / (cov + metric.eps)).sum(axis=1))


def distance(a: Descriptor, b: Descriptor, metric: Metric = Metric()) -> float:
    if a.kind is not b.kind:
        raise ValueError(f"descriptor kinds differ: {a.kind.value} vs {b.kind.value}")
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if metric.name == "cosine":
        # symmetric in (a, b): normalise both before differencing
        na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine distance is undefined for a zero vector")
        sim = float(a.values @ b.values) / (na * nb)
        return max(0.0, 1.0 - min(1.0, max(-1.0, sim)))
    return float(distances_to(a.values, b.values[None], metric)[0])
