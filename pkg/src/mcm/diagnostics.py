"""Memory-quality diagnostics against a reference mixture, and stream
clusterability.

A reference GMM is fitted to a trailing window of stream descriptors; every
memory descriptor is then hard-assigned to its most responsible component and
the occupancy counts are summarised (imbalance, entropy, coverage). Energy
distance compares the memory and window descriptor sets directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .gmm import FitConfig, GmmModel, predict, select_k


@dataclass(frozen=True)
class ReferenceModel:
    model: GmmModel
    window: int  # number of stream descriptors the model was fitted on
    step: int  # stream step at which it was fitted

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("reference window must be nonempty")

    @property
    def n_components(self) -> int:
        return self.model.n_components


def fit_reference(window_descs, step: int, k_cap: int = 20, cfg: FitConfig = FitConfig()) -> ReferenceModel:
    """BIC-selected mixture over ``1..min(k_cap, n)`` components."""
    x = np.asarray(window_descs, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("reference window must be a nonempty (n, d) array")
    top = max(1, min(k_cap, x.shape[0]))
    sel = select_k(x, range(1, top + 1), cfg)
    return ReferenceModel(sel.model, x.shape[0], step)


@dataclass(frozen=True)
class MemoryQuality:
    step: int
    imbalance: float
    entropy: float
    coverage: float
    energy_distance: float

    def __post_init__(self):
        if self.imbalance < 1 or self.entropy < 0 or not 0 <= self.coverage <= 1 or self.energy_distance < 0:
            raise ValueError(f"diagnostic values out of range: {self}")


def assign_components(ref: ReferenceModel | GmmModel, descs) -> np.ndarray:
    """Occupancy counts of the reference components (hard assignment)."""
    model = ref.model if isinstance(ref, ReferenceModel) else ref
    x = np.asarray(descs, dtype=float)
    if x.size == 0:
        return np.zeros(model.n_components, dtype=int)
    x = x.reshape(-1, x.shape[-1])
    if x.shape[1] != model.dim:
        raise ValueError(f"descriptors have dimension {x.shape[1]}, reference has {model.dim}")
    return np.bincount(predict(model, x), minlength=model.n_components)


def _check_counts(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    if c.ndim != 1 or c.size == 0 or np.any(c < 0):
        raise ValueError("counts must be a nonempty vector of nonnegative numbers")
    if c.sum() < 1:
        raise ValueError("memory is empty")
    return c


def imbalance_ratio(counts) -> float:
    c = _check_counts(counts)
    return float(c.max() / max(1.0, c.min()))


def occupancy_entropy(counts) -> float:
    c = _check_counts(counts)
    p = c[c > 0] / c.sum()
    return float(max(0.0, -(p * np.log(p)).sum()))


def mode_coverage(counts, thresh: float = 0.01) -> float:
    c = _check_counts(counts)
    return float(np.count_nonzero(c / c.sum() > thresh) / c.size)


def energy_distance(a, b) -> float:
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` over all pairs, Euclidean."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0 or a.size == 0 or b.size == 0:
        raise ValueError("energy distance needs two nonempty sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    e = 2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    return float(max(0.0, e))


def memory_quality(step: int, ref: ReferenceModel, memory_descs, window_descs, thresh: float = 0.01) -> MemoryQuality:
    counts = assign_components(ref, memory_descs)
    return MemoryQuality(
        step,
        imbalance_ratio(counts),
        occupancy_entropy(counts),
        mode_coverage(counts, thresh),
        energy_distance(memory_descs, window_descs),
    )


# -- clusterability ---------------------------------------------------------

@dataclass(frozen=True)
class ClusterabilityReport:
    kind: str
    starts: tuple[int, ...]
    k_star: tuple[int, ...]
    bic_tables: tuple[dict, ...]
    k_range: tuple[int, ...]

    @property
    def mean_k(self) -> float:
        return float(np.mean(self.k_star))

    @property
    def std_k(self) -> float:
        return float(np.std(self.k_star))


def clusterability(descs, kind: str, window: int, stride: int, k_range=range(1, 11), cfg: FitConfig = FitConfig()):
    """Run BIC model selection on every window ``[s, s + window)`` for
    ``s = 0, stride, 2 * stride, ...`` that fits inside the stream."""
    x = np.asarray(descs, dtype=float)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if x.ndim != 2 or window > x.shape[0]:
        raise ValueError(f"window {window} exceeds stream length {x.shape[0] if x.ndim else 0}")
    ks = tuple(sorted(set(int(k) for k in k_range)))
    starts, kstar, tables = [], [], []
    for s in range(0, x.shape[0] - window + 1, stride):
        sel = select_k(x[s : s + window], ks, cfg)
        starts.append(s)
        kstar.append(sel.k)
        tables.append(dict(sel.table))
    return ClusterabilityReport(str(kind), tuple(starts), tuple(kstar), tuple(tables), ks)
