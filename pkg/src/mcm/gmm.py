"""Diagonal-covariance Gaussian mixtures: k-means++ seeding, EM, BIC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    tol: float = 1e-6
    var_floor: float = 1e-6
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.var_floor > 0:
            raise ValueError("var_floor must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)
    log_likelihood: float = float("nan")
    history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_params(self) -> int:
        k, d = self.means.shape
        return (k - 1) + 2 * k * d


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("data must be an (n, d) array")
    return x


def _logsumexp(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with the usual max shift; ``(n, K) -> (n, 1)``."""
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def component_log_densities(model: GmmModel, data) -> np.ndarray:
    """``log pi_k + log N(x_i; mu_k, diag var_k)`` as an ``(n, K)`` array."""
    x = _check_data(data)
    if x.shape[1] != model.dim:
        raise ValueError(f"data has dimension {x.shape[1]}, model has {model.dim}")
    var = model.variances
    # expanded quadratic form on data centred at its mean: two matmuls instead
    # of an (n, K, d) temporary, and small operands keep cancellation harmless
    shift = x.mean(axis=0) if x.shape[0] else np.zeros(x.shape[1])
    xc, mc = x - shift, model.means - shift
    inv = 1.0 / var
    maha = (xc * xc) @ inv.T - 2.0 * xc @ (mc * inv).T + np.sum(mc * mc * inv, axis=1)
    maha = np.maximum(maha, 0.0)
    log_det = np.sum(np.log(var), axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return log_w - 0.5 * (x.shape[1] * LOG_2PI + log_det + maha)


def log_likelihood(model: GmmModel, data) -> float:
    return float(_logsumexp(component_log_densities(model, data)).sum())


def responsibilities(model: GmmModel, data) -> np.ndarray:
    lp = component_log_densities(model, data)
    return np.exp(lp - _logsumexp(lp))


def predict(model: GmmModel, data) -> np.ndarray:
    """Hard assignment: index of the highest-responsibility component."""
    return np.argmax(component_log_densities(model, data), axis=1)


def bic(model: GmmModel, data) -> float:
    x = _check_data(data)
    n = x.shape[0]
    if n == 0:
        raise ValueError("BIC is undefined for an empty dataset")
    ll = model.log_likelihood if model.history else log_likelihood(model, x)
    return model.n_params * np.log(n) - 2.0 * ll


def kmeanspp_init(data, k: int, rng: np.random.Generator) -> np.ndarray:
    x = _check_data(data)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a chosen mean: pick an unused index
            free = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(free))
        chosen.append(i)
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return x[chosen].copy()


def _m_step(x, resp, var_floor, prev: GmmModel | None):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    alive = nk > 1e-300
    safe = np.where(alive, nk, 1.0)[:, None]
    shift = x.mean(axis=0)
    xc = x - shift
    mc = resp.T @ xc / safe
    variances = np.maximum(resp.T @ (xc * xc) / safe - mc * mc, var_floor)
    means = mc + shift
    # a dead component keeps its old parameters; its weight stays ~0
    means[~alive] = prev.means[~alive]
    variances[~alive] = prev.variances[~alive]
    return GmmModel(weights, means, variances)


def _fit_once(x, k, cfg: FitConfig, rng) -> GmmModel:
    means = kmeanspp_init(x, k, rng)
    spread = np.maximum(x.var(axis=0), cfg.var_floor)
    model = GmmModel(np.full(k, 1.0 / k), means, np.tile(spread, (k, 1)))
    history = []
    prev_ll = None
    for _ in range(cfg.max_iter):
        lp = component_log_densities(model, x)
        norm = _logsumexp(lp)
        ll = float(norm.sum())
        history.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) <= cfg.tol * abs(ll):
            model.converged = True
            break
        prev_ll = ll
        resp = np.exp(lp - norm)
        model = _m_step(x, resp, cfg.var_floor, model)
    else:
        history.append(log_likelihood(model, x))
    model.history = history
    model.log_likelihood = history[-1]
    return model


def fit_em(data, k: int, cfg: FitConfig = FitConfig()) -> GmmModel:
    """Best-of-``restarts`` EM fit; restarts draw from independent child seeds."""
    x = _check_data(data)
    if x.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {x.shape[0]}")
    if x.shape[1] < 1:
        raise ValueError("data dimension must be >= 1")
    seeds = np.random.SeedSequence([cfg.seed, k]).spawn(cfg.restarts)
    best = None
    for s in seeds:
        model = _fit_once(x, k, cfg, np.random.default_rng(s))
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


@dataclass
class Selection:
    k: int
    model: GmmModel
    table: dict[int, float]  # K -> BIC


def select_k(data, k_range, cfg: FitConfig = FitConfig()) -> Selection:
    """Fit every K in ``k_range`` and keep the BIC minimiser (ties -> smaller K)."""
    x = _check_data(data)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[-1] > x.shape[0]:
        raise ValueError(f"largest K ({ks[-1]}) exceeds the number of points ({x.shape[0]})")
    table, models = {}, {}
    for k in ks:
        models[k] = fit_em(x, k, cfg)
        table[k] = bic(models[k], x)
    best = min(ks, key=lambda k: (table[k], k))
    return Selection(best, models[best], table)
