"""Experiment runner: stream -> memory -> diagnostics, plus sweeps.

Every run is a pure function of its :class:`ExperimentConfig`. When several
memory variants are simulated together they consume the same stream batches
and are scored against the same reference models.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .descriptors import Kind, Metric, describe_batch
from .diagnostics import ClusterabilityReport, MemoryQuality, clusterability, fit_reference, memory_quality
from .gmm import FitConfig
from .memory import MemoryParams, MemorySample, MultiClusterMemory, SingleClusterMemory
from .stream import Stream, StreamConfig

VARIANTS = ("mcm", "scm")
QUALITY_COLUMNS = ("step", "imbalance", "entropy", "coverage", "energy_distance", "variant")
ABLATION_AXES = ("tau", "kmax", "metric", "strategy")


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Reference window and sampling cadence.

    The stream trace keeps ``trace_per_step`` evenly spaced descriptors from
    every batch. ``window`` and ``refresh`` count trace descriptors; ``stride``
    counts steps between diagnostic rows.
    """

    window: int = 640
    stride: int = 20
    refresh: int = 320
    trace_per_step: int = 2
    k_cap: int = 20
    coverage_thresh: float = 0.01
    fit_restarts: int = 3
    fit_max_iter: int = 200
    var_floor: float = 1e-3  # coarser than the EM default: ignores sub-0.03 texture of a mode

    def __post_init__(self):
        if min(self.window, self.stride, self.refresh, self.trace_per_step, self.k_cap) < 1:
            raise ValueError("window, stride, refresh, trace_per_step and k_cap must be >= 1")
        if not 0 <= self.coverage_thresh < 1:
            raise ValueError("coverage_thresh must lie in [0, 1)")

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(max_iter=self.fit_max_iter, var_floor=self.var_floor, restarts=self.fit_restarts, seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    memory: MemoryParams = field(default_factory=MemoryParams)
    scm_capacity: int = 64
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    n_adapt: int = 64
    variant: str = "mcm"
    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_adapt < 1 or self.scm_capacity < 1 or self.workers < 1:
            raise ValueError("n_adapt, scm_capacity and workers must be >= 1")
        if self.memory.num_classes != self.stream.num_classes:
            raise ValueError("memory.num_classes must equal stream.num_classes")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "stream": self.stream.to_dict(),
            "memory": self.memory.to_dict(),
            "scm_capacity": self.scm_capacity,
            "diagnostics": dataclasses.asdict(self.diagnostics),
            "n_adapt": self.n_adapt,
            "variant": self.variant,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        stream = StreamConfig.from_dict(d.pop("stream", {}))
        mem = dict(d.pop("memory", {}))
        mem.setdefault("num_classes", stream.num_classes)
        return cls(
            stream=stream,
            memory=MemoryParams.from_dict(mem),
            diagnostics=DiagnosticsConfig(**d.pop("diagnostics", {})),
            **d,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunMetrics:
    variant: str
    rows: list[MemoryQuality]
    counters: dict
    timings: dict  # seconds per phase
    cluster_counts: list[int] = field(default_factory=list)  # per diagnostic row

    def mean(self, name: str) -> float:
        vals = [getattr(r, name) for r in self.rows]
        return float(np.mean(vals)) if vals else float("nan")


# -- simulation -------------------------------------------------------------

def make_memory(cfg: ExperimentConfig, variant: str):
    if variant == "mcm":
        return MultiClusterMemory(cfg.memory)
    p = cfg.memory
    return SingleClusterMemory(cfg.scm_capacity, p.lambda_t, p.lambda_u, p.num_classes)


def _trace_rows(batch: int, per_step: int) -> np.ndarray:
    k = min(batch, per_step)
    return (np.arange(k) * batch) // k


def simulate(cfg: ExperimentConfig, variants=None, memories=None, on_step=None) -> dict[str, RunMetrics]:
    """Run the given memory variants in lockstep over one stream.

    ``memories`` may supply prebuilt memories keyed by name (for sweeps over
    memory parameters); otherwise one memory per entry of ``variants`` is made.
    ``on_step(t, memories)`` is called after every step.
    """
    if memories is None:
        variants = (cfg.variant,) if variants is None else tuple(variants)
        memories = {v: make_memory(cfg, v) for v in variants}
    scfg = dataclasses.replace(cfg.stream, seed=cfg.seed)
    dcfg = cfg.diagnostics
    kind = cfg.memory.kind
    stream = Stream(scfg)
    retrieve_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    rows = _trace_rows(scfg.batch_size, dcfg.trace_per_step)

    metrics = {name: RunMetrics(name, [], {}, {"memory": 0.0, "diagnostics": 0.0}) for name in memories}
    trace: list[np.ndarray] = []
    seen = 0  # trace descriptors emitted so far
    ref, last_fit = None, 0

    for t in range(scfg.total_steps):
        images, labels, mode, _sev, u, idx = stream.batch_arrays(t)
        descs = describe_batch(images, kind)
        trace.extend(descs[rows])
        seen += len(rows)
        for name, mem in memories.items():
            t0 = time.perf_counter()
            for i in range(len(labels)):
                mem.insert(
                    MemorySample(int(idx[i]), descs[i], int(idx[i]), float(u[i]), 0, mode, int(labels[i]), kind),
                    t,
                )
            mem.age_tick()
            mem.retrieve(max(cfg.n_adapt, getattr(mem, "num_clusters", 1)), retrieve_rng, t)
            metrics[name].timings["memory"] += time.perf_counter() - t0
        if on_step is not None:
            on_step(t, memories)

        if (t + 1) % dcfg.stride == 0:
            t0 = time.perf_counter()
            window = np.array(trace[-dcfg.window :])
            if ref is None or seen - last_fit >= dcfg.refresh:
                ref = fit_reference(window, t, dcfg.k_cap, dcfg.fit_config(cfg.seed))
                last_fit = seen
            shared = time.perf_counter() - t0
            for name, mem in memories.items():
                t1 = time.perf_counter()
                snap = mem.snapshot()
                metrics[name].rows.append(memory_quality(t, ref, snap.descriptors, window, dcfg.coverage_thresh))
                metrics[name].cluster_counts.append(len(snap.centroids))
                metrics[name].timings["diagnostics"] += shared + time.perf_counter() - t1
            trace = trace[-dcfg.window :]

    for name, mem in memories.items():
        metrics[name].counters = dict(mem.counters)
        metrics[name].counters["merges_logged"] = len(getattr(mem, "merge_log", []))
    return metrics


# -- output -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_quality_csv(path, runs) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(QUALITY_COLUMNS)
        for run in runs:
            for r in run.rows:
                w.writerow([r.step, _fmt(r.imbalance), _fmt(r.entropy), _fmt(r.coverage), _fmt(r.energy_distance), run.variant])


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_simulate(cfg: ExperimentConfig, variants=None, out_dir=None) -> dict[str, RunMetrics]:
    """Simulate and write ``quality.csv`` plus ``manifest.json`` into the
    output directory. Wall-clock timings go to the manifest only, so the CSV
    is reproducible byte for byte."""
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    runs = simulate(cfg, variants)
    write_quality_csv(out / "quality.csv", runs.values())
    _write_json(
        out / "manifest.json",
        {
            "config": cfg.to_dict(),
            "counters": {v: r.counters for v, r in runs.items()},
            "timings": {v: r.timings for v, r in runs.items()},
        },
    )
    return runs


def _trace_images(cfg: ExperimentConfig, per_step: int) -> np.ndarray:
    scfg = dataclasses.replace(cfg.stream, seed=cfg.seed)
    stream = Stream(scfg)
    rows = _trace_rows(scfg.batch_size, per_step)
    out = [stream.batch_arrays(t)[0][rows] for t in range(scfg.total_steps)]
    return np.concatenate(out) if out else np.zeros((0, scfg.channels, scfg.height, scfg.width))


def stream_trace(cfg: ExperimentConfig, kind: Kind | str, per_step: int | None = None) -> np.ndarray:
    """Descriptors of the trace rows of every batch, in stream order."""
    images = _trace_images(cfg, cfg.diagnostics.trace_per_step if per_step is None else per_step)
    return describe_batch(images, kind)


def run_clusterability(
    cfg: ExperimentConfig, kinds=tuple(Kind), window: int = 600, stride: int = 100, k_range=range(1, 11), out_dir=None
) -> dict[str, ClusterabilityReport]:
    """Sliding-window K* for each descriptor kind over a one-per-step trace."""
    kinds = [Kind(k) for k in kinds]
    images = _trace_images(cfg, 1)
    fit = cfg.diagnostics.fit_config(cfg.seed)
    reports = {}
    for kind in kinds:
        reports[kind.value] = clusterability(describe_batch(images, kind), kind.value, window, stride, k_range, fit)
    if out_dir is not None:
        path = Path(out_dir) / "clusterability.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("kind", "window_start", "k_star", "bic"))
            for rep in reports.values():
                for s, k, table in zip(rep.starts, rep.k_star, rep.bic_tables):
                    w.writerow((rep.kind, s, k, _fmt(table[k])))
    return reports


# -- sweeps -----------------------------------------------------------------

def _ablation_memory(cfg: ExperimentConfig, axis: str, value) -> MemoryParams:
    p = cfg.memory
    if axis == "tau":
        return dataclasses.replace(p, tau=float(value))
    if axis == "kmax":
        return dataclasses.replace(p, k_max=int(value))
    if axis == "metric":
        return dataclasses.replace(p, metric=Metric(str(value), eps=p.metric.eps))
    if axis == "strategy":
        return dataclasses.replace(p, strategy=str(value))
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def _ablate_one(args):
    cfg, axis, value = args
    params = _ablation_memory(cfg, axis, value)
    merges_cost = []

    mem = MultiClusterMemory(params)
    seen = [0]

    def watch(_t, mems):
        log = mems["mcm"].merge_log
        for rec in log[seen[0] :]:
            merges_cost.append(rec.comparisons)
        seen[0] = len(log)

    run = simulate(dataclasses.replace(cfg, memory=params), memories={"mcm": mem}, on_step=watch)["mcm"]
    return {
        "axis": axis,
        "value": str(value),
        "imbalance": run.mean("imbalance"),
        "entropy": run.mean("entropy"),
        "coverage": run.mean("coverage"),
        "energy_distance": run.mean("energy_distance"),
        "mean_clusters": float(np.mean(run.cluster_counts)) if run.cluster_counts else float("nan"),
        "merges": run.counters["merges"],
        "comparisons_per_merge": float(np.mean(merges_cost)) if merges_cost else 0.0,
        "evictions": run.counters["evictions"],
        "memory_seconds": run.timings["memory"],
    }


ABLATION_COLUMNS = (
    "axis", "value", "imbalance", "entropy", "coverage", "energy_distance",
    "mean_clusters", "merges", "comparisons_per_merge", "evictions", "memory_seconds",
)


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _write_table(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def run_ablate(cfg: ExperimentConfig, axis: str, values, out_dir=None) -> list[dict]:
    """One MCM run per axis value at the config's seed."""
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    for v in values:
        _ablation_memory(cfg, axis, v)  # validate up front
    rows = _pool_map(_ablate_one, [(cfg, axis, v) for v in values], cfg.workers)
    if out_dir is not None:
        _write_table(Path(out_dir) / f"ablate_{axis}.csv", ABLATION_COLUMNS, rows)
    return rows


SCALING_COLUMNS = ("total", "variant", "clusters", "capacity", "energy_distance", "memory_seconds")


def _scaling_one(args):
    cfg, total = args
    n = cfg.memory.capacity
    mcm = MultiClusterMemory(dataclasses.replace(cfg.memory, k_max=total // n))
    p = cfg.memory
    scm = SingleClusterMemory(total, p.lambda_t, p.lambda_u, p.num_classes)
    runs = simulate(cfg, memories={"mcm": mcm, "scm": scm})
    return [
        {"total": total, "variant": "mcm", "clusters": total // n, "capacity": n,
         "energy_distance": runs["mcm"].mean("energy_distance"), "memory_seconds": runs["mcm"].timings["memory"]},
        {"total": total, "variant": "scm", "clusters": 1, "capacity": total,
         "energy_distance": runs["scm"].mean("energy_distance"), "memory_seconds": runs["scm"].timings["memory"]},
    ]


def run_scaling(cfg: ExperimentConfig, totals, out_dir=None) -> list[dict]:
    """SCM with a pool of ``T`` against MCM with ``T / N`` clusters of ``N``."""
    totals = [int(t) for t in totals]
    n = cfg.memory.capacity
    if not totals:
        raise ValueError("scaling needs at least one total")
    bad = [t for t in totals if t < n or t % n]
    if bad:
        raise ValueError(f"totals {bad} are not positive multiples of the cluster capacity {n}")
    rows = [r for pair in _pool_map(_scaling_one, [(cfg, t) for t in totals], cfg.workers) for r in pair]
    if out_dir is not None:
        _write_table(Path(out_dir) / "scaling.csv", SCALING_COLUMNS, rows)
    return rows


# -- projection -------------------------------------------------------------

def project_2d(descs) -> tuple[np.ndarray, np.ndarray]:
    """Top-two principal coordinates via the covariance eigendecomposition.

    Returns ``(coords, components)``; components are unit rows, sign-fixed so
    the largest-magnitude entry is positive.
    """
    x = np.asarray(descs, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("projection needs at least two descriptors")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 1e-15 * max(1.0, np.abs(x).max() ** 2):
        raise ValueError("descriptors have rank zero; nothing to project")
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order].T
    flip = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    if comps.shape[0] == 1:
        comps = np.vstack([comps, np.zeros_like(comps)])
    return centred @ comps.T, comps


def export_projection(snapshot, window_descs, path=None) -> list[tuple]:
    """Rows ``(source, cluster, pc1, pc2)``; stream rows use cluster -1."""
    window = np.asarray(window_descs, dtype=float).reshape(-1, snapshot.descriptors.shape[1] if len(snapshot) else np.shape(window_descs)[-1])
    combined = np.vstack([window, snapshot.descriptors]) if len(snapshot) else window
    coords, _ = project_2d(combined)
    tags = [("stream", -1)] * len(window) + [("memory", int(c)) for c in snapshot.cluster_ids]
    rows = [(s, c, float(p[0]), float(p[1])) for (s, c), p in zip(tags, coords)]
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("source", "cluster", "pc1", "pc2"))
            for s, c, a, b in rows:
                w.writerow((s, c, _fmt(a), _fmt(b)))
    return rows
