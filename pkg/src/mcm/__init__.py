"""Multi-cluster replay memory for test-time adaptation under shifting
corruptions, with a synthetic stream and GMM-based memory diagnostics."""

from .descriptors import Kind, Metric, describe_batch
from .diagnostics import MemoryQuality, clusterability, energy_distance, fit_reference, memory_quality
from .gmm import FitConfig, GmmModel, fit_em, select_k
from .harness import DiagnosticsConfig, ExperimentConfig, run_simulate, simulate
from .memory import MemoryParams, MemorySample, MemorySnapshot, MultiClusterMemory, SingleClusterMemory
from .stream import Stream, StreamConfig

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsConfig", "ExperimentConfig", "FitConfig", "GmmModel", "Kind", "MemoryParams", "MemoryQuality",
    "MemorySample", "MemorySnapshot", "Metric", "MultiClusterMemory", "SingleClusterMemory", "Stream",
    "StreamConfig", "clusterability", "describe_batch", "energy_distance", "fit_em", "fit_reference",
    "memory_quality", "run_simulate", "select_k", "simulate",
]
