"""
How many modes does the stream have?
====================================

Builds the default corruption stream, looks at where each schedule segment
lands in channel-statistics space, then runs the sliding-window BIC search
for each descriptor kind.

Run with ``python notebooks/01_stream_and_clusterability.py``.
"""

import numpy as np

from mcm.descriptors import Kind, channel_stats_batch
from mcm.harness import ExperimentConfig, run_clusterability
from mcm.stream import Stream

cfg = ExperimentConfig(seed=0)
stream = Stream(cfg.stream)

# one centroid per schedule segment, from every 10th batch
names = [f"{s.spec.kind}{s.spec.severity}" for s in cfg.stream.schedule]
cents = []
for mode, seg in enumerate(cfg.stream.schedule):
    start = 100 * mode
    descs = [channel_stats_batch(stream.batch_arrays(start + t)[0]) for t in range(0, seg.dwell, 10)]
    cents.append(np.concatenate(descs).mean(axis=0))
cents = np.array(cents)

print("segment centroids (mean, var per channel):")
for n, c in zip(names, cents):
    print(f"  {n:16s}", np.array2string(c, precision=3))

# every pair is farther apart than the assignment threshold
gaps = np.linalg.norm(cents[:, None] - cents[None], axis=2)
print("\npairwise centroid distances:")
print(np.array2string(gaps, precision=2))
print("smallest gap:", gaps[np.triu_indices(len(cents), 1)].min().round(3), "vs tau", cfg.memory.tau)

# %%
# Sliding windows of 600 one-per-step descriptors, stride 100.
reports = run_clusterability(cfg)
for kind in Kind:
    rep = reports[kind.value]
    print(f"{kind.value:16s} K* per window {rep.k_star}  mean {rep.mean_k:.1f}")
