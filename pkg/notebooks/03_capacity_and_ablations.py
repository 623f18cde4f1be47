"""
Capacity, threshold and merge strategy
======================================

Equal-budget comparison (a pool of T against T/64 clusters of 64) and two
one-axis sweeps over the memory's own knobs.
"""

from mcm.harness import ExperimentConfig, run_ablate, run_scaling

cfg = ExperimentConfig(seed=0, out_dir="runs/sweeps")

rows = run_scaling(cfg, [64, 128, 192, 256, 320], cfg.out_dir)
print("total  variant  energy")
for r in rows:
    print(f"{r['total']:5d}  {r['variant']:7s}  {r['energy_distance']:.4f}")

# %%
# Coarser thresholds open fewer clusters.
for r in run_ablate(cfg, "tau", [0.1, 0.3, 0.5, 0.7], cfg.out_dir):
    print(f"tau={r['value']:4s} clusters {r['mean_clusters']:.2f}  imbalance {r['imbalance']:.2f}  "
          f"energy {r['energy_distance']:.4f}")

# %%
# Same merges, different bookkeeping: adjacent merging looks at K-1 pairs,
# the global search at K(K-1)/2.
for r in run_ablate(cfg, "strategy", ["acc", "gcc", "smallest", "lru"], cfg.out_dir):
    print(f"{r['value']:9s} comparisons/merge {r['comparisons_per_merge']:.0f}  imbalance {r['imbalance']:.2f}")
