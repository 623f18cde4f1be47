"""Command-line entry point: ``mcm {simulate,clusterability,ablate,scaling,project}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .descriptors import Kind
from .harness import (
    ABLATION_AXES,
    ExperimentConfig,
    export_projection,
    run_ablate,
    run_clusterability,
    run_scaling,
    run_simulate,
    make_memory,
    simulate,
    stream_trace,
)
from .memory import MemorySnapshot


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", type=Path, help="output directory (default: config out_dir)")
    common.add_argument("--variant", choices=("mcm", "scm"), help="memory variant")
    common.add_argument("--steps", type=int, help="override stream total_steps")
    common.add_argument("--workers", type=int, help="process pool size for sweeps")

    p = argparse.ArgumentParser(prog="mcm", description="Multi-cluster memory experiments on a synthetic stream.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one memory over the stream and log diagnostics")
    s.add_argument("--paired", action="store_true", help="run mcm and scm in lockstep on the same stream")

    c = sub.add_parser("clusterability", parents=[common], help="sliding-window BIC K* per descriptor kind")
    c.add_argument("--kinds", nargs="+", default=[k.value for k in Kind], choices=[k.value for k in Kind])
    c.add_argument("--window", type=int, default=600)
    c.add_argument("--stride", type=int, default=100)
    c.add_argument("--k-max", type=int, default=10)

    a = sub.add_parser("ablate", parents=[common], help="sweep one memory parameter")
    a.add_argument("--axis", required=True, choices=ABLATION_AXES)
    a.add_argument("--values", nargs="+", required=True)

    g = sub.add_parser("scaling", parents=[common], help="SCM(T) against MCM(T/N x N)")
    g.add_argument("--totals", nargs="+", type=int, default=[64, 128, 192, 256, 320])

    j = sub.add_parser("project", parents=[common], help="2-D PCA of stream window plus memory contents")
    j.add_argument("--snapshot", type=Path, help="memory snapshot JSON; default: simulate and snapshot at the end")
    j.add_argument("--window", type=int, default=640, help="trailing stream descriptors to include")
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.variant is not None:
        cfg = dataclasses.replace(cfg, variant=args.variant)
    if args.out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(args.out_dir))
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, stream=dataclasses.replace(cfg.stream, total_steps=args.steps))
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def _parse_value(axis: str, v: str):
    if axis == "tau":
        return float(v)
    if axis == "kmax":
        return int(v)
    return v


def _project(cfg: ExperimentConfig, args) -> Path:
    out = Path(cfg.out_dir)
    if args.snapshot:
        snap = MemorySnapshot.from_json(args.snapshot.read_text())
    else:
        mem = make_memory(cfg, cfg.variant)
        simulate(dataclasses.replace(cfg, diagnostics=dataclasses.replace(cfg.diagnostics, stride=10**9)),
                 memories={cfg.variant: mem})
        snap = mem.snapshot()
        out.mkdir(parents=True, exist_ok=True)
        (out / "snapshot.json").write_text(snap.to_json() + "\n")
    trace = stream_trace(cfg, cfg.memory.kind, per_step=1)
    window = trace[-args.window :] if len(trace) else np.zeros((0, snap.descriptors.shape[1]))
    path = out / "projection.csv"
    export_projection(snap, window, path)
    return path


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = Path(cfg.out_dir)
        if args.command == "simulate":
            variants = ("mcm", "scm") if args.paired else (cfg.variant,)
            runs = run_simulate(cfg, variants)
            for v, r in runs.items():
                print(f"{v}: {len(r.rows)} rows, mean imbalance {r.mean('imbalance'):.3f}, "
                      f"mean energy {r.mean('energy_distance'):.4f}")
            print(f"wrote {out / 'quality.csv'}")
        elif args.command == "clusterability":
            reports = run_clusterability(cfg, args.kinds, args.window, args.stride, range(1, args.k_max + 1), out)
            for kind, rep in reports.items():
                print(f"{kind}: mean K* {rep.mean_k:.2f} (sd {rep.std_k:.2f}) over {len(rep.k_star)} windows")
            print(f"wrote {out / 'clusterability.csv'}")
        elif args.command == "ablate":
            rows = run_ablate(cfg, args.axis, [_parse_value(args.axis, v) for v in args.values], out)
            for r in rows:
                print(f"{r['axis']}={r['value']}: imbalance {r['imbalance']:.3f}, clusters {r['mean_clusters']:.2f}, "
                      f"comparisons/merge {r['comparisons_per_merge']:.1f}")
            print(f"wrote {out / f'ablate_{args.axis}.csv'}")
        elif args.command == "scaling":
            rows = run_scaling(cfg, args.totals, out)
            for r in rows:
                print(f"T={r['total']} {r['variant']}: energy {r['energy_distance']:.4f}")
            print(f"wrote {out / 'scaling.csv'}")
        else:
            print(f"wrote {_project(cfg, args)}")
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"mcm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
