#!/usr/bin/env python3
"""Plain K-Means vs K-Means++ seeding: wall-clock and inertia/Dice.

Times both seedings on a 20000-point clustering problem, then runs the
synthetic pipeline under each to compare downstream mask quality.
"""

import argparse
import json
import tempfile
import time
from pathlib import Path

import numpy as np

from protomask.cluster import cluster
from protomask.features import SyntheticDatasetConfig
from protomask.pipeline import PipelineConfig, run_pipeline
from protomask.rng import Splitmix64


def timing_benchmark(seeding: str, n=20000, dim=64, k=30, restarts=8):
    g = Splitmix64(3)
    centers = g.fill_gaussian(k * dim).reshape(k, dim)
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    idx = g.fill_u64(n) % k
    pts = centers[idx] + 0.25 * g.fill_gaussian(n * dim).reshape(n, dim)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    start = time.perf_counter()
    res = cluster(pts.astype(np.float32), k, restarts=restarts, rng_seed=9, seeding=seeding)
    return time.perf_counter() - start, res.inertia


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep_seeding.json")
    args = ap.parse_args()

    rows = []
    for seeding in ("random", "kmeans++"):
        seconds, inertia = timing_benchmark(seeding)
        work = Path(tempfile.mkdtemp(prefix=f"seeding_{seeding.strip('+')}_"))
        cfg = PipelineConfig(
            out_dir=str(work),
            synth=SyntheticDatasetConfig(image_count=20, image_size=256, class_count=4,
                                         region_seed_count=4, noise_sigma=8.0, rng_seed=11),
            patch_size=64, subsample_m=20000, k=12, restarts=8,
            seeding=seeding, mode="cq", rng_seed=5,
        )
        run_pipeline(cfg)
        report = json.loads((work / "report.json").read_text())
        rows.append({"seeding": seeding, "bench_seconds": seconds,
                     "bench_inertia": inertia, "macro_dice": report["macro_dice"]})
        print(f"{seeding:<9} bench {seconds:6.2f}s inertia={inertia:10.1f} "
              f"dice={report['macro_dice']:.4f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2) + "\n")
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
