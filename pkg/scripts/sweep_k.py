#!/usr/bin/env python3
"""Sweep the cluster count k on the synthetic pipeline and report macro Dice.

Reproduces the robustness-to-k picture: quality collapses for very small k
(too few prototypes to cover the tissue classes) and plateaus once k grows
past the class structure.
"""

import argparse
import json
import tempfile
from pathlib import Path

from protomask.features import SyntheticDatasetConfig
from protomask.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-values", default="2,4,6,8,10,12,15,20,25,30")
    ap.add_argument("--out", default="runs/sweep_k.json")
    ap.add_argument("--keep-artifacts", action="store_true")
    args = ap.parse_args()

    ks = [int(v) for v in args.k_values.split(",")]
    rows = []
    for k in ks:
        work = Path(tempfile.mkdtemp(prefix=f"sweep_k{k}_")) if not args.keep_artifacts \
            else Path(f"runs/sweep_k/{k}")
        cfg = PipelineConfig(
            out_dir=str(work),
            synth=SyntheticDatasetConfig(image_count=20, image_size=256, class_count=4,
                                         region_seed_count=4, noise_sigma=8.0, rng_seed=11),
            patch_size=64, subsample_m=20000, k=k, restarts=8, mode="cq", rng_seed=5,
        )
        try:
            run_pipeline(cfg)
            report = json.loads((work / "report.json").read_text())
            rows.append({"k": k, "macro_dice": report["macro_dice"],
                         "macro_pixel_accuracy": report["macro_pixel_accuracy"]})
            print(f"k={k:<3d} dice={report['macro_dice']:.4f} acc={report['macro_pixel_accuracy']:.4f}")
        except Exception as e:  # small k can legitimately fail (all clusters mixed)
            rows.append({"k": k, "error": str(e)})
            print(f"k={k:<3d} failed: {e}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2) + "\n")
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
