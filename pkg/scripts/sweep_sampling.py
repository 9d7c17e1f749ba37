#!/usr/bin/env python3
"""Compare representative-sampling strategies (central vs equidistant) over
a range of t, measuring final macro Dice on the synthetic pipeline.
"""

import argparse
import json
import tempfile
from pathlib import Path

from protomask.features import SyntheticDatasetConfig
from protomask.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-values", default="1,3,5,10,15")
    ap.add_argument("--out", default="runs/sweep_sampling.json")
    args = ap.parse_args()

    rows = []
    for strategy in ("central", "equidistant"):
        for t in (int(v) for v in args.t_values.split(",")):
            work = Path(tempfile.mkdtemp(prefix=f"sweep_{strategy}_t{t}_"))
            cfg = PipelineConfig(
                out_dir=str(work),
                synth=SyntheticDatasetConfig(image_count=20, image_size=256, class_count=4,
                                             region_seed_count=4, noise_sigma=8.0, rng_seed=11),
                patch_size=64, subsample_m=20000, k=12, restarts=8,
                t=t, sampling_strategy=strategy, mode="cq", rng_seed=5,
            )
            try:
                run_pipeline(cfg)
                report = json.loads((work / "report.json").read_text())
                rows.append({"strategy": strategy, "t": t, "macro_dice": report["macro_dice"]})
                print(f"{strategy:<12} t={t:<3d} dice={report['macro_dice']:.4f}")
            except Exception as e:
                rows.append({"strategy": strategy, "t": t, "error": str(e)})
                print(f"{strategy:<12} t={t:<3d} failed: {e}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2) + "\n")
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
