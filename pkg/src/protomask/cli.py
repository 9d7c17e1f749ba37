"""Command-line wiring for every pipeline stage.

Exit codes: 0 ok, 2 config error, 3 IO error, 4 numeric/validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import cluster as clustering
from . import dictionary as dictmod
from . import features, metrics, pipeline, segment
from .errors import ConfigError, FormatError, ProtomaskError, ValidationError
from .formats import PatchEmbeddingSet, read_grid, read_ppm, write_embedding_set, write_grid, write_ppm
from .labels import TissueLabelMap, read_mask, write_mask

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


def _load_label_map(path: str) -> TissueLabelMap:
    with open(path, encoding="utf-8") as fh:
        return TissueLabelMap.from_json_obj(json.load(fh))


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def cmd_synth(args) -> int:
    cfg = features.SyntheticDatasetConfig(
        image_count=args.count, image_size=args.size, class_count=args.classes,
        region_seed_count=args.region_seeds, noise_sigma=args.sigma, rng_seed=args.seed,
    )
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    images, masks = features.generate_synthetic_dataset(cfg)
    for i, (img, mask) in enumerate(zip(images, masks)):
        write_ppm(img, out / "images" / f"img_{i:04d}.ppm")
        write_mask(mask, out / "gt" / f"img_{i:04d}.pgm")
    _write_json(cfg.label_map().to_json_obj(), str(out / "label_map.json"))
    print(f"wrote {len(images)} images to {out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    images = sorted(Path(args.images).glob("*.ppm"))
    if not images:
        raise ValidationError(f"no .ppm images in {args.images}")
    grids_dir = Path(args.grids_dir)
    grids_dir.mkdir(parents=True, exist_ok=True)
    thumb_dir = Path(args.thumbnails) if args.thumbnails else None
    if thumb_dir:
        thumb_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for path in images:
        img_id = path.stem
        img = read_ppm(path)
        write_grid(features.block_featurize(img, args.block), grids_dir / f"{img_id}.egf")
        gt = read_mask(Path(args.gt_masks) / f"{img_id}.pgm") if args.gt_masks else None
        recs = features.crop_patches(img, args.patch_size, source_image_id=img_id,
                                     id_start=len(records))
        features.featurize_patches(img, recs, args.patch_size, args.block, gt_mask=gt)
        if thumb_dir:
            esf_parent = Path(args.out).resolve().parent
            for r in recs:
                tpath = thumb_dir / f"patch_{r.patch_id:06d}.ppm"
                write_ppm(img[r.y : r.y + args.patch_size, r.x : r.x + args.patch_size], tpath)
                r.thumbnail_ref = str(tpath.resolve().relative_to(esf_parent))
        records.extend(recs)
    eset = PatchEmbeddingSet(dim=features.FEATURE_DIM, records=records)
    write_embedding_set(eset, args.out)
    print(f"wrote {len(records)} patch embeddings from {len(images)} images to {args.out}")
    return EXIT_OK


def cmd_subsample(args) -> int:
    from .formats import read_embedding_set

    eset = read_embedding_set(args.input)
    sub = features.subsample_patches(eset, args.m, args.seed)
    write_embedding_set(sub, args.out)
    print(f"sampled {len(sub)} of {len(eset)} records into {args.out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .formats import read_embedding_set

    eset = read_embedding_set(args.input)
    result = clustering.cluster(eset.matrix(), args.k, restarts=args.restarts,
                                rng_seed=args.seed, max_iter=args.max_iter, tol=args.tol,
                                seeding=args.seeding)
    clustering.save_clustering(result, args.out)
    print(f"k={result.k} inertia={result.inertia:.6g} iterations={result.iterations_run}")
    return EXIT_OK


def cmd_elbow(args) -> int:
    from .formats import read_embedding_set

    lo, hi = args.range.split(":")
    eset = read_embedding_set(args.input)
    trace = clustering.elbow_select(eset.matrix(), (int(lo), int(hi)),
                                    restarts=args.restarts, rng_seed=args.seed)
    clustering.save_elbow(trace, args.out)
    print(f"selected k={trace.selected_k} over v={trace.v_values[0]}..{trace.v_values[-1]}")
    return EXIT_OK


def cmd_sample_reps(args) -> int:
    from .formats import read_embedding_set

    eset = read_embedding_set(args.embeddings)
    result = clustering.load_clustering(args.clustering)
    reps = dictmod.sample_representatives(eset, result, args.strategy, args.t, args.seed)
    _write_json({str(k): v for k, v in sorted(reps.items())}, args.out)
    print(f"sampled representatives for {result.k} clusters")
    return EXIT_OK


def cmd_oracle_label(args) -> int:
    from .formats import read_embedding_set

    eset = read_embedding_set(args.embeddings)
    result = clustering.load_clustering(args.clustering)
    label_map = _load_label_map(args.label_map)
    with open(args.reps, encoding="utf-8") as fh:
        reps = {int(k): [int(p) for p in v] for k, v in json.load(fh).items()}
    verdicts = dictmod.oracle_verdicts(eset, result, label_map, reps, args.threshold,
                                       whole_cluster=args.whole_cluster)
    dictmod.save_verdicts(verdicts, args.out)
    kept = sum(1 for v in verdicts if v.decision == dictmod.DECISION_TISSUE)
    print(f"labeled {result.k} clusters: {kept} tissue, {result.k - kept} dropped")
    return EXIT_OK


def cmd_build_dict(args) -> int:
    result = clustering.load_clustering(args.clustering)
    verdicts = dictmod.load_verdicts(args.verdicts)
    label_map = _load_label_map(args.label_map)
    d = dictmod.build_dictionary(result, verdicts, label_map)
    dictmod.save_dictionary(d, args.out)
    print(f"dictionary with {len(d)} prototypes -> {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    grid = read_grid(args.grid)
    d = dictmod.load_dictionary(args.dictionary)
    if args.mode == "dq":
        lg = segment.direct_query(grid, d)
    else:
        cq = segment.CqConfig(gamma=args.gamma, restarts=args.restarts, rng_seed=args.seed)
        lg = segment.cluster_then_query(grid, d, cq)
    mask = segment.upsample_mask(lg, args.upsample)
    write_mask(mask, args.out)
    print(f"{args.mode} mask {mask.height}x{mask.width} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred_paths = sorted(Path(args.pred).glob("*.pgm"))
    if not pred_paths:
        raise ValidationError(f"no .pgm masks in {args.pred}")
    pairs = []
    for p in pred_paths:
        gt_path = Path(args.gt) / p.name
        if not gt_path.exists():
            raise ValidationError(f"no ground truth for {p.name}")
        pred, gt = read_mask(p), read_mask(gt_path)
        h, w = pred.height, pred.width
        from .labels import ClassMask

        pairs.append((pred, ClassMask(pixels=gt.pixels[:h, :w], label_map=gt.label_map)))
    report = metrics.evaluate_dataset(pairs)
    metrics.save_report(report, args.out)
    print(f"macro accuracy {report.macro_pixel_accuracy:.4f}, macro Dice {report.macro_dice:.4f}")
    return EXIT_OK


def _apply_override(obj: dict, key: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    target = obj
    for p in parts[:-1]:
        target = target.setdefault(p, {})
        if not isinstance(target, dict):
            raise ConfigError(f"cannot override through non-object key {p!r}")
    target[parts[-1]] = value


def cmd_pipeline(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: not valid JSON ({e})") from e
    for override in args.set or []:
        if "=" not in override:
            raise ConfigError(f"--set wants key=value, got {override!r}")
        key, raw = override.split("=", 1)
        _apply_override(obj, key, raw)
    cfg = pipeline.PipelineConfig.from_json_obj(obj)
    manifest = pipeline.run_pipeline(cfg)
    report_path = Path(cfg.out_dir) / "report.json"
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    print(f"pipeline done: macro accuracy {report['macro_pixel_accuracy']:.4f}, "
          f"macro Dice {report['macro_dice']:.4f} ({len(manifest['stages'])} stages)")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import LabelingService, run_server

    service = LabelingService(Path(args.data_dir))
    print(f"labeling service on http://{args.host}:{args.port} (data: {args.data_dir})")
    run_server(service, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protomask",
                                description="prototype-dictionary segmentation pipeline")
    p.add_argument("--threads", type=int, metavar="N",
                   help="cap numeric worker threads (BLAS pools)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--region-seeds", type=int, default=4)
    s.add_argument("--sigma", type=float, default=8.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featurize", help="grids + patch embeddings from PPM images")
    s.add_argument("--images", required=True)
    s.add_argument("--gt-masks")
    s.add_argument("--grids-dir", required=True)
    s.add_argument("--out", required=True, help="embedding set file (.esf)")
    s.add_argument("--thumbnails")
    s.add_argument("--patch-size", type=int, default=features.DEFAULT_PATCH)
    s.add_argument("--block", type=int, default=features.DEFAULT_BLOCK)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("subsample", help="uniform subset of an embedding set")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("-m", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("cluster", help="k-means++ clustering of an embedding set")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("-k", type=int, required=True)
    s.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iter", type=int, default=clustering.DEFAULT_MAX_ITER)
    s.add_argument("--tol", type=float, default=clustering.DEFAULT_TOL)
    s.add_argument("--seeding", choices=["kmeans++", "random"], default="kmeans++")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("elbow", help="inertia curve over k candidates + elbow pick")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--range", default="2:50", help="inclusive lo:hi")
    s.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_elbow)

    s = sub.add_parser("sample-reps", help="representative patches per cluster")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--clustering", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strategy", choices=["central", "equidistant"], default="central")
    s.add_argument("-t", type=int, default=dictmod.DEFAULT_T)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample_reps)

    s = sub.add_parser("oracle-label", help="simulated rater over representatives")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--clustering", required=True)
    s.add_argument("--reps", required=True)
    s.add_argument("--label-map", required=True)
    s.add_argument("--threshold", type=float, default=dictmod.DEFAULT_PURITY_THRESHOLD)
    s.add_argument("--whole-cluster", action="store_true",
                   help="rate every member rather than the sampled representatives")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_oracle_label)

    s = sub.add_parser("build-dict", help="prototype dictionary from verdicts")
    s.add_argument("--clustering", required=True)
    s.add_argument("--verdicts", required=True)
    s.add_argument("--label-map", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_dict)

    s = sub.add_parser("segment", help="query a grid into a class mask")
    s.add_argument("--grid", required=True)
    s.add_argument("--dict", dest="dictionary", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["dq", "cq"], default="cq")
    s.add_argument("--gamma", type=float, default=segment.DEFAULT_GAMMA)
    s.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--upsample", type=int, default=segment.DEFAULT_UPSAMPLE)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("evaluate", help="accuracy/Dice report over mask directories")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pipeline", help="run every stage from one JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value (dotted keys, JSON values)")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("serve", help="HTTP labeling session server")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.set_defaults(func=cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProtomaskError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
