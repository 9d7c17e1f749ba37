"""End-to-end experiment runner: synth -> featurize -> subsample -> cluster
-> sample/label -> dictionary -> segment -> evaluate, with a manifest.

The manifest records config, per-stage wall-clock, and a sha256 digest per
output file, so reruns are diffable stage by stage. Every stage seed is
derived from the master seed unless explicitly overridden.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cluster as clustering
from . import dictionary as dictmod
from . import features, metrics, segment
from .errors import ConfigError, ProtomaskError, ValidationError
from .formats import PatchEmbeddingSet, read_grid, read_ppm, write_embedding_set, write_grid, write_ppm
from .labels import ClassMask, read_mask, write_mask
from .rng import derive_seed

STAGE_SALTS = {"synth": 1, "subsample": 2, "cluster": 3, "sampling": 4, "segment": 5}


@dataclass
class PipelineConfig:
    out_dir: str
    synth: features.SyntheticDatasetConfig | None = None
    images_dir: str | None = None
    gt_masks_dir: str | None = None
    patch_size: int = features.DEFAULT_PATCH
    block: int = features.DEFAULT_BLOCK
    subsample_m: int = 20000
    k: int | None = None
    elbow_range: tuple[int, int] = (2, 50)
    restarts: int = clustering.DEFAULT_RESTARTS
    seeding: str = "kmeans++"
    t: int = dictmod.DEFAULT_T
    sampling_strategy: str = "central"
    purity_threshold: float = dictmod.DEFAULT_PURITY_THRESHOLD
    gamma: float = segment.DEFAULT_GAMMA
    mode: str = "cq"
    rng_seed: int = 0
    stage_seeds: dict[str, int] = field(default_factory=dict)
    write_thumbnails: bool = False

    def __post_init__(self):
        if self.synth is None and self.images_dir is None:
            raise ConfigError("either a synth block or images_dir is required")
        if self.images_dir is not None and self.gt_masks_dir is None:
            raise ConfigError("images_dir requires gt_masks_dir (oracle labeling and eval)")
        if self.k is not None and self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.mode not in ("dq", "cq"):
            raise ConfigError(f"mode must be dq or cq, got {self.mode!r}")
        if self.sampling_strategy not in ("central", "equidistant"):
            raise ConfigError(f"unknown sampling strategy {self.sampling_strategy!r}")
        if self.subsample_m < 1:
            raise ConfigError("subsample_m must be >= 1")
        if not 0 < self.purity_threshold < 1:
            raise ConfigError("purity_threshold must be in (0, 1)")
        if self.patch_size % self.block != 0:
            raise ConfigError("patch_size must be a multiple of block")
        unknown = set(self.stage_seeds) - set(STAGE_SALTS)
        if unknown:
            raise ConfigError(f"unknown stage seeds {sorted(unknown)}")

    def seed_for(self, stage: str) -> int:
        if stage in self.stage_seeds:
            return self.stage_seeds[stage]
        return derive_seed(self.rng_seed, STAGE_SALTS[stage])

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "synth" in obj and obj["synth"] is not None:
            synth = dict(obj["synth"])
            if "colors" in synth:
                synth["colors"] = [tuple(c) for c in synth["colors"]]
            obj["synth"] = features.SyntheticDatasetConfig(**synth)
        if "elbow_range" in obj:
            lo, hi = obj["elbow_range"]
            obj["elbow_range"] = (int(lo), int(hi))
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["elbow_range"] = list(self.elbow_range)
        return obj


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return PipelineConfig.from_json_obj(obj)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Manifest:
    def __init__(self, cfg: PipelineConfig, root: Path):
        self.root = root
        self.obj: dict = {"tool_version": 1, "config": cfg.to_json_obj(), "stages": []}

    def stage(self, name: str):
        return _StageTimer(self, name)

    def write(self) -> Path:
        path = self.root / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


class _StageTimer:
    def __init__(self, manifest: _Manifest, name: str):
        self.manifest = manifest
        self.name = name
        self.outputs: list[Path] = []

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def add(self, *paths: str | Path):
        self.outputs.extend(Path(p) for p in paths)

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            return False
        digests = {
            str(p.relative_to(self.manifest.root)): _sha256(p)
            for p in sorted(self.outputs)
        }
        self.manifest.obj["stages"].append(
            {
                "name": self.name,
                "seconds": round(time.perf_counter() - self._start, 6),
                "outputs": digests,
            }
        )
        return False


def _tag_stage(stage: str, e: Exception) -> ProtomaskError:
    kind = e.__class__ if isinstance(e, ProtomaskError) else ValidationError
    return kind(f"stage {stage}: {e}")


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage, write all artifacts under cfg.out_dir, return the
    manifest object. Any stage failure raises with the stage name tagged."""
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg, root)
    stage = "setup"
    try:
        # ---- source images + ground truth ------------------------------
        stage = "synth"
        images: list[np.ndarray] = []
        gt_masks: list[ClassMask] = []
        image_ids: list[str] = []
        if cfg.synth is not None:
            with manifest.stage("synth") as st:
                imgs, masks = features.generate_synthetic_dataset(cfg.synth)
                label_map = cfg.synth.label_map()
                (root / "images").mkdir(exist_ok=True)
                (root / "gt").mkdir(exist_ok=True)
                for i, (img, mask) in enumerate(zip(imgs, masks)):
                    img_id = f"img_{i:04d}"
                    image_ids.append(img_id)
                    images.append(img)
                    gt_masks.append(mask)
                    write_ppm(img, root / "images" / f"{img_id}.ppm")
                    write_mask(mask, root / "gt" / f"{img_id}.pgm")
                    st.add(root / "images" / f"{img_id}.ppm",
                           root / "gt" / f"{img_id}.pgm",
                           root / "gt" / f"{img_id}.pgm.json")
                lm_path = root / "label_map.json"
                with open(lm_path, "w", encoding="utf-8") as fh:
                    json.dump(label_map.to_json_obj(), fh)
                    fh.write("\n")
                st.add(lm_path)
        else:
            with manifest.stage("load") as st:
                img_paths = sorted(Path(cfg.images_dir).glob("*.ppm"))  # type: ignore[arg-type]
                if not img_paths:
                    raise ValidationError(f"no .ppm images in {cfg.images_dir}")
                label_map = None
                for p in img_paths:
                    img_id = p.stem
                    mask_path = Path(cfg.gt_masks_dir) / f"{img_id}.pgm"  # type: ignore[arg-type]
                    mask = read_mask(mask_path)
                    label_map = mask.label_map if label_map is None else label_map
                    if mask.label_map.entries != label_map.entries:
                        raise ValidationError("inconsistent label maps across gt masks")
                    image_ids.append(img_id)
                    images.append(read_ppm(p))
                    gt_masks.append(mask)
                lm_path = root / "label_map.json"
                with open(lm_path, "w", encoding="utf-8") as fh:
                    json.dump(label_map.to_json_obj(), fh)
                    fh.write("\n")
                st.add(lm_path)

        # ---- featurize: grids + patch embeddings ------------------------
        stage = "featurize"
        with manifest.stage("featurize") as st:
            (root / "grids").mkdir(exist_ok=True)
            records = []
            thumb_dir = root / "thumbnails"
            if cfg.write_thumbnails:
                thumb_dir.mkdir(exist_ok=True)
            for img_id, img, mask in zip(image_ids, images, gt_masks):
                grid = features.block_featurize(img, cfg.block)
                gpath = root / "grids" / f"{img_id}.egf"
                write_grid(grid, gpath)
                st.add(gpath)
                recs = features.crop_patches(img, cfg.patch_size,
                                             source_image_id=img_id, id_start=len(records))
                features.featurize_patches(img, recs, cfg.patch_size, cfg.block, gt_mask=mask)
                if cfg.write_thumbnails:
                    for r in recs:
                        tpath = thumb_dir / f"patch_{r.patch_id:06d}.ppm"
                        write_ppm(img[r.y : r.y + cfg.patch_size, r.x : r.x + cfg.patch_size], tpath)
                        r.thumbnail_ref = str(tpath.relative_to(root))
                        st.add(tpath)
                records.extend(recs)
            eset = PatchEmbeddingSet(dim=features.FEATURE_DIM, records=records)
            write_embedding_set(eset, root / "patches.esf")
            st.add(root / "patches.esf", root / "patches.esf.jsonl")

        # ---- subsample ---------------------------------------------------
        stage = "subsample"
        with manifest.stage("subsample") as st:
            m = min(cfg.subsample_m, len(eset))
            sub = features.subsample_patches(eset, m, cfg.seed_for("subsample"))
            write_embedding_set(sub, root / "subsample.esf")
            st.add(root / "subsample.esf", root / "subsample.esf.jsonl")

        # ---- cluster (fixed k or elbow) ----------------------------------
        stage = "cluster"
        with manifest.stage("cluster") as st:
            seed = cfg.seed_for("cluster")
            x = sub.matrix()
            if cfg.k is None:
                lo, hi = cfg.elbow_range
                trace = clustering.elbow_select(x, (lo, min(hi, len(sub))),
                                                restarts=cfg.restarts, rng_seed=seed,
                                                seeding=cfg.seeding)
                clustering.save_elbow(trace, root / "elbow.json")
                st.add(root / "elbow.json")
                chosen_k = trace.selected_k
            else:
                chosen_k = cfg.k
            result = clustering.cluster(x, chosen_k, restarts=cfg.restarts, rng_seed=seed,
                                        seeding=cfg.seeding)
            clustering.save_clustering(result, root / "clustering.json")
            st.add(root / "clustering.json")

        # ---- representatives + oracle labels + dictionary ----------------
        stage = "label"
        with manifest.stage("label") as st:
            reps = dictmod.sample_representatives(sub, result, cfg.sampling_strategy,
                                                  cfg.t, cfg.seed_for("sampling"))
            with open(root / "reps.json", "w", encoding="utf-8") as fh:
                json.dump({str(k): v for k, v in sorted(reps.items())}, fh)
                fh.write("\n")
            verdicts = dictmod.oracle_verdicts(sub, result, label_map, reps,
                                               cfg.purity_threshold)
            dictmod.save_verdicts(verdicts, root / "verdicts.json")
            dictionary = dictmod.build_dictionary(result, verdicts, label_map)
            dictmod.save_dictionary(dictionary, root / "dictionary.json")
            st.add(root / "reps.json", root / "verdicts.json", root / "dictionary.json")

        # ---- segment every image -----------------------------------------
        stage = "segment"
        with manifest.stage("segment") as st:
            (root / "pred").mkdir(exist_ok=True)
            seg_seed = cfg.seed_for("segment")
            preds = []
            for i, img_id in enumerate(image_ids):
                grid = read_grid(root / "grids" / f"{img_id}.egf")
                if cfg.mode == "dq":
                    lg = segment.direct_query(grid, dictionary)
                else:
                    cq = segment.CqConfig(gamma=cfg.gamma, restarts=cfg.restarts,
                                          rng_seed=derive_seed(seg_seed, i))
                    lg = segment.cluster_then_query(grid, dictionary, cq)
                mask = segment.upsample_mask(lg, cfg.block)
                preds.append(mask)
                write_mask(mask, root / "pred" / f"{img_id}.pgm")
                st.add(root / "pred" / f"{img_id}.pgm", root / "pred" / f"{img_id}.pgm.json")

        # ---- evaluate ------------------------------------------------------
        stage = "evaluate"
        with manifest.stage("evaluate") as st:
            pairs = []
            for pred, gt in zip(preds, gt_masks):
                # prediction covers full blocks only; trim gt remainders to match
                h, w = pred.height, pred.width
                pairs.append((pred, ClassMask(pixels=gt.pixels[:h, :w], label_map=gt.label_map)))
            report = metrics.evaluate_dataset(pairs)
            metrics.save_report(report, root / "report.json")
            st.add(root / "report.json")
    except ProtomaskError as e:
        raise _tag_stage(stage, e) from e

    manifest.write()
    return manifest.obj
