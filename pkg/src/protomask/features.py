"""Patch cropping, the built-in block featurizer, and synthetic data.

The featurizer stands in for a learned encoder while preserving its spatial
contract: one descriptor per 32x32 block, so an image maps to an
(H/32) x (W/32) grid. Remainder pixels beyond the last full block or patch
are discarded.

Descriptor layout (before zero-padding to FEATURE_DIM and L2-normalizing),
computed on intensities scaled to [0, 1]:

  [0:3]    per-channel mean
  [3:6]    per-channel population std
  [6:30]   8-bin per-channel histogram fractions (R bins, G bins, B bins);
           bin(v) = min(floor(v * 8), 7)
  [30]     gradient energy: mean squared forward difference of the
           grayscale block (gray = channel mean), horizontal + vertical
  [31:64]  zeros
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .formats import EmbeddingGrid, PatchEmbeddingSet, PatchRecord
from .labels import ClassMask, TissueLabelMap
from .rng import Splitmix64, derive_seed

FEATURE_DIM = 64
HIST_BINS = 8
DEFAULT_BLOCK = 32
DEFAULT_PATCH = 128


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValidationError("image must be uint8 H x W x 3")
    return image


def crop_patches(image: np.ndarray, patch_size: int = DEFAULT_PATCH, *,
                 source_image_id: str = "", id_start: int = 0) -> list[PatchRecord]:
    """Non-overlapping row-major tiling; trailing remainders are dropped."""
    image = _check_image(image)
    h, w = image.shape[:2]
    if patch_size < 1:
        raise ValidationError("patch_size must be >= 1")
    if h < patch_size or w < patch_size:
        raise ValidationError(f"image {h}x{w} smaller than one {patch_size} patch")
    records = []
    pid = id_start
    for y in range(0, h - patch_size + 1, patch_size):
        for x in range(0, w - patch_size + 1, patch_size):
            records.append(PatchRecord(patch_id=pid, source_image_id=source_image_id, x=x, y=y))
            pid += 1
    return records


def _block_stack(image: np.ndarray, block: int) -> np.ndarray:
    """(h, w, block, block, 3) float64 view of the image's full blocks, scaled to [0,1]."""
    h, w = image.shape[0] // block, image.shape[1] // block
    if h < 1 or w < 1:
        raise ValidationError(f"image smaller than one {block}x{block} block")
    trimmed = image[: h * block, : w * block].astype(np.float64) / 255.0
    return trimmed.reshape(h, block, w, block, 3).transpose(0, 2, 1, 3, 4)


def block_featurize(image: np.ndarray, block: int = DEFAULT_BLOCK) -> EmbeddingGrid:
    """One unit-norm descriptor per full block of the image."""
    image = _check_image(image)
    blocks = _block_stack(image, block)
    h, w = blocks.shape[:2]
    npix = block * block

    feats = np.zeros((h, w, FEATURE_DIM), dtype=np.float64)
    feats[:, :, 0:3] = blocks.mean(axis=(2, 3))
    feats[:, :, 3:6] = blocks.std(axis=(2, 3))

    bins = np.minimum(np.floor(blocks * HIST_BINS), HIST_BINS - 1).astype(np.int64)
    # flat index: ((block_row*w + block_col)*3 + channel)*HIST_BINS + bin
    cell = np.arange(h * w).reshape(h, w, 1, 1, 1)
    chan = np.arange(3).reshape(1, 1, 1, 1, 3)
    flat = (cell * 3 + chan) * HIST_BINS + bins
    counts = np.bincount(flat.ravel(), minlength=h * w * 3 * HIST_BINS)
    feats[:, :, 6:30] = counts.reshape(h, w, 3 * HIST_BINS) / npix

    gray = blocks.mean(axis=4)
    dx = np.diff(gray, axis=3)
    dy = np.diff(gray, axis=2)
    nterms = dx.shape[2] * dx.shape[3] + dy.shape[2] * dy.shape[3]
    if nterms:
        energy = ((dx**2).sum(axis=(2, 3)) + (dy**2).sum(axis=(2, 3))) / nterms
        feats[:, :, 30] = energy

    norms = np.linalg.norm(feats, axis=2, keepdims=True)
    # histogram fractions sum to 1 per channel, so the norm is never zero
    feats /= norms
    return EmbeddingGrid(data=feats.astype(np.float32))


def patch_embed(image: np.ndarray, x: int, y: int, patch_size: int = DEFAULT_PATCH,
                block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Patch embedding: normalized mean of the patch's block descriptors."""
    image = _check_image(image)
    h, w = image.shape[:2]
    if patch_size % block != 0:
        raise ValidationError(f"patch_size {patch_size} not a multiple of block {block}")
    if x < 0 or y < 0 or x + patch_size > w or y + patch_size > h:
        raise ValidationError(f"patch at ({x},{y}) size {patch_size} exceeds {h}x{w} image")
    grid = block_featurize(image[y : y + patch_size, x : x + patch_size], block)
    mean = grid.cells().astype(np.float64).mean(axis=0)
    return (mean / np.linalg.norm(mean)).astype(np.float32)


def featurize_patches(image: np.ndarray, records: list[PatchRecord],
                      patch_size: int = DEFAULT_PATCH, block: int = DEFAULT_BLOCK,
                      gt_mask: ClassMask | None = None) -> None:
    """Fill embeddings (and gt proportions, when a mask is given) in place."""
    for r in records:
        r.embedding = patch_embed(image, r.x, r.y, patch_size, block)
        if gt_mask is not None:
            r.gt_proportions = patch_proportions(gt_mask, r.x, r.y, patch_size)


def patch_proportions(mask: ClassMask, x: int, y: int, patch_size: int) -> dict[int, float]:
    """Per-class pixel fractions of the mask under the patch window."""
    window = mask.pixels[y : y + patch_size, x : x + patch_size]
    if window.shape != (patch_size, patch_size):
        raise ValidationError("patch window exceeds mask bounds")
    total = window.size
    counts = np.bincount(window.ravel(), minlength=len(mask.label_map))
    return {int(c): float(counts[c]) / total for c in range(len(mask.label_map)) if counts[c]}


def subsample_patches(eset: PatchEmbeddingSet, m: int, rng_seed: int) -> PatchEmbeddingSet:
    """m records uniformly without replacement; deterministic per seed."""
    n = len(eset)
    if not 1 <= m <= n:
        raise ValidationError(f"cannot subsample {m} of {n} records")
    picks = Splitmix64(rng_seed).sample_indices(n, m)
    return PatchEmbeddingSet(dim=eset.dim, records=[eset.records[i] for i in picks])


DEFAULT_PALETTE = [
    (200, 60, 60), (60, 180, 75), (55, 90, 210), (230, 200, 50),
    (150, 60, 200), (70, 200, 200), (230, 130, 40), (120, 120, 120),
    (245, 245, 245), (30, 30, 30), (160, 220, 60), (200, 70, 150),
    (40, 140, 100), (100, 60, 20), (180, 180, 240), (90, 30, 60),
]


@dataclass
class SyntheticDatasetConfig:
    """Nearest-seed region images with per-class colors and pixel noise."""

    image_count: int = 20
    image_size: int = 256
    class_count: int = 4
    region_seed_count: int = 4
    colors: list[tuple[int, int, int]] = field(default_factory=list)
    noise_sigma: float = 8.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.class_count < 1 or self.class_count > 16:
            raise ConfigError(f"class_count must be in [1, 16], got {self.class_count}")
        if self.image_count < 1 or self.image_size < 1:
            raise ConfigError("image_count and image_size must be >= 1")
        if self.region_seed_count < 1:
            raise ConfigError("region_seed_count must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not self.colors:
            self.colors = [DEFAULT_PALETTE[i] for i in range(self.class_count)]
        if len(self.colors) != self.class_count:
            raise ConfigError(f"need {self.class_count} colors, got {len(self.colors)}")
        arr = np.asarray(self.colors, dtype=np.float64)
        for i in range(len(arr)):
            for j in range(i + 1, len(arr)):
                sep = float(np.linalg.norm(arr[i] - arr[j]))
                if sep <= 4.0 * self.noise_sigma:
                    raise ConfigError(
                        f"colors {i} and {j} separated by {sep:.1f}, "
                        f"need > {4.0 * self.noise_sigma:.1f} (4 sigma)"
                    )

    def label_map(self) -> TissueLabelMap:
        return TissueLabelMap.from_names([f"class_{i}" for i in range(self.class_count)])


def generate_synthetic_dataset(cfg: SyntheticDatasetConfig) -> tuple[list[np.ndarray], list[ClassMask]]:
    """Images plus ground-truth masks, fully determined by cfg.rng_seed."""
    label_map = cfg.label_map()
    size = cfg.image_size
    colors = np.asarray(cfg.colors, dtype=np.float64)
    images, masks = [], []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(cfg.image_count):
        rng = Splitmix64(derive_seed(cfg.rng_seed, 101, i))
        sx = np.array([rng.randbelow(size) for _ in range(cfg.region_seed_count)], dtype=np.float64)
        sy = np.array([rng.randbelow(size) for _ in range(cfg.region_seed_count)], dtype=np.float64)
        seed_class = np.array(
            [j if j < cfg.class_count else rng.randbelow(cfg.class_count)
             for j in range(cfg.region_seed_count)]
        )
        d2 = (xx[:, :, None] - sx) ** 2 + (yy[:, :, None] - sy) ** 2
        owner = np.argmin(d2, axis=2)  # ties resolve to the lowest seed index
        mask_pixels = seed_class[owner].astype(np.uint8)

        pixels = colors[mask_pixels]
        if cfg.noise_sigma > 0:
            noise = rng.fill_gaussian(size * size * 3).reshape(size, size, 3)
            pixels = pixels + cfg.noise_sigma * noise
        images.append(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
        masks.append(ClassMask(pixels=mask_pixels, label_map=label_map))
    return images, masks
