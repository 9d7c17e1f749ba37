"""On-disk formats: embedding grids/sets, PPM images, PGM masks.

Everything is little-endian and bit-exact on round-trip. Layouts are
documented in docs/file_formats.md:

  EGF  magic "EGRD", u16 version=1, u16 reserved=0, u32 height, u32 width,
       u32 dim, then height*width*dim float32 LE, row-major.
  ESF  magic "ESET", u16 version=1, u16 reserved=0, u32 count, u32 dim,
       then count*dim float32 LE. Sidecar <path>.jsonl carries one metadata
       object per record, same order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

EGF_MAGIC = b"EGRD"
ESF_MAGIC = b"ESET"
FORMAT_VERSION = 1


@dataclass
class EmbeddingGrid:
    """Dense height x width grid of dim-length embedding vectors."""

    data: np.ndarray  # float32, shape (height, width, dim)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValidationError("grid data must be height x width x dim")
        if min(self.data.shape) < 1:
            raise ValidationError("grid dimensions must all be >= 1")
        if not np.isfinite(self.data).all():
            raise ValidationError("grid contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def cells(self) -> np.ndarray:
        """(height*width, dim) row-major view of the grid."""
        return self.data.reshape(-1, self.dim)


@dataclass
class PatchRecord:
    """One cropped patch: provenance plus (optionally) its embedding."""

    patch_id: int
    source_image_id: str
    x: int
    y: int
    embedding: np.ndarray | None = None
    gt_proportions: dict[int, float] | None = None
    thumbnail_ref: str | None = None


@dataclass
class PatchEmbeddingSet:
    """Clustering corpus: n patch records sharing one embedding dimension."""

    dim: int
    records: list[PatchRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.patch_id in seen:
                raise ValidationError(f"duplicate patch_id {r.patch_id}")
            seen.add(r.patch_id)
            if r.embedding is not None and len(r.embedding) != self.dim:
                raise ValidationError(
                    f"patch {r.patch_id}: embedding dim {len(r.embedding)} != {self.dim}"
                )
            if r.gt_proportions is not None:
                total = sum(r.gt_proportions.values())
                if any(not 0.0 <= v <= 1.0 for v in r.gt_proportions.values()):
                    raise ValidationError(f"patch {r.patch_id}: proportion outside [0,1]")
                if abs(total - 1.0) > 1e-6:
                    raise ValidationError(f"patch {r.patch_id}: proportions sum to {total}")

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        """(n, dim) float32 matrix of embeddings, record order."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([np.asarray(r.embedding, dtype=np.float32) for r in self.records])


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def write_grid(grid: EmbeddingGrid, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(EGF_MAGIC)
        fh.write(struct.pack("<HHIII", FORMAT_VERSION, 0, grid.height, grid.width, grid.dim))
        fh.write(grid.data.astype("<f4", copy=False).tobytes())


def read_grid(path: str | Path) -> EmbeddingGrid:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != EGF_MAGIC:
            raise FormatError(f"{path}: not an embedding grid file")
        version, _reserved, height, width, dim = struct.unpack("<HHIII", _read_exact(fh, 16))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        raw = _read_exact(fh, height * width * dim * 4)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after grid payload")
    data = np.frombuffer(raw, dtype="<f4").reshape(height, width, dim)
    return EmbeddingGrid(data=data)


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".jsonl")


def write_embedding_set(eset: PatchEmbeddingSet, path: str | Path) -> None:
    mat = eset.matrix()
    with open(path, "wb") as fh:
        fh.write(ESF_MAGIC)
        fh.write(struct.pack("<HHII", FORMAT_VERSION, 0, len(eset), eset.dim))
        fh.write(mat.astype("<f4", copy=False).tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        for r in eset.records:
            obj: dict = {
                "patch_id": r.patch_id,
                "source_image_id": r.source_image_id,
                "x": r.x,
                "y": r.y,
            }
            if r.gt_proportions is not None:
                obj["gt_proportions"] = {str(k): v for k, v in sorted(r.gt_proportions.items())}
            if r.thumbnail_ref is not None:
                obj["thumbnail"] = r.thumbnail_ref
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_embedding_set(path: str | Path) -> PatchEmbeddingSet:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != ESF_MAGIC:
            raise FormatError(f"{path}: not an embedding set file")
        version, _reserved, count, dim = struct.unpack("<HHII", _read_exact(fh, 12))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        raw = _read_exact(fh, count * dim * 4)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after embedding payload")
    mat = np.frombuffer(raw, dtype="<f4").reshape(count, dim)

    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FormatError(f"missing sidecar {sidecar}")
    records = []
    with open(sidecar, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{sidecar}:{i + 1}: bad JSON ({e})") from e
            props = obj.get("gt_proportions")
            records.append(
                PatchRecord(
                    patch_id=int(obj["patch_id"]),
                    source_image_id=str(obj["source_image_id"]),
                    x=int(obj["x"]),
                    y=int(obj["y"]),
                    embedding=mat[i],
                    gt_proportions={int(k): float(v) for k, v in props.items()} if props else None,
                    thumbnail_ref=obj.get("thumbnail"),
                )
            )
    if len(records) != count:
        raise FormatError(f"{sidecar}: {len(records)} records for {count} embeddings")
    return PatchEmbeddingSet(dim=dim, records=records)


def write_ppm(pixels: np.ndarray, path: str | Path) -> None:
    """P6 binary PPM, maxval 255. pixels: uint8 (H, W, 3)."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError("PPM pixels must be H x W x 3")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, dims, maxval, payload = _read_netpbm(fh, path)
    if magic != b"P6":
        raise FormatError(f"{path}: expected P6, got {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    w, h = dims
    if len(payload) != h * w * 3:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    """P5 binary PGM, maxval 255. values: uint8 (H, W)."""
    values = np.ascontiguousarray(values, dtype=np.uint8)
    if values.ndim != 2:
        raise ValidationError("PGM values must be H x W")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(values.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, dims, maxval, payload = _read_netpbm(fh, path)
    if magic != b"P5":
        raise FormatError(f"{path}: expected P5, got {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    w, h = dims
    if len(payload) != h * w:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def _read_netpbm(fh, path) -> tuple[bytes, tuple[int, int], int, bytes]:
    magic = fh.read(2)
    tokens: list[int] = []
    # header tokens separated by whitespace; '#' starts a comment line
    while len(tokens) < 3:
        ch = fh.read(1)
        if not ch:
            raise FormatError(f"{path}: truncated header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            continue
        tok = ch
        while True:
            ch = fh.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        try:
            tokens.append(int(tok))
        except ValueError as e:
            raise FormatError(f"{path}: bad header token {tok!r}") from e
    w, h, maxval = tokens
    payload = fh.read()
    return magic, (w, h), maxval, payload
