"""Tissue label vocabulary, label grids, class masks, and mask files.

Masks are stored as P5 PGM (class index per pixel, maxval 255) with a JSON
sidecar <path>.json carrying {label_map, width, height}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .formats import read_pgm, write_pgm

RESERVED_MIXTURE_NAME = "mixture"


@dataclass(frozen=True)
class TissueLabelMap:
    """Ordered (class_id, class_name) vocabulary; ids contiguous from 0."""

    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        names = [n for _, n in self.entries]
        if ids != list(range(len(ids))):
            raise ValidationError(f"class ids must be contiguous from 0, got {ids}")
        if len(set(names)) != len(names):
            raise ValidationError("class names must be unique")
        if RESERVED_MIXTURE_NAME in names:
            raise ValidationError(f"'{RESERVED_MIXTURE_NAME}' is reserved, not a class")

    @classmethod
    def from_names(cls, names: list[str]) -> "TissueLabelMap":
        return cls(tuple(enumerate(names)))

    def __len__(self) -> int:
        return len(self.entries)

    def class_ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    def name_of(self, class_id: int) -> str:
        return dict(self.entries)[class_id]

    def to_json_obj(self) -> list[dict]:
        return [{"id": i, "name": n} for i, n in self.entries]

    @classmethod
    def from_json_obj(cls, obj) -> "TissueLabelMap":
        try:
            return cls(tuple((int(e["id"]), str(e["name"])) for e in obj))
        except (TypeError, KeyError) as e:
            raise FormatError(f"bad label_map object: {e}") from e


@dataclass
class LabelGrid:
    """Class index per grid cell (the coarse, pre-upsampling map)."""

    cells: np.ndarray  # int, shape (height, width)
    label_map: TissueLabelMap

    def __post_init__(self):
        self.cells = np.asarray(self.cells)
        if self.cells.ndim != 2:
            raise ValidationError("label grid must be 2-D")
        known = set(self.label_map.class_ids())
        present = set(np.unique(self.cells).tolist())
        if not present <= known:
            raise ValidationError(f"grid has class ids {present - known} missing from label map")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]


@dataclass
class ClassMask:
    """Class index per pixel plus the label vocabulary it refers to."""

    pixels: np.ndarray  # uint8, shape (height, width)
    label_map: TissueLabelMap

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValidationError("mask must be 2-D")
        if self.pixels.dtype != np.uint8:
            if self.pixels.size and (self.pixels.min() < 0 or self.pixels.max() > 255):
                raise ValidationError("class ids above 255 cannot be stored in a mask")
            self.pixels = self.pixels.astype(np.uint8)
        known = set(self.label_map.class_ids())
        present = set(np.unique(self.pixels).tolist())
        if not present <= known:
            raise ValidationError(f"mask has class ids {present - known} missing from label map")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def write_mask(mask: ClassMask, path: str | Path) -> None:
    write_pgm(mask.pixels, path)
    sidecar = {
        "label_map": mask.label_map.to_json_obj(),
        "width": mask.width,
        "height": mask.height,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def read_mask(path: str | Path) -> ClassMask:
    pixels = read_pgm(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"missing mask sidecar {sidecar_path}")
    with open(sidecar_path, encoding="utf-8") as fh:
        obj = json.load(fh)
    label_map = TissueLabelMap.from_json_obj(obj["label_map"])
    if obj.get("width") != pixels.shape[1] or obj.get("height") != pixels.shape[0]:
        raise FormatError(f"{sidecar_path}: sidecar dimensions disagree with PGM")
    return ClassMask(pixels=pixels, label_map=label_map)
