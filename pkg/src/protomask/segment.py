"""Coarse mask generation by querying the prototype dictionary.

Direct-Query labels every grid cell independently with the class of its
cosine-nearest prototype. Cluster-then-Query first groups the grid's cells
(cell count scaled from the number of tissue types Direct-Query sees), then
labels whole groups through their centroid, which suppresses isolated
outlier cells. Query vectors are normalized, so cosine and Euclidean
orderings agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import DEFAULT_RESTARTS, cluster
from .dictionary import PrototypeDictionary
from .errors import ValidationError
from .formats import EmbeddingGrid
from .labels import ClassMask, LabelGrid

DEFAULT_GAMMA = 5.0
DEFAULT_UPSAMPLE = 32


@dataclass(frozen=True)
class CqConfig:
    """Cluster-then-Query settings; gamma scales the group count."""

    gamma: float = DEFAULT_GAMMA
    restarts: int = DEFAULT_RESTARTS
    rng_seed: int = 0

    def __post_init__(self):
        if not self.gamma >= 1.0:
            raise ValidationError(f"gamma must be >= 1, got {self.gamma}")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError("grid contains a zero-norm cell vector")
    return x / norms


def _nearest_prototype(vectors: np.ndarray, dictionary: PrototypeDictionary) -> np.ndarray:
    """Row index of the cosine-nearest prototype; ties -> lowest prototype_id.

    Entries are stored in prototype_id order, so argmax's first-hit rule is
    exactly the tie rule.
    """
    protos = dictionary.matrix()  # unit-norm already
    scores = _normalize_rows(vectors.astype(np.float64)) @ protos.T
    return scores.argmax(axis=1)


def direct_query(grid: EmbeddingGrid, dictionary: PrototypeDictionary) -> LabelGrid:
    """Per-cell class of the most similar prototype."""
    if grid.dim != dictionary.dim:
        raise ValidationError(f"grid dim {grid.dim} != dictionary dim {dictionary.dim}")
    nearest = _nearest_prototype(grid.cells(), dictionary)
    classes = dictionary.entry_classes()[nearest]
    return LabelGrid(cells=classes.reshape(grid.height, grid.width),
                     label_map=dictionary.label_map)


def distinct_tissue_count(lg: LabelGrid) -> int:
    return int(np.unique(lg.cells).size)


def cluster_then_query(grid: EmbeddingGrid, dictionary: PrototypeDictionary,
                       cfg: CqConfig = CqConfig()) -> LabelGrid:
    """Group the cells into gamma x d clusters (d = tissue types Direct-Query
    finds), then label each group by its centroid's nearest prototype."""
    if grid.dim != dictionary.dim:
        raise ValidationError(f"grid dim {grid.dim} != dictionary dim {dictionary.dim}")
    cells = _normalize_rows(grid.cells().astype(np.float64))
    d = distinct_tissue_count(direct_query(grid, dictionary))
    distinct = np.unique(cells, axis=0).shape[0]
    m = min(int(cfg.gamma * d), distinct)
    result = cluster(cells, m, restarts=cfg.restarts, rng_seed=cfg.rng_seed)
    group_class = dictionary.entry_classes()[_nearest_prototype(result.centroids, dictionary)]
    classes = group_class[result.assignments]
    return LabelGrid(cells=classes.reshape(grid.height, grid.width),
                     label_map=dictionary.label_map)


def upsample_mask(lg: LabelGrid, factor: int = DEFAULT_UPSAMPLE) -> ClassMask:
    """Nearest-neighbor expansion: each cell becomes a factor x factor block."""
    if factor < 1:
        raise ValidationError("upsample factor must be >= 1")
    pixels = np.repeat(np.repeat(lg.cells, factor, axis=0), factor, axis=1)
    return ClassMask(pixels=pixels.astype(np.uint8), label_map=lg.label_map)
