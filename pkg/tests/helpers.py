"""Shared constructions for the unit and acceptance suites."""

import numpy as np

from protomask.dictionary import PrototypeDictionary, PrototypeEntry
from protomask.formats import EmbeddingGrid
from protomask.labels import TissueLabelMap
from protomask.rng import Splitmix64


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_dictionary(centroids, classes, names=None):
    centroids = [unit(c) for c in centroids]
    names = names or [f"c{i}" for i in range(max(classes) + 1)]
    return PrototypeDictionary(
        dim=len(centroids[0]),
        entries=[
            PrototypeEntry(prototype_id=i, centroid=c, class_id=cls,
                           source_cluster=i, cluster_size=10)
            for i, (c, cls) in enumerate(zip(centroids, classes))
        ],
        label_map=TissueLabelMap.from_names(names),
    )


def sphere_blobs(c, per=8, dim=4, spread=0.02, seed=0, min_gap=0.5):
    """c tight unit-norm blobs around well-separated random directions."""
    g = Splitmix64(seed)
    while True:
        centers = g.fill_gaussian(c * dim).reshape(c, dim)
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        sims = centers @ centers.T
        np.fill_diagonal(sims, -1)
        if sims.max() < min_gap:
            break
    pts = np.repeat(centers, per, axis=0) + spread * g.fill_gaussian(c * per * dim).reshape(-1, dim)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, centers


def perturbed_grid_case(seed, classes=4, side=16, frac=0.02, delta=0.4,
                        alpha=0.6, sigma=0.12):
    """Grid whose per-class cell blobs sit radially outward of their
    prototypes (so nearest-prototype labels them correctly), with `frac` of
    cells pushed toward a wrong prototype far enough to flip their
    Direct-Query label. Returns (grid, dictionary, truth classes)."""
    dim = classes
    g = Splitmix64(seed)
    protos = np.eye(dim)[:classes]
    mu = protos.mean(axis=0)
    blob = np.stack([unit(protos[i] + delta * unit(protos[i] - mu)) for i in range(classes)])
    n = side * side
    truth = np.array([g.randbelow(classes) for _ in range(n)])
    wrong = np.array([(t + 1 + g.randbelow(classes - 1)) % classes for t in truth])
    outliers = np.zeros(n, dtype=bool)
    outliers[g.sample_indices(n, max(1, int(frac * n)))] = True
    noise = sigma * g.fill_gaussian(n * dim).reshape(n, dim)
    cells = np.empty((n, dim))
    for i in range(n):
        base = blob[truth[i]]
        if outliers[i]:
            base = base + alpha * (protos[wrong[i]] - base)
        cells[i] = unit(base + noise[i])
    grid = EmbeddingGrid(data=cells.reshape(side, side, dim).astype(np.float32))
    return grid, make_dictionary(protos, list(range(classes))), truth.reshape(side, side)
