"""K-Means++ seeding, Lloyd refinement, and elbow-based choice of k.

All randomness flows through the package PRNG, so every result is a pure
function of (points, parameters, rng_seed). Distances use the
|a|^2 + |b|^2 - 2ab expansion with cached norms; tiny negative values from
cancellation are clamped to zero.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .rng import Splitmix64, derive_seed

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6
DEFAULT_RESTARTS = 8

RESTART_SALT = 11
ELBOW_SALT = 13


@dataclass
class ClusteringResult:
    k: int
    centroids: np.ndarray  # (k, dim) float64
    assignments: np.ndarray  # (n,) int
    inertia: float
    cluster_sizes: np.ndarray  # (k,) int
    iterations_run: int
    rng_seed: int
    inertia_trace: list[float] = field(default_factory=list)
    duplicate_seed_points: bool = False

    def to_json_obj(self) -> dict:
        return {
            "k": self.k,
            "centroids": [[float(v) for v in c] for c in self.centroids],
            "assignments": [int(a) for a in self.assignments],
            "inertia": float(self.inertia),
            "cluster_sizes": [int(s) for s in self.cluster_sizes],
            "iterations_run": self.iterations_run,
            "rng_seed": self.rng_seed,
            "inertia_trace": [float(v) for v in self.inertia_trace],
            "duplicate_seed_points": self.duplicate_seed_points,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ClusteringResult":
        try:
            return cls(
                k=int(obj["k"]),
                centroids=np.asarray(obj["centroids"], dtype=np.float64),
                assignments=np.asarray(obj["assignments"], dtype=np.int64),
                inertia=float(obj["inertia"]),
                cluster_sizes=np.asarray(obj["cluster_sizes"], dtype=np.int64),
                iterations_run=int(obj["iterations_run"]),
                rng_seed=int(obj["rng_seed"]),
                inertia_trace=[float(v) for v in obj.get("inertia_trace", [])],
                duplicate_seed_points=bool(obj.get("duplicate_seed_points", False)),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"bad clustering result object: {e}") from e


@dataclass
class ElbowTrace:
    v_values: list[int]
    inertias: list[float]
    reductions: dict[int, float]  # R_v = D_{v-1} - D_v, from the 2nd candidate on
    selected_k: int
    restarts: int
    rng_seed: int

    def to_json_obj(self) -> dict:
        return {
            "v_values": self.v_values,
            "inertias": self.inertias,
            "reductions": {str(v): r for v, r in sorted(self.reductions.items())},
            "selected_k": self.selected_k,
            "restarts": self.restarts,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ElbowTrace":
        try:
            return cls(
                v_values=[int(v) for v in obj["v_values"]],
                inertias=[float(d) for d in obj["inertias"]],
                reductions={int(k): float(v) for k, v in obj["reductions"].items()},
                selected_k=int(obj["selected_k"]),
                restarts=int(obj["restarts"]),
                rng_seed=int(obj["rng_seed"]),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"bad elbow trace object: {e}") from e


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("points must be a nonempty (n, dim) array")
    if not np.isfinite(x).all():
        raise ValidationError("points contain non-finite values")
    return x


def _sq_dists(x: np.ndarray, c: np.ndarray, xsq: np.ndarray | None = None) -> np.ndarray:
    """(n, k) squared distances via the expansion, clamped at zero."""
    if xsq is None:
        xsq = (x * x).sum(axis=1)
    csq = (c * c).sum(axis=1)
    d2 = xsq[:, None] + csq[None, :] - 2.0 * (x @ c.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeanspp_seed(points, k: int, rng_seed: int) -> np.ndarray:
    centroids, _ = _kmeanspp_seed_flagged(_as_points(points), k, rng_seed)
    return centroids


def _kmeanspp_seed_flagged(x: np.ndarray, k: int, rng_seed: int) -> tuple[np.ndarray, bool]:
    """D^2-weighted seeding. Falls back to uniform picks (and flags it) once
    every remaining point coincides with a chosen centroid."""
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    rng = Splitmix64(rng_seed)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.randbelow(n)
    duplicates = False
    best_d2 = _sq_dists(x, x[chosen[0] : chosen[0] + 1])[:, 0]
    for j in range(1, k):
        cumulative = np.cumsum(best_d2)
        if cumulative[-1] > 0.0:
            idx = rng.weighted_index(cumulative)
        else:
            idx = rng.randbelow(n)
            duplicates = True
        chosen[j] = idx
        np.minimum(best_d2, _sq_dists(x, x[idx : idx + 1])[:, 0], out=best_d2)
    return x[chosen].copy(), duplicates


def random_seed(points, k: int, rng_seed: int) -> np.ndarray:
    """Plain K-Means initialisation: k distinct points chosen uniformly."""
    x = _as_points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    picks = Splitmix64(rng_seed).sample_indices(n, k)
    return x[picks].copy()


def lloyd_iterate(points, centroids, max_iter: int = DEFAULT_MAX_ITER,
                  tol: float = DEFAULT_TOL) -> ClusteringResult:
    """Alternate nearest-centroid assignment (ties -> lowest index) and mean
    update until assignments stabilise, relative inertia improvement drops
    below tol, or max_iter is reached. Empty clusters are reseeded at the
    point farthest from its currently assigned centroid."""
    x = _as_points(points)
    c = np.asarray(centroids, dtype=np.float64).copy()
    if c.ndim != 2 or c.shape[1] != x.shape[1]:
        raise ValidationError("centroids must be (k, dim) matching points")
    k = c.shape[0]
    xsq = (x * x).sum(axis=1)

    d2 = _sq_dists(x, c, xsq)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(x)), assign].sum())
    trace = [inertia]

    iterations = 0
    for iterations in range(1, max_iter + 1):
        sums = np.zeros_like(c)
        np.add.at(sums, assign, x)
        counts = np.bincount(assign, minlength=k)
        nonempty = counts > 0
        c[nonempty] = sums[nonempty] / counts[nonempty, None]

        empties = np.flatnonzero(~nonempty)
        if empties.size:
            own_d2 = _sq_dists(x, c, xsq)[np.arange(len(x)), assign].copy()
            for j in empties:
                far = int(own_d2.argmax())
                c[j] = x[far]
                own_d2[far] = -1.0  # each repair takes a different point

        d2 = _sq_dists(x, c, xsq)
        new_assign = d2.argmin(axis=1)
        new_inertia = float(d2[np.arange(len(x)), new_assign].sum())
        trace.append(new_inertia)

        if np.array_equal(new_assign, assign):
            assign = new_assign
            inertia = new_inertia
            break
        improvement = inertia - new_inertia
        assign = new_assign
        stop = improvement < tol * max(inertia, 1e-300)
        inertia = new_inertia
        if stop:
            break

    # report the exact form: the expansion's cancellation noise (~1e-15)
    # matters when the true inertia is zero
    inertia = float(((x - c[assign]) ** 2).sum())

    return ClusteringResult(
        k=k,
        centroids=c,
        assignments=assign,
        inertia=inertia,
        cluster_sizes=np.bincount(assign, minlength=k),
        iterations_run=iterations,
        rng_seed=0,
        inertia_trace=trace,
    )


def restart_seed(rng_seed: int, restart_index: int) -> int:
    return derive_seed(rng_seed, RESTART_SALT, restart_index)


def canonical_content_seed(points) -> int:
    """Order-independent content hash of a point set, usable as an rng seed."""
    x = _as_points(points)
    row_digests = sorted(hashlib.blake2b(row.tobytes(), digest_size=8).digest() for row in x)
    top = hashlib.blake2b(b"".join(row_digests), digest_size=8).digest()
    return int.from_bytes(top, "little")


def cluster(points, k: int, restarts: int = DEFAULT_RESTARTS, rng_seed: int = 0,
            max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
            seeding: str = "kmeans++", canonical_order: bool = False) -> ClusteringResult:
    """Best-inertia result over `restarts` seed+Lloyd runs (ties -> first).

    With canonical_order=True the points are processed in lexicographic row
    order and results mapped back, so permuting the input (with a content-
    derived seed) permutes nothing but the point identities.
    """
    x = _as_points(points)
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    if seeding not in ("kmeans++", "random"):
        raise ValidationError(f"unknown seeding strategy {seeding!r}")

    order = None
    if canonical_order:
        order = np.lexsort(x.T[::-1])
        x = x[order]

    best: ClusteringResult | None = None
    for r in range(restarts):
        sub_seed = restart_seed(rng_seed, r)
        if seeding == "kmeans++":
            seeds, duplicates = _kmeanspp_seed_flagged(x, k, sub_seed)
        else:
            seeds, duplicates = random_seed(x, k, sub_seed), False
        result = lloyd_iterate(x, seeds, max_iter=max_iter, tol=tol)
        result.rng_seed = sub_seed
        result.duplicate_seed_points = duplicates
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None

    if order is not None:
        # x_sorted[i] == x_original[order[i]], so its label goes back to order[i]
        back = np.empty(len(order), dtype=best.assignments.dtype)
        back[order] = best.assignments
        best.assignments = back
        best.cluster_sizes = np.bincount(best.assignments, minlength=k)
    return best


def elbow_select(points, v_range: tuple[int, int], restarts: int = DEFAULT_RESTARTS,
                 rng_seed: int = 0, seeding: str = "kmeans++") -> ElbowTrace:
    """Inertia curve over candidate cluster counts plus the elbow pick.

    The elbow is the interior candidate maximising the discrete curvature
    D_{v-1} - 2 D_v + D_{v+1} (ties -> smallest v). The full trace is
    returned so a human can override the choice.
    """
    x = _as_points(points)
    lo, hi = int(v_range[0]), int(v_range[1])
    if lo < 2:
        raise ValidationError("candidate range must start at 2 or above")
    if hi > x.shape[0]:
        raise ValidationError(f"candidate range exceeds point count {x.shape[0]}")
    vs = list(range(lo, hi + 1))
    if len(vs) < 3:
        raise ValidationError("elbow selection needs at least 3 candidate values")

    inertias = []
    for v in vs:
        res = cluster(x, v, restarts=restarts, rng_seed=derive_seed(rng_seed, ELBOW_SALT, v),
                      seeding=seeding)
        inertias.append(res.inertia)

    reductions = {vs[i]: inertias[i - 1] - inertias[i] for i in range(1, len(vs))}
    best_v, best_curv = vs[1], -np.inf
    for i in range(1, len(vs) - 1):
        curv = inertias[i - 1] - 2.0 * inertias[i] + inertias[i + 1]
        if curv > best_curv:  # strict: ties keep the smallest v
            best_curv, best_v = curv, vs[i]
    return ElbowTrace(v_values=vs, inertias=inertias, reductions=reductions,
                      selected_k=best_v, restarts=restarts, rng_seed=rng_seed)


def save_clustering(result: ClusteringResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json_obj(), fh)
        fh.write("\n")


def load_clustering(path: str | Path) -> ClusteringResult:
    with open(path, encoding="utf-8") as fh:
        return ClusteringResult.from_json_obj(json.load(fh))


def save_elbow(trace: ElbowTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.to_json_obj(), fh)
        fh.write("\n")


def load_elbow(path: str | Path) -> ElbowTrace:
    with open(path, encoding="utf-8") as fh:
        return ElbowTrace.from_json_obj(json.load(fh))
