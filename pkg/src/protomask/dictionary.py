"""Representative-patch sampling, the simulated rater, and the dictionary.

A cluster earns a dictionary entry when a rater (human or simulated) finds
one tissue class covering more than the purity threshold of the inspected
patches; otherwise it is considered a mixture and dropped. Entries carry
the cluster centroid, re-normalized to unit length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import ClusteringResult
from .errors import FormatError, ValidationError
from .formats import PatchEmbeddingSet, PatchRecord
from .labels import TissueLabelMap
from .rng import Splitmix64, derive_seed

DICTIONARY_VERSION = 1
SAMPLING_SALT = 17
DEFAULT_T = 10
DEFAULT_PURITY_THRESHOLD = 0.8

DECISION_TISSUE = "tissue"
DECISION_DROP = "drop"


@dataclass
class ClusterVerdict:
    cluster_index: int
    decision: str  # DECISION_TISSUE or DECISION_DROP
    class_id: int | None = None
    decided_by: str = "oracle"  # "oracle" | "human"
    inspected_patch_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.decision not in (DECISION_TISSUE, DECISION_DROP):
            raise ValidationError(f"unknown decision {self.decision!r}")
        if self.decision == DECISION_TISSUE and self.class_id is None:
            raise ValidationError("tissue verdict needs a class_id")
        if self.decision == DECISION_DROP:
            self.class_id = None

    def to_json_obj(self) -> dict:
        return {
            "cluster_index": self.cluster_index,
            "decision": self.decision,
            "class_id": self.class_id,
            "decided_by": self.decided_by,
            "inspected_patch_ids": self.inspected_patch_ids,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ClusterVerdict":
        try:
            return cls(
                cluster_index=int(obj["cluster_index"]),
                decision=str(obj["decision"]),
                class_id=None if obj.get("class_id") is None else int(obj["class_id"]),
                decided_by=str(obj.get("decided_by", "human")),
                inspected_patch_ids=[int(p) for p in obj.get("inspected_patch_ids", [])],
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"bad verdict object: {e}") from e


@dataclass
class PrototypeEntry:
    prototype_id: int
    centroid: np.ndarray  # unit-norm float64
    class_id: int
    source_cluster: int
    cluster_size: int


@dataclass
class PrototypeDictionary:
    dim: int
    entries: list[PrototypeEntry]
    label_map: TissueLabelMap

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("a prototype dictionary cannot be empty")
        known = set(self.label_map.class_ids())
        for e in self.entries:
            if len(e.centroid) != self.dim:
                raise ValidationError(f"prototype {e.prototype_id}: wrong dimension")
            if e.class_id not in known:
                raise ValidationError(f"prototype {e.prototype_id}: unknown class {e.class_id}")
            if abs(np.linalg.norm(e.centroid) - 1.0) > 1e-6:
                raise ValidationError(f"prototype {e.prototype_id}: centroid not unit-norm")

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        """(l, dim) float64 prototype matrix, entry order."""
        return np.stack([e.centroid for e in self.entries])

    def entry_classes(self) -> np.ndarray:
        return np.asarray([e.class_id for e in self.entries])


def _cluster_member_rows(result: ClusteringResult, cluster_index: int) -> np.ndarray:
    if not 0 <= cluster_index < result.k:
        raise ValidationError(f"cluster index {cluster_index} outside [0, {result.k})")
    rows = np.flatnonzero(result.assignments == cluster_index)
    if rows.size == 0:
        raise ValidationError(f"cluster {cluster_index} is empty")
    return rows


def _members_by_distance(eset: PatchEmbeddingSet, result: ClusteringResult,
                         cluster_index: int) -> list[tuple[float, int, int]]:
    """Cluster members as (distance^2 to centroid, patch_id, row) ascending."""
    rows = _cluster_member_rows(result, cluster_index)
    x = eset.matrix().astype(np.float64)
    centroid = result.centroids[cluster_index]
    d2 = ((x[rows] - centroid) ** 2).sum(axis=1)
    ranked = sorted(
        (float(d2[i]), eset.records[int(r)].patch_id, int(r)) for i, r in enumerate(rows)
    )
    return ranked


def central_sample(eset: PatchEmbeddingSet, result: ClusteringResult,
                   cluster_index: int, t: int = DEFAULT_T) -> list[int]:
    """The min(t, size) member patch_ids nearest the centroid, nearest first.

    Distance ties resolve to the lower patch_id.
    """
    if t < 1:
        raise ValidationError("t must be >= 1")
    ranked = _members_by_distance(eset, result, cluster_index)
    return [pid for _, pid, _ in ranked[:t]]


def equidistant_sample(eset: PatchEmbeddingSet, result: ClusteringResult,
                       cluster_index: int, t: int = DEFAULT_T, rng_seed: int = 0) -> list[int]:
    """One uniform pick from each of t near-equal strata of the
    distance-sorted members, center to border; deterministic per seed."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    ranked = _members_by_distance(eset, result, cluster_index)
    size = len(ranked)
    t_eff = min(t, size)
    rng = Splitmix64(rng_seed)
    picks = []
    for s in range(t_eff):
        lo = s * size // t_eff
        hi = (s + 1) * size // t_eff
        picks.append(ranked[lo + rng.randbelow(hi - lo)][1])
    return picks


def sample_representatives(eset: PatchEmbeddingSet, result: ClusteringResult,
                           strategy: str = "central", t: int = DEFAULT_T,
                           rng_seed: int = 0) -> dict[int, list[int]]:
    """Representative patch_ids per cluster index, all clusters."""
    reps = {}
    for j in range(result.k):
        if strategy == "central":
            reps[j] = central_sample(eset, result, j, t)
        elif strategy == "equidistant":
            reps[j] = equidistant_sample(eset, result, j, t, rng_seed=derive_seed(rng_seed, SAMPLING_SALT, j))
        else:
            raise ValidationError(f"unknown sampling strategy {strategy!r}")
    return reps


def simulated_label(inspected: list[PatchRecord], label_map: TissueLabelMap,
                    threshold: float = DEFAULT_PURITY_THRESHOLD) -> tuple[str, int | None]:
    """Rater simulation on ground truth: average the inspected patches'
    class proportions; a class strictly above the threshold wins, otherwise
    the cluster counts as a mixture. Returns (decision, class_id)."""
    if not inspected:
        raise ValidationError("cannot label from zero inspected patches")
    means = np.zeros(len(label_map), dtype=np.float64)
    for r in inspected:
        if r.gt_proportions is None:
            raise ValidationError(f"patch {r.patch_id} has no ground-truth proportions")
        for cid, frac in r.gt_proportions.items():
            if not 0 <= cid < len(label_map):
                raise ValidationError(f"patch {r.patch_id}: unknown class {cid}")
            means[cid] += frac
    means /= len(inspected)
    best = int(means.argmax())
    if means[best] > threshold:
        return DECISION_TISSUE, best
    return DECISION_DROP, None


def oracle_verdicts(eset: PatchEmbeddingSet, result: ClusteringResult,
                    label_map: TissueLabelMap, reps: dict[int, list[int]],
                    threshold: float = DEFAULT_PURITY_THRESHOLD,
                    whole_cluster: bool = False) -> list[ClusterVerdict]:
    """Run the simulated rater over every cluster.

    By default only the sampled representatives are inspected, mirroring how
    a human works. whole_cluster=True rates on every member instead
    (ablation mode: an omniscient rater).
    """
    by_id = {r.patch_id: r for r in eset.records}
    verdicts = []
    for j in range(result.k):
        if whole_cluster:
            rows = np.flatnonzero(result.assignments == j)
            inspected = [eset.records[int(r)] for r in rows]
        else:
            inspected = [by_id[pid] for pid in reps[j]]
        decision, class_id = simulated_label(inspected, label_map, threshold)
        verdicts.append(ClusterVerdict(cluster_index=j, decision=decision, class_id=class_id,
                                       decided_by="oracle", inspected_patch_ids=list(reps[j])))
    return verdicts


def build_dictionary(result: ClusteringResult, verdicts: list[ClusterVerdict],
                     label_map: TissueLabelMap) -> PrototypeDictionary:
    """One entry per tissue verdict, carrying that cluster's centroid
    re-normalized to unit length; dropped clusters contribute nothing."""
    if sorted(v.cluster_index for v in verdicts) != list(range(result.k)):
        raise ValidationError("need exactly one verdict per cluster")
    entries = []
    for v in sorted(verdicts, key=lambda v: v.cluster_index):
        if v.decision != DECISION_TISSUE:
            continue
        centroid = result.centroids[v.cluster_index].astype(np.float64)
        norm = np.linalg.norm(centroid)
        if norm == 0:
            raise ValidationError(f"cluster {v.cluster_index} has a zero centroid")
        entries.append(
            PrototypeEntry(
                prototype_id=len(entries),
                centroid=centroid / norm,
                class_id=int(v.class_id),  # type: ignore[arg-type]
                source_cluster=v.cluster_index,
                cluster_size=int(result.cluster_sizes[v.cluster_index]),
            )
        )
    if not entries:
        raise ValidationError("every cluster was dropped; dictionary would be empty")
    return PrototypeDictionary(dim=result.centroids.shape[1], entries=entries,
                               label_map=label_map)


def save_dictionary(d: PrototypeDictionary, path: str | Path) -> None:
    obj = {
        "version": DICTIONARY_VERSION,
        "dim": d.dim,
        "label_map": d.label_map.to_json_obj(),
        "entries": [
            {
                "prototype_id": e.prototype_id,
                "class_id": e.class_id,
                "source_cluster": e.source_cluster,
                "cluster_size": e.cluster_size,
                "centroid": [float(v) for v in e.centroid],
            }
            for e in d.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_dictionary(path: str | Path) -> PrototypeDictionary:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    if obj.get("version") != DICTIONARY_VERSION:
        raise FormatError(f"{path}: unsupported dictionary version {obj.get('version')}")
    try:
        label_map = TissueLabelMap.from_json_obj(obj["label_map"])
        entries = [
            PrototypeEntry(
                prototype_id=int(e["prototype_id"]),
                centroid=np.asarray(e["centroid"], dtype=np.float64),
                class_id=int(e["class_id"]),
                source_cluster=int(e["source_cluster"]),
                cluster_size=int(e["cluster_size"]),
            )
            for e in obj["entries"]
        ]
        return PrototypeDictionary(dim=int(obj["dim"]), entries=entries, label_map=label_map)
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed dictionary ({e})") from e


def save_verdicts(verdicts: list[ClusterVerdict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([v.to_json_obj() for v in verdicts], fh)
        fh.write("\n")


def load_verdicts(path: str | Path) -> list[ClusterVerdict]:
    with open(path, encoding="utf-8") as fh:
        return [ClusterVerdict.from_json_obj(o) for o in json.load(fh)]
