"""Vector primitives: similarity metrics and the contrastive loss.

Scalar reference implementations over 1-D vectors. Accumulations run left to
right in a float accumulator so results are bit-reproducible regardless of
how callers batch or parallelise. The batched hot paths elsewhere
(clustering, querying) are vectorised separately and cross-checked against
these in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log, sqrt
from typing import Sequence

import numpy as np

from .errors import ValidationError

Vector = Sequence[float]


@dataclass(frozen=True)
class ContrastiveConfig:
    """Settings for the contrastive loss; temperature must be positive."""

    temperature: float = 0.5

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")


def _as_floats(v: Vector) -> list[float]:
    out = [float(x) for x in v]
    if not out:
        raise ValidationError("empty vector")
    for x in out:
        if x != x or x in (float("inf"), float("-inf")):
            raise ValidationError("vector has a non-finite coordinate")
    return out


def _check_same_dim(a: list[float], b: list[float]) -> None:
    if len(a) != len(b):
        raise ValidationError(f"dimension mismatch: {len(a)} vs {len(b)}")


def dot(a: Vector, b: Vector) -> float:
    av, bv = _as_floats(a), _as_floats(b)
    _check_same_dim(av, bv)
    acc = 0.0
    for x, y in zip(av, bv):
        acc += x * y
    return acc


def norm(a: Vector) -> float:
    av = _as_floats(a)
    acc = 0.0
    for x in av:
        acc += x * x
    return sqrt(acc)


def cosine_similarity(a: Vector, b: Vector) -> float:
    """Cosine of the angle between a and b, in [-1, 1].

    Zero-norm inputs are rejected rather than silently mapped to 0.
    """
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine_similarity is undefined for zero-norm input")
    return dot(a, b) / (na * nb)


def squared_euclidean(a: Vector, b: Vector) -> float:
    av, bv = _as_floats(a), _as_floats(b)
    _check_same_dim(av, bv)
    acc = 0.0
    for x, y in zip(av, bv):
        d = x - y
        acc += d * d
    return acc


def l2_normalize(a: Vector) -> np.ndarray:
    """Scale a to unit length; direction is preserved."""
    n = norm(a)
    if n == 0.0:
        raise ValidationError("cannot normalize a zero-norm vector")
    return np.asarray([float(x) / n for x in a], dtype=np.float64)


def nt_xent_loss(
    anchor: Vector,
    positive: Vector,
    negatives: Sequence[Vector],
    cfg: ContrastiveConfig = ContrastiveConfig(),
) -> float:
    """Normalized-temperature cross-entropy over one positive and n negatives.

    loss = -log( exp(cos(a,p)/T) / (exp(cos(a,p)/T) + sum_i exp(cos(a,n_i)/T)) )

    Evaluated as log(1 + sum exp((cos_neg - cos_pos)/T)) with max-subtraction
    before exponentiation, so large 1/T cannot overflow. Returns 0 exactly
    when there are no negatives.
    """
    pos = cosine_similarity(anchor, positive) / cfg.temperature
    if not negatives:
        return 0.0
    shifted = [cosine_similarity(anchor, n) / cfg.temperature - pos for n in negatives]
    m = max(0.0, max(shifted))
    acc = exp(-m)
    for s in shifted:
        acc += exp(s - m)
    return m + log(acc)
