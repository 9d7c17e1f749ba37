"""Mask agreement metrics: pixel accuracy, per-class Dice, dataset reports.

Aggregation follows two conventions side by side, since either is a
defensible reading of "macro-average": the report's headline numbers are
the mean of per-image accuracies and dataset-pooled per-class Dice, but the
alternates (pooled accuracy, mean of per-image Dice) are always included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .labels import ClassMask


def _check_pair(pred: ClassMask, gt: ClassMask) -> None:
    if pred.pixels.shape != gt.pixels.shape:
        raise ValidationError(f"shape mismatch: {pred.pixels.shape} vs {gt.pixels.shape}")
    if pred.label_map.entries != gt.label_map.entries:
        raise ValidationError("prediction and ground truth use different label maps")


def pixel_accuracy(pred: ClassMask, gt: ClassMask) -> float:
    """Fraction of pixels whose class matches."""
    _check_pair(pred, gt)
    return float((pred.pixels == gt.pixels).mean())


def _dice_counts(pred: ClassMask, gt: ClassMask, class_id: int) -> tuple[int, int, int]:
    p = pred.pixels == class_id
    g = gt.pixels == class_id
    return int((p & g).sum()), int(p.sum()), int(g.sum())


def dice(pred: ClassMask, gt: ClassMask, class_id: int) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when the class is absent from both."""
    _check_pair(pred, gt)
    if class_id not in dict(pred.label_map.entries):
        raise ValidationError(f"unknown class_id {class_id}")
    tp, psum, gsum = _dice_counts(pred, gt, class_id)
    if psum + gsum == 0:
        return 1.0
    return 2.0 * tp / (psum + gsum)


@dataclass
class EvalReport:
    image_count: int
    per_image_accuracy: list[float]
    macro_pixel_accuracy: float  # mean of per-image accuracies
    pooled_pixel_accuracy: float  # all pixels pooled
    per_class_dice: dict[int, float]  # pooled over the dataset
    per_class_dice_mean_of_images: dict[int, float]
    macro_dice: float  # mean of pooled Dice over classes present in gt
    macro_dice_all_classes: float  # absent classes count as 1.0
    class_census: dict[int, dict[str, int]] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "image_count": self.image_count,
            "per_image_accuracy": self.per_image_accuracy,
            "macro_pixel_accuracy": self.macro_pixel_accuracy,
            "pooled_pixel_accuracy": self.pooled_pixel_accuracy,
            "per_class_dice": {str(k): v for k, v in sorted(self.per_class_dice.items())},
            "per_class_dice_mean_of_images": {
                str(k): v for k, v in sorted(self.per_class_dice_mean_of_images.items())
            },
            "macro_dice": self.macro_dice,
            "macro_dice_all_classes": self.macro_dice_all_classes,
            "class_census": {
                str(k): v for k, v in sorted(self.class_census.items())
            },
        }


def evaluate_dataset(pairs: list[tuple[ClassMask, ClassMask]]) -> EvalReport:
    """Aggregate metrics over (prediction, ground truth) mask pairs."""
    if not pairs:
        raise ValidationError("no mask pairs to evaluate")
    label_map = pairs[0][1].label_map
    for pred, gt in pairs:
        _check_pair(pred, gt)
        if gt.label_map.entries != label_map.entries:
            raise ValidationError("inconsistent label maps across the dataset")

    class_ids = label_map.class_ids()
    accs = [pixel_accuracy(pred, gt) for pred, gt in pairs]

    tp = {c: 0 for c in class_ids}
    psum = {c: 0 for c in class_ids}
    gsum = {c: 0 for c in class_ids}
    per_image_dice: dict[int, list[float]] = {c: [] for c in class_ids}
    correct = 0
    total = 0
    for pred, gt in pairs:
        correct += int((pred.pixels == gt.pixels).sum())
        total += pred.pixels.size
        for c in class_ids:
            i_tp, i_p, i_g = _dice_counts(pred, gt, c)
            tp[c] += i_tp
            psum[c] += i_p
            gsum[c] += i_g
            per_image_dice[c].append(1.0 if i_p + i_g == 0 else 2.0 * i_tp / (i_p + i_g))

    pooled_dice = {
        c: (1.0 if psum[c] + gsum[c] == 0 else 2.0 * tp[c] / (psum[c] + gsum[c]))
        for c in class_ids
    }
    present = [c for c in class_ids if gsum[c] > 0]
    if not present:
        raise ValidationError("ground truth is empty of every known class")
    return EvalReport(
        image_count=len(pairs),
        per_image_accuracy=accs,
        macro_pixel_accuracy=float(np.mean(accs)),
        pooled_pixel_accuracy=correct / total,
        per_class_dice=pooled_dice,
        per_class_dice_mean_of_images={c: float(np.mean(v)) for c, v in per_image_dice.items()},
        macro_dice=float(np.mean([pooled_dice[c] for c in present])),
        macro_dice_all_classes=float(np.mean([pooled_dice[c] for c in class_ids])),
        class_census={
            c: {"gt_pixels": gsum[c], "pred_pixels": psum[c], "intersection": tp[c]}
            for c in class_ids
        },
    )


def save_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
