"""Localization metrics: IoU, CorLoc, and planted-truth selection accuracy."""

from typing import Dict, Mapping

from .data import Dataset, Selection


def iou(a, b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax1 >= ax2 or ay1 >= ay2 or bx1 >= bx2 or by1 >= by2:
        raise ValueError("degenerate box")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def corloc(selections: Mapping[str, Selection], dataset: Dataset,
           threshold: float = 0.5):
    """Per-class correct-localization ratios and their unweighted mean.

    A positive bag counts as correct when the selected proposal's box has
    IoU strictly greater than `threshold` with any ground-truth box of the
    class in that bag (proposals with gt_class == class act as ground
    truth).  Returns (per_class: dict, mean: float), percentages.
    """
    per_class: Dict[str, float] = {}
    for cls, sel in sorted(selections.items()):
        correct = total = 0
        for bag in dataset.bags:
            if cls not in bag.labels:
                continue
            total += 1
            idx = sel.chosen.get(bag.id)
            if idx is None:
                continue
            picked = bag.proposals[idx]
            if picked.box is None:
                raise ValueError(f"bag {bag.id!r}: selected proposal has no box")
            gt_boxes = [p.box for p in bag.proposals if p.gt_class == cls]
            if not gt_boxes:
                raise ValueError(f"bag {bag.id!r}: no ground-truth box for {cls!r}")
            if any(iou(picked.box, g) > threshold for g in gt_boxes):
                correct += 1
        if total:
            per_class[cls] = 100.0 * correct / total
    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, mean


def selection_accuracy(selections: Mapping[str, Selection],
                       truth: Mapping[str, Mapping[str, int]]) -> float:
    """Fraction of positive bags whose chosen index matches the planted one."""
    hits = total = 0
    for cls, planted in truth.items():
        chosen = selections[cls].chosen if cls in selections else {}
        for bag_id, idx in planted.items():
            total += 1
            if chosen.get(bag_id) == idx:
                hits += 1
    return hits / total if total else 0.0
