"""Domain model: proposals, bags, datasets, and per-class selections.

A bag is the set of proposals extracted from one image, labeled only at the
bag level.  A Selection stores, for one class, the single chosen proposal
index of every positive bag; the full unary/pairwise pseudo-labeling is a
derived view of it.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

# Reserved label for proposals that belong to no object class.
BACKGROUND = "__background__"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Proposal:
    features: np.ndarray
    features_generic: Optional[np.ndarray] = None
    box: Optional[tuple] = None  # (x1, y1, x2, y2) in pixels
    gt_class: Optional[str] = None  # None = unlabeled, BACKGROUND = background
    is_full_image: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 1 or feats.size == 0:
            raise DataError("proposal features must be a non-empty 1-d vector")
        if not np.all(np.isfinite(feats)):
            raise DataError("proposal features must be finite")
        if self.features_generic is not None:
            gen = np.asarray(self.features_generic, dtype=np.float64)
            object.__setattr__(self, "features_generic", gen)
            if gen.ndim != 1 or not np.all(np.isfinite(gen)):
                raise DataError("generic features must be a finite 1-d vector")
        if self.box is not None:
            x1, y1, x2, y2 = self.box
            if not all(np.isfinite(v) for v in (x1, y1, x2, y2)):
                raise DataError("box coordinates must be finite")
            if not (x1 < x2 and y1 < y2):
                raise DataError("box coordinates must be ordered (x1<x2, y1<y2)")


def generic_features(proposal: Proposal) -> np.ndarray:
    """Feature block used by class-generic scoring functions."""
    if proposal.features_generic is not None:
        return proposal.features_generic
    return proposal.features


@dataclass(frozen=True)
class Bag:
    id: str
    proposals: tuple
    labels: frozenset

    def __init__(self, id, proposals, labels=()):
        object.__setattr__(self, "id", str(id))
        object.__setattr__(self, "proposals", tuple(proposals))
        object.__setattr__(self, "labels", frozenset(labels))
        if not self.proposals:
            raise DataError(f"bag {id!r} has no proposals")
        if BACKGROUND in self.labels:
            raise DataError("bag labels may not contain the background sentinel")

    def __len__(self):
        return len(self.proposals)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([p.features for p in self.proposals])

    def generic_feature_matrix(self) -> np.ndarray:
        return np.stack([generic_features(p) for p in self.proposals])


@dataclass(frozen=True)
class Dataset:
    bags: tuple
    classes: frozenset
    d: int

    def __init__(self, bags, classes=None, d=None):
        bags = tuple(bags)
        if not bags:
            raise DataError("dataset has no bags")
        if classes is None:
            classes = frozenset().union(*(b.labels for b in bags))
        else:
            classes = frozenset(classes)
        if d is None:
            d = bags[0].proposals[0].features.shape[0]
        for b in bags:
            if not b.labels <= classes:
                raise DataError(f"bag {b.id!r} carries labels outside the class set")
            for p in b.proposals:
                if p.features.shape[0] != d:
                    raise DataError(f"bag {b.id!r}: feature dimension != {d}")
        if len({b.id for b in bags}) != len(bags):
            raise DataError("bag ids must be unique")
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "d", int(d))

    def bag_by_id(self, bag_id: str) -> Bag:
        for b in self.bags:
            if b.id == bag_id:
                return b
        raise DataError(f"unknown bag id {bag_id!r}")


@dataclass(frozen=True)
class Selection:
    """One chosen proposal index per positive bag, for a single class."""

    cls: str
    chosen: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "chosen", dict(self.chosen))


def positive_negative_split(dataset: Dataset, cls: str):
    """Partition dataset.bags into bags positive / negative for `cls`."""
    if cls not in dataset.classes:
        raise DataError(f"unknown class {cls!r}")
    positive = [b for b in dataset.bags if cls in b.labels]
    negative = [b for b in dataset.bags if cls not in b.labels]
    return positive, negative


def is_feasible(selection: Selection, dataset: Dataset) -> bool:
    """True iff selection chooses exactly one in-range proposal per positive bag
    and touches no negative bag."""
    if selection.cls not in dataset.classes:
        raise DataError(f"unknown class {selection.cls!r}")
    bag_map = {b.id: b for b in dataset.bags}
    for bag_id in selection.chosen:
        if bag_id not in bag_map:
            raise DataError(f"selection refers to unknown bag id {bag_id!r}")
    for b in dataset.bags:
        if selection.cls in b.labels:
            idx = selection.chosen.get(b.id)
            if idx is None or not (0 <= idx < len(b)):
                return False
        elif b.id in selection.chosen:
            return False
    return True


def unary_label(selection: Selection, bag: Bag, index: int) -> int:
    """Pseudo unary label of a proposal: 1 iff it is the chosen one of its bag."""
    return int(selection.chosen.get(bag.id) == index)


def induced_pairwise(selection: Selection, bag: Bag, other: Bag,
                     index: int, other_index: int) -> int:
    """Pairwise pseudo label for a cross-bag proposal pair: 1 iff both chosen."""
    if bag.id == other.id:
        raise DataError("pairwise labels are defined for cross-bag pairs only")
    return unary_label(selection, bag, index) * unary_label(selection, other, other_index)
