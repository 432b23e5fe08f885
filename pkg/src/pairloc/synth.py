"""Planted-ground-truth synthetic data.

Feature layout: coordinate 0 is an objectness cue (high for any foreground
proposal), the rest is a class embedding around a per-class prototype.  A
configurable fraction of target classes is "confused": each of their
positive bags also contains a foreground distractor drawn from a small pool
of clusters shared across those classes, so objectness alone cannot tell
the planted proposal from the distractor while cross-bag similarity can.

Source classes are disjoint from target classes and fully labeled.
"""

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .data import BACKGROUND, Bag, Dataset, Proposal

IMAGE_SIZE = 100.0
GT_BOX = (10.0, 10.0, 30.0, 30.0)
# objectness-cue multiplier of distractor proposals (salient co-occurring
# clutter scores a bit higher than the object itself)
DISTRACTOR_CUE = 1.2


@dataclass
class SynthConfig:
    num_classes: int = 4
    bags_per_class: int = 10
    proposals_per_bag: int = 10
    feature_dim: int = 16
    cluster_separation: float = 3.0
    distractor_overlap: float = 0.5
    noise_sigma: float = 0.1
    seed: int = 0
    source_fg_per_bag: int = 3
    source_num_classes: int = 0  # 0 means: same as num_classes

    def __post_init__(self):
        if self.proposals_per_bag < 2:
            raise ValueError("need at least 2 proposals per bag")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if not (0 <= self.distractor_overlap <= 1):
            raise ValueError("distractor_overlap must lie in [0, 1]")
        if min(self.num_classes, self.bags_per_class) < 1:
            raise ValueError("sizes must be positive")
        if self.noise_sigma < 0 or self.cluster_separation <= 0:
            raise ValueError("bad noise/separation")


def _unit_vectors(n, dim, rng):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _slot_box(slot: int):
    # disjoint 15x15 boxes on a grid, all clear of the planted GT_BOX region
    col, row = slot % 6, slot // 6
    x = 35.0 + col * 10.0 if row == 0 else col * 16.0
    y = 10.0 if row == 0 else 35.0 + row * 16.0
    return (x, y, x + 8.0, y + 15.0) if row == 0 else (x, y, x + 15.0, y + 15.0)


def _foreground(proto, cfg, rng, cue=1.0):
    f = np.zeros(cfg.feature_dim)
    f[0] = cue * cfg.cluster_separation
    f[1:] = proto
    return f + cfg.noise_sigma * rng.standard_normal(cfg.feature_dim)


def _background(cfg, rng):
    return cfg.noise_sigma * rng.standard_normal(cfg.feature_dim)


def generate(cfg: SynthConfig):
    """Build (source dataset, target dataset, planted truth).

    The planted truth maps class -> bag id -> planted proposal index.
    Boxes are assigned so that index-correctness and IoU-correctness
    coincide; one background proposal per bag covers the whole image and is
    flagged is_full_image.
    """
    rng = np.random.default_rng(cfg.seed)
    edim = cfg.feature_dim - 1
    scale = cfg.cluster_separation
    n_src = cfg.source_num_classes or cfg.num_classes
    target_classes = [f"t{i:02d}" for i in range(cfg.num_classes)]
    source_classes = [f"s{i:02d}" for i in range(n_src)]
    target_protos = scale * _unit_vectors(cfg.num_classes, edim, rng)
    source_protos = scale * _unit_vectors(n_src, edim, rng)
    n_conf = int(round(cfg.distractor_overlap * cfg.num_classes))
    n_pool = max(2, n_conf)
    pool = scale * _unit_vectors(n_pool, edim, rng)
    confused = set(target_classes[:n_conf])

    target_bags = []
    truth: Dict[str, Dict[str, int]] = {c: {} for c in target_classes}
    for ci, cls in enumerate(target_classes):
        for bi in range(cfg.bags_per_class):
            bag_id = f"T-{cls}-{bi:03d}"
            entries = [("true", _foreground(target_protos[ci], cfg, rng))]
            if cls in confused:
                # the distractor is *more* salient than the object itself, so
                # any per-proposal score prefers it; only cross-bag
                # consistency tells the planted cluster apart
                q = pool[rng.integers(0, n_pool)]
                entries.append(("distractor",
                                _foreground(q, cfg, rng, cue=DISTRACTOR_CUE)))
            entries.append(("full", _background(cfg, rng)))
            while len(entries) < cfg.proposals_per_bag:
                entries.append(("bg", _background(cfg, rng)))
            entries = entries[:cfg.proposals_per_bag]
            order = rng.permutation(len(entries))
            proposals = []
            for slot, k in enumerate(order):
                kind, feats = entries[k]
                if kind == "full":
                    box = (0.0, 0.0, IMAGE_SIZE, IMAGE_SIZE)
                elif kind == "true":
                    box = GT_BOX
                    truth[cls][bag_id] = slot
                else:
                    box = _slot_box(slot)
                proposals.append(Proposal(
                    features=feats, box=box,
                    gt_class=cls if kind == "true" else BACKGROUND,
                    is_full_image=(kind == "full")))
            target_bags.append(Bag(bag_id, proposals, {cls}))

    source_bags = []
    for ci, cls in enumerate(source_classes):
        for bi in range(cfg.bags_per_class):
            bag_id = f"S-{cls}-{bi:03d}"
            proposals = []
            n_fg = min(cfg.source_fg_per_bag, cfg.proposals_per_bag - 1)
            for _ in range(n_fg):
                # saliency varies across source foregrounds, so cue strength
                # carries no same-class information
                proposals.append(Proposal(
                    features=_foreground(source_protos[ci], cfg, rng,
                                         cue=rng.uniform(0.8, 1.4)),
                    box=GT_BOX, gt_class=cls))
            while len(proposals) < cfg.proposals_per_bag:
                proposals.append(Proposal(
                    features=_background(cfg, rng),
                    box=_slot_box(len(proposals)), gt_class=BACKGROUND))
            order = rng.permutation(len(proposals))
            source_bags.append(Bag(bag_id, [proposals[k] for k in order], {cls}))

    target = Dataset(target_bags, classes=target_classes, d=cfg.feature_dim)
    source = Dataset(source_bags, classes=source_classes, d=cfg.feature_dim)
    return source, target, truth
