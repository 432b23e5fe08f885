"""Unary and pairwise scoring functions with analytic gradients and SGD.

Unary scores are linear in the proposal features.  Pairwise scores use a
gated relation network: a joint embedding
    E(e, e') = tanh(W1 [e,e'] + b1) * sigmoid(W2 [e,e'] + b2) + (e + e')/2
followed by a linear head.  All class-specific pairwise heads share one
embedding; the class-generic scorers have their own parameters and may read
a separate feature block.

Parameters live in a flat name -> ndarray dict so the SGD step, momentum
state, and finite-difference checks can treat the model uniformly.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import (BACKGROUND, Bag, Dataset, Selection, generic_features,
                   positive_negative_split)
from .losses import LossWeights, sigmoid, sigmoid_ce

GENERIC = None  # branch marker for the class-generic scorers


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    iterations: int = 200
    fg_per_bag: int = 3
    bg_per_bag: int = 7
    seed: int = 0
    # Number of bags sampled per class per SGD step; None = all bags.
    bags_per_step: Optional[int] = 8

    def __post_init__(self):
        if self.learning_rate < 0 or not (0 <= self.momentum < 1):
            raise ValueError("bad learning rate / momentum")
        if self.fg_per_bag <= 0 or self.bg_per_bag <= 0 or self.iterations < 0:
            raise ValueError("counts must be positive")


def _unary_keys(prefix):
    return [f"{prefix}.w", f"{prefix}.b"]


def _relation_keys(prefix):
    return [f"{prefix}.W1", f"{prefix}.b1", f"{prefix}.W2", f"{prefix}.b2"]


class ScoringModel:
    """All scoring parameters for one run: per-class and class-generic."""

    def __init__(self, d: int, classes, d_generic: Optional[int] = None, seed: int = 0):
        self.d = int(d)
        self.d_generic = int(d_generic) if d_generic is not None else int(d)
        self.classes = tuple(sorted(classes))
        self.params: Dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        self._init_unary("gen.unary", self.d_generic, rng)
        self._init_relation("gen.pair", self.d_generic, rng)
        self._init_head("gen.pair", self.d_generic, rng)
        self._init_relation("cls.embed", self.d, rng)
        for c in self.classes:
            self._init_unary(f"cls.{c}.unary", self.d, rng)
            self._init_head(f"cls.{c}.pair", self.d, rng)

    # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases
    def _init_unary(self, prefix, d, rng):
        s = 1.0 / np.sqrt(d)
        self.params[f"{prefix}.w"] = rng.uniform(-s, s, size=d)
        self.params[f"{prefix}.b"] = np.zeros(())

    def _init_relation(self, prefix, d, rng):
        s = 1.0 / np.sqrt(2 * d)
        self.params[f"{prefix}.W1"] = rng.uniform(-s, s, size=(d, 2 * d))
        self.params[f"{prefix}.b1"] = np.zeros(d)
        self.params[f"{prefix}.W2"] = rng.uniform(-s, s, size=(d, 2 * d))
        self.params[f"{prefix}.b2"] = np.zeros(d)

    def _init_head(self, prefix, d, rng):
        s = 1.0 / np.sqrt(d)
        self.params[f"{prefix}.w"] = rng.uniform(-s, s, size=d)
        self.params[f"{prefix}.b"] = np.zeros(())

    # branch helpers -----------------------------------------------------
    def _unary_prefix(self, branch):
        return "gen.unary" if branch is GENERIC else f"cls.{branch}.unary"

    def _embed_prefix(self, branch):
        return "gen.pair" if branch is GENERIC else "cls.embed"

    def _head_prefix(self, branch):
        return "gen.pair" if branch is GENERIC else f"cls.{branch}.pair"

    def _check_class(self, branch):
        if branch is not GENERIC and branch not in self.classes:
            raise KeyError(f"unknown class {branch!r}")

    # forward passes -----------------------------------------------------
    def unary_forward(self, branch, feats: np.ndarray) -> np.ndarray:
        """Logits for a (n, d) feature matrix; (d,) input gives a scalar."""
        self._check_class(branch)
        p = self._unary_prefix(branch)
        w, b = self.params[f"{p}.w"], self.params[f"{p}.b"]
        feats = np.asarray(feats, dtype=np.float64)
        single = feats.ndim == 1
        if single:
            feats = feats[None, :]
        if feats.shape[1] != w.shape[0]:
            raise ValueError("feature dimension mismatch")
        out = feats @ w + b
        return float(out[0]) if single else out

    def embed(self, branch, e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
        self._check_class(branch)
        p = self._embed_prefix(branch)
        e1 = np.atleast_2d(np.asarray(e1, dtype=np.float64))
        e2 = np.atleast_2d(np.asarray(e2, dtype=np.float64))
        d = self.params[f"{p}.W1"].shape[0]
        if e1.shape[1] != d or e2.shape[1] != d:
            raise ValueError("feature dimension mismatch")
        z = np.concatenate([e1, e2], axis=1)
        u = np.tanh(z @ self.params[f"{p}.W1"].T + self.params[f"{p}.b1"])
        v = sigmoid(z @ self.params[f"{p}.W2"].T + self.params[f"{p}.b2"])
        return u * v + 0.5 * (e1 + e2)

    def pairwise_forward(self, branch, e1: np.ndarray, e2: np.ndarray):
        """Similarity logits for ordered pairs; (d,) inputs give a scalar."""
        single = np.asarray(e1).ndim == 1
        emb = self.embed(branch, e1, e2)
        p = self._head_prefix(branch)
        out = emb @ self.params[f"{p}.w"] + self.params[f"{p}.b"]
        return float(out[0]) if single else out

    def copy(self) -> "ScoringModel":
        clone = ScoringModel.__new__(ScoringModel)
        clone.d, clone.d_generic, clone.classes = self.d, self.d_generic, self.classes
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    # checkpointing ------------------------------------------------------
    def save(self, path):
        blob = {
            "format": "pairloc-model-v1",
            "d": self.d,
            "d_generic": self.d_generic,
            "classes": list(self.classes),
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "ScoringModel":
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
        if blob.get("format") != "pairloc-model-v1":
            raise ValueError("not a pairloc model checkpoint")
        model = cls.__new__(cls)
        model.d = int(blob["d"])
        model.d_generic = int(blob["d_generic"])
        model.classes = tuple(blob["classes"])
        model.params = {k: np.asarray(v, dtype=np.float64)
                        for k, v in blob["params"].items()}
        return model


@dataclass
class Minibatch:
    """Labeled score terms for one gradient step.

    unary: (branch, features (n,d), labels (n,)) groups
    pairs: (branch, left (n,d), right (n,d), labels (n,)) groups
    """
    unary: List[Tuple] = field(default_factory=list)
    pairs: List[Tuple] = field(default_factory=list)

    def __len__(self):
        return (sum(len(y) for _, _, y in self.unary)
                + sum(len(y) for _, _, _, y in self.pairs))


def batch_loss(model: ScoringModel, batch: Minibatch, alpha: float) -> float:
    total = 0.0
    for branch, feats, labels in batch.unary:
        total += float(np.sum(sigmoid_ce(model.unary_forward(branch, feats), labels)))
    for branch, e1, e2, labels in batch.pairs:
        total += alpha * float(np.sum(
            sigmoid_ce(model.pairwise_forward(branch, e1, e2), labels)))
    return total


def gradients(model: ScoringModel, batch: Minibatch, alpha: float):
    """Analytic gradient of `batch_loss` w.r.t. every parameter.

    Returns (loss, grads) where grads has the same keys/shapes as
    model.params (missing keys mean zero gradient).
    """
    if len(batch) == 0:
        raise ValueError("empty minibatch")
    grads: Dict[str, np.ndarray] = {}

    def acc(key, value):
        if key in grads:
            grads[key] += value
        else:
            grads[key] = np.array(value, dtype=np.float64)

    loss = 0.0
    for branch, feats, labels in batch.unary:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        labels = np.asarray(labels, dtype=np.float64)
        logits = model.unary_forward(branch, feats)
        loss += float(np.sum(sigmoid_ce(logits, labels)))
        g = sigmoid(logits) - labels  # d ce / d logit
        p = model._unary_prefix(branch)
        acc(f"{p}.w", feats.T @ g)
        acc(f"{p}.b", np.sum(g))

    for branch, e1, e2, labels in batch.pairs:
        e1 = np.atleast_2d(np.asarray(e1, dtype=np.float64))
        e2 = np.atleast_2d(np.asarray(e2, dtype=np.float64))
        labels = np.asarray(labels, dtype=np.float64)
        ep = model._embed_prefix(branch)
        hp = model._head_prefix(branch)
        z = np.concatenate([e1, e2], axis=1)
        t = np.tanh(z @ model.params[f"{ep}.W1"].T + model.params[f"{ep}.b1"])
        s = sigmoid(z @ model.params[f"{ep}.W2"].T + model.params[f"{ep}.b2"])
        emb = t * s + 0.5 * (e1 + e2)
        logits = emb @ model.params[f"{hp}.w"] + model.params[f"{hp}.b"]
        loss += alpha * float(np.sum(sigmoid_ce(logits, labels)))
        g = alpha * (sigmoid(logits) - labels)
        acc(f"{hp}.w", emb.T @ g)
        acc(f"{hp}.b", np.sum(g))
        demb = g[:, None] * model.params[f"{hp}.w"][None, :]
        du = demb * (1.0 - t * t) * s
        dv = demb * t * s * (1.0 - s)
        acc(f"{ep}.W1", du.T @ z)
        acc(f"{ep}.b1", np.sum(du, axis=0))
        acc(f"{ep}.W2", dv.T @ z)
        acc(f"{ep}.b2", np.sum(dv, axis=0))
    return loss, grads


def sgd_step(model: ScoringModel, grads, config: TrainConfig, velocity=None):
    """v <- mu*v - lr*g ; theta <- theta + v.  Returns the velocity state."""
    if velocity is None:
        velocity = {}
    for key, g in grads.items():
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(model.params[key])
        v = config.momentum * v - config.learning_rate * g
        velocity[key] = v
        self_p = model.params[key]
        model.params[key] = self_p + v
    return velocity


# ----------------------------------------------------------------------
# minibatch assembly
# ----------------------------------------------------------------------

def _sample_bag_proposals(bag: Bag, chosen: Optional[int], config: TrainConfig, rng):
    """Indices and pseudo labels sampled from one bag (3 fg + 7 bg style).

    A positive bag holds exactly one pseudo-positive proposal, so foreground
    samples repeat it; background indices are drawn with replacement from the
    rest (or all proposals for a negative bag).
    """
    idx, lab = [], []
    if chosen is not None:
        idx.extend([chosen] * config.fg_per_bag)
        lab.extend([1.0] * config.fg_per_bag)
        pool = [i for i in range(len(bag)) if i != chosen]
    else:
        pool = list(range(len(bag)))
    if pool:
        picks = rng.integers(0, len(pool), size=config.bg_per_bag)
        idx.extend(pool[p] for p in picks)
        lab.extend([0.0] * config.bg_per_bag)
    return np.array(idx, dtype=int), np.array(lab, dtype=np.float64)


def _cross_bag_pairs(samples):
    """Ordered cross-bag pairs among per-bag samples.

    `samples` is a list of (features (n_i, d), labels (n_i,)) per bag; the
    pairwise pseudo label of a pair is the product of the unary labels.
    """
    feats = [f for f, _ in samples]
    labs = [l for _, l in samples]
    e1, e2, r = [], [], []
    for i in range(len(samples)):
        for j in range(len(samples)):
            if i == j:
                continue
            fi, fj = feats[i], feats[j]
            li, lj = labs[i], labs[j]
            n, m = len(li), len(lj)
            e1.append(np.repeat(fi, m, axis=0))
            e2.append(np.tile(fj, (n, 1)))
            r.append((li[:, None] * lj[None, :]).ravel())
    if not e1:
        return None
    return np.concatenate(e1), np.concatenate(e2), np.concatenate(r)


def _subsample(items, count, rng):
    if count >= len(items):
        return list(items)
    picks = rng.choice(len(items), size=count, replace=False)
    return [items[i] for i in sorted(picks)]


def _class_minibatch(dataset: Dataset, cls: str, selection: Selection,
                     config: TrainConfig, rng) -> Minibatch:
    if config.bags_per_step is None:
        bags = list(dataset.bags)
    else:
        # half positive bags, half negative, so cross-bag foreground pairs
        # (the only label-1 pairwise terms) actually occur in every step
        positive, negative = positive_negative_split(dataset, cls)
        n_pos = min(config.bags_per_step - config.bags_per_step // 2, len(positive))
        n_neg = min(config.bags_per_step - n_pos, len(negative))
        bags = _subsample(positive, n_pos, rng) + _subsample(negative, n_neg, rng)
    batch = Minibatch()
    samples = []
    for bag in bags:
        chosen = selection.chosen.get(bag.id) if cls in bag.labels else None
        idx, lab = _sample_bag_proposals(bag, chosen, config, rng)
        feats = bag.feature_matrix()[idx]
        batch.unary.append((cls, feats, lab))
        samples.append((feats, lab))
    pairs = _cross_bag_pairs(samples)
    if pairs is not None:
        batch.pairs.append((cls, pairs[0], pairs[1], pairs[2]))
    return batch


def retrain(model: ScoringModel, dataset: Dataset, selections: Dict[str, Selection],
            weights: LossWeights, config: TrainConfig, velocity=None):
    """SGD re-training of all class-specific scorers under fixed pseudo labels.

    Returns (model, loss_trace); the model is updated in place.
    """
    from .data import is_feasible
    for cls in model.classes:
        if cls in dataset.classes and not is_feasible(selections[cls], dataset):
            raise ValueError(f"infeasible selection for class {cls!r}")
    rng = np.random.default_rng(config.seed)
    trace = []
    for _ in range(config.iterations):
        batch = Minibatch()
        for cls in model.classes:
            if cls not in dataset.classes:
                continue
            cb = _class_minibatch(dataset, cls, selections[cls], config, rng)
            batch.unary.extend(cb.unary)
            if weights.alpha > 0:
                batch.pairs.extend(cb.pairs)
        loss, grads = gradients(model, batch, weights.alpha)
        velocity = sgd_step(model, grads, config, velocity)
        trace.append(loss)
    return model, trace


def train_source(model: ScoringModel, source: Dataset, weights: LossWeights,
                 config: TrainConfig, use_pairwise: bool = True):
    """Train the class-generic scorers on a fully labeled source set.

    Unary targets are objectness labels (1 iff not background); pairwise
    targets follow the same-class relation over cross-bag pairs.
    """
    for bag in source.bags:
        for p in bag.proposals:
            if p.gt_class is None:
                raise ValueError(f"bag {bag.id!r} has an unlabeled proposal")
    rng = np.random.default_rng(config.seed)
    velocity = None
    trace = []
    bags = list(source.bags)
    by_class = {}
    for bag in bags:
        for lab in bag.labels:
            by_class.setdefault(lab, []).append(bag)
    class_names = sorted(by_class)
    for _ in range(config.iterations):
        if config.bags_per_step is not None and config.bags_per_step < len(bags):
            # draw from two classes so every step sees same-class cross-bag
            # pairs; uniform bag sampling would almost never produce them
            n_cls = min(2, len(class_names))
            cls_pick = rng.choice(len(class_names), size=n_cls, replace=False)
            step_bags = []
            share = config.bags_per_step // n_cls
            for ci in sorted(cls_pick):
                step_bags.extend(_subsample(by_class[class_names[ci]], share, rng))
        else:
            step_bags = bags
        batch = Minibatch()
        samples = []
        for bag in step_bags:
            fg = [i for i, p in enumerate(bag.proposals) if p.gt_class != BACKGROUND]
            bg = [i for i, p in enumerate(bag.proposals) if p.gt_class == BACKGROUND]
            idx = []
            if fg:
                idx.extend(fg[k] for k in rng.integers(0, len(fg), size=config.fg_per_bag))
            if bg:
                idx.extend(bg[k] for k in rng.integers(0, len(bg), size=config.bg_per_bag))
            feats = bag.generic_feature_matrix()[idx]
            olab = np.array([1.0 if bag.proposals[i].gt_class != BACKGROUND else 0.0
                             for i in idx])
            clab = [bag.proposals[i].gt_class for i in idx]
            batch.unary.append((GENERIC, feats, olab))
            samples.append((feats, clab))
        if use_pairwise:
            e1, e2, r = [], [], []
            for i in range(len(samples)):
                for j in range(len(samples)):
                    if i == j:
                        continue
                    fi, ci = samples[i]
                    fj, cj = samples[j]
                    e1.append(np.repeat(fi, len(cj), axis=0))
                    e2.append(np.tile(fj, (len(ci), 1)))
                    rel = np.array([[1.0 if a == b and a != BACKGROUND else 0.0
                                     for b in cj] for a in ci])
                    r.append(rel.ravel())
            if e1:
                batch.pairs.append((GENERIC, np.concatenate(e1),
                                    np.concatenate(e2), np.concatenate(r)))
        loss, grads = gradients(model, batch, weights.alpha)
        velocity = sgd_step(model, grads, config, velocity)
        trace.append(loss)
    return model, trace
