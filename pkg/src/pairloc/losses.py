"""Sigmoid cross-entropy primitives and the empirical localization losses.

The loss of a labeling is a plain sum (not a mean) over unary terms and over
ordered cross-bag pairwise terms.  The key algebraic fact used by the
re-localization step is that sigmoid cross entropy is affine in the label:
ce(x, y) = ce(x, 0) - y*x, which makes the objective linear in the pseudo
labels.
"""

from dataclasses import dataclass

import numpy as np

from .data import Bag, Selection, induced_pairwise, unary_label


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # weight of the pairwise part

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_ce(x, y):
    """Sigmoid cross entropy in the overflow-safe form max(x,0) - x*y + log1p(exp(-|x|)).

    `y` may be any value in [0, 1]; the naive -log form overflows for |x|
    beyond ~37 while this form is exact for all finite x.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("labels must lie in [0, 1]")
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    if out.ndim == 0:
        return float(out)
    return out


def unary_loss(unary_scores, selection: Selection, bags) -> float:
    """Sum of ce(score, pseudo label) over every proposal of `bags`.

    `unary_scores` maps bag id -> array of per-proposal logits.
    """
    total = 0.0
    for bag in bags:
        try:
            scores = np.asarray(unary_scores[bag.id], dtype=np.float64)
        except KeyError:
            raise KeyError(f"missing unary scores for bag {bag.id!r}")
        if scores.shape[0] != len(bag):
            raise ValueError(f"bag {bag.id!r}: score/proposal count mismatch")
        labels = np.array([unary_label(selection, bag, i) for i in range(len(bag))],
                          dtype=np.float64)
        total += float(np.sum(sigmoid_ce(scores, labels)))
    return total


def pairwise_loss(pairwise_scores, selection: Selection, bags) -> float:
    """Sum of ce over all *ordered* cross-bag proposal pairs.

    `pairwise_scores` maps (bag_id, i, bag_id', i') -> logit and must cover
    both orders of every cross-bag pair.
    """
    for (ba, _, bb, _) in pairwise_scores:
        if ba == bb:
            raise ValueError("pairwise scores must not contain same-bag pairs")
    total = 0.0
    for bag in bags:
        for other in bags:
            if bag.id == other.id:
                continue
            for i in range(len(bag)):
                for j in range(len(other)):
                    x = pairwise_scores[(bag.id, i, other.id, j)]
                    r = induced_pairwise(selection, bag, other, i, j)
                    total += sigmoid_ce(x, r)
    return float(total)


def combined_loss(unary_part: float, pairwise_part: float, weights: LossWeights) -> float:
    return weights.alpha * pairwise_part + unary_part


def total_loss(per_class_losses) -> float:
    return float(sum(per_class_losses))
