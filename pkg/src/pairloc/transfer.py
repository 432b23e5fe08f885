"""Blending of class-generic (transferred) and class-specific scores, and
the warm-up re-localization that uses the transferred scores only."""

from dataclasses import dataclass

import numpy as np

from .data import Bag, Dataset
from .inference import IcmConfig, InitScheme, relocalize
from .model import GENERIC, ScoringModel


@dataclass(frozen=True)
class BlendWeights:
    lambda1: float = 0.5  # pairwise: weight of the class-generic score
    lambda2: float = 0.5  # unary: weight of the class-generic score

    def __post_init__(self):
        if not (0 <= self.lambda1 <= 1 and 0 <= self.lambda2 <= 1):
            raise ValueError("lambda1/lambda2 must lie in [0, 1]")


def blended_unary(model: ScoringModel, cls: str, proposal, weights: BlendWeights):
    from .data import generic_features
    lam = weights.lambda2
    out = 0.0
    if lam < 1.0:
        out += (1.0 - lam) * model.unary_forward(cls, proposal.features)
    if lam > 0.0:
        out += lam * model.unary_forward(GENERIC, generic_features(proposal))
    return out


def blended_pairwise(model: ScoringModel, cls: str, p1, p2, weights: BlendWeights):
    from .data import generic_features
    lam = weights.lambda1
    out = 0.0
    if lam < 1.0:
        out += (1.0 - lam) * model.pairwise_forward(cls, p1.features, p2.features)
    if lam > 0.0:
        out += lam * model.pairwise_forward(
            GENERIC, generic_features(p1), generic_features(p2))
    return out


class BlendedOracle:
    """Score oracle for one class with generic/specific blending.

    A pure-generic blend (lambda = 1) never touches class-specific
    parameters; a pure-specific blend (lambda = 0) never touches the
    generic ones.
    """

    def __init__(self, model: ScoringModel, cls: str, weights: BlendWeights):
        self.model = model
        self.cls = cls
        self.weights = weights

    def unary(self, bag: Bag) -> np.ndarray:
        lam = self.weights.lambda2
        out = np.zeros(len(bag))
        if lam < 1.0:
            out += (1.0 - lam) * self.model.unary_forward(self.cls, bag.feature_matrix())
        if lam > 0.0:
            out += lam * self.model.unary_forward(GENERIC, bag.generic_feature_matrix())
        return out

    def pairwise(self, bag_a: Bag, idx_a, bag_b: Bag, idx_b) -> np.ndarray:
        lam = self.weights.lambda1
        idx_a = np.asarray(idx_a, dtype=int)
        idx_b = np.asarray(idx_b, dtype=int)
        out = np.zeros(idx_a.shape[0])
        if lam < 1.0:
            out += (1.0 - lam) * self.model.pairwise_forward(
                self.cls, bag_a.feature_matrix()[idx_a], bag_b.feature_matrix()[idx_b])
        if lam > 0.0:
            out += lam * self.model.pairwise_forward(
                GENERIC, bag_a.generic_feature_matrix()[idx_a],
                bag_b.generic_feature_matrix()[idx_b])
        return out


def oracle_factory(model: ScoringModel, weights: BlendWeights):
    return lambda cls: BlendedOracle(model, cls, weights)


def warmup_relocalize(dataset: Dataset, model: ScoringModel, alpha: float,
                      scheme: InitScheme, icm: IcmConfig):
    """Re-localization with transferred scores only (lambda1 = lambda2 = 1)."""
    weights = BlendWeights(lambda1=1.0, lambda2=1.0)
    return relocalize(dataset, oracle_factory(model, weights), alpha, scheme, icm)
