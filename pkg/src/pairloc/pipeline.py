"""Alternating-optimization driver: source training, warm-up re-localization,
then repeated {re-train, re-localize} rounds with optional multi-fold
re-localization, plus the unary-only baseline."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .data import Dataset, Selection, generic_features, positive_negative_split
from .inference import IcmConfig, InitScheme, relocalize
from .losses import LossWeights
from .model import ScoringModel, TrainConfig, retrain, train_source
from .transfer import BlendWeights, BlendedOracle, oracle_factory, warmup_relocalize

log = logging.getLogger(__name__)

MODES = ("full", "unary_only", "warmup_only", "warmup_unary_only")


@dataclass
class PipelineConfig:
    outer_iterations: int = 5
    folds: int = 10
    mode: str = "full"
    alpha: float = 1.0
    blend: BlendWeights = field(default_factory=BlendWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    source_train: Optional[TrainConfig] = None
    k: int = 8
    icm_epochs: int = 2
    seed: int = 0
    early_stop_change: float = 0.005

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.folds < 1 or self.outer_iterations < 0:
            raise ValueError("folds >= 1 and outer_iterations >= 0 required")


@dataclass
class RunResult:
    model: ScoringModel
    selections: Dict[str, Selection]
    history: List[dict]


def convergence_check(previous: Dict[str, Selection],
                      new: Dict[str, Selection]) -> float:
    """Fraction of positive-bag entries whose chosen index changed."""
    total = changed = 0
    for cls, sel in new.items():
        prev = previous.get(cls, Selection(cls, {})).chosen
        for bag_id, idx in sel.chosen.items():
            total += 1
            if prev.get(bag_id) != idx:
                changed += 1
    return changed / total if total else 0.0


def argmax_relocalize(dataset: Dataset, model: ScoringModel,
                      blend: BlendWeights) -> Dict[str, Selection]:
    """Unary-only re-localization: blended-unary argmax per positive bag."""
    selections = {}
    for cls in sorted(dataset.classes):
        oracle = BlendedOracle(model, cls, blend)
        positive, _ = positive_negative_split(dataset, cls)
        chosen = {b.id: int(np.argmax(oracle.unary(b))) for b in positive}
        selections[cls] = Selection(cls, chosen)
    return selections


def _stratified_folds(dataset: Dataset, folds: int, seed: int):
    """Assign bags to folds round-robin within each (first) class label."""
    rng = np.random.default_rng(seed)
    assignment = {}
    by_class = {}
    for bag in dataset.bags:
        key = sorted(bag.labels)[0] if bag.labels else ""
        by_class.setdefault(key, []).append(bag.id)
    for key in sorted(by_class):
        ids = by_class[key]
        ids = [ids[i] for i in rng.permutation(len(ids))]
        for i, bag_id in enumerate(ids):
            assignment[bag_id] = i % folds
    return assignment


def _restrict_selections(selections, bag_ids):
    keep = set(bag_ids)
    return {cls: Selection(cls, {b: i for b, i in sel.chosen.items() if b in keep})
            for cls, sel in selections.items()}


def multifold_relocalize(dataset: Dataset, model: ScoringModel,
                         selections: Dict[str, Selection],
                         config: PipelineConfig, seed: int):
    """Re-localize each fold with a model retrained on the other folds.

    With folds == 1 this is a plain re-localization with the given model.
    Returns (selections, total_energy).
    """
    scheme = InitScheme("mini_problems", k=config.k, seed=seed)
    icm = IcmConfig(epochs=config.icm_epochs)
    weights = LossWeights(config.alpha)

    def run_reloc(ds, mdl):
        sels, traces = relocalize(ds, oracle_factory(mdl, config.blend),
                                  config.alpha, scheme, icm)
        energy = sum(t.energies[-1] for t in traces.values())
        return sels, energy

    if config.folds == 1:
        return run_reloc(dataset, model)

    assignment = _stratified_folds(dataset, config.folds, seed)
    merged = {cls: {} for cls in sorted(dataset.classes)}
    total_energy = 0.0
    for f in range(config.folds):
        hold_out = [b for b in dataset.bags if assignment[b.id] == f]
        train_bags = [b for b in dataset.bags if assignment[b.id] != f]
        if not hold_out:
            continue
        if not train_bags:
            raise ValueError("a fold holds the entire dataset")
        fold_model = model.copy()
        train_ds = Dataset(train_bags, classes=dataset.classes, d=dataset.d)
        fold_cfg = replace(config.train, seed=seed * 1000 + f)
        retrain(fold_model, train_ds, _restrict_selections(selections, [b.id for b in train_bags]),
                weights, fold_cfg)
        for cls in sorted(dataset.classes):
            if not any(cls in b.labels for b in hold_out):
                log.warning("fold %d has no positive bag for class %s; skipped", f, cls)
        fold_ds = Dataset(hold_out, classes=dataset.classes, d=dataset.d)
        sels, energy = run_reloc(fold_ds, fold_model)
        total_energy += energy
        for cls, sel in sels.items():
            merged[cls].update(sel.chosen)
    return ({cls: Selection(cls, chosen) for cls, chosen in merged.items()},
            total_energy)


def run(config: PipelineConfig, source: Dataset, target: Dataset,
        checkpoint=None) -> RunResult:
    """Full driver: train on source, warm up, then alternate re-training
    and re-localization on the target set.

    `checkpoint(tag, model)` is called after source training, warm-up and
    every outer iteration when given.
    """
    unary_mode = config.mode in ("unary_only", "warmup_unary_only")
    d_generic = generic_features(target.bags[0].proposals[0]).shape[0]
    model = ScoringModel(target.d, sorted(target.classes),
                         d_generic=d_generic, seed=config.seed)
    src_cfg = config.source_train if config.source_train is not None else config.train
    src_cfg = replace(src_cfg, seed=config.seed + 1)
    weights = LossWeights(0.0 if unary_mode else config.alpha)
    _, src_trace = train_source(model, source, weights, src_cfg,
                                use_pairwise=not unary_mode)

    history = []
    scheme = InitScheme("mini_problems", k=config.k, seed=config.seed + 2)
    icm = IcmConfig(epochs=config.icm_epochs)
    if unary_mode:
        selections = argmax_relocalize(target, model,
                                       BlendWeights(lambda1=1.0, lambda2=1.0))
        warm_energy = 0.0
    else:
        selections, traces = warmup_relocalize(target, model, config.alpha,
                                               scheme, icm)
        warm_energy = sum(t.energies[-1] for t in traces.values())
    history.append({"phase": "warmup", "energy": warm_energy,
                    "source_loss_final": src_trace[-1] if src_trace else None})
    if checkpoint is not None:
        checkpoint("warmup", model)

    if config.mode in ("warmup_only", "warmup_unary_only"):
        return RunResult(model, selections, history)

    for it in range(config.outer_iterations):
        train_cfg = replace(config.train, seed=config.seed + 100 + it)
        _, loss_trace = retrain(model, target, selections, weights, train_cfg)
        if unary_mode:
            new_selections = argmax_relocalize(target, model, config.blend)
            energy = 0.0
        else:
            new_selections, energy = multifold_relocalize(
                target, model, selections, config, seed=config.seed + 200 + it)
        change = convergence_check(selections, new_selections)
        selections = new_selections
        history.append({"phase": "alternate", "iteration": it,
                        "retrain_loss_final": loss_trace[-1] if loss_trace else None,
                        "energy": energy, "selection_change": change})
        if checkpoint is not None:
            checkpoint(f"iter{it:02d}", model)
        if change < config.early_stop_change:
            break
    return RunResult(model, selections, history)
