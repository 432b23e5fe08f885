"""Weakly supervised object localization with learned pairwise similarity.

Multiple-instance learning over bags of proposals, augmented with a
relation-network pairwise score.  Scoring functions and per-bag selections
are learned jointly by alternating SGD re-training with graph-labeling
re-localization (TRWS-initialized ICM), with knowledge transfer from a
fully labeled source set.
"""

from .data import (BACKGROUND, Bag, Dataset, Proposal, Selection,
                   induced_pairwise, is_feasible, positive_negative_split,
                   unary_label)
from .graph import EvalCounter, GraphProblem, build_graph, subproblem
from .inference import (IcmConfig, InitScheme, TrwsConfig, icm_run,
                        initialize, partition_mini_problems, relocalize,
                        trws_solve)
from .losses import (LossWeights, combined_loss, pairwise_loss, sigmoid,
                     sigmoid_ce, total_loss, unary_loss)
from .metrics import corloc, iou, selection_accuracy
from .model import (GENERIC, Minibatch, ScoringModel, TrainConfig, gradients,
                    retrain, sgd_step, train_source)
from .pipeline import (PipelineConfig, RunResult, argmax_relocalize,
                       convergence_check, multifold_relocalize, run)
from .synth import SynthConfig, generate
from .transfer import (BlendWeights, BlendedOracle, blended_pairwise,
                       blended_unary, warmup_relocalize)

__version__ = "0.1.0"
