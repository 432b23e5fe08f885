"""Re-localization solvers: ICM, sequential TRWS, and the mini-problem
initializer that seeds ICM (plus the baseline initializers used in the
initialization study).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset, Selection, positive_negative_split
from .graph import EvalCounter, GraphProblem, build_graph, subproblem


@dataclass
class IcmConfig:
    epochs: int = 2
    order: str = "fixed"  # or "random"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.order not in ("fixed", "random"):
            raise ValueError("order must be 'fixed' or 'random'")


@dataclass
class TrwsConfig:
    max_iters: int = 500
    lb_tolerance: float = 1e-6
    lb_patience: int = 10

    def __post_init__(self):
        if self.max_iters <= 0 or self.lb_tolerance <= 0 or self.lb_patience <= 0:
            raise ValueError("TRWS config values must be positive")


@dataclass
class InitScheme:
    variant: str  # random | objectness | full_image | mini_problems
    k: int = 8
    seed: int = 0
    trws: TrwsConfig = field(default_factory=TrwsConfig)

    def __post_init__(self):
        if self.variant not in ("random", "objectness", "full_image", "mini_problems"):
            raise ValueError(f"unknown init variant {self.variant!r}")
        if self.variant == "mini_problems" and self.k < 2:
            raise ValueError("mini-problem size K must be >= 2")


# ----------------------------------------------------------------------
# ICM
# ----------------------------------------------------------------------

def icm_node_update(problem: GraphProblem, labels: List[int], node: int):
    """Set `node` to the argmin of its conditional energy.

    Ties keep the current label, otherwise take the smallest index.
    Returns (new_labels, delta); delta <= 0.
    """
    cost = problem.conditional_costs(labels, node)
    best = cost.min()
    current = labels[node]
    if cost[current] == best:
        return list(labels), 0.0
    new_label = int(np.argmin(cost))
    new_labels = list(labels)
    new_labels[node] = new_label
    return new_labels, float(cost[new_label] - cost[current])


def icm_run(problem: GraphProblem, labels: Sequence[int], config: IcmConfig):
    """Coordinate-descent epochs over all nodes; early exit on a fixed point.

    Returns (labels, trace) where trace holds the energy after every
    accepted update, starting from the initial energy.
    """
    labels = list(labels)
    energy = problem.energy(labels)
    trace = [energy]
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = np.arange(problem.num_nodes)
        if config.order == "random":
            order = rng.permutation(order)
        changed = False
        for node in order:
            labels, delta = icm_node_update(problem, labels, int(node))
            if delta != 0.0:
                changed = True
                energy += delta
                trace.append(energy)
        if not changed:
            break
    return labels, trace


# ----------------------------------------------------------------------
# sequential TRWS
# ----------------------------------------------------------------------

def _local_descent(theta, block, labels, epochs=3):
    """Coordinate descent on the materialized tables; polish for extraction."""
    m = len(theta)
    labels = list(labels)
    for _ in range(epochs):
        changed = False
        for i in range(m):
            cost = theta[i].copy()
            for j in range(m):
                if j != i:
                    cost += block(i, j)[:, labels[j]]
            if cost[labels[i]] > cost.min():
                labels[i] = int(np.argmin(cost))
                changed = True
        if not changed:
            break
    return labels


def trws_solve(problem: GraphProblem, config: Optional[TrwsConfig] = None):
    """Sequential tree-reweighted message passing on the complete graph.

    Fixed node order; a forward pass sends messages to higher-index nodes
    and a backward pass mirrors it, with per-node weights
    gamma_i = 1 / max(#lower neighbors, #higher neighbors).  The lower
    bound comes from the message reparameterization (min of every
    reparameterized unary plus min of every reparameterized edge) and is
    valid for any message state; the trace reports the best bound so far.

    A labeling is extracted during every backward pass by conditioning on
    the already-fixed higher nodes, polished by a few coordinate-descent
    sweeps on the materialized tables; the best labeling seen is returned.

    Returns (labels, lower_bound_trace).
    """
    if config is None:
        config = TrwsConfig()
    m = problem.num_nodes
    theta = [problem.unary_potential(i) for i in range(m)]
    if m == 1:
        x = int(np.argmin(theta[0]))
        return [x], [float(theta[0][x])]
    blocks = {(i, j): problem.edge_block(i, j)
              for i in range(m) for j in range(i + 1, m)}

    def block(i, j):
        return blocks[(i, j)] if i < j else blocks[(j, i)].T

    def table_energy(labels):
        e = sum(theta[i][x] for i, x in enumerate(labels))
        e += sum(b[labels[i], labels[j]] for (i, j), b in blocks.items())
        return float(e)

    msg = {(i, j): np.zeros(problem.label_counts[j])
           for i in range(m) for j in range(m) if i != j}
    gamma = np.array([1.0 / max(i, m - 1 - i) for i in range(m)])

    def theta_hat(i):
        return theta[i] + sum(msg[(j, i)] for j in range(m) if j != i)

    def send(i, j, th):
        base = gamma[i] * th - msg[(j, i)]
        out = (base[:, None] + block(i, j)).min(axis=0)
        msg[(i, j)] = out - out.min()

    def lower_bound():
        # Two valid bounds on the reparameterized energy; report the max.
        # (a) independent minima of every reparameterized unary and edge
        rep_edge_min = {}
        lb_indep = sum(theta_hat(i).min() for i in range(m))
        for (i, j), b in blocks.items():
            rep_edge_min[(i, j)] = (b - msg[(i, j)][None, :]
                                    - msg[(j, i)][:, None]).min()
            lb_indep += rep_edge_min[(i, j)]
        # (b) exact DP along the chain 0-1-...-m-1 plus independent minima
        # of the off-chain edges; exact on trees (e.g. two nodes)
        f = theta_hat(0)
        for i in range(1, m):
            rep = (blocks[(i - 1, i)] - msg[(i - 1, i)][None, :]
                   - msg[(i, i - 1)][:, None])
            f = theta_hat(i) + (f[:, None] + rep).min(axis=0)
        lb_chain = f.min() + sum(v for (i, j), v in rep_edge_min.items()
                                 if j != i + 1)
        return float(max(lb_indep, lb_chain))

    lb_trace = []
    best_lb = -math.inf
    best_labels, best_energy = None, math.inf
    stall = 0
    for _ in range(config.max_iters):
        for i in range(m):  # forward
            th = theta_hat(i)
            for j in range(i + 1, m):
                send(i, j, th)
        labels = [0] * m  # backward pass with interleaved extraction
        for i in range(m - 1, -1, -1):
            th = theta_hat(i)
            cost = theta[i] + sum(msg[(j, i)] for j in range(i))
            for j in range(i + 1, m):
                cost = cost + block(j, i)[labels[j], :]
            labels[i] = int(np.argmin(cost))
            for j in range(i - 1, -1, -1):
                send(i, j, th)
        labels = _local_descent(theta, block, labels)
        energy = table_energy(labels)
        if energy < best_energy:
            best_labels, best_energy = labels, energy
        lb = lower_bound()
        best_lb = max(best_lb, lb)
        if lb_trace and best_lb - lb_trace[-1] < config.lb_tolerance:
            stall += 1
        else:
            stall = 0
        lb_trace.append(best_lb)
        if stall >= config.lb_patience:
            break
    return best_labels, lb_trace


# ----------------------------------------------------------------------
# initialization and the full re-localization step
# ----------------------------------------------------------------------

def partition_mini_problems(items: Sequence, k: int, seed: int = 0):
    """Random permutation chunked into round(n/k) disjoint groups; the
    remainder folds into the final group."""
    if k < 2:
        raise ValueError("K must be >= 2")
    items = list(items)
    n = len(items)
    t = max(1, int(math.floor(n / k + 0.5)))
    rng = np.random.default_rng(seed)
    perm = [items[i] for i in rng.permutation(n)]
    groups = [perm[g * k:(g + 1) * k] for g in range(t - 1)]
    groups.append(perm[(t - 1) * k:])
    return groups


def initialize(problem: GraphProblem, scheme: InitScheme,
               full_image_labels: Optional[Sequence[int]] = None) -> List[int]:
    """Initial label vector for ICM under one of the study's schemes."""
    m = problem.num_nodes
    if scheme.variant == "random":
        rng = np.random.default_rng(scheme.seed)
        return [int(rng.integers(0, b)) for b in problem.label_counts]
    if scheme.variant == "objectness":
        return [int(np.argmin(problem.unary_potential(i))) for i in range(m)]
    if scheme.variant == "full_image":
        if full_image_labels is None:
            raise ValueError("full_image initialization needs designated proposals")
        return list(full_image_labels)
    # mini_problems: disjoint TRWS solves, concatenated blockwise
    labels = [0] * m
    for group in partition_mini_problems(range(m), scheme.k, scheme.seed):
        sub = subproblem(problem, group)
        sub_labels, _ = trws_solve(sub, scheme.trws)
        for node, lab in zip(group, sub_labels):
            labels[node] = lab
    return labels


@dataclass
class RelocalizeTrace:
    cls: str
    init_energy: float
    energies: List[float]
    lower_bounds: List[float]
    pairwise_evals: int
    unary_evals: int


def relocalize_class(problem: GraphProblem, scheme: InitScheme, icm: IcmConfig,
                     full_image_labels=None):
    """Initialize then finetune with ICM.  Returns (labels, energy trace)."""
    labels = initialize(problem, scheme, full_image_labels)
    return icm_run(problem, labels, icm)


def full_image_labels_for(bags) -> List[int]:
    labels = []
    for bag in bags:
        marked = [i for i, p in enumerate(bag.proposals) if p.is_full_image]
        if not marked:
            raise ValueError(f"bag {bag.id!r} has no designated full-image proposal")
        labels.append(marked[0])
    return labels


def relocalize(dataset: Dataset, oracle_factory, alpha: float,
               scheme: InitScheme, icm: IcmConfig,
               classes: Optional[Sequence[str]] = None):
    """Algorithm-level re-localization over every class of the dataset.

    `oracle_factory(cls)` returns the blended score oracle for one class.
    Returns (selections, traces) keyed by class.
    """
    if classes is None:
        classes = sorted(dataset.classes)
    selections: Dict[str, Selection] = {}
    traces: Dict[str, RelocalizeTrace] = {}
    for cls in classes:
        positive, _ = positive_negative_split(dataset, cls)
        if not positive:
            selections[cls] = Selection(cls, {})
            continue
        counter = EvalCounter()
        problem = build_graph(positive, oracle_factory(cls), alpha,
                              mode="lazy", counter=counter)
        fil = None
        if scheme.variant == "full_image":
            fil = full_image_labels_for(positive)
        labels = initialize(problem, scheme, fil)
        init_energy = problem.energy(labels)
        labels, trace = icm_run(problem, labels, icm)
        selections[cls] = Selection(cls, {b.id: int(x)
                                          for b, x in zip(positive, labels)})
        traces[cls] = RelocalizeTrace(cls, init_energy, trace, [],
                                      counter.pairwise_evals, counter.unary_evals)
    return selections, traces
