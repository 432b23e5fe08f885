"""Re-localization objective as a graph labeling problem over positive bags.

Each positive bag is a node; its proposals are the node's labels.  Unary
potentials are negated blended unary scores; the potential of an (unordered)
edge folds both ordered pairwise scores:
    theta_ij(a, b) = -alpha * (psi(e_a, e_b) + psi(e_b, e_a)).
Minimizing the total potential is exactly minimizing the linearized
re-localization loss.

Lazy problems evaluate scores on demand through an EvalCounter with a memo,
which makes the pairwise-evaluation complexity observable.
"""

import itertools
import json
import threading
from typing import Callable, List, Optional, Sequence

import numpy as np


class EvalCounter:
    """Monotone counters of unary / directed pairwise score evaluations."""

    def __init__(self):
        self._lock = threading.Lock()
        self.unary_evals = 0
        self.pairwise_evals = 0

    def add(self, unary=0, pairwise=0):
        with self._lock:
            self.unary_evals += int(unary)
            self.pairwise_evals += int(pairwise)


class GraphProblem:
    """Fully connected labeling problem over M nodes.

    `unary_fn(i)` returns the (B_i,) unary score vector of node i and
    `pair_fn(i, a_idx, j, b_idx)` the directed pairwise scores
    psi(e_{i,a}, e_{j,b}) for parallel index arrays.  Eager mode
    materializes every edge block up front; lazy mode memoizes individual
    directed evaluations and counts only memo misses.
    """

    def __init__(self, bag_ids: Sequence[str], label_counts: Sequence[int],
                 unary_fn: Callable, pair_fn: Callable, alpha: float,
                 mode: str = "lazy", counter: Optional[EvalCounter] = None):
        if len(bag_ids) == 0:
            raise ValueError("a graph problem needs at least one node")
        if mode not in ("lazy", "eager"):
            raise ValueError("mode must be 'lazy' or 'eager'")
        self.bag_ids = list(bag_ids)
        self.label_counts = [int(b) for b in label_counts]
        self.alpha = float(alpha)
        self.mode = mode
        self.counter = counter if counter is not None else EvalCounter()
        self._pair_fn = pair_fn
        self._lock = threading.Lock()
        self._memo = {}  # (i, a, j, b) -> directed score psi(e_ia, e_jb)
        self.unaries = []
        for i in range(len(self.bag_ids)):
            u = np.asarray(unary_fn(i), dtype=np.float64)
            if u.shape != (self.label_counts[i],):
                raise ValueError("unary score shape mismatch")
            self.counter.add(unary=u.size)
            self.unaries.append(u)
        self._edges = {}
        if mode == "eager":
            for i, j in itertools.combinations(range(self.num_nodes), 2):
                self._edges[(i, j)] = self._build_block(i, j)

    @property
    def num_nodes(self):
        return len(self.bag_ids)

    def unary_potential(self, i: int) -> np.ndarray:
        return -self.unaries[i]

    def _build_block(self, i, j):
        bi, bj = self.label_counts[i], self.label_counts[j]
        ai, aj = np.repeat(np.arange(bi), bj), np.tile(np.arange(bj), bi)
        fwd = np.asarray(self._pair_fn(i, ai, j, aj), dtype=np.float64)
        bwd = np.asarray(self._pair_fn(j, aj, i, ai), dtype=np.float64)
        self.counter.add(pairwise=2 * bi * bj)
        return (-self.alpha * (fwd + bwd)).reshape(bi, bj)

    def edge_block(self, i: int, j: int) -> np.ndarray:
        """Full (B_i, B_j) edge potential block; materializes it if needed."""
        if i == j:
            raise ValueError("no self edges")
        lo, hi = min(i, j), max(i, j)
        with self._lock:
            if (lo, hi) not in self._edges:
                self._edges[(lo, hi)] = self._build_block(lo, hi)
            block = self._edges[(lo, hi)]
        return block if (i, j) == (lo, hi) else block.T

    def _directed_scores(self, i, a_idx, j, b_idx):
        a_idx = np.asarray(a_idx, dtype=int)
        b_idx = np.asarray(b_idx, dtype=int)
        out = np.empty(a_idx.shape[0])
        with self._lock:
            missing = []
            for k, (a, b) in enumerate(zip(a_idx, b_idx)):
                key = (i, int(a), j, int(b))
                if key in self._memo:
                    out[k] = self._memo[key]
                else:
                    missing.append(k)
            if missing:
                ks = np.array(missing, dtype=int)
                vals = np.asarray(self._pair_fn(i, a_idx[ks], j, b_idx[ks]),
                                  dtype=np.float64)
                self.counter.add(pairwise=len(missing))
                for k, v in zip(ks, vals):
                    self._memo[(i, int(a_idx[k]), j, int(b_idx[k]))] = float(v)
                    out[k] = v
        return out

    def edge_potentials(self, i: int, a_idx, j: int, b_idx) -> np.ndarray:
        """Edge potential values for parallel label index arrays."""
        if i == j:
            raise ValueError("no self edges")
        lo, hi = min(i, j), max(i, j)
        with self._lock:
            block = self._edges.get((lo, hi))
        if block is not None:
            block = block if (i, j) == (lo, hi) else block.T
            return block[np.asarray(a_idx, dtype=int), np.asarray(b_idx, dtype=int)]
        fwd = self._directed_scores(i, a_idx, j, b_idx)
        bwd = self._directed_scores(j, b_idx, i, a_idx)
        return -self.alpha * (fwd + bwd)

    # energies -----------------------------------------------------------
    def _check_labels(self, labels):
        labels = list(labels)
        if len(labels) != self.num_nodes:
            raise ValueError("label vector length mismatch")
        for i, x in enumerate(labels):
            if not (0 <= x < self.label_counts[i]):
                raise ValueError(f"label {x} out of range at node {i}")
        return labels

    def energy(self, labels) -> float:
        labels = self._check_labels(labels)
        total = sum(self.unary_potential(i)[x] for i, x in enumerate(labels))
        for i, j in itertools.combinations(range(self.num_nodes), 2):
            total += self.edge_potentials(i, [labels[i]], j, [labels[j]])[0]
        return float(total)

    def delta_energy(self, labels, node: int, new_label: int) -> float:
        """Energy change of a single-node move, in O(M) evaluations."""
        labels = self._check_labels(labels)
        if not (0 <= new_label < self.label_counts[node]):
            raise ValueError("new label out of range")
        old = labels[node]
        if new_label == old:
            return 0.0
        delta = (self.unary_potential(node)[new_label]
                 - self.unary_potential(node)[old])
        for j in range(self.num_nodes):
            if j == node:
                continue
            vals = self.edge_potentials(node, [new_label, old], j,
                                        [labels[j], labels[j]])
            delta += vals[0] - vals[1]
        return float(delta)

    def conditional_costs(self, labels, node: int) -> np.ndarray:
        """Energy contribution of every label of `node`, others fixed."""
        labels = self._check_labels(labels)
        bi = self.label_counts[node]
        cost = self.unary_potential(node).copy()
        for j in range(self.num_nodes):
            if j == node:
                continue
            cost += self.edge_potentials(node, np.arange(bi), j,
                                         np.full(bi, labels[j], dtype=int))
        return cost

    def brute_force(self, guard: int = 10 ** 6):
        """Exhaustive minimum; ties resolve to the lexicographically smallest
        label vector.  Guarded against large instances."""
        size = 1
        for b in self.label_counts:
            size *= b
            if size > guard:
                raise ValueError("instance too large for brute force")
        best, best_e = None, np.inf
        for labels in itertools.product(*(range(b) for b in self.label_counts)):
            e = self.energy(labels)
            if e < best_e:
                best, best_e = labels, e
        return list(best), float(best_e)

    def to_json(self) -> str:
        """Debug dump: nodes, label counts, unary and edge tables."""
        blob = {
            "nodes": self.bag_ids,
            "label_counts": self.label_counts,
            "alpha": self.alpha,
            "unary": [self.unary_potential(i).tolist()
                      for i in range(self.num_nodes)],
            "edges": {
                f"{i},{j}": self.edge_block(i, j).tolist()
                for i, j in itertools.combinations(range(self.num_nodes), 2)
            },
        }
        return json.dumps(blob)


def build_graph(positive_bags, oracle, alpha: float, mode: str = "lazy",
                counter: Optional[EvalCounter] = None) -> GraphProblem:
    """Graph problem over positive bags, scored by `oracle`.

    The oracle provides `unary(bag) -> (B,)` and
    `pairwise(bag_a, idx_a, bag_b, idx_b) -> (n,)` (directed).
    """
    bags = list(positive_bags)
    if not bags:
        raise ValueError("empty positive bag set")

    def unary_fn(i):
        return oracle.unary(bags[i])

    def pair_fn(i, a_idx, j, b_idx):
        return oracle.pairwise(bags[i], a_idx, bags[j], b_idx)

    return GraphProblem([b.id for b in bags], [len(b) for b in bags],
                        unary_fn, pair_fn, alpha, mode=mode, counter=counter)


def subproblem(problem: GraphProblem, nodes: Sequence[int]) -> GraphProblem:
    """Eagerly materialized problem over a node subset.

    Evaluations go through the parent, so they share its memo and counter;
    mini-problem sizes keep the K^2 * B^2 tables small.
    """
    nodes = list(nodes)
    sub = GraphProblem.__new__(GraphProblem)
    sub.bag_ids = [problem.bag_ids[n] for n in nodes]
    sub.label_counts = [problem.label_counts[n] for n in nodes]
    sub.alpha = problem.alpha
    sub.mode = "eager"
    sub.counter = problem.counter
    sub._pair_fn = None
    sub._lock = threading.Lock()
    sub._memo = {}
    sub.unaries = [problem.unaries[n] for n in nodes]
    sub._edges = {}
    for i, j in itertools.combinations(range(len(nodes)), 2):
        bi, bj = sub.label_counts[i], sub.label_counts[j]
        ai = np.repeat(np.arange(bi), bj)
        aj = np.tile(np.arange(bj), bi)
        vals = problem.edge_potentials(nodes[i], ai, nodes[j], aj)
        sub._edges[(i, j)] = vals.reshape(bi, bj)
    return sub
