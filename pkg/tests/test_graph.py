import itertools

import numpy as np
import pytest

from pairloc import Bag, EvalCounter, GraphProblem, Proposal, build_graph, \
    subproblem


def random_problem(rng, m=4, b=3, alpha=1.0, mode="lazy", counter=None):
    unary = rng.standard_normal((m, b))
    table = rng.standard_normal((m, b, m, b))

    def unary_fn(i):
        return unary[i]

    def pair_fn(i, a_idx, j, b_idx):
        return table[i, np.asarray(a_idx, dtype=int), j, np.asarray(b_idx, dtype=int)]

    problem = GraphProblem([f"n{i}" for i in range(m)], [b] * m, unary_fn,
                           pair_fn, alpha, mode=mode, counter=counter)
    return problem, unary, table


def manual_energy(unary, table, alpha, labels):
    m = len(labels)
    e = sum(-unary[i, x] for i, x in enumerate(labels))
    for i, j in itertools.combinations(range(m), 2):
        a, b = labels[i], labels[j]
        e += -alpha * (table[i, a, j, b] + table[j, b, i, a])
    return e


def test_energy_matches_manual():
    rng = np.random.default_rng(0)
    problem, unary, table = random_problem(rng, alpha=0.5)
    for _ in range(20):
        labels = [int(rng.integers(0, 3)) for _ in range(4)]
        assert problem.energy(labels) == pytest.approx(
            manual_energy(unary, table, 0.5, labels), rel=1e-12)


def test_eager_and_lazy_agree():
    rng = np.random.default_rng(1)
    p1, unary, table = random_problem(rng, mode="lazy")
    p2 = GraphProblem(p1.bag_ids, p1.label_counts,
                      lambda i: unary[i],
                      lambda i, a, j, b: table[i, np.asarray(a, int), j, np.asarray(b, int)],
                      1.0, mode="eager")
    labels = [0, 1, 2, 0]
    assert p1.energy(labels) == pytest.approx(p2.energy(labels), rel=1e-12)
    assert np.allclose(p1.edge_block(0, 2), p2.edge_block(0, 2))


def test_edge_block_transpose_symmetry():
    rng = np.random.default_rng(2)
    problem, _, _ = random_problem(rng)
    assert np.allclose(problem.edge_block(1, 3), problem.edge_block(3, 1).T)
    with pytest.raises(ValueError):
        problem.edge_block(1, 1)


def test_delta_energy_matches_full_recompute():
    rng = np.random.default_rng(3)
    problem, _, _ = random_problem(rng, m=5, b=4, alpha=0.7)
    labels = [1, 0, 3, 2, 1]
    base = problem.energy(labels)
    for node in range(5):
        for lab in range(4):
            moved = list(labels)
            moved[node] = lab
            assert problem.delta_energy(labels, node, lab) == pytest.approx(
                problem.energy(moved) - base, abs=1e-10)


def test_conditional_costs_consistent_with_energy():
    rng = np.random.default_rng(4)
    problem, _, _ = random_problem(rng, m=4, b=3)
    labels = [2, 1, 0, 2]
    cost = problem.conditional_costs(labels, 1)
    for lab in range(3):
        moved = list(labels)
        moved[1] = lab
        # costs differ from full energies by a constant (the rest of the graph)
        assert cost[lab] - cost[labels[1]] == pytest.approx(
            problem.energy(moved) - problem.energy(labels), abs=1e-10)


def test_label_validation():
    rng = np.random.default_rng(5)
    problem, _, _ = random_problem(rng)
    with pytest.raises(ValueError):
        problem.energy([0, 0, 0])
    with pytest.raises(ValueError):
        problem.energy([0, 0, 0, 3])


def test_lazy_counter_counts_only_memo_misses():
    rng = np.random.default_rng(6)
    counter = EvalCounter()
    problem, _, _ = random_problem(rng, m=3, b=2, counter=counter)
    assert counter.unary_evals == 3 * 2  # paid at construction
    assert counter.pairwise_evals == 0
    labels = [0, 1, 0]
    problem.energy(labels)
    first = counter.pairwise_evals
    assert first == 2 * 3  # 3 edges, both directions
    problem.energy(labels)  # fully memoized
    assert counter.pairwise_evals == first


def test_eager_mode_pays_all_blocks_upfront():
    rng = np.random.default_rng(7)
    counter = EvalCounter()
    m, b = 4, 3
    random_problem(rng, m=m, b=b, mode="eager", counter=counter)
    assert counter.pairwise_evals == m * (m - 1) * b * b


def test_brute_force_small():
    rng = np.random.default_rng(8)
    problem, unary, table = random_problem(rng, m=3, b=3)
    labels, energy = problem.brute_force()
    best = min((manual_energy(unary, table, 1.0, list(l)), list(l))
               for l in itertools.product(range(3), repeat=3))
    assert energy == pytest.approx(best[0], rel=1e-12)
    assert labels == best[1]


def test_brute_force_guard():
    rng = np.random.default_rng(9)
    problem, _, _ = random_problem(rng, m=4, b=4)
    with pytest.raises(ValueError):
        problem.brute_force(guard=10)


def _bag(i, feats):
    return Bag(f"b{i}", [Proposal(features=f) for f in feats], {"c"})


class DotOracle:
    def unary(self, bag):
        return bag.feature_matrix()[:, 0]

    def pairwise(self, bag_a, idx_a, bag_b, idx_b):
        fa = bag_a.feature_matrix()[np.asarray(idx_a, int)]
        fb = bag_b.feature_matrix()[np.asarray(idx_b, int)]
        return np.sum(fa * fb, axis=1)


def test_build_graph_from_bags():
    rng = np.random.default_rng(10)
    bags = [_bag(i, rng.normal(size=(3, 2))) for i in range(3)]
    problem = build_graph(bags, DotOracle(), alpha=2.0)
    assert problem.num_nodes == 3
    assert problem.bag_ids == ["b0", "b1", "b2"]
    f0, f1 = bags[0].feature_matrix(), bags[1].feature_matrix()
    expect = -f0[1, 0] - f1[2, 0] - bags[2].feature_matrix()[0, 0]
    for (i, j), (a, b) in [((0, 1), (1, 2)), ((0, 2), (1, 0)), ((1, 2), (2, 0))]:
        fi = bags[i].feature_matrix()[a]
        fj = bags[j].feature_matrix()[b]
        expect += -2.0 * 2 * float(fi @ fj)
    assert problem.energy([1, 2, 0]) == pytest.approx(expect, rel=1e-10)


def test_subproblem_matches_parent_restriction():
    rng = np.random.default_rng(11)
    problem, unary, table = random_problem(rng, m=5, b=3, alpha=0.3)
    nodes = [0, 2, 4]
    sub = subproblem(problem, nodes)
    assert sub.bag_ids == [f"n{i}" for i in nodes]
    for _ in range(10):
        sub_labels = [int(rng.integers(0, 3)) for _ in nodes]
        expect = sum(-unary[i, x] for i, x in zip(nodes, sub_labels))
        for (ii, i), (jj, j) in itertools.combinations(enumerate(nodes), 2):
            a, b = sub_labels[ii], sub_labels[jj]
            expect += -0.3 * (table[i, a, j, b] + table[j, b, i, a])
        assert sub.energy(sub_labels) == pytest.approx(expect, rel=1e-10)


def test_subproblem_shares_memo_and_counter():
    rng = np.random.default_rng(12)
    counter = EvalCounter()
    problem, _, _ = random_problem(rng, m=4, b=2, counter=counter)
    sub = subproblem(problem, [1, 3])
    paid = counter.pairwise_evals
    assert paid == 2 * 2 * 2  # one edge, B^2 entries, both directions
    # the parent now answers the same edge from its memo
    problem.edge_potentials(1, [0, 1], 3, [0, 1])
    assert counter.pairwise_evals == paid
    assert sub.counter is problem.counter
