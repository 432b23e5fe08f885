import numpy as np
import pytest

from pairloc import Bag, BlendWeights, BlendedOracle, Dataset, IcmConfig, \
    InitScheme, Proposal, ScoringModel, blended_pairwise, blended_unary, \
    relocalize, warmup_relocalize
from pairloc.model import GENERIC
from pairloc.transfer import oracle_factory


def small_model(seed=0, d_generic=None):
    return ScoringModel(d=3, classes=["c"], d_generic=d_generic, seed=seed)


def test_blend_weight_validation():
    BlendWeights(0.0, 1.0)
    with pytest.raises(ValueError):
        BlendWeights(lambda1=1.5)
    with pytest.raises(ValueError):
        BlendWeights(lambda2=-0.1)


def test_blended_unary_is_convex_combination():
    m = small_model(1)
    p = Proposal(features=[0.3, -0.7, 1.2])
    spec = m.unary_forward("c", p.features)
    gen = m.unary_forward(GENERIC, p.features)
    for lam in [0.0, 0.25, 0.5, 1.0]:
        got = blended_unary(m, "c", p, BlendWeights(lambda2=lam))
        assert got == pytest.approx((1 - lam) * spec + lam * gen, rel=1e-12)


def test_blended_pairwise_is_convex_combination():
    m = small_model(2)
    p1 = Proposal(features=[1.0, 0.0, 0.0])
    p2 = Proposal(features=[0.0, 1.0, 0.0])
    spec = m.pairwise_forward("c", p1.features, p2.features)
    gen = m.pairwise_forward(GENERIC, p1.features, p2.features)
    for lam in [0.0, 0.6, 1.0]:
        got = blended_pairwise(m, "c", p1, p2, BlendWeights(lambda1=lam))
        assert got == pytest.approx((1 - lam) * spec + lam * gen, rel=1e-12)


def test_generic_branch_uses_generic_feature_block():
    m = small_model(3, d_generic=2)
    p = Proposal(features=[1.0, 2.0, 3.0], features_generic=[0.5, -0.5])
    got = blended_unary(m, "c", p, BlendWeights(lambda2=1.0))
    assert got == pytest.approx(m.unary_forward(GENERIC, np.array([0.5, -0.5])))


def test_pure_blends_never_touch_the_other_branch():
    # poison the unused parameters; a clean short-circuit never reads them
    bag = Bag("b", [Proposal(features=[0.1, 0.2, 0.3]),
                    Proposal(features=[0.4, 0.5, 0.6])], {"c"})
    m = small_model(4)
    for key in list(m.params):
        if key.startswith("cls."):
            m.params[key] = np.full_like(m.params[key], np.nan)
    oracle = BlendedOracle(m, "c", BlendWeights(lambda1=1.0, lambda2=1.0))
    assert np.all(np.isfinite(oracle.unary(bag)))
    assert np.all(np.isfinite(oracle.pairwise(bag, [0, 1], bag, [1, 0])))

    m2 = small_model(4)
    for key in list(m2.params):
        if key.startswith("gen."):
            m2.params[key] = np.full_like(m2.params[key], np.nan)
    oracle2 = BlendedOracle(m2, "c", BlendWeights(lambda1=0.0, lambda2=0.0))
    assert np.all(np.isfinite(oracle2.unary(bag)))
    assert np.all(np.isfinite(oracle2.pairwise(bag, [0], bag, [1])))


def _toy_dataset(rng):
    bags = []
    for i in range(6):
        props = [Proposal(features=rng.normal(size=3)) for _ in range(4)]
        bags.append(Bag(f"b{i}", props, {"c"}))
    return Dataset(bags)


def test_warmup_equals_relocalize_with_pure_generic_blend():
    rng = np.random.default_rng(5)
    ds = _toy_dataset(rng)
    m = small_model(6)
    scheme = InitScheme("mini_problems", k=3, seed=0)
    icm = IcmConfig(epochs=2)
    sel_a, _ = warmup_relocalize(ds, m, 1.0, scheme, icm)
    sel_b, _ = relocalize(ds, oracle_factory(m, BlendWeights(1.0, 1.0)),
                          1.0, scheme, icm)
    assert {c: s.chosen for c, s in sel_a.items()} == \
           {c: s.chosen for c, s in sel_b.items()}


def test_relocalize_selections_are_feasible_and_traced():
    rng = np.random.default_rng(6)
    ds = _toy_dataset(rng)
    m = small_model(7)
    sels, traces = warmup_relocalize(ds, m, 0.5,
                                     InitScheme("mini_problems", k=3, seed=1),
                                     IcmConfig(epochs=2))
    assert set(sels) == {"c"}
    assert set(sels["c"].chosen) == {b.id for b in ds.bags}
    tr = traces["c"]
    assert tr.pairwise_evals > 0
    assert tr.energies[-1] <= tr.init_energy + 1e-9
