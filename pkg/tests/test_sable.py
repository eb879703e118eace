import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr
from scipy.stats import ttest_ind

from genadapt.errors import ConfigError, DimensionError, MechanismError
from genadapt.framework import LabeledBatch, deploy_am, initial_state, predict_batch
from genadapt.learners import rpls_fit, rpls_predict
from genadapt.sable import (
    Descriptor,
    Grid,
    Sable,
    SableEnsemble,
    SableExpert,
    Scaler,
    build_descriptor,
    expert_weights,
    merge_descriptors,
    partition_by_best_expert,
    prune_and_merge_experts,
    sable_predict,
    ttest_pvalue,
)

from conftest import regression_batches

IDENTITY_1D = Scaler(np.zeros(1), np.ones(1), 0.0, 1.0)


def linear_data(seed, n=50, m=2, noise=0.3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    y = X @ rng.normal(size=m) + noise * rng.normal(size=n)
    return X, y


def test_single_point_peak():
    grid = Grid()
    c = grid.centers[25]
    rpls = rpls_fit(np.array([[c], [c + 1]]), np.array([c, c + 1]), 1)
    d = build_descriptor(rpls, np.array([[c]]), np.array([c]), IDENTITY_1D, 1.0, grid)
    assert d.density.max() == pytest.approx(1 / (2 * np.pi), rel=0.01)


def test_duplicate_points_normalize_away():
    rpls = rpls_fit(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), 1)
    one = build_descriptor(rpls, np.array([[0.3]]), np.array([0.3]), IDENTITY_1D, 1.0)
    two = build_descriptor(rpls, np.array([[0.3], [0.3]]), np.array([0.3, 0.3]), IDENTITY_1D, 1.0)
    np.testing.assert_allclose(two.density, one.density, rtol=1e-14, atol=0)
    np.testing.assert_allclose(two.density * two.mass, 2 * one.density * one.mass, rtol=1e-14)


def test_descriptor_matches_naive_kernel_sum():
    grid = Grid(resolution=20)
    X, y = linear_data(1)
    scaler = Scaler.fit(X, y)
    rpls = rpls_fit(X, y, 2)
    sigma = 0.7
    d = build_descriptor(rpls, X, y, scaler, sigma, grid)
    zx, zy = scaler.x(X), scaler.y(y)
    w = np.exp(-(scaler.y(rpls_predict(rpls, X)) - zy) ** 2)
    e = grid.edges
    for m in range(2):
        naive = np.zeros((20, 20))
        for j in range(len(y)):
            for a in range(20):
                for b in range(20):
                    px = ndtr((e[a + 1] - zx[j, m]) / sigma) - ndtr((e[a] - zx[j, m]) / sigma)
                    py = ndtr((e[b + 1] - zy[j]) / sigma) - ndtr((e[b] - zy[j]) / sigma)
                    naive[a, b] += w[j] * px * py / grid.cell_area
        np.testing.assert_allclose(d.density[m], naive / len(y), rtol=0, atol=1e-10)


@given(st.integers(0, 5000), st.floats(0.3, 1.2))
def test_descriptor_mass_and_positivity(seed, sigma):
    X, y = linear_data(seed)
    scaler = Scaler.fit(X, y)
    rpls = rpls_fit(X, y, 2)
    d = build_descriptor(rpls, X, y, scaler, sigma)
    w = np.exp(-(scaler.y(rpls_predict(rpls, X)) - scaler.y(y)) ** 2)
    assert np.all(d.density >= 0)
    inside = np.all(np.abs(scaler.x(X)) < 2.5, axis=1) & (np.abs(scaler.y(y)) < 2.5)
    if inside.all():
        for m in range(2):
            mass = d.density[m].sum() * Grid().cell_area
            assert mass == pytest.approx(w.sum() / len(y), rel=0.02)


def test_sigma_must_be_positive():
    X, y = linear_data(0)
    with pytest.raises(ConfigError):
        build_descriptor(rpls_fit(X, y, 1), X, y, Scaler.fit(X, y), 0.0)
    with pytest.raises(ConfigError):
        Sable(sigma=-1)


def test_merge_degenerate_weights():
    rng = np.random.default_rng(0)
    old = Descriptor(rng.random((2, 5, 5)), 3.0)
    new = Descriptor(rng.random((2, 5, 5)), 4.0)
    np.testing.assert_array_equal(merge_descriptors(old, new, 0.0, 1.0).density, new.density)
    np.testing.assert_array_equal(merge_descriptors(old, new, 1.0, 0.0).density, old.density)
    u = rng.random((2, 5, 5))
    half = merge_descriptors(Descriptor(2 * u, 1.0), Descriptor(np.zeros_like(u), 1.0), 0.5, 0.5)
    np.testing.assert_allclose(half.density, u, rtol=1e-15)


def test_merge_geometry_mismatch():
    with pytest.raises(DimensionError):
        merge_descriptors(Descriptor(np.zeros((1, 4, 4)), 1), Descriptor(np.zeros((1, 5, 5)), 1), 0.5, 0.5)


def make_ensemble(seed, k=3, m=2):
    experts = []
    rng = np.random.default_rng(seed)
    X0, y0 = linear_data(seed, m=m)
    scaler = Scaler.fit(X0, y0)
    for i in range(k):
        X = rng.normal(size=(40, m)) + rng.normal(size=m)
        y = X @ rng.normal(size=m)
        rpls = rpls_fit(X, y, 2)
        experts.append(SableExpert(rpls, build_descriptor(rpls, X, y, scaler, 1.0), i))
    return SableEnsemble(tuple(experts), scaler, k)


@given(st.integers(0, 5000), st.integers(1, 4))
def test_weights_sum_to_one(seed, k):
    ens = make_ensemble(seed, k)
    probe = np.random.default_rng(seed).normal(size=(30, 2)) * 3
    _, v = sable_predict(ens, probe)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-9)


def test_single_expert_weight_is_one():
    ens = make_ensemble(1, 1)
    probe = np.random.default_rng(1).normal(size=(10, 2)) * 10
    pred, v = sable_predict(ens, probe)
    np.testing.assert_array_equal(v, 1.0)
    np.testing.assert_allclose(pred, rpls_predict(ens.experts[0].rpls, probe), rtol=0, atol=1e-12)


def test_identical_descriptors_split_evenly():
    ens = make_ensemble(2, 2)
    e0 = ens.experts[0]
    # descriptors are read at each expert's own prediction, so the twins share the model too
    twin = SableEnsemble((e0, SableExpert(e0.rpls, e0.descriptor, 1)), ens.scaler)
    probe = np.random.default_rng(3).normal(size=(12, 2))
    pred, v = sable_predict(twin, probe)
    np.testing.assert_allclose(v, 0.5, rtol=0, atol=1e-15)
    np.testing.assert_allclose(pred, rpls_predict(e0.rpls, probe), rtol=0, atol=1e-12)


def test_disjoint_regions_favor_local_expert():
    rng = np.random.default_rng(4)
    XA = rng.normal(-2.5, 0.25, size=(60, 1))
    XB = rng.normal(2.5, 0.25, size=(60, 1))
    yA = 1.5 * XA[:, 0] + 3.0
    yB = -1.5 * XB[:, 0] - 3.0
    scaler = Scaler(np.zeros(1), np.ones(1), 0.0, 1.0)
    sigma = 0.2
    rA, rB = rpls_fit(XA, yA, 1), rpls_fit(XB, yB, 1)
    eA = SableExpert(rA, build_descriptor(rA, XA, yA, scaler, sigma), 0)
    eB = SableExpert(rB, build_descriptor(rB, XB, yB, scaler, sigma), 1)
    ens = SableEnsemble((eA, eB), scaler, 2)
    probe = np.array([[-2.6], [-2.5], [-2.4]])
    v, preds = expert_weights(ens, probe)
    assert np.all(v[:, 0] > 0.9)
    # hand evaluation of the likelihood ratio at the same grid positions
    g = Grid()
    la = g.read(eA.descriptor.density[0], probe[:, 0], preds[:, 0])
    lb = np.maximum(g.read(eB.descriptor.density[0], probe[:, 0], preds[:, 1]), 1e-12)
    np.testing.assert_allclose(v[:, 0], la / (la + lb), rtol=1e-9)


def test_partition_single_expert_gets_everything():
    ens = make_ensemble(5, 1)
    X, y = linear_data(6)
    parts = partition_by_best_expert(ens, X, y)
    np.testing.assert_array_equal(parts[0], np.arange(len(y)))


def test_partition_exact_expert_takes_all():
    X, y = linear_data(7, noise=0.0)
    exact = rpls_fit(X, y, 2)
    ens = make_ensemble(7, 2)
    ens = SableEnsemble((ens.experts[0], SableExpert(exact, ens.experts[1].descriptor, 1)), ens.scaler)
    parts = partition_by_best_expert(ens, X, y)
    assert parts[0].size == 0 and parts[1].size == len(y)


@given(st.integers(0, 5000))
def test_partition_matches_rowwise_oracle(seed):
    ens = make_ensemble(seed, 3)
    X, y = linear_data(seed + 1)
    parts = partition_by_best_expert(ens, X, y)
    owner = np.empty(len(y), dtype=int)
    for i, rows in enumerate(parts):
        owner[rows] = i
    for j in range(len(y)):
        errs = [abs(rpls_predict(e.rpls, X[j:j + 1])[0] - y[j]) for e in ens.experts]
        assert owner[j] == errs.index(min(errs))
    assert sum(p.size for p in parts) == len(y)


def test_pvalue_matches_scipy_and_degenerate_cases():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=20), rng.normal(0.5, size=20)
    assert ttest_pvalue(a, b) == pytest.approx(ttest_ind(a, b).pvalue, rel=1e-12)
    assert ttest_pvalue(a, b, welch=True) == pytest.approx(ttest_ind(a, b, equal_var=False).pvalue)
    assert ttest_pvalue(np.ones(5), np.ones(5)) == 1.0
    assert ttest_pvalue(np.ones(5), np.zeros(5)) == 0.0


def test_identical_experts_merge_descriptors():
    ens = make_ensemble(9, 1)
    e = ens.experts[0]
    X, _ = linear_data(10)
    copy = SableExpert(e.rpls, e.descriptor, 5)
    out = prune_and_merge_experts((e, copy), X)
    assert len(out) == 1 and out[0].age == 5
    np.testing.assert_allclose(out[0].descriptor.density, 2 * e.descriptor.density)


def test_far_apart_predictions_not_pruned():
    X = np.linspace(-1, 1, 30).reshape(-1, 1)
    a = rpls_fit(X, 0.1 * X[:, 0], 1)
    b = rpls_fit(X, 0.1 * X[:, 0] + 10.0, 1)
    d = Descriptor(np.zeros((1, 50, 50)), 1.0)
    out = prune_and_merge_experts((SableExpert(a, d, 0), SableExpert(b, d, 1)), X)
    assert len(out) == 2


def test_three_experts_iterative_pruning():
    X = np.linspace(-1, 1, 40).reshape(-1, 1)
    d = Descriptor(np.ones((1, 50, 50)), 1.0)
    e1 = SableExpert(rpls_fit(X, X[:, 0], 1), d, 0)
    e2 = SableExpert(rpls_fit(X, X[:, 0] + 0.01, 1), d, 1)
    e3 = SableExpert(rpls_fit(X, X[:, 0] + 50.0, 1), d, 2)
    out = prune_and_merge_experts((e1, e2, e3), X)
    assert [e.age for e in out] == [1, 2]
    np.testing.assert_array_equal(out[0].descriptor.density, 2.0)


def test_pruning_skipped_on_single_row():
    ens = make_ensemble(3, 2)
    assert len(prune_and_merge_experts(ens.experts, np.zeros((1, 2)))) == 2


@given(st.integers(0, 3000))
def test_duplicate_expert_restores_count(seed):
    ens = make_ensemble(seed, 2)
    X, _ = linear_data(seed)
    base = prune_and_merge_experts(ens.experts, X)
    dup = base + (SableExpert(base[0].rpls, base[0].descriptor, 99),)
    assert len(prune_and_merge_experts(dup, X)) == len(base)


# -- mechanisms ---------------------------------------------------------------


def sable_state(seed=0, **kw):
    # the second regime also shifts the output level, so the experts' mean
    # predictions differ and the pruning t-test keeps both
    batches = regression_batches(seed, n_batches=4, switch_every=2)
    batches = [b if b.index < 2 else LabeledBatch(b.inputs, b.targets + 8.0, b.index)
               for b in batches]
    return initial_state(Sable(**kw), batches[0]), batches


def test_sam0_identity():
    s, b = sable_state()
    probe = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_array_equal(predict_batch(deploy_am(s, "SAM0", b[1]), probe), predict_batch(s, probe))


def test_sam4_new_regime_adds_expert():
    s, b = sable_state()
    after = deploy_am(s, "SAM4", b[2])
    assert len(after.payload.experts) == 2


def test_sam1_empty_partition_leaves_expert():
    s, b = sable_state()
    two = deploy_am(s, "SAM4", b[2])
    # rows generated by the newer expert's regime only
    rows = LabeledBatch(b[3].inputs, b[3].targets)
    owned = partition_by_best_expert(two.payload, rows.inputs, rows.targets)
    idle = [i for i, p in enumerate(owned) if p.size == 0]
    if not idle:
        target = int(np.argmax([p.size for p in owned]))
        rows = rows.subset(owned[target])
        idle = [1 - target]
    after = deploy_am(two, "SAM1", rows)
    for i in idle:
        assert after.payload.experts[i] is two.payload.experts[i]


def test_sam3_with_zero_old_weight_equals_recalculation():
    s, b = sable_state(delta0=0.0, delta1=1.0)
    algo = s.algorithm
    merged = deploy_am(s, "SAM3", b[1])
    e = s.payload.experts[0]
    fresh = build_descriptor(e.rpls, b[1].inputs, b[1].targets, s.payload.scaler, algo.sigma)
    recalculated = SableEnsemble((SableExpert(e.rpls, fresh, e.age),), s.payload.scaler)
    probe = np.random.default_rng(5).normal(size=(40, 3)) * 2
    np.testing.assert_array_equal(predict_batch(merged, probe), sable_predict(recalculated, probe)[0])
    np.testing.assert_array_equal(merged.payload.experts[0].descriptor.density, fresh.density)


def test_sam2_forgets_faster_than_sam1():
    s, b = sable_state(lam=0.01)
    one = deploy_am(s, "SAM1", b[2])
    two = deploy_am(s, "SAM2", b[2])
    err = lambda st: np.mean(np.abs(predict_batch(st, b[3].inputs) - b[3].targets))
    assert err(two) < err(one)


def test_unknown_sam_and_dimension_checks():
    s, b = sable_state()
    with pytest.raises(MechanismError):
        s.algorithm.apply(s.payload, "SAM9", b[1])
    with pytest.raises(DimensionError):
        s.algorithm.apply(s.payload, "SAM1", LabeledBatch(np.ones((5, 2)), np.ones(5)))


def test_hyperparameter_validation():
    for kw in ({"lam": 0}, {"delta0": 0.3, "delta1": 0.3}, {"alpha": 1.0}, {"n_components": 0}):
        with pytest.raises(ConfigError):
            Sable(**kw)


def test_joint_is_sam2_then_sam4():
    s, b = sable_state()
    from genadapt.framework import adapt, StrategySpec

    label, joint = adapt(s, b[1], StrategySpec("joint"), None)
    manual = deploy_am(deploy_am(s, "SAM2", b[1]), "SAM4", b[1])
    probe = np.random.default_rng(9).normal(size=(10, 3))
    assert label == "SAM2>SAM4"
    np.testing.assert_array_equal(predict_batch(joint, probe), predict_batch(manual, probe))
