import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from dataclasses import replace

from genadapt.bdwm import (
    COMPOSITES,
    BatchDWM,
    DwmEnsemble,
    add_expert,
    dwm_predict,
    majority_baseline_accuracy,
    reweight_and_prune,
    update_experts,
    vote_matrix,
)
from genadapt.errors import ConfigError, MechanismError
from genadapt.framework import (
    LabeledBatch,
    StrategySpec,
    deploy_am,
    initial_state,
    observe,
    run_strategy,
)
from genadapt.learners import _frozen, nb_fit, nb_predict

from conftest import gaussian_batches


def constant_expert(label, n_classes=2, m=2):
    X = np.random.default_rng(label).normal(size=(5, m))
    return nb_fit(X, np.full(5, label), n_classes)


def ensemble(experts, weights, n_classes=2):
    return DwmEnsemble(tuple(experts), _frozen(weights), _frozen(np.zeros(n_classes), np.int64))


def test_single_expert_delegates():
    b = gaussian_batches(0, 1)[0]
    e = nb_fit(b.inputs, b.targets, 2)
    probe = np.random.default_rng(1).normal(size=(40, 2))
    np.testing.assert_array_equal(dwm_predict(ensemble([e], [1.0]), probe), nb_predict(e, probe))


def test_weighted_plurality():
    ens = ensemble([constant_expert(0), constant_expert(0), constant_expert(1)], [0.3, 0.3, 0.4])
    np.testing.assert_array_equal(dwm_predict(ens, np.zeros((3, 2))), 0)


def test_tie_goes_to_lowest_class():
    ens = ensemble([constant_expert(1), constant_expert(0)], [0.5, 0.5])
    assert dwm_predict(ens, np.zeros((1, 2)))[0] == 0


@given(st.integers(0, 5000))
def test_vote_matrix_matches_tabulation(seed):
    rng = np.random.default_rng(seed)
    experts = []
    for _ in range(5):
        y = rng.integers(0, 4, size=30)
        experts.append(nb_fit(rng.normal(size=(30, 2)) + y[:, None], y, 4))
    w = rng.random(5) + 0.01
    ens = ensemble(experts, w, 4)
    probe = rng.normal(size=(20, 2)) * 2
    z = np.zeros((20, 4))
    for i, e in enumerate(experts):
        votes = nb_predict(e, probe)
        for r in range(20):
            z[r, votes[r]] += w[i]
    np.testing.assert_allclose(vote_matrix(ens, probe), z, rtol=1e-15)
    np.testing.assert_array_equal(dwm_predict(ens, probe), np.argmax(z, axis=1))


@given(st.integers(0, 5000), st.floats(1e-3, 1e3))
def test_argmax_invariant_under_weight_scaling(seed, c):
    rng = np.random.default_rng(seed)
    experts = [nb_fit(rng.normal(size=(20, 2)), rng.integers(0, 3, size=20), 3) for _ in range(4)]
    w = rng.random(4) + 0.01
    probe = rng.normal(size=(30, 2))
    a = dwm_predict(ensemble(experts, w, 3), probe)
    b = dwm_predict(ensemble(experts, w * c, 3), probe)
    np.testing.assert_array_equal(a, b)


def test_reweight_all_perfect_keeps_ratios():
    X = np.zeros((4, 2))
    y = np.zeros(4, dtype=int)
    ens = ensemble([constant_expert(0), constant_expert(0)], [0.2, 0.6])
    out = reweight_and_prune(ens, X, y, 0.01)
    np.testing.assert_allclose(out.weights, [0.25, 0.75], rtol=1e-15)


def test_reweight_formula():
    X = np.zeros((4, 2))
    y = np.zeros(4, dtype=int)
    ens = ensemble([constant_expert(0), constant_expert(1)], [0.5, 0.5])
    out = reweight_and_prune(ens, X, y, 0.01)
    e = np.e
    np.testing.assert_allclose(out.weights, [e / (e + 1), 1 / (e + 1)], rtol=1e-15)


def test_reweight_prunes_below_eta_but_never_empties():
    X = np.zeros((4, 2))
    y = np.zeros(4, dtype=int)
    ens = ensemble([constant_expert(0), constant_expert(1)], [0.5, 0.5])
    out = reweight_and_prune(ens, X, y, 0.5)
    assert len(out.experts) == 1 and out.weights[0] == 1.0
    out = reweight_and_prune(ens, X, y, 0.99)
    assert len(out.experts) == 1


@given(st.integers(0, 5000), st.floats(0.001, 0.3))
def test_post_dam2_normalization(seed, eta):
    rng = np.random.default_rng(seed)
    experts = [nb_fit(rng.normal(size=(15, 2)), rng.integers(0, 2, size=15), 2) for _ in range(6)]
    ens = ensemble(experts, rng.random(6) * 3 + 0.01)
    b = gaussian_batches(seed, 1)[0]
    out = reweight_and_prune(ens, b.inputs, b.targets, eta)
    assert abs(out.weights.sum() - 1) <= 1e-12
    assert len(out.experts) >= 1
    if len(out.experts) > 1:
        assert out.weights.min() >= eta - 1e-15


def test_dam3_newcomer_weight_one_unnormalized():
    ens = ensemble([constant_expert(0)], [1.0])
    out = add_expert(ens, np.zeros((3, 2)), np.array([0, 1, 1]))
    np.testing.assert_array_equal(out.weights, [1.0, 1.0])


def dwm_after_two(seed):
    batches = gaussian_batches(seed, n_batches=4, flip_at=2)
    algo = BatchDWM(2)
    s = observe(initial_state(algo, batches[0]), batches[0])
    s = observe(deploy_am(s, "DAM3", batches[1]), batches[1])
    return s, batches


@given(st.integers(0, 3000), st.sampled_from(sorted(COMPOSITES)))
def test_compositions_bitwise(seed, am):
    s, batches = dwm_after_two(seed)
    direct = deploy_am(s, am, batches[2])
    manual = s
    for step in COMPOSITES[am]:
        manual = deploy_am(manual, step, batches[2])
    assert direct.payload.same_as(manual.payload)


def test_dam7_on_single_expert():
    batches = gaussian_batches(3, n_batches=2, flip_at=1)
    algo = BatchDWM(2)
    s = initial_state(algo, batches[0])
    b = batches[1]
    out = deploy_am(s, "DAM7", b)
    manual = add_expert(update_experts(reweight_and_prune(s.payload, b.inputs, b.targets, algo.eta),
                                       b.inputs, b.targets), b.inputs, b.targets)
    assert len(out.payload.experts) == 2
    assert out.payload.weights[-1] == 1.0
    assert out.payload.same_as(manual)


def test_unknown_mechanism():
    s, b = dwm_after_two(0)
    with pytest.raises(MechanismError):
        s.algorithm.apply(s.payload, "DAM8", b[2])


def test_constructor_validation():
    with pytest.raises(ConfigError):
        BatchDWM(1)
    with pytest.raises(ConfigError):
        BatchDWM(2, eta=1.5)


def test_majority_baseline():
    assert majority_baseline_accuracy(np.array([3, 7]), np.array([1, 1, 0, 1])) == 0.75
    assert majority_baseline_accuracy(np.zeros(2), np.array([1])) == 0.0


def test_custom_step_perfect_ensemble_adds_nothing():
    algo = BatchDWM(2)
    ens = ensemble([constant_expert(0)], [1.0])
    ens = replace(ens, class_counts=_frozen([5, 0], np.int64))
    zeros = LabeledBatch(np.zeros((6, 2)), np.zeros(6, dtype=int))
    out, label = algo.custom_step(ens, zeros)
    assert len(out.experts) == 1 and label == "DAM1>DAM2"


def test_custom_step_wrong_ensemble_adds_expert():
    algo = BatchDWM(2)
    ens = replace(ensemble([constant_expert(0)], [1.0]), class_counts=_frozen([0, 5], np.int64))
    ones = LabeledBatch(np.zeros((6, 2)), np.ones(6, dtype=int))
    out, label = algo.custom_step(ens, ones)
    assert len(out.experts) == 2 and label.endswith("DAM3")


def test_observe_folds_class_counts():
    algo = BatchDWM(3)
    b = LabeledBatch(np.zeros((5, 1)), np.array([0, 2, 2, 1, 2]))
    s = observe(initial_state(algo, b), b)
    np.testing.assert_array_equal(s.payload.class_counts, [1, 1, 3])


def test_flip_triggers_expert_creation_at_flip():
    batches = gaussian_batches(21, n_batches=8, n=40, flip_at=5)
    steps = run_strategy(initial_state(BatchDWM(2)), batches, StrategySpec("custom"))
    created = [s.batch_index for s in steps if s.mechanism.endswith("DAM3")]
    assert created and min(i for i in created if i >= 5) == 5
