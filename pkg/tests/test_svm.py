import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    kkt_violation,
    naive_gram,
    naive_rbf,
    nearest_centroid_accuracy,
    oracle_bias,
    qp_dual_oracle,
    two_pass_mean_var,
)
from sniffbench.errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptyInput,
    InvalidParameter,
    IterationCapExceeded,
    SchemaVersionError,
    SingleClassInput,
)
from sniffbench.svm import (
    SV_THRESHOLD,
    BinarySvmModel,
    MulticlassSvmModel,
    SvmConfig,
    compute_gamma,
    dual_objective,
    predict_multiclass,
    rbf_gram,
    rbf_kernel,
    smo_solve,
    smo_train_binary,
    svm_decision,
    train_multiclass,
)


def random_instance(rng, n=None, d=None):
    n = n or int(rng.integers(2, 21))
    d = d or int(rng.integers(1, 7))
    X = rng.normal(size=(n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    return X, y


def constant_model(bias, dim=1):
    return BinarySvmModel(np.zeros((1, dim)), np.zeros(1), np.ones(1), float(bias), 1.0)


# --- gamma --------------------------------------------------------------------

def test_gamma_on_unit_variance_data():
    X = np.array([[1.0, -1.0, 1.0, -1.0], [-1.0, 1.0, -1.0, 1.0]])
    assert compute_gamma(X) == 0.25


def test_gamma_on_constant_data_warns_and_floors():
    with pytest.warns(DegenerateVariance):
        g = compute_gamma(np.full((3, 5), 2.0))
    assert g == pytest.approx(1.0 / (5 * 1e-12))


def test_gamma_empty():
    with pytest.raises(EmptyInput):
        compute_gamma(np.zeros((0, 3)))


@given(st.integers(0, 2 ** 32), st.integers(1, 20))
@settings(max_examples=40, deadline=None)
def test_gamma_matches_two_pass_oracle(seed, count):
    X = np.random.default_rng(seed).normal(2.0, 3.0, size=(count, 6))
    _, var = two_pass_mean_var(X)
    assert compute_gamma(X) == pytest.approx(1.0 / (6 * var), rel=1e-10)


def test_config_validation():
    for bad in (dict(C=0), dict(gamma=-1.0), dict(gamma="auto"), dict(tol=0), dict(max_passes=0)):
        with pytest.raises(InvalidParameter):
            SvmConfig(**bad)
    assert SvmConfig(gamma=0.5).resolve_gamma(np.zeros((2, 2))) == 0.5


# --- kernel ----------------------------------------------------------------------

def test_kernel_examples():
    x = np.array([0.3, -1.2, 4.0])
    assert rbf_kernel(x, x, 0.7) == 1.0
    gamma = 0.25
    y = x + np.array([2.0, 0.0, 0.0])  # squared distance 4 = 1 / gamma
    assert rbf_kernel(x, y, gamma) == pytest.approx(math.exp(-1.0), abs=1e-15)
    with pytest.raises(DimensionMismatch):
        rbf_kernel([1.0, 2.0], [1.0], 1.0)


@given(st.integers(0, 2 ** 32), st.floats(1e-3, 10))
@settings(max_examples=60, deadline=None)
def test_kernel_matches_naive_and_is_symmetric(seed, gamma):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=5), rng.normal(size=5)
    k = rbf_kernel(x, y, gamma)
    assert k == rbf_kernel(y, x, gamma)
    assert abs(k - naive_rbf(x, y, gamma)) < 1e-12
    assert 0.0 < k <= 1.0


@given(st.integers(0, 2 ** 32), st.integers(1, 10))
@settings(max_examples=40, deadline=None)
def test_gram_psd_and_matches_naive(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    K = rbf_gram(X, X, 0.4)
    np.testing.assert_allclose(K, naive_gram(X, 0.4), atol=1e-12)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


# --- binary training -------------------------------------------------------------------

def test_symmetric_two_point_problem():
    model = smo_train_binary([[-1.0], [1.0]], [-1.0, 1.0], SvmConfig(C=10, gamma=0.25))
    assert svm_decision(model, [-1.0]) < 0 < svm_decision(model, [1.0])
    assert abs(svm_decision(model, [0.0])) < 1e-9


def test_single_class_rejected():
    with pytest.raises(SingleClassInput):
        smo_train_binary([[0.0], [1.0], [2.0]], [1.0, 1.0, 1.0])
    with pytest.raises(InvalidParameter):
        smo_solve(np.eye(2), [1.0, 0.0])


def test_separable_instance_matches_qp_oracle_on_grid():
    rng = np.random.default_rng(12)
    X = np.vstack([rng.normal(-1.5, 0.6, size=(6, 2)), rng.normal(1.5, 0.6, size=(6, 2))])
    y = np.array([-1.0] * 6 + [1.0] * 6)
    gamma = compute_gamma(X)
    K = rbf_gram(X, X, gamma)
    res = smo_solve(K, y, C=10.0)
    a_star, obj_star = qp_dual_oracle(K, y, 10.0)
    assert abs(dual_objective(res.alpha, y, K) - obj_star) < 1e-6
    model = smo_train_binary(X, y, SvmConfig(), gamma=gamma)
    grid = np.array([[u, v] for u in np.linspace(-3, 3, 5) for v in np.linspace(-3, 3, 4)])
    f_oracle = rbf_gram(grid, X, gamma) @ (a_star * y) + oracle_bias(a_star, y, K, 10.0)
    assert np.array_equal(np.sign(model.decision_function(grid)), np.sign(f_oracle))


@given(st.integers(0, 2 ** 32))
@settings(max_examples=40, deadline=None)
def test_trained_model_invariants(seed):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng)
    C = 10.0
    K = rbf_gram(X, X, compute_gamma(X))
    res = smo_solve(K, y, C=C, tol=1e-3)
    assert res.converged
    assert abs(float(res.alpha @ y)) < 1e-6
    assert res.alpha.min() >= 0.0 and res.alpha.max() <= C + 1e-9
    assert kkt_violation(res.alpha, y, K, res.bias, C) <= 1e-3
    _, obj_star = qp_dual_oracle(K, y, C)
    assert dual_objective(res.alpha, y, K) >= obj_star - 1e-6


def test_support_vectors_are_exactly_positive_alphas():
    rng = np.random.default_rng(4)
    X, y = random_instance(rng, n=15, d=3)
    gamma = compute_gamma(X)
    res = smo_solve(rbf_gram(X, X, gamma), y)
    model = smo_train_binary(X, y, SvmConfig(), gamma=gamma)
    mask = res.alpha > SV_THRESHOLD
    np.testing.assert_array_equal(model.support_vectors, X[mask])
    np.testing.assert_array_equal(model.alphas, res.alpha[mask])
    assert np.all(model.alphas > 0)


def test_free_support_vectors_sit_on_the_margin():
    rng = np.random.default_rng(9)
    X, y = random_instance(rng, n=18, d=2)
    model = smo_train_binary(X, y, SvmConfig())
    free = (model.alphas > 1e-6) & (model.alphas < model.C - 1e-6)
    assert free.any()
    for x, label in zip(model.support_vectors[free], model.sv_labels[free]):
        assert abs(label * svm_decision(model, x) - 1.0) <= 1e-3


@given(st.integers(0, 2 ** 32))
@settings(max_examples=25, deadline=None)
def test_decision_matches_naive_resummation(seed):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, n=10, d=3)
    model = smo_train_binary(X, y)
    x = rng.normal(size=3)
    naive = sum(a * s * naive_rbf(v, x, model.gamma)
                for a, s, v in zip(model.alphas, model.sv_labels, model.support_vectors)) + model.bias
    assert abs(svm_decision(model, x) - naive) < 1e-12
    with pytest.raises(DimensionMismatch):
        svm_decision(model, np.zeros(4))


def test_same_seed_same_bytes():
    rng = np.random.default_rng(21)
    X, y = random_instance(rng, n=20, d=4)
    a = MulticlassSvmModel((0, 1), ((0, 1, smo_train_binary(X, y, SvmConfig(seed=5))),), 1.0).to_json()
    b = MulticlassSvmModel((0, 1), ((0, 1, smo_train_binary(X, y, SvmConfig(seed=5))),), 1.0).to_json()
    assert a == b


def test_iteration_cap_warns_and_returns_model():
    rng = np.random.default_rng(8)
    X, y = random_instance(rng, n=20, d=3)
    with pytest.warns(IterationCapExceeded):
        model = smo_train_binary(X, y, SvmConfig(max_iterations=2))
    assert np.all(np.isfinite(model.decision_function(X)))


# --- multiclass ----------------------------------------------------------------------------

def blobs(rng, classes, per_class, dim=4, spread=6.0):
    centres = rng.normal(size=(classes, dim)) * spread
    X = np.vstack([centres[c] + rng.normal(size=(per_class, dim)) for c in range(classes)])
    return X, np.repeat(np.arange(classes), per_class)


def test_pair_structure():
    X, labels = blobs(np.random.default_rng(0), 3, 5)
    model = train_multiclass(X, labels)
    assert [(a, b) for a, b, _ in model.pairs] == [(0, 1), (0, 2), (1, 2)]
    assert model.class_count == 3


def test_two_class_reduces_to_sign():
    X, labels = blobs(np.random.default_rng(1), 2, 8)
    model = train_multiclass(X, labels)
    assert len(model.pairs) == 1
    f = model.pairs[0][2].decision_function(X)
    np.testing.assert_array_equal(model.predict(X), np.where(f > 0, 0, 1))


def test_four_class_separable_holdout():
    rng = np.random.default_rng(3)
    X, labels = blobs(rng, 4, 12)
    test = np.arange(len(X)) % 4 == 0
    assert nearest_centroid_accuracy(X[~test], labels[~test], X[test], labels[test]) >= 0.95
    model = train_multiclass(X[~test], labels[~test])
    assert np.mean(model.predict(X[test]) == labels[test]) == 1.0


def test_vote_majority_and_ties():
    # pairs (0,1), (0,2), (1,2); positive decision votes for the first class
    clear = MulticlassSvmModel((0, 1, 2), ((0, 1, constant_model(1)), (0, 2, constant_model(1)),
                                           (1, 2, constant_model(1))))
    assert clear.votes([[0.0]]).tolist() == [[2, 1, 0]]
    assert predict_multiclass(clear, [0.0]) == 0
    cycle = MulticlassSvmModel((0, 1, 2), ((0, 1, constant_model(1)), (0, 2, constant_model(-1)),
                                           (1, 2, constant_model(1))))
    assert cycle.votes([[0.0]]).tolist() == [[1, 1, 1]]
    assert predict_multiclass(cycle, [0.0]) == 0


@given(st.integers(0, 2 ** 32), st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_votes_invariant_under_positive_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    X, labels = blobs(rng, 3, 4, spread=1.0)
    model = train_multiclass(X, labels)
    a, b, m = model.pairs[1]
    scaled = BinarySvmModel(m.support_vectors, m.alphas * scale, m.sv_labels, m.bias * scale, m.gamma, m.C)
    other = MulticlassSvmModel(model.classes, (model.pairs[0], (a, b, scaled), model.pairs[2]), model.gamma)
    probe = rng.normal(size=(10, X.shape[1]))
    np.testing.assert_array_equal(model.predict(probe), other.predict(probe))


def test_single_class_multiclass():
    with pytest.raises(SingleClassInput):
        train_multiclass(np.zeros((3, 2)), [1, 1, 1])


def test_parallel_pairs_match_serial():
    X, labels = blobs(np.random.default_rng(5), 4, 6)
    assert train_multiclass(X, labels).to_json() == train_multiclass(X, labels, jobs=3).to_json()


def test_serialization_round_trip():
    rng = np.random.default_rng(6)
    X, labels = blobs(rng, 3, 6, spread=1.0)
    model = train_multiclass(X, labels)
    back = MulticlassSvmModel.from_dict(json.loads(model.to_json()))
    probe = rng.normal(size=(25, X.shape[1]))
    for (_, _, m1), (_, _, m2) in zip(model.pairs, back.pairs):
        np.testing.assert_allclose(m1.decision_function(probe), m2.decision_function(probe), atol=1e-12, rtol=0)
    assert back.to_json() == model.to_json()
    doc = model.to_dict()
    doc["version"] = 99
    with pytest.raises(SchemaVersionError):
        MulticlassSvmModel.from_dict(doc)


def test_default_config_trains_quietly():
    X, labels = blobs(np.random.default_rng(7), 3, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train_multiclass(X, labels)
