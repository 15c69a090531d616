import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choiceopt.model import (Batch, ChoiceModel, DataError, Dataset, EvaluationError,
                             ModelSpec, SpecError, Term)

from conftest import BACKENDS, binary_model, fd_gradient, fd_jacobian, random_model


def asc_model(J, n, choices=None, backend=None):
    alts = tuple(f"a{j}" for j in range(J))
    terms = tuple(Term(f"asc{j}", alts[j]) for j in range(1, J))
    spec = ModelSpec(alts, terms)
    choices = np.zeros(n, dtype=int) if choices is None else choices
    return ChoiceModel(spec, Dataset.from_columns(spec, {"choice": choices}), backend=backend)


# -- specification -------------------------------------------------------------

def test_spec_counts_generic_parameter_once():
    spec = ModelSpec(("car", "pt"), (Term("asc_pt", "pt"), Term("b_cost", "car", "cost_car"),
                                     Term("b_cost", "pt", "cost_pt")))
    assert spec.K == 2
    assert spec.parameter_names == ("asc_pt", "b_cost")
    assert spec.data_columns == ("cost_car", "cost_pt")


@pytest.mark.parametrize("alts, terms", [
    (("a",), (Term("b", "a", "x"),)),
    (("a", "a"), (Term("b", "a", "x"),)),
    (("a", "b"), ()),
    (("a", "b"), (Term("c1", "a"), Term("c2", "b"))),  # no reference alternative
    (("a", "b", "c"), (Term("c1", "a"), Term("c2", "a"))),
    (("a", "b", "c"), (Term("c", "a"), Term("c", "b"))),
    (("a", "b"), (Term("c", "a"), Term("c", "b", "x"))),
    (("a", "b"), (Term("b", "a", "x"), Term("b", "a", "x"))),
    (("a", "b"), (Term("b", "zz", "x"),)),
])
def test_spec_rejects_invalid_layouts(alts, terms):
    with pytest.raises(SpecError):
        ModelSpec(alts, terms)


def test_dataset_validation_names_rows():
    spec = ModelSpec(("a", "b"), (Term("b", "a", "x"),), availability={"b": "av_b"})
    with pytest.raises(DataError) as exc:
        Dataset.from_columns(spec, {"x": [0, 1, 2], "choice": [0, 2, 1], "av_b": [1, 1, 1]})
    assert exc.value.row == 1
    with pytest.raises(DataError) as exc:
        Dataset.from_columns(spec, {"x": [0, 1, 2], "choice": [0, 1, 1], "av_b": [1, 1, 0]})
    assert exc.value.row == 2 and "not available" in str(exc.value)
    with pytest.raises(DataError):
        Dataset.from_columns(spec, {"x": [0, np.nan], "choice": [0, 1], "av_b": [1, 1]})
    with pytest.raises(DataError):
        Dataset.from_columns(spec, {"x": [0, 1], "choice": [0, 1]})


def test_dataset_is_read_only():
    m = binary_model([1.0, 2.0], [0, 1])
    with pytest.raises(ValueError):
        m.dataset.data[0, 0] = 5.0


def test_batch_validation():
    assert Batch.full(5).is_full and Batch.full(5).fraction == 1.0
    for bad in ([], [0, 0], [5], [-1]):
        with pytest.raises(ValueError):
            Batch(np.array(bad, dtype=int), 5)


# -- probabilities -------------------------------------------------------------

def test_uniform_probabilities_at_zero():
    np.testing.assert_allclose(asc_model(2, 1).choice_probabilities(np.zeros(1), 0), [0.5, 0.5])
    np.testing.assert_allclose(asc_model(3, 1).choice_probabilities(np.zeros(2), 0),
                               [1 / 3] * 3)


def test_two_alternative_probability_by_hand():
    # utilities (0.5, 0): exp(0.5) / (exp(0.5) + 1)
    m = binary_model([1.0], [0])
    p = m.choice_probabilities(np.array([0.5]), 0)
    np.testing.assert_allclose(p, [0.62246, 0.37754], atol=1e-5)


def test_unavailable_alternative_gets_zero_probability():
    spec = ModelSpec(("a", "b", "c"), (Term("c_b", "b"), Term("c_c", "c")),
                     availability={"c": "av"})
    m = ChoiceModel(spec, Dataset.from_columns(spec, {"choice": [0, 1], "av": [0, 1]}))
    p = m.probabilities(np.array([0.3, -0.2]))
    assert p[0, 2] == 0.0
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_large_utilities_do_not_overflow():
    m = binary_model([1.0, -1.0], [0, 1])
    p = m.probabilities(np.array([800.0]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 5))
def test_probabilities_normalized(seed, J):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 8, 30, J=J)
    theta = rng.normal(scale=2.0, size=m.K)
    p = m.probabilities(theta)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


# -- log likelihood and derivatives -------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_value_at_zero_is_n_log_half(backend):
    m = asc_model(2, 4, backend=backend)
    ev = m.evaluate(np.zeros(1))
    assert ev.value == pytest.approx(4 * math.log(0.5), abs=1e-12)
    assert ev.value == pytest.approx(-2.77259, abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_hessian_order_returns_everything(backend):
    m = random_model(np.random.default_rng(1), 6, 40).with_backend(backend)
    ev = m.evaluate(np.zeros(m.K), order="hessian")
    assert ev.gradient is not None and ev.hessian is not None
    assert ev.order == "hessian" and ev.satisfies("gradient")
    ev = m.evaluate(np.zeros(m.K), order="value")
    assert ev.gradient is None and ev.hessian is None and not ev.satisfies("gradient")


@pytest.mark.parametrize("backend", BACKENDS)
def test_derivatives_match_finite_differences_small(backend):
    rng = np.random.default_rng(7)
    m = random_model(rng, 3, 10, J=3).with_backend(backend)
    theta = rng.normal(size=m.K)
    ev = m.evaluate(theta, order="hessian")
    g_fd = fd_gradient(lambda t: m.evaluate(t).value, theta)
    H_fd = fd_jacobian(lambda t: m.evaluate(t, order="gradient").gradient, theta)
    assert np.max(np.abs(ev.gradient - g_fd)) / (1 + np.max(np.abs(ev.gradient))) < 1e-6
    assert np.max(np.abs(ev.hessian - H_fd)) / (1 + np.max(np.abs(ev.hessian))) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_derivatives_match_finite_differences_on_batches(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(2, 10)), 60)
    batch = Batch(np.sort(rng.choice(m.N, int(rng.integers(1, 30)), replace=False)), m.N)
    theta = rng.normal(scale=0.5, size=m.K)
    ev = m.evaluate(theta, batch, "hessian")
    g_fd = fd_gradient(lambda t: m.evaluate(t, batch).value, theta)
    H_fd = fd_jacobian(lambda t: m.evaluate(t, batch, "gradient").gradient, theta)
    assert np.max(np.abs(ev.gradient - g_fd)) / (1 + np.max(np.abs(ev.gradient))) < 1e-6
    assert np.max(np.abs(ev.hessian - H_fd)) / (1 + np.max(np.abs(ev.hessian))) < 1e-5
    np.testing.assert_allclose(ev.hessian, ev.hessian.T, rtol=1e-12, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_hessian_negative_semidefinite(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 8, 50)
    theta = rng.normal(scale=3.0, size=m.K)
    H = m.evaluate(theta, order="hessian").hessian
    shift = 1e-10 * max(1.0, np.abs(H).max())
    np.linalg.cholesky(-H + shift * np.eye(m.K))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_batch_additivity(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 6, 80)
    theta = rng.normal(size=m.K)
    perm = rng.permutation(m.N)
    cut = int(rng.integers(1, m.N))
    b1, b2 = Batch(np.sort(perm[:cut]), m.N), Batch(np.sort(perm[cut:]), m.N)
    full = m.evaluate(theta, order="hessian")
    e1, e2 = m.evaluate(theta, b1, "hessian"), m.evaluate(theta, b2, "hessian")
    assert e1.value + e2.value == pytest.approx(full.value, rel=1e-10)
    np.testing.assert_allclose(e1.gradient + e2.gradient, full.gradient, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(e1.hessian + e2.hessian, full.hessian, rtol=1e-10, atol=1e-10)


def test_duplicated_dataset_half_batches_add_up():
    x = np.array([0.3, -1.2, 2.0, 0.7])
    c = np.array([0, 1, 1, 0])
    m = binary_model(np.concatenate([x, x]), np.concatenate([c, c]))
    theta = np.array([0.8])
    halves = [Batch(np.arange(4), 8), Batch(np.arange(4, 8), 8)]
    vals = [m.evaluate(theta, b).value for b in halves]
    assert vals[0] == pytest.approx(vals[1], rel=1e-14)
    assert m.evaluate(theta).value == pytest.approx(sum(vals), rel=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernel not built")
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 10, 300)
    theta = rng.normal(size=m.K)
    batch = Batch(np.sort(rng.choice(m.N, 150, replace=False)), m.N)
    a = m.with_backend("compiled").evaluate(theta, batch, "hessian")
    b = m.with_backend("python").evaluate(theta, batch, "hessian")
    assert a.value == pytest.approx(b.value, rel=1e-12)
    np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(a.hessian, b.hessian, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_evaluation_is_deterministic(backend):
    m = random_model(np.random.default_rng(3), 8, 500).with_backend(backend)
    theta = np.linspace(-1, 1, m.K)
    a, b = m.evaluate(theta, order="hessian"), m.evaluate(theta, order="hessian")
    assert a.value == b.value
    assert np.array_equal(a.gradient, b.gradient) and np.array_equal(a.hessian, b.hessian)


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_probability_raises_with_row(backend):
    m = binary_model([0.0, 1.0, 2.0], [0, 0, 1], backend=backend)
    with pytest.raises(EvaluationError) as exc:
        m.evaluate(np.array([-1e6]))
    assert exc.value.row == 1


def test_theta_shape_checked():
    m = binary_model([1.0], [0])
    with pytest.raises(ValueError):
        m.evaluate(np.zeros(2))
    with pytest.raises(ValueError):
        m.evaluate(np.array([np.inf]))
    with pytest.raises(ValueError):
        m.evaluate(np.zeros(1), order="third")
