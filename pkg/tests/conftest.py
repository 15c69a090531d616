import numpy as np
import pytest

from choiceopt.data_io import generate_synthetic, make_problem
from choiceopt.kernels import available_backends
from choiceopt.model import ChoiceModel, Dataset, ModelSpec, Term

BACKENDS = available_backends()


def fd_gradient(f, theta, h=1e-6):
    """Central finite differences of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def fd_jacobian(grad, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((grad(theta + e) - grad(theta - e)) / (2 * h))
    return np.column_stack(cols)


def random_model(rng, K, N, J=None, availability=True):
    """A small random MNL with mixed generic/specific terms and availability."""
    J = J or int(rng.integers(2, 5))
    K = max(K, J)
    spec = make_problem(J, K, N, seed=int(rng.integers(1 << 30)), availability=availability)
    ds, _ = generate_synthetic(spec)
    return ChoiceModel(spec.model, ds)


def binary_model(u0_column, choices, backend=None):
    """J=2 model whose utility of alternative 0 is ``b * x`` and 1 is zero."""
    spec = ModelSpec(("a", "b"), (Term("b", "a", "x"),))
    ds = Dataset.from_columns(spec, {"x": u0_column, "choice": choices})
    return ChoiceModel(spec, ds, backend=backend)


@pytest.fixture(scope="session")
def base_problem():
    """The 20,000-row, J=4, K=12 synthetic problem used across tests."""
    spec = make_problem(4, 12, 20000, seed=0)
    ds, theta_star = generate_synthetic(spec)
    return ChoiceModel(spec.model, ds), theta_star


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
