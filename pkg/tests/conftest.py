import numpy as np
import pytest

from stochopt.problems import (Dataset, LeastSquaresProblem, LogisticProblem,
                               make_classification, make_regression)

_RESULTS = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[k])


@pytest.fixture
def small_logistic():
    return LogisticProblem(make_classification(40, 6, seed=5), 0.05)


@pytest.fixture
def small_ls():
    return LeastSquaresProblem(make_regression(30, 5, seed=6), 0.01)


def finite_difference_gradient(f, w, eps=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = eps
        g[i] = (f(w + e) - f(w - e)) / (2 * eps)
    return g


def tiny_dataset():
    X = np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 0.5], [3.0, 1.0, 0.0], [0.5, 0.5, 0.5]])
    return Dataset(X, np.array([1.0, -1.0, 1.0, -1.0]))
