"""Shared oracles for the test suite.

The finite-difference helpers here are the independent reference for
every derivative produced by the package; they only ever call the
objective's value, never its gradient path.
"""

import numpy as np
import pytest


def central_diff_grad(f, theta, step=1e-5):
    """Central-difference gradient using only objective values."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        out[i] = (float(f(theta + e)) - float(f(theta - e))) / (2 * step)
    return out


def central_diff_hessian(f, theta, step=1e-4):
    """Second-order central differences of objective values only."""
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.size
    H = np.empty((d, d))
    eye = np.eye(d) * step
    for i in range(d):
        for j in range(i, d):
            pp = float(f(theta + eye[i] + eye[j]))
            pm = float(f(theta + eye[i] - eye[j]))
            mp = float(f(theta - eye[i] + eye[j]))
            mm = float(f(theta - eye[i] - eye[j]))
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * step * step)
    return H


def rel_error(approx, exact):
    """Norm-wise relative error with a unit floor on the denominator."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(1.0, float(np.linalg.norm(exact)))
    return float(np.linalg.norm(approx - exact)) / denom


@pytest.fixture(scope="session")
def iris_sequence():
    """CI Split Iris built once: 3 tasks, one species each, seed 0."""
    from clkit.tasks import load_builtin, split_by_class, split_train_val_test

    triple = split_train_val_test(load_builtin("iris"), seed=0)
    return split_by_class(triple, 1)
