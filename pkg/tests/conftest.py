import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from kmdpf import (
    canonical_dictionary,
    canonical_system,
    fit_edmd,
    identity_dictionary,
    integrate_rk4,
    swing4,
    swing_dictionary,
)

DT = 0.01
STEPS = 1000


def random_stable_matrix(rng, n, min_gap=0.05):
    """Random real matrix with distinct eigenvalues in the open left half plane."""
    while True:
        A = rng.standard_normal((n, n))
        lam = np.linalg.eigvals(A)
        A = A - (lam.real.max() + rng.uniform(0.1, 0.5)) * np.eye(n)
        lam = np.linalg.eigvals(A)
        gaps = np.abs(lam[:, None] - lam[None, :]) + np.eye(n) * 1e9
        if gaps.min() > min_gap:
            return A


def exact_linear_trajectories(A, dt, steps, x0s):
    """Sample dx/dt = A x exactly through the matrix exponential."""
    F = expm(A * dt)
    out = []
    for x0 in x0s:
        X = np.empty((A.shape[0], steps + 1))
        X[:, 0] = x0
        for k in range(steps):
            X[:, k + 1] = F @ X[:, k]
        out.append(X)
    return out


@pytest.fixture(scope="session")
def canonical_traj():
    return integrate_rk4(canonical_system(), [-1.0, 2.0], DT, STEPS)


@pytest.fixture(scope="session")
def canonical_dec(canonical_traj):
    return fit_edmd(canonical_traj, canonical_dictionary(), DT, order="observable")


@pytest.fixture(scope="session")
def canonical_dec_modulus(canonical_traj):
    return fit_edmd(canonical_traj, canonical_dictionary(), DT)


@pytest.fixture(scope="session")
def swing_case():
    system = swing4()
    T = integrate_rk4(system, system.default_x0, DT, STEPS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dec = fit_edmd(T, swing_dictionary(4), DT)
    return T, dec


@pytest.fixture(scope="session")
def linear_case():
    rng = np.random.default_rng(7)
    A = random_stable_matrix(rng, 3)
    x0s = rng.standard_normal((4, 3))
    trajs = exact_linear_trajectories(A, 0.1, 60, x0s)
    dec = fit_edmd(trajs, identity_dictionary(3), 0.1)
    return A, trajs, dec


# -- acceptance summary ------------------------------------------------------

_acceptance = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((props["criterion"], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for text, outcome in _acceptance:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {text}")
