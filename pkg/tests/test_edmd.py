import math
import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from kmdpf import integrate_rk4, lifted_canonical, simulate_linear, eigendecompose
from kmdpf.edmd import (
    KoopmanDecomposition,
    SnapshotPair,
    assemble_snapshots,
    estimate_koopman,
    evaluate_eigenfunctions,
    fit_edmd,
    koopman_tuples,
    modal_coordinates,
    mode_summary,
    reconstruct,
    reconstruction_error,
)
from kmdpf.errors import (
    DegenerateSpectrum,
    DimensionMismatch,
    RankDeficientWarning,
    TooFewSnapshots,
    ZeroReference,
)
from kmdpf.models import canonical_system
from kmdpf.observables import canonical_dictionary, identity_dictionary, lift

from conftest import DT, exact_linear_trajectories, random_stable_matrix


def test_assemble_snapshots():
    T = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    p = assemble_snapshots(T, 0.1)
    np.testing.assert_array_equal(p.X, [[1, 2], [4, 5]])
    np.testing.assert_array_equal(p.Xp, [[2, 3], [5, 6]])
    assert p.dt == 0.1


def test_assemble_needs_two_samples():
    with pytest.raises(TooFewSnapshots):
        assemble_snapshots(np.ones((2, 1)), 0.1)


def test_snapshot_shape_check():
    with pytest.raises(DimensionMismatch):
        SnapshotPair(np.ones((2, 3)), np.ones((2, 4)), 0.1)


def test_estimate_identity_map():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((3, 10))
    np.testing.assert_allclose(estimate_koopman(G, G).K, np.eye(3), atol=1e-12)


def test_estimate_doubling_map():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((3, 10))
    est = estimate_koopman(G, 2 * G)
    np.testing.assert_allclose(est.K, 2 * np.eye(3), atol=1e-12)
    assert est.rank == 3 and not est.rank_deficient


def test_estimate_duplicated_snapshots():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((3, 3))
    G = rng.standard_normal((3, 12))
    K1 = estimate_koopman(G, A @ G).K
    K2 = estimate_koopman(np.hstack([G, G]), np.hstack([A @ G, A @ G])).K
    np.testing.assert_allclose(K1, K2, atol=1e-10)


def test_estimate_warns_on_rank_deficiency():
    G = np.ones((2, 5))
    with pytest.warns(RankDeficientWarning):
        est = estimate_koopman(G, G)
    assert est.rank == 1


def test_estimate_warns_when_fewer_snapshots_than_observables():
    rng = np.random.default_rng(3)
    with pytest.warns(RankDeficientWarning):
        estimate_koopman(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)))


def test_diagonal_map_eigen_triples():
    dec = koopman_tuples(np.diag([0.5, 0.9]), np.eye(2), 0.1)
    np.testing.assert_allclose(dec.mu, [0.9, 0.5])
    np.testing.assert_allclose(np.abs(dec.Xi), np.eye(2)[::-1], atol=1e-15)
    np.testing.assert_allclose(dec.Xi @ dec.XiInv, np.eye(2), atol=1e-15)


def test_repeated_eigenvalue_rejected():
    with pytest.raises(DegenerateSpectrum):
        koopman_tuples(np.eye(2) * 0.7, np.eye(2), 0.1)


def test_unknown_order_rejected():
    with pytest.raises(ValueError):
        koopman_tuples(np.diag([0.5, 0.9]), np.eye(2), 0.1, order="size")


def test_canonical_discrete_eigenvalues(canonical_dec):
    expected = np.exp(np.array([-1.0, -0.05, -0.1]) * DT)
    np.testing.assert_allclose(canonical_dec.mu.real, expected, atol=1e-10)
    np.testing.assert_allclose(canonical_dec.mu.imag, 0, atol=1e-12)


def test_canonical_lifted_k_matches_exponential(canonical_dec):
    F = expm(lifted_canonical().A * DT)
    np.testing.assert_allclose(canonical_dec.K, F, atol=1e-9)


def test_modulus_order(canonical_dec_modulus):
    np.testing.assert_allclose(
        canonical_dec_modulus.lambda_c.real, [-0.05, -0.1, -1.0], atol=1e-6
    )


def test_orders_are_permutations(canonical_dec, canonical_dec_modulus):
    a, b = canonical_dec, canonical_dec_modulus
    perm = [int(np.argmin(np.abs(b.mu - m))) for m in a.mu]
    p = b.permuted(perm)
    np.testing.assert_allclose(p.Xi, a.Xi, atol=1e-9)
    np.testing.assert_allclose(p.Phi, a.Phi, atol=1e-9)


def test_eigenvector_normalization(canonical_dec):
    R = canonical_dec.XiInv
    np.testing.assert_allclose(np.linalg.norm(R, axis=0), 1.0)
    np.testing.assert_allclose(canonical_dec.Xi @ R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(canonical_dec.Phi, canonical_dec.B @ R)


def test_eigenfunctions_at_x0(canonical_dec):
    np.testing.assert_allclose(
        evaluate_eigenfunctions(canonical_dec, [-1.0, 2.0]).real, [-5.4444, 2, 5.9792], atol=1e-3
    )


def test_eigenfunction_values_are_left_vectors_times_lift(canonical_dec):
    x = np.array([0.4, -0.3])
    np.testing.assert_allclose(
        evaluate_eigenfunctions(canonical_dec, x), canonical_dec.Xi @ lift(canonical_dictionary(), x)
    )


def test_reconstruct_initial_state(canonical_dec):
    x0 = np.array([-1.0, 2.0])
    np.testing.assert_allclose(reconstruct(canonical_dec, x0, 0)[:, 0], x0, atol=1e-12)


def test_reconstruction_tracks_lifted_linear_solution(canonical_dec):
    w0 = np.array([-1.0, 2.0, 4.0])
    t = DT * np.arange(501)
    ref = simulate_linear(eigendecompose(lifted_canonical()), w0, t)[:2]
    np.testing.assert_allclose(reconstruct(canonical_dec, w0[:2], 500), ref, atol=1e-8)


def test_reconstruction_error_cases():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert reconstruction_error(X, X) == 0.0
    assert reconstruction_error(1.1 * X, X) == pytest.approx(0.1)
    with pytest.raises(ZeroReference):
        reconstruction_error(X, np.zeros_like(X))
    with pytest.raises(DimensionMismatch):
        reconstruction_error(X, X[:, :1])


def test_modal_coordinates_shape(canonical_dec):
    with pytest.raises(DimensionMismatch):
        modal_coordinates(canonical_dec, np.ones(2))
    z = modal_coordinates(canonical_dec, np.eye(3))
    np.testing.assert_allclose(z, canonical_dec.Xi)


def test_linear_oracle(linear_case):
    A, _, dec = linear_case
    lam = np.linalg.eigvals(A)
    for m in np.exp(lam * 0.1):
        assert np.min(np.abs(dec.mu - m)) < 1e-10
    # modes are right eigenvectors of A
    for j in range(3):
        v = dec.Phi[:, j]
        lam_j = np.log(dec.mu[j]) / 0.1
        np.testing.assert_allclose(A @ v, lam_j * v, atol=1e-8)


def test_fit_accepts_snapshot_pair(canonical_traj):
    p = assemble_snapshots(canonical_traj, DT)
    a = fit_edmd(p, canonical_dictionary())
    b = fit_edmd(canonical_traj, canonical_dictionary(), DT)
    np.testing.assert_array_equal(a.K, b.K)


def test_fit_checks_dimension(canonical_traj):
    with pytest.raises(DimensionMismatch):
        fit_edmd(canonical_traj, identity_dictionary(3), DT)
    with pytest.raises(ValueError):
        fit_edmd(canonical_traj, canonical_dictionary())


def test_multiple_trajectories_do_not_straddle():
    rng = np.random.default_rng(4)
    A = random_stable_matrix(rng, 2)
    trajs = exact_linear_trajectories(A, 0.05, 20, [[1.0, 0.0], [0.0, 1.0]])
    dec = fit_edmd(trajs, identity_dictionary(2), 0.05)
    np.testing.assert_allclose(dec.K, expm(A * 0.05), atol=1e-10)


# -- mode summary -------------------------------------------------------------

def _single_mode(mu, dt):
    mu = np.atleast_1d(np.asarray(mu, dtype=complex))
    q = mu.size
    return KoopmanDecomposition(
        np.diag(mu.real), mu, np.eye(q, dtype=complex), np.eye(q, dtype=complex),
        np.eye(q, dtype=complex), np.eye(q), dt,
    )


def test_summary_unit_eigenvalue():
    s = mode_summary(_single_mode(1.0, 0.01))[0]
    assert s.lambda_c == 0 and s.freq_hz == 0 and s.damping_pct == 100.0


def test_summary_real_stable_mode():
    s = mode_summary(_single_mode(math.exp(-0.05 * 0.01), 0.01))[0]
    assert s.lambda_c.real == pytest.approx(-0.05, rel=1e-10)
    assert s.freq_hz == 0 and s.damping_pct == pytest.approx(100.0)


def test_summary_zero_eigenvalue():
    s = mode_summary(_single_mode(0.0, 0.01))[0]
    assert s.zero_eigenvalue and s.lambda_c.real == -math.inf and s.damping_pct == 100.0


def test_summary_oscillatory_row():
    dt = 1 / 120
    lam = complex(-0.03, 1.47)
    s = mode_summary(_single_mode(np.exp(lam * dt), dt))[0]
    assert s.freq_hz == pytest.approx(1.47 / (2 * math.pi), rel=1e-9)
    assert round(s.freq_hz, 2) == 0.23
    assert s.damping_pct == pytest.approx(0.03 / abs(lam) * 100, rel=1e-9)


def test_summary_rounded_table_row_is_consistent():
    # printed values are rounded to two decimals; some point inside the
    # rounding box must reproduce the printed 1.95 % damping and 0.23 Hz
    dt = 1 / 120
    damp = []
    for re in np.linspace(-0.035, -0.025, 21):
        for im in np.linspace(1.465, 1.475, 5):
            s = mode_summary(_single_mode(np.exp(complex(re, im) * dt), dt))[0]
            assert round(s.freq_hz, 2) == 0.23
            damp.append(s.damping_pct)
    assert min(damp) <= 1.945 and max(damp) >= 1.955


def test_summary_conjugate_pair_shares_frequency():
    lam = complex(-0.5, 3.0)
    dec = _single_mode([np.exp(lam * 0.01), np.exp(lam.conjugate() * 0.01)], 0.01)
    a, b = mode_summary(dec)
    assert a.freq_hz == pytest.approx(b.freq_hz) and a.damping_pct == pytest.approx(b.damping_pct)
