"""Classical and probabilistic modal analysis of linear systems ``dx/dt = A x``.

These routines double as the reference against which the Koopman pipeline is
checked: with the identity dictionary the EDMD quantities reduce to the ones
computed here.
"""
from dataclasses import dataclass
import warnings

import numpy as np

from ._eig import check_distinct, normalize_columns, tie_round
from .errors import (
    DimensionMismatch,
    ImaginaryResidueWarning,
    NonFiniteValue,
    ZeroRealEigenvector,
)

__all__ = [
    "LinearSystem",
    "ModalBasis",
    "ContributionMatrix",
    "eigendecompose",
    "simulate_linear",
    "contribution_factors",
    "linear_participation_factors",
    "probabilistic_state_in_mode",
]


@dataclass(frozen=True)
class LinearSystem:
    """State matrix of an autonomous linear system (units 1/time)."""

    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise NonFiniteValue("A has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class ModalBasis:
    """Eigenvalues with right (columns of U) and left (rows of V) eigenvectors."""

    eigenvalues: np.ndarray
    right_eigvecs: np.ndarray
    left_eigvecs: np.ndarray

    @property
    def n(self):
        return self.eigenvalues.size

    # short aliases matching the usual modal-analysis notation
    @property
    def U(self):
        return self.right_eigvecs

    @property
    def V(self):
        return self.left_eigvecs


@dataclass(frozen=True)
class ContributionMatrix:
    """``sigma[i, j]``: contribution of mode j to state i for initial state x0."""

    sigma: np.ndarray
    x0: np.ndarray


def _as_matrix(system):
    if isinstance(system, LinearSystem):
        return system.A
    return LinearSystem(system).A


def eigendecompose(system):
    """Eigendecomposition ``A = U diag(lambda) V`` with ``V = U^-1``.

    Eigenvalues are sorted by descending real part, then ascending imaginary
    part. Right eigenvectors have unit norm with their largest-magnitude entry
    real and positive.

    Raises
    ------
    DegenerateSpectrum
        If two eigenvalues coincide within ``1e-9 * ||A||``.
    """
    A = _as_matrix(system)
    lam, U = np.linalg.eig(A)
    scale = np.linalg.norm(A, 2)
    check_distinct(lam, scale)
    order = np.lexsort((tie_round(lam.imag, scale), -tie_round(lam.real, scale)))
    lam = lam[order].astype(complex)
    U = normalize_columns(U[:, order])
    V = np.linalg.inv(U)
    for arr in (lam, U, V):
        arr.setflags(write=False)
    return ModalBasis(lam, U, V)


def _check_state(basis, x0):
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != basis.n:
        raise DimensionMismatch(f"x0 has {x0.size} entries, system has {basis.n} states")
    return x0


def simulate_linear(basis, x0, times):
    """Evaluate the modal solution ``x(t) = sum_j (v_j . x0) u_j exp(lambda_j t)``.

    Returns an ``n x len(times)`` real array.
    """
    x0 = _check_state(basis, x0)
    t = np.asarray(times, dtype=float).ravel()
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("times must be non-decreasing")
    z0 = basis.V @ x0
    X = basis.U @ (z0[:, None] * np.exp(np.outer(basis.eigenvalues, t)))
    residue = np.abs(X.imag).max(initial=0.0)
    if residue > 1e-9 * max(1.0, np.abs(X.real).max(initial=0.0)):
        warnings.warn(
            f"imaginary residue {residue:.3g} in linear simulation",
            ImaginaryResidueWarning,
            stacklevel=2,
        )
    return X.real


def contribution_factors(basis, x0):
    x0 = _check_state(basis, x0)
    sigma = basis.U * (basis.V @ x0)[None, :]
    return ContributionMatrix(sigma, x0)


def linear_participation_factors(basis):
    """Mode-in-state participation ``P[i, j] = V[j, i] * U[i, j]``.

    Complex in general; every row and column sums to one because ``VU = UV = I``.
    """
    return basis.V.T * basis.U


def probabilistic_state_in_mode(basis):
    """State-in-mode factors for initial states uniform on the unit sphere.

    ``Pi[i, j] = Re(V[j, i])**2 / sum_r Re(V[j, r])**2``; columns sum to one.
    """
    return _squared_real_rows(basis.V)


def _squared_real_rows(W):
    # column j of the result is built from row j of W
    R = np.real(W) ** 2
    norms = R.sum(axis=1)
    bad = np.flatnonzero(norms < 1e-14)
    if bad.size:
        raise ZeroRealEigenvector(f"left eigenvector(s) {bad.tolist()} have no real part")
    return (R / norms[:, None]).T
