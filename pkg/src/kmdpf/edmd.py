"""Extended dynamic mode decomposition (EDMD).

Snapshot pairs are lifted through an observable dictionary and a finite
Koopman matrix ``K = G(X') G(X)^+`` is fitted. Its eigen-triples give the
Koopman eigenvalues ``mu``, eigenfunctions ``phi(x) = Xi gamma(x)`` and modes
``Phi = B Xi^-1``.
"""
from dataclasses import dataclass, replace
import math
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._eig import check_distinct, normalize_columns, tie_round
from .errors import (
    DegenerateSpectrum,
    DimensionMismatch,
    ImaginaryResidueWarning,
    RankDeficientWarning,
    TooFewSnapshots,
    ZeroReference,
)
from .observables import lift, recovery_matrix

__all__ = [
    "SnapshotPair",
    "KoopmanEstimate",
    "KoopmanDecomposition",
    "ModeSummary",
    "assemble_snapshots",
    "stack_snapshots",
    "estimate_koopman",
    "koopman_tuples",
    "fit_edmd",
    "evaluate_eigenfunctions",
    "reconstruct",
    "reconstruction_error",
    "modal_coordinates",
    "mode_summary",
    "observable_association",
]

DEFAULT_SVD_RTOL = 1e-10
ZERO_EIGENVALUE_TOL = 1e-12


@dataclass(frozen=True)
class SnapshotPair:
    """Snapshot matrices ``X = [x_0 .. x_{m-1}]`` and ``Xp = [x_1 .. x_m]``."""

    X: np.ndarray
    Xp: np.ndarray
    dt: float

    def __post_init__(self):
        if np.shape(self.X) != np.shape(self.Xp) or np.ndim(self.X) != 2:
            raise DimensionMismatch("X and Xp must be 2-D arrays of identical shape")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]


def assemble_snapshots(trajectory, dt):
    """Split an ``n x (m+1)`` trajectory into its shifted snapshot pair."""
    T = np.asarray(trajectory, dtype=float)
    if T.ndim != 2:
        raise DimensionMismatch("trajectory must be a 2-D array (states x samples)")
    if T.shape[1] < 2:
        raise TooFewSnapshots(f"need at least 2 samples, got {T.shape[1]}")
    return SnapshotPair(T[:, :-1].copy(), T[:, 1:].copy(), float(dt))


def stack_snapshots(pairs):
    """Concatenate snapshot pairs from independent runs (same dt)."""
    pairs = list(pairs)
    if not pairs:
        raise TooFewSnapshots("no snapshot pairs given")
    dts = {p.dt for p in pairs}
    if len(dts) != 1:
        raise ValueError(f"snapshot pairs have different sampling intervals {sorted(dts)}")
    return SnapshotPair(
        np.hstack([p.X for p in pairs]), np.hstack([p.Xp for p in pairs]), pairs[0].dt
    )


@dataclass(frozen=True)
class KoopmanEstimate:
    K: np.ndarray
    residual: float
    rank: int
    singular_values: np.ndarray

    @property
    def rank_deficient(self):
        return self.rank < self.K.shape[0]


def estimate_koopman(GX, GXp, svd_rtol=DEFAULT_SVD_RTOL):
    """Least-squares Koopman matrix ``K = GXp pinv(GX)``.

    The pseudoinverse drops singular values below ``svd_rtol * s_max``. A
    numerical rank below q triggers :class:`RankDeficientWarning`; K is still
    returned.
    """
    GX = np.asarray(GX, dtype=float)
    GXp = np.asarray(GXp, dtype=float)
    if GX.shape != GXp.shape or GX.ndim != 2:
        raise DimensionMismatch(f"lifted snapshot shapes differ: {GX.shape} vs {GXp.shape}")
    q, m = GX.shape
    if m < q:
        warnings.warn(f"fewer snapshots ({m}) than observables ({q})", RankDeficientWarning, stacklevel=2)
    U, s, Vh = np.linalg.svd(GX, full_matrices=False)
    rank = int(np.sum(s > svd_rtol * s[0])) if s.size and s[0] > 0 else 0
    pinv = (Vh[:rank].T / s[:rank]) @ U[:, :rank].T
    K = GXp @ pinv
    residual = float(np.linalg.norm(K @ GX - GXp))
    if rank < q:
        warnings.warn(
            f"lifted data has numerical rank {rank} < {q} observables",
            RankDeficientWarning,
            stacklevel=2,
        )
    return KoopmanEstimate(K, residual, rank, s)


@dataclass(frozen=True)
class KoopmanDecomposition:
    """Finite Koopman approximation and its eigen-triples.

    ``Xi`` rows are left eigenvectors of K, ``XiInv`` columns the matching
    right eigenvectors (unit norm, largest entry real positive), ``Phi`` the
    Koopman modes of the full-state observable.
    """

    K: np.ndarray
    mu: np.ndarray
    Xi: np.ndarray
    XiInv: np.ndarray
    Phi: np.ndarray
    B: np.ndarray
    dt: float
    dictionary: object = None
    rank: int = None
    residual: float = None
    rank_deficient: bool = False

    @property
    def q(self):
        return self.K.shape[0]

    @property
    def n(self):
        return self.Phi.shape[0]

    @property
    def identity_indices(self):
        return np.argmax(self.B, axis=1)

    @property
    def lambda_c(self):
        """Continuous-time eigenvalues ``log(mu) / dt`` (principal branch)."""
        with np.errstate(divide="ignore"):
            return np.log(self.mu.astype(complex)) / self.dt

    def permuted(self, order):
        """Same decomposition with modes reordered by ``order``."""
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(self.q)):
            raise ValueError("order must be a permutation of the mode indices")
        return replace(
            self,
            mu=self.mu[order],
            Xi=self.Xi[order],
            XiInv=self.XiInv[:, order],
            Phi=self.Phi[:, order],
        )


def _modulus_order(mu):
    mag = np.abs(mu)
    scale = mag.max(initial=1.0) or 1.0
    freq = np.abs(np.angle(mu))
    return np.lexsort((-mu.imag, tie_round(freq, np.pi), -tie_round(mag, scale)))


def observable_association(XiInv):
    """Pair each observable with one mode.

    Returns ``obs_of_mode`` such that the product of
    ``|XiInv[obs_of_mode[j], j]|`` over modes is maximal, i.e. every mode is
    attached to the observable carrying the dominant share of its right
    eigenvector without two modes claiming the same observable.
    """
    with np.errstate(divide="ignore"):
        cost = -np.log(np.abs(XiInv))
    cost[~np.isfinite(cost)] = 1e6
    rows, cols = linear_sum_assignment(cost)
    obs_of_mode = np.empty(XiInv.shape[1], dtype=int)
    obs_of_mode[cols] = rows
    # conjugate columns have equal magnitudes, so the solver may hand out
    # their two observables either way; give the lower one to +imag
    for j in range(XiInv.shape[1]):
        for k in range(j + 1, XiInv.shape[1]):
            if np.allclose(XiInv[:, j], XiInv[:, k].conj(), rtol=1e-9, atol=1e-12) and np.any(
                XiInv[:, j].imag
            ):
                pos, neg = (j, k) if _first_imag(XiInv[:, j]) > 0 else (k, j)
                lo, hi = sorted((obs_of_mode[pos], obs_of_mode[neg]))
                obs_of_mode[pos], obs_of_mode[neg] = lo, hi
    return obs_of_mode


def _first_imag(v):
    nz = v.imag[np.abs(v.imag) > 1e-12 * np.abs(v).max()]
    return nz[0] if nz.size else 0.0


def koopman_tuples(K, B, dt, dictionary=None, order="modulus", *, rank=None, residual=None):
    """Eigendecompose K into Koopman eigenvalues, eigenvectors and modes.

    ``order="modulus"`` sorts by descending ``|mu|``, then ascending frequency,
    conjugate pairs adjacent with positive imaginary part first.
    ``order="observable"`` places mode k on the observable it is associated
    with (see :func:`observable_association`), which is how hand-derived
    examples usually list modes.
    """
    K = np.asarray(K, dtype=float)
    B = np.asarray(B, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionMismatch(f"K must be square, got {K.shape}")
    if B.ndim != 2 or B.shape[1] != K.shape[0]:
        raise DimensionMismatch(f"B must have {K.shape[0]} columns, got shape {B.shape}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    mu, R = np.linalg.eig(K)
    mu = mu.astype(complex)
    check_distinct(mu, np.linalg.norm(K, 2), exempt_zero=True)
    idx = _modulus_order(mu)
    mu, R = mu[idx], normalize_columns(R[:, idx])
    if np.linalg.cond(R) > 1e12:
        raise DegenerateSpectrum("eigenvectors of K are numerically dependent")
    if order == "observable":
        obs = observable_association(R)
        perm = np.argsort(obs)
        mu, R = mu[perm], R[:, perm]
    elif order != "modulus":
        raise ValueError(f"unknown mode order {order!r}")
    Xi = np.linalg.inv(R)
    rank_deficient = rank is not None and rank < K.shape[0]
    return KoopmanDecomposition(
        K, mu, Xi, R, B @ R, B, float(dt), dictionary, rank, residual, rank_deficient
    )


def fit_edmd(data, dictionary, dt=None, svd_rtol=DEFAULT_SVD_RTOL, order="modulus"):
    """Run the whole EDMD pipeline.

    Parameters
    ----------
    data : SnapshotPair, array or list of arrays
        Snapshot pair, or one or more ``n x (m+1)`` trajectories sampled at
        ``dt`` (pairs never straddle two trajectories).
    dictionary : ObservableDictionary
    """
    if isinstance(data, SnapshotPair):
        pair = data
    else:
        if dt is None:
            raise ValueError("dt is required when passing raw trajectories")
        trajs = [data] if isinstance(data, np.ndarray) and data.ndim == 2 else list(data)
        pair = stack_snapshots(assemble_snapshots(T, dt) for T in trajs)
    if pair.n != dictionary.n:
        raise DimensionMismatch(f"data has {pair.n} states, dictionary expects {dictionary.n}")
    est = estimate_koopman(lift(dictionary, pair.X), lift(dictionary, pair.Xp), svd_rtol)
    return koopman_tuples(
        est.K,
        recovery_matrix(dictionary),
        pair.dt,
        dictionary,
        order,
        rank=est.rank,
        residual=est.residual,
    )


def _lifted(dec, x):
    if dec.dictionary is None:
        raise ValueError("decomposition carries no observable dictionary")
    x = np.asarray(x, dtype=float)
    if x.shape[0] != dec.dictionary.n:
        raise DimensionMismatch(f"state has {x.shape[0]} entries, expected {dec.dictionary.n}")
    return lift(dec.dictionary, x)


def evaluate_eigenfunctions(dec, x):
    """Koopman eigenfunctions ``phi(x) = Xi gamma(x)`` (accepts n-vectors or n x m)."""
    return dec.Xi @ _lifted(dec, x)


def reconstruct(dec, x0, steps):
    """Predict ``x_k = sum_j phi_j(x0) Phi_j mu_j**k`` for k = 0..steps."""
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    phi0 = evaluate_eigenfunctions(dec, np.asarray(x0, dtype=float).ravel())
    powers = dec.mu[:, None] ** np.arange(steps + 1)[None, :]
    X = dec.Phi @ (phi0[:, None] * powers)
    residue = np.abs(X.imag).max(initial=0.0)
    if residue > 1e-6 * max(1.0, np.abs(X.real).max(initial=0.0)):
        warnings.warn(
            f"reconstruction has imaginary residue {residue:.3g}",
            ImaginaryResidueWarning,
            stacklevel=2,
        )
    return X.real


def reconstruction_error(Xhat, X):
    """Relative Frobenius error ``||Xhat - X|| / ||X||`` as a fraction."""
    Xhat = np.asarray(Xhat, dtype=float)
    X = np.asarray(X, dtype=float)
    if Xhat.shape != X.shape:
        raise DimensionMismatch(f"shapes differ: {Xhat.shape} vs {X.shape}")
    ref = np.linalg.norm(X)
    if ref == 0:
        raise ZeroReference("reference snapshots have zero norm")
    return float(np.linalg.norm(Xhat - X) / ref)


def modal_coordinates(dec, G):
    """Modal coordinates ``Z = Xi G`` of lifted data G (q x m or length q)."""
    G = np.asarray(G)
    if G.shape[0] != dec.q:
        raise DimensionMismatch(f"lifted data must have {dec.q} rows, got {G.shape[0]}")
    return dec.Xi @ G


@dataclass(frozen=True)
class ModeSummary:
    index: int
    mu: complex
    lambda_c: complex
    freq_hz: float
    damping_pct: float
    zero_eigenvalue: bool = False


def mode_summary(dec):
    """Frequency and damping of every mode, from ``lambda_c = log(mu)/dt``.

    A discrete eigenvalue of (numerically) zero has no continuous counterpart;
    it is reported with ``lambda_c = -inf``, 100 % damping and the
    ``zero_eigenvalue`` flag set.
    """
    scale = max(np.abs(dec.mu).max(initial=0.0), 1.0)
    out = []
    for j, mu in enumerate(dec.mu):
        mu = complex(mu)
        if abs(mu) <= ZERO_EIGENVALUE_TOL * scale:
            out.append(ModeSummary(j, mu, complex(-math.inf, 0.0), 0.0, 100.0, True))
            continue
        lam = np.log(mu) / dec.dt
        assert abs(lam.imag) <= math.pi / dec.dt * (1 + 1e-12)
        mag = abs(lam)
        damping = 100.0 if mag == 0 else -lam.real / mag * 100.0
        out.append(ModeSummary(j, mu, complex(lam), abs(lam.imag) / (2 * math.pi), damping))
    return out
