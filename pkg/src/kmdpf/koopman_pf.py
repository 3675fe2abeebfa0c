"""Data-driven participation factors from a Koopman decomposition.

Mode-in-state factors come in two forms: the simplified product of left
eigenvector and Koopman-mode entries, and the general form that adds the
cross terms ``E[gamma_r(x0) / gamma_i(x0)]`` estimated by Monte Carlo over a
distribution of initial states. State-in-mode factors are the squared real
parts of the left eigenvectors, normalised per mode.

Index conventions
-----------------
``convention="elementwise"`` multiplies ``Xi[i, j] * Phi[i, j]`` with mode
rows of ``Xi`` matched to observables through
:func:`kmdpf.edmd.observable_association` (so the result does not depend on
how modes are listed). This reproduces the
hand-worked canonical example. ``convention="classic"`` uses component i of
left eigenvector j instead, ``Xi[j, i] * Phi[i, j]``, which is the classic
Perez-Arriaga product and follows directly from averaging
``phi_j(x0) Phi[i, j] / gamma_i(x0)``.
"""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .edmd import observable_association
from .errors import (
    DimensionMismatch,
    InvalidDistribution,
    NonConvergentWarning,
    ZeroRow,
)
from .lin_modal import _squared_real_rows
from .observables import lift

__all__ = [
    "InitialDistribution",
    "ExpectationEstimate",
    "ExpectationTerms",
    "KoopmanContribution",
    "ParticipationResult",
    "koopman_contribution_factors",
    "mode_in_state_simplified",
    "mode_in_state_general",
    "expectation_ratio",
    "expectation_terms",
    "state_in_mode_pf",
    "normalize_rows",
    "participation_factors",
]

CONVENTIONS = ("elementwise", "classic")
# full sign-flip orbits are used up to this state dimension
MAX_ORBIT_DIM = 12
_CHUNK_POINTS = 1 << 16


@dataclass(frozen=True)
class InitialDistribution:
    """Distribution of initial states used to average the cross terms.

    ``kind`` is ``"box"`` (independent uniform components on ``[lo, hi]``) or
    ``"sphere"`` (uniform on the sphere of ``radius`` in R^n).
    """

    kind: str
    seed: int
    samples: int = 100_000
    lo: tuple = None
    hi: tuple = None
    radius: float = None
    n: int = None

    def __post_init__(self):
        if self.seed is None:
            raise InvalidDistribution("a seed is mandatory")
        if int(self.samples) < 1000:
            raise InvalidDistribution(f"samples must be >= 1000, got {self.samples}")
        if self.kind == "box":
            lo = np.asarray(self.lo, dtype=float).ravel()
            hi = np.asarray(self.hi, dtype=float).ravel()
            if lo.shape != hi.shape or lo.size == 0:
                raise InvalidDistribution("box bounds must be non-empty and of equal length")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
                raise InvalidDistribution("box bounds must be finite with lo < hi")
            object.__setattr__(self, "lo", tuple(lo))
            object.__setattr__(self, "hi", tuple(hi))
            object.__setattr__(self, "n", lo.size)
        elif self.kind == "sphere":
            if self.radius is None or not self.radius > 0 or not math.isfinite(self.radius):
                raise InvalidDistribution("sphere radius must be positive and finite")
            if self.n is None or int(self.n) < 1:
                raise InvalidDistribution("sphere dimension n must be given")
        else:
            raise InvalidDistribution(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def box(cls, lo, hi, seed, samples=100_000):
        return cls("box", seed, samples, lo=lo, hi=hi)

    @classmethod
    def symmetric_box(cls, n, half_width=1.0, seed=0, samples=100_000):
        h = np.broadcast_to(np.asarray(half_width, dtype=float), (n,))
        return cls.box(-h, h, seed, samples)

    @classmethod
    def sphere(cls, n, radius=1.0, seed=0, samples=100_000):
        return cls("sphere", seed, samples, radius=float(radius), n=int(n))

    @property
    def center(self):
        if self.kind == "box":
            # lo + hi is exactly 0 for a symmetric box, so reflections are exact negations
            return np.add(self.lo, self.hi) / 2.0
        return np.zeros(self.n)

    def draw(self, count, rng):
        if self.kind == "box":
            lo, hi = np.array(self.lo), np.array(self.hi)
            return lo[:, None] + (hi - lo)[:, None] * rng.random((self.n, count))
        g = rng.standard_normal((self.n, count))
        return self.radius * g / np.linalg.norm(g, axis=0)

    def reflect(self, X, axes):
        """Mirror the given coordinates about the distribution centre."""
        X = X.copy()
        if self.kind == "box":
            s = np.add(self.lo, self.hi)
            X[axes] = s[axes, None] - X[axes]
        else:
            X[axes] = -X[axes]
        return X

    def to_json(self):
        d = {"kind": self.kind, "seed": int(self.seed), "samples": int(self.samples)}
        if self.kind == "box":
            d.update(lo=list(self.lo), hi=list(self.hi))
        else:
            d.update(radius=self.radius, n=int(self.n))
        return d

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        return cls(**doc)


@dataclass(frozen=True)
class ExpectationEstimate:
    value: float
    stderr: float
    nonconvergent: bool = False


@dataclass(frozen=True)
class ExpectationTerms:
    """``value[r, i]`` estimates ``E[gamma_r / gamma_{state i}]`` (q x n)."""

    value: np.ndarray
    stderr: np.ndarray
    nonconvergent: np.ndarray
    identity_indices: np.ndarray

    @property
    def any_nonconvergent(self):
        return bool(self.nonconvergent.any())


@dataclass(frozen=True)
class KoopmanContribution:
    """``c[i, j] = phi_j(x0) * Phi[i, j]``; real parts of each row sum to x0[i]."""

    c: np.ndarray
    x0: np.ndarray


@dataclass(frozen=True)
class ParticipationResult:
    P: np.ndarray
    P_normalized: np.ndarray
    Pi: np.ndarray = None
    method: str = "simplified"
    convention: str = "elementwise"
    expectation_terms: ExpectationTerms = None

    @property
    def P_abs(self):
        return np.abs(self.P)


def koopman_contribution_factors(dec, x0):
    from .edmd import evaluate_eigenfunctions

    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != dec.n:
        raise DimensionMismatch(f"x0 has {x0.size} entries, expected {dec.n}")
    phi0 = evaluate_eigenfunctions(dec, x0)
    return KoopmanContribution(dec.Phi * phi0[None, :], x0)


def _aligned_xi(dec):
    """``Xi`` re-indexed as ``[observable r, mode m]`` for the elementwise convention."""
    obs_of_mode = observable_association(dec.XiInv)
    mode_of_obs = np.argsort(obs_of_mode)
    return dec.Xi[np.ix_(mode_of_obs, obs_of_mode)]


def _coefficients(dec, convention):
    """Matrix ``W[r, m]`` such that ``P[i, m] = Phi[i, m] * sum_r W[r, m] E[r, i]``."""
    if convention == "elementwise":
        return _aligned_xi(dec)
    if convention == "classic":
        return dec.Xi.T
    raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")


def _simplified(dec, W):
    return dec.Phi * W[dec.identity_indices, :]


def mode_in_state_simplified(dec, convention="elementwise"):
    """Mode-in-state factors without cross terms (n x q, complex).

    Magnitudes are in ``result.P_abs``; they are not confined to [0, 1].
    """
    P = _simplified(dec, _coefficients(dec, convention))
    return ParticipationResult(P, normalize_rows(P), None, "simplified", convention)


def mode_in_state_general(dec, dist, convention="elementwise"):
    """Mode-in-state factors including the Monte Carlo cross terms."""
    if dec.dictionary is None:
        raise ValueError("general participation factors need the observable dictionary")
    W = _coefficients(dec, convention)
    terms = expectation_terms(dist, dec.dictionary)
    E = terms.value.copy()
    E[terms.identity_indices, np.arange(dec.n)] = 0.0
    P = _simplified(dec, W) + dec.Phi * (W.T @ E).T
    return ParticipationResult(P, normalize_rows(P), None, "general", convention, terms)


def state_in_mode_pf(dec):
    """``Pi[i, j] = Re(Xi[j, i])**2 / sum_r Re(Xi[j, r])**2`` (q x q)."""
    return _squared_real_rows(dec.Xi)


def participation_factors(dec, method="simplified", dist=None, convention="elementwise"):
    """Mode-in-state and state-in-mode factors in one result."""
    if method == "simplified":
        res = mode_in_state_simplified(dec, convention)
    elif method == "general":
        if dist is None:
            raise InvalidDistribution("the general method needs an initial-state distribution")
        res = mode_in_state_general(dec, dist, convention)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ParticipationResult(
        res.P, res.P_normalized, state_in_mode_pf(dec), res.method, res.convention,
        res.expectation_terms,
    )


def normalize_rows(P):
    """Scale the rows of ``|P|`` to sum to one."""
    A = np.abs(np.asarray(P))
    if A.ndim == 1:
        A = A[None, :]
    sums = A.sum(axis=1)
    if np.any(sums == 0):
        raise ZeroRow(f"rows {np.flatnonzero(sums == 0).tolist()} are all zero")
    return A / sums[:, None]


# -- Monte Carlo cross terms --------------------------------------------------

def _orbit_points(dist, X):
    """Append the sign-flip orbit of each draw: ``(n, b) -> (n, b, 2, ..., 2)``."""
    n, b = X.shape
    if n <= MAX_ORBIT_DIM:
        pts = X.reshape((n, b) + (1,) * n)
        for k in range(n):
            pts = np.concatenate([pts, _reflect_axis(dist, pts, k)], axis=2 + k)
        return pts
    mirrored = dist.reflect(X, np.arange(n))
    return np.stack([X, mirrored], axis=2)


def _reflect_axis(dist, pts, k):
    out = pts.copy()
    if dist.kind == "box":
        out[k] = (dist.lo[k] + dist.hi[k]) - out[k]
    else:
        out[k] = -out[k]
    return out


def _orbit_means(vals, n_orbit_axes):
    # pairwise reduction keeps exact sign symmetry: (-a) + (-b) == -(a + b)
    for _ in range(n_orbit_axes):
        vals = vals[..., 0] + vals[..., 1]
    return vals / float(2 ** n_orbit_axes)


def _ratio_samples(dist, dictionary, pairs):
    """Orbit-averaged samples of ``gamma_r / gamma_i`` for each (r, i) pair."""
    n = dictionary.n
    if dist.n != n:
        raise DimensionMismatch(f"distribution has dimension {dist.n}, dictionary {n}")
    full = n <= MAX_ORBIT_DIM
    if not full:
        warnings.warn(
            f"state dimension {n} > {MAX_ORBIT_DIM}: antithetic pairing uses x0 and its "
            "mirror image only, so odd cross terms cancel only approximately",
            NonConvergentWarning,
            stacklevel=3,
        )
    orbit = 2 ** n if full else 2
    n_axes = n if full else 1
    draws = max(64, -(-int(dist.samples) // orbit))
    per_chunk = max(1, _CHUNK_POINTS // orbit)
    n_chunks = -(-draws // per_chunk)
    seeds = np.random.SeedSequence(int(dist.seed)).spawn(n_chunks)
    out = []
    for c in range(n_chunks):
        count = min(per_chunk, draws - c * per_chunk)
        rng = np.random.default_rng(seeds[c])
        pts = _orbit_points(dist, dist.draw(count, rng))
        shape = pts.shape[1:]
        G = lift(dictionary, pts.reshape(n, -1)).reshape((dictionary.q,) + shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            chunk = np.stack([_orbit_means(G[r] / G[i], n_axes) for r, i in pairs])
        out.append(chunk)
    return np.concatenate(out, axis=1)


def _summarize(a):
    """Mean, standard error and a heavy-tail flag for i.i.d. orbit means."""
    m = a.size
    if not np.all(np.isfinite(a)):
        return ExpectationEstimate(float(np.mean(a)), math.inf, True)
    mean = float(np.mean(a))
    se = float(np.std(a, ddof=1) / math.sqrt(m))
    flagged = False
    sq = a - mean
    sq = sq * sq
    total = sq.sum()
    if total > 0:
        # the error bar should halve from m/4 to m samples; a few dominating
        # draws mean the variance (and maybe the mean) does not exist
        quarter = a[: m // 4]
        se_q = float(np.std(quarter, ddof=1) / math.sqrt(quarter.size))
        flagged = se > 0.75 * se_q or sq.max() > 0.25 * total
    return ExpectationEstimate(mean, se, bool(flagged))


def expectation_ratio(dist, dictionary, r, i):
    """Monte Carlo estimate of ``E[gamma_r(x0) / gamma_i(x0)]``.

    Every draw is averaged over its orbit under reflection of each coordinate
    about the distribution centre. For distributions symmetric about the
    origin this makes any integrand that is odd in some state component
    cancel exactly. ``r`` and ``i`` are 0-based observable indices.
    """
    if r == i:
        raise ValueError("r and i must differ")
    for k in (r, i):
        if not 0 <= k < dictionary.q:
            raise IndexError(f"observable index {k} outside 0..{dictionary.q - 1}")
    est = _summarize(_ratio_samples(dist, dictionary, [(r, i)])[0])
    if est.nonconvergent:
        warnings.warn(
            f"E[{dictionary.names[r]}/{dictionary.names[i]}] does not appear to converge",
            NonConvergentWarning,
            stacklevel=2,
        )
    return est


def expectation_terms(dist, dictionary):
    """All cross expectations ``E[gamma_r / x_i]`` needed by the general form."""
    q, n = dictionary.q, dictionary.n
    ids = dictionary.identity_indices
    pairs = [(r, ids[i]) for i in range(n) for r in range(q) if r != ids[i]]
    samples = _ratio_samples(dist, dictionary, pairs)
    value = np.zeros((q, n))
    stderr = np.zeros((q, n))
    flags = np.zeros((q, n), dtype=bool)
    value[ids, np.arange(n)] = 1.0
    for (r, idx), a in zip(pairs, samples):
        i = int(np.flatnonzero(ids == idx)[0])
        est = _summarize(a)
        value[r, i], stderr[r, i], flags[r, i] = est.value, est.stderr, est.nonconvergent
    if flags.any():
        bad = [f"{dictionary.names[r]}/{dictionary.state_names[i]}" for r, i in zip(*np.nonzero(flags))]
        warnings.warn(f"non-convergent cross expectations: {bad}", NonConvergentWarning, stacklevel=2)
    return ExpectationTerms(value, stderr, flags, ids)
