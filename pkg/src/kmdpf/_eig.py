"""Eigenvector conventions shared by the linear and Koopman decompositions."""
import numpy as np

from .errors import DegenerateSpectrum

# relative tolerance for "largest component" ties and ordering ties
_TIE_RTOL = 1e-9


def normalize_columns(U):
    """Scale each column to unit norm and rotate its largest entry real positive."""
    U = np.array(U, dtype=complex)
    U /= np.linalg.norm(U, axis=0)
    for j in range(U.shape[1]):
        mags = np.abs(U[:, j])
        k = int(np.argmax(mags >= mags.max() * (1.0 - _TIE_RTOL)))
        U[:, j] *= np.conj(U[k, j]) / mags[k]
        U[k, j] = mags[k]
    return U


def check_distinct(eigenvalues, scale, exempt_zero=False):
    """Raise DegenerateSpectrum if two eigenvalues agree within 1e-9*scale.

    With ``exempt_zero`` the cluster of eigenvalues below the same threshold is
    ignored; those come from the null space of a rank-deficient operator.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    tol = 1e-9 * scale
    if exempt_zero:
        lam = lam[np.abs(lam) > tol]
    if lam.size < 2:
        return
    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
    if gaps[i, j] <= tol:
        raise DegenerateSpectrum(
            f"eigenvalues {lam[i]:.6g} and {lam[j]:.6g} coincide within {tol:.3g}"
        )


def tie_round(values, scale):
    """Quantize so that lexsort treats near-equal keys as ties."""
    scale = max(float(scale), np.finfo(float).tiny)
    return np.round(np.asarray(values, dtype=float) / (scale * _TIE_RTOL)) * _TIE_RTOL
