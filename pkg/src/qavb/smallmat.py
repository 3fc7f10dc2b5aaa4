"""Dense symmetric linear algebra for small K x K matrices.

Everything here works on plain ``numpy`` arrays.  Functions accept either a
single matrix of shape ``(K, K)`` or a stack of shape ``(..., K, K)`` so the
E-step can push all data points through one LAPACK call.
"""

from typing import NamedTuple

import numpy as np

TRACE_TOL = 1e-10
PSD_TOL = 1e-12
# eigenvalues below this are rejected outright by the entropy
NEG_EIG_REJECT = 1e-8


class InvalidInputError(ValueError):
    """Raised for non-finite, non-square or non-symmetric matrices."""


class InvalidDensityError(ValueError):
    """Raised when a matrix is not a valid density (PSD, trace one)."""


class EigenPair(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def as_symmetric(m, min_dim: int = 2) -> np.ndarray:
    """Validate ``m`` as a (stack of) real symmetric matrices and return it.

    Symmetry is required to hold exactly; callers building matrices from
    floating-point expressions should symmetrize first.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"expected square matrix, got shape {a.shape}")
    if a.shape[-1] < min_dim:
        raise InvalidInputError(f"dimension must be >= {min_dim}, got {a.shape[-1]}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    if not np.array_equal(a, np.swapaxes(a, -1, -2)):
        raise InvalidInputError("matrix is not symmetric")
    return a


def sym_eig(m) -> EigenPair:
    """Full spectral decomposition, eigenvalues ascending."""
    a = as_symmetric(m, min_dim=1)
    values, vectors = np.linalg.eigh(a)
    return EigenPair(values, vectors)


def _exp_density_from_eig(values, vectors):
    shifted = np.exp(values - values[..., -1:])
    p = shifted / shifted.sum(axis=-1, keepdims=True)
    rho = np.einsum("...ij,...j,...kj->...ik", vectors, p, vectors)
    return 0.5 * (rho + np.swapaxes(rho, -1, -2))


def stable_exp_density(a) -> np.ndarray:
    """Return ``exp(A) / Tr exp(A)`` for symmetric ``A``.

    The largest eigenvalue is subtracted before exponentiating, so the
    result is finite for any finite input.  Works on stacks ``(..., K, K)``.
    """
    a = as_symmetric(a, min_dim=1)
    values, vectors = np.linalg.eigh(a)
    return _exp_density_from_eig(values, vectors)


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def check_density(rho) -> np.ndarray:
    """Validate ``rho`` against the site-density invariants and return it."""
    rho = as_symmetric(rho, min_dim=1)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.any(np.abs(tr - 1.0) > TRACE_TOL):
        raise InvalidDensityError(f"trace deviates from 1: {tr}")
    if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
        raise InvalidDensityError("density is not positive semidefinite")
    return rho


def von_neumann_entropy(rho) -> np.ndarray | float:
    """-Tr[rho ln rho] with 0 ln 0 = 0.  Accepts a stack of densities."""
    rho = as_symmetric(rho, min_dim=1)
    lam = np.linalg.eigvalsh(rho)
    if lam.min() < -NEG_EIG_REJECT:
        raise InvalidDensityError(f"negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0.0, lam * np.log(lam), 0.0)
    s = -terms.sum(axis=-1)
    # clipping can leave -0.0 or a few ulps below zero for pure states
    s = np.maximum(s, 0.0)
    return float(s) if np.ndim(s) == 0 else s


def shannon_entropy(p, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)
