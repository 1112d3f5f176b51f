"""
Finite truncation of a real separable Hilbert space.

Elements are represented by their coefficient vectors in a fixed orthonormal
basis (plain 1-D float arrays, see :func:`hvec`); bounded symmetric operators
by :class:`SymOp`; Gaussian measures by :class:`GaussianMeasure`.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError, InvariantError, SingularOperatorError

SYM_RTOL = 1e-12
PSD_ATOL = 1e-10
EIG_CLIP = 1e-12
SINGULAR_RTOL = 1e-8


def hvec(coeffs):
    """Validate ``coeffs`` as an element of the truncated space.

    Returns a read-only float copy. Raises :class:`InvariantError` for empty,
    non-1-D or non-finite input.
    """
    v = np.array(coeffs, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise InvariantError(f"expected a non-empty 1-D coefficient vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvariantError("coefficients must be finite")
    v.setflags(write=False)
    return v


def basis(k, dim):
    """The ``k``-th orthonormal basis vector (0-based) of the ``dim``-truncation."""
    e = np.zeros(dim)
    e[k] = 1.0
    return e


def _check_dims(a, b):
    if a != b:
        raise DimensionMismatchError(f"incompatible truncations: dim {a} vs dim {b}")


def inner(u, v):
    """Inner product of two coefficient vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(u.shape[-1], v.shape[-1])
    return float(u @ v)


def norm(u):
    """Euclidean norm, rescaled so tiny or huge coefficients do not under/overflow."""
    u = np.asarray(u, dtype=float)
    scale = float(np.max(np.abs(u))) if u.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    return scale * float(np.linalg.norm(u / scale))


@dataclass(frozen=True, eq=False)
class SymOp:
    """Symmetric positive semidefinite operator on the truncated space.

    Parameters
    ----------
    entries : array_like
        Dense ``dim x dim`` matrix in the truncation basis. It is checked for
        symmetry (relative tolerance ``1e-12``) and positive semidefiniteness
        (smallest eigenvalue ``>= -1e-10``), then stored exactly symmetrised.
    """

    entries: np.ndarray
    _eig: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise InvariantError(f"operator must be a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvariantError("operator entries must be finite")
        gap = np.abs(m - m.T)
        if np.any(gap > SYM_RTOL * np.maximum(1.0, np.abs(m))):
            raise InvariantError(f"operator is not symmetric (max asymmetry {gap.max():.3e})")
        m = 0.5 * (m + m.T)
        w, u = np.linalg.eigh(m)
        if w[0] < -PSD_ATOL:
            raise InvariantError(f"operator is not positive semidefinite (min eigenvalue {w[0]:.3e})")
        m.setflags(write=False)
        w.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "_eig", (w, u))

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def eigenvalues(self):
        return self._eig[0]

    @property
    def trace(self):
        return float(np.trace(self.entries))

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros((dim, dim)))

    @classmethod
    def diag(cls, values):
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def projection(cls, n, dim):
        """Coordinate projection onto the span of the first ``n`` basis vectors."""
        d = np.zeros(dim)
        d[: max(0, min(n, dim))] = 1.0
        return cls(np.diag(d))

    def scaled(self, c):
        return SymOp(c * self.entries)

    def sqrt(self):
        """Symmetric square root, eigenvalues below ``1e-12`` clipped to 0."""
        w, u = self._eig
        s = np.sqrt(np.where(w < EIG_CLIP, 0.0, w))
        return (u * s) @ u.T

    def inv_sqrt(self):
        """Inverse symmetric square root; raises for singular operators."""
        w, u = self._eig
        _guard_singular(w, 0.0)
        return (u / np.sqrt(w)) @ u.T

    def __matmul__(self, v):
        return apply_op(self, v)

    def __repr__(self):
        return f"SymOp(dim={self.dim})"


def apply_op(T, v):
    """Action ``T v`` of a symmetric operator."""
    v = np.asarray(v, dtype=float)
    _check_dims(T.dim, v.shape[-1])
    return T.entries @ v


def _guard_singular(w, ridge):
    shifted = w + ridge
    lo = float(shifted[0])
    if lo <= SINGULAR_RTOL * max(1.0, float(abs(shifted[-1]))):
        raise SingularOperatorError(
            f"operator is singular to tolerance: smallest eigenvalue {lo:.3e}", min_eigenvalue=lo
        )


def solve_op(T, b, ridge=0.0):
    """Solve ``(T + ridge I) z = b``.

    Raises
    ------
    SingularOperatorError
        If the smallest eigenvalue of ``T + ridge I`` is below ``1e-8`` times
        ``max(1, largest eigenvalue)``.
    """
    if ridge < 0:
        raise InvariantError("ridge must be nonnegative")
    b = np.asarray(b, dtype=float)
    _check_dims(T.dim, b.shape[0])
    w, u = T._eig
    _guard_singular(w, ridge)
    z = np.linalg.solve(T.entries + ridge * np.eye(T.dim), b)
    return z


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Centred (or shifted) Gaussian measure ``N(mean, covariance)``."""

    covariance: SymOp
    mean: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            object.__setattr__(self, "mean", hvec(np.zeros(self.covariance.dim)))
        else:
            object.__setattr__(self, "mean", hvec(self.mean))
        _check_dims(self.covariance.dim, self.mean.shape[0])

    @property
    def dim(self):
        return self.covariance.dim


def covariance_factor(cov):
    """Symmetric factor ``L`` with ``L L^T = cov`` (spectral, clipped)."""
    return cov.sqrt()


def sample_gaussian(measure, n, seed):
    """Draw ``n`` vectors from ``measure``; returns an ``(n, dim)`` array.

    The generator is created from ``seed`` alone, so equal seeds give
    bitwise-identical draws.
    """
    if n < 1:
        raise InvariantError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, measure.dim))
    return measure.mean + z @ covariance_factor(measure.covariance).T
