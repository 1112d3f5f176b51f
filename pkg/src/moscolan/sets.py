"""Closed convex constraint sets with metric projections."""

import numpy as np

from .exceptions import DimensionMismatchError, InvariantError
from .hilbert import hvec

CONTAIN_TOL = 1e-10


class ConvexSet:
    """Base class for closed convex subsets of the truncated space."""

    dim: int

    def contains(self, v, tol=CONTAIN_TOL):
        raise NotImplementedError

    def project(self, v):
        raise NotImplementedError

    def on_boundary(self, v, tol=CONTAIN_TOL):
        raise NotImplementedError

    def outward_normal(self, v):
        """Unit generator of the normal cone at a boundary point ``v``."""
        raise NotImplementedError

    def anchor(self):
        """A point known to lie in the set."""
        raise NotImplementedError

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise DimensionMismatchError(f"set has dim {self.dim}, point has dim {v.shape[-1]}")
        return v


class WholeSpace(ConvexSet):
    def __init__(self, dim):
        if dim < 1:
            raise InvariantError("dim must be >= 1")
        self.dim = int(dim)

    def contains(self, v, tol=CONTAIN_TOL):
        self._check(v)
        return True

    def project(self, v):
        return self._check(v).copy()

    def on_boundary(self, v, tol=CONTAIN_TOL):
        self._check(v)
        return False

    def outward_normal(self, v):
        return np.zeros(self.dim)

    def anchor(self):
        return np.zeros(self.dim)

    def __repr__(self):
        return f"WholeSpace(dim={self.dim})"


class Ball(ConvexSet):
    """Closed ball ``{v : ||v - center|| <= radius}``."""

    def __init__(self, radius, center):
        if not radius > 0:
            raise InvariantError("ball radius must be positive")
        self.radius = float(radius)
        self.center = hvec(center)
        self.dim = self.center.shape[0]

    def _slack(self, v):
        return np.linalg.norm(v - self.center) - self.radius

    def contains(self, v, tol=CONTAIN_TOL):
        v = self._check(v)
        return bool(self._slack(v) <= tol * max(1.0, self.radius))

    def project(self, v):
        v = self._check(v)
        d = v - self.center
        r = np.linalg.norm(d)
        if r <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / r)

    def on_boundary(self, v, tol=CONTAIN_TOL):
        v = self._check(v)
        return bool(abs(self._slack(v)) <= tol * max(1.0, self.radius))

    def outward_normal(self, v):
        d = self._check(v) - self.center
        return d / np.linalg.norm(d)

    def anchor(self):
        return self.center.copy()

    def __repr__(self):
        return f"Ball(radius={self.radius}, center={self.center.tolist()})"


class HalfSpace(ConvexSet):
    """Half-space ``{v : <normal, v> <= offset}``."""

    def __init__(self, normal, offset=0.0):
        self.normal = hvec(normal)
        nn = float(self.normal @ self.normal)
        if nn == 0.0:
            raise InvariantError("half-space normal must be nonzero")
        self._nn = nn
        self.offset = float(offset)
        self.dim = self.normal.shape[0]

    def _gap(self, v):
        return float(v @ self.normal) - self.offset

    def _scale(self):
        return max(1.0, abs(self.offset)) * np.sqrt(self._nn)

    def contains(self, v, tol=CONTAIN_TOL):
        v = self._check(v)
        return bool(self._gap(v) <= tol * self._scale())

    def project(self, v):
        v = self._check(v)
        gap = self._gap(v)
        if gap <= 0.0:
            return v.copy()
        return v - (gap / self._nn) * self.normal

    def on_boundary(self, v, tol=CONTAIN_TOL):
        v = self._check(v)
        return bool(abs(self._gap(v)) <= tol * self._scale())

    def outward_normal(self, v):
        return self.normal / np.sqrt(self._nn)

    def anchor(self):
        return (self.offset / self._nn) * self.normal

    def __repr__(self):
        return f"HalfSpace(normal={self.normal.tolist()}, offset={self.offset})"
