"""
Proper l.s.c. convex functionals on the truncated space.

Every functional exposes ``eval``, a set-valued ``subgradient`` resolved by a
:class:`SelectorRule`, and the resolvent ``prox(lam, theta)``, i.e. the unique
minimiser of ``f(z) + ||z - theta||^2 / (2 lam)``.

The built-in kinds are

- :class:`AbsResidual`  ``|y - <x, theta>|``
- :class:`NormPenalty`  ``(w/2) ||theta||`` or ``(w/2) ||theta||^2``
- :class:`Indicator`    ``0`` on a closed convex set, ``+inf`` outside
- :class:`Quadratic`    ``1/2 <V (theta - c), theta - c>``
- :class:`ScaledSum`    nonnegative combinations of the above
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError, DomainError, InvariantError
from .hilbert import SymOp, hvec
from .sets import ConvexSet, WholeSpace

KINK_RTOL = 1e-9


def kink_tolerance(y):
    """Residuals with ``|r| <= kink_tolerance(y)`` are treated as exact zeros."""
    return KINK_RTOL * np.maximum(1.0, np.abs(y))


@dataclass
class SelectorRule:
    """Which element of a set-valued subdifferential to return.

    ``midpoint`` returns the zero element of the selection interval or cone,
    ``lower``/``upper`` its endpoints, and ``random`` a seeded draw. A random
    rule owns its generator; do not share one instance between threads.
    """

    kind: str = "midpoint"
    seed: int = None
    _rng: np.random.Generator = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in ("midpoint", "lower", "upper", "random"):
            raise InvariantError(f"unknown selector kind {self.kind!r}")
        if self.kind == "random":
            if self.seed is None:
                raise InvariantError("random selector needs an explicit seed")
            self._rng = np.random.default_rng(self.seed)

    @classmethod
    def random(cls, seed):
        return cls("random", seed)

    def interval(self):
        """Coefficient in ``[-1, 1]``."""
        if self.kind == "midpoint":
            return 0.0
        if self.kind == "lower":
            return -1.0
        if self.kind == "upper":
            return 1.0
        return float(self._rng.uniform(-1.0, 1.0))

    def ray(self):
        """Multiplier on a normal-cone generator, in ``[0, inf)``."""
        if self.kind in ("midpoint", "lower"):
            return 0.0
        if self.kind == "upper":
            return 1.0
        return float(self._rng.exponential())

    def ball(self, dim, radius):
        """Element of the centred ball of given radius.

        ``lower``/``upper`` are the endpoints along the first basis vector.
        """
        g = np.zeros(dim)
        if self.kind == "lower":
            g[0] = -radius
        elif self.kind == "upper":
            g[0] = radius
        elif self.kind == "random":
            u = self._rng.standard_normal(dim)
            u /= np.linalg.norm(u)
            g = u * radius * self._rng.uniform() ** (1.0 / dim)
        return g


MIDPOINT = SelectorRule()


class ConvexFunctional:
    """Base class; subclasses implement ``eval``, ``subgradient``, ``prox``."""

    dim: int

    def _point(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(f"functional has dim {self.dim}, point has shape {theta.shape}")
        return theta

    def eval(self, theta):
        raise NotImplementedError

    def subgradient(self, theta, rule=MIDPOINT):
        """Return ``(g, at_kink)`` with ``g`` in the subdifferential at ``theta``."""
        raise NotImplementedError

    def prox(self, lam, theta):
        raise NotImplementedError

    def __call__(self, theta):
        return self.eval(theta)

    def _check_lam(self, lam):
        if not lam > 0:
            raise InvariantError("prox parameter must be positive")


class AbsResidual(ConvexFunctional):
    """Absolute regression residual ``|y - <x, theta>|``."""

    def __init__(self, y, x):
        self.y = float(y)
        if not np.isfinite(self.y):
            raise InvariantError("response must be finite")
        self.x = hvec(x)
        self.dim = self.x.shape[0]
        self._xx = float(self.x @ self.x)

    def residual(self, theta):
        return self.y - float(self.x @ self._point(theta))

    def eval(self, theta):
        return abs(self.residual(theta))

    def subgradient(self, theta, rule=MIDPOINT):
        r = self.residual(theta)
        if self._xx == 0.0:
            return np.zeros(self.dim), False
        if abs(r) <= kink_tolerance(self.y):
            # [-1, 1] x is symmetric, so the sign convention is immaterial here
            return rule.interval() * self.x, True
        return -np.sign(r) * self.x, False

    def prox(self, lam, theta):
        self._check_lam(lam)
        theta = self._point(theta)
        if self._xx == 0.0:
            return theta.copy()
        r = self.y - float(self.x @ theta)
        t = lam * self._xx
        shrunk = np.sign(r) * max(abs(r) - t, 0.0)
        return theta + self.x * ((r - shrunk) / self._xx)

    def __repr__(self):
        return f"AbsResidual(y={self.y}, x={self.x.tolist()})"


class NormPenalty(ConvexFunctional):
    """Roughness penalty ``(w/2) ||theta||`` (``form='norm'``) or ``(w/2) ||theta||^2``."""

    def __init__(self, weight, dim, form="norm"):
        if weight < 0 or not np.isfinite(weight):
            raise InvariantError("penalty weight must be finite and nonnegative")
        if form not in ("norm", "squared-norm"):
            raise InvariantError(f"unknown penalty form {form!r}")
        self.weight = float(weight)
        self.form = form
        self.dim = int(dim)

    def eval(self, theta):
        nrm = np.linalg.norm(self._point(theta))
        if self.form == "norm":
            return 0.5 * self.weight * nrm
        return 0.5 * self.weight * nrm * nrm

    def subgradient(self, theta, rule=MIDPOINT):
        theta = self._point(theta)
        if self.form == "squared-norm":
            return self.weight * theta, False
        nrm = np.linalg.norm(theta)
        if self.weight == 0.0:
            return np.zeros(self.dim), False
        if nrm == 0.0:
            return rule.ball(self.dim, 0.5 * self.weight), True
        return (0.5 * self.weight / nrm) * theta, False

    def prox(self, lam, theta):
        self._check_lam(lam)
        theta = self._point(theta)
        if self.form == "squared-norm":
            return theta / (1.0 + lam * self.weight)
        nrm = np.linalg.norm(theta)
        t = 0.5 * lam * self.weight
        if nrm <= t:
            return np.zeros(self.dim)
        return (1.0 - t / nrm) * theta

    def __repr__(self):
        return f"NormPenalty(weight={self.weight}, form={self.form!r}, dim={self.dim})"


class Indicator(ConvexFunctional):
    """Indicator of a closed convex set; its subdifferential is the normal cone."""

    def __init__(self, convex_set):
        if not isinstance(convex_set, ConvexSet):
            raise InvariantError("Indicator needs a ConvexSet")
        self.set = convex_set
        self.dim = convex_set.dim

    def eval(self, theta):
        return 0.0 if self.set.contains(self._point(theta)) else np.inf

    def subgradient(self, theta, rule=MIDPOINT):
        theta = self._point(theta)
        if not self.set.contains(theta):
            raise DomainError("normal cone is empty outside the set")
        if self.set.on_boundary(theta):
            return rule.ray() * self.set.outward_normal(theta), True
        return np.zeros(self.dim), False

    def prox(self, lam, theta):
        self._check_lam(lam)
        return self.set.project(self._point(theta))

    def __repr__(self):
        return f"Indicator({self.set!r})"


class Quadratic(ConvexFunctional):
    """Quadratic form ``1/2 <V (theta - center), theta - center>``."""

    def __init__(self, op, center=None):
        if not isinstance(op, SymOp):
            op = SymOp(op)
        self.op = op
        self.dim = op.dim
        self.center = hvec(np.zeros(self.dim) if center is None else center)
        if self.center.shape[0] != self.dim:
            raise DimensionMismatchError("center and operator dims differ")

    def eval(self, theta):
        d = self._point(theta) - self.center
        return 0.5 * float(d @ (self.op.entries @ d))

    def subgradient(self, theta, rule=MIDPOINT):
        return self.op.entries @ (self._point(theta) - self.center), False

    def prox(self, lam, theta):
        self._check_lam(lam)
        theta = self._point(theta)
        V = self.op.entries
        rhs = theta + lam * (V @ self.center)
        return np.linalg.solve(np.eye(self.dim) + lam * V, rhs)

    def __repr__(self):
        return f"Quadratic(op={self.op!r}, center={self.center.tolist()})"


class ScaledSum(ConvexFunctional):
    """Nonnegative combination ``sum_j c_j f_j``.

    Parameters
    ----------
    terms : sequence of (float, ConvexFunctional)
        Coefficients must be finite and nonnegative. Terms with coefficient
        zero contribute nothing, including indicators.
    """

    def __init__(self, terms):
        terms = [(float(c), f) for c, f in terms]
        if not terms:
            raise InvariantError("ScaledSum needs at least one term")
        dims = {f.dim for _, f in terms}
        if len(dims) != 1:
            raise DimensionMismatchError(f"terms have mixed dims {sorted(dims)}")
        for c, f in terms:
            if c < 0 or not np.isfinite(c):
                raise InvariantError("ScaledSum coefficients must be finite and nonnegative")
            if not isinstance(f, ConvexFunctional):
                raise InvariantError(f"not a ConvexFunctional: {f!r}")
        self.terms = tuple(terms)
        self.dim = dims.pop()
        self._flat = None

    @property
    def flat(self):
        from .splitting import flatten

        if self._flat is None:
            self._flat = flatten(self)
        return self._flat

    def eval(self, theta):
        return self.flat.value(self._point(theta))

    def subgradient(self, theta, rule=MIDPOINT):
        theta = self._point(theta)
        g = np.zeros(self.dim)
        kink = False
        for c, f in self.terms:
            if c == 0.0:
                continue
            gj, kj = f.subgradient(theta, rule)
            g = g + c * gj
            kink = kink or kj
        return g, kink

    def prox(self, lam, theta):
        from .splitting import prox_flat

        self._check_lam(lam)
        return prox_flat(self.flat, lam, self._point(theta))

    def __repr__(self):
        return f"ScaledSum({len(self.terms)} terms, dim={self.dim})"


def zero_functional(dim):
    """The zero functional, as a quadratic with a vanishing operator."""
    return Quadratic(SymOp.zeros(dim))


def empirical_objective(samples, penalty_weight=0.0, penalty_form="norm", constraint=None):
    """Empirical L1 criterion ``(1/n) sum_i |y_i - <x_i, theta>| + penalty``.

    ``constraint`` (a :class:`ConvexSet` or a sequence of them) adds indicator
    terms. Raises :class:`InvariantError` for an empty sample set.
    """
    n = len(samples)
    if n == 0:
        raise InvariantError("empirical objective needs at least one observation")
    dim = samples.dim
    terms = [(1.0 / n, AbsResidual(y, x)) for y, x in zip(samples.y, samples.X)]
    terms.append((1.0, NormPenalty(penalty_weight, dim, penalty_form)))
    for s in _as_sets(constraint, dim):
        terms.append((1.0, Indicator(s)))
    return ScaledSum(terms)


def _as_sets(constraint, dim):
    if constraint is None:
        return []
    if isinstance(constraint, ConvexSet):
        constraint = [constraint]
    out = []
    for s in constraint:
        if s.dim != dim:
            raise DimensionMismatchError(f"constraint has dim {s.dim}, data has dim {dim}")
        if not isinstance(s, WholeSpace):
            out.append(s)
    return out
