"""
Numerical surrogates for Mosco convergence and second-order structure.

- :func:`mosco_distance` evaluates the truncated graph metric
  ``d_G(df, dg) = sum_k 2^-k min(1, ||J f theta_k - J g theta_k||)`` on a
  finite :class:`DenseFamily`;
- :func:`resolvent_convergence_probe` tabulates resolvent distances along a
  sequence of functionals;
- :func:`conjugate_eval` computes the Young-Fenchel conjugate on a ball;
- :func:`second_difference_quotient`, :func:`estimate_generalized_hessian` and
  :func:`hessian_duality_check` probe generalised second derivatives.
"""

from dataclasses import dataclass

import numpy as np

from .convex import MIDPOINT, Quadratic
from .exceptions import (
    ConjugateBoundaryError,
    DimensionMismatchError,
    InstabilityError,
    InvariantError,
    NotASubgradientError,
)
from .hilbert import SymOp, solve_op
from .sets import Ball

DEFAULT_FAMILY_SIZE = 32
DEFAULT_SEARCH_RADIUS = 1e3


@dataclass(frozen=True, eq=False)
class DenseFamily:
    """Finite ordered stand-in for a dense subset, with resolvent parameter ``lam0``."""

    points: np.ndarray
    lam0: float = 1.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvariantError("family needs a non-empty (K, dim) array of points")
        if not np.all(np.isfinite(pts)):
            raise InvariantError("family points must be finite")
        if not self.lam0 > 0:
            raise InvariantError("lam0 must be positive")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise InvariantError("family points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def K(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def tail_bound(self):
        """Upper bound ``2^-K`` on the discarded terms of the metric."""
        return 2.0 ** -self.K


def default_family(dim, K=DEFAULT_FAMILY_SIZE, lam0=1.0, seed=0):
    """Up to 16 basis vectors followed by seeded random unit vectors, ``K`` in total."""
    nb = min(dim, 16, K)
    pts = [np.eye(dim)[k] for k in range(nb)]
    rng = np.random.default_rng(seed)
    while len(pts) < K:
        v = rng.standard_normal(dim)
        pts.append(v / np.linalg.norm(v))
    return DenseFamily(np.array(pts), lam0)


def basis_family(dim, K, lam0=1.0):
    if K > dim:
        raise InvariantError("basis family cannot exceed the dimension")
    return DenseFamily(np.eye(dim)[:K], lam0)


@dataclass(frozen=True)
class GraphDistance:
    value: float
    tail_bound: float
    terms: tuple

    def __float__(self):
        return self.value


def mosco_distance(f, g, fam):
    """Truncated graph distance between the subdifferentials of ``f`` and ``g``.

    Returns a :class:`GraphDistance` carrying the value, the tail bound
    ``2^-K`` and the individual capped resolvent gaps.
    """
    if not f.dim == g.dim == fam.dim:
        raise DimensionMismatchError("functionals and family must share dim")
    terms = []
    total = 0.0
    for k, theta in enumerate(fam.points, start=1):
        if f is g:
            gap = 0.0
        else:
            gap = float(np.linalg.norm(f.prox(fam.lam0, theta) - g.prox(fam.lam0, theta)))
        terms.append(min(1.0, gap))
        total += 2.0 ** -k * terms[-1]
    return GraphDistance(total, fam.tail_bound, tuple(terms))


def resolvent_convergence_probe(seq, limit, probes, lam=1.0):
    """Table ``D[n, j] = ||J_lam f_n probe_j - J_lam f probe_j||``."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    for f in seq:
        if f.dim != limit.dim:
            raise DimensionMismatchError("sequence and limit dims differ")
    if probes.shape[1] != limit.dim:
        raise DimensionMismatchError("probes have the wrong dim")
    target = [limit.prox(lam, p) for p in probes]
    out = np.empty((len(seq), probes.shape[0]))
    for i, f in enumerate(seq):
        for j, p in enumerate(probes):
            out[i, j] = np.linalg.norm(f.prox(lam, p) - target[j])
    return out


def projection_family(dim):
    """``f_n(theta) = <pi_n theta, theta>`` for ``n = 1..dim`` and its limit ``<theta, theta>``.

    The family converges pointwise but not uniformly on the unit ball in the
    infinite-dimensional space, yet its resolvents converge.
    """
    seq = [Quadratic(SymOp.projection(n, dim).scaled(2.0)) for n in range(1, dim + 1)]
    return seq, Quadratic(SymOp.identity(dim).scaled(2.0))


def conjugate_eval(f, eta, search_radius=DEFAULT_SEARCH_RADIUS, tol=1e-10, return_maximizer=False):
    """Young-Fenchel conjugate ``sup_theta <eta, theta> - f(theta)`` over a ball.

    Raises :class:`ConjugateBoundaryError` when the maximiser sits on the
    sphere of radius ``search_radius``: the true supremum may then be larger
    or infinite.
    """
    from .estimation import minimize_convex

    eta = np.asarray(eta, dtype=float)
    if eta.shape != (f.dim,):
        raise DimensionMismatchError("eta has the wrong dim")
    box = Ball(search_radius, np.zeros(f.dim))
    res = minimize_convex(f, constraint=box, tilt=eta, tol=tol)
    theta = res.theta
    value = float(eta @ theta) - f.eval(theta)
    if np.linalg.norm(theta) >= search_radius * (1.0 - 1e-6):
        raise ConjugateBoundaryError(
            f"conjugate maximiser on the search boundary (radius {search_radius:g}); sup may be unattained",
            value=value, maximizer=theta,
        )
    if return_maximizer:
        return value, theta
    return value


def _check_subgradient(f, theta, eta, probes, seed):
    f0 = f.eval(theta)
    rng = np.random.default_rng(seed)
    slack = 1e-10 * max(1.0, abs(f0))
    for scale in np.geomspace(1e-3, 10.0, probes // 4 or 1):
        for _ in range(4):
            zeta = theta + scale * rng.standard_normal(f.dim)
            fz = f.eval(zeta)
            if np.isfinite(fz) and fz < f0 + float(eta @ (zeta - theta)) - slack:
                raise NotASubgradientError(
                    f"eta violates the subgradient inequality by {f0 + float(eta @ (zeta - theta)) - fz:.3e}"
                )


def second_difference_quotient(f, theta, eta, t, h, check=True, probes=32, seed=0):
    """``(f(theta + t h) - f(theta) - t <eta, h>) / t^2``.

    ``eta`` is first checked against the subgradient inequality on seeded
    random probes. Returns ``inf`` when ``theta + t h`` leaves the domain.
    """
    theta = np.asarray(theta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    h = np.asarray(h, dtype=float)
    if not t > 0:
        raise InvariantError("t must be positive")
    if check:
        _check_subgradient(f, theta, eta, probes, seed)
    ft = f.eval(theta + t * h)
    if not np.isfinite(ft):
        return np.inf
    return (ft - f.eval(theta) - t * float(eta @ h)) / (t * t)


def default_steps():
    return 2.0 ** -np.arange(3, 11)


@dataclass(frozen=True, eq=False)
class HessianEstimate:
    """Symmetrised generalised Hessian with diagnostics.

    ``raw`` is the unsymmetrised Jacobian estimate, ``asymmetry`` the relative
    size of its skew part and ``clipped`` the magnitude of negative eigenvalues
    removed to keep ``op`` positive semidefinite.
    """

    op: SymOp
    raw: np.ndarray
    asymmetry: float
    clipped: float
    quotients: np.ndarray


def _richardson(q):
    """Two-level extrapolation of forward quotients on halving steps."""
    r1 = 2.0 * q[1:] - q[:-1]
    return (4.0 * r1[-1] - r1[-2]) / 3.0


def estimate_generalized_hessian(F, theta_hat, steps=None, directions=None, stability_rtol=1e-9):
    """Jacobian of a subgradient oracle ``F`` at ``theta_hat`` by extrapolated quotients.

    Parameters
    ----------
    F : callable
        Maps a point to a (selected) subgradient.
    steps : array_like, optional
        Strictly decreasing halving steps; ``2^-n, n = 3..10`` by default.
    directions : array_like, optional
        Rows spanning the space; the basis by default.

    Raises
    ------
    InstabilityError
        If successive quotient differences grow along the schedule.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    d = theta_hat.shape[0]
    steps = default_steps() if steps is None else np.asarray(steps, dtype=float)
    if steps.size < 3 or np.any(np.diff(steps) >= 0) or np.any(steps <= 0):
        raise InvariantError("need at least three strictly decreasing positive steps")
    if not np.allclose(steps[:-1] / steps[1:], 2.0):
        raise InvariantError("extrapolation assumes halving steps")
    H = np.eye(d) if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    if H.shape[1] != d or np.linalg.matrix_rank(H) < d:
        raise InvariantError("directions must span the space")
    F0 = np.asarray(F(theta_hat), dtype=float)
    Q = np.empty((H.shape[0], steps.size, d))
    G = np.empty((H.shape[0], d))
    for i, h in enumerate(H):
        for j, k in enumerate(steps):
            Q[i, j] = (np.asarray(F(theta_hat + k * h), dtype=float) - F0) / k
        G[i] = _richardson(Q[i])
    # G[i] = D h_i, so D^T = lstsq(H, G)
    Dt, *_ = np.linalg.lstsq(H, G, rcond=None)
    D = Dt.T
    scale = max(1.0, np.linalg.norm(D, 2))
    diffs = np.linalg.norm(np.diff(Q, axis=1), axis=2)
    if np.any(diffs[:, 1:] > diffs[:, :-1] + stability_rtol * scale):
        raise InstabilityError(
            "difference quotients do not settle along the step schedule; "
            "use a larger sample or a smoother subgradient oracle"
        )
    S = 0.5 * (D + D.T)
    asym = float(np.linalg.norm(D - D.T, 2) / (2.0 * scale))
    w, U = np.linalg.eigh(S)
    clipped = float(max(0.0, -w.min()))
    S = (U * np.maximum(w, 0.0)) @ U.T
    return HessianEstimate(SymOp(0.5 * (S + S.T)), D, asym, clipped, Q)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Purely quadratic form ``q(h) = 1/2 <V h, h>``."""

    op: SymOp

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return 0.5 * float(h @ (self.op.entries @ h))

    def functional(self):
        return Quadratic(self.op)


@dataclass(frozen=True, eq=False)
class DualityReport:
    conjugate_hessian: np.ndarray
    inverse: np.ndarray
    relative_error: float
    eta: np.ndarray


def hessian_duality_check(V, f, theta, radius=DEFAULT_SEARCH_RADIUS, step=1e-2):
    """Compare the Hessian of ``f*`` at ``eta = grad f(theta)`` with ``V^-1``.

    The conjugate Hessian is taken from central second differences of
    :func:`conjugate_eval`; the error is relative in operator norm.
    """
    d = V.dim
    inverse = solve_op(V, np.eye(d))
    theta = np.asarray(theta, dtype=float)
    eta, _ = f.subgradient(theta, MIDPOINT)
    E = np.eye(d) * step

    def fs(v):
        return conjugate_eval(f, v, radius)

    c0 = fs(eta)
    Hs = np.empty((d, d))
    for i in range(d):
        Hs[i, i] = (fs(eta + E[i]) - 2.0 * c0 + fs(eta - E[i])) / step**2
        for j in range(i + 1, d):
            val = (fs(eta + E[i] + E[j]) - fs(eta + E[i] - E[j]) - fs(eta - E[i] + E[j])
                   + fs(eta - E[i] - E[j])) / (4.0 * step**2)
            Hs[i, j] = Hs[j, i] = val
    err = float(np.linalg.norm(Hs - inverse, 2) / np.linalg.norm(inverse, 2))
    return DualityReport(Hs, inverse, err, eta)
