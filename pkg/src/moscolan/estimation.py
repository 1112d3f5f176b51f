"""
L1 regression model ``y = <x, theta0> + eps`` and its penalised M-estimator.

The design is ``x = D z`` with ``z ~ N(0, Sigma)`` and ``D = diag(k^-1)``
(coordinate ``k`` counted from 1), noise is symmetric with median zero and
independent of ``x``. Under these conditions the population curvature and
score covariance have closed forms::

    V = 2 f_eps(0) E[x x^T],        A = E[x x^T]
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .convex import MIDPOINT, ConvexFunctional, ScaledSum, _as_sets, empirical_objective, kink_tolerance
from .exceptions import DimensionMismatchError, InvariantError
from .hilbert import SymOp, covariance_factor, hvec, solve_op
from .samples import SampleSet
from .splitting import Problem, flatten, solve

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200_000


# -- noise laws ---------------------------------------------------------------


@dataclass(frozen=True)
class Laplace:
    scale: float = 1.0

    def law(self):
        return stats.laplace(scale=self.scale)


@dataclass(frozen=True)
class Gaussian:
    sigma: float = 1.0

    @property
    def scale(self):
        return self.sigma

    def law(self):
        return stats.norm(scale=self.sigma)


@dataclass(frozen=True)
class StudentT:
    df: float = 3.0
    scale: float = 1.0

    def law(self):
        return stats.t(self.df, scale=self.scale)


NOISE_KINDS = {"laplace": Laplace, "gaussian": Gaussian, "student_t": StudentT}


def _check_noise(noise):
    if noise.scale < 0 or not np.isfinite(noise.scale):
        raise InvariantError("noise scale must be finite and nonnegative")
    if isinstance(noise, StudentT) and not noise.df > 0:
        raise InvariantError("Student t degrees of freedom must be positive")


def noise_density_at_zero(noise):
    if noise.scale == 0:
        return np.inf
    return float(noise.law().pdf(0.0))


def noise_cdf(noise, u):
    if noise.scale == 0:
        return np.where(np.asarray(u) >= 0, 1.0, 0.0)
    return noise.law().cdf(u)


def sample_noise(noise, rng, n):
    if noise.scale == 0:
        return np.zeros(n)
    if isinstance(noise, Laplace):
        return rng.laplace(scale=noise.scale, size=n)
    if isinstance(noise, Gaussian):
        return rng.normal(scale=noise.sigma, size=n)
    return noise.scale * rng.standard_t(noise.df, size=n)


# -- model ----------------------------------------------------------------------


def harmonic_decay(dim):
    return 1.0 / np.arange(1, dim + 1)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Data-generating process for the median regression model.

    Parameters
    ----------
    theta0 : array_like
        True parameter.
    noise : Laplace, Gaussian or StudentT
        Symmetric noise law, median zero by construction.
    n : int
        Sample size.
    design : SymOp, optional
        Covariance of the undecayed design ``z``; identity by default.
    decay : array_like, optional
        Per-coordinate scale ``D``; ``1/k`` by default.
    """

    theta0: np.ndarray
    noise: object = field(default_factory=Laplace)
    n: int = 1000
    design: SymOp = None
    decay: np.ndarray = None

    def __post_init__(self):
        theta0 = hvec(self.theta0)
        object.__setattr__(self, "theta0", theta0)
        d = theta0.shape[0]
        if self.design is None:
            object.__setattr__(self, "design", SymOp.identity(d))
        elif self.design.dim != d:
            raise DimensionMismatchError("design covariance and theta0 dims differ")
        decay = harmonic_decay(d) if self.decay is None else hvec(self.decay)
        if decay.shape[0] != d:
            raise DimensionMismatchError("decay profile and theta0 dims differ")
        decay = np.array(decay)
        decay.setflags(write=False)
        object.__setattr__(self, "decay", decay)
        if int(self.n) < 1:
            raise InvariantError("n must be >= 1")
        object.__setattr__(self, "n", int(self.n))
        if not isinstance(self.noise, (Laplace, Gaussian, StudentT)):
            raise InvariantError(f"unsupported noise law {self.noise!r}")
        _check_noise(self.noise)

    @property
    def dim(self):
        return self.theta0.shape[0]

    def with_n(self, n):
        return ModelSpec(self.theta0, self.noise, n, self.design, self.decay)

    def second_moment(self):
        """``E[x x^T] = D Sigma D``."""
        D = self.decay
        return SymOp(D[:, None] * self.design.entries * D[None, :])

    def hessian(self):
        """Population curvature ``V = 2 f_eps(0) E[x x^T]``."""
        return self.second_moment().scaled(2.0 * noise_density_at_zero(self.noise))

    def score_covariance(self):
        """Covariance ``A`` of the L1 score ``-sgn(eps) x``, i.e. ``E[x x^T]``."""
        return self.second_moment()

    def sandwich(self):
        return sandwich_covariance(self.hessian(), self.score_covariance())


def simulate_dataset(spec, seed):
    """Draw ``spec.n`` observations; identical seeds give identical data."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((spec.n, spec.dim)) @ covariance_factor(spec.design).T
    X = z * spec.decay
    eps = sample_noise(spec.noise, rng, spec.n)
    return SampleSet(X @ spec.theta0 + eps, X)


def penalty_schedule(c, n):
    """Vanishing penalty ``lambda_n = c / sqrt(n)``."""
    if c < 0:
        raise InvariantError("penalty constant must be nonnegative")
    return c / np.sqrt(n)


# -- fitting --------------------------------------------------------------------


@dataclass
class FitResult:
    """Outcome of a fit.

    ``optimality_residual`` is ``dist(0, dF(theta))`` with residual kinks and
    binding constraints resolved exactly; ``converged`` implies it is at most
    the requested tolerance. ``history`` holds the objective at accepted
    iterates and is non-increasing.
    """

    theta: np.ndarray
    objective_value: float
    optimality_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _as_sum(f):
    return f if isinstance(f, ScaledSum) else ScaledSum([(1.0, f)])


def minimize_convex(f, constraint=None, tilt=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, x0=None):
    """Minimise ``f(theta) - <tilt, theta>`` over the given constraint sets.

    ``f`` must be built from the library functionals (any nesting of
    :class:`ScaledSum`).
    """
    from .convex import Indicator

    f = _as_sum(f)
    sets = _as_sets(constraint, f.dim)
    if sets:
        f = ScaledSum([(1.0, f)] + [(1.0, Indicator(s)) for s in sets])
    u = None
    if tilt is not None:
        u = np.asarray(tilt, dtype=float)
        if u.shape != (f.dim,):
            raise DimensionMismatchError("tilt has the wrong dim")
    P = Problem(flatten(f), u=u)
    res = solve(P, z0=x0, tol=tol, max_iter=max_iter)
    theta = np.array(res.theta)
    converged = bool(res.residual <= tol)
    return FitResult(theta, res.objective, res.residual, res.iterations, converged, res.history)


def fit(samples, penalty_weight=0.0, penalty_form="norm", constraint=None, tol=DEFAULT_TOL,
        max_iter=DEFAULT_MAX_ITER, x0=None):
    """Penalised L1 M-estimator, optionally constrained.

    Non-convergence is reported through ``FitResult.converged``, not raised.
    """
    if not tol > 0:
        raise InvariantError("tol must be positive")
    f = empirical_objective(samples, penalty_weight, penalty_form, constraint)
    P = Problem(f.flat)
    res = solve(P, z0=x0, tol=tol, max_iter=max_iter)
    converged = bool(res.residual <= tol)
    return FitResult(np.array(res.theta), res.objective, res.residual, res.iterations, converged, res.history)


# -- asymptotics ----------------------------------------------------------------


def sandwich_covariance(V, A):
    """``V^-1 A V^-1``; raises :class:`SingularOperatorError` for singular ``V``."""
    B = solve_op(V, A.entries)
    S = solve_op(V, B.T)
    return SymOp(0.5 * (S + S.T))


def score_clt_statistic(samples, theta0, rule=MIDPOINT):
    """Normalised score sum ``n^-1/2 sum_i g_i`` with ``g_i`` in ``d|y_i - <x_i, theta0>|``.

    Away from a kink the selected subgradient is ``-sgn(r_i) x_i``. No
    centring term is subtracted: the population score vanishes at the true
    parameter of the median model.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (samples.dim,):
        raise DimensionMismatchError("theta0 has the wrong dim")
    r = samples.residuals(theta0)
    s = -np.sign(r)
    kink = np.abs(r) <= kink_tolerance(samples.y)
    for i in np.flatnonzero(kink):
        s[i] = rule.interval()
    return (s @ samples.X) / np.sqrt(samples.n)


def _shift_profile(noise, s):
    """``(m(s), m'(s))`` for ``m(s) = E|eps - s Z|`` with ``Z ~ N(0, 1)`` independent of eps."""
    if isinstance(noise, Laplace):
        b = noise.scale
        ex = special.erfcx(s / (b * np.sqrt(2.0)))
        return s * np.sqrt(2.0 / np.pi) + b * ex, (s / b) * ex
    if isinstance(noise, Gaussian):
        r = np.hypot(noise.sigma, s)
        return np.sqrt(2.0 / np.pi) * r, np.sqrt(2.0 / np.pi) * s / r
    law = noise.law()

    def shift_abs(u):
        # E|eps - u| = E|eps| + int_0^u (2F(v) - 1) dv
        val, _ = integrate.quad(lambda v: 2.0 * law.cdf(v) - 1.0, 0.0, u, epsabs=1e-14)
        return law.expect(abs) + val

    m, _ = integrate.quad(lambda v: shift_abs(s * v) * stats.norm.pdf(v), -np.inf, np.inf, epsabs=1e-12)
    dm, _ = integrate.quad(lambda v: v * (2.0 * law.cdf(s * v) - 1.0) * stats.norm.pdf(v), -np.inf, np.inf,
                           epsabs=1e-14, epsrel=1e-12)
    return m, dm


def population_subgradient(spec, theta):
    """Exact population gradient ``E[x (2 F_eps(<x, theta - theta0>) - 1)]``.

    With Gaussian ``x``, ``E[x | u] = S delta u / s^2`` for ``u = <x, delta>``,
    so the expectation collapses to ``m'(s) S delta / s`` with
    ``s^2 = <S delta, delta>``; ``m'`` is closed-form for Laplace and
    Gaussian noise and a 1-D integral otherwise.
    """
    delta = np.asarray(theta, dtype=float) - spec.theta0
    Sd = spec.second_moment().entries @ delta
    s2 = float(delta @ Sd)
    if s2 == 0.0:
        return np.zeros(spec.dim)
    s = np.sqrt(s2)
    _, dm = _shift_profile(spec.noise, s)
    return Sd * (dm / s)


def smoothed_subgradient(samples, theta_hat, bandwidth=None):
    """Plug-in smoothed gradient of the empirical L1 criterion around ``theta_hat``.

    Replaces the noise law in the population gradient by a Gaussian-kernel
    estimate of the residual distribution at ``theta_hat``::

        F(theta) = (1/n) sum_i x_i (2 Fhat(<x_i, theta - theta_hat>) - 1)

    The default bandwidth is derived from the Hall-Sheather interval of
    residual quantiles (see :func:`default_bandwidth`).
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    r = np.sort(samples.residuals(theta_hat))
    h = default_bandwidth(r) if bandwidth is None else float(bandwidth)
    X = samples.X
    n = samples.n

    def kernel_cdf(u):
        out = np.empty_like(u)
        for lo in range(0, u.size, 512):
            chunk = u[lo:lo + 512]
            out[lo:lo + 512] = special.ndtr((chunk[:, None] - r[None, :]) / h).mean(axis=1)
        return out

    def F(theta):
        u = X @ (np.asarray(theta, dtype=float) - theta_hat)
        return X.T @ (2.0 * kernel_cdf(u) - 1.0) / n

    F.bandwidth = h
    return F


def hall_sheather(n, alpha=0.05):
    """Hall-Sheather bandwidth (in probability units) for the median."""
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    return n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (1.5 * stats.norm.pdf(0.0) ** 2) ** (1.0 / 3.0)


def default_bandwidth(residuals):
    """Kernel bandwidth from the Hall-Sheather quantile half-width.

    ``b = (Q(1/2 + h) - Q(1/2 - h)) / 2`` is the half-width of the residual
    window carrying probability ``2h``; a Gaussian kernel with standard
    deviation ``b / sqrt(3)`` matches the variance of the uniform window.
    """
    r = np.asarray(residuals, dtype=float)
    h = hall_sheather(r.size)
    lo, hi = np.quantile(r, [0.5 - h, 0.5 + h])
    return 0.5 * (hi - lo) / np.sqrt(3.0)


class PopulationObjective(ConvexFunctional):
    """Population criterion ``F0(theta) = E|y - <x, theta>|`` of a model.

    Smooth and strictly convex for noise with a positive density; the prox is
    computed numerically.
    """

    def __init__(self, spec):
        if spec.noise.scale == 0:
            raise InvariantError("population objective needs nondegenerate noise")
        self.spec = spec
        self.dim = spec.dim

    def eval(self, theta):
        delta = self._point(theta) - self.spec.theta0
        s2 = float(delta @ (self.spec.second_moment().entries @ delta))
        return float(_shift_profile(self.spec.noise, np.sqrt(s2))[0])

    def subgradient(self, theta, rule=MIDPOINT):
        return population_subgradient(self.spec, self._point(theta)), False

    def prox(self, lam, theta):
        from scipy.optimize import minimize

        self._check_lam(lam)
        theta = self._point(theta)

        def obj(z):
            return self.eval(z) + float((z - theta) @ (z - theta)) / (2 * lam)

        def grad(z):
            return population_subgradient(self.spec, z) + (z - theta) / lam

        res = minimize(obj, theta, jac=grad, method="BFGS", options={"gtol": 1e-12})
        return res.x
