"""
Local asymptotics of the L1 M-estimator and criterion-difference tests.

The centred process ``H_n(theta, t) = n [F_n(theta + t / sqrt(n)) - F_n(theta)]``
is approximately quadratic, ``Q0(t) = <t, W> + 1/2 <V t, t>`` with
``W ~ N(0, A)``. Minimising it over (tangent cones of) constraint sets gives
the limit law of the statistic ``n [F_n(theta_null) - F_n(theta_full)]``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .estimation import fit, penalty_schedule, score_clt_statistic, simulate_dataset
from .exceptions import DimensionMismatchError, FitFailedError, InvariantError, UnsupportedSetError
from .hilbert import GaussianMeasure, SymOp, hvec, sample_gaussian, solve_op
from .sets import Ball, HalfSpace, WholeSpace

QUANTILES = (0.5, 0.9, 0.95, 0.99)
MAX_FAILURE_RATE = 0.05
# n [F_n(null) - F_n(full)] converges to half the difference of squared cone distances
LR_CALIBRATION = 2.0
CONE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LanLimit:
    """Quadratic limit ``Q0(t) = <t, W> + 1/2 <V t, t>`` with ``W ~ N(0, A)``."""

    V: SymOp
    A: SymOp

    def __post_init__(self):
        if self.V.dim != self.A.dim:
            raise DimensionMismatchError("V and A dims differ")
        solve_op(self.V, np.zeros(self.V.dim))

    @property
    def dim(self):
        return self.V.dim

    @property
    def W_law(self):
        return GaussianMeasure(self.A)

    @classmethod
    def from_model(cls, spec):
        return cls(spec.hessian(), spec.score_covariance())


@dataclass(frozen=True, eq=False)
class HypothesisSpec:
    """Full parameter set, null set and local alternative direction.

    The effective null is ``null_set`` intersected with ``full_set``, so the
    null fit always uses both constraints. ``theta0`` anchors the tangent
    cones used by the limit sampler.
    """

    full_set: object
    null_set: object
    theta0: np.ndarray = None
    t: np.ndarray = None

    def __post_init__(self):
        if self.full_set.dim != self.null_set.dim:
            raise DimensionMismatchError("full and null sets have different dims")
        d = self.full_set.dim
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", hvec(self.theta0))
        object.__setattr__(self, "t", hvec(np.zeros(d) if self.t is None else self.t))
        for v in (self.theta0, self.t):
            if v is not None and v.shape[0] != d:
                raise DimensionMismatchError("hypothesis vectors have the wrong dim")

    @property
    def dim(self):
        return self.full_set.dim

    @property
    def null_sets(self):
        return [self.full_set, self.null_set]

    @property
    def trivial(self):
        return self.null_set is self.full_set or isinstance(self.null_set, WholeSpace)


@dataclass
class McReport:
    """Monte Carlo summary; ``statistics`` are in replication order."""

    replications: int
    statistics: np.ndarray
    summary: dict
    ks_distance: float
    seed: int
    config: dict
    failures: int = 0
    aborted: bool = False
    extra: dict = field(default_factory=dict)


def replication_seed(master, index):
    """Seed of replication ``index``, a hash of ``(master, index)``."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def summarize(values):
    v = np.sort(np.asarray(values, dtype=float))
    out = {"mean": float(v.mean()), "variance": float(v.var(ddof=1)) if v.size > 1 else 0.0}
    for q in QUANTILES:
        out[f"q{q:g}"] = float(np.quantile(v, q))
    return out


# -- centred process and quadratic limit ------------------------------------------


def _penalty(theta, weight, form):
    if not weight:
        return 0.0
    nrm = float(np.linalg.norm(theta))
    return 0.5 * weight * (nrm if form == "norm" else nrm * nrm)


def lan_process(samples, theta, t, penalty_weight=0.0, penalty_form="norm"):
    """``H_n(theta, t) = n [F_n(theta + t / sqrt(n)) - F_n(theta)]``, exact."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    if theta.shape != (samples.dim,) or t.shape != (samples.dim,):
        raise DimensionMismatchError("theta and t must match the data dim")
    n = samples.n
    if not np.any(t):
        return 0.0
    # sum of differences, not difference of sums, to keep small values exact
    r = samples.residuals(theta)
    dr = samples.X @ t / np.sqrt(n)
    val = float(np.sum(np.abs(r - dr) - np.abs(r)))
    shifted = theta + t / np.sqrt(n)
    return val + n * (_penalty(shifted, penalty_weight, penalty_form) - _penalty(theta, penalty_weight, penalty_form))


def quadratic_limit_eval(lim, W, t):
    W = np.asarray(W, dtype=float)
    t = np.asarray(t, dtype=float)
    if W.shape != (lim.dim,) or t.shape != (lim.dim,):
        raise DimensionMismatchError("W and t must match the limit dim")
    return float(t @ W) + 0.5 * float(t @ (lim.V.entries @ t))


def quadratic_limit_argmin(lim, W):
    """Unique minimiser ``-V^-1 W`` of ``Q0``."""
    return -solve_op(lim.V, W)


# -- likelihood-ratio-type statistic -------------------------------------------------


@dataclass
class LrResult:
    statistic: float
    full: object
    null: object
    shortcut: bool


def lr_statistic(samples, hyp, theta0=None, penalty_weight=0.0, penalty_form="norm", tol=1e-8,
                 max_iter=200_000, return_details=False):
    """``n [F_n(theta_null) - F_n(theta_full)]``, clipped at zero.

    When the full-set minimiser already lies in the null set the two minima
    coincide and the statistic is exactly zero. ``theta0`` only warm-starts
    the fits.

    Raises
    ------
    FitFailedError
        If either fit misses its tolerance; carries both results.
    """
    full = fit(samples, penalty_weight, penalty_form, hyp.full_set, tol=tol, max_iter=max_iter, x0=theta0)
    null = None
    shortcut = False
    if hyp.trivial or (full.converged and hyp.null_set.contains(full.theta)):
        stat = 0.0
        shortcut = True
    else:
        start = hyp.null_set.project(full.theta)
        null = fit(samples, penalty_weight, penalty_form, hyp.null_sets, tol=tol, max_iter=max_iter, x0=start)
        if full.converged and null.converged:
            stat = max(0.0, samples.n * (null.objective_value - full.objective_value))
    results = [full] if null is None else [full, null]
    if not all(r.converged for r in results):
        raise FitFailedError("constrained fit inside the statistic did not converge", results)
    if return_details:
        return LrResult(stat, full, null, shortcut)
    return stat


def calibrate_lr(statistic):
    """Scale a raw statistic onto the limit sampler's scale."""
    return LR_CALIBRATION * np.asarray(statistic, dtype=float)


# -- tangent cones and the limit sampler ---------------------------------------------


def tangent_cone(convex_set, theta0, tol=CONE_TOL):
    """Rows ``C`` with ``T(theta0) = {t : C t <= 0}``.

    Half-spaces give one row when ``theta0`` is on their boundary, balls one
    row (the outward normal) on their sphere; interior points give the whole
    space.
    """
    theta0 = np.asarray(theta0, dtype=float)
    d = convex_set.dim
    if isinstance(convex_set, WholeSpace):
        return np.zeros((0, d))
    if not isinstance(convex_set, (HalfSpace, Ball)):
        raise UnsupportedSetError(f"no tangent-cone representation for {type(convex_set).__name__}")
    if not convex_set.contains(theta0, tol):
        raise InvariantError("theta0 lies outside the constraint set")
    if convex_set.on_boundary(theta0, tol):
        n = convex_set.outward_normal(theta0)
        return n[None, :]
    return np.zeros((0, d))


def cone_distance_sq(u, G):
    """Squared distance from ``u`` to the cone ``{s : G s <= 0}``.

    By Moreau's decomposition the residual is the projection onto the polar
    cone generated by the rows of ``G``, a nonnegative least-squares problem.
    """
    if G.shape[0] == 0:
        return 0.0
    mu, _ = optimize.nnls(G.T, u)
    p = G.T @ mu
    return float(p @ p)


def _cones(lim, hyp):
    if hyp.theta0 is None:
        raise InvariantError("the limit sampler needs hyp.theta0 to build tangent cones")
    root_inv = lim.V.inv_sqrt()
    full = tangent_cone(hyp.full_set, hyp.theta0)
    null = np.vstack([full, tangent_cone(hyp.null_set, hyp.theta0)])
    # V^{1/2} {t : C t <= 0} = {s : C V^{-1/2} s <= 0}
    return full @ root_inv, null @ root_inv


def lr_limit_sampler(lim, hyp, draws, seed):
    """Draws of ``dist^2(u, V^1/2 K_null) - dist^2(u, V^1/2 K_full)``.

    Here ``u = V^-1/2 W + V^1/2 t`` and ``K`` are tangent cones at
    ``hyp.theta0``. Nested cones make every draw nonnegative.
    """
    G_full, G_null = _cones(lim, hyp)
    W = sample_gaussian(lim.W_law, draws, seed)
    u = W @ lim.V.inv_sqrt().T + lim.V.sqrt() @ hyp.t
    out = np.empty(draws)
    for i, ui in enumerate(u):
        out[i] = max(0.0, cone_distance_sq(ui, G_null) - cone_distance_sq(ui, G_full))
    return out


def brute_force_lr_limit(lim, hyp, W):
    """``inf_{K_null} Q - inf_{K_full} Q`` by direct constrained minimisation.

    ``Q(s) = <s, W - V t> + 1/2 <V s, s>`` is the quadratic limit seen from
    the local alternative; used to calibrate the sampler's scale.
    """
    if hyp.theta0 is None:
        raise InvariantError("needs hyp.theta0")
    V = lim.V.entries
    g = np.asarray(W, dtype=float) - V @ hyp.t
    C_full = tangent_cone(hyp.full_set, hyp.theta0)
    C_null = np.vstack([C_full, tangent_cone(hyp.null_set, hyp.theta0)])

    def inf_over(C):
        cons = [{"type": "ineq", "fun": lambda s, c=c: -float(c @ s), "jac": lambda s, c=c: -c} for c in C]
        best = np.inf
        for start in (np.zeros(lim.dim), -solve_op(lim.V, g)):
            res = optimize.minimize(
                lambda s: float(s @ g) + 0.5 * float(s @ (V @ s)), start, jac=lambda s: g + V @ s,
                constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500},
            )
            best = min(best, res.fun)
        return best

    return inf_over(C_null) - inf_over(C_full)


def derive_lr_calibration(lim, hyp, draws=50, seed=0):
    """Ratio of sampler draws to brute-force limit values (should be constant)."""
    W = sample_gaussian(lim.W_law, draws, seed)
    G_full, G_null = _cones(lim, hyp)
    ratios = []
    for w in W:
        u = lim.V.inv_sqrt() @ (-w) + lim.V.sqrt() @ hyp.t
        s = cone_distance_sq(u, G_null) - cone_distance_sq(u, G_full)
        b = brute_force_lr_limit(lim, hyp, w)
        if b > 1e-6:
            ratios.append(s / b)
    return np.array(ratios)


# -- Monte Carlo ----------------------------------------------------------------------


def _run(fn, replications, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(replications)))
    return [fn(i) for i in range(replications)]


def _check_reps(replications, minimum=1):
    if replications < minimum:
        raise InvariantError(f"need at least {minimum} replications")


def monte_carlo_lan(spec, probe, replications, seed, penalty_c=0.0, penalty_form="norm", tol=1e-8,
                    max_iter=200_000, threads=1):
    """Replicate ``sqrt(n) <theta_hat - theta0, probe>`` and compare with its normal limit.

    The limit variance is ``<probe, V^-1 A V^-1 probe>`` from the model's
    closed forms. Reports the KS distance to that normal law and the ratio of
    empirical to limit variance. More than 5% failed fits sets ``aborted``.
    """
    _check_reps(replications, 50)
    probe = np.asarray(probe, dtype=float)
    if probe.shape != (spec.dim,):
        raise DimensionMismatchError("probe has the wrong dim")
    n = spec.n
    lam = penalty_schedule(penalty_c, n)
    root_n = np.sqrt(n)

    def one(i):
        data = simulate_dataset(spec, replication_seed(seed, i))
        res = fit(data, lam, penalty_form, tol=tol, max_iter=max_iter)
        return root_n * float((res.theta - spec.theta0) @ probe), res.converged

    out = _run(one, replications, threads)
    stats_ = np.array([s for s, _ in out])
    failures = sum(not ok for _, ok in out)
    limit_var = float(probe @ (spec.sandwich().entries @ probe))
    summary = summarize(stats_)
    if limit_var > 0:
        ks = float(stats.kstest(np.sort(stats_), stats.norm(scale=np.sqrt(limit_var)).cdf).statistic)
        ratio = summary["variance"] / limit_var
    else:
        ks = 0.0 if not np.any(stats_) else 1.0
        ratio = float("nan")
    summary.update(limit_variance=limit_var, variance_ratio=ratio)
    config = {"n": n, "dim": spec.dim, "penalty_c": penalty_c, "penalty_weight": lam, "penalty_form": penalty_form,
              "tol": tol, "max_iter": max_iter, "probe": probe.tolist()}
    return McReport(replications, stats_, summary, ks, seed, config, failures,
                    failures > MAX_FAILURE_RATE * replications)


def quadraticity_discrepancy(samples, theta0, t_grid, V, loss="l1"):
    """``max_t |H_n(theta0, t) - <t, S_n> - 1/2 <V t, t>|`` over a grid.

    ``S_n`` is the normalised score at ``theta0``. With ``loss='squared'``
    the criterion is ``(1/n) sum 1/2 (y - <x, theta>)^2``, whose process is
    exactly quadratic with the empirical ``X^T X / n``.
    """
    n = samples.n
    grid = np.atleast_2d(np.asarray(t_grid, dtype=float))
    r = samples.residuals(theta0)
    if loss == "l1":
        score = score_clt_statistic(samples, theta0)
        Vm = V.entries if isinstance(V, SymOp) else np.asarray(V)
    elif loss == "squared":
        score = -(r @ samples.X) / np.sqrt(n)
        Vm = samples.X.T @ samples.X / n
    else:
        raise InvariantError(f"unknown loss {loss!r}")
    worst = 0.0
    for t in grid:
        if not np.any(t):
            continue
        dr = samples.X @ t / np.sqrt(n)
        if loss == "l1":
            H = float(np.sum(np.abs(r - dr) - np.abs(r)))
        else:
            H = float(np.sum(0.5 * dr * dr - r * dr))
        G = float(t @ score) + 0.5 * float(t @ (Vm @ t))
        worst = max(worst, abs(H - G))
    return worst


def monte_carlo_lan_quadraticity(spec, t_grid, replications, seed, loss="l1", threads=1):
    """Distribution of the sup-discrepancy between ``H_n`` and its quadratic surrogate."""
    _check_reps(replications)
    V = spec.hessian()

    def one(i):
        data = simulate_dataset(spec, replication_seed(seed, i))
        return quadraticity_discrepancy(data, spec.theta0, t_grid, V, loss)

    vals = np.array(_run(one, replications, threads))
    config = {"n": spec.n, "dim": spec.dim, "loss": loss, "t_grid": np.asarray(t_grid, dtype=float).tolist()}
    return McReport(replications, vals, summarize(vals), float("nan"), seed, config)


def monte_carlo_lr(spec, hyp, replications, seed, penalty_c=0.0, penalty_form="norm", tol=1e-8,
                   max_iter=200_000, limit_draws=20_000, threads=1):
    """Replicate the calibrated statistic ``2 n [F_n(null) - F_n(full)]``.

    Data are drawn under ``theta0 + t / sqrt(n)``. The positive part is
    compared with the limit law: the chi-square(1) law when exactly one
    constraint is active in the null cone and ``V = A``, otherwise the
    sampler's positive draws (two-sample KS).
    """
    _check_reps(replications)
    n = spec.n
    lam = penalty_schedule(penalty_c, n)
    true_spec = type(spec)(spec.theta0 + hyp.t / np.sqrt(n), spec.noise, n, spec.design, spec.decay)

    def one(i):
        data = simulate_dataset(true_spec, replication_seed(seed, i))
        try:
            return lr_statistic(data, hyp, spec.theta0, lam, penalty_form, tol, max_iter), True
        except FitFailedError:
            return np.nan, False

    out = _run(one, replications, threads)
    raw = np.array([s for s, _ in out])
    failures = sum(not ok for _, ok in out)
    cal = calibrate_lr(raw)
    ok = cal[np.isfinite(cal)]
    zero_mass = float(np.mean(ok <= 1e-9)) if ok.size else float("nan")
    positive = np.sort(ok[ok > 1e-9])

    lim = LanLimit.from_model(spec)
    extra = {"mass_at_zero": zero_mass, "calibration": LR_CALIBRATION}
    ks = float("nan")
    if hyp.theta0 is not None:
        limit = lr_limit_sampler(lim, hyp, limit_draws, replication_seed(seed, replications))
        extra["limit_mass_at_zero"] = float(np.mean(limit <= 1e-12))
        G_full, G_null = _cones(lim, hyp)
        one_sided = G_full.shape[0] == 0 and G_null.shape[0] == 1 and not np.any(hyp.t)
        same = np.allclose(lim.V.entries, lim.A.entries, rtol=1e-12, atol=1e-14)
        if positive.size:
            if one_sided and same:
                ks = float(stats.kstest(positive, stats.chi2(1).cdf).statistic)
                extra["ks_reference"] = "chi2(1)"
            else:
                ref = limit[limit > 1e-12]
                ks = float(stats.ks_2samp(positive, ref).statistic) if ref.size else 1.0
                extra["ks_reference"] = "limit sampler"
    summary = summarize(ok) if ok.size else {}
    config = {"n": n, "dim": spec.dim, "penalty_c": penalty_c, "penalty_weight": lam, "penalty_form": penalty_form,
              "tol": tol, "max_iter": max_iter, "limit_draws": limit_draws}
    return McReport(replications, cal, summary, ks, seed, config, failures,
                    failures > MAX_FAILURE_RATE * replications, extra)
