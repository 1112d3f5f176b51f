import numpy as np
import pytest
from scipy import optimize, stats

from moscolan.convex import empirical_objective
from moscolan.estimation import Laplace, ModelSpec, simulate_dataset
from moscolan.exceptions import (
    DimensionMismatchError,
    FitFailedError,
    InvariantError,
    SingularOperatorError,
    UnsupportedSetError,
)
from moscolan.hilbert import SymOp
from moscolan.inference import (
    LR_CALIBRATION,
    HypothesisSpec,
    LanLimit,
    calibrate_lr,
    cone_distance_sq,
    derive_lr_calibration,
    lan_process,
    lr_limit_sampler,
    lr_statistic,
    monte_carlo_lan,
    monte_carlo_lan_quadraticity,
    monte_carlo_lr,
    quadratic_limit_argmin,
    quadratic_limit_eval,
    quadraticity_discrepancy,
    replication_seed,
    summarize,
    tangent_cone,
)
from moscolan.samples import SampleSet
from moscolan.sets import Ball, HalfSpace, WholeSpace

from .conftest import random_psd


def _scalar_limit():
    return LanLimit(SymOp.identity(1), SymOp.identity(1))


# -- centred process -------------------------------------------------------------


def test_lan_process_examples():
    one = SampleSet([0.0], [[1.0, 0.0]])
    assert lan_process(one, np.zeros(2), np.zeros(2)) == 0.0
    assert lan_process(one, np.zeros(2), np.array([1.0, 0.0])) == 1.0
    with pytest.raises(DimensionMismatchError):
        lan_process(one, np.zeros(3), np.zeros(3))


def test_lan_process_matches_definition(rng):
    data = simulate_dataset(ModelSpec(np.array([1.0, -1.0]), Laplace(1.0), 50), 2)
    theta = rng.normal(size=2)
    t = rng.normal(size=2)
    n = data.n
    F = empirical_objective(data, 0.3).eval
    expected = n * (F(theta + t / np.sqrt(n)) - F(theta))
    assert lan_process(data, theta, t, 0.3) == pytest.approx(expected, rel=1e-10)


def test_lan_process_convex_in_t(rng):
    data = simulate_dataset(ModelSpec(np.array([0.5, 0.0, -0.5]), Laplace(1.0), 200), 5)
    for _ in range(500):
        theta = rng.normal(size=3)
        t1, t2 = rng.normal(size=(2, 3)) * rng.choice([0.1, 1.0, 10.0])
        mid = lan_process(data, theta, 0.5 * (t1 + t2))
        assert mid <= 0.5 * lan_process(data, theta, t1) + 0.5 * lan_process(data, theta, t2) + 1e-10


# -- quadratic limit -------------------------------------------------------------


def test_quadratic_limit_examples():
    lim = LanLimit(SymOp.identity(2), SymOp.identity(2))
    W = np.array([2.0, 0.0])
    assert quadratic_limit_eval(lim, W, np.zeros(2)) == 0.0
    z = quadratic_limit_argmin(lim, W)
    np.testing.assert_allclose(z, [-2.0, 0.0])
    assert quadratic_limit_eval(lim, W, z) == pytest.approx(-2.0)
    res = optimize.minimize(lambda t: quadratic_limit_eval(lim, W, t), np.array([5.0, -3.0]), method="BFGS",
                            options={"gtol": 1e-12})
    np.testing.assert_allclose(res.x, z, atol=1e-7)


def test_quadratic_limit_multistart_agrees(rng):
    for _ in range(10):
        V = SymOp(random_psd(rng, 3) + 0.5 * np.eye(3))
        lim = LanLimit(V, SymOp.identity(3))
        W = rng.normal(size=3)
        sols = [optimize.minimize(lambda t: quadratic_limit_eval(lim, W, t), rng.normal(size=3) * 5,
                                  jac=lambda t: W + V.entries @ t, method="BFGS", options={"gtol": 1e-13}).x
                for _ in range(2)]
        assert np.linalg.norm(sols[0] - sols[1]) <= 1e-8


def test_quadratic_limit_grid_argmin():
    lim = LanLimit(SymOp([[2.0, 0.5], [0.5, 1.0]]), SymOp.identity(2))
    W = np.array([0.7, -0.4])
    g = np.linspace(-2, 2, 801)
    T = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = T @ W + 0.5 * np.einsum("ij,jk,ik->i", T, lim.V.entries, T)
    assert np.abs(T[np.argmin(vals)] - quadratic_limit_argmin(lim, W)).max() <= g[1] - g[0]


def test_lan_limit_requires_invertible_V():
    with pytest.raises(SingularOperatorError):
        LanLimit(SymOp.diag([1.0, 0.0]), SymOp.identity(2))
    with pytest.raises(DimensionMismatchError):
        LanLimit(SymOp.identity(2), SymOp.identity(3))


# -- statistic ------------------------------------------------------------------------


def test_lr_null_equals_full_is_zero():
    data = simulate_dataset(ModelSpec(np.array([0.3, 0.2]), Laplace(1.0), 300), 1)
    box = Ball(5.0, np.zeros(2))
    assert lr_statistic(data, HypothesisSpec(box, box)) == 0.0
    assert lr_statistic(data, HypothesisSpec(box, WholeSpace(2))) == 0.0


def test_lr_statistic_matches_direct_fits():
    from moscolan.estimation import fit

    data = simulate_dataset(ModelSpec(np.array([0.3, 0.2]), Laplace(1.0), 300), 1)
    full, null = Ball(5.0, np.zeros(2)), HalfSpace([1.0, 0.0], -0.2)
    res = lr_statistic(data, HypothesisSpec(full, null), return_details=True)
    a = fit(data, constraint=full)
    b = fit(data, constraint=[full, null])
    assert not res.shortcut
    assert res.statistic == pytest.approx(data.n * (b.objective_value - a.objective_value), abs=1e-7)
    assert res.statistic > 0


def test_lr_translation_equivariance(rng):
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    theta0 = np.array([0.5, 0.0])
    y = X @ theta0 + rng.laplace(size=n)
    hyp = HypothesisSpec(Ball(3.0, [0.2, 0.0]), HalfSpace([0.3, 1.0], 0.0))
    base = lr_statistic(SampleSet(y, X), hyp, theta0)
    c = 1.7
    shift = np.array([c, 0.0])
    moved = HypothesisSpec(Ball(3.0, np.array([0.2, 0.0]) + shift), HalfSpace([0.3, 1.0], 0.3 * c))
    other = lr_statistic(SampleSet(y + c, X), moved, theta0 + shift)
    assert base > 0
    assert other == pytest.approx(base, abs=1e-8)


def test_lr_failed_fit_raises():
    data = simulate_dataset(ModelSpec(np.array([0.3, 0.2]), Laplace(1.0), 300), 1)
    hyp = HypothesisSpec(Ball(5.0, np.zeros(2)), HalfSpace([1.0, 0.0], -0.2))
    with pytest.raises(FitFailedError) as info:
        lr_statistic(data, hyp, max_iter=2)
    assert len(info.value.results) >= 1


def test_calibration_constant():
    assert LR_CALIBRATION == 2.0
    np.testing.assert_array_equal(calibrate_lr([0.0, 1.5]), [0.0, 3.0])


# -- cones and sampler --------------------------------------------------------------


def test_tangent_cone_representation():
    h = HalfSpace([1.0, 1.0], 1.0)
    np.testing.assert_allclose(tangent_cone(h, [0.5, 0.5]), [[1 / np.sqrt(2), 1 / np.sqrt(2)]])
    assert tangent_cone(h, [0.0, 0.0]).shape == (0, 2)
    assert tangent_cone(Ball(1.0, [0, 0]), [0.1, 0.2]).shape == (0, 2)
    np.testing.assert_allclose(tangent_cone(Ball(1.0, [0, 0]), [0.0, 1.0]), [[0.0, 1.0]])
    assert tangent_cone(WholeSpace(2), [9.0, 9.0]).shape == (0, 2)
    with pytest.raises(InvariantError):
        tangent_cone(h, [3.0, 3.0])
    with pytest.raises(UnsupportedSetError):
        tangent_cone(object.__new__(type("Odd", (), {"dim": 2})), [0.0, 0.0])


def test_cone_distance_matches_projection(rng):
    # the cone {s : s_1 <= 0, s_2 <= 0} has an explicit projection
    G = np.eye(2)
    for u in rng.normal(size=(100, 2)):
        proj = np.minimum(u, 0.0)
        assert cone_distance_sq(u, G) == pytest.approx(float((u - proj) @ (u - proj)), abs=1e-14)
    assert cone_distance_sq(np.ones(2), np.zeros((0, 2))) == 0.0


def test_sampler_null_equals_full_is_zero():
    lim = LanLimit(SymOp.diag([1.0, 2.0]), SymOp.identity(2))
    h = HalfSpace([1.0, 0.0], 0.0)
    draws = lr_limit_sampler(lim, HypothesisSpec(h, h, theta0=np.zeros(2)), 500, 1)
    assert np.all(draws == 0.0)


def test_sampler_nested_nonnegative(rng):
    V = SymOp(random_psd(rng, 3) + np.eye(3))
    lim = LanLimit(V, SymOp(random_psd(rng, 3) + np.eye(3)))
    hyp = HypothesisSpec(HalfSpace([0, 0, 1.0], 0.0), HalfSpace([1.0, -1.0, 0], 0.0),
                         theta0=np.zeros(3), t=rng.normal(size=3))
    assert np.all(lr_limit_sampler(lim, hyp, 2000, 3) >= 0.0)


def test_sampler_boundary_law():
    hyp = HypothesisSpec(WholeSpace(1), HalfSpace([1.0], 0.0), theta0=np.zeros(1))
    draws = lr_limit_sampler(_scalar_limit(), hyp, 200_000, 7)
    assert abs(np.mean(draws == 0.0) - 0.5) <= 0.005
    c = stats.norm.ppf(0.95) ** 2
    assert c == pytest.approx(2.7055, abs=1e-4)
    assert np.quantile(draws, 0.95) == pytest.approx(c, abs=0.05)
    pos = draws[draws > 0]
    assert stats.kstest(pos, stats.chi2(1).cdf).statistic <= 0.01


def test_sampler_interior_is_zero():
    hyp = HypothesisSpec(WholeSpace(2), Ball(1.0, [0.0, 0.0]), theta0=np.array([0.1, 0.0]))
    lim = LanLimit(SymOp.identity(2), SymOp.identity(2))
    assert np.all(lr_limit_sampler(lim, hyp, 100, 0) == 0.0)


def test_sampler_needs_anchor():
    hyp = HypothesisSpec(WholeSpace(1), HalfSpace([1.0], 0.0))
    with pytest.raises(InvariantError):
        lr_limit_sampler(_scalar_limit(), hyp, 10, 0)


def test_derived_calibration_is_two(rng):
    hyp = HypothesisSpec(WholeSpace(1), HalfSpace([1.0], 0.0), theta0=np.zeros(1))
    ratios = derive_lr_calibration(_scalar_limit(), hyp, draws=80, seed=1)
    assert ratios.size >= 20
    np.testing.assert_allclose(ratios, LR_CALIBRATION, rtol=1e-6)
    V = SymOp(random_psd(rng, 2) + np.eye(2))
    hyp2 = HypothesisSpec(HalfSpace([0.0, 1.0], 0.0), HalfSpace([1.0, 1.0], 0.0), theta0=np.zeros(2),
                          t=np.array([0.3, -0.2]))
    ratios2 = derive_lr_calibration(LanLimit(V, SymOp.identity(2)), hyp2, draws=40, seed=2)
    np.testing.assert_allclose(ratios2, LR_CALIBRATION, rtol=1e-5)


# -- Monte Carlo ----------------------------------------------------------------------


def test_replication_seed_and_summary():
    assert replication_seed(1, 2) == replication_seed(1, 2)
    assert replication_seed(1, 2) != replication_seed(2, 1)
    s = summarize([3.0, 1.0, 2.0])
    assert s["mean"] == 2.0 and s["q0.5"] == 2.0 and s["variance"] == 1.0


def test_monte_carlo_lan_zero_probe():
    spec = ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), 100)
    rep = monte_carlo_lan(spec, np.zeros(2), 50, 3)
    assert np.all(rep.statistics == 0.0)
    assert rep.statistics.shape == (50,)
    with pytest.raises(InvariantError):
        monte_carlo_lan(spec, np.ones(2), 49, 3)


def test_monte_carlo_lan_deterministic():
    spec = ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), 100)
    a = monte_carlo_lan(spec, np.ones(2), 50, 9)
    b = monte_carlo_lan(spec, np.ones(2), 50, 9, threads=2)
    np.testing.assert_array_equal(a.statistics, b.statistics)
    assert a.summary == b.summary and a.ks_distance == b.ks_distance and a.config == b.config
    c = monte_carlo_lan(spec, np.ones(2), 50, 10)
    assert not np.array_equal(a.statistics, c.statistics)


def test_monte_carlo_lan_root_n_scaling():
    probe = np.array([1.0, 1.0])
    sds = []
    for n in (400, 800):
        spec = ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), n)
        rep = monte_carlo_lan(spec, probe, 300, 17)
        sds.append(np.std(rep.statistics / np.sqrt(n), ddof=1))
    assert 1.2 <= sds[0] / sds[1] <= 1.7


def test_quadraticity_squared_loss_exact(rng):
    data = simulate_dataset(ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), 500), 4)
    grid = rng.normal(size=(8, 2)) * 3
    assert quadraticity_discrepancy(data, np.array([0.5, -0.5]), grid, None, loss="squared") <= 1e-9
    with pytest.raises(InvariantError):
        quadraticity_discrepancy(data, np.zeros(2), grid, None, loss="huber")


def test_quadraticity_zero_direction():
    data = simulate_dataset(ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), 500), 4)
    assert quadraticity_discrepancy(data, np.array([0.5, -0.5]), np.zeros((1, 2)), SymOp.identity(2)) == 0.0


def test_quadraticity_decreases_with_n():
    angles = np.arange(8) * np.pi / 4
    grid = np.column_stack([np.cos(angles), np.sin(angles)])
    medians = []
    for n in (500, 2000, 8000):
        spec = ModelSpec(np.array([0.5, -0.5]), Laplace(1.0), n)
        rep = monte_carlo_lan_quadraticity(spec, grid, 60, 21)
        medians.append(rep.summary["q0.5"])
    assert medians[0] > medians[1] > medians[2]


def test_monte_carlo_lr_null_equals_full():
    spec = ModelSpec(np.array([0.2, 0.1]), Laplace(1.0), 200)
    h = HalfSpace([1.0, 0.0], 0.2)
    rep = monte_carlo_lr(spec, HypothesisSpec(h, h, theta0=spec.theta0), 20, 5, limit_draws=100)
    assert np.all(rep.statistics == 0.0)
    assert rep.extra["mass_at_zero"] == 1.0
    assert rep.failures == 0 and not rep.aborted
