import numpy as np
import pytest

from moscolan.convex import AbsResidual, Indicator, NormPenalty, Quadratic, ScaledSum
from moscolan.hilbert import SymOp
from moscolan.sets import Ball, HalfSpace, WholeSpace

KINDS = (
    "abs_residual",
    "norm_penalty",
    "squared_penalty",
    "ball",
    "halfspace",
    "wholespace",
    "quadratic",
    "scaled_sum",
)

_ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    """Remember one acceptance verdict for the end-of-session report."""
    _ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_psd(rng, dim, rank=None):
    rank = dim if rank is None else rank
    B = rng.standard_normal((dim, rank))
    return B @ B.T / rank


def random_functional(rng, dim, kind):
    if kind == "abs_residual":
        return AbsResidual(rng.normal(), rng.normal(size=dim))
    if kind == "norm_penalty":
        return NormPenalty(rng.uniform(0.1, 3.0), dim, "norm")
    if kind == "squared_penalty":
        return NormPenalty(rng.uniform(0.1, 3.0), dim, "squared-norm")
    if kind == "ball":
        return Indicator(Ball(rng.uniform(0.5, 2.0), rng.normal(size=dim) * 0.5))
    if kind == "halfspace":
        return Indicator(HalfSpace(rng.normal(size=dim), rng.normal()))
    if kind == "wholespace":
        return Indicator(WholeSpace(dim))
    if kind == "quadratic":
        rank = int(rng.integers(1, dim + 1))
        return Quadratic(SymOp(random_psd(rng, dim, rank)), rng.normal(size=dim))
    if kind == "scaled_sum":
        terms = [(rng.uniform(0.2, 1.5), AbsResidual(rng.normal(), rng.normal(size=dim))) for _ in range(2)]
        terms.append((rng.uniform(0.2, 1.0), NormPenalty(1.0, dim)))
        if rng.uniform() < 0.5:
            terms.append((1.0, Indicator(Ball(1.5, rng.normal(size=dim) * 0.3))))
        else:
            terms.append((0.5, Quadratic(SymOp(random_psd(rng, dim)), rng.normal(size=dim))))
        return ScaledSum(terms)
    raise ValueError(kind)


def point_in_domain(rng, f, dim, on_kink=False):
    """A random point where ``f`` is finite, optionally placed on a kink."""
    theta = rng.normal(size=dim) * 1.5
    if isinstance(f, Indicator):
        theta = f.set.project(theta)
        if on_kink and not isinstance(f.set, WholeSpace):
            # push to the boundary along the outward direction
            p = f.set.project(theta + 100.0 * (theta - f.set.anchor() + rng.normal(size=dim)))
            theta = p
    elif on_kink and isinstance(f, AbsResidual):
        theta = theta + f.x * (f.residual(theta) / (f.x @ f.x))
    elif on_kink and isinstance(f, NormPenalty) and f.form == "norm":
        theta = np.zeros(dim)
    elif isinstance(f, ScaledSum):
        for c, g in f.terms:
            if isinstance(g, Indicator):
                theta = g.set.project(theta)
        if on_kink:
            g = f.terms[0][1]
            shifted = theta + g.x * (g.residual(theta) / (g.x @ g.x))
            if all(isinstance(h, Indicator) is False or h.set.contains(shifted) for _, h in f.terms):
                theta = shifted
    return theta
