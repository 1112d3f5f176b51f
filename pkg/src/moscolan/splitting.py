"""
Consensus Douglas-Rachford splitting over sums of built-in functionals.

A :class:`~moscolan.convex.ScaledSum` is flattened into a :class:`FlatProblem`

    sum_i c_i |y_i - <x_i, z>| + 1/2 <V z, z> - <b, z> + q0 + kappa ||z|| + sum_k Psi_{A_k}(z)

and minimised by product-space Douglas-Rachford: one block per absolute
residual, one for the smooth quadratic part, one for the norm penalty and one
per constraint set, each with a closed-form proximal map. The blocks are
averaged onto the consensus subspace every step.

Every few iterations the active structure read off the block outputs (which
residuals landed exactly on their kink, whether the penalty landed on the
origin, which constraints were binding) is used to *polish* the iterate: the
objective is smooth on that face, so a few Newton-KKT steps give the exact
minimiser, which is then accepted only if it carries an optimality certificate
``dist(0, dF(z)) <= tol``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import lsq_linear

from .exceptions import ConvergenceError
from .sets import Ball, HalfSpace

RELAX_START = 1.9
RELAX_DECAY = 0.999
STEP_FACTOR = 0.3
POLISH_EVERY = 10


@dataclass
class FlatProblem:
    dim: int
    X: np.ndarray
    y: np.ndarray
    c: np.ndarray
    abs_const: float
    quads: list
    V: np.ndarray
    b: np.ndarray
    q0: float
    norm_coef: float
    sets: tuple
    _problem: object = field(default=None, init=False, repr=False)

    def feasible(self, z):
        return all(s.contains(z) for s in self.sets)

    def value(self, z):
        """Objective value; ``+inf`` outside the constraint sets."""
        if self._problem is None:
            self._problem = Problem(self)
        return self._problem.value(np.asarray(z, dtype=float))


def flatten(f):
    """Collect the leaves of a functional into a :class:`FlatProblem`."""
    from .convex import AbsResidual, Indicator, NormPenalty, Quadratic, ScaledSum

    d = f.dim
    rows, ys, cs = [], [], []
    quads = []
    V = np.zeros((d, d))
    b = np.zeros(d)
    state = {"abs_const": 0.0, "norm": 0.0, "q0": 0.0}
    sets = []

    def walk(g, coef):
        if coef == 0.0:
            return
        if isinstance(g, ScaledSum):
            for c, h in g.terms:
                walk(h, coef * c)
        elif isinstance(g, AbsResidual):
            if g._xx == 0.0:
                state["abs_const"] += coef * abs(g.y)
            else:
                rows.append(g.x)
                ys.append(g.y)
                cs.append(coef)
        elif isinstance(g, NormPenalty):
            if g.form == "norm":
                state["norm"] += 0.5 * coef * g.weight
            elif g.weight:
                Vi = g.weight * np.eye(d)
                quads.append((coef, Vi, np.zeros(d)))
                V[...] += coef * Vi
        elif isinstance(g, Quadratic):
            Vi = g.op.entries
            quads.append((coef, Vi, g.center))
            V[...] += coef * Vi
            b[...] += coef * (Vi @ g.center)
            state["q0"] += 0.5 * coef * float(g.center @ (Vi @ g.center))
        elif isinstance(g, Indicator):
            sets.append(g.set)
        else:
            raise TypeError(f"cannot flatten {type(g).__name__}")

    walk(f, 1.0)
    X = np.array(rows, dtype=float).reshape(-1, d)
    return FlatProblem(
        d, X, np.array(ys, dtype=float), np.array(cs, dtype=float), state["abs_const"],
        quads, V, b, state["q0"], state["norm"], tuple(sets),
    )


class Problem:
    """A :class:`FlatProblem` plus an extra smooth term, in solver form.

    The extra term ``1/2 <W z, z> - <u, z> + w0`` carries the resolvent
    quadratic of a prox evaluation or the linear tilt of a conjugate.
    """

    def __init__(self, flat, W=None, u=None, w0=0.0):
        d = flat.dim
        self.flat = flat
        self.dim = d
        self.W = np.zeros((d, d)) if W is None else np.asarray(W, dtype=float)
        self.u = np.zeros(d) if u is None else np.asarray(u, dtype=float)
        self.w0 = float(w0)
        self.X, self.y, self.c = flat.X, flat.y, flat.c
        self.a = np.einsum("ij,ij->i", self.X, self.X)
        self.V = flat.V + self.W
        self.b = flat.b + self.u
        self.norm_coef = flat.norm_coef
        self.sets = flat.sets
        self.kink_tol = 1e-9 * np.maximum(1.0, np.abs(self.y))

    @property
    def has_smooth(self):
        return bool(np.any(self.V) or np.any(self.b))

    @property
    def piecewise_linear(self):
        return not np.any(self.V) and self.norm_coef == 0.0

    def feasible(self, z):
        return all(s.contains(z) for s in self.sets)

    def value(self, z):
        if z.ndim == 2:
            return np.array([self.value(zi) for zi in z])
        if not self.feasible(z):
            return np.inf
        fl = self.flat
        val = fl.abs_const
        if self.X.shape[0]:
            val += float(self.c @ np.abs(self.y - self.X @ z))
        for coef, V, center in fl.quads:
            dz = z - center
            val += 0.5 * coef * float(dz @ (V @ dz))
        if fl.norm_coef:
            val += fl.norm_coef * float(np.linalg.norm(z))
        val += 0.5 * float(z @ (self.W @ z)) - float(self.u @ z) + self.w0
        return val

    def certificate(self, z):
        """``dist(0, dF(z))`` with kinks and active constraints resolved exactly."""
        if not np.all(np.isfinite(z)) or not self.feasible(z):
            return np.inf
        g0 = self.V @ z - self.b
        cols, lo, hi = [], [], []
        if self.X.shape[0]:
            r = self.y - self.X @ z
            kink = np.abs(r) <= self.kink_tol
            free = ~kink
            g0 = g0 - (self.c[free] * np.sign(r[free])) @ self.X[free]
            if np.any(kink):
                cols.append((self.c[kink, None] * self.X[kink]).T)
                k = int(kink.sum())
                lo.append(-np.ones(k))
                hi.append(np.ones(k))
        ball_r = 0.0
        if self.norm_coef:
            nz = float(np.linalg.norm(z))
            if nz == 0.0:
                ball_r = self.norm_coef
            else:
                g0 = g0 + self.norm_coef * z / nz
        for s in self.sets:
            if s.on_boundary(z):
                cols.append(s.outward_normal(z)[:, None])
                lo.append(np.zeros(1))
                hi.append(np.full(1, np.inf))
        if cols:
            M = np.hstack(cols)
            return _min_norm(g0, M, np.concatenate(lo), np.concatenate(hi), ball_r)
        return _min_norm(g0, None, None, None, ball_r)


def _ball_proj(v, r):
    n = np.linalg.norm(v)
    return v if n <= r else v * (r / n)


def _box_lsq(M, t, lo, hi):
    """argmin ||M w - t|| over the box [lo, hi]."""
    if M.shape[1] == 1:
        m = M[:, 0]
        mm = float(m @ m)
        w = float(m @ t) / mm if mm > 0 else 0.0
        return np.array([min(max(w, lo[0]), hi[0])])
    return lsq_linear(M, t, bounds=(lo, hi), method="bvls", tol=1e-14).x


def _min_norm(g0, M, lo, hi, ball_r):
    """``min ||g0 + M w + v||`` over ``w`` in a box and ``||v|| <= ball_r``."""
    if M is None:
        return float(np.linalg.norm(g0 - _ball_proj(g0, ball_r)))
    if ball_r == 0.0:
        w = _box_lsq(M, -g0, lo, hi)
        return float(np.linalg.norm(g0 + M @ w))
    v = np.zeros_like(g0)
    best = np.inf
    for _ in range(200):
        w = _box_lsq(M, -(g0 + v), lo, hi)
        v = -_ball_proj(g0 + M @ w, ball_r)
        res = float(np.linalg.norm(g0 + M @ w + v))
        if res >= best - 1e-16:
            best = min(best, res)
            break
        best = res
    return best


@dataclass
class SplitResult:
    theta: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    polished: bool
    history: list = field(default_factory=list)


class _Face:
    """Active structure guessed for a polish attempt."""

    __slots__ = ("kinks", "center", "active")

    def __init__(self, kinks, center, active):
        self.kinks = np.asarray(kinks, dtype=int)
        self.center = bool(center)
        self.active = tuple(active)

    def key(self):
        return (self.kinks.tobytes(), self.center, self.active)


def polish(P, x, face, newton_iter=40):
    """Minimise the objective exactly on the face described by ``face``.

    Returns ``None`` when the face is inconsistent.
    """
    d = P.dim
    K = face.kinks
    rows, rhs = [], []
    if K.size:
        rows.append(P.X[K])
        rhs.append(P.y[K])
    spheres = []
    for k in face.active:
        s = P.sets[k]
        if isinstance(s, HalfSpace):
            rows.append(s.normal[None, :])
            rhs.append(np.array([s.offset]))
        elif isinstance(s, Ball):
            spheres.append(s)
    E = np.vstack(rows) if rows else np.zeros((0, d))
    e = np.concatenate(rhs) if rhs else np.zeros(0)

    if face.center:
        z = np.zeros(d)
        if E.shape[0] and np.max(np.abs(e)) > 1e-12:
            return None
        return z

    const = -P.b.copy()
    if P.X.shape[0]:
        r = P.y - P.X @ x
        s = np.sign(r)
        s[K] = 0.0
        const -= (P.c * s) @ P.X

    z = x.copy()
    if E.shape[0]:
        corr, *_ = np.linalg.lstsq(E, E @ z - e, rcond=None)
        z = z - corr
        if np.linalg.norm(E @ z - e) > 1e-9 * max(1.0, np.linalg.norm(e)):
            return None
    nu = np.zeros(len(spheres))
    if spheres and not P.norm_coef:
        # multipliers from the stationarity residual at the start point
        J0 = np.vstack([E] + [2.0 * (z - sp.center)[None, :] for sp in spheres])
        lam0, *_ = np.linalg.lstsq(J0.T, -(const + P.V @ z), rcond=None)
        nu = lam0[E.shape[0]:]
    for _ in range(newton_iter):
        g = const + P.V @ z
        H = P.V.copy()
        if P.norm_coef:
            nz = np.linalg.norm(z)
            if nz == 0.0:
                return None
            g = g + P.norm_coef * z / nz
            H = H + (P.norm_coef / nz) * (np.eye(d) - np.outer(z, z) / nz**2)
        J = [E]
        h = [E @ z - e]
        for j, sp in enumerate(spheres):
            dz = z - sp.center
            H = H + 2.0 * nu[j] * np.eye(d)
            J.append(2.0 * dz[None, :])
            h.append(np.array([dz @ dz - sp.radius**2]))
        J = np.vstack(J)
        h = np.concatenate(h)
        m = J.shape[0]
        kkt = np.block([[H, J.T], [J, np.zeros((m, m))]])
        sol, *_ = np.linalg.lstsq(kkt, -np.concatenate([g, h]), rcond=None)
        step = sol[:d]
        z = z + step
        nu = sol[d + E.shape[0]:]
        if not np.all(np.isfinite(z)):
            return None
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(z)):
            break
    # land exactly on binding constraints
    for k in face.active:
        z = P.sets[k].project(z)
    return z


def _initial_point(P, z0):
    if z0 is not None:
        return np.array(z0, dtype=float)
    d = P.dim
    if P.X.shape[0] >= d:
        z, *_ = np.linalg.lstsq(P.X, P.y, rcond=None)
        return z
    if np.any(P.V):
        z, *_ = np.linalg.lstsq(P.V, P.b, rcond=None)
        return z
    return np.zeros(d)


def _step_size(P, z0, M):
    cands = []
    if P.X.shape[0]:
        r = np.abs(P.y - P.X @ z0)
        # an interpolating start has no residual scale; fall back to the spread of y
        spread = float(np.median(np.abs(P.y - np.median(P.y))))
        scale = max(float(np.median(r)), 0.01 * spread, 1e-4)
        cands.append(STEP_FACTOR * scale / float(P.c @ P.a))
    if np.any(P.V):
        w = np.linalg.eigvalsh(P.V)
        top = w[-1]
        pos = w[w > 1e-12 * top]
        cands.append(1.0 / np.sqrt(pos[0] * top))
    base = min(cands) if cands else 1.0
    return M * base


def solve(P, z0=None, tol=1e-8, max_iter=200_000, iter_tol=1e-9, raise_on_fail=False):
    """Minimise ``P`` by consensus Douglas-Rachford with active-set polishing.

    ``converged`` means the returned point carries a certificate
    ``dist(0, dF(theta)) <= tol`` or, failing that, that the iterates stalled
    below ``iter_tol`` (the certificate is reported either way).
    """
    d = P.dim
    m = P.X.shape[0]
    use_smooth = P.has_smooth
    use_norm = P.norm_coef > 0.0
    nsets = len(P.sets)
    M = m + int(use_smooth) + int(use_norm) + nsets
    x = _initial_point(P, z0)
    history = []
    best_val, best_z = np.inf, None

    if M == 0:
        z = np.zeros(d)
        return SplitResult(z, P.value(z), P.certificate(z), 0, True, False, [P.value(z)])

    gamma = _step_size(P, x, M)
    Y = np.tile(x, (M, 1))
    thr_abs = gamma * P.c * P.a if m else None
    safe_a = np.where(P.a > 0, P.a, 1.0) if m else None
    if use_smooth:
        smooth_fac = cho_factor(np.eye(d) + gamma * P.V)
    row_smooth = m
    row_norm = m + int(use_smooth)
    row_sets = row_norm + int(use_norm)

    tried = set()
    landed_abs = np.zeros(m, dtype=bool)
    landed_norm = False
    landed_sets = [False] * nsets

    def try_faces(x, faces):
        nonlocal best_val, best_z
        for face in faces:
            key = face.key()
            if key in tried:
                continue
            # sphere faces have antipodal stationary points, so retry them
            if not any(isinstance(P.sets[k], Ball) for k in face.active):
                tried.add(key)
            z = polish(P, x, face)
            if z is None:
                continue
            cert = P.certificate(z)
            if cert <= tol:
                val = P.value(z)
                if val <= best_val + 1e-12 * max(1.0, abs(best_val)) or best_z is None:
                    return z, val, cert
        return None

    def candidate_faces(x, ladder=False):
        active = tuple(k for k in range(nsets) if landed_sets[k])
        faces = [_Face(np.flatnonzero(landed_abs), landed_norm, active)]
        if 0 < nsets <= 3:
            # a far-away binding set is reached slowly by small steps; guess it directly
            for mask in range(1, 2**nsets):
                act = tuple(k for k in range(nsets) if mask >> k & 1)
                if act != active:
                    faces.append(_Face(np.flatnonzero(landed_abs), landed_norm, act))
        if m and P.piecewise_linear:
            # a vertex: d equations from the smallest residuals and the active sets
            r = np.abs(P.y - P.X @ x)
            need = d - len(active)
            if need > 0:
                near = np.argsort(r)[:need + 1]
                faces.append(_Face(np.sort(near[:need]), False, active))
                if near.size > need:
                    for drop in range(need):
                        faces.append(_Face(np.sort(np.delete(near, drop)), False, active))
        if ladder and m:
            r = np.abs(P.y - P.X @ x) / np.maximum(1.0, np.abs(P.y))
            for tau in (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3):
                act = tuple(k for k in range(nsets) if P.sets[k].on_boundary(x, tol=tau) or not P.sets[k].contains(x))
                faces.append(_Face(np.flatnonzero(r <= tau), landed_norm, act))
        return faces

    def record(x):
        nonlocal best_val, best_z
        cand = x
        if not P.feasible(cand) and nsets == 1:
            cand = P.sets[0].project(cand)
        val = P.value(cand)
        if val <= best_val:
            best_val, best_z = val, cand.copy()
            history.append(val)

    x_prev = x
    k = 0
    stalled = False
    for k in range(1, max_iter + 1):
        rel = 1.0 + (RELAX_START - 1.0) * RELAX_DECAY ** k
        x = Y.mean(axis=0)
        Vin = 2.0 * x - Y
        Z = np.empty_like(Y)
        if m:
            Va = Vin[:m]
            r = P.y - np.einsum("ij,ij->i", Va, P.X)
            shrunk = np.sign(r) * np.maximum(np.abs(r) - thr_abs, 0.0)
            landed_abs = (shrunk == 0.0) & (P.a > 0)
            Z[:m] = Va + P.X * ((r - shrunk) / safe_a)[:, None]
        if use_smooth:
            Z[row_smooth] = cho_solve(smooth_fac, Vin[row_smooth] + gamma * P.b)
        if use_norm:
            v = Vin[row_norm]
            nv = np.linalg.norm(v)
            t = gamma * P.norm_coef
            landed_norm = nv <= t
            Z[row_norm] = 0.0 if landed_norm else (1.0 - t / nv) * v
        for j, s in enumerate(P.sets):
            v = Vin[row_sets + j]
            landed_sets[j] = not s.contains(v, tol=0.0)
            Z[row_sets + j] = s.project(v)
        Y += rel * (Z - x)

        change = np.linalg.norm(x - x_prev)
        x_prev = x
        stalled = k > 20 and change <= iter_tol * max(1.0, np.linalg.norm(x))
        if k % POLISH_EVERY == 0 or stalled:
            record(x)
            hit = try_faces(x, candidate_faces(x, ladder=stalled))
            if hit is not None:
                z, val, cert = hit
                history.append(min(val, best_val))
                return SplitResult(z, val, cert, k, True, True, history)
            if len(tried) > 5000:
                tried.clear()
        if stalled:
            break

    x = Y.mean(axis=0)
    record(x)
    hit = try_faces(x, candidate_faces(x, ladder=True))
    if hit is not None:
        z, val, cert = hit
        history.append(min(val, best_val))
        return SplitResult(z, val, cert, k, True, True, history)
    z = best_z if best_z is not None else x
    cert = P.certificate(z)
    converged = cert <= tol or stalled
    if raise_on_fail and not converged:
        raise ConvergenceError(
            f"splitting stopped after {k} iterations with residual {cert:.3e}", residual=cert, iterations=k
        )
    return SplitResult(z, P.value(z), cert, k, converged, False, history)


def _single_nonsmooth(flat):
    count = int(flat.X.shape[0] > 0) * flat.X.shape[0] + int(flat.norm_coef > 0) + len(flat.sets)
    return count


def prox_flat(flat, lam, theta, tol=1e-10, max_iter=100_000):
    """Resolvent of a flattened sum at ``theta``."""
    d = flat.dim
    theta = np.asarray(theta, dtype=float)
    nonsmooth = _single_nonsmooth(flat)
    if nonsmooth == 0:
        return np.linalg.solve(np.eye(d) + lam * flat.V, theta + lam * flat.b)
    if nonsmooth == 1 and not (np.any(flat.V) or np.any(flat.b)):
        if flat.X.shape[0]:
            c, x, y = flat.c[0], flat.X[0], flat.y[0]
            xx = float(x @ x)
            r = y - float(x @ theta)
            shrunk = np.sign(r) * max(abs(r) - lam * c * xx, 0.0)
            return theta + x * ((r - shrunk) / xx)
        if flat.norm_coef:
            nrm = np.linalg.norm(theta)
            t = lam * flat.norm_coef
            return np.zeros(d) if nrm <= t else (1.0 - t / nrm) * theta
        return flat.sets[0].project(theta)
    P = Problem(flat, W=np.eye(d) / lam, u=theta / lam, w0=float(theta @ theta) / (2 * lam))
    res = solve(P, z0=theta, tol=tol * max(1.0, np.linalg.norm(theta) / lam), max_iter=max_iter)
    if not res.converged:
        raise ConvergenceError(
            f"inner splitting for prox did not converge (residual {res.residual:.3e})",
            residual=res.residual, iterations=res.iterations,
        )
    z = res.theta
    if len(flat.sets) == 1:
        z = flat.sets[0].project(z)
    return z
