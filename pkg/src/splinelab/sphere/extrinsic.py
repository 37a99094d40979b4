"""Extrinsic description of cubic splines on the sphere of radius r in R^{n+1}.

State ``(x0, x1, x2, x3)`` = position, velocity, alpha-costate and minus the
p-costate, all ambient vectors with ``x1, x2, x3`` tangent at ``x0``.  The
radius enters the curvature terms as ``1/r^2``; ``r`` is carried explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConstraintDriftError, InputError, VelocitySingularityError
from .reduced import ReducedS2State

DRIFT_LIMIT = 1e-4
RADIUS_TOL = 1e-8


@dataclass(frozen=True)
class ExtrinsicSphereState:
    x0: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    r: float = 1.0

    def __post_init__(self):
        vecs = [np.asarray(getattr(self, k), dtype=float) for k in ("x0", "x1", "x2", "x3")]
        if any(v.ndim != 1 or v.shape != vecs[0].shape for v in vecs) or vecs[0].size < 2:
            raise InputError("x0..x3 must be ambient vectors of equal length >= 2")
        if not self.r > 0:
            raise InputError("r must be positive")
        for k, v in zip(("x0", "x1", "x2", "x3"), vecs):
            object.__setattr__(self, k, v)

    @property
    def ambient_dim(self) -> int:
        return self.x0.size

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x0, self.x1, self.x2, self.x3])

    @classmethod
    def unpack(cls, y, r: float = 1.0) -> "ExtrinsicSphereState":
        y = np.asarray(y, dtype=float)
        m = y.size // 4
        return cls(y[:m], y[m:2 * m], y[2 * m:3 * m], y[3 * m:], r)

    @classmethod
    def from_split(cls, x, v, p, alpha, r: float = 1.0) -> "ExtrinsicSphereState":
        """x = x0, v = x1, alpha = x2, p = -x3."""
        return cls(np.asarray(x, float), np.asarray(v, float), np.asarray(alpha, float),
                   -np.asarray(p, float), r)

    @property
    def p(self) -> np.ndarray:
        return -self.x3

    @property
    def alpha(self) -> np.ndarray:
        return self.x2


def constraint_residuals(state: ExtrinsicSphereState) -> np.ndarray:
    """(|x0| - r, x0.x1, x0.x2, x0.x3)."""
    x0 = state.x0
    return np.array([np.linalg.norm(x0) - state.r, x0 @ state.x1, x0 @ state.x2, x0 @ state.x3])


def crouch_leite_field(state: ExtrinsicSphereState, beta: float = 1.0,
                       drift_limit: float = DRIFT_LIMIT) -> ExtrinsicSphereState:
    """Crouch-Leite equations on the sphere of radius r.

    x0' = x1
    x1' = x2/beta - |x1|^2 x0 / r^2
    x2' = x3 - (x2.x1) x0 / r^2
    x3' = -(x3.x1) x0 / r^2 + ((x2.x1) x1 - |x1|^2 x2) / r^2
    """
    drift = float(np.max(np.abs(constraint_residuals(state))))
    if not drift <= drift_limit:
        raise ConstraintDriftError(f"constraint drift {drift:.3e} exceeds {drift_limit:g}")
    x0, x1, x2, x3 = state.x0, state.x1, state.x2, state.x3
    k = 1.0 / state.r**2
    v2 = x1 @ x1
    d21 = x2 @ x1
    return ExtrinsicSphereState(
        x1.copy(),
        x2 / beta - k * v2 * x0,
        x3 - k * d21 * x0,
        -k * (x3 @ x1) * x0 + k * (d21 * x1 - v2 * x2),
        state.r,
    )


def crouch_leite_vector_field(beta: float = 1.0, r: float = 1.0, drift_limit: float = DRIFT_LIMIT):
    """``f(t, y)`` on packed states; same equations and drift check as :func:`crouch_leite_field`."""
    if not r > 0:
        raise InputError("r must be positive")
    k = 1.0 / (r * r)

    def f(t, y):
        # every inner product comes from the Gram matrix; the field is linear in the rows of X
        X = np.asarray(y, dtype=float).reshape(4, -1)
        G = (X @ X.T).tolist()
        drift = max(abs(math.sqrt(G[0][0]) - r), abs(G[0][1]), abs(G[0][2]), abs(G[0][3]))
        if not drift <= drift_limit:
            raise ConstraintDriftError(f"constraint drift {drift:.3e} exceeds {drift_limit:g}")
        v2, d21, d31 = G[1][1], G[2][1], G[3][1]
        C = np.array([
            [0.0, 1.0, 0.0, 0.0],
            [-k * v2, 0.0, 1.0 / beta, 0.0],
            [-k * d21, 0.0, 0.0, 1.0],
            [-k * d31, k * d21, -k * v2, 0.0],
        ])
        return (C @ X).ravel()

    return f


def extrinsic_hamiltonian(state: ExtrinsicSphereState, beta: float = 1.0) -> float:
    """H = |alpha|^2/(2 beta) + <p, v> = |x2|^2/(2 beta) - x3.x1."""
    return float(state.x2 @ state.x2 / (2 * beta) - state.x3 @ state.x1)


def extrinsic_split_vars(x, v, p_tilde, alpha_tilde, r: float = 1.0):
    """Split costates from ambient canonical costates.

    alpha = alpha~ - <alpha~, x> x / r^2
    p     = p~_par - (<alpha~, x> / r^2) v,   p~_par = p~ - <p~, x> x / r^2
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    pt = np.asarray(p_tilde, float)
    at = np.asarray(alpha_tilde, float)
    if abs(np.linalg.norm(x) - r) > RADIUS_TOL * max(1.0, r):
        raise InputError(f"|x| = {np.linalg.norm(x)!r} differs from r = {r!r}")
    r2 = r * r
    ax = at @ x
    alpha = at - ax * x / r2
    p = pt - (pt @ x) * x / r2 - (ax / r2) * v
    return p, alpha


def project_to_constraints(state: ExtrinsicSphereState) -> ExtrinsicSphereState:
    """Nearest point on the constraint manifold: rescale x0, strip normal parts."""
    x0 = state.x0 * (state.r / np.linalg.norm(state.x0))
    n = x0 / state.r

    def tan(w):
        return w - (w @ n) * n

    return ExtrinsicSphereState(x0, tan(state.x1), tan(state.x2), tan(state.x3), state.r)


def gauss_frame(x, v, r: float = 1.0) -> np.ndarray:
    """Rotation with columns e1 = v/|v|, e2 = e3 x e1, e3 = x/r."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    speed = float(np.linalg.norm(v))
    if speed == 0.0:
        raise VelocitySingularityError("frame undefined at zero velocity")
    e1 = v / speed
    e3 = x / r
    return np.column_stack([e1, np.cross(e3, e1), e3])


def poisson_project(x, v, p, alpha, r: float = 1.0) -> ReducedS2State:
    """Map split data on S^2 to reduced variables (v, a, M).

    With e1 = v/|v|, e3 = x/r, e2 = e3 x e1:
    a = alpha.e1, M1 = -r p.e2, M2 = r p.e1, M3 = |v| alpha.e2.
    For r = 1 these are det(p, e1, x), p.e1 and det(alpha, x, v).
    """
    x, v, p, alpha = (np.asarray(w, float) for w in (x, v, p, alpha))
    if x.shape != (3,):
        raise InputError("the Poisson map is defined on S^2 only")
    R = gauss_frame(x, v, r)
    e1, e2 = R[:, 0], R[:, 1]
    speed = float(np.linalg.norm(v))
    return ReducedS2State(speed, float(alpha @ e1),
                          np.array([-r * (p @ e2), r * (p @ e1), speed * (alpha @ e2)]))


def project_state(state: ExtrinsicSphereState) -> ReducedS2State:
    return poisson_project(state.x0, state.x1, state.p, state.alpha, state.r)


def poisson_lift(red: ReducedS2State, R=None, r: float = 1.0) -> ExtrinsicSphereState:
    """Right inverse of :func:`poisson_project` on the orbit through frame ``R``.

    In the body frame alpha = (a, M3/v, 0) and p = (M2/r, -M1/r, 0); x = r R e3,
    velocity = v R e1.
    """
    R = np.eye(3) if R is None else np.asarray(R, float)
    v = red.v
    if v == 0.0:
        raise VelocitySingularityError("cannot lift a reduced state with v = 0")
    M1, M2, M3 = red.M
    alpha = R @ np.array([red.a, M3 / v, 0.0])
    p = R @ np.array([M2 / r, -M1 / r, 0.0])
    return ExtrinsicSphereState(r * R[:, 2], v * R[:, 0], alpha, -p, r)


def random_tangent_state(rng: np.random.Generator, n: int = 2, r: float = 1.0,
                         scale: float = 1.0, min_speed: float = 0.0) -> ExtrinsicSphereState:
    """Random point on the constraint manifold in R^{n+1}; |x1| >= min_speed."""
    x0 = rng.normal(size=n + 1)
    x0 *= r / np.linalg.norm(x0)
    e = x0 / r

    def tan():
        w = rng.normal(size=n + 1) * scale
        return w - (w @ e) * e

    x1 = tan()
    s = np.linalg.norm(x1)
    if s < min_speed:
        x1 *= min_speed / max(s, 1e-300)
    return ExtrinsicSphereState(x0, x1, tan(), tan(), r)


def geodesic_distance(q0, q1, r: float = 1.0) -> float:
    c = float(np.clip(np.asarray(q0) @ np.asarray(q1) / (r * r), -1.0, 1.0))
    return r * math.acos(c)


def spline_law_residual_extrinsic(curve, t: float, r: float = 1.0, h: float = 1e-3) -> float:
    """|nabla^3 x' + K(|x'|^2 nabla x' - <nabla x', x'> x')| at ``t``, K = 1/r^2.

    ``curve(s) -> (x, v)`` gives ambient position and velocity; the covariant
    derivative is the tangential part of the ambient derivative, evaluated by
    central differences on seven samples.
    """
    pts = {k: curve(t + k * h) for k in range(-3, 4)}
    X = {k: np.asarray(pts[k][0], float) for k in pts}
    V = {k: np.asarray(pts[k][1], float) for k in pts}

    def nabla(W, k):
        d = (W[k + 1] - W[k - 1]) / (2.0 * h)
        n = X[k] / np.linalg.norm(X[k])
        return d - (d @ n) * n

    A = {k: nabla(V, k) for k in range(-2, 3)}
    J = {k: nabla(A, k) for k in range(-1, 2)}
    Kd = nabla(J, 0)
    v, a = V[0], A[0]
    res = Kd + ((v @ v) * a - (a @ v) * v) / r**2
    return float(np.linalg.norm(res))
