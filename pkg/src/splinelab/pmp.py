"""Maximum-principle machinery in split variables on a chart geometry.

A phase point of T*(TQ) is written ``(x, v, p, alpha)``: ``x`` the chart
point, ``v`` the velocity, and ``p``/``alpha`` the horizontal/vertical
costates obtained by splitting with the Levi-Civita connection.  In these
variables the optimal Hamiltonian is ``<p, v> + Leg(c)(|alpha|^2)`` while
the symplectic form picks up connection and curvature terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, SingularControlError
from .geometry import ChartGeometry

SINGULAR_ALPHA = 1e-10


@dataclass(frozen=True)
class SplitState:
    x: np.ndarray
    v: np.ndarray
    p: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("x", "v", "p", "alpha"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise InputError(f"{name} must be a 1-d array")
            object.__setattr__(self, name, arr)
        n = self.x.size
        if not (self.v.size == self.p.size == self.alpha.size == n):
            raise InputError("x, v, p, alpha must have equal length")

    @property
    def dim(self) -> int:
        return self.x.size

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x, self.v, self.p, self.alpha])

    @classmethod
    def unpack(cls, y, dim: int | None = None) -> "SplitState":
        y = np.asarray(y, dtype=float)
        n = dim or y.size // 4
        return cls(y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:4 * n])


@dataclass(frozen=True)
class CanonicalState:
    """Canonical coordinates ``(x, v, p~, alpha~)`` on T*(TQ)."""

    x: np.ndarray
    v: np.ndarray
    p: np.ndarray
    alpha: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x, self.v, self.p, self.alpha])

    @classmethod
    def unpack(cls, y, dim: int | None = None) -> "CanonicalState":
        y = np.asarray(y, dtype=float)
        n = dim or y.size // 4
        return cls(y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:4 * n])


@dataclass(frozen=True)
class Cubic:
    """Cost  integral of beta/2 |u|^2  over a fixed horizon."""

    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError("beta must be positive")

    def cost(self, s: float) -> float:
        """c(|u|^2)."""
        return 0.5 * self.beta * s

    def legendre(self, s: float) -> float:
        """Leg(c)(|alpha|^2)."""
        return s / (2.0 * self.beta)


@dataclass(frozen=True)
class TimeMinimal:
    """Minimum time subject to |u| <= A.  The running cost is the constant 1."""

    A: float = 1.0

    def __post_init__(self):
        if not self.A > 0:
            raise InputError("A must be positive")

    def cost(self, s: float) -> float:
        return 1.0

    def legendre(self, s: float) -> float:
        return -1.0 + self.A * math.sqrt(max(s, 0.0))


CostModel = Cubic | TimeMinimal


def parse_cost(spec: dict) -> CostModel:
    kind = spec.get("kind", "cubic")
    if kind == "cubic":
        return Cubic(float(spec.get("beta", 1.0)))
    if kind in ("time-minimal", "tmin"):
        return TimeMinimal(float(spec.get("A", 1.0)))
    raise InputError(f"unknown cost model {kind!r}")


def _control(cost: CostModel, alpha_sharp: np.ndarray, alpha_sq: float,
             hint: np.ndarray | None = None) -> np.ndarray:
    if isinstance(cost, Cubic):
        return alpha_sharp / cost.beta
    norm = math.sqrt(max(alpha_sq, 0.0))
    if norm < SINGULAR_ALPHA:
        if hint is not None:
            # one-sided limit at a switching instant
            return cost.A * hint
        raise SingularControlError(f"|alpha#| = {norm:.3e} below {SINGULAR_ALPHA:g}: maximizing control not unique")
    return cost.A * alpha_sharp / norm


def optimal_control(geom: ChartGeometry, cost: CostModel, state: SplitState) -> np.ndarray:
    """u* = alpha#/beta (cubic) or A alpha#/|alpha#| (time-minimal)."""
    ginv = geom.cometric(geom.check(state.x))
    a_sharp = ginv @ state.alpha
    return _control(cost, a_sharp, float(state.alpha @ a_sharp))


def optimal_hamiltonian(geom: ChartGeometry, cost: CostModel, state: SplitState) -> float:
    """H* = <p, v> + Leg(c)(g^-1(alpha, alpha))."""
    ginv = geom.cometric(geom.check(state.x))
    return float(state.p @ state.v) + cost.legendre(float(state.alpha @ ginv @ state.alpha))


def split_field(geom: ChartGeometry, cost: CostModel, state: SplitState,
                hint: np.ndarray | None = None) -> SplitState:
    """Hamilton's equations of H* in split variables.

    x' = v
    v'^a = u*^a - G^a_ib v^i v^b
    p'_i = alpha_b R^b_ijk v^j v^k + G^b_ia v^a p_b
    alpha'_a = -p_a + G^b_ia v^i alpha_b

    ``hint`` (a unit vector) is the time-minimal control direction used where
    alpha is within round-off of zero, i.e. exactly at a switching time.
    """
    x = geom.check(state.x)
    v, p, al = state.v, state.p, state.alpha
    G = geom.christoffel(x)
    R = geom.curvature(x)
    ginv = geom.cometric(x)
    a_sharp = ginv @ al
    u = _control(cost, a_sharp, float(al @ a_sharp), hint)
    Gv = np.einsum("bia,a->bi", G, v)  # G^b_ia v^a
    vdot = u - Gv @ v
    pdot = np.einsum("b,bijk,j,k->i", al, R, v, v) + Gv.T @ p
    adot = -p + Gv.T @ al
    return SplitState(v.copy(), vdot, pdot, adot)


def split_vector_field(geom: ChartGeometry, cost: CostModel, hint: np.ndarray | None = None):
    """``f(t, y)`` on packed split states, for :func:`splinelab.ode.integrate`."""
    n = geom.dim

    def f(t, y):
        return split_field(geom, cost, SplitState.unpack(y, n), hint).pack()

    return f


def split_to_canonical(geom: ChartGeometry, state: SplitState) -> CanonicalState:
    """p~_i = p_i + G^k_ij v^j alpha_k; x, v, alpha unchanged."""
    G = geom.christoffel(geom.check(state.x))
    pt = state.p + np.einsum("kij,j,k->i", G, state.v, state.alpha)
    return CanonicalState(state.x.copy(), state.v.copy(), pt, state.alpha.copy())


def canonical_to_split(geom: ChartGeometry, cstate: CanonicalState) -> SplitState:
    G = geom.christoffel(geom.check(cstate.x))
    p = cstate.p - np.einsum("kij,j,k->i", G, cstate.v, cstate.alpha)
    return SplitState(cstate.x.copy(), cstate.v.copy(), p, cstate.alpha.copy())


def canonical_hamiltonian(geom: ChartGeometry, cost: CostModel, cstate: CanonicalState) -> float:
    """Optimal Hamiltonian in canonical coordinates.

    Maximizing  -c + p~.v + alpha~.(u - G(v, v))  over u gives
    Leg(c)(|alpha~|^2) + p~.v - alpha~_k G^k_ij v^i v^j.
    """
    x = geom.check(cstate.x)
    G = geom.christoffel(x)
    ginv = geom.cometric(x)
    s = float(cstate.alpha @ ginv @ cstate.alpha)
    return (cost.legendre(s) + float(cstate.p @ cstate.v)
            - float(np.einsum("k,kij,i,j->", cstate.alpha, G, cstate.v, cstate.v)))


def _as_variation(X, n):
    if isinstance(X, SplitState):
        return X.x, X.v, X.p, X.alpha
    X = np.asarray(X, dtype=float)
    return X[:n], X[n:2 * n], X[2 * n:3 * n], X[3 * n:4 * n]


def symplectic_form_split(geom: ChartGeometry, state: SplitState, X, Y) -> float:
    """Evaluate the pulled-back canonical 2-form on two tangent variations.

    Omega = dx^i ^ dp_i + (dv^a + G^a_ib v^b dx^i) ^ (dalpha_a - G^c_ja alpha_c dx^j)
            - 1/2 R^b_ija v^a alpha_b dx^i ^ dx^j

    ``X`` and ``Y`` are ``(dx, dv, dp, dalpha)`` packed or as SplitState.
    Intended for verification, not for integration.
    """
    x = geom.check(state.x)
    n = geom.dim
    G = geom.christoffel(x)
    R = geom.curvature(x)
    Xx, Xv, Xp, Xa = _as_variation(X, n)
    Yx, Yv, Yp, Ya = _as_variation(Y, n)
    v, al = state.v, state.alpha
    Gv = np.einsum("aib,b->ai", G, v)  # G^a_ib v^b
    Gal = np.einsum("cja,c->aj", G, al)  # G^c_ja alpha_c
    hX, hY = Xv + Gv @ Xx, Yv + Gv @ Yx
    wX, wY = Xa - Gal @ Xx, Ya - Gal @ Yx
    Rva = np.einsum("bija,a,b->ij", R, v, al)
    return float(Xx @ Yp - Yx @ Xp + hX @ wY - hY @ wX - Xx @ Rva @ Yx)


def canonical_symplectic_form(X, Y, n: int) -> float:
    """dx ^ dp~ + dv ^ dalpha~ on packed canonical variations."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    return float(X[:n] @ Y[2 * n:3 * n] - Y[:n] @ X[2 * n:3 * n]
                 + X[n:2 * n] @ Y[3 * n:] - Y[n:2 * n] @ X[3 * n:])


def covariant_derivative_fd(geom: ChartGeometry, xs, ws, vel, h: float) -> np.ndarray:
    """nabla_{x'} w at the middle sample of a three-point stencil.

    ``xs``/``ws`` hold the curve point and vector field at ``t - h, t, t + h``;
    ``vel`` is the curve velocity at ``t``.
    """
    dw = (ws[2] - ws[0]) / (2.0 * h)
    G = geom.christoffel(xs[1])
    return dw + np.einsum("aij,i,j->a", G, vel, ws[1])


def spline_law_residual(geom: ChartGeometry, curve, t: float, h: float = 1e-3) -> float:
    """Norm of nabla^3 x' + R(nabla x', x') x' at time ``t`` by finite differences.

    ``curve(s) -> (x, v)`` must return chart position and velocity; only these
    are used, so the check is independent of the costates.  Seven samples
    ``t + k h, |k| <= 3`` are taken.
    """
    pts = {k: curve(t + k * h) for k in range(-3, 4)}
    X = {k: np.asarray(pts[k][0], float) for k in pts}
    V = {k: np.asarray(pts[k][1], float) for k in pts}

    def nabla(W, k):
        return covariant_derivative_fd(geom, [X[k - 1], X[k], X[k + 1]], [W[k - 1], W[k], W[k + 1]], V[k], h)

    A = {k: nabla(V, k) for k in range(-2, 3)}
    J = {k: nabla(A, k) for k in range(-1, 2)}
    K = nabla(J, 0)
    R = geom.curvature(X[0])
    res = K + np.einsum("lijk,i,j,k->l", R, A[0], V[0], V[0])
    return float(math.sqrt(max(res @ geom.metric(X[0]) @ res, 0.0)))
