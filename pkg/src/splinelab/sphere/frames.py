"""Gauss-frame reconstruction of curves on S^2 from reduced solutions.

A nonzero tangent vector at a point of the sphere of radius r is encoded as
``(v, R)`` with R in SO(3) having columns ``e1`` (unit velocity), ``e2 = e3 x e1``
and ``e3`` (outward normal).  Along a spline ``R' = R X`` with
``X = hat(Omega)`` and ``Omega = (0, v/r, u2/v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError, VelocitySingularityError
from ..ode import IntegratorConfig, Trajectory, integrate
from .reduced import V_MIN, ReducedS2State, reduced_field_cartesian, reduced_hamiltonian

ORTHO_TOL = 1e-8


def hat(w) -> np.ndarray:
    w1, w2, w3 = w
    return np.array([[0.0, -w3, w2], [w3, 0.0, -w1], [-w2, w1, 0.0]])


def body_angular_velocity(v: float, u2: float, r: float) -> np.ndarray:
    if v == 0.0:
        raise VelocitySingularityError("Omega undefined at v = 0")
    return np.array([0.0, v / r, u2 / v])


def optimal_u2(v: float, M3: float, beta: float) -> float:
    """u2* = M3 / (beta v)."""
    return M3 / (beta * v)


@dataclass(frozen=True)
class FrameState:
    R: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(3))

    @property
    def orthogonality_error(self) -> float:
        return orthogonality_error(self.R)


def orthogonality_error(R) -> float:
    R = np.asarray(R, float)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def nearest_rotation(R) -> np.ndarray:
    """Orthogonal polar factor of R (closest rotation in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, float))
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def darboux_state_matrix(v: float, u2: float, r: float | None = None, *,
                         normal_curvature: float | None = None,
                         geodesic_torsion: float = 0.0) -> np.ndarray:
    """State matrix X of R' = R X for a curve on a convex surface.

    X = [[0, -u2/v, -v kn], [u2/v, 0, -v tg], [v kn, v tg, 0]]

    kn is the normal curvature B(e1, e1) measured along the outward normal e3,
    so on the sphere of radius r it is -1/r; the geodesic torsion vanishes on
    umbilic surfaces.
    """
    if v == 0.0:
        raise VelocitySingularityError("state matrix undefined at v = 0")
    if normal_curvature is None:
        if r is None:
            raise InputError("give r or an explicit normal curvature")
        normal_curvature = -1.0 / r
    kn, tg = normal_curvature, geodesic_torsion
    return np.array([
        [0.0, -u2 / v, -v * kn],
        [u2 / v, 0.0, -v * tg],
        [v * kn, v * tg, 0.0],
    ])


def reconstruction_field(frame: FrameState | np.ndarray, v: float, u2: float, r: float,
                         ortho_tol: float | None = None) -> np.ndarray:
    """R' = R hat(Omega) with Omega = (0, v/r, u2/v).

    With ``ortho_tol`` set, raises InputError if R has drifted further than that
    from SO(3) (callers then reproject).
    """
    R = frame.R if isinstance(frame, FrameState) else np.asarray(frame, float)
    if ortho_tol is not None and orthogonality_error(R) > ortho_tol:
        raise InputError("frame is not orthogonal to tolerance; reproject first")
    return R @ hat(body_angular_velocity(v, u2, r))


def coupled_field(beta: float, r: float, v_min: float | None = None):
    """Field on ``(v, a, M1, M2, M3, R row-major)``: reduced equations plus R' = R X."""
    vmin = V_MIN * r if v_min is None else v_min

    def f(t, y):
        dred = reduced_field_cartesian(y[:5], beta, r, vmin)
        R = y[5:].reshape(3, 3)
        v, M3 = y[0], y[4]
        dR = R @ hat((0.0, v / r, M3 / (beta * v * v)))
        return np.concatenate([dred, dR.ravel()])

    return f


# -- the 13-variable system of the reference program -------------------------

def frame_angles_field(mu: float, beta: float, r: float, v_min: float | None = None):
    """13-variable field (e3, e1, e2, v, a, theta, phi) with M = mu(cos phi cos theta, sin phi, cos phi sin theta).

    Both the e1 equation and the a equation use the consistent forms
    e1' = (u2/v) e2 - (v/r) e3 and a' = -M2/r + M3^2/(beta v^3).
    """
    vmin = V_MIN * r if v_min is None else v_min

    def f(t, b):
        v, a, th, ph = b[9], b[10], b[11], b[12]
        if not abs(v) > vmin:
            raise VelocitySingularityError(f"|v| = {abs(v):.3e} <= v_min")
        vr = v / r
        vb = beta * v * v
        s, c = math.sin(th), math.cos(th)
        cp, sp = math.cos(ph), math.sin(ph)
        m3 = mu * cp * s
        e3, e1, e2 = b[0:3], b[3:6], b[6:9]
        out = np.empty(13)
        out[0:3] = vr * e1
        out[3:6] = m3 * e2 / vb - e3 * vr
        out[6:9] = -m3 * e1 / vb
        out[9] = a / beta
        out[10] = -mu * sp / r + mu * mu * cp * cp * s * s / (beta * v**3)
        out[11] = vr - mu * s * s * sp / vb
        out[12] = -mu * cp * s * c / vb
        return out

    return f


def frame_angles_initial_state(mu: float = 2.0, beta: float = 1.0, r: float = 2.0) -> np.ndarray:
    """R = I, v^3 = mu r / (beta sqrt 2), a = 0, theta = pi/2, phi = pi/4."""
    z = np.zeros(13)
    z[2] = z[3] = z[7] = 1.0
    z[9] = (mu * r / (beta * math.sqrt(2.0))) ** (1.0 / 3.0)
    z[11] = math.pi / 2
    z[12] = math.pi / 4
    return z


def frame_angles_config() -> IntegratorConfig:
    return IntegratorConfig(tol=1e-13, h0=0.01, hmin=1e-8, hmax=0.1)


# -- reconstruction driver ---------------------------------------------------

@dataclass(frozen=True)
class ReconstructedTrajectory:
    t: np.ndarray
    reduced: np.ndarray  # (N, 5) rows (v, a, M1, M2, M3)
    frames: np.ndarray  # (N, 3, 3)
    r: float
    beta: float
    reprojections: int = 0
    switches: tuple = ()

    @property
    def gamma(self) -> np.ndarray:
        return self.r * self.frames[:, :, 2]

    @property
    def velocity(self) -> np.ndarray:
        return self.reduced[:, :1] * self.frames[:, :, 0]

    @property
    def u2(self) -> np.ndarray:
        return self.reduced[:, 4] / (self.beta * self.reduced[:, 0])

    def hamiltonian(self) -> np.ndarray:
        return np.array([reduced_hamiltonian(y, self.beta, self.r) for y in self.reduced])

    def casimir(self) -> np.ndarray:
        return np.sum(self.reduced[:, 2:5] ** 2, axis=1)

    def orthogonality_drift(self) -> float:
        return max(orthogonality_error(R) for R in self.frames)


def reconstruct_trajectory(state0: ReducedS2State, R0=None, t_span=(0.0, 1.0), *, beta: float = 1.0,
                           r: float = 1.0, cfg: IntegratorConfig | None = None, t_eval=None,
                           reproject: bool = False, ortho_tol: float = ORTHO_TOL) -> ReconstructedTrajectory:
    """Integrate the reduced system together with R' = R X.

    The nine entries of R are integrated as raw unknowns.  With ``reproject``
    the integration is split at the ``t_eval`` nodes and R is replaced by its
    nearest rotation whenever ``|R^T R - I|`` exceeds ``ortho_tol``.
    """
    R0 = np.eye(3) if R0 is None else np.asarray(R0, float)
    cfg = cfg or IntegratorConfig()
    f = coupled_field(beta, r)
    y0 = np.concatenate([state0.pack(), R0.ravel()])
    if not reproject:
        traj = integrate(f, y0, t_span, cfg, t_eval=t_eval)
        return _package(traj.t, traj.y, r, beta)

    nodes = np.asarray(t_eval if t_eval is not None else np.linspace(*t_span, 101), float)
    if nodes[0] != t_span[0]:
        nodes = np.concatenate([[t_span[0]], nodes])
    ts, ys, count = [nodes[0]], [y0], 0
    y = y0
    for t0, t1 in zip(nodes[:-1], nodes[1:]):
        y = integrate(f, y, (t0, t1), cfg).y_final.copy()
        R = y[5:].reshape(3, 3)
        if orthogonality_error(R) > ortho_tol:
            y[5:] = nearest_rotation(R).ravel()
            count += 1
        ts.append(t1)
        ys.append(y)
    return _package(np.array(ts), np.array(ys), r, beta, count)


def _package(t, y, r, beta, count=0) -> ReconstructedTrajectory:
    return ReconstructedTrajectory(np.asarray(t), y[:, :5].copy(), y[:, 5:].reshape(-1, 3, 3).copy(),
                                   r, beta, count)


def reconstruct_from_trajectory(traj: Trajectory, R0=None, *, beta: float, r: float,
                                cfg: IntegratorConfig | None = None) -> ReconstructedTrajectory:
    """Reconstruct frames along a sampled reduced trajectory at its sample times."""
    state0 = ReducedS2State.unpack(traj.y[0])
    return reconstruct_trajectory(state0, R0, (traj.t[0], traj.t[-1]), beta=beta, r=r, cfg=cfg,
                                  t_eval=traj.t)


def figure_eight_circle(t, v: float, r: float, sign: int = 1) -> np.ndarray:
    """Closed-form curve of the equilibrium with M3 = sign beta v^3/r and R(0) = I.

    gamma(t) = r (sqrt2/2 sin s, sign (1 - cos s)/2, (1 + cos s)/2), s = sqrt2 v t / r:
    a small circle of radius r/sqrt2 through the north pole.
    """
    s = math.sqrt(2.0) * v * np.asarray(t, float) / r
    return r * np.stack([np.sin(s) / math.sqrt(2.0), sign * 0.5 * (1 - np.cos(s)), 0.5 * (1 + np.cos(s))], axis=-1)


def geodesic_curvature(gamma_dot, gamma_ddot, normal) -> float:
    """kappa_g = n . (gamma' x gamma'') / |gamma'|^3."""
    gd = np.asarray(gamma_dot, float)
    return float(np.asarray(normal) @ np.cross(gd, gamma_ddot) / np.linalg.norm(gd) ** 3)


def geodesic_curvature_fd(curve, t: float, r: float, h: float = 1e-3) -> float:
    """Geodesic curvature of ``curve(t) -> gamma`` by fourth-order central differences."""
    g = [np.asarray(curve(t + k * h), float) for k in (-2, -1, 0, 1, 2)]
    d1 = (g[0] - 8 * g[1] + 8 * g[3] - g[4]) / (12 * h)
    d2 = (-g[0] + 16 * g[1] - 30 * g[2] + 16 * g[3] - g[4]) / (12 * h * h)
    return geodesic_curvature(d1, d2, g[2] / r)
