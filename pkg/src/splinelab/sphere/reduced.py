"""SO(3)-reduced cubic-spline dynamics on S^2.

Reduced phase space: speed ``v``, its conjugate ``a`` and the left-trivialized
momentum ``M = (M1, M2, M3)`` with Lie-Poisson bracket.  ``|M|^2 = mu^2`` is a
Casimir.  On a level ``mu`` the alternative coordinates ``(v, a, theta, z)``
with ``M = mu (cos(phi) cos(theta), sin(phi), cos(phi) sin(theta))`` and
``z = sin(phi)`` are used for sections and linearization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError, VelocitySingularityError
from ..ode import Trajectory

V_MIN = 1e-6


@dataclass(frozen=True)
class ReducedParams:
    beta: float = 1.0
    r: float = 1.0
    v_min: float | None = None

    def __post_init__(self):
        if not (self.beta > 0 and self.r > 0):
            raise InputError("beta and r must be positive")

    @property
    def vmin(self) -> float:
        return V_MIN * self.r if self.v_min is None else self.v_min


@dataclass(frozen=True)
class ReducedS2State:
    v: float
    a: float
    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.shape != (3,):
            raise InputError("M must have three components")
        object.__setattr__(self, "M", M)

    @property
    def casimir(self) -> float:
        """|M|^2."""
        return float(self.M @ self.M)

    @property
    def mu(self) -> float:
        return math.sqrt(self.casimir)

    def pack(self) -> np.ndarray:
        return np.array([self.v, self.a, *self.M])

    @classmethod
    def unpack(cls, y) -> "ReducedS2State":
        return cls(float(y[0]), float(y[1]), np.array(y[2:5], dtype=float))


def _check_speed(v: float, vmin: float):
    if not abs(v) > vmin:
        raise VelocitySingularityError(f"|v| = {abs(v):.3e} <= v_min = {vmin:.3e}")


def reduced_hamiltonian(y, beta: float, r: float) -> float:
    """H* = (a^2 + (M3/v)^2) / (2 beta) + M2 v / r."""
    v, a, _, M2, M3 = y[:5]
    return (a * a + (M3 / v) ** 2) / (2.0 * beta) + M2 * v / r


def casimir(y) -> float:
    return float(y[2] ** 2 + y[3] ** 2 + y[4] ** 2)


def reduced_field_cartesian(y, beta: float, r: float, v_min: float | None = None) -> np.ndarray:
    """Time derivative of packed ``(v, a, M1, M2, M3)``."""
    v, a, M1, M2, M3 = y[:5]
    _check_speed(v, V_MIN * r if v_min is None else v_min)
    bv2 = beta * v * v
    return np.array([
        a / beta,
        -M2 / r + M3 * M3 / (bv2 * v),
        M2 * M3 / bv2 - M3 * v / r,
        -M1 * M3 / bv2,
        M1 * v / r,
    ])


def reduced_vector_field(params: ReducedParams):
    beta, r, vmin = params.beta, params.r, params.vmin

    def f(t, y):
        return reduced_field_cartesian(y, beta, r, vmin)

    return f


def tmin_reduced_hamiltonian(y, A: float, r: float) -> float:
    """H* = -1 + A sqrt(a^2 + M3^2/v^2) + M2 v / r (time-minimal cost)."""
    v, a, _, M2, M3 = y[:5]
    return -1.0 + A * math.sqrt(a * a + (M3 / v) ** 2) + M2 * v / r


def tmin_reduced_controls(y, A: float) -> np.ndarray:
    """(u1, u2) = A (a, M3/v) / sqrt(a^2 + M3^2/v^2)."""
    from ..errors import SingularControlError
    from ..pmp import SINGULAR_ALPHA

    v, a, _, _, M3 = y[:5]
    rho = math.hypot(a, M3 / v)
    if rho < SINGULAR_ALPHA:
        raise SingularControlError("time-minimal reduced control undefined at a = M3 = 0")
    return A * np.array([a, M3 / v]) / rho


def tmin_reduced_field(y, A: float, r: float, v_min: float | None = None) -> np.ndarray:
    """Reduced equations for the time-minimal Hamiltonian."""
    v, a, M1, M2, M3 = y[:5]
    _check_speed(v, V_MIN * r if v_min is None else v_min)
    u1, u2 = tmin_reduced_controls(y, A)
    # dH/dM3 = u2 / v, dH/dv = M2/r - u2 M3 / v^2
    w = np.array([0.0, v / r, u2 / v])
    M = np.array([M1, M2, M3])
    return np.concatenate([[u1, -(M2 / r - u2 * M3 / (v * v))], np.cross(M, w)])


def momentum_convert(mu: float, theta: float, z: float) -> np.ndarray:
    """M = mu (cos(phi) cos(theta), sin(phi), cos(phi) sin(theta)), z = sin(phi)."""
    if abs(z) > 1.0:
        raise InputError(f"|z| = {abs(z)} > 1")
    c = math.sqrt(max(0.0, 1.0 - z * z))
    return mu * np.array([c * math.cos(theta), z, c * math.sin(theta)])


def momentum_invert(M) -> tuple[float, float, float]:
    """Inverse of :func:`momentum_convert`, returns ``(mu, theta, z)`` with mu > 0."""
    M1, M2, M3 = (float(m) for m in M)
    mu = math.sqrt(M1 * M1 + M2 * M2 + M3 * M3)
    if mu == 0.0:
        raise InputError("M = 0 has no spherical coordinates")
    if M1 == 0.0 and M3 == 0.0:
        raise InputError("theta undefined at M1 = M3 = 0")
    return mu, math.atan2(M3, M1), max(-1.0, min(1.0, M2 / mu))


def reduced_hamiltonian_spherical(y, beta: float, r: float, mu: float) -> float:
    """H = a^2/(2 beta) + mu^2 (1 - z^2) sin^2(theta) / (2 beta v^2) + mu z v / r."""
    v, a, th, z = y[:4]
    s = math.sin(th)
    return a * a / (2 * beta) + mu * mu * (1 - z * z) * s * s / (2 * beta * v * v) + mu * z * v / r


def reduced_field_spherical(y, beta: float, r: float, mu: float, v_min: float | None = None) -> np.ndarray:
    """Time derivative of ``(v, a, theta, z)`` on the momentum sphere of radius mu."""
    v, a, th, z = y[:4]
    _check_speed(v, V_MIN * r if v_min is None else v_min)
    if abs(z) > 1.0 + 1e-12:
        raise InputError(f"|z| = {abs(z)} > 1")
    s, c = math.sin(th), math.cos(th)
    k = mu / beta
    return np.array([
        a / beta,
        mu * (-z / r + k * (1 - z * z) * s * s / v**3),
        v / r - k * z * s * s / (v * v),
        k * s * c * (z - 1) * (z + 1) / (v * v),
    ])


def spherical_vector_field(params: ReducedParams, mu: float):
    beta, r, vmin = params.beta, params.r, params.vmin

    def f(t, y):
        return reduced_field_spherical(y, beta, r, mu, vmin)

    return f


def spherical_to_cartesian(y, mu: float) -> np.ndarray:
    v, a, th, z = y[:4]
    return np.concatenate([[v, a], momentum_convert(mu, th, z)])


def cartesian_to_spherical(y) -> tuple[np.ndarray, float]:
    mu, th, z = momentum_invert(y[2:5])
    return np.array([y[0], y[1], th, z]), mu


def fixed_points(v: float, beta: float, r: float) -> tuple[ReducedS2State, ReducedS2State]:
    """The two equilibria at speed v: a = 0, M = (0, beta v^3/r, +-beta v^3/r)."""
    if not v > 0:
        raise InputError("fixed points are parametrized by v > 0")
    m = beta * v**3 / r
    return (ReducedS2State(v, 0.0, np.array([0.0, m, m])),
            ReducedS2State(v, 0.0, np.array([0.0, m, -m])))


def equilibrium_mu(v: float, beta: float, r: float) -> float:
    return math.sqrt(2.0) * beta * v**3 / r


def equilibrium_energy(v: float, beta: float, r: float) -> float:
    """h* = (3/2) beta v^4 / r^2."""
    return 1.5 * beta * v**4 / r**2


def equilibrium_speed(mu: float, beta: float, r: float) -> float:
    """Inverse of :func:`equilibrium_mu`: v^3 = mu r / (beta sqrt 2)."""
    return (abs(mu) * r / (beta * math.sqrt(2.0))) ** (1.0 / 3.0)


@dataclass(frozen=True)
class Linearization:
    closed_form: np.ndarray
    jacobian: np.ndarray
    charpoly: np.ndarray
    eigenvalues: np.ndarray


def loxodromic_eigenvalues(v: float, r: float) -> np.ndarray:
    """(v/r) sqrt(2) 3^(1/4) (+-sqrt(1/2 - sqrt3/6) +- i sqrt(1/2 + sqrt3/6))."""
    scale = (v / r) * math.sqrt(2.0) * 3.0**0.25
    re = math.sqrt(0.5 - math.sqrt(3.0) / 6.0)
    im = math.sqrt(0.5 + math.sqrt(3.0) / 6.0)
    return np.array([complex(sr * re, si * im) * scale for sr in (1, -1) for si in (1, -1)])


def characteristic_coefficients(v: float, r: float) -> np.ndarray:
    """[1, 0, 4 v^2/r^2, 0, 12 v^4/r^4] (highest power first)."""
    q = (v / r) ** 2
    return np.array([1.0, 0.0, 4.0 * q, 0.0, 12.0 * q * q])


def numerical_jacobian(f, y, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian with per-component step ``h (1 + |y_j|)``."""
    y = np.asarray(y, dtype=float)
    J = np.empty((len(f(y)), y.size))
    for j in range(y.size):
        e = np.zeros_like(y)
        e[j] = h * (1.0 + abs(y[j]))
        J[:, j] = (f(y + e) - f(y - e)) / (2 * e[j])
    return J


def linearization_eigenvalues(v: float, r: float, beta: float = 1.0, sign: int = 1,
                              h: float = 1e-5) -> Linearization:
    """Closed-form and numerically linearized spectrum at an equilibrium.

    The equilibrium with speed ``v`` is taken on the momentum sphere of radius
    ``mu = sqrt(2) beta v^3 / r``; ``sign`` picks ``M3 = +-beta v^3/r``, i.e.
    ``theta = pi/2`` or ``3 pi/2``.
    """
    if not v > 0:
        raise InputError("v must be positive")
    mu = equilibrium_mu(v, beta, r)
    theta = math.pi / 2 if sign > 0 else 3 * math.pi / 2
    y0 = np.array([v, 0.0, theta, math.sqrt(0.5)])
    J = numerical_jacobian(lambda y: reduced_field_spherical(y, beta, r, mu), y0, h)
    cp = np.real(np.poly(J))
    return Linearization(loxodromic_eigenvalues(v, r), J, cp, np.linalg.eigvals(J))


_SYMMETRIES = {
    # (sign of time, componentwise map on (v, a, M1, M2, M3))
    "reflection": (1.0, np.array([1.0, 1.0, -1.0, 1.0, -1.0])),
    "velocity-reversal": (1.0, np.array([-1.0, -1.0, 1.0, -1.0, -1.0])),
    "time-reversal": (-1.0, np.array([1.0, -1.0, -1.0, 1.0, 1.0])),
}


def apply_symmetry(traj: Trajectory, kind: str) -> Trajectory:
    """Map a sampled reduced trajectory by one of the discrete symmetries.

    reflection:        (v, a, -M1, M2, -M3)
    velocity-reversal: (-v, -a, M1, -M2, -M3)
    time-reversal:     t -> -t with (v, -a, -M1, M2, M3)
    """
    try:
        tsign, S = _SYMMETRIES[kind]
    except KeyError:
        raise InputError(f"unknown symmetry {kind!r}; choose from {sorted(_SYMMETRIES)}") from None
    y = traj.y[:, :5] * S
    f = traj.f[:, :5] * S * tsign
    t = traj.t * tsign
    if tsign < 0:
        t, y, f = t[::-1], y[::-1], f[::-1]
    steps = traj.steps[::-1] if tsign < 0 else traj.steps
    return Trajectory(t.copy(), y.copy(), f.copy(), np.array(steps, dtype=float))


def ode_residual(traj: Trajectory, field) -> float:
    """max_k |y'_k - field(y_k)| using the trajectory's recorded slopes."""
    return max(float(np.max(np.abs(traj.f[k] - field(traj.t[k], traj.y[k])))) for k in range(len(traj)))


def analytic_equator(t, mu: float, r: float, beta: float, a0: float, v0: float, angle0: float = 0.0):
    """Closed-form partial equilibrium M = (0, mu, 0).

    a(t) = a0 - mu t / r,  v(t) = v0 + a0 t / beta - mu t^2 / (2 r beta),
    angle(t) = angle0 + (v0 t + a0 t^2 / (2 beta) - mu t^3 / (6 r beta)) / r,
    gamma(t) = r (sin angle, 0, cos angle) for R(0) = I.

    Raises VelocitySingularityError if v vanishes between 0 and any requested time.
    """
    t = np.asarray(t, dtype=float)
    tt = np.atleast_1d(t)
    span = (min(0.0, float(tt.min())), max(0.0, float(tt.max())))
    # roots of the quadratic v(t) inside the window
    roots = np.roots([-mu / (2 * r * beta), a0 / beta, v0]) if mu != 0 else (
        np.array([-v0 * beta / a0]) if a0 != 0 else np.array([]))
    for root in np.atleast_1d(roots):
        if abs(root.imag) < 1e-14 and span[0] <= root.real <= span[1]:
            raise VelocitySingularityError(f"v vanishes at t = {root.real:.6g} inside the window")
    if v0 == 0.0:
        raise VelocitySingularityError("v0 = 0")
    a = a0 - mu * t / r
    v = v0 + a0 * t / beta - mu * t**2 / (2 * r * beta)
    angle = angle0 + (v0 * t + a0 * t**2 / (2 * beta) - mu * t**3 / (6 * r * beta)) / r
    gamma = r * np.stack([np.sin(angle), np.zeros_like(angle), np.cos(angle)], axis=-1)
    return v, a, angle, gamma
