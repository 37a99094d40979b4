"""Chart-based Riemannian geometry.

Index conventions (all arrays are numpy):

* ``christoffel(x)[k, i, j]``  is  Gamma^k_{ij}
* ``curvature(x)[l, i, j, k]`` is  R^l_{ijk} = <dx^l, R(d_i, d_j) d_k>, with
  R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]
* ``metric_jacobian(x)[i, a, b]`` is  d_i g_{ab}
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InputError


def fd_step(x: np.ndarray) -> float:
    """Central-difference step ``1e-6 * (1 + |x|)``."""
    return 1e-6 * (1.0 + float(np.max(np.abs(x))))


class ChartGeometry:
    """Riemannian metric on an open chart of R^dim.

    Subclasses supply :meth:`metric`, :meth:`metric_jacobian` and
    :meth:`valid`; Christoffel symbols follow from the Koszul formula and the
    curvature from :func:`curvature_from_christoffel`.  Subclasses may
    override any of these with closed forms.
    """

    dim: int = 0
    name: str = "chart"

    def valid(self, x) -> bool:
        return bool(np.all(np.isfinite(x)))

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputError(f"{self.name}: expected a point of shape ({self.dim},), got {x.shape}")
        if not self.valid(x):
            raise DomainError(f"{self.name}: point {x} outside chart domain")
        return x

    def metric(self, x) -> np.ndarray:
        raise NotImplementedError

    def metric_jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def cometric(self, x) -> np.ndarray:
        return np.linalg.inv(self.metric(x))

    def christoffel(self, x) -> np.ndarray:
        x = self.check(x)
        ginv = self.cometric(x)
        dg = self.metric_jacobian(x)
        # Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
        lower = 0.5 * (dg.transpose(0, 1, 2) + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0))
        return np.einsum("kl,ijl->kij", ginv, lower)

    def christoffel_jacobian(self, x) -> np.ndarray | None:
        """``[m, k, i, j] = d_m Gamma^k_ij`` in closed form, or None."""
        return None

    def curvature(self, x) -> np.ndarray:
        return curvature_from_christoffel(self, x)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class FlatSpace(ChartGeometry):
    """Euclidean R^n in Cartesian coordinates."""

    def __init__(self, dim: int):
        if dim < 1:
            raise InputError("dimension must be positive")
        self.dim = int(dim)
        self.name = f"flat:{self.dim}"

    def metric(self, x):
        return np.eye(self.dim)

    def cometric(self, x):
        return np.eye(self.dim)

    def metric_jacobian(self, x):
        return np.zeros((self.dim,) * 3)

    def christoffel(self, x):
        self.check(x)
        return np.zeros((self.dim,) * 3)

    def christoffel_jacobian(self, x):
        return np.zeros((self.dim,) * 4)

    def curvature(self, x):
        self.check(x)
        return np.zeros((self.dim,) * 4)


class SphereChart(ChartGeometry):
    """Round sphere of radius ``r`` in colatitude/longitude coordinates.

    The domain is ``delta < colatitude < pi - delta`` with ``delta = 1e-6``;
    the poles are left to the extrinsic description.
    """

    DELTA = 1e-6

    def __init__(self, r: float = 1.0):
        if not r > 0:
            raise InputError("sphere radius must be positive")
        self.dim = 2
        self.r = float(r)
        self.name = f"sphere-chart:{self.r:g}"

    def valid(self, x):
        return bool(np.all(np.isfinite(x)) and self.DELTA < x[0] < math.pi - self.DELTA)

    def metric(self, x):
        s = math.sin(x[0])
        return self.r**2 * np.diag([1.0, s * s])

    def cometric(self, x):
        s = math.sin(x[0])
        return np.diag([1.0, 1.0 / (s * s)]) / self.r**2

    def metric_jacobian(self, x):
        dg = np.zeros((2, 2, 2))
        dg[0, 1, 1] = self.r**2 * math.sin(2 * x[0])
        return dg

    def christoffel(self, x):
        x = self.check(x)
        s, c = math.sin(x[0]), math.cos(x[0])
        G = np.zeros((2, 2, 2))
        G[0, 1, 1] = -s * c
        G[1, 0, 1] = G[1, 1, 0] = c / s
        return G

    def christoffel_jacobian(self, x):
        s = math.sin(x[0])
        dG = np.zeros((2, 2, 2, 2))
        dG[0, 0, 1, 1] = -math.cos(2 * x[0])
        dG[0, 1, 0, 1] = dG[0, 1, 1, 0] = -1.0 / (s * s)
        return dG

    def analytic_curvature(self, x):
        """R^l_ijk = K (delta^l_i g_jk - delta^l_j g_ik), K = 1/r^2."""
        x = self.check(x)
        g = self.metric(x)
        eye = np.eye(2)
        K = 1.0 / self.r**2
        return K * (np.einsum("li,jk->lijk", eye, g) - np.einsum("lj,ik->lijk", eye, g))

    def curvature(self, x):
        return self.analytic_curvature(x)

    def embed(self, x) -> np.ndarray:
        """Ambient point r (sin t cos p, sin t sin p, cos t)."""
        t, p = x
        return self.r * np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])

    def embed_jacobian(self, x) -> np.ndarray:
        """Columns are the ambient coordinate vectors d/dt, d/dp."""
        t, p = x
        st, ct, sp, cp = math.sin(t), math.cos(t), math.sin(p), math.cos(p)
        return self.r * np.array([[ct * cp, -st * sp], [ct * sp, st * cp], [-st, 0.0]])

    def chart_of(self, X) -> np.ndarray:
        """Chart coordinates of an ambient point (radius is ignored)."""
        X = np.asarray(X, dtype=float)
        rho = np.linalg.norm(X)
        return np.array([math.acos(max(-1.0, min(1.0, X[2] / rho))), math.atan2(X[1], X[0])])


def cauchy_kernel(s):
    """G(s) = 1 / (1 + s^2)."""
    return 1.0 / (1.0 + s * s)


def cauchy_kernel_prime(s):
    return -2.0 * s / (1.0 + s * s) ** 2


class LandmarkConfig:
    """Kernel for the two-landmark cometric on the line."""

    def __init__(self, kernel=cauchy_kernel, kernel_prime=cauchy_kernel_prime):
        self.kernel = kernel
        self.kernel_prime = kernel_prime


class LandmarkLine2(ChartGeometry):
    """Two landmarks on the line with cometric [[1, G], [G, 1]], G = G(x1 - x2).

    The cometric degenerates when the landmarks collide, so the chart
    excludes ``|x1 - x2| <= 1e-9``.
    """

    def __init__(self, cfg: LandmarkConfig | None = None):
        self.cfg = cfg or LandmarkConfig()
        self.dim = 2
        self.name = "landmark-1d-2pt"

    def valid(self, x):
        return bool(np.all(np.isfinite(x)) and abs(x[0] - x[1]) > 1e-9)

    def cometric(self, x):
        G = self.cfg.kernel(x[0] - x[1])
        return np.array([[1.0, G], [G, 1.0]])

    def metric(self, x):
        G = self.cfg.kernel(x[0] - x[1])
        return np.array([[1.0, -G], [-G, 1.0]]) / (1.0 - G * G)

    def cometric_jacobian(self, x):
        dG = self.cfg.kernel_prime(x[0] - x[1])
        base = np.array([[0.0, 1.0], [1.0, 0.0]])
        return np.stack([dG * base, -dG * base])

    def metric_jacobian(self, x):
        g = self.metric(x)
        dk = self.cometric_jacobian(x)
        return -np.einsum("ab,ibc,cd->iad", g, dk, g)


def landmark_geodesic_field(cfg: LandmarkConfig, state) -> np.ndarray:
    """Hamilton's equations of 2H = p1^2 + p2^2 + 2 G(x1 - x2) p1 p2.

    ``state`` is ``(x1, x2, p1, p2)``; returns its time derivative.
    """
    x1, x2, p1, p2 = state
    s = x1 - x2
    G = cfg.kernel(s)
    dG = cfg.kernel_prime(s)
    return np.array([
        p1 + G * p2,
        p2 + G * p1,
        -dG * p1 * p2,
        dG * p1 * p2,
    ])


def landmark_hamiltonian(cfg: LandmarkConfig, state) -> float:
    x1, x2, p1, p2 = state
    return 0.5 * (p1 * p1 + p2 * p2) + cfg.kernel(x1 - x2) * p1 * p2


def _christoffel_derivative(geom: ChartGeometry, x: np.ndarray) -> np.ndarray:
    dG = geom.christoffel_jacobian(x)
    if dG is not None:
        return dG
    h = fd_step(x)
    out = np.empty((geom.dim,) * 4)
    for m in range(geom.dim):
        e = np.zeros(geom.dim)
        e[m] = h
        out[m] = (geom.christoffel(x + e) - geom.christoffel(x - e)) / (2 * h)
    return out


def curvature_from_christoffel(geom: ChartGeometry, x) -> np.ndarray:
    """R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^t_jk G^l_it - G^t_ik G^l_jt.

    Uses the geometry's closed-form Christoffel derivatives when available,
    central differences with step ``1e-6 (1 + |x|)`` otherwise.
    """
    x = geom.check(x)
    G = geom.christoffel(x)
    dG = _christoffel_derivative(geom, x)
    R = np.einsum("iljk->lijk", dG) - np.einsum("jlik->lijk", dG)
    R += np.einsum("tjk,lit->lijk", G, G) - np.einsum("tik,ljt->lijk", G, G)
    return R


def sectional_curvature(geom: ChartGeometry, x, X=None, Y=None) -> float:
    """g(R(X, Y) Y, X) / (g(X,X) g(Y,Y) - g(X,Y)^2); coordinate plane (0, 1) by default."""
    x = geom.check(x)
    n = geom.dim
    X = np.eye(n)[0] if X is None else np.asarray(X, float)
    Y = np.eye(n)[1] if Y is None else np.asarray(Y, float)
    g = geom.metric(x)
    R = curvature_from_christoffel(geom, x)
    RXYY = np.einsum("lijk,i,j,k->l", R, X, Y, Y)
    area = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
    return float(RXYY @ g @ X / area)


def sharp(geom: ChartGeometry, x, alpha) -> np.ndarray:
    """Index raising: the vector a with g(a, w) = alpha(w) for all w."""
    x = geom.check(x)
    return geom.cometric(x) @ np.asarray(alpha, dtype=float)


def flat(geom: ChartGeometry, x, vec) -> np.ndarray:
    x = geom.check(x)
    return geom.metric(x) @ np.asarray(vec, dtype=float)


def metric_compatibility_residual(geom: ChartGeometry, x) -> float:
    """Max-norm of d_i g^ab + G^a_ic g^cb + G^b_ic g^ac.

    The cometric derivative comes from the metric Jacobian,
    d g^-1 = -g^-1 (d g) g^-1, so the check is independent of how the
    Christoffel symbols were obtained.
    """
    x = geom.check(x)
    ginv = geom.cometric(x)
    dginv = -np.einsum("ac,icd,db->iab", ginv, geom.metric_jacobian(x), ginv)
    G = geom.christoffel(x)
    res = dginv + np.einsum("aic,cb->iab", G, ginv) + np.einsum("bic,ac->iab", G, ginv)
    return float(np.max(np.abs(res)))


def parse_geometry(spec: str) -> ChartGeometry:
    """Build a geometry from ``flat:<n>``, ``sphere-chart:<r>`` or ``landmark-1d-2pt``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "flat":
            return FlatSpace(int(arg))
        if kind == "sphere-chart":
            return SphereChart(float(arg) if arg else 1.0)
        if kind == "landmark-1d-2pt" and not arg:
            return LandmarkLine2()
    except ValueError as exc:
        raise InputError(f"bad geometry id {spec!r}: {exc}") from exc
    raise InputError(f"unknown geometry id {spec!r}")
