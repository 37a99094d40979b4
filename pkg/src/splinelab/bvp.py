"""Two-point boundary-value problems for splines by single shooting.

Unknowns are the initial costates ``(p0, alpha0)`` (and the horizon for the
time-minimal problem).  The residual is the terminal mismatch of position and
velocity; it is driven to zero by Levenberg-Marquardt with a central-difference
Jacobian, restarted from deterministic random costates when needed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ShootingError, SingularControlError, SplineLabError
from .geometry import ChartGeometry
from .ode import Event, IntegratorConfig, Trajectory, integrate
from .pmp import (
    SINGULAR_ALPHA,
    Cubic,
    CostModel,
    SplitState,
    TimeMinimal,
    optimal_control,
    optimal_hamiltonian,
    split_vector_field,
)
from .sphere.extrinsic import ExtrinsicSphereState, crouch_leite_vector_field, geodesic_distance

SOLVER_TOL = 1e-8
SHOOT_CFG = IntegratorConfig(tol=1e-12, h0=1e-2, hmin=1e-12, hmax=0.1)


@dataclass(frozen=True)
class BoundaryData:
    q0: np.ndarray
    v0: np.ndarray
    q1: np.ndarray
    v1: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        for k in ("q0", "v0", "q1", "v1"):
            arr = np.atleast_1d(np.asarray(getattr(self, k), dtype=float))
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise InputError(f"{k} must be a finite 1-d vector")
            object.__setattr__(self, k, arr)
        if not (self.q0.size == self.v0.size == self.q1.size == self.v1.size):
            raise InputError("boundary vectors must share one dimension")
        if not self.T > 0:
            raise InputError("horizon T must be positive")

    @property
    def dim(self) -> int:
        return self.q0.size


@dataclass(frozen=True)
class ShootOptions:
    tol: float = SOLVER_TOL
    max_iter: int = 60
    fd_step: float = 1e-6
    multistart: int = 16
    seed: int = 0
    threads: int = 1
    all_extremals: bool = False
    cfg: IntegratorConfig = SHOOT_CFG


@dataclass
class ShootingResult:
    p0: np.ndarray
    alpha0: np.ndarray
    mismatch: float
    iterations: int
    converged: bool
    trajectory: Trajectory | None
    cost: float = math.nan
    T: float = math.nan
    start_index: int = -1
    message: str = ""
    extremals: list = field(default_factory=list)


# -- backends ----------------------------------------------------------------

class ChartBackend:
    """Split-variable equations on a chart geometry; unknowns are chart covectors."""

    def __init__(self, geom: ChartGeometry, cost: CostModel):
        self.geom = geom
        self.cost = cost
        self.n = geom.dim
        self._f = split_vector_field(geom, cost)

    @property
    def n_unknowns(self) -> int:
        return 2 * self.n

    def field(self, t, y):
        s = SplitState.unpack(y[:-1], self.n)
        dy = self._f(t, y[:-1])
        u = optimal_control(self.geom, self.cost, s)
        g = self.geom.metric(s.x)
        return np.append(dy, self.cost.cost(float(u @ g @ u)))

    def initial_state(self, bd: BoundaryData, z) -> np.ndarray:
        n = self.n
        return np.concatenate([bd.q0, bd.v0, z[:n], z[n:], [0.0]])

    def mismatch(self, y, bd: BoundaryData) -> np.ndarray:
        n = self.n
        return np.concatenate([y[:n] - bd.q1, y[n:2 * n] - bd.v1])

    def costates(self, z):
        return z[:self.n].copy(), z[self.n:].copy()

    def scale(self, bd: BoundaryData) -> float:
        d = float(np.linalg.norm(bd.q1 - bd.q0 - bd.v0 * bd.T))
        return float(np.linalg.norm(bd.v1 - bd.v0)) / bd.T + d / bd.T**2

    def position_velocity(self, y):
        return y[:self.n], y[self.n:2 * self.n]


class ExtrinsicSphereBackend:
    """Crouch-Leite equations on the sphere of radius r (cubic cost only).

    Unknown costates are coordinates in an orthonormal basis of the tangent
    space at q0; the mismatch is measured in ambient coordinates.
    """

    def __init__(self, r: float = 1.0, beta: float = 1.0):
        self.r = r
        self.beta = beta
        self._f = crouch_leite_vector_field(beta, r)

    def basis(self, q0) -> np.ndarray:
        q = np.asarray(q0, float) / np.linalg.norm(q0)
        _, _, Vt = np.linalg.svd(q[None, :])
        return Vt[1:].T  # (n+1, n)

    def setup(self, bd: BoundaryData):
        for q in (bd.q0, bd.q1):
            if abs(np.linalg.norm(q) - self.r) > 1e-8 * max(1.0, self.r):
                raise InputError("boundary points must lie on the sphere")
        for q, v in ((bd.q0, bd.v0), (bd.q1, bd.v1)):
            if abs(q @ v) > 1e-8 * max(1.0, self.r):
                raise InputError("boundary velocities must be tangent")
        self._E = self.basis(bd.q0)
        self.m = bd.dim
        self.n = bd.dim - 1

    @property
    def n_unknowns(self) -> int:
        return 2 * self.n

    def field(self, t, y):
        dy = self._f(t, y[:-1])
        a = y[2 * self.m:3 * self.m]
        return np.append(dy, 0.5 * float(a @ a) / self.beta)

    def initial_state(self, bd: BoundaryData, z) -> np.ndarray:
        p, alpha = self.costates(z)
        return np.concatenate([ExtrinsicSphereState(bd.q0, bd.v0, alpha, -p, self.r).pack(), [0.0]])

    def mismatch(self, y, bd: BoundaryData) -> np.ndarray:
        m = self.m
        return np.concatenate([y[:m] - bd.q1, y[m:2 * m] - bd.v1])

    def costates(self, z):
        return self._E @ z[:self.n], self._E @ z[self.n:]

    def scale(self, bd: BoundaryData) -> float:
        d = geodesic_distance(bd.q0, bd.q1, self.r)
        return float(np.linalg.norm(bd.v1 - bd.v0)) / bd.T + d / bd.T**2

    def position_velocity(self, y):
        return y[:self.m], y[self.m:2 * self.m]


def make_backend(geom, cost: CostModel):
    if isinstance(geom, ExtrinsicSphereBackend):
        if not isinstance(cost, Cubic):
            raise InputError("the extrinsic sphere backend supports the cubic cost only")
        return geom
    if isinstance(geom, ChartGeometry):
        return ChartBackend(geom, cost)
    raise InputError(f"unsupported geometry {geom!r}")


# -- residual and solver -----------------------------------------------------

def _flow(backend, bd: BoundaryData, z, cfg: IntegratorConfig, t_eval=None) -> Trajectory:
    return integrate(backend.field, backend.initial_state(bd, z), (0.0, bd.T), cfg, t_eval=t_eval)


def residual(geom, cost: CostModel, bd: BoundaryData, p0, alpha0, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Terminal mismatch ``(x(T) - q1, v(T) - v1)`` for initial costates ``(p0, alpha0)``.

    For the extrinsic sphere backend ``p0`` and ``alpha0`` are ambient tangent
    vectors at q0.  Integration failures propagate as IntegrationError.
    """
    backend = make_backend(geom, cost)
    if isinstance(backend, ExtrinsicSphereBackend):
        backend.setup(bd)
        z = np.concatenate([backend._E.T @ np.asarray(p0, float), backend._E.T @ np.asarray(alpha0, float)])
    else:
        z = np.concatenate([np.atleast_1d(p0), np.atleast_1d(alpha0)]).astype(float)
    return backend.mismatch(_flow(backend, bd, z, cfg or SHOOT_CFG).y_final, bd)


def fd_jacobian(fun, z, step: float = 1e-6):
    """Central differences with step ``step (1 + |z_j|)``; returns (J, f(z))."""
    f0 = fun(z)
    J = np.empty((f0.size, z.size))
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = step * (1.0 + abs(z[j]))
        J[:, j] = (fun(z + e) - fun(z - e)) / (2 * e[j])
    return J, f0


def levenberg_marquardt(fun, z0, tol: float = SOLVER_TOL, max_iter: int = 60, step: float = 1e-6):
    """Minimize |fun(z)| until its max-norm is below ``tol``.

    ``fun`` may raise SplineLabError for infeasible points; such trial steps
    are rejected and the damping increased.  Returns ``(z, f, iterations, ok)``.
    """
    z = np.asarray(z0, float).copy()
    J, f = fd_jacobian(fun, z, step)
    lam = 0.0  # plain Gauss-Newton until a step fails
    it = 0
    while it < max_iter:
        if np.max(np.abs(f)) < tol:
            return z, f, it, True
        it += 1
        A = J.T @ J
        g = J.T @ f
        D = np.diag(np.maximum(np.diag(A), 1e-12))
        improved = False
        for _ in range(30):
            try:
                dz = np.linalg.solve(A + lam * D, -g)
            except np.linalg.LinAlgError:
                lam = max(10 * lam, 1e-3)
                continue
            try:
                f_new = fun(z + dz)
            except SplineLabError:
                lam = max(10 * lam, 1e-3)
                continue
            if np.linalg.norm(f_new) < np.linalg.norm(f):
                z = z + dz
                f = f_new
                lam = lam / 5 if lam > 1e-9 else 0.0
                improved = True
                break
            lam = max(10 * lam, 1e-3)
        if not improved:
            break
        if np.max(np.abs(f)) < tol:
            return z, f, it, True
        J, _ = fd_jacobian(fun, z, step)
    return z, f, it, bool(np.max(np.abs(f)) < tol)


def _solve_from(backend, bd, z0, opts: ShootOptions, index: int) -> ShootingResult:
    def fun(z):
        return backend.mismatch(_flow(backend, bd, z, opts.cfg).y_final, bd)

    try:
        z, f, it, ok = levenberg_marquardt(fun, z0, opts.tol, opts.max_iter, opts.fd_step)
    except SplineLabError as exc:
        n = backend.n_unknowns // 2
        return ShootingResult(z0[:n], z0[n:], math.inf, 0, False, None, start_index=index, message=str(exc))
    p0, a0 = backend.costates(z)
    try:
        traj = _flow(backend, bd, z, opts.cfg)
        cost = float(traj.y_final[-1])
    except SplineLabError as exc:
        return ShootingResult(p0, a0, math.inf, it, False, None, start_index=index, message=str(exc))
    mis = float(np.max(np.abs(f)))
    return ShootingResult(p0, a0, mis, it, ok, traj, cost, bd.T, index,
                          "converged" if ok else "no convergence")


def _starts(backend, bd, guess, opts: ShootOptions) -> list[np.ndarray]:
    k = backend.n_unknowns
    rng = np.random.default_rng(opts.seed)
    rho = max(backend.scale(bd), 1e-3)
    if isinstance(backend, ChartBackend) and isinstance(backend.cost, Cubic):
        rho *= backend.cost.beta
    elif isinstance(backend, ExtrinsicSphereBackend):
        rho *= backend.beta
    starts = [guess]
    half = k // 2
    for _ in range(opts.multistart):
        d = rng.normal(size=k)
        d *= rng.uniform() ** (1.0 / k) / np.linalg.norm(d)
        z = d * rho * 6.0
        z[:half] /= bd.T  # p carries one more power of 1/T than alpha
        starts.append(z)
    return starts


def _distinct(results: list[ShootingResult], rtol: float = 1e-6) -> list[ShootingResult]:
    out: list[ShootingResult] = []
    for r in results:
        z = np.concatenate([r.p0, r.alpha0])
        if all(np.linalg.norm(z - np.concatenate([q.p0, q.alpha0])) > rtol * (1 + np.linalg.norm(z)) for q in out):
            out.append(r)
    return out


def shoot(geom, cost: CostModel, bd: BoundaryData, guess=None, opts: ShootOptions | None = None) -> ShootingResult:
    """Solve the fixed-horizon spline problem by shooting on ``(p0, alpha0)``.

    ``geom`` is a chart geometry or an :class:`ExtrinsicSphereBackend`.  The
    guess (zero by default) is tried first; if it fails, or when
    ``opts.all_extremals`` is set, ``opts.multistart`` deterministic random
    starts follow.  Converged extremals are ranked by cost and listed in
    ``extremals``; the returned result is the cheapest.  If nothing
    converges, ShootingError carries the best iterate.
    """
    opts = opts or ShootOptions()
    if not isinstance(cost, Cubic):
        raise InputError("shoot handles the cubic cost; use tmin_shoot for time-minimal problems")
    backend = make_backend(geom, cost)
    if isinstance(backend, ExtrinsicSphereBackend):
        backend.setup(bd)
    elif bd.dim != backend.n:
        raise InputError("boundary data dimension does not match the geometry")
    k = backend.n_unknowns
    if guess is None:
        z0 = np.zeros(k)
    else:
        p, a = guess
        if isinstance(backend, ExtrinsicSphereBackend):
            z0 = np.concatenate([backend._E.T @ np.asarray(p, float), backend._E.T @ np.asarray(a, float)])
        else:
            z0 = np.concatenate([np.atleast_1d(p), np.atleast_1d(a)]).astype(float)
    if z0.size != k or not np.all(np.isfinite(z0)):
        raise InputError("guess must be finite with the right dimension")

    starts = _starts(backend, bd, z0, opts)
    first = _solve_from(backend, bd, starts[0], opts, 0)
    results = [first]
    if not first.converged or opts.all_extremals:
        rest = list(enumerate(starts[1:], start=1))
        if opts.threads > 1:
            with ThreadPoolExecutor(max_workers=opts.threads) as pool:
                results += list(pool.map(lambda iz: _solve_from(backend, bd, iz[1], opts, iz[0]), rest))
        else:
            for i, z in rest:
                results.append(_solve_from(backend, bd, z, opts, i))
                if results[-1].converged and not opts.all_extremals:
                    break
    results.sort(key=lambda r: (not r.converged, r.mismatch, r.start_index))
    conv = [r for r in results if r.converged]
    if not conv:
        raise ShootingError(f"no start converged (best mismatch {results[0].mismatch:.3e})", best=results[0])
    ranked = sorted(_distinct(conv), key=lambda r: (r.cost, r.start_index))
    best = replace(ranked[0], extremals=ranked)
    return best


def sample(geom, cost: CostModel, bd: BoundaryData, result: ShootingResult, times,
           cfg: IntegratorConfig | None = None) -> Trajectory:
    """Re-integrate a shooting result and record it exactly at ``times``."""
    backend = make_backend(geom, cost)
    if isinstance(backend, ExtrinsicSphereBackend):
        backend.setup(bd)
        z = np.concatenate([backend._E.T @ result.p0, backend._E.T @ result.alpha0])
    else:
        z = np.concatenate([result.p0, result.alpha0])
    times = np.asarray(times, float)
    bd_eval = replace(bd, T=float(times[-1])) if times[-1] != bd.T else bd
    return _flow(backend, bd_eval, z, cfg or SHOOT_CFG, t_eval=times[times > 0])


# -- time-minimal ------------------------------------------------------------

def _tmin_flow(geom: ChartGeometry, cost: TimeMinimal, y0: np.ndarray, T: float, cfg: IntegratorConfig,
               t_eval=None) -> Trajectory:
    """Integrate the time-minimal extremal across switching times.

    The control direction is alpha#/|alpha#|; it jumps where alpha passes
    through zero.  Integration is split at zeros of <alpha, alpha_ref> (alpha_ref
    the costate direction at the start of the segment) and the one-sided
    direction is supplied while |alpha| is below round-off.
    """
    n = geom.dim
    s0 = SplitState.unpack(y0, n)
    ginv = geom.cometric(s0.x)
    a_sharp = ginv @ s0.alpha
    norm = math.sqrt(max(float(s0.alpha @ a_sharp), 0.0))
    if norm < SINGULAR_ALPHA:
        raise SingularControlError(f"|alpha0#| = {norm:.3e}: singular control, extremal not normal")
    hint = a_sharp / norm
    ref = s0.alpha / norm
    t, y = 0.0, np.asarray(y0, float)
    ts, ys, fs, hs, hits = [], [], [], [], []
    switches = 0
    while True:
        f = split_vector_field(geom, cost, hint)
        ref_c = ref.copy()
        ev = Event(lambda tt, yy, rc=ref_c: float(yy[3 * n:] @ rc), direction=-1, terminal=True, tol=1e-13)
        remaining = None if t_eval is None else np.asarray(t_eval)[np.asarray(t_eval) > t]
        tr = integrate(f, y, (t, T), cfg, events=[ev], t_eval=remaining)
        start = 0 if not ts else 1
        ts.extend(tr.t[start:])
        ys.extend(tr.y[start:])
        fs.extend(tr.f[start:])
        hs.extend(tr.steps)
        hits.extend(tr.events)
        t, y = tr.t_final, tr.y_final
        if tr.terminated_by is None or t >= T:
            break
        switches += 1
        if switches > 1000:
            raise SingularControlError("chattering: more than 1000 switches")
        s = SplitState.unpack(y, n)
        a_sharp = geom.cometric(s.x) @ s.alpha
        nm = math.sqrt(max(float(s.alpha @ a_sharp), 0.0))
        if nm > 1e3 * SINGULAR_ALPHA:
            hint, ref = a_sharp / nm, s.alpha / nm
        else:
            hint, ref = -hint, -ref
    ts, ys, fs = np.array(ts), np.array(ys), np.array(fs)
    if t_eval is not None:
        keep = np.isin(ts, np.asarray(t_eval)) | (ts == 0.0)
        ts, ys, fs = ts[keep], ys[keep], fs[keep]
    return Trajectory(ts, ys, fs, np.array(hs), hits, None)


def tmin_controls(geom: ChartGeometry, cost: TimeMinimal, traj: Trajectory) -> np.ndarray:
    """|u*|_g along the samples of a time-minimal extremal (switch samples use the one-sided limit)."""
    n = geom.dim
    out = []
    for y in traj.y:
        s = SplitState.unpack(y, n)
        try:
            u = optimal_control(geom, cost, s)
        except SingularControlError:
            out.append(cost.A)
            continue
        out.append(math.sqrt(float(u @ geom.metric(s.x) @ u)))
    return np.array(out)


def tmin_shoot(geom: ChartGeometry, A: float, bd: BoundaryData, guess, opts: ShootOptions | None = None) -> ShootingResult:
    """Free-horizon time-minimal problem with |u| <= A.

    Unknowns ``(p0, alpha0, T)``; equations: terminal mismatch plus
    ``H*(0) = 0``.  ``guess = (p0, alpha0, T)``.  A guess or iterate whose
    alpha0 vanishes is refused with SingularControlError.
    """
    opts = opts or ShootOptions()
    cost = TimeMinimal(A)
    n = geom.dim
    if bd.dim != n:
        raise InputError("boundary data dimension does not match the geometry")
    p, a, T0 = guess
    z0 = np.concatenate([np.atleast_1d(p), np.atleast_1d(a), [T0]]).astype(float)
    if not np.all(np.isfinite(z0)) or not T0 > 0:
        raise InputError("guess must be finite with positive T")
    ginv = geom.cometric(geom.check(bd.q0))
    if math.sqrt(max(float(z0[n:2 * n] @ ginv @ z0[n:2 * n]), 0.0)) < SINGULAR_ALPHA:
        raise SingularControlError("alpha0 = 0 in the guess: singular control, the maximizing control is undefined")

    def y_init(z):
        return np.concatenate([bd.q0, bd.v0, z[:n], z[n:2 * n]])

    def fun(z):
        if not z[-1] > 0:
            raise InputError("non-positive horizon")
        y0 = y_init(z)
        yT = _tmin_flow(geom, cost, y0, float(z[-1]), opts.cfg).y_final
        H0 = optimal_hamiltonian(geom, cost, SplitState.unpack(y0, n))
        return np.concatenate([yT[:n] - bd.q1, yT[n:2 * n] - bd.v1, [H0]])

    try:
        z, f, it, ok = levenberg_marquardt(fun, z0, opts.tol, opts.max_iter, opts.fd_step)
    except SingularControlError:
        raise
    except SplineLabError as exc:
        raise ShootingError(f"time-minimal shooting failed: {exc}") from exc
    a_final = z[n:2 * n]
    if math.sqrt(max(float(a_final @ ginv @ a_final), 0.0)) < SINGULAR_ALPHA:
        raise SingularControlError("iterate reached alpha0 = 0")
    traj = _tmin_flow(geom, cost, y_init(z), float(z[-1]), opts.cfg)
    res = ShootingResult(z[:n], z[n:2 * n], float(np.max(np.abs(f))), it, ok, traj, float(z[-1]), float(z[-1]), 0,
                         "converged" if ok else "no convergence")
    if not ok:
        raise ShootingError(f"time-minimal shooting did not converge (mismatch {res.mismatch:.3e})", best=res)
    return res
