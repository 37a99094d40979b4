"""Poincare sections of the reduced S^2 system and conservation audits.

Sections are taken at theta = pi/2 (mod 2 pi) in the momentum-sphere
coordinates ``(v, a, theta, z)`` on a fixed energy ``h`` and Casimir ``mu``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, IntegrationError, SplineLabError
from .ode import Event, IntegratorConfig, Trajectory, integrate
from .sphere.extrinsic import ExtrinsicSphereState, constraint_residuals
from .sphere.reduced import (
    V_MIN,
    ReducedParams,
    momentum_convert,
    reduced_hamiltonian,
    reduced_hamiltonian_spherical,
    spherical_vector_field,
)

SECTION_THETA = math.pi / 2
ENERGY_TOL = 1e-9
SECTION_CFG = IntegratorConfig(tol=1e-12, h0=1e-2, hmin=1e-10, hmax=0.1, max_steps=2_000_000)


def wrapped(x: float) -> float:
    """Angle reduced to [-pi, pi)."""
    return (x + math.pi) % (2 * math.pi) - math.pi


def section_potential(v: float, z: float, mu: float, beta: float, r: float) -> float:
    """H at theta = pi/2 and a = 0."""
    return mu * mu * (1 - z * z) / (2 * beta * v * v) + mu * z * v / r


def seed_on_section(h: float, mu: float, beta: float, r: float, v: float, z: float) -> float | None:
    """Nonnegative a with H(v, a, pi/2, z) = h, or None if h is below the section potential."""
    if not v > 0:
        raise InputError("seed speed must be positive")
    if abs(z) > 1:
        raise InputError("|z| must not exceed 1")
    rad = 2 * beta * (h - section_potential(v, z, mu, beta, r))
    if rad < 0:
        return None
    return math.sqrt(rad)


@dataclass(frozen=True)
class SectionSpec:
    h: float
    mu: float = 2.0
    beta: float = 1.0
    r: float = 2.0
    seeds: tuple = ()  # (v, z) pairs
    crossings: int = 200
    t_max: float = 1e4
    v_max: float | None = None
    v_min: float | None = None
    direction: int = 1  # +1: theta increasing; 0: both
    time_direction: int = 1
    a_sign: int = 1
    cfg: IntegratorConfig = SECTION_CFG
    angle_step: float = 0.25  # max theta advance per step while points are emitted

    def __post_init__(self):
        if not (self.mu > 0 and self.beta > 0 and self.r > 0):
            raise InputError("mu, beta, r must be positive")
        if self.crossings < 1 or not self.t_max > 0 or not self.angle_step > 0:
            raise InputError("crossings and t_max must be positive")
        if self.direction not in (-1, 0, 1) or self.time_direction not in (-1, 1) or self.a_sign not in (-1, 1):
            raise InputError("direction flags must be +-1 (or 0 for direction)")
        object.__setattr__(self, "seeds", tuple((float(v), float(z)) for v, z in self.seeds))

    @property
    def vmax(self) -> float:
        return 1e3 * self.r if self.v_max is None else self.v_max

    @property
    def vmin(self) -> float:
        return V_MIN * self.r if self.v_min is None else self.v_min

    @classmethod
    def grid(cls, h: float, v_range, z_range, nv: int, nz: int, **kw) -> "SectionSpec":
        vs = np.linspace(*v_range, nv)
        zs = np.linspace(*z_range, nz)
        return cls(h, seeds=tuple((v, z) for z in zs for v in vs), **kw)


@dataclass
class SeedResult:
    seed_id: int
    v0: float
    z0: float
    a0: float | None
    status: str  # confined | escaped | rest | infeasible | failed
    t: np.ndarray = field(default_factory=lambda: np.empty(0))
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))  # (v, a, z)
    H_check: np.ndarray = field(default_factory=lambda: np.empty(0))
    casimir_check: np.ndarray = field(default_factory=lambda: np.empty(0))
    message: str = ""

    @property
    def escaped(self) -> bool:
        return self.status in ("escaped", "rest")


@dataclass
class SectionPointSet:
    spec: SectionSpec
    seeds: list

    @property
    def escapes(self) -> int:
        return sum(s.escaped for s in self.seeds)

    @property
    def confined(self) -> int:
        return sum(s.status == "confined" for s in self.seeds)

    def all_points(self) -> np.ndarray:
        pts = [s.points for s in self.seeds if len(s.points)]
        return np.vstack(pts) if pts else np.empty((0, 3))

    def rows(self):
        """CSV rows: seed_id, crossing_index, t, v, a, z, H_check, casimir_check."""
        for s in self.seeds:
            for k in range(len(s.points)):
                v, a, z = s.points[k]
                yield (s.seed_id, k, s.t[k], v, a, z, s.H_check[k], s.casimir_check[k])


def _section_events(spec: SectionSpec):
    sign = spec.time_direction
    direction = spec.direction * sign
    section = Event(lambda t, y: wrapped(y[2] - SECTION_THETA), direction=direction, terminal=True,
                    max_jump=math.pi)
    fast = Event(lambda t, y: y[0] - spec.vmax, direction=1, terminal=True)
    slow = Event(lambda t, y: abs(y[0]) - 2 * spec.vmin, direction=-1, terminal=True)
    return [section, fast, slow]


def run_seed(spec: SectionSpec, seed_id: int) -> SeedResult:
    """Follow one seed from crossing to crossing.

    Each segment starts on the section with theta set to exactly pi/2; the
    field is 2 pi periodic in theta so this only removes the accumulated
    multiple of 2 pi and the sub-1e-12 refinement residual, keeping the
    unwrapped angle bounded for the mixed error norm.  Once a crossing misses
    the energy tolerance no further points are emitted, but the seed is still
    followed to classify its fate.
    """
    v0, z0 = spec.seeds[seed_id]
    a0 = seed_on_section(spec.h, spec.mu, spec.beta, spec.r, v0, z0)
    if a0 is None:
        return SeedResult(seed_id, v0, z0, None, "infeasible", message="h below section potential")
    a0 *= spec.a_sign
    f = spherical_vector_field(ReducedParams(spec.beta, spec.r, spec.vmin), spec.mu)
    events = _section_events(spec)
    y0 = np.array([v0, a0, SECTION_THETA, z0])
    ts, pts, hc, cc = [], [], [], []
    try:
        f0 = f(0.0, y0)
    except SplineLabError as exc:
        return SeedResult(seed_id, v0, z0, a0, "rest", message=str(exc))
    # the seed lies on the section; it counts as crossing 0 unless it moves against the direction
    if spec.direction == 0 or f0[2] * spec.direction >= 0:
        _emit(spec, 0.0, y0, ts, pts, hc, cc)
    if float(np.max(np.abs(f0))) < 1e-14:
        return SeedResult(seed_id, v0, z0, a0, "confined", np.array(ts), np.array(pts).reshape(-1, 3),
                          np.array(hc), np.array(cc), "equilibrium seed")
    fate, msg = _follow(spec, f, events, y0, spec.crossings, ts, pts, hc, cc)
    return SeedResult(seed_id, v0, z0, a0, fate, np.array(ts), np.array(pts).reshape(-1, 3),
                      np.array(hc), np.array(cc), msg)


def _follow(spec, f, events, y, limit, ts, pts, hc, cc) -> tuple[str, str]:
    sign = spec.time_direction
    t, cfg = 0.0, spec.cfg
    done = limit == 0  # verdict only, no section events
    while abs(t) < spec.t_max and (done or len(ts) < limit):
        seg = cfg
        if not done:
            # the embedded estimate is blind to errors in the nearly time-only
            # forcing by the fast angle, so bound the angle swept per step
            rate = abs(f(t, y)[2])
            if rate * cfg.hmax > spec.angle_step:
                seg = cfg.replace(hmax=spec.angle_step / rate, h0=min(cfg.h0, spec.angle_step / rate))
        try:
            tr = integrate(f, y, (t, sign * spec.t_max), seg, events=events[1:] if done else events)
        except IntegrationError as exc:
            return ("rest" if abs(exc.y[0]) < 1e-3 * spec.r else "failed"), str(exc)
        if done:
            return _fate(tr, 0), ""
        if tr.steps.size:
            cfg = cfg.replace(h0=min(max(float(tr.steps[-1]), cfg.hmin), cfg.hmax))
        if tr.terminated_by is None:
            return "confined", ""
        t, y = tr.t_final, tr.y_final.copy()
        if tr.terminated_by != 0:
            return _fate(tr, 1), ""
        H = reduced_hamiltonian_spherical(y, spec.beta, spec.r, spec.mu)
        if abs(H - spec.h) >= ENERGY_TOL:
            # emit nothing further; the flow is still followed for the verdict
            note = f"energy tolerance lost at t = {t:.6g} (|H - h| = {abs(H - spec.h):.2e}); points truncated"
            rest = replace(spec, t_max=spec.t_max - abs(t))
            return _follow(rest, f, events, y, 0, [], [], [], [])[0], note
        _emit(spec, t, y, ts, pts, hc, cc)
        y[2] = SECTION_THETA
    return "confined", ""


def _emit(spec, t, y, ts, pts, hc, cc):
    M = momentum_convert(spec.mu, y[2], max(-1.0, min(1.0, y[3])))
    ts.append(t)
    pts.append((y[0], y[1], y[3]))
    hc.append(reduced_hamiltonian_spherical(y, spec.beta, spec.r, spec.mu) - spec.h)
    cc.append(float(M @ M) - spec.mu**2)


def _fate(tr, offset):
    """Verdict from the terminating event; offset 1 when the section event is present."""
    if tr.terminated_by is None:
        return "confined"
    return ("escaped", "rest")[tr.terminated_by - offset]


def poincare_section(spec: SectionSpec, threads: int = 1) -> SectionPointSet:
    """Section points for every seed of ``spec``; seeds run independently."""
    if not spec.seeds:
        raise InputError("section spec has no seeds")
    feasible = [seed_on_section(spec.h, spec.mu, spec.beta, spec.r, v, z) is not None for v, z in spec.seeds]
    if not any(feasible):
        raise InputError(f"energy h = {spec.h} is not attainable at any seed")
    ids = range(len(spec.seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: run_seed(spec, i), ids))
    else:
        results = [run_seed(spec, i) for i in ids]
    return SectionPointSet(spec, sorted(results, key=lambda s: s.seed_id))


def section_z(h: float, mu: float, beta: float, r: float, v: float, a: float, z_near: float) -> float | None:
    """Root z of H(v, a, pi/2, z) = h in [-1, 1] closest to ``z_near``."""
    A = -mu * mu / (2 * beta * v * v)
    B = mu * v / r
    C = a * a / (2 * beta) + mu * mu / (2 * beta * v * v) - h
    disc = B * B - 4 * A * C
    if disc < 0:
        return None
    roots = [z for z in ((-B + s * math.sqrt(disc)) / (2 * A) for s in (1.0, -1.0)) if abs(z) <= 1]
    return min(roots, key=lambda z: abs(z - z_near)) if roots else None


def return_map(spec: SectionSpec, v: float, a: float, z_near: float, n: int = 1) -> tuple[np.ndarray, float]:
    """n-th crossing ``((v, a), z)`` of the orbit through ``(v, a, pi/2, z)`` on the energy level."""
    z = section_z(spec.h, spec.mu, spec.beta, spec.r, v, a, z_near)
    if z is None:
        raise InputError(f"no section point with v = {v}, a = {a} at h = {spec.h}")
    f = spherical_vector_field(ReducedParams(spec.beta, spec.r, spec.vmin), spec.mu)
    y = np.array([v, a, SECTION_THETA, z])
    events = _section_events(spec)
    for _ in range(n):
        tr = integrate(f, y, (0.0, spec.t_max), spec.cfg, events=events)
        if tr.terminated_by != 0:
            raise SplineLabError("orbit left the section region before returning")
        y = tr.y_final.copy()
        y[2] = SECTION_THETA
    return y[:2].copy(), float(y[3])


def periodic_point(spec: SectionSpec, v: float, a: float, z_near: float, n: int = 1,
                   tol: float = 1e-10, max_iter: int = 30, step: float = 1e-6):
    """Newton iteration for a period-n point of the return map in the (v, a) chart.

    Returns ``(v, a, z, trace)`` where ``trace`` is the trace of the linearized
    n-th return map; |trace| < 2 means elliptic.
    """
    x = np.array([v, a], float)
    z = z_near

    def jac(x, z):
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            J[:, j] = (return_map(spec, *(x + e), z, n)[0] - return_map(spec, *(x - e), z, n)[0]) / (2 * step)
        return J

    for _ in range(max_iter):
        Px, _ = return_map(spec, *x, z, n)
        F = Px - x
        if np.linalg.norm(F) < tol:
            return x[0], x[1], section_z(spec.h, spec.mu, spec.beta, spec.r, *x, z), float(np.trace(jac(x, z)))
        x = x - np.linalg.solve(jac(x, z) - np.eye(2), F)
        z = section_z(spec.h, spec.mu, spec.beta, spec.r, *x, z)
        if z is None:
            break
    raise SplineLabError("periodic point iteration did not converge")


def annulus_width(points, harmonics: int = 8) -> float:
    """Thickness of a planar point set around its best-fit closed curve, relative to its diameter.

    Coordinates are normalized to the unit box, the curve is a radial Fourier
    series about the centroid, and the result is max |residual| / diameter.
    """
    P = np.asarray(points, float)
    if P.ndim != 2 or P.shape[1] != 2 or len(P) < 2 * harmonics + 2:
        raise InputError(f"need at least {2 * harmonics + 2} planar points")
    lo, span = P.min(0), np.ptp(P, axis=0)
    span[span == 0] = 1.0
    Y = (P - lo) / span
    d = Y - Y.mean(0)
    phi = np.arctan2(d[:, 1], d[:, 0])
    rho = np.hypot(d[:, 0], d[:, 1])
    cols = [np.ones_like(phi)]
    for k in range(1, harmonics + 1):
        cols += [np.cos(k * phi), np.sin(k * phi)]
    B = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(B, rho, rcond=None)
    diam = float(np.max(np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=-1)))
    return float(np.max(np.abs(B @ coef - rho)) / diam)


# -- conservation audit ------------------------------------------------------

def reduced_quantities(beta: float, r: float) -> dict:
    return {
        "H": lambda y: reduced_hamiltonian(y, beta, r),
        "Casimir": lambda y: float(y[2] ** 2 + y[3] ** 2 + y[4] ** 2),
    }


def extrinsic_quantities(r: float) -> dict:
    names = ("|x0|-r", "x0.x1", "x0.x2", "x0.x3")
    return {n: (lambda y, i=i: float(constraint_residuals(ExtrinsicSphereState.unpack(y, r))[i]))
            for i, n in enumerate(names)}


def random_reduced_state(rng: np.random.Generator, mu: float = 2.0, v_range=(20.0, 30.0),
                         a_range=(-0.1, 0.1), z_range=(0.0, 2e-4)) -> np.ndarray:
    """Random (v, a, M1, M2, M3) with |M| = mu, M2 = mu z and theta uniform.

    The defaults sample the regular band of beta = 1, r = 2, mu = 2 (energies
    up to about 0.01).  Generic states there escape to v ~ 1e3, where the
    fast momentum rotation makes long audits very expensive.
    """
    v = rng.uniform(*v_range)
    a = rng.uniform(*a_range)
    M = momentum_convert(mu, rng.uniform(0.0, 2 * math.pi), rng.uniform(*z_range))
    return np.array([v, a, *M])


def conserved_audit(trajectory, quantities: dict) -> dict:
    """Per quantity: initial value, max |Q(t) - Q(0)| and that divided by max(|Q(0)|, 1e-300)."""
    Y = trajectory.y if isinstance(trajectory, Trajectory) else np.asarray(trajectory, float)
    if len(Y) == 0:
        raise InputError("empty trajectory")
    report = {}
    for name, q in quantities.items():
        vals = np.array([q(y) for y in Y])
        drift = float(np.max(np.abs(vals - vals[0])))
        report[name] = {
            "initial": float(vals[0]),
            "abs_drift": drift,
            "rel_drift": drift / max(abs(float(vals[0])), 1e-300),
            "max_abs": float(np.max(np.abs(vals))),
        }
    return report


# -- rendering ---------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def svg_scatter(points, axes=("v", "a"), bounds=None, labels: dict | None = None, groups=None,
                width: int = 640, height: int = 480) -> str:
    """Deterministic SVG scatter plot, one circle per point.

    ``labels`` (e.g. h, mu, beta, r) are printed in the title line; ``groups``
    assigns a color index per point.
    """
    P = np.asarray(points, float)
    if P.size == 0:
        raise InputError("no points to plot")
    P = P.reshape(-1, 2)
    if bounds is None:
        lo, hi = P.min(0), P.max(0)
        pad = np.where(hi > lo, 0.05 * (hi - lo), 0.5)
        bounds = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
    x0, x1, y0, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0):
        raise InputError("degenerate plot bounds")
    m = 50
    W, H = width - 2 * m, height - 2 * m
    title = ", ".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}" for k, v in (labels or {}).items())
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{W}" height="{H}" fill="none" stroke="black"/>',
        f'<text x="{width // 2}" y="{m // 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width // 2}" y="{height - 10}" text-anchor="middle" font-size="12">{axes[0]}</text>',
        f'<text x="15" y="{height // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {height // 2})">{axes[1]}</text>',
        f'<text x="{m}" y="{height - m + 15}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - m}" y="{height - m + 15}" text-anchor="end" font-size="10">{x1:.4g}</text>',
        f'<text x="{m - 5}" y="{height - m}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{m - 5}" y="{m + 10}" text-anchor="end" font-size="10">{y1:.4g}</text>',
    ]
    g = np.zeros(len(P), dtype=int) if groups is None else np.asarray(groups, int)
    for (px, py), gi in zip(P, g):
        cx = m + (px - x0) / (x1 - x0) * W
        cy = m + (y1 - py) / (y1 - y0) * H
        out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="1.5" fill="{_PALETTE[gi % len(_PALETTE)]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
