"""Adaptive Runge-Kutta-Fehlberg 7(8) integration with event location.

The 13-stage Fehlberg pair is propagated at 8th order (local extrapolation);
the embedded 7th-order solution only feeds the error estimate.  The driver
mirrors the usual celestial-mechanics workflow: a scalar tolerance, step
bounds ``[hmin, hmax]`` and one accepted step per loop iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EventRefinementError,
    FieldEvaluationError,
    InputError,
    IntegrationError,
    MaxStepsExceeded,
    SplineLabError,
    StepSizeUnderflow,
)

Field = Callable[[float, np.ndarray], np.ndarray]

# Fehlberg (1968), NASA TR R-287, 7(8) pair.
_C = np.array([0, 2 / 27, 1 / 9, 1 / 6, 5 / 12, 1 / 2, 5 / 6, 1 / 6, 2 / 3, 1 / 3, 1, 0, 1])
_A = np.zeros((13, 13))
_A[1, :1] = [2 / 27]
_A[2, :2] = [1 / 36, 1 / 12]
_A[3, :3] = [1 / 24, 0, 1 / 8]
_A[4, :4] = [5 / 12, 0, -25 / 16, 25 / 16]
_A[5, :5] = [1 / 20, 0, 0, 1 / 4, 1 / 5]
_A[6, :6] = [-25 / 108, 0, 0, 125 / 108, -65 / 27, 125 / 54]
_A[7, :7] = [31 / 300, 0, 0, 0, 61 / 225, -2 / 9, 13 / 900]
_A[8, :8] = [2, 0, 0, -53 / 6, 704 / 45, -107 / 9, 67 / 90, 3]
_A[9, :9] = [-91 / 108, 0, 0, 23 / 108, -976 / 135, 311 / 54, -19 / 60, 17 / 6, -1 / 12]
_A[10, :10] = [2383 / 4100, 0, 0, -341 / 164, 4496 / 1025, -301 / 82, 2133 / 4100,
               45 / 82, 45 / 164, 18 / 41]
_A[11, :11] = [3 / 205, 0, 0, 0, 0, -6 / 41, -3 / 205, -3 / 41, 3 / 41, 6 / 41, 0]
_A[12, :12] = [-1777 / 4100, 0, 0, -341 / 164, 4496 / 1025, -289 / 82, 2193 / 4100,
               51 / 82, 33 / 164, 12 / 41, 0, 1]
_B7 = np.array([41 / 840, 0, 0, 0, 0, 34 / 105, 9 / 35, 9 / 35, 9 / 280, 9 / 280, 41 / 840, 0, 0])
_B8 = np.array([0, 0, 0, 0, 0, 34 / 105, 9 / 35, 9 / 35, 9 / 280, 9 / 280, 0, 41 / 840, 41 / 840])
_E = _B8 - _B7

SAFETY = 0.9
GROW_MAX = 4.0
SHRINK_MIN = 0.1
EVENT_TOL = 1e-12
MAX_BISECTIONS = 128


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-control parameters.

    Defaults are the values of the reference reconstruction run:
    ``tol=1e-13``, ``h0=0.01``, ``hmin=1e-8``, ``hmax=0.1``.
    """

    tol: float = 1e-13
    h0: float = 1e-2
    hmin: float = 1e-8
    hmax: float = 1e-1
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError(f"tol must be positive, got {self.tol}")
        if not 0 < self.hmin <= self.h0 <= self.hmax:
            raise InputError(
                f"need 0 < hmin <= h0 <= hmax, got hmin={self.hmin}, h0={self.h0}, hmax={self.hmax}")
        if self.max_steps < 1:
            raise InputError("max_steps must be >= 1")

    def replace(self, **changes) -> "IntegratorConfig":
        kw = dict(tol=self.tol, h0=self.h0, hmin=self.hmin, hmax=self.hmax, max_steps=self.max_steps)
        kw.update(changes)
        return IntegratorConfig(**kw)


def error_norm(err: np.ndarray, y: np.ndarray) -> float:
    """Mixed absolute/relative max norm ``max |err_i| / (1 + |y_i|)``."""
    return float(np.max(np.abs(err) / (1.0 + np.abs(y)))) if err.size else 0.0


def _stages(field: Field, t: float, y: np.ndarray, h: float, k0: np.ndarray | None) -> np.ndarray:
    k = np.empty((13, y.size))
    stage = 0
    try:
        k[0] = field(t, y) if k0 is None else k0
        for stage in range(1, 13):
            k[stage] = field(t + _C[stage] * h, y + h * (_A[stage, :stage] @ k[:stage]))
    except (SplineLabError, ArithmeticError) as exc:
        raise FieldEvaluationError(t + _C[stage] * h, exc) from exc
    return k


def rk78_step(field: Field, t: float, y, h: float, tol: float, k0=None):
    """Take one RKF7(8) step of size ``h`` (may be negative).

    Returns
    -------
    y_next : ndarray
        8th-order solution at ``t + h``.
    error : float
        Max-norm error estimate (difference of the 7th/8th order solutions).
    h_suggest : float
        Step magnitude proposed for the next attempt.
    """
    y = np.asarray(y, dtype=float)
    k = _stages(field, t, y, h, k0)
    y_next = y + h * (_B8 @ k)
    err = error_norm(h * (_E @ k), y)
    if err == 0.0:
        factor = GROW_MAX
    else:
        factor = min(GROW_MAX, max(SHRINK_MIN, SAFETY * (tol / err) ** (1.0 / 8.0)))
    return y_next, err, abs(h) * factor


@dataclass(frozen=True)
class Event:
    """Scalar event function ``g(t, y)``.

    ``direction`` selects sign changes: +1 upward, -1 downward, 0 both.
    ``max_jump`` rejects sign changes where ``|g1 - g0|`` exceeds it, which
    filters the branch cut of wrapped angle functions.  A ``terminal`` event
    ends the integration at the refined crossing.
    """

    g: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = False
    max_jump: float | None = None
    tol: float = EVENT_TOL


@dataclass(frozen=True)
class EventHit:
    t: float
    y: np.ndarray
    index: int
    g: float


@dataclass
class Trajectory:
    """Samples ``(t_k, y_k)`` with slopes ``f_k`` for cubic Hermite dense output."""

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    steps: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    events: list[EventHit] = dc_field(default_factory=list)
    terminated_by: int | None = None

    def __len__(self):
        return len(self.t)

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]

    def __call__(self, tq):
        """Cubic Hermite interpolation between recorded samples."""
        tq = np.asarray(tq, dtype=float)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        sign = 1.0 if self.t[-1] >= self.t[0] else -1.0
        ts = sign * self.t
        q = sign * tq
        if np.any(q < ts[0] - 1e-12 * (1 + abs(ts[0]))) or np.any(q > ts[-1] + 1e-12 * (1 + abs(ts[-1]))):
            raise InputError("interpolation time outside trajectory span")
        idx = np.clip(np.searchsorted(ts, q, side="right") - 1, 0, len(ts) - 2)
        t0, t1 = self.t[idx], self.t[idx + 1]
        dt = (t1 - t0)[:, None]
        s = ((tq - t0) / (t1 - t0))[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = (h00 * self.y[idx] + h10 * dt * self.f[idx]
               + h01 * self.y[idx + 1] + h11 * dt * self.f[idx + 1])
        return out[0] if scalar else out


def _crossed(event: Event, g0: float, g1: float) -> bool:
    if event.max_jump is not None and abs(g1 - g0) > event.max_jump:
        return False
    up = g0 < 0.0 <= g1
    down = g0 > 0.0 >= g1
    if event.direction > 0:
        return up
    if event.direction < 0:
        return down
    return up or down


def refine_event(field: Field, event: Event, t: float, y: np.ndarray, k0: np.ndarray,
                 h: float, g0: float, g1: float, tol: float) -> tuple[float, np.ndarray, float]:
    """Locate the event inside the accepted step ``[t, t + h]`` by bisection.

    Each probe re-integrates the sub-step from ``(t, y)`` with a single RK78
    step, so the located state is as accurate as the accepted step itself.
    Returns ``(t_event, y_event, g_event)``.
    """
    lo, hi = 0.0, h
    g_lo = g0
    best = (t + h, None, g1)
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            # bracket collapsed to adjacent floats: best attainable point
            break
        y_mid, _, _ = rk78_step(field, t, y, mid, tol, k0=k0)
        g_mid = float(event.g(t + mid, y_mid))
        if abs(g_mid) < abs(best[2]) or best[1] is None:
            best = (t + mid, y_mid, g_mid)
        if abs(g_mid) < event.tol:
            return t + mid, y_mid, g_mid
        if (g_mid < 0) == (g_lo < 0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    else:
        raise EventRefinementError(f"event refinement did not converge after {MAX_BISECTIONS} bisections")
    if best[1] is None:
        y1, _, _ = rk78_step(field, t, y, h, tol, k0=k0)
        best = (t + h, y1, g1)
    return best


def integrate(field: Field, y0, t_span: Sequence[float], cfg: IntegratorConfig | None = None,
              events: Sequence[Event] = (), t_eval=None, max_events: int | None = None) -> Trajectory:
    """Integrate ``y' = field(t, y)`` over ``t_span`` with adaptive RK78.

    Parameters
    ----------
    field : callable
        ``field(t, y) -> dy/dt``.
    y0 : array_like
        Initial state.
    t_span : (t0, t1)
        Integration interval; ``t1 < t0`` integrates backwards.
    cfg : IntegratorConfig
        Step control.  Defaults to ``IntegratorConfig()``.
    events : sequence of Event
        Crossings are refined and stored in ``Trajectory.events``.
    t_eval : array_like, optional
        If given, steps land exactly on these times and only they (plus the
        start) are recorded.  Otherwise every accepted step is recorded.
    max_events : int, optional
        Stop after this many event hits in total.

    Raises
    ------
    StepSizeUnderflow, MaxStepsExceeded, IntegrationError
        With the last accepted state attached.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InputError("initial state has non-finite entries")
    sign = 1.0 if t1 >= t0 else -1.0

    if t_eval is not None:
        targets = np.asarray(t_eval, dtype=float)
        if np.any(sign * np.diff(targets) <= 0):
            raise InputError("t_eval must be strictly monotone in the integration direction")
        if targets.size and (sign * (targets[0] - t0) < 0 or sign * (targets[-1] - t1) > 0):
            raise InputError("t_eval outside t_span")
        targets = targets[sign * (targets - t0) > 0]
    else:
        targets = None

    t = t0
    try:
        f = np.asarray(field(t, y), dtype=float)
    except (SplineLabError, ArithmeticError) as exc:
        raise IntegrationError(f"field fails at the initial state: {exc}", t, y, exc) from exc
    ts, ys, fs, hs = [t], [y.copy()], [f.copy()], []
    hits: list[EventHit] = []
    gvals = [float(ev.g(t, y)) for ev in events]
    terminated = None

    h = min(max(cfg.h0, cfg.hmin), cfg.hmax)
    target_i = 0
    steps = 0
    while sign * (t1 - t) > 0:
        if steps >= cfg.max_steps:
            raise MaxStepsExceeded(f"exceeded max_steps={cfg.max_steps} at t={t}", t, y)
        next_stop = t1
        if targets is not None and target_i < len(targets):
            next_stop = targets[target_i]
        remaining = abs(next_stop - t)
        clipped = h >= remaining
        h_try = remaining if clipped else h
        t_new = next_stop if clipped else t + sign * h_try
        try:
            y_new, err, h_sug = rk78_step(field, t, y, sign * h_try, cfg.tol, k0=f)
            if not np.all(np.isfinite(y_new)):
                raise FieldEvaluationError(t_new, FloatingPointError("non-finite state"))
            if err <= cfg.tol:
                try:
                    f_new = np.asarray(field(t_new, y_new), dtype=float)
                except (SplineLabError, ArithmeticError) as exc:
                    raise FieldEvaluationError(t_new, exc) from exc
        except FieldEvaluationError as exc:
            if h_try <= cfg.hmin:
                raise IntegrationError(
                    f"vector field failed near t={exc.t_stage}: {exc.cause}", t, y, exc.cause) from exc
            h = max(h_try * SHRINK_MIN, cfg.hmin)
            continue
        steps += 1
        if err > cfg.tol:
            if h_try <= cfg.hmin:
                raise StepSizeUnderflow(
                    f"step size underflow at t={t}: error {err:.3e} > tol {cfg.tol:.3e} with h={h_try:.3e}", t, y)
            h = max(min(h_sug, h_try), cfg.hmin)
            continue

        # accepted
        stop_here = False
        for i, ev in enumerate(events):
            g_new = float(ev.g(t_new, y_new))
            if _crossed(ev, gvals[i], g_new):
                te, ye, ge = refine_event(field, ev, t, y, f, sign * h_try, gvals[i], g_new, cfg.tol)
                hits.append(EventHit(te, ye, i, ge))
                if ev.terminal or (max_events is not None and len(hits) >= max_events):
                    terminated = i
                    t_new, y_new = te, ye
                    f_new = np.asarray(field(te, ye), dtype=float)
                    stop_here = True
                    break
            gvals[i] = g_new

        record = targets is None or stop_here or (clipped and target_i < len(targets))
        if clipped and targets is not None and target_i < len(targets) and not stop_here:
            target_i += 1
        hs.append(abs(t_new - t))
        t, y, f = t_new, y_new, f_new
        if record:
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
        if stop_here:
            break
        if not clipped:
            h = min(max(h_sug, cfg.hmin), cfg.hmax)

    return Trajectory(np.array(ts), np.array(ys), np.array(fs), np.array(hs), hits, terminated)


def find_event(source, event: Event, field: Field | None = None, cfg: IntegratorConfig | None = None):
    """Crossings of ``event`` along a trajectory or a live integration.

    ``source`` is either a :class:`Trajectory` produced by :func:`integrate`
    from every accepted step (``field`` then re-integrates each bracketing
    step for refinement), or a tuple ``(y0, t_span)`` to integrate afresh.
    Returns a list of :class:`EventHit`.
    """
    cfg = cfg or IntegratorConfig()
    if isinstance(source, Trajectory):
        if field is None:
            raise InputError("field is required to refine crossings on a stored trajectory")
        hits = []
        g_prev = float(event.g(source.t[0], source.y[0]))
        for k in range(len(source) - 1):
            g_next = float(event.g(source.t[k + 1], source.y[k + 1]))
            if _crossed(event, g_prev, g_next):
                h = source.t[k + 1] - source.t[k]
                te, ye, ge = refine_event(field, event, source.t[k], source.y[k], source.f[k],
                                          h, g_prev, g_next, cfg.tol)
                hits.append(EventHit(te, ye, 0, ge))
            g_prev = g_next
        return hits
    y0, t_span = source
    if field is None:
        raise InputError("field is required for a live integration")
    return integrate(field, y0, t_span, cfg, events=[event]).events
