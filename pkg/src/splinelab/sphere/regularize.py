"""Continuation of reduced S^2 solutions through zero speed.

The reduced variables and the Gauss frame are singular at v = 0 while the
extrinsic Crouch-Leite system is not.  Near rest the state is lifted to the
extrinsic system, integrated across the zero of x1 and projected back once
the speed has recovered.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..ode import Event, IntegratorConfig, integrate
from .extrinsic import ExtrinsicSphereState, crouch_leite_vector_field, gauss_frame, poisson_lift, project_state
from .frames import ReconstructedTrajectory, coupled_field
from .reduced import ReducedS2State


def integrate_through_rest(state0: ReducedS2State, R0, t_eval, *, beta: float = 1.0, r: float = 1.0,
                           cfg: IntegratorConfig | None = None, v_switch: float | None = None,
                           max_switches: int = 100) -> ReconstructedTrajectory:
    """Reduced + frame integration that hands over to Crouch-Leite when |v| < v_switch.

    Samples are returned at ``t_eval`` (its first entry is the start time).
    The times of every hand-over are listed in ``switches``.
    """
    cfg = cfg or IntegratorConfig()
    t_eval = np.asarray(t_eval, float)
    if t_eval.ndim != 1 or t_eval.size < 2 or np.any(np.diff(t_eval) <= 0):
        raise InputError("t_eval must be increasing with at least two entries")
    v_switch = 0.05 * r if v_switch is None else v_switch
    v_exit = 1.5 * v_switch
    R0 = np.eye(3) if R0 is None else np.asarray(R0, float)

    red_field = coupled_field(beta, r)
    cl_field = crouch_leite_vector_field(beta, r)
    slow = Event(lambda t, y: abs(y[0]) - v_switch, direction=-1, terminal=True)
    fast = Event(lambda t, y: float(np.linalg.norm(y[3:6])) - v_exit, direction=1, terminal=True)

    t, tend = float(t_eval[0]), float(t_eval[-1])
    out_t, out_red, out_R = [t], [state0.pack()], [R0]
    switches = []
    if abs(state0.v) < v_switch:
        mode, y = "cl", poisson_lift(state0, R0, r).pack()
    else:
        mode, y = "reduced", np.concatenate([state0.pack(), R0.ravel()])
    while t < tend:
        if len(switches) > max_switches:
            raise InputError(f"more than {max_switches} passages through rest")
        wanted = t_eval[t_eval > t]
        if mode == "reduced":
            tr = integrate(red_field, y, (t, tend), cfg, events=[slow], t_eval=wanted)
        else:
            tr = integrate(cl_field, y, (t, tend), cfg, events=[fast], t_eval=wanted)
        keep = np.isin(tr.t, wanted)
        for tk, yk in zip(tr.t[keep], tr.y[keep]):
            out_t.append(tk)
            if mode == "reduced":
                out_red.append(yk[:5])
                out_R.append(yk[5:].reshape(3, 3))
            else:
                ext = ExtrinsicSphereState.unpack(yk, r)
                out_red.append(project_state(ext).pack())
                out_R.append(gauss_frame(ext.x0, ext.x1, r))
        t, y = tr.t_final, tr.y_final
        if tr.terminated_by is None:
            break
        switches.append(t)
        if mode == "reduced":
            y = poisson_lift(ReducedS2State.unpack(y[:5]), y[5:].reshape(3, 3), r).pack()
            mode = "cl"
        else:
            ext = ExtrinsicSphereState.unpack(y, r)
            y = np.concatenate([project_state(ext).pack(), gauss_frame(ext.x0, ext.x1, r).ravel()])
            mode = "reduced"
    return ReconstructedTrajectory(np.array(out_t), np.array(out_red), np.array(out_R), r, beta,
                                   switches=tuple(switches))
