"""Command-line front end driven by JSON run manifests.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SectionSpec,
    annulus_width,
    conserved_audit,
    extrinsic_quantities,
    poincare_section,
    random_reduced_state,
    reduced_quantities,
    svg_scatter,
)
from .bvp import BoundaryData, ExtrinsicSphereBackend, ShootOptions, sample, shoot, tmin_controls, tmin_shoot
from .errors import InputError, IntegrationError, ShootingError, SplineLabError
from .geometry import FlatSpace, parse_geometry
from .ode import IntegratorConfig, integrate
from .pmp import Cubic, SplitState, TimeMinimal, optimal_hamiltonian, parse_cost, split_vector_field
from .sphere.extrinsic import ExtrinsicSphereState, crouch_leite_vector_field, extrinsic_hamiltonian, random_tangent_state
from .sphere.frames import (
    frame_angles_config,
    frame_angles_field,
    frame_angles_initial_state,
    orthogonality_error,
    reconstruct_trajectory,
)
from .sphere.reduced import (
    ReducedParams,
    ReducedS2State,
    equilibrium_energy,
    equilibrium_mu,
    equilibrium_speed,
    fixed_points,
    linearization_eigenvalues,
    reduced_field_cartesian,
    reduced_hamiltonian,
    reduced_vector_field,
)
from .sphere.regularize import integrate_through_rest

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
FORMATS = ("csv", "json", "svg")


# -- manifest plumbing -------------------------------------------------------

@dataclass
class Run:
    manifest: dict
    digest: str
    command: str
    out: Path
    formats: tuple
    threads: int
    seed_grid: str | None = None

    def provenance(self) -> dict:
        return {"tool": "splinelab", "version": __version__, "command": self.command,
                "manifest_sha256": self.digest}


def _num(d: dict, key: str, default=None, *, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise InputError(f"missing numeric field {key!r}")
        return float(default)
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise InputError(f"field {key!r} must be a finite number, got {val!r}")
    if positive and not val > 0:
        raise InputError(f"field {key!r} must be positive")
    if nonneg and val < 0:
        raise InputError(f"field {key!r} must be nonnegative")
    return float(val)


def _vec(d: dict, key: str, size: int | None = None, default=None) -> np.ndarray:
    if key not in d:
        if default is None:
            raise InputError(f"missing vector field {key!r}")
        return np.asarray(default, float)
    try:
        arr = np.asarray(d[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"field {key!r} must be a list of numbers") from exc
    if arr.ndim > 1 or not np.all(np.isfinite(arr)):
        raise InputError(f"field {key!r} must be a finite vector")
    arr = np.atleast_1d(arr)
    if size is not None and arr.size != size:
        raise InputError(f"field {key!r} must have {size} entries")
    return arr


def _block(m: dict, key: str, required=True) -> dict:
    b = m.get(key, None)
    if b is None:
        if required:
            raise InputError(f"manifest lacks the {key!r} block")
        return {}
    if not isinstance(b, dict):
        raise InputError(f"{key!r} must be an object")
    return b


def _integrator(m: dict, default: IntegratorConfig | None = None) -> IntegratorConfig:
    base = default or IntegratorConfig()
    b = _block(m, "integrator", required=False)
    unknown = set(b) - {"tol", "h0", "hmin", "hmax", "max_steps"}
    if unknown:
        raise InputError(f"unknown integrator fields {sorted(unknown)}")
    kw = {k: _num(b, k, getattr(base, k), positive=True) for k in ("tol", "h0", "hmin", "hmax")}
    kw["max_steps"] = int(_num(b, "max_steps", base.max_steps, positive=True))
    return IntegratorConfig(**kw)


def _times(b: dict, default_span=(0.0, 1.0), default_samples=101) -> np.ndarray:
    if "t_eval" in b:
        t = _vec(b, "t_eval")
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise InputError("t_eval must be strictly increasing with at least 2 entries")
        return t
    span = _vec(b, "t_span", 2, default_span)
    n = int(_num(b, "samples", default_samples, positive=True))
    if n < 2 or not span[1] > span[0]:
        raise InputError("need samples >= 2 and t_span[1] > t_span[0]")
    return np.linspace(span[0], span[1], n)


def _sphere_radius(geometry: str) -> float:
    _, _, arg = geometry.partition(":")
    try:
        r = float(arg) if arg else 1.0
    except ValueError:
        raise InputError(f"bad sphere radius in {geometry!r}") from None
    if not r > 0:
        raise InputError("sphere radius must be positive")
    return r


def _cost(m: dict):
    c = m.get("cost", {"kind": "cubic"})
    if isinstance(c, str):
        c = {"kind": c}
    if not isinstance(c, dict):
        raise InputError("cost must be an object or a name")
    return parse_cost(c)


def _beta(m: dict) -> float:
    cost = _cost(m)
    if not isinstance(cost, Cubic):
        raise InputError("this command needs the cubic cost")
    return cost.beta


# -- output ------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(run: Run, header: list[str], rows) -> str:
    buf = io.StringIO()
    prov = run.provenance()
    buf.write(f"# {prov['tool']} {prov['version']} command={prov['command']} manifest_sha256={prov['manifest_sha256']}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(x) for x in row) + "\n")
    return buf.getvalue()


def _cell(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _json(run: Run, payload: dict) -> str:
    doc = {"provenance": run.provenance(), **payload}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _emit(run: Run, name: str, fmt: str, text: str, written: list) -> None:
    if fmt in run.formats:
        path = run.out / name
        _atomic_write(path, text)
        written.append(str(path))


# -- commands ----------------------------------------------------------------

def cmd_integrate(run: Run) -> dict:
    m = run.manifest
    system = m.get("system", "split")
    b = _block(m, "initial_state")
    times = _times(m, (0.0, 1.0), 101)
    written: list = []
    report: dict = {"system": system}

    if system == "frame-angles":
        p = _block(m, "params", required=False)
        mu, beta, r = _num(p, "mu", 2.0, positive=True), _num(p, "beta", 1.0, positive=True), _num(p, "r", 2.0, positive=True)
        cfg = _integrator(m, frame_angles_config())
        y0 = frame_angles_initial_state(mu, beta, r) if b.get("fixed_point", True) else _vec(b, "z", 13)
        traj = integrate(frame_angles_field(mu, beta, r), y0, (times[0], times[-1]), cfg, t_eval=times)
        Y = traj.y
        frames = np.stack([np.column_stack([Y[k, 3:6], Y[k, 6:9], Y[k, 0:3]]) for k in range(len(Y))])
        report.update(params={"mu": mu, "beta": beta, "r": r},
                      stationarity={k: float(np.max(np.abs(Y[:, i] - Y[0, i])))
                                    for k, i in (("v", 9), ("a", 10), ("theta", 11), ("phi", 12))},
                      orthogonality_drift=max(orthogonality_error(R) for R in frames))
        _emit(run, "unit20.csv", "csv",
              _csv(run, ["t", "e3_x", "e3_y", "e3_z"], ((t, *y[0:3]) for t, y in zip(traj.t, Y))), written)
        _emit(run, "unit21.csv", "csv",
              _csv(run, ["t", "v", "a", "theta", "phi"], ((t, *y[9:13]) for t, y in zip(traj.t, Y))), written)
    elif system == "reduced":
        r = _sphere_radius(m.get("geometry", "sphere-reduced:1"))
        beta = _beta(m)
        state = ReducedS2State(_num(b, "v"), _num(b, "a", 0.0), _vec(b, "M", 3))
        cfg = _integrator(m)
        traj = integrate(reduced_vector_field(ReducedParams(beta, r)), state.pack(), (times[0], times[-1]), cfg,
                         t_eval=times)
        report.update(params={"beta": beta, "r": r}, drift=conserved_audit(traj, reduced_quantities(beta, r)))
        rows = ((t, *y, reduced_hamiltonian(y, beta, r), float(y[2:5] @ y[2:5])) for t, y in zip(traj.t, traj.y))
        _emit(run, "trajectory.csv", "csv", _csv(run, ["t", "v", "a", "M1", "M2", "M3", "H", "Casimir"], rows), written)
    elif system == "crouch-leite":
        r = _sphere_radius(m.get("geometry", "sphere-extrinsic:1"))
        beta = _beta(m)
        st = ExtrinsicSphereState(_vec(b, "x0"), _vec(b, "x1"), _vec(b, "x2"), _vec(b, "x3"), r)
        cfg = _integrator(m)
        traj = integrate(crouch_leite_vector_field(beta, r), st.pack(), (times[0], times[-1]), cfg, t_eval=times)
        q = extrinsic_quantities(r)
        q["H"] = lambda y: extrinsic_hamiltonian(ExtrinsicSphereState.unpack(y, r), beta)
        report.update(params={"beta": beta, "r": r}, drift=conserved_audit(traj, q))
        n = st.ambient_dim
        cols = [f"x{k}_{i}" for k in range(4) for i in range(n)]
        _emit(run, "trajectory.csv", "csv", _csv(run, ["t", *cols], ((t, *y) for t, y in zip(traj.t, traj.y))), written)
    elif system == "split":
        geom = parse_geometry(m.get("geometry", "flat:1"))
        cost = _cost(m)
        n = geom.dim
        state = SplitState(_vec(b, "x", n), _vec(b, "v", n), _vec(b, "p", n), _vec(b, "alpha", n))
        geom.check(state.x)
        cfg = _integrator(m)
        traj = integrate(split_vector_field(geom, cost), state.pack(), (times[0], times[-1]), cfg, t_eval=times)
        report.update(geometry=m.get("geometry", "flat:1"),
                      drift=conserved_audit(traj, {"H": lambda y: optimal_hamiltonian(geom, cost, SplitState.unpack(y, n))}))
        if isinstance(geom, FlatSpace) and isinstance(cost, Cubic):
            report["cubic_fit"] = _cubic_report(traj.t, traj.y[:, :n])
        cols = [f"{k}_{i}" for k in ("x", "v", "p", "alpha") for i in range(n)]
        _emit(run, "trajectory.csv", "csv", _csv(run, ["t", *cols], ((t, *y) for t, y in zip(traj.t, traj.y))), written)
    else:
        raise InputError(f"unknown system {system!r}")

    report["integrator"] = _cfg_dict(cfg)
    report["steps"] = int(traj.steps.size)
    _emit(run, "metadata.json", "json", _json(run, report), written)
    return {"written": written, **report}


def _cubic_report(t, X) -> dict:
    """Least-squares cubic per coordinate: coefficients (c0..c3) and max residual."""
    coeffs, res = [], 0.0
    for i in range(X.shape[1]):
        c = np.polynomial.polynomial.polyfit(t, X[:, i], 3)
        coeffs.append(c)
        res = max(res, float(np.max(np.abs(np.polynomial.polynomial.polyval(t, c) - X[:, i]))))
    return {"coefficients": np.array(coeffs), "max_residual": res}


def _cfg_dict(cfg: IntegratorConfig) -> dict:
    return {"tol": cfg.tol, "h0": cfg.h0, "hmin": cfg.hmin, "hmax": cfg.hmax, "max_steps": cfg.max_steps}


def cmd_shoot(run: Run) -> dict:
    m = run.manifest
    b = _block(m, "boundary")
    geometry = m.get("geometry", "flat:1")
    cost = _cost(m)
    bd = BoundaryData(_vec(b, "q0"), _vec(b, "v0"), _vec(b, "q1"), _vec(b, "v1"), _num(b, "T", 1.0, positive=True))
    s = _block(m, "solver", required=False)
    cfg = _integrator(m, ShootOptions().cfg)
    opts = ShootOptions(tol=_num(s, "tol", ShootOptions.tol, positive=True),
                        max_iter=int(_num(s, "max_iter", 60, positive=True)),
                        multistart=int(_num(s, "multistart", 16, nonneg=True)),
                        seed=int(_num(s, "seed", 0, nonneg=True)),
                        threads=run.threads, all_extremals=bool(s.get("all_extremals", False)), cfg=cfg)
    g = _block(m, "guess", required=False)
    samples = int(_num(m, "samples", 101, positive=True))
    written: list = []
    if isinstance(cost, TimeMinimal):
        geom = parse_geometry(geometry)
        n = geom.dim
        res = tmin_shoot(geom, cost.A, bd, (_vec(g, "p0", n), _vec(g, "alpha0", n), _num(g, "T", positive=True)), opts)
        traj = res.trajectory
        ctrl = tmin_controls(geom, cost, traj)
        summary = {"T": res.T, "max_control_deviation": float(np.max(np.abs(ctrl - cost.A)))}
        t, Y = traj.t, traj.y[:, :2 * n]
    else:
        if geometry.startswith("sphere-extrinsic"):
            geom = ExtrinsicSphereBackend(_sphere_radius(geometry), cost.beta)
        else:
            geom = parse_geometry(geometry)
        guess = (_vec(g, "p0"), _vec(g, "alpha0")) if g else None
        res = shoot(geom, cost, bd, guess, opts)
        times = np.linspace(0.0, bd.T, samples)
        traj = sample(geom, cost, bd, res, times, cfg)
        t = np.concatenate([[0.0], traj.t[traj.t > 0]]) if traj.t[0] > 0 else traj.t
        Y = traj.y[:, :2 * bd.dim]
        summary = {"cost": res.cost, "extremals": [{"cost": e.cost, "p0": e.p0, "alpha0": e.alpha0}
                                                   for e in res.extremals]}
    n = bd.dim
    cols = [f"q_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)]
    _emit(run, "trajectory.csv", "csv", _csv(run, ["t", *cols], ((ti, *y) for ti, y in zip(t, Y))), written)
    report = {"p0": res.p0, "alpha0": res.alpha0, "mismatch": res.mismatch, "iterations": res.iterations,
              "converged": res.converged, "start_index": res.start_index, **summary,
              "integrator": _cfg_dict(cfg)}
    _emit(run, "result.json", "json", _json(run, report), written)
    return {"written": written, **report}


def _parse_seed_grid(text: str) -> tuple:
    """``v0:v1:nv,z0:z1:nz`` -> (v, z) pairs, z outer."""
    try:
        vpart, zpart = text.split(",")
        v0, v1, nv = vpart.split(":")
        z0, z1, nz = zpart.split(":")
        vs = np.linspace(float(v0), float(v1), int(nv))
        zs = np.linspace(float(z0), float(z1), int(nz))
    except ValueError:
        raise InputError(f"bad --seed-grid {text!r}; expected v0:v1:nv,z0:z1:nz") from None
    return tuple((float(v), float(z)) for z in zs for v in vs)


def section_spec_from_manifest(m: dict, seed_grid: str | None = None) -> SectionSpec:
    """SectionSpec from a poincare manifest; ``seed_grid`` overrides the seeds."""
    s = _block(m, "section")
    if seed_grid:
        seeds = _parse_seed_grid(seed_grid)
    elif "grid" in s:
        g = s["grid"]
        if not isinstance(g, dict):
            raise InputError("section.grid must be an object")
        v, z = _vec(g, "v", 3), _vec(g, "z", 3)
        seeds = tuple((float(a), float(c)) for c in np.linspace(z[0], z[1], int(z[2]))
                      for a in np.linspace(v[0], v[1], int(v[2])))
    else:
        raw = s.get("seeds")
        if not isinstance(raw, list) or not raw:
            raise InputError("section needs a nonempty seeds list or a grid")
        try:
            seeds = tuple((float(v), float(z)) for v, z in raw)
        except (TypeError, ValueError):
            raise InputError("seeds must be [v, z] pairs") from None
    kw = {}
    if "v_max" in s:
        kw["v_max"] = _num(s, "v_max", positive=True)
    if "v_min" in s:
        kw["v_min"] = _num(s, "v_min", positive=True)
    cfg = _integrator(m, SectionSpec.__dataclass_fields__["cfg"].default)
    return SectionSpec(
        h=_num(s, "h"), mu=_num(s, "mu", 2.0, positive=True), beta=_num(s, "beta", 1.0, positive=True),
        r=_num(s, "r", 2.0, positive=True), seeds=seeds,
        crossings=int(_num(s, "crossings", 200, positive=True)), t_max=_num(s, "t_max", 1e4, positive=True),
        direction=int(_num(s, "direction", 1)), time_direction=int(_num(s, "time_direction", 1)),
        a_sign=int(_num(s, "a_sign", 1)), cfg=cfg, **kw)


def cmd_poincare(run: Run) -> dict:
    spec = section_spec_from_manifest(run.manifest, run.seed_grid)
    res = poincare_section(spec, threads=run.threads)
    written: list = []
    header = ["seed_id", "crossing_index", "t", "v", "a", "z", "H_check", "casimir_check"]
    _emit(run, "section.csv", "csv", _csv(run, header, res.rows()), written)
    seeds = []
    for s in res.seeds:
        width = annulus_width(s.points[:, :2]) if len(s.points) >= 18 else None
        seeds.append({"seed_id": s.seed_id, "v0": s.v0, "z0": s.z0, "a0": s.a0, "status": s.status,
                      "crossings": len(s.points), "annulus_width": width, "message": s.message,
                      "max_energy_error": float(np.max(np.abs(s.H_check))) if len(s.H_check) else None})
    summary = {"h": spec.h, "mu": spec.mu, "beta": spec.beta, "r": spec.r, "escapes": res.escapes,
               "confined": res.confined, "points": int(sum(len(s.points) for s in res.seeds)), "seeds": seeds,
               "integrator": _cfg_dict(spec.cfg), "v_max": spec.vmax, "t_max": spec.t_max}
    _emit(run, "section.json", "json", _json(run, summary), written)
    pts = res.all_points()
    if len(pts) and "svg" in run.formats:
        groups = np.concatenate([np.full(len(s.points), s.seed_id) for s in res.seeds])
        svg = svg_scatter(pts[:, :2], ("v", "a"), labels={"h": spec.h, "mu": spec.mu, "beta": spec.beta, "r": spec.r},
                          groups=groups)
        svg = svg.replace("<svg ", f"<!-- splinelab {__version__} manifest_sha256={run.digest} -->\n<svg ", 1)
        _emit(run, "section.svg", "svg", svg, written)
    return {"written": written, **{k: v for k, v in summary.items() if k != "seeds"}}


def cmd_fixed_points(run: Run) -> dict:
    m = run.manifest
    p = _block(m, "params", required=False)
    beta, r = _num(p, "beta", 1.0, positive=True), _num(p, "r", 2.0, positive=True)
    if "mu" in p:
        speeds = [equilibrium_speed(x, beta, r) for x in np.atleast_1d(_vec(p, "mu"))]
    else:
        speeds = list(_vec(p, "v", default=[math.sqrt(2.0)]))
    rows, table = [], []
    for v in speeds:
        if not v > 0:
            raise InputError("equilibrium speeds must be positive")
        for sign, st in zip((1, -1), fixed_points(v, beta, r)):
            lin = linearization_eigenvalues(v, r, beta, sign)
            resid = float(np.max(np.abs(reduced_field_cartesian(st.pack(), beta, r))))
            ev = sorted(lin.closed_form, key=lambda z: (round(z.real, 12), round(z.imag, 12)))
            num = sorted(lin.eigenvalues, key=lambda z: (round(z.real, 6), round(z.imag, 6)))
            row = {"v": v, "a": st.a, "M1": st.M[0], "M2": st.M[1], "M3": st.M[2],
                   "mu": equilibrium_mu(v, beta, r), "h": equilibrium_energy(v, beta, r),
                   "field_residual": resid, "eigenvalues": ev, "eigenvalues_numerical": num,
                   "charpoly": lin.charpoly}
            table.append(row)
            rows.append((v, st.a, *st.M, row["mu"], row["h"], resid,
                         *(f"{z.real:.12g}{z.imag:+.12g}j" for z in ev)))
    written: list = []
    header = ["v", "a", "M1", "M2", "M3", "mu", "h", "field_residual", "lambda1", "lambda2", "lambda3", "lambda4"]
    _emit(run, "fixed_points.csv", "csv", _csv(run, header, rows), written)
    _emit(run, "fixed_points.json", "json", _json(run, {"beta": beta, "r": r, "equilibria": table}), written)
    return {"written": written, "equilibria": len(table)}


def cmd_reconstruct(run: Run) -> dict:
    m = run.manifest
    r = _sphere_radius(m.get("geometry", "sphere-reduced:1"))
    beta = _beta(m)
    b = _block(m, "initial_state")
    if "equilibrium" in b:
        e = b["equilibrium"] if isinstance(b["equilibrium"], dict) else {}
        v = _num(e, "v", math.sqrt(2.0), positive=True)
        sign = int(_num(e, "sign", 1))
        state = fixed_points(v, beta, r)[0 if sign > 0 else 1]
    else:
        state = ReducedS2State(_num(b, "v"), _num(b, "a", 0.0), _vec(b, "M", 3))
    R0 = np.asarray(m.get("R0", np.eye(3).tolist()), float)
    if R0.shape != (3, 3) or orthogonality_error(R0) > 1e-10 or np.linalg.det(R0) < 0:
        raise InputError("R0 must be a 3x3 rotation")
    times = _times(m, (0.0, 1.0), 101)
    cfg = _integrator(m)
    if m.get("through_rest", False):
        rec = integrate_through_rest(state, R0, times, beta=beta, r=r, cfg=cfg)
    else:
        rec = reconstruct_trajectory(state, R0, (times[0], times[-1]), beta=beta, r=r, cfg=cfg, t_eval=times)
    G = rec.gamma
    rows = ((t, *g, y[0], y[1], *_theta_phi(y[2:5]), *y[2:5]) for t, g, y in zip(rec.t, G, rec.reduced))
    written: list = []
    header = ["t", "gx", "gy", "gz", "v", "a", "theta", "phi", "M1", "M2", "M3"]
    _emit(run, "curve.csv", "csv", _csv(run, header, rows), written)
    H, C = rec.hamiltonian(), rec.casimir()
    report = {"beta": beta, "r": r, "orthogonality_drift": rec.orthogonality_drift(),
              "radius_error": float(np.max(np.abs(np.linalg.norm(G, axis=1) - r))),
              "energy_drift": float(np.max(np.abs(H - H[0]))), "casimir_drift": float(np.max(np.abs(C - C[0]))),
              "switches": list(rec.switches), "integrator": _cfg_dict(cfg)}
    _emit(run, "curve.json", "json", _json(run, report), written)
    return {"written": written, **report}


def _theta_phi(M) -> tuple[float, float]:
    """Momentum-sphere angles; theta is undefined (nan) on the poles M1 = M3 = 0."""
    mu = float(np.linalg.norm(M))
    if mu == 0.0:
        return math.nan, math.nan
    phi = math.asin(max(-1.0, min(1.0, M[1] / mu)))
    theta = math.atan2(M[2], M[0]) if M[0] != 0.0 or M[2] != 0.0 else math.nan
    return theta, phi


def cmd_audit(run: Run) -> dict:
    m = run.manifest
    system = m.get("system", "reduced")
    a = _block(m, "audit", required=False)
    count = int(_num(a, "count", 20, positive=True))
    seed = int(_num(a, "seed", 0, nonneg=True))
    t_end = _num(a, "t_end", 100.0 if system == "reduced" else 20.0, positive=True)
    cfg = _integrator(m)
    rng = np.random.default_rng(seed)
    beta = _beta(m)
    reports = []
    if system == "reduced":
        r = _sphere_radius(m.get("geometry", "sphere-reduced:2"))
        mu = _num(a, "mu", 2.0, positive=True)
        ranges = {k: tuple(_vec(a, k, 2, d)) for k, d in
                  (("v_range", (20.0, 30.0)), ("a_range", (-0.1, 0.1)), ("z_range", (0.0, 2e-4)))}
        f = reduced_vector_field(ReducedParams(beta, r))
        for k in range(count):
            y0 = random_reduced_state(rng, mu, **ranges)
            traj = integrate(f, y0, (0.0, t_end), cfg)
            reports.append({"run": k, "y0": y0, **conserved_audit(traj, reduced_quantities(beta, r))})
    elif system == "crouch-leite":
        r = _sphere_radius(m.get("geometry", "sphere-extrinsic:1"))
        n = int(_num(a, "n", 2, positive=True))
        scale = _num(a, "scale", 0.5, positive=True)
        f = crouch_leite_vector_field(beta, r)
        for k in range(count):
            st = random_tangent_state(rng, n, r, scale=scale, min_speed=0.1)
            traj = integrate(f, st.pack(), (0.0, t_end), cfg)
            reports.append({"run": k, **conserved_audit(traj, extrinsic_quantities(r))})
    else:
        raise InputError(f"audit supports 'reduced' and 'crouch-leite', not {system!r}")
    names = [k for k in reports[0] if isinstance(reports[0][k], dict)]
    worst = {q: {"abs_drift": max(rp[q]["abs_drift"] for rp in reports),
                 "rel_drift": max(rp[q]["rel_drift"] for rp in reports)} for q in names}
    written: list = []
    rows = ((rp["run"], q, rp[q]["initial"], rp[q]["abs_drift"], rp[q]["rel_drift"]) for rp in reports for q in names)
    _emit(run, "audit.csv", "csv", _csv(run, ["run", "quantity", "initial", "abs_drift", "rel_drift"], rows), written)
    _emit(run, "audit.json", "json", _json(run, {"system": system, "t_end": t_end, "worst": worst, "runs": reports,
                                                 "integrator": _cfg_dict(cfg)}), written)
    return {"written": written, "worst": worst}


COMMANDS = {
    "integrate": cmd_integrate,
    "shoot": cmd_shoot,
    "poincare": cmd_poincare,
    "fixed-points": cmd_fixed_points,
    "reconstruct": cmd_reconstruct,
    "audit": cmd_audit,
}


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splinelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"splinelab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--manifest", required=True, type=Path, help="JSON run manifest")
        sp.add_argument("--out", type=Path, help="output directory (overrides the manifest)")
        sp.add_argument("--format", action="append", choices=FORMATS,
                        help="restrict outputs to this format (repeatable)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $SPLINELAB_THREADS or 1)")
        if name == "poincare":
            sp.add_argument("--seed-grid", help="override seeds: v0:v1:nv,z0:z1:nz")
    return ap


def _threads(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("SPLINELAB_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise InputError(f"SPLINELAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


def load_run(args) -> Run:
    try:
        raw = args.manifest.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read manifest: {exc}") from exc
    try:
        manifest = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise InputError("manifest must be a JSON object")
    declared = manifest.get("command")
    if declared is not None and declared != args.command:
        raise InputError(f"manifest is for {declared!r}, not {args.command!r}")
    output = _block(manifest, "output", required=False)
    out = args.out or Path(output.get("dir", "out"))
    formats = tuple(args.format) if args.format else tuple(output.get("formats", FORMATS))
    if not set(formats) <= set(FORMATS):
        raise InputError(f"formats must be among {FORMATS}")
    return Run(manifest, hashlib.sha256(raw).hexdigest(), args.command, Path(out), formats,
               _threads(args.threads), getattr(args, "seed_grid", None))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        run = load_run(args)
        result = COMMANDS[args.command](run)
    except (InputError, KeyError, TypeError, ValueError) as exc:
        # ValueError covers DomainError and malformed manifest values
        print(f"splinelab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except IntegrationError as exc:
        print(f"splinelab: numerical failure at t = {exc.t!r}: {exc}", file=sys.stderr)
        print("last state: " + json.dumps(exc.y.tolist()), file=sys.stderr)
        return EXIT_NUMERIC
    except ShootingError as exc:
        print(f"splinelab: numerical failure: {exc}", file=sys.stderr)
        if exc.best is not None:
            print(f"best iterate: p0={exc.best.p0.tolist()} alpha0={exc.best.alpha0.tolist()} "
                  f"mismatch={exc.best.mismatch:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SplineLabError as exc:
        print(f"splinelab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_jsonable({"command": args.command, "written": result.get("written", [])})))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
