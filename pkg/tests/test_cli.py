import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from splinelab.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main

MANIFESTS = Path(__file__).resolve().parents[1] / "manifests"

SECTION = {
    "command": "poincare",
    "section": {"h": 0.806, "mu": 2.0, "beta": 1.0, "r": 2.0, "crossings": 12,
                "seeds": [[2.0, 0.05], [1.805584, 0.110767]]},
}


def write(tmp_path, payload, name="m.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def run(command, manifest, out, *extra):
    return main([command, "--manifest", str(manifest), "--out", str(out), *extra])


def read_csv(path: Path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.reader(lines[1:]))


@pytest.mark.parametrize("command, name", [
    ("fixed-points", "fixed_points"),
    ("integrate", "flat_cubic"),
    ("integrate", "frame_angles"),
    ("shoot", "shoot_flat"),
    ("shoot", "shoot_tmin"),
    ("shoot", "shoot_sphere"),
    ("reconstruct", "equator"),
    ("reconstruct", "figure_eight"),
])
def test_shipped_manifests_run(tmp_path, capsys, command, name):
    assert run(command, MANIFESTS / f"{name}.json", tmp_path) == EXIT_OK
    written = json.loads(capsys.readouterr().out)["written"]
    assert written
    for path in written:
        assert Path(path).stat().st_size > 0
    assert not list(tmp_path.glob(".*.tmp"))


def test_fixed_points_output(tmp_path):
    assert run("fixed-points", MANIFESTS / "fixed_points.json", tmp_path) == EXIT_OK
    data = json.loads((tmp_path / "fixed_points.json").read_text())
    eq = data["equilibria"]
    s = math.sqrt(2.0)
    assert len(eq) == 2
    for row, sign in zip(eq, (1, -1)):
        np.testing.assert_allclose([row["v"], row["a"], row["M1"], row["M2"], row["M3"]], [s, 0, 0, s, sign * s],
                                   atol=1e-12)
        assert row["field_residual"] < 1e-14
        assert row["h"] == pytest.approx(1.5)


def test_provenance_header(tmp_path):
    manifest = MANIFESTS / "flat_cubic.json"
    assert run("integrate", manifest, tmp_path) == EXIT_OK
    header, rows = read_csv(tmp_path / "trajectory.csv")
    digest = hashlib.sha256(manifest.read_bytes()).hexdigest()
    assert header.startswith("# splinelab ")
    assert f"manifest_sha256={digest}" in header
    assert "command=integrate" in header
    assert rows[0][0] == "t" and len(rows) == 102
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["provenance"]["manifest_sha256"] == digest
    assert meta["cubic_fit"]["max_residual"] < 1e-11


def test_reduced_integrate_columns(tmp_path):
    m = {"command": "integrate", "system": "reduced", "geometry": "sphere-reduced:2",
         "initial_state": {"v": 1.0, "a": 0.2, "M": [0.3, 1.2, -0.5]}, "t_span": [0.0, 1.0], "samples": 11}
    assert run("integrate", write(tmp_path, m), tmp_path / "o") == EXIT_OK
    _, rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert rows[0] == ["t", "v", "a", "M1", "M2", "M3", "H", "Casimir"]
    casimir = [float(r[7]) for r in rows[1:]]
    assert max(casimir) - min(casimir) < 1e-10


def test_reconstruct_columns(tmp_path):
    assert run("reconstruct", MANIFESTS / "equator.json", tmp_path) == EXIT_OK
    _, rows = read_csv(tmp_path / "curve.csv")
    assert rows[0] == ["t", "gx", "gy", "gz", "v", "a", "theta", "phi", "M1", "M2", "M3"]
    # M = (0, mu, 0) sits on a pole of the momentum sphere
    assert rows[1][6] == "nan"
    assert float(rows[1][7]) == pytest.approx(math.pi / 2)
    g = np.array([[float(x) for x in r[1:4]] for r in rows[1:]])
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 2.0, atol=1e-9)


def test_poincare_outputs_and_determinism(tmp_path):
    manifest = write(tmp_path, SECTION)
    assert run("poincare", manifest, tmp_path / "a") == EXIT_OK
    assert run("poincare", manifest, tmp_path / "b") == EXIT_OK
    for name in ("section.csv", "section.json", "section.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, rows = read_csv(tmp_path / "a" / "section.csv")
    assert rows[0] == ["seed_id", "crossing_index", "t", "v", "a", "z", "H_check", "casimir_check"]
    assert len(rows) == 1 + 24
    assert max(abs(float(r[6])) for r in rows[1:]) < 1e-9
    svg = (tmp_path / "a" / "section.svg").read_text()
    assert svg.count("<circle") == 24
    assert "h=0.806, mu=2, beta=1, r=2" in svg


def test_threads_flag_and_env_agree(tmp_path, monkeypatch):
    manifest = write(tmp_path, SECTION)
    assert run("poincare", manifest, tmp_path / "one", "--threads", "1") == EXIT_OK
    monkeypatch.setenv("SPLINELAB_THREADS", "2")
    assert run("poincare", manifest, tmp_path / "two") == EXIT_OK
    assert (tmp_path / "one" / "section.csv").read_bytes() == (tmp_path / "two" / "section.csv").read_bytes()
    monkeypatch.setenv("SPLINELAB_THREADS", "many")
    assert run("poincare", manifest, tmp_path / "bad") == EXIT_INPUT


def test_seed_grid_override(tmp_path):
    manifest = write(tmp_path, SECTION)
    assert run("poincare", manifest, tmp_path, "--seed-grid", "2.0:2.5:2,0.05:0.05:1", "--format", "json") == EXIT_OK
    summary = json.loads((tmp_path / "section.json").read_text())
    assert [(s["v0"], s["z0"]) for s in summary["seeds"]] == [(2.0, 0.05), (2.5, 0.05)]
    assert not (tmp_path / "section.csv").exists()
    assert run("poincare", manifest, tmp_path, "--seed-grid", "nonsense") == EXIT_INPUT


def test_audit_small(tmp_path):
    for system, geometry in (("reduced", "sphere-reduced:2"), ("crouch-leite", "sphere-extrinsic:1")):
        m = {"command": "audit", "system": system, "geometry": geometry, "audit": {"count": 2, "t_end": 5.0},
             "integrator": {"tol": 1e-13}}
        out = tmp_path / system
        assert run("audit", write(tmp_path, m), out) == EXIT_OK
        worst = json.loads((out / "audit.json").read_text())["worst"]
        assert max(q["abs_drift"] for q in worst.values()) < 1e-9


@pytest.mark.parametrize("payload", [
    "{not json",
    json.dumps([1, 2]),
    json.dumps({"command": "shoot"}),
    json.dumps({"command": "integrate", "system": "split", "geometry": "flat:2",
                "initial_state": {"x": [0, 0], "v": [1, 0], "p": [0, 0]}}),
    json.dumps({"command": "integrate", "system": "split", "geometry": "torus:1",
                "initial_state": {"x": [0], "v": [1], "p": [0], "alpha": [0]}}),
    json.dumps({"command": "integrate", "system": "split", "geometry": "flat:1",
                "initial_state": {"x": [0], "v": [1], "p": [0], "alpha": [0]}, "integrator": {"tol": -1}}),
    json.dumps({"command": "integrate", "system": "split", "geometry": "flat:1",
                "initial_state": {"x": [0], "v": [1], "p": [0], "alpha": [0]}, "integrator": {"order": 5}}),
    json.dumps({"command": "integrate", "system": "split", "geometry": "sphere:1",
                "initial_state": {"x": [0, 0], "v": [1, 0], "p": [0, 0], "alpha": [0, 0]}}),
])
def test_malformed_manifests_exit_2(tmp_path, capsys, payload):
    path = tmp_path / "bad.json"
    path.write_text(payload)
    assert run("integrate", path, tmp_path / "o") == EXIT_INPUT
    assert "input error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_manifest_and_bad_flags(tmp_path):
    assert run("integrate", tmp_path / "nope.json", tmp_path) == EXIT_INPUT
    assert main(["integrate"]) == EXIT_INPUT
    assert main(["frobnicate", "--manifest", "x"]) == EXIT_INPUT
    assert run("integrate", MANIFESTS / "flat_cubic.json", tmp_path, "--format", "pdf") == EXIT_INPUT


def test_equator_reaching_rest_exits_3(tmp_path, capsys):
    # v(t) = 1 + t/2 - t^2/2 vanishes at t = 2
    m = {"command": "reconstruct", "geometry": "sphere-reduced:2",
         "initial_state": {"v": 1.0, "a": 0.5, "M": [0.0, 2.0, 0.0]}, "t_span": [0.0, 3.0], "samples": 31}
    assert run("reconstruct", write(tmp_path, m), tmp_path / "o") == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "numerical failure" in err
    assert not (tmp_path / "o" / "curve.csv").exists()


def test_equator_through_rest_succeeds(tmp_path):
    m = {"command": "reconstruct", "geometry": "sphere-reduced:2", "through_rest": True,
         "initial_state": {"v": 1.0, "a": 0.5, "M": [0.0, 2.0, 0.0]}, "t_span": [0.0, 3.0], "samples": 31}
    assert run("reconstruct", write(tmp_path, m), tmp_path) == EXIT_OK
    report = json.loads((tmp_path / "curve.json").read_text())
    assert len(report["switches"]) == 2


def test_singular_time_minimal_guess_exits_3(tmp_path, capsys):
    m = {"command": "shoot", "geometry": "flat:1", "cost": {"kind": "time-minimal", "A": 1.0},
         "boundary": {"q0": [0.0], "v0": [1.0], "q1": [1.0], "v1": [1.0]},
         "guess": {"p0": [0.0], "alpha0": [0.0], "T": 1.0}}
    assert run("shoot", write(tmp_path, m), tmp_path) == EXIT_NUMERIC
    assert "singular" in capsys.readouterr().err


def test_wrong_command_for_manifest(tmp_path):
    assert run("poincare", MANIFESTS / "flat_cubic.json", tmp_path) == EXIT_INPUT
