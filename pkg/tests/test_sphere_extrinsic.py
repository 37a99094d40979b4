import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from splinelab.errors import ConstraintDriftError, InputError, VelocitySingularityError
from splinelab.ode import IntegratorConfig, integrate
from splinelab.sphere.extrinsic import (
    ExtrinsicSphereState,
    constraint_residuals,
    crouch_leite_field,
    crouch_leite_vector_field,
    extrinsic_hamiltonian,
    extrinsic_split_vars,
    poisson_lift,
    poisson_project,
    project_state,
    project_to_constraints,
    random_tangent_state,
)
from splinelab.sphere.frames import figure_eight_circle
from splinelab.sphere.reduced import ReducedS2State, fixed_points, reduced_field_cartesian

E1, E2, E3 = np.eye(3)


def test_rest_point_of_the_flow():
    s = ExtrinsicSphereState(E3, np.zeros(3), np.zeros(3), np.zeros(3))
    assert_array_equal(crouch_leite_field(s).pack(), 0.0)


def test_state_validation():
    with pytest.raises(InputError):
        ExtrinsicSphereState(E3, np.zeros(2), np.zeros(3), np.zeros(3))
    with pytest.raises(InputError):
        ExtrinsicSphereState(E3, E1, E2, E1, r=0.0)


def test_drift_error_beyond_limit():
    s = ExtrinsicSphereState(1.01 * E3, E1, E2, E1)
    with pytest.raises(ConstraintDriftError):
        crouch_leite_field(s)


@pytest.mark.parametrize("r, n", [(1.0, 2), (2.0, 2), (0.7, 3)])
def test_constraint_manifold_is_invariant(rng, r, n):
    # time derivatives of the four constraints vanish on the manifold
    for _ in range(10):
        s = random_tangent_state(rng, n=n, r=r)
        d = crouch_leite_field(s, beta=1.7)
        x0, x1, x2, x3 = s.x0, s.x1, s.x2, s.x3
        rates = [x0 @ d.x0, d.x0 @ x1 + x0 @ d.x1, d.x0 @ x2 + x0 @ d.x2, d.x0 @ x3 + x0 @ d.x3]
        assert_allclose(rates, 0.0, atol=1e-10)


def test_smooth_through_zero_velocity(rng):
    s = random_tangent_state(rng)
    s = ExtrinsicSphereState(s.x0, np.zeros(3), s.x2, s.x3)
    d = crouch_leite_field(s)
    assert np.all(np.isfinite(d.pack()))


def test_random_constraints_drift(rng):
    for _ in range(3):
        s = random_tangent_state(rng, r=1.0)
        tr = integrate(crouch_leite_vector_field(1.0, 1.0), s.pack(), (0.0, 20.0), IntegratorConfig(tol=1e-12))
        drift = max(np.max(np.abs(constraint_residuals(ExtrinsicSphereState.unpack(y)))) for y in tr.y)
        assert drift < 1e-8


def test_extrinsic_hamiltonian_conserved(rng):
    s = random_tangent_state(rng, r=2.0)
    tr = integrate(crouch_leite_vector_field(1.0, 2.0), s.pack(), (0.0, 10.0), IntegratorConfig(tol=1e-12))
    H = [extrinsic_hamiltonian(ExtrinsicSphereState.unpack(y, 2.0)) for y in tr.y]
    assert np.ptp(H) < 1e-9 * (1 + abs(H[0]))


def test_figure_eight_relative_equilibrium():
    v = 0.8
    eq = fixed_points(v, 1.0, 1.0)[0]
    s = poisson_lift(eq, np.eye(3), 1.0)
    assert_allclose(s.x2, v * v * E2, atol=1e-15)
    period = 2 * math.pi / (math.sqrt(2) * v)
    times = np.linspace(0.0, period, 101)
    tr = integrate(crouch_leite_vector_field(1.0, 1.0), s.pack(), (0.0, period), IntegratorConfig(tol=1e-13),
                   t_eval=times)
    assert np.max(np.abs(tr.y[:, :3] - figure_eight_circle(times, v, 1.0))) < 1e-6


def test_split_vars_examples():
    p, alpha = extrinsic_split_vars(E3, E1, E1, E3, 1.0)
    assert_array_equal(alpha, 0.0)
    assert_array_equal(p, 0.0)
    pt, at = np.array([0.3, -0.2, 0.0]), np.array([0.5, 0.1, 0.0])
    p, alpha = extrinsic_split_vars(E3, E2, pt, at)
    assert_array_equal(alpha, at)
    assert_array_equal(p, pt)
    t = np.array([0.4, -0.9, 0.0])
    for a in (-3.0, 0.0, 2.5):
        _, alpha = extrinsic_split_vars(2 * E3, E1, E2, a * 2 * E3 / 4 + t, 2.0)
        assert_allclose(alpha, t, atol=1e-15)


def test_split_vars_tangency(rng):
    for _ in range(20):
        r = rng.uniform(0.5, 3.0)
        x = rng.normal(size=3)
        x *= r / np.linalg.norm(x)
        v = rng.normal(size=3)
        v -= (v @ x) * x / r**2
        p, alpha = extrinsic_split_vars(x, v, rng.normal(size=3), rng.normal(size=3), r)
        assert abs(p @ x) < 1e-12
        assert abs(alpha @ x) < 1e-12


def test_split_vars_radius_check():
    with pytest.raises(InputError):
        extrinsic_split_vars(1.1 * E3, E1, E1, E1, 1.0)


def test_poisson_example():
    red = poisson_project(E3, 2 * E1, np.array([0.3, -0.5, 0.0]), np.array([0.7, 0.4, 0.0]))
    assert_allclose(red.pack(), [2.0, 0.7, 0.5, 0.3, 0.8], atol=1e-15)


def test_poisson_zero_costates():
    red = poisson_project(E2, E1, np.zeros(3), np.zeros(3))
    assert red.a == 0.0
    assert_array_equal(red.M, 0.0)


def test_poisson_determinant_form(rng):
    # with r = 1: M1 = det(p, e1, x), M2 = p.e1, M3 = det(alpha, x, v)
    s = random_tangent_state(rng, r=1.0, min_speed=0.2)
    red = project_state(s)
    e1 = s.x1 / np.linalg.norm(s.x1)
    assert red.M[0] == pytest.approx(np.linalg.det(np.array([s.p, e1, s.x0])), abs=1e-12)
    assert red.M[1] == pytest.approx(s.p @ e1, abs=1e-12)
    assert red.M[2] == pytest.approx(np.linalg.det(np.array([s.alpha, s.x0, s.x1])), abs=1e-12)


def test_poisson_undefined_at_rest():
    with pytest.raises(VelocitySingularityError):
        poisson_project(E3, np.zeros(3), E1, E2)


def test_fixed_point_preimage_projects_back():
    for eq in fixed_points(math.sqrt(2), 1.0, 2.0):
        R = np.linalg.qr(np.random.default_rng(3).normal(size=(3, 3)))[0]
        R *= np.sign(np.linalg.det(R))
        s = poisson_lift(eq, R, 2.0)
        assert_allclose(project_state(s).pack(), eq.pack(), atol=1e-14)


@pytest.mark.parametrize("r, beta", [(1.0, 1.0), (2.0, 0.5)])
def test_projection_intertwines_fields(rng, r, beta):
    for _ in range(10):
        s = random_tangent_state(rng, r=r, min_speed=0.3)
        d = crouch_leite_field(s, beta)
        eps = 1e-6
        hi = project_state(ExtrinsicSphereState.unpack(s.pack() + eps * d.pack(), r)).pack()
        lo = project_state(ExtrinsicSphereState.unpack(s.pack() - eps * d.pack(), r)).pack()
        lhs = (hi - lo) / (2 * eps)
        rhs = reduced_field_cartesian(project_state(s).pack(), beta, r)
        assert_allclose(lhs, rhs, atol=1e-8 * (1 + np.max(np.abs(rhs))))


def test_projection_sup_norm_over_time(rng):
    s = random_tangent_state(rng, r=1.0, scale=0.5, min_speed=0.5)
    times = np.linspace(0.0, 3.0, 31)
    cfg = IntegratorConfig(tol=1e-13)
    cl = integrate(crouch_leite_vector_field(1.0, 1.0), s.pack(), (0.0, 3.0), cfg, t_eval=times)
    red0 = project_state(s).pack()
    rd = integrate(lambda t, y: reduced_field_cartesian(y, 1.0, 1.0), red0, (0.0, 3.0), cfg, t_eval=times)
    proj = np.array([project_state(ExtrinsicSphereState.unpack(y)).pack() for y in cl.y])
    assert np.max(np.abs(proj - rd.y)) < 1e-6


def test_lift_is_right_inverse(rng):
    red = ReducedS2State(1.3, -0.4, rng.normal(size=3))
    s = poisson_lift(red, None, 2.0)
    assert np.max(np.abs(constraint_residuals(s))) < 1e-15
    assert_allclose(project_state(s).pack(), red.pack(), atol=1e-14)


def test_project_to_constraints(rng):
    s = random_tangent_state(rng, r=1.5)
    noisy = ExtrinsicSphereState.unpack(s.pack() + 1e-3 * rng.normal(size=12), 1.5)
    assert np.max(np.abs(constraint_residuals(project_to_constraints(noisy)))) < 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.3, 4.0))
def test_random_tangent_states_satisfy_constraints(seed, r):
    s = random_tangent_state(np.random.default_rng(seed), r=r)
    assert np.max(np.abs(constraint_residuals(s))) < 1e-12 * max(1.0, r)
