import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from splinelab.errors import InputError, SingularControlError
from splinelab.geometry import FlatSpace, LandmarkLine2, SphereChart
from splinelab.ode import IntegratorConfig, integrate
from splinelab.pmp import (
    CanonicalState,
    Cubic,
    SplitState,
    TimeMinimal,
    canonical_hamiltonian,
    canonical_symplectic_form,
    canonical_to_split,
    optimal_control,
    optimal_hamiltonian,
    parse_cost,
    spline_law_residual,
    split_field,
    split_to_canonical,
    split_vector_field,
    symplectic_form_split,
)
from splinelab.sphere.extrinsic import ExtrinsicSphereState, crouch_leite_field

S2 = SphereChart(1.0)


def _state(x, v, p, a):
    return SplitState(np.array(x, float), np.array(v, float), np.array(p, float), np.array(a, float))


def _random_sphere_state(rng, geom=S2):
    x = np.array([rng.uniform(0.4, math.pi - 0.4), rng.uniform(-math.pi, math.pi)])
    return SplitState(x, rng.normal(size=2), rng.normal(size=2), rng.normal(size=2))


def test_optimal_control_examples():
    flat2 = FlatSpace(2)
    s = _state([0, 0], [0, 0], [0, 0], [3, 4])
    assert_array_equal(optimal_control(flat2, Cubic(1.0), s), [3.0, 4.0])
    assert_allclose(optimal_control(flat2, TimeMinimal(2.0), s), [1.2, 1.6], rtol=1e-15)
    s = _state([0, 0], [0, 0], [0, 0], [1, 0])
    assert_array_equal(optimal_control(flat2, Cubic(2.0), s), [0.5, 0.0])


def test_time_minimal_control_has_norm_A(rng):
    for _ in range(20):
        s = _random_sphere_state(rng)
        u = optimal_control(S2, TimeMinimal(1.7), s)
        assert math.sqrt(u @ S2.metric(s.x) @ u) == pytest.approx(1.7, abs=1e-12)


def test_time_minimal_singular_control():
    s = _state([0.0], [1.0], [0.0], [0.0])
    with pytest.raises(SingularControlError):
        optimal_control(FlatSpace(1), TimeMinimal(1.0), s)
    with pytest.raises(SingularControlError):
        split_field(FlatSpace(1), TimeMinimal(1.0), s)


def test_optimal_hamiltonian_examples():
    flat2 = FlatSpace(2)
    assert optimal_hamiltonian(flat2, Cubic(1.0), _state([0, 0], [2, 0], [1, 0], [0, 3])) == 6.5
    assert optimal_hamiltonian(flat2, TimeMinimal(1.0), _state([0, 0], [5, -1], [0, 0], [0, 0])) == -1.0
    assert optimal_hamiltonian(flat2, Cubic(3.3), _state([1, 2], [5, -1], [0, 0], [0, 0])) == 0.0


def test_fenchel_identity(rng):
    # c(g(u*, u*)) + Leg(c)(g^-1(alpha, alpha)) = <alpha, u*>
    for cost in (Cubic(0.7), Cubic(2.0), TimeMinimal(0.5), TimeMinimal(3.0)):
        for _ in range(500):
            s = _random_sphere_state(rng)
            u = optimal_control(S2, cost, s)
            lhs = cost.cost(u @ S2.metric(s.x) @ u) + cost.legendre(s.alpha @ S2.cometric(s.x) @ s.alpha)
            assert lhs == pytest.approx(s.alpha @ u, abs=1e-12 * (1 + abs(lhs)))


def test_cost_validation():
    with pytest.raises(InputError):
        Cubic(0.0)
    with pytest.raises(InputError):
        TimeMinimal(-1.0)
    with pytest.raises(InputError):
        parse_cost({"kind": "quartic"})
    assert parse_cost({"kind": "time-minimal", "A": 2}) == TimeMinimal(2.0)


def test_split_field_flat_is_cubic_system(rng):
    s = SplitState(*(rng.normal(size=3) for _ in range(4)))
    d = split_field(FlatSpace(3), Cubic(1.0), s)
    assert_array_equal(d.x, s.v)
    assert_array_equal(d.v, s.alpha)
    assert_array_equal(d.p, 0.0)
    assert_array_equal(d.alpha, -s.p)


def test_split_field_rest_state():
    s = _state([1.0, 0.5], [0, 0], [0, 0], [0, 0])
    for geom in (S2, LandmarkLine2()):
        assert_array_equal(split_field(geom, Cubic(1.0), s).pack(), 0.0)


def _chart_to_ambient(x, v, p, alpha):
    """Tangent data in the colatitude/longitude chart as ambient vectors on S^2(1)."""
    J = S2.embed_jacobian(x)
    ginv = S2.cometric(x)
    return S2.embed(x), J @ v, J @ ginv @ p, J @ ginv @ alpha


@pytest.mark.parametrize("phi", [0.0, 1.3])
def test_split_field_matches_crouch_leite_on_equator(rng, phi):
    x = np.array([math.pi / 2, phi])
    v, p, alpha = rng.normal(size=(3, 2))
    d = split_field(S2, Cubic(1.0), SplitState(x, v, p, alpha))
    X0, X1, P, A = _chart_to_ambient(x, v, p, alpha)
    cl = crouch_leite_field(ExtrinsicSphereState.from_split(X0, X1, P, A, 1.0))
    eps = 1e-6
    dJ = (S2.embed_jacobian(x + eps * v) - S2.embed_jacobian(x - eps * v)) / (2 * eps)
    J = S2.embed_jacobian(x)
    # ambient acceleration is J v' + (dJ[v]) v; covectors pull back as J^T
    assert_allclose(J @ d.v + dJ @ v, cl.x1, atol=1e-8)
    assert_allclose(d.alpha, J.T @ cl.x2 + dJ.T @ A, atol=1e-8)
    assert_allclose(d.p, -(J.T @ cl.x3) + dJ.T @ P, atol=1e-8)


def test_split_field_conserves_hamiltonian_pointwise(rng):
    for cost in (Cubic(1.3), TimeMinimal(0.8)):
        for geom in (S2, SphereChart(2.0), LandmarkLine2()):
            s = _random_sphere_state(rng) if isinstance(geom, SphereChart) else SplitState(
                np.array([0.0, 1.2]), *rng.normal(size=(3, 2)))
            d = split_field(geom, cost, s).pack()
            y = s.pack()
            eps = 1e-6
            dH = (optimal_hamiltonian(geom, cost, SplitState.unpack(y + eps * d))
                  - optimal_hamiltonian(geom, cost, SplitState.unpack(y - eps * d))) / (2 * eps)
            assert abs(dH) < 1e-8 * (1 + np.linalg.norm(d))


@pytest.mark.parametrize("cost", [Cubic(1.0), TimeMinimal(1.0)])
def test_hamiltonian_conserved_along_flow(cost):
    s0 = _state([1.2, 0.3], [0.4, -0.2], [0.1, 0.2], [0.3, 0.1])
    y0 = s0.pack()
    tr = integrate(split_vector_field(S2, cost), y0, (0.0, 10.0), IntegratorConfig(tol=1e-12))
    H = np.array([optimal_hamiltonian(S2, cost, SplitState.unpack(y)) for y in tr.y])
    assert np.max(np.abs(H - H[0])) < 1e-9 * (1 + abs(H[0]))


def test_canonical_round_trip(rng):
    for geom in (FlatSpace(2), S2, LandmarkLine2()):
        for _ in range(20):
            s = _random_sphere_state(rng) if geom is S2 else SplitState(
                np.array([0.1, 0.9]), *rng.normal(size=(3, 2)))
            c = split_to_canonical(geom, s)
            assert_array_equal(c.x, s.x)
            assert_array_equal(c.v, s.v)
            assert_array_equal(c.alpha, s.alpha)
            assert_allclose(canonical_to_split(geom, c).pack(), s.pack(), atol=1e-14)


def test_canonical_flat_identity(rng):
    s = SplitState(*rng.normal(size=(4, 3)))
    assert_array_equal(split_to_canonical(FlatSpace(3), s).pack(), s.pack())


def test_canonical_sphere_example():
    th = math.pi / 3
    s = _state([th, 0.0], [1.0, 1.0], [0.2, -0.4], [0.0, 1.0])
    c = split_to_canonical(S2, s)
    # p~_i = p_i + G^k_ij v^j alpha_k with only alpha_2 nonzero: G^2_12 = G^2_21 = cot
    cot = math.cos(th) / math.sin(th)
    assert c.p[0] == pytest.approx(0.2 + cot * 1.0 * 1.0, abs=1e-15)
    assert c.p[1] == pytest.approx(-0.4 + cot * 1.0 * 1.0, abs=1e-15)


def test_canonical_hamiltonian_matches_split(rng):
    for cost in (Cubic(1.5), TimeMinimal(2.0)):
        s = _random_sphere_state(rng)
        assert canonical_hamiltonian(S2, cost, split_to_canonical(S2, s)) == pytest.approx(
            optimal_hamiltonian(S2, cost, s), abs=1e-12)


def test_symplectic_form_flat_is_canonical(rng):
    s = SplitState(*rng.normal(size=(4, 2)))
    X, Y = rng.normal(size=(2, 8))
    assert symplectic_form_split(FlatSpace(2), s, X, Y) == pytest.approx(canonical_symplectic_form(X, Y, 2), abs=1e-14)


def test_symplectic_form_antisymmetric_and_bilinear(rng):
    s = _random_sphere_state(rng)
    X, Y, Z = rng.normal(size=(3, 8))
    w = lambda A, B: symplectic_form_split(S2, s, A, B)  # noqa: E731
    assert w(X, Y) == pytest.approx(-w(Y, X), abs=1e-14)
    assert w(X, X) == pytest.approx(0.0, abs=1e-14)
    assert w(2 * X + Z, Y) == pytest.approx(2 * w(X, Y) + w(Z, Y), abs=1e-12)


def test_symplectic_form_is_pullback(rng):
    # oracle: push variations forward through split_to_canonical by central differences
    for geom in (S2, SphereChart(2.0), LandmarkLine2()):
        s = _random_sphere_state(rng) if isinstance(geom, SphereChart) else SplitState(
            np.array([-0.4, 0.8]), *rng.normal(size=(3, 2)))
        X, Y = rng.normal(size=(2, 8))
        y = s.pack()
        eps = 1e-6

        def push(W):
            hi = split_to_canonical(geom, SplitState.unpack(y + eps * W)).pack()
            lo = split_to_canonical(geom, SplitState.unpack(y - eps * W)).pack()
            return (hi - lo) / (2 * eps)

        assert symplectic_form_split(geom, s, X, Y) == pytest.approx(
            canonical_symplectic_form(push(X), push(Y), 2), abs=1e-8)


def test_symplectic_form_alpha_zero_drops_curvature(rng):
    s = SplitState(np.array([1.0, 0.2]), rng.normal(size=2), rng.normal(size=2), np.zeros(2))
    X, Y = rng.normal(size=(2, 8))
    G = S2.christoffel(s.x)
    Gv = np.einsum("aib,b->ai", G, s.v)
    hX, hY = X[2:4] + Gv @ X[:2], Y[2:4] + Gv @ Y[:2]
    expected = X[:2] @ Y[4:6] - Y[:2] @ X[4:6] + hX @ Y[6:] - hY @ X[6:]
    assert symplectic_form_split(S2, s, X, Y) == pytest.approx(expected, abs=1e-14)


def test_split_field_is_hamiltonian_vector_field(rng):
    # Omega(X_H, Y) = dH(Y)
    for cost in (Cubic(1.0), TimeMinimal(1.5)):
        for _ in range(5):
            s = _random_sphere_state(rng)
            XH = split_field(S2, cost, s).pack()
            Y = rng.normal(size=8)
            eps = 1e-6
            y = s.pack()
            dH = (optimal_hamiltonian(S2, cost, SplitState.unpack(y + eps * Y))
                  - optimal_hamiltonian(S2, cost, SplitState.unpack(y - eps * Y))) / (2 * eps)
            assert symplectic_form_split(S2, s, XH, Y) == pytest.approx(dH, abs=1e-8)


def test_third_derivative_law_on_sphere():
    y0 = _state([1.1, 0.2], [0.5, 0.7], [0.3, -0.2], [-0.4, 0.6]).pack()
    f = split_vector_field(S2, Cubic(1.0))
    cfg = IntegratorConfig(tol=1e-13)

    def curve(t):
        y = integrate(f, y0, (0.0, t), cfg).y_final
        return y[:2], y[2:4]

    for t in (0.5, 1.0, 2.0):
        assert spline_law_residual(S2, curve, t, h=1e-3) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.floats(0.1, 10))
def test_flat_hamiltonian_formula(vals, beta):
    x, v, p, a = np.array(vals).reshape(4, 2)
    H = optimal_hamiltonian(FlatSpace(2), Cubic(beta), SplitState(x, v, p, a))
    assert H == pytest.approx(p @ v + a @ a / (2 * beta), abs=1e-12 * (1 + abs(H)))


def test_canonical_state_pack_round_trip(rng):
    c = CanonicalState(*rng.normal(size=(4, 3)))
    assert_array_equal(CanonicalState.unpack(c.pack()).pack(), c.pack())
