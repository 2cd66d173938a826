import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ale_idp.errors import AdmissibilityError
from ale_idp.exact import RiemannSolution, rotation_beta
from ale_idp.systems import (
    entropy_pair_eval,
    euler_wave_speeds,
    make_burgers_2d,
    make_euler,
    make_kpp,
    make_transport,
    shifted_lambda_max,
    star_pressure,
)

SQRT14 = math.sqrt(1.4)


def _speed(system, n, uL, uR):
    n = np.atleast_2d(n)
    return float(system.max_speed(n, np.array([[uL]]), np.array([[uR]]))[0])


# -- transport ----------------------------------------------------------------


def test_transport_constant_advection():
    tr = make_transport(lambda x, t: np.tile([1.0, 0.0], (len(np.atleast_2d(x)), 1)))
    x = np.array([[0.2, 0.3]])
    lam = tr.max_speed(np.array([[1.0, 0.0]]), np.array([[3.0]]), np.array([[-1.0]]), x, x)
    assert np.isclose(lam[0], 1.0)


def test_transport_zero_field():
    tr = make_transport(lambda x, t: np.zeros((len(np.atleast_2d(x)), 2)))
    x = np.array([[0.2, 0.3]])
    assert tr.max_speed(np.array([[0.6, 0.8]]), np.array([[1.0]]), np.array([[2.0]]), x, x)[0] == 0.0


def test_rotation_field_stagnation_point():
    np.testing.assert_allclose(rotation_beta(np.array([[0.5, 0.5]]), 0.0), [[0.0, 0.0]], atol=1e-16)


# -- Burgers --------------------------------------------------------------------


def test_burgers_speeds():
    b = make_burgers_2d()
    assert np.isclose(_speed(b, [1.0, 0.0], 1.0, 0.0), 1.0)
    assert _speed(b, [1.0, 0.0], 0.0, 0.0) == 0.0
    n = np.array([1.0, -1.0]) / math.sqrt(2.0)
    assert abs(_speed(b, n, 3.0, -2.0)) < 1e-15


# -- KPP ----------------------------------------------------------------------------


def test_kpp_speeds():
    k = make_kpp()
    n = np.array([0.6, 0.8])
    assert np.isclose(_speed(k, n, 0.0, 2 * math.pi + 0.1), 1.0)
    assert np.isclose(_speed(k, [1.0, 0.0], 0.0, 0.0), 1.0)
    assert np.isclose(_speed(k, [0.0, 1.0], math.pi / 4, math.pi / 2), 1.0)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(-10, 10),
    b=st.floats(-10, 10),
    phi=st.floats(0, 2 * math.pi),
)
def test_kpp_bound_dominates_sampled_derivative(a, b, phi):
    k = make_kpp()
    n = np.array([math.cos(phi), math.sin(phi)])
    s = np.linspace(min(a, b), max(a, b), 100)
    sampled = np.abs(np.cos(s) * n[0] - np.sin(s) * n[1]).max()
    assert _speed(k, n, a, b) >= sampled - 1e-14


# -- Euler ----------------------------------------------------------------------------


def test_euler_total_energy():
    eu = make_euler(1.4)
    U = eu.conserved(np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
    assert np.isclose(U[0, -1], 2.5)


def test_euler_flux_substitution():
    eu = make_euler(1.4)
    U = eu.conserved(np.array([1.0]), np.array([[1.0, 0.0]]), np.array([1.0]))
    assert np.isclose(U[0, -1], 3.0)
    F = eu.flux(U)[0]
    np.testing.assert_allclose(F[0], [1.0, 0.0])
    np.testing.assert_allclose(F[1], [2.0, 0.0])
    np.testing.assert_allclose(F[3], [4.0, 0.0])


def test_euler_inadmissible_state():
    eu = make_euler(1.4)
    U = np.array([[1.0, 10.0, 0.0, 1.0]])
    assert not eu.admissible(U)[0]
    with pytest.raises(AdmissibilityError):
        eu.flux(U)


def test_euler_equal_states():
    eu = make_euler(1.4)
    U = eu.conserved(np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
    lamL, lamR = euler_wave_speeds(np.array([[1.0, 0.0]]), U, U, 1.4)
    np.testing.assert_allclose([lamL[0], lamR[0]], [-SQRT14, SQRT14], rtol=1e-12)


def test_euler_sod_speeds_against_riemann_oracle():
    eu = make_euler(1.4)
    UL = eu.conserved(np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
    UR = eu.conserved(np.array([0.125]), np.zeros((1, 2)), np.array([0.1]))
    lamL, lamR = euler_wave_speeds(np.array([[1.0, 0.0]]), UL, UR, 1.4)
    oracle = RiemannSolution((1.0, 0.0, 1.0), (0.125, 0.0, 0.1), 1.4)
    assert np.isclose(oracle.right_head, 1.7522, atol=5e-5)
    assert np.isclose(lamL[0], -SQRT14, rtol=1e-12)
    assert lamR[0] >= oracle.right_head
    assert np.isclose(lamR[0], oracle.right_head, rtol=1e-9)


def test_euler_mirror_symmetry():
    rng = np.random.default_rng(1)
    eu = make_euler(1.4)
    E = 500
    UL = eu.conserved(rng.uniform(0.1, 2, E), rng.uniform(-2, 2, (E, 2)), rng.uniform(0.01, 2, E))
    UR = eu.conserved(rng.uniform(0.1, 2, E), rng.uniform(-2, 2, (E, 2)), rng.uniform(0.01, 2, E))
    ang = rng.uniform(0, 2 * np.pi, E)
    n = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    aL, aR = euler_wave_speeds(n, UL, UR, 1.4)
    bL, bR = euler_wave_speeds(-n, UR, UL, 1.4)
    np.testing.assert_allclose(bL, -aR, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(bR, -aL, rtol=1e-12, atol=1e-14)


def test_star_pressure_sod():
    p, ok = star_pressure(1.0, 0.0, 1.0, 0.125, 0.0, 0.1, 1.4)
    assert ok[0]
    assert np.isclose(p[0], 0.30313, atol=5e-6)


def test_star_pressure_vacuum():
    p, ok = star_pressure(1.0, -10.0, 1.0, 1.0, 10.0, 1.0, 1.4)
    assert p[0] == 0.0 and ok[0]


# -- shared properties ------------------------------------------------------------------


def test_shifted_lambda_max_examples():
    assert shifted_lambda_max(-1.0, 1.0, 0.0) == 1.0
    assert shifted_lambda_max(-1.0, 1.0, 1.0) == 2.0
    assert np.isclose(shifted_lambda_max(-1.18322, 1.7522, 0.5), 1.68322)
    lamL, lamR = -0.3, 2.5
    assert shifted_lambda_max(lamL, lamR, 0.0) == max(abs(lamL), abs(lamR))


def _systems():
    tr = make_transport(lambda x, t: np.tile([0.7, -0.4], (len(np.atleast_2d(x)), 1)))
    return {"transport": tr, "burgers": make_burgers_2d(), "kpp": make_kpp(), "euler": make_euler(1.4)}


@pytest.mark.parametrize("name", ["transport", "burgers", "kpp", "euler"])
def test_single_state_consistency(name):
    system = _systems()[name]
    rng = np.random.default_rng(2)
    E = 50
    ang = rng.uniform(0, 2 * np.pi, E)
    n = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if name == "euler":
        U = system.conserved(rng.uniform(0.1, 2, E), rng.uniform(-2, 2, (E, 2)), rng.uniform(0.01, 2, E))
    else:
        U = rng.uniform(-3, 3, (E, 1))
    x = rng.uniform(0, 1, (E, 2))
    lam = system.max_speed(n, U, U, x, x)
    np.testing.assert_allclose(lam, system.spectral_radius(n, U, x), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", ["transport", "burgers", "kpp"])
def test_scalar_speed_symmetry(name):
    system = _systems()[name]
    rng = np.random.default_rng(5)
    E = 200
    ang = rng.uniform(0, 2 * np.pi, E)
    n = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    UL, UR = rng.uniform(-3, 3, (E, 1)), rng.uniform(-3, 3, (E, 1))
    x = rng.uniform(0, 1, (E, 2))
    np.testing.assert_allclose(system.max_speed(n, UL, UR, x, x), system.max_speed(-n, UR, UL, x, x))


# -- entropy pairs ----------------------------------------------------------------------


def test_entropy_pairs():
    beta = np.array([0.3, -0.2])
    tr = make_transport(lambda x, t: np.tile(beta, (len(np.atleast_2d(x)), 1)))
    eta, q = entropy_pair_eval(tr, "square", [[2.0]], np.zeros((1, 2)))
    assert np.isclose(eta[0], 2.0)
    np.testing.assert_allclose(q[0], 2.0 * beta)
    eta, q = entropy_pair_eval(make_burgers_2d(), "square", [[1.0]])
    assert np.isclose(eta[0], 0.5)
    np.testing.assert_allclose(q[0], [1.0 / 3.0, 1.0 / 3.0])
    eta, q = entropy_pair_eval(make_kpp(), "square", [[0.0]])
    assert eta[0] == 0.0 and np.all(q[0] == 0.0)


def test_unregistered_entropy_pair():
    with pytest.raises((KeyError, ValueError)):
        entropy_pair_eval(make_kpp(), "logarithmic", [[1.0]])


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_square_entropy_midpoint_convexity(a, b):
    kpp = make_kpp()
    eta = lambda u: entropy_pair_eval(kpp, "square", [[u]])[0][0]
    assert eta(0.5 * (a + b)) <= 0.5 * (eta(a) + eta(b)) + 1e-12 * (1 + a * a + b * b)


def test_kpp_entropy_flux_is_consistent():
    # q' = eta' f' for the square entropy: q(u) = integral of s f'(s) ds.
    kpp = make_kpp()
    u = np.linspace(-3, 3, 7)[:, None]
    h = 1e-6
    _, qp = entropy_pair_eval(kpp, "square", u + h)
    _, qm = entropy_pair_eval(kpp, "square", u - h)
    dq = (qp - qm) / (2 * h)
    fprime = np.stack([np.cos(u[:, 0]), -np.sin(u[:, 0])], axis=1)
    np.testing.assert_allclose(dq, u * fprime, atol=1e-7)
