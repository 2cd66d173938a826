import numpy as np
import pytest

from ale_idp.ale_motion import AleStrategy, check_invertibility, node_velocities, smooth_positions
from ale_idp.errors import DegenerateStepError
from ale_idp.fem_mesh import interval_mesh, rectangle_mesh
from ale_idp.systems import make_burgers_2d, make_euler


def test_mode_none_is_static():
    mesh = rectangle_mesh(3, 3)
    W = node_velocities(AleStrategy("none"), mesh, np.ones((16, 1)), make_burgers_2d(), 0.0, 0.1)
    assert np.all(W == 0.0)


def test_burgers_lagrangian_velocity():
    mesh = rectangle_mesh(3, 3)
    W = node_velocities(AleStrategy("lagrangian"), mesh, np.ones((16, 1)), make_burgers_2d(), 0.0, 0.1)
    np.testing.assert_allclose(W, 1.0)


def test_euler_lagrangian_velocity_is_fluid_velocity():
    mesh = rectangle_mesh(2, 2)
    eu = make_euler(1.4)
    rng = np.random.default_rng(0)
    vel = rng.normal(size=(9, 2))
    U = eu.conserved(rng.uniform(0.5, 2, 9), vel, np.ones(9))
    W = node_velocities(AleStrategy("lagrangian"), mesh, U, eu, 0.0, 0.1)
    np.testing.assert_allclose(W, vel, rtol=1e-14)


def test_three_node_chain_smoothing():
    mesh = interval_mesh(2).with_points(np.array([[0.0], [0.4], [1.0]]))
    a = smooth_positions(mesh, mesh.points, sweeps=1)
    np.testing.assert_allclose(a[:, 0], [0.0, 0.5, 1.0])
    dt = 0.2
    strat = AleStrategy("smoothed_lagrangian", omega=0.0, sweeps=1)
    W = node_velocities(strat, mesh, np.zeros((3, 1)), _Static(), 0.0, dt)
    np.testing.assert_allclose(W[1, 0], 0.1 / dt)


class _Static:
    """A system whose Lagrangian velocity is zero."""

    def lagrangian_velocity(self, U, x=None, t=0.0):
        return np.zeros_like(np.atleast_2d(x))


def test_smoothing_needs_positive_dt():
    mesh = rectangle_mesh(3, 3)
    with pytest.raises(DegenerateStepError):
        node_velocities(AleStrategy("smoothed_lagrangian"), mesh, np.ones((16, 1)), make_burgers_2d(), 0.0, 0.0)


def test_strategy_validation():
    with pytest.raises(ValueError):
        AleStrategy("smoothed_lagrangian", omega=1.5)
    with pytest.raises(ValueError):
        AleStrategy("smoothed_lagrangian", sweeps=-1)
    with pytest.raises(ValueError):
        AleStrategy("elastic")


def _burgers_state(mesh, rng):
    return rng.uniform(0, 1, (mesh.n_dofs, 1))


def test_omega_one_and_zero_sweeps_reproduce_lagrangian():
    rng = np.random.default_rng(1)
    mesh = rectangle_mesh(5, 5)
    U = _burgers_state(mesh, rng)
    b = make_burgers_2d()
    lag = node_velocities(AleStrategy("lagrangian"), mesh, U, b, 0.0, 0.01)
    for strat in (AleStrategy("smoothed_lagrangian", omega=1.0), AleStrategy("smoothed_lagrangian", sweeps=0)):
        np.testing.assert_array_equal(node_velocities(strat, mesh, U, b, 0.0, 0.01), lag)


def test_smoothed_positions_stay_in_hull():
    rng = np.random.default_rng(2)
    mesh = rectangle_mesh(6, 6)
    a_lag = mesh.points + 0.05 * rng.normal(size=mesh.points.shape)
    a = smooth_positions(mesh, a_lag, sweeps=3)
    assert a[:, 0].min() >= a_lag[:, 0].min() and a[:, 0].max() <= a_lag[:, 0].max()
    assert a[:, 1].min() >= a_lag[:, 1].min() and a[:, 1].max() <= a_lag[:, 1].max()


def test_fixed_boundary_does_not_move():
    rng = np.random.default_rng(3)
    mesh = rectangle_mesh(6, 6)
    strat = AleStrategy("smoothed_lagrangian", boundary={t: "fixed" for t in ("left", "right", "bottom", "top")})
    W = node_velocities(strat, mesh, _burgers_state(mesh, rng), make_burgers_2d(), 0.0, 0.01)
    bnd = mesh.topology.boundary_mask
    assert np.all(W[bnd] == 0.0)
    assert np.any(W[~bnd] != 0.0)


def test_slide_policy_keeps_tangential_component():
    mesh = rectangle_mesh(4, 4)
    strat = AleStrategy("lagrangian", boundary={"bottom": "slide-x", "left": "fixed"})
    W = node_velocities(strat, mesh, np.ones((25, 1)), make_burgers_2d(), 0.0, 0.01)
    bottom = np.setdiff1d(mesh.boundary["bottom"], mesh.boundary["left"])
    np.testing.assert_allclose(W[bottom], [[1.0, 0.0]] * bottom.size)


def test_prescribed_policy():
    mesh = rectangle_mesh(4, 4)
    strat = AleStrategy("lagrangian", boundary={"top": "prescribed"},
                        prescribed=lambda x, t: np.tile([0.0, -2.0], (len(x), 1)))
    W = node_velocities(strat, mesh, np.ones((25, 1)), make_burgers_2d(), 0.0, 0.01)
    np.testing.assert_allclose(W[mesh.boundary["top"]], [[0.0, -2.0]] * 5)


def test_analytic_mode():
    mesh = rectangle_mesh(2, 2)
    beta = lambda x, t: np.stack([x[:, 1], -x[:, 0]], axis=1) * (1 + t)
    W = node_velocities(AleStrategy("analytic", beta=beta), mesh, None, None, 1.0, 0.1)
    np.testing.assert_allclose(W, beta(mesh.dof_points, 1.0))


# -- invertibility ----------------------------------------------------------------


def test_invertibility_static_and_translation():
    mesh = rectangle_mesh(4, 4)
    assert check_invertibility(mesh, np.zeros((25, 2)), 1.0).ok
    assert check_invertibility(mesh, np.tile([3.0, -1.0], (25, 1)), 10.0).ok


def test_invertibility_violation_1d():
    mesh = interval_mesh(2, 0.0, 2.0)
    rep = check_invertibility(mesh, np.array([[0.0], [-1.0], [0.0]]), 1.5)
    assert not rep.ok
    assert 0 in rep.cells
    assert rep.min_ratio < 0

