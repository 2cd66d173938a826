import math

import numpy as np
import pytest

from ale_idp import cli
from ale_idp.benchmarks import (
    REGISTRY,
    convergence_table,
    get_benchmark,
    noh_nonuniform_mesh,
    run_benchmark,
)
from ale_idp.exact import (
    RiemannSolution,
    convergence_rates,
    error_norms,
    exact_burgers,
    exact_noh_density,
    exact_rotation,
    exact_sod,
    rotation_beta,
)
from ale_idp.fem_mesh import rectangle_mesh
from ale_idp.io import read_table, write_table


# -- exact solutions ---------------------------------------------------------------


def test_burgers_cases():
    assert np.isclose(exact_burgers(np.array([[0.5, 0.5]]), 1.0)[0], 0.5)
    assert exact_burgers(np.array([[1.9, 0.5]]), 0.5)[0] == 0.0


def test_burgers_reflection_symmetry():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.25, 1.75, (500, 2))
    for t in (0.2, 0.6, 1.0):
        np.testing.assert_array_equal(exact_burgers(x, t), exact_burgers(x[:, ::-1], t))


def test_burgers_initial_plateau_is_transported():
    # Points inside the plateau travel along beta = (1, 1) with unit speed.
    assert exact_burgers(np.array([[0.8, 0.75]]), 0.2)[0] == 1.0


def test_noh_density():
    t = 0.6
    assert exact_noh_density(np.array([[0.1, 0.0]]), t)[0] == 16.0
    assert np.isclose(exact_noh_density(np.array([[0.3, 0.4]]), t)[0], 2.2)
    assert np.isclose(exact_noh_density(np.array([[1e8, 0.0]]), t)[0], 1.0)


def test_sod_star_state_and_limits():
    rs = RiemannSolution((1.0, 0.0, 1.0), (0.125, 0.0, 0.1), 1.4)
    assert np.isclose(rs.p_star, 0.30313, atol=5e-6)
    assert np.isclose(rs.u_star, 0.92745, atol=5e-6)
    rho, u, p = exact_sod(np.array([0.5 - 1e-6]), 1e-9)
    np.testing.assert_allclose([rho[0], u[0], p[0]], [1.0, 0.0, 1.0])
    rho, u, p = exact_sod(np.array([0.0]), 0.2)
    np.testing.assert_allclose([rho[0], u[0], p[0]], [1.0, 0.0, 1.0])


def test_sod_conserves_mass_over_the_tube():
    # The exact solution moves mass only inside [0, 1] at t = 0.2.
    x = np.linspace(0, 1, 200001)
    rho, _, _ = exact_sod(x, 0.2)
    assert abs(np.trapezoid(rho, x) - 0.5625) < 1e-5


def test_rotation_exact_solution():
    x = np.array([[0.2, 0.7], [0.5, 0.5], [0.0, 0.3], [1.0, 1.0]])
    np.testing.assert_allclose(exact_rotation(x, 0.0), x.sum(axis=1))
    # The cell centre and the corners are stagnation points.
    np.testing.assert_allclose(exact_rotation(x[1:2], 0.5), [1.0], atol=1e-12)
    np.testing.assert_allclose(exact_rotation(x[3:], 0.5), [2.0], atol=1e-12)
    # beta is tangent to the boundary, so boundary points stay on it.
    b = rotation_beta(np.array([[0.0, 0.3], [0.4, 1.0]]), 0.1)
    assert abs(b[0, 0]) < 1e-16 and abs(b[1, 1]) < 1e-16


def test_rotation_exact_is_a_flow_map():
    # Forward transport of the exact solution composes with the backward one.
    rng = np.random.default_rng(1)
    x = rng.uniform(0.1, 0.9, (20, 2))
    from scipy.integrate import solve_ivp

    def rhs(s, y):
        return rotation_beta(y.reshape(-1, 2), s).ravel()

    sol = solve_ivp(rhs, (0.0, 0.5), x.ravel(), rtol=1e-12, atol=1e-12, method="DOP853")
    y = sol.y[:, -1].reshape(-1, 2)
    np.testing.assert_allclose(exact_rotation(y, 0.5), x.sum(axis=1), atol=1e-9)


# -- norms and rates -----------------------------------------------------------------


def test_error_norms_basic():
    mesh = rectangle_mesh(5, 5)
    u = mesh.dof_points.sum(axis=1)
    l1, l2 = error_norms(mesh, u, lambda x: x.sum(axis=1))
    assert l1 < 1e-15 and l2 < 1e-15
    l1, l2 = error_norms(mesh, u + 0.3, lambda x: x.sum(axis=1))
    assert np.isclose(l1, 0.3) and np.isclose(l2, 0.3)


def test_error_norms_cauchy_schwarz():
    mesh = rectangle_mesh(6, 4, (0.0, 3.0, 0.0, 2.0))
    u = np.random.default_rng(2).normal(size=mesh.n_dofs)
    l1, l2 = error_norms(mesh, u, lambda x: np.sin(x[:, 0]))
    assert l1 <= math.sqrt(mesh.volume()) * l2 + 1e-14


def test_convergence_rates():
    assert np.all(convergence_rates([0.1, 0.1, 0.1], 2.0)[1:] == 0.0)
    np.testing.assert_allclose(convergence_rates([1.0, 0.5, 0.25], 2.0)[1:], 1.0)
    rows = convergence_table([81, 289], [0.8, 0.1], [0.4, 0.1], [1.0, 2.0])
    assert math.isnan(rows[0].l1_rate)
    assert np.isclose(rows[1].l1_rate, 3.0) and np.isclose(rows[1].l2_rate, 2.0)


# -- benchmark setup -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "name, dofs",
    [
        ("rotation", [81, 289, 1089, 4225, 16641]),
        ("burgers2d", [81, 289, 1089, 4225, 16641]),
        ("sod", [1605, 3205, 6405, 12805]),
        ("noh", [961, 3721, 14641]),
    ],
)
def test_mesh_families(name, dofs):
    spec = get_benchmark(name)
    assert [spec.mesh(k, "q1").n_dofs for k in range(len(dofs))] == dofs
    assert [spec.mesh(k, "p1").n_dofs for k in range(len(dofs))] == dofs


def test_sod_mesh_refines_along_x_only():
    spec = get_benchmark("sod")
    for k in range(3):
        mesh = spec.mesh(k, "q1")
        ys = np.unique(mesh.points[:, 1])
        assert ys.size == 5


def test_noh_nonuniform_quadrants():
    mesh = noh_nonuniform_mesh()
    c = mesh.points[mesh.cells].mean(axis=1)
    counts = [np.sum((np.sign(c[:, 0]) == sx) & (np.sign(c[:, 1]) == sy)) for sx, sy in
              ((-1, -1), (-1, 1), (1, 1), (1, -1))]
    assert counts == [32 * 32, 32 * 64, 64 * 64, 64 * 32]


def test_sod_interface_takes_left_state():
    spec = get_benchmark("sod")
    mesh = spec.mesh(0, "q1")
    U = spec.initial(mesh.dof_points)
    on = np.isclose(mesh.dof_points[:, 0], 0.5)
    assert on.any() and np.all(U[on, 0] == 1.0)


def test_registry_complete():
    assert set(REGISTRY) == {"rotation", "burgers2d", "kpp", "sod", "noh"}
    with pytest.raises(KeyError):
        get_benchmark("blast")


def test_kpp_coarse_run_stays_in_invariant_range():
    spec = get_benchmark("kpp").with_options(T=0.1)
    res = run_benchmark(spec, 0, "q1")
    u = res.state.U[:, 0]
    assert u.min() >= 0.25 * np.pi - 1e-12 and u.max() <= 3.5 * np.pi + 1e-12
    assert all(r.min_convexity >= 0 for r in res.reports)


def test_burgers_coarse_run_matches_reference_level():
    res = run_benchmark(get_benchmark("burgers2d"), 0, "q1")
    # Reference L1 error at 81 dofs is 6.00e-1.
    assert 0.5 * 0.6 <= res.l1 <= 2.0 * 0.6
    assert np.isclose(res.state.t, 1.0)


# -- io and CLI -----------------------------------------------------------------------------


def test_table_roundtrip(tmp_path):
    rows = convergence_table([81, 289, 1089], [1.0, 0.5, 0.25], [2.0, 1.0, 0.5], [1.0, 2.0, 2.0])
    path = write_table(tmp_path / "t.csv", rows)
    back = read_table(path)
    assert [r["dofs"] for r in back] == [81, 289, 1089]
    assert math.isnan(back[0]["L1_rate"]) and np.isclose(back[2]["L1_rate"], 1.0)


def test_parse_levels():
    assert cli.parse_levels("0..3") == [0, 1, 2, 3]
    assert cli.parse_levels("1,4") == [1, 4]
    with pytest.raises(cli.ConfigError):
        cli.parse_levels("3..1")


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nproblem = burgers2d\nlevel = 0\ncfl = 0.2\nale.omega = 0.5\nbc.left.motion = free\n")
    cfg = cli.read_config(path)
    assert cfg["problem"] == "burgers2d" and cfg["ale.omega"] == "0.5"
    path.write_text("nonsense line\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config(path)


def test_cli_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "b"
    code = cli.main(["run", "--problem", "burgers2d", "--level", "0", "--final-time", "0.2", "--out", str(out)])
    assert code == cli.EXIT_OK
    for name in ("reports.csv", "errors.csv", "initial.vtk", "final.vtk"):
        assert (out / name).exists()
    header = (out / "reports.csv").read_text().splitlines()[0]
    assert header == "step,t,dt,reductions,min_convexity,conservation_defect,entropy_max"
    vtk = (out / "final.vtk").read_text()
    assert vtk.startswith("# vtk DataFile") and "SCALARS u double 1" in vtk


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("problem = burgers2d\nlevel = 0\nfinal_time = 0.05\ncfl = 0.1\n")
    out = tmp_path / "o"
    code = cli.main(["run", "--config", str(cfg), "--cfl", "0.05", "--out", str(out)])
    assert code == 0
    dts = [float(line.split(",")[2]) for line in (out / "reports.csv").read_text().splitlines()[1:]]
    # Halving the cfl doubles the step count compared with the config value.
    code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "p")])
    dts_cfg = [float(line.split(",")[2]) for line in (tmp_path / "p" / "reports.csv").read_text().splitlines()[1:]]
    assert np.isclose(dts[0], 0.5 * dts_cfg[0])


def test_cli_ale_overrides(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("problem = burgers2d\nfinal_time = 0.05\nale.mode = none\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    vtk_initial = (out / "initial.vtk").read_text().split("CELLS")[0]
    vtk_final = (out / "final.vtk").read_text().split("CELLS")[0]
    assert vtk_initial == vtk_final  # the mesh did not move


def test_cli_converge_writes_table(tmp_path):
    out = tmp_path / "c"
    code = cli.main(["converge", "--problem", "rotation", "--levels", "0..1", "--no-viscosity", "--out", str(out)])
    assert code == 0
    rows = read_table(out / "table.csv")
    assert [r["dofs"] for r in rows] == [81, 289]
    assert rows[1]["L1_rate"] > 2.0


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--problem", "sod", "--scheme", "v2", "--integrator", "ssp3"]) == cli.EXIT_SOLVER
    assert cli.main(["converge", "--problem", "kpp", "--levels", "0..1"]) == cli.EXIT_SOLVER
    # A far too large fixed time step with no halvings left is a hard solver failure.
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem = burgers2d\nfinal_time = 0.5\ncfl = 50\nmax_halvings = 0\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == cli.EXIT_SOLVER


def test_cli_threads_env(monkeypatch):
    monkeypatch.setenv("ALE_IDP_THREADS", "1")
    assert cli._apply_threads() == 1
    monkeypatch.setenv("ALE_IDP_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._apply_threads()


def test_cli_check_single_suite(capsys):
    assert cli.main(["check", "--suite", "dgcl"]) == 0
    assert "PASS dgcl" in capsys.readouterr().out
