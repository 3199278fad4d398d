import math
from dataclasses import replace

import numpy as np
import pytest

import bilayerfold.simulation as sim
from bilayerfold.dkq import DkqSpace, gauss_rule
from bilayerfold.mesh import build_rectangle_mesh
from bilayerfold.plate import HalfSpace, flat_state
from bilayerfold.simulation import (DIAGNOSTIC_COLUMNS, Diagnostics, MaterialField,
                                    RegionMaterial, ScenarioConfig, SimulationError,
                                    builtin_scenario, check_stationary, effective_parameters, run)


# -- effective parameters -----------------------------------------------------------
def test_alpha_bar_from_layer_data():
    assert effective_parameters(0.5e-4, 1.5e-3, 0, 1)["alpha_bar"] == pytest.approx(0.1, rel=1e-15)
    assert effective_parameters(-0.5e-4, 1.5e-3, 0, 1)["alpha_bar"] == pytest.approx(-0.1, rel=1e-15)


def test_mu_bar_from_lame_constants():
    assert effective_parameters(0, 1, 1.5e3, 1.5e3)["mu_bar"] == 2000.0


def test_mu_bar_without_lambda():
    assert effective_parameters(0, 1, 0.0, 700.0)["mu_bar"] == 700.0


def test_heat_ratios_unit_conversion():
    # kappa / rho c = 1e-7 m^2/s = 0.1 mm^2/s; eta / rho c with eta in W/(mm^2 C)
    p = effective_parameters(0, 1, 0, 1, kappa=0.2, rho_cv=2.0e6, eta=4.0e-12)
    assert p["diffusivity"] == pytest.approx(0.1, rel=1e-14)
    assert p["robin_velocity"] == pytest.approx(4.0e-12 / 2.0e-3, rel=1e-14)


@pytest.mark.parametrize("args", [(1, 0, 0, 1), (1, 1, -2, 1)])
def test_effective_parameters_rejects(args):
    with pytest.raises(ValueError):
        effective_parameters(*args)


def test_material_validation():
    with pytest.raises(ValueError):
        RegionMaterial(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        RegionMaterial(1.0, 0.1, 0.0)
    RegionMaterial(1.0, -0.3, 0.1)


# -- stationarity ---------------------------------------------------------------------
def dense_norm_oracle(mesh, d):
    """||d||_L2 + ||D^2 d||_L2 of the bicubic / discrete-Hessian fields by 6x6 Gauss per element."""
    space = DkqSpace(mesh)
    pts, wts = gauss_rule(6)
    l2 = h2 = 0.0
    d = d.reshape(mesh.n_nodes, 3, 3)
    for e in range(mesh.n_elements):
        ops = space.shapes[space.shape_index[e]]
        jac = ops.area / 4
        V = ops.value_at(pts[:, 0], pts[:, 1])  # (q, 12)
        H = ops.hessian_at(pts[:, 0], pts[:, 1])  # (q, 2, 2, 12)
        loc = d[mesh.elements[e]].reshape(12, 3)  # rows (node, k), columns components
        vals = V @ loc
        hess = np.einsum("qijs,sc->qijc", H, loc)
        l2 += np.sum(wts * jac * np.sum(vals ** 2, axis=1))
        h2 += np.sum(wts * jac * np.sum(hess ** 2, axis=(1, 2, 3)))
    return math.sqrt(l2) + math.sqrt(h2)


def test_identical_fields_are_stationary():
    m = build_rectangle_mesh((-1, -1), (1, 1), 2)
    y = flat_state(m)
    assert check_stationary(m, y, y)


def test_constant_shift_not_stationary():
    m = build_rectangle_mesh((-1, -1), (1, 1), 2)
    y = flat_state(m)
    z = y.copy()
    z[:, 0, :] += np.array([1e-5, 0, 0])  # |c| sqrt|omega| = 2e-5 > 1e-5
    assert not check_stationary(m, z, y)
    # the Hessian part only sees roundoff, which its square root magnifies
    assert sim.stationarity_norm(m, z, y) == pytest.approx(2e-5, rel=1e-5)


def test_stationarity_matches_dense_oracle_at_threshold():
    m = build_rectangle_mesh((-1, -1), (1, 1), 2)
    rng = np.random.default_rng(11)
    d = rng.normal(size=(m.n_nodes, 3, 3))
    ref = dense_norm_oracle(m, d)
    assert sim.stationarity_norm(m, d, 0 * d) == pytest.approx(ref, rel=1e-10)
    tol = 1e-5
    y0 = flat_state(m)
    for factor in (0.999, 1.001):
        scale = factor * tol / ref
        verdict = dense_norm_oracle(m, scale * d) <= tol
        assert check_stationary(m, y0 + scale * d, y0, tol) == verdict
        assert verdict == (factor < 1)


# -- runs -------------------------------------------------------------------------------
def tiny_config(**kw):
    base = dict(name="tiny", domain=((0.0, 0.0), (1.0, 1.0)), refinements=2,
                material=MaterialField({"default": RegionMaterial(1.0, 0.0, 1.0)}),
                tau=0.1, epsilon=1.0, t_max=1.0, stop_at_stationary=False)
    base.update(kw)
    return ScenarioConfig(**base)


def test_zero_data_run_stays_flat():
    res = run(tiny_config())
    assert res.steps == 10
    assert np.abs(res.state.y - flat_state(res.mesh)).max() < 1e-9
    assert np.abs(res.diagnostics.column("energy")).max() < 1e-12
    assert res.diagnostics.column("defect").max() == 0.0


def test_diagnostics_columns_and_order():
    d = Diagnostics()
    d.append(**{c: 1.0 for c in DIAGNOSTIC_COLUMNS})
    with pytest.raises(ValueError):
        d.append(**dict({c: 0.0 for c in DIAGNOSTIC_COLUMNS}, time=0.5))
    assert len(d) == 1 and d.column("theta_max")[0] == 1.0


def test_step_error_carries_index(monkeypatch):
    calls = {"n": 0}
    real = sim.plate_step

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ArithmeticError("boom")
        return real(*a, **k)

    monkeypatch.setattr(sim, "plate_step", flaky)
    with pytest.raises(SimulationError) as exc:
        run(tiny_config())
    assert exc.value.step == 3


def test_initial_obstacle_violation_rejected():
    with pytest.raises(ValueError):
        run(tiny_config(obstacle=HalfSpace(-0.1)))


def test_invalid_config_rejected():
    for bad in (dict(tau=0.0), dict(epsilon=-1.0), dict(t_max=0.0),
                dict(boundary=(("sticky", (0, 0), (1, 1)),)), dict(clamp_regions=("nowhere",))):
        with pytest.raises(ValueError):
            tiny_config(**bad).validate()


def test_snapshot_cadence_default():
    cfg = tiny_config(t_max=100.0, tau=0.1)
    assert cfg.cadence == 20
    assert tiny_config(t_max=1.0, tau=0.1).cadence == 1


def test_snapshots_at_requested_times():
    res = run(tiny_config(t_max=1.0, snapshot_every=100, snapshot_times=(0.3, 0.58)))
    assert [s.step for s in res.snapshots] == [0, 3, 6, 10]


def test_switch_heat_decoupled_bitwise():
    cfg = builtin_scenario("switch", 3, t_max=0.3, tau=0.03, stationary_after=10.0)
    a = run(cfg, keep_thetas=True)
    b = run(replace(cfg, solve_plate=False), keep_thetas=True)
    assert len(a.thetas) == len(b.thetas) == 11
    for x, y in zip(a.thetas, b.thetas):
        assert np.array_equal(x, y)
    assert a.state.y[:, 0, 2].max() > 0  # the plate really moved


def test_rerun_is_deterministic():
    cfg = builtin_scenario("switch", 3, t_max=0.3, tau=0.03)
    a = run(cfg)
    b = run(cfg)
    assert a.diagnostics.rows == b.diagnostics.rows
    assert np.array_equal(a.state.y, b.state.y)


def test_dogear_scaled_time_equivalence():
    # with the Robin velocity scaled along with the diffusivity the heat
    # system of case (b) is exactly 10 times that of case (a)
    a = builtin_scenario("dogear_a", 3, t_max=1.0, tau=0.05, solve_plate=False)
    b = builtin_scenario("dogear_b", 3, t_max=0.1, solve_plate=False)
    b = replace(b, material=replace(b.material, robin_velocity=10 * a.material.robin_velocity))
    ra = run(a, keep_thetas=True)
    rb = run(b, keep_thetas=True)
    assert len(ra.thetas) == len(rb.thetas) == 21
    diff = max(np.abs(x - y).max() for x, y in zip(ra.thetas, rb.thetas))
    assert diff < 1e-10


@pytest.mark.parametrize("name", sim.SCENARIOS)
def test_builtin_scenarios_validate_and_mesh(name):
    cfg = builtin_scenario(name, 2).validate()
    m = sim.build_mesh(cfg)
    mu, alpha, kappa = cfg.material.per_element(m)
    assert (mu > 0).all() and (kappa > 0).all()
    clamped, pinned = sim.clamped_and_pinned(cfg, m)
    assert len(np.intersect1d(clamped, pinned)) == 0


def test_switch_paper_data():
    cfg = builtin_scenario("switch", paper_scale=True)
    assert cfg.refinements == 6 and cfg.tau == 3.0e-3 and cfg.epsilon == 4e-6
    assert cfg.obstacle == HalfSpace(0.5)
    data = sim.boundary_data(cfg, sim.build_mesh(replace(cfg, refinements=2)))
    assert data.dirichlet(2.5) == 50.0 and data.dirichlet(7.0) == 100.0
    m = sim.build_mesh(replace(cfg, refinements=3))
    mu, alpha, _ = cfg.material.per_element(m)
    assert (mu == 2.0e3).all()
    hinge = m.elements_in("hinge")
    assert np.all(alpha[hinge] == 0.1) and np.all(np.delete(alpha, hinge) == 0.0)
    assert np.allclose(m.nodes[m.clamped_nodes(), 0], -1.0)
    width = m.element_size[hinge, 0].sum() / len(np.unique(m.element_lower[hinge, 1]))
    assert width == pytest.approx(math.pi / 40, rel=1e-12)


def test_box_paper_data():
    cfg = builtin_scenario("box")
    (src,) = cfg.sources
    assert (src.center, src.radius, src.rate, src.t_off) == ((0.5, 0.5), 0.25, 75.0, 19.0)
    assert cfg.tau == 0.5
    plates = {n: m for n, m in cfg.material.regions.items() if n != "hinge"}
    assert len(plates) == 6
    assert all(p.mu_bar == 20 * cfg.material.regions["hinge"].mu_bar for p in plates.values())
    assert all(m.diffusivity == 10.0 for m in cfg.material.regions.values())


def test_airfoil_and_capsule_paper_data():
    air = builtin_scenario("airfoil")
    hinges = [m for n, m in air.material.regions.items() if n.startswith("hinge")]
    assert sorted(abs(h.alpha_bar) for h in hinges) == [0.3] * 4
    assert air.dirichlet_value == 60.0
    cap = builtin_scenario("capsule")
    assert cap.tau == 2.5e-4 and cap.epsilon == 5.0e-8 and cap.ambient == 100.0
    assert cap.obstacle.radius == 0.24 and len(cap.obstacle.centers) == 5
    m = sim.build_mesh(cap)
    assert set(cap.boundary[0][0] for _ in [0]) == {"robin"}
    assert set(m.boundary_tags) == {"robin"}
    _, pinned = sim.clamped_and_pinned(cap, m)
    assert len(pinned) == 4


def test_unknown_scenario():
    with pytest.raises(KeyError):
        builtin_scenario("teapot")
