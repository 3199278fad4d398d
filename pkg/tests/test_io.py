import numpy as np
import pytest

from bilayerfold.io import (ConfigError, parse_config, parse_config_text, read_snapshot_points,
                            serialize_config, snapshot_path, write_diagnostics, write_snapshot)
from bilayerfold.mesh import build_grid_mesh, build_rectangle_mesh
from bilayerfold.plate import flat_state
from bilayerfold.simulation import SCENARIOS, Diagnostics, builtin_scenario

MINIMAL = """\
[mesh]
lower = -1 -1 mm
upper = 1 1 mm
refinements = 3

[material.default]
mu_bar = 2e3 MPa
alpha_bar = 0.1 per_mm_C
diffusivity = 0.1 mm2_per_s

[time]
tau = 3e-3 s
t_max = 1 s

[penalty]
epsilon = 4e-6 mm4_per_MPa
"""


@pytest.mark.parametrize("name", SCENARIOS)
def test_round_trip_builtins(name):
    cfg = builtin_scenario(name)
    assert parse_config_text(serialize_config(cfg)) == cfg


def test_round_trip_through_file(tmp_path):
    cfg = builtin_scenario("switch")
    p = tmp_path / "switch.cfg"
    p.write_text(serialize_config(cfg))
    assert parse_config(p) == cfg


def test_minimal_file_parses():
    cfg = parse_config_text(MINIMAL)
    assert cfg.epsilon == 4e-6 and cfg.tau == 3e-3 and cfg.refinements == 3
    assert cfg.material.regions["default"].mu_bar == 2000.0


def test_negative_tau_named():
    with pytest.raises(ConfigError) as exc:
        parse_config_text(MINIMAL.replace("tau = 3e-3 s", "tau = -1 s"))
    assert any("time.tau" in e for e in exc.value.errors)
    assert any(e.startswith("line 12") for e in exc.value.errors)


def test_errors_are_collected_not_fail_fast():
    text = (MINIMAL.replace("tau = 3e-3 s", "tau = 3e-3 mm")
            .replace("epsilon = 4e-6 mm4_per_MPa", "epsilon = 0 mm4_per_MPa")
            .replace("refinements = 3", "refinements = 3\nwobble = 2"))
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    msgs = "\n".join(exc.value.errors)
    assert "time.tau" in msgs and "penalty.epsilon" in msgs and "mesh.wobble" in msgs
    assert len(exc.value.errors) >= 3


def test_missing_unit_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config_text(MINIMAL.replace("t_max = 1 s", "t_max = 1"))
    assert any("time.t_max" in e for e in exc.value.errors)


def test_missing_section_rejected():
    text = MINIMAL.split("[penalty]")[0]
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert any("penalty" in e for e in exc.value.errors)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_config_text(MINIMAL + "\n[gravity]\ng = 9.81 mm\n")


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")


# -- snapshots ---------------------------------------------------------------------------
def test_flat_snapshot(tmp_path):
    m = build_rectangle_mesh((-1, -1), (1, 1), 2)
    y = flat_state(m)
    path = write_snapshot(y, y[:, 0, :], np.zeros(m.n_nodes), m, 123, tmp_path)
    assert path.name == "snap_000123.vtk" and path == snapshot_path(tmp_path, 123)
    pts, data = read_snapshot_points(path)
    assert pts.shape == (m.n_nodes, 3)
    assert np.array_equal(pts[:, 2], np.zeros(m.n_nodes))
    assert np.array_equal(data["temperature"], np.zeros(m.n_nodes))
    assert set(data) == {"temperature", "isometry_defect", "gap"}
    text = path.read_text().splitlines()
    assert f"CELLS {m.n_elements} {5 * m.n_elements}" in text
    assert text.count("9") == m.n_elements


def test_cylinder_snapshot_height(tmp_path):
    kappa, L = 0.5, 2.0
    m = build_grid_mesh((0, 0), (L, 0.25), 16, 2)
    x = m.nodes[:, 0]
    y = flat_state(m)
    y[:, 0, 0] = np.sin(kappa * x) / kappa
    y[:, 0, 2] = (1 - np.cos(kappa * x)) / kappa
    y[:, 1] = np.column_stack([np.cos(kappa * x), 0 * x, np.sin(kappa * x)])
    path = write_snapshot(y, y[:, 0, :], np.ones(m.n_nodes), m, 0, tmp_path)
    pts, data = read_snapshot_points(path)
    assert pts[:, 2].max() == pytest.approx((1 - np.cos(kappa * L)) / kappa, rel=1e-15)
    assert data["gap"].max() == 0.0
    assert data["isometry_defect"].max() < 1e-15


def test_snapshot_values_round_trip_exactly(tmp_path):
    m = build_rectangle_mesh((0, 0), (1, 1), 1)
    rng = np.random.default_rng(5)
    y = rng.normal(size=(m.n_nodes, 3, 3))
    s = rng.normal(size=(m.n_nodes, 3))
    th = rng.normal(size=m.n_nodes)
    pts, data = read_snapshot_points(write_snapshot(y, s, th, m, 7, tmp_path))
    assert np.array_equal(pts, y[:, 0, :])
    assert np.array_equal(data["temperature"], th)
    assert np.array_equal(data["gap"], np.linalg.norm(s - y[:, 0, :], axis=1))


# -- diagnostics ---------------------------------------------------------------------------
def _diag(n):
    d = Diagnostics()
    for k in range(n):
        d.append(time=0.1 * k, energy=1 / 3, functional=-k, defect=0, penetration=0,
                 stationarity=1e-7, theta_min=0, theta_max=100)
    return d


def test_diagnostics_header_only(tmp_path):
    p = write_diagnostics(_diag(0), tmp_path / "d.csv")
    assert p.read_text() == "time,energy,functional,defect,penetration,stationarity,theta_min,theta_max\n"


def test_diagnostics_three_rows(tmp_path):
    p = write_diagnostics(_diag(3), tmp_path / "d.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 4
    assert lines[1].split(",")[1] == "0.33333333333333331"
    assert float(lines[3].split(",")[0]) == 0.1 * 2
