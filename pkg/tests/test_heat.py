import numpy as np
import pytest

from bilayerfold.heat import (BoundaryData, RegionSource, assemble_heat_system, heat_step,
                              stationary_solution, verify_manufactured)
from bilayerfold.mesh import (DIRICHLET_FREE, ROBIN, build_grid_mesh, build_rectangle_mesh,
                              tag_boundary)
from bilayerfold.verification import heat_exact, heat_source

EVERYWHERE = lambda x, y: np.ones_like(x, dtype=bool)  # noqa: E731


def dense_q1_oracle(n, h, eta):
    """Hand-written Q1 matrices on an n x n grid of h-squares with Robin on the whole boundary."""
    Me = h * h / 36 * np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]])
    Ke = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    N = (n + 1) ** 2
    M = np.zeros((N, N))
    K = np.zeros((N, N))
    R = np.zeros((N, N))
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    for j in range(n):
        for i in range(n):
            el = [idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]
            M[np.ix_(el, el)] += Me
            K[np.ix_(el, el)] += Ke
    Re = eta * h / 6 * np.array([[2, 1], [1, 2]])
    for k in range(n):
        for e in ([idx(k, 0), idx(k + 1, 0)], [idx(k, n), idx(k + 1, n)],
                  [idx(0, k), idx(0, k + 1)], [idx(n, k), idx(n, k + 1)]):
            R[np.ix_(e, e)] += Re
    return M, K, R


def test_stiffness_row_sums_vanish():
    s = assemble_heat_system(build_rectangle_mesh((0, 0), (1, 1), 0), 1.0)
    assert np.abs(np.asarray(s.stiffness.sum(axis=1))).max() < 1e-15


def test_total_mass_is_area():
    s = assemble_heat_system(build_rectangle_mesh((-1, -0.5), (2, 1), 3), 0.7)
    assert s.mass.sum() == pytest.approx(4.5, rel=1e-13)


def test_robin_edge_total():
    m = build_grid_mesh((0, 0), (2, 1), 4, 2)
    m = tag_boundary(m, {ROBIN: lambda x, y: np.isclose(y, 0)})
    s = assemble_heat_system(m, 1.0, robin_velocity=2.0)
    assert s.robin.sum() == pytest.approx(4.0, rel=1e-14)
    rows = np.unique(s.robin.nonzero()[0])
    assert np.allclose(m.nodes[rows, 1], 0)


def test_missing_diffusivity_rejected():
    m = build_rectangle_mesh((0, 0), (1, 1), 1)
    with pytest.raises(ValueError):
        assemble_heat_system(m, np.array([1.0, 1.0, 0.0, 1.0]))


def test_zero_data_stays_zero():
    m = tag_boundary(build_rectangle_mesh((0, 0), (1, 1), 2), {DIRICHLET_FREE: EVERYWHERE})
    s = assemble_heat_system(m, 1.0)
    th = heat_step(s, np.zeros(m.n_nodes), 0.1, BoundaryData(), 0.1)
    assert np.array_equal(th, np.zeros(m.n_nodes))


def test_insulated_constant_is_conserved():
    m = build_rectangle_mesh((0, 0), (1, 1), 3)
    s = assemble_heat_system(m, 0.3)
    th = np.full(m.n_nodes, 17.0)
    for k in range(20):
        th = heat_step(s, th, 0.05, BoundaryData(), 0.05 * (k + 1))
    assert np.abs(th - 17.0).max() < 1e-12


def test_robin_heating_matches_dense_oracle():
    m = tag_boundary(build_rectangle_mesh((0, 0), (1, 1), 1), {ROBIN: EVERYWHERE})
    s = assemble_heat_system(m, 1.0, robin_velocity=2.0)
    M, K, R = dense_q1_oracle(2, 0.5, 2.0)
    assert np.abs(s.mass.toarray() - M).max() < 1e-15
    assert np.abs(s.stiffness.toarray() - K).max() < 1e-15
    assert np.abs(s.robin.toarray() - R).max() < 1e-15
    tau = 0.1
    A = M / tau + K + R
    r = R @ np.full(9, 100.0)
    th = np.zeros(9)
    ref = np.zeros(9)
    data = BoundaryData(ambient=100.0)
    for k in range(200):
        new = heat_step(s, th, tau, data, tau * (k + 1))
        ref = np.linalg.solve(A, M @ ref / tau + r)
        assert np.abs(new - ref).max() < 1e-10
        assert (new >= th - 1e-12).all()
        th = new
    assert np.abs(th - 100).max() < 1.0


def test_dirichlet_trace_exact():
    m = tag_boundary(build_rectangle_mesh((-1, -1), (1, 1), 3),
                     {DIRICHLET_FREE: lambda x, y: np.isclose(x, -1)})
    s = assemble_heat_system(m, 0.1)
    data = BoundaryData(dirichlet=lambda t: min(1.0, t / 5) * 100)
    th = heat_step(s, np.zeros(m.n_nodes), 1.0, data, 1.0)
    assert np.array_equal(th[s.dirichlet_nodes], np.full(len(s.dirichlet_nodes), 20.0))


@pytest.mark.parametrize("tau", [0.01, 1.0, 100.0])
def test_stationary_state_is_fixed_point(tau):
    m = tag_boundary(build_rectangle_mesh((0, 0), (1, 1), 3),
                     {DIRICHLET_FREE: lambda x, y: np.isclose(x, 0),
                      ROBIN: lambda x, y: np.isclose(x, 1)})
    s = assemble_heat_system(m, 0.5, robin_velocity=2.0)
    data = BoundaryData(dirichlet=10.0, ambient=50.0,
                        sources=[RegionSource(np.arange(5), lambda t: 3.0)])
    star = stationary_solution(s, data, 0.0)
    nxt = heat_step(s, star, tau, data, 1.0)
    assert np.abs(nxt - star).max() <= 1e-10 * np.abs(star).max()
    free = s.free_nodes
    res = ((s.stiffness + s.robin) @ star - s.robin_load(50.0) - s.source_load(data.sources, 0))
    assert np.abs(res[free]).max() <= 1e-10 * np.abs(star).max()


def test_manufactured_constant_solution_exact():
    exact = lambda x, y, t: 3.5 + 0 * x  # noqa: E731
    _, errs, _ = verify_manufactured([1, 2, 3], exact, lambda x, y, t: 0 * x)
    assert errs.max() < 1e-12


def test_manufactured_space_order_coarse():
    _, errs, orders = verify_manufactured([2, 3, 4], heat_exact, heat_source)
    assert (orders >= 1.9).all()
    assert (np.diff(errs) < 0).all()


def test_time_halving_ratio_about_two():
    errs = []
    for n in (4, 8):
        _, e, _ = verify_manufactured([5], heat_exact, heat_source, t_final=0.5,
                                      tau_of_h=lambda h, n=n: 0.5 / n)
        errs.append(e[0])
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.3)
