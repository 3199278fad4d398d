import math

import numpy as np
import pytest

from bilayerfold.mesh import (DEFAULT_REGION, DIRICHLET_CLAMPED, INSULATED_FREE, ROBIN, MeshError,
                              RegionSpec, build_grid_mesh, build_rectangle_mesh, dump_mesh,
                              snap_region_mesh, tag_boundary)
from bilayerfold.simulation import _box_layout, BOX_HINGE


def _edge_count_identity(m):
    interior = np.sum(m.edge_elements[:, 1] >= 0)
    boundary = len(m.boundary_edge_ids)
    return 4 * m.n_elements == 2 * interior + boundary


def test_single_element():
    m = build_rectangle_mesh((-1, -1), (1, 1), 0)
    assert (m.n_elements, m.n_nodes) == (1, 4)


def test_six_refinements_counts_and_h():
    m = build_rectangle_mesh((-1, -1), (1, 1), 6)
    assert m.n_elements == 4096
    assert m.n_nodes == 65 * 65
    assert m.h == pytest.approx(2.0 ** -6 * 2)


def test_one_refinement_unit_square():
    m = build_rectangle_mesh((0, 0), (1, 1), 1)
    assert (m.n_elements, m.n_nodes) == (4, 9)


@pytest.mark.parametrize("lo, hi", [((0, 0), (0, 1)), ((0, 0), (1, 0)), ((1, 0), (0, 1))])
def test_degenerate_rectangle_rejected(lo, hi):
    with pytest.raises(MeshError):
        build_rectangle_mesh(lo, hi, 2)


@pytest.mark.parametrize("r", [0, 1, 3, 5])
def test_invariants_under_refinement(r):
    m = build_rectangle_mesh((-0.3, 0.2), (1.7, 0.9), r)
    assert m.area == pytest.approx(2.0 * 0.7, rel=1e-14)
    assert (m.corner_jacobians() > 0).all()
    assert _edge_count_identity(m)
    assert (m.edge_elements[:, 0] >= 0).all()


def test_element_ordering_is_deterministic():
    a = build_rectangle_mesh((0, 0), (1, 1), 3)
    b = build_rectangle_mesh((0, 0), (1, 1), 3)
    assert np.array_equal(a.elements, b.elements) and np.array_equal(a.edges, b.edges)


def test_hinge_strip_is_snapped_exactly():
    b = math.pi / 40
    base = build_rectangle_mesh((-1, -1), (1, 1), 5)
    spec = RegionSpec.from_boxes([("hinge", (-1, -1), (-1 + b, 1)), ("plate", (-1 + b, -1), (1, 1))])
    m = snap_region_mesh(base, spec)
    assert set(m.region_names) == {"hinge", "plate"}
    hinge = m.elements_in("hinge")
    right = m.element_lower[hinge, 0] + m.element_size[hinge, 0]
    assert np.allclose(right.max(), -1 + b, atol=1e-14)
    # every element sits on one side of the interface
    c = m.centroids
    assert np.all((c[:, 0] < -1 + b) == (m.region_tags == m.region_id("hinge")))
    assert m.area == pytest.approx(4.0, rel=1e-13)
    assert (m.corner_jacobians() > 0).all() and _edge_count_identity(m)
    # no cell wider than the input mesh width
    assert m.element_size.max() <= base.h + 1e-12


def test_no_regions_gives_default_tag():
    m = snap_region_mesh(build_rectangle_mesh((0, 0), (1, 1), 2), RegionSpec())
    assert m.region_names == (DEFAULT_REGION,)
    assert (m.region_tags == 0).all()


def test_box_cross_layout_is_disjoint_cover():
    boxes = _box_layout()
    b = BOX_HINGE
    base = build_rectangle_mesh((-1 - b, -1 - b), (7 - b, 7 - b), 5)
    m = snap_region_mesh(base, RegionSpec.from_boxes(boxes))
    plates = [n for n in m.region_names if n != "hinge"]
    assert len(plates) == 6
    area = sum(RegionSpec.from_boxes(boxes).regions[i].area for i in range(len(boxes)))
    assert m.area == pytest.approx(area, rel=1e-12)
    assert area == pytest.approx(6 + 5 * b * 1, rel=1e-12)
    assert (m.corner_jacobians() > 0).all() and _edge_count_identity(m)


def test_overlapping_regions_rejected():
    spec = RegionSpec.from_boxes([("a", (0, 0), (0.6, 1)), ("b", (0.5, 0), (1, 1))])
    with pytest.raises(MeshError):
        snap_region_mesh(build_rectangle_mesh((0, 0), (1, 1), 2), spec)


def test_clamp_left_side_counts():
    m = build_rectangle_mesh((-1, -1), (1, 1), 1)
    m = tag_boundary(m, {DIRICHLET_CLAMPED: lambda x, y: np.isclose(x, -1)})
    tags = np.array(m.boundary_tags)
    assert np.sum(tags == DIRICHLET_CLAMPED) == 2
    assert np.sum(tags == INSULATED_FREE) == 6


def test_robin_everywhere():
    m = build_rectangle_mesh((-1, -1), (1, 1), 3)
    m = tag_boundary(m, {ROBIN: lambda x, y: np.ones_like(x, dtype=bool)})
    assert set(m.boundary_tags) == {ROBIN}


def test_empty_predicates_default_free():
    m = tag_boundary(build_rectangle_mesh((-1, -1), (1, 1), 2), {})
    assert set(m.boundary_tags) == {INSULATED_FREE}
    assert len(m.boundary_tags) == 16


def test_overlapping_predicates_first_match_wins():
    m = build_rectangle_mesh((0, 0), (1, 1), 1)
    with pytest.warns(UserWarning):
        m = tag_boundary(m, {DIRICHLET_CLAMPED: lambda x, y: np.isclose(x, 0),
                             ROBIN: lambda x, y: np.ones_like(x, dtype=bool)})
    tags = np.array(m.boundary_tags)
    assert np.sum(tags == DIRICHLET_CLAMPED) == 2 and np.sum(tags == ROBIN) == 6
    assert m.warnings


def test_grid_mesh_strip():
    m = build_grid_mesh((0, 0), (2, 0.25), 64, 8)
    assert m.n_elements == 512 and m.n_nodes == 65 * 9
    assert np.allclose(m.element_size, [2 / 64, 0.25 / 8])


def test_dump_mesh(tmp_path):
    m = build_rectangle_mesh((0, 0), (1, 1), 1)
    p = tmp_path / "mesh.txt"
    dump_mesh(m, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "9 4"
    assert len(lines) == 1 + 9 + 4
    assert lines[10].split() == ["0"] + [str(i) for i in m.elements[0]]
