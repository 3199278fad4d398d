"""Quadrilateral meshes of rectangular and composite parametric domains.

All meshes produced here are tensor-product grids of axis-aligned rectangles,
possibly with cells removed (cross-shaped nets of plates and hinges).  Node and
element numbering is a deterministic function of the grid lines: nodes are
ordered row by row (x fastest), elements likewise, and unused nodes of a
composite domain are dropped while preserving that order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

# Boundary tags.  Each tag fixes a heat condition and whether the deformation
# is clamped along the edge.
DIRICHLET_CLAMPED = "dirichlet_clamped"
ROBIN = "robin"
INSULATED_FREE = "insulated_free"
DIRICHLET_FREE = "dirichlet_free"
INSULATED_CLAMPED = "insulated_clamped"

BOUNDARY_TAGS = {
    # tag: (heat condition, clamped)
    DIRICHLET_CLAMPED: ("dirichlet", True),
    ROBIN: ("robin", False),
    INSULATED_FREE: ("insulated", False),
    DIRICHLET_FREE: ("dirichlet", False),
    INSULATED_CLAMPED: ("insulated", True),
}

DEFAULT_REGION = "default"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    name: str
    lower: tuple[float, float]
    upper: tuple[float, float]

    def contains(self, x, y, tol=1e-12):
        return ((x >= self.lower[0] - tol) & (x <= self.upper[0] + tol)
                & (y >= self.lower[1] - tol) & (y <= self.upper[1] + tol))

    @property
    def area(self):
        return (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])


@dataclass(frozen=True)
class RegionSpec:
    """Named axis-aligned rectangles; several rectangles may share a name."""

    regions: tuple[Region, ...] = ()

    @classmethod
    def from_boxes(cls, boxes: Sequence[tuple[str, Sequence[float], Sequence[float]]]):
        return cls(tuple(Region(n, (float(lo[0]), float(lo[1])), (float(up[0]), float(up[1])))
                         for n, lo, up in boxes))

    @property
    def names(self) -> list[str]:
        out = []
        for r in self.regions:
            if r.name not in out:
                out.append(r.name)
        return out

    def check_disjoint(self, tol=1e-12):
        for i, a in enumerate(self.regions):
            if not (a.upper[0] > a.lower[0] and a.upper[1] > a.lower[1]):
                raise MeshError(f"region {a.name!r} is degenerate")
            for b in self.regions[i + 1:]:
                ox = min(a.upper[0], b.upper[0]) - max(a.lower[0], b.lower[0])
                oy = min(a.upper[1], b.upper[1]) - max(a.lower[1], b.lower[1])
                if ox > tol and oy > tol:
                    raise MeshError(f"regions {a.name!r} and {b.name!r} overlap")


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Conforming quadrilateral mesh.

    ``elements`` hold 4 node indices counterclockwise starting at the lower
    left corner.  ``boundary_tags`` is aligned with :attr:`boundary_edges`.
    """

    nodes: np.ndarray
    elements: np.ndarray
    region_tags: np.ndarray
    region_names: tuple[str, ...] = (DEFAULT_REGION,)
    boundary_tags: tuple[str, ...] | None = None
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=float))
        object.__setattr__(self, "elements", np.ascontiguousarray(self.elements, dtype=np.int64))
        object.__setattr__(self, "region_tags", np.ascontiguousarray(self.region_tags, dtype=np.int64))
        self.nodes.flags.writeable = False
        self.elements.flags.writeable = False
        self.region_tags.flags.writeable = False
        if self.boundary_tags is None:
            object.__setattr__(self, "boundary_tags",
                               (INSULATED_FREE,) * len(self.boundary_edge_ids))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    # -- geometry --------------------------------------------------------
    @cached_property
    def element_lower(self) -> np.ndarray:
        return self.nodes[self.elements[:, 0]]

    @cached_property
    def element_size(self) -> np.ndarray:
        """(E, 2) side lengths (hx, hy) of the rectangular elements."""
        p = self.nodes[self.elements]
        return np.column_stack([p[:, 1, 0] - p[:, 0, 0], p[:, 3, 1] - p[:, 0, 1]])

    @cached_property
    def element_area(self) -> np.ndarray:
        return self.element_size.prod(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def area(self) -> float:
        return float(self.element_area.sum())

    @property
    def h(self) -> float:
        return float(self.element_size.max())

    def corner_jacobians(self) -> np.ndarray:
        """Jacobian determinants of the bilinear map at the 4 corners, (E, 4)."""
        p = self.nodes[self.elements]
        dets = np.empty((len(p), 4))
        for a in range(4):
            e1 = p[:, (a + 1) % 4] - p[:, a]
            e2 = p[:, (a + 3) % 4] - p[:, a]
            dets[:, a] = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        return dets

    def check_rectangles(self, tol=1e-12):
        p = self.nodes[self.elements]
        ok = (np.abs(p[:, 0, 1] - p[:, 1, 1]) <= tol) & (np.abs(p[:, 1, 0] - p[:, 2, 0]) <= tol) \
            & (np.abs(p[:, 2, 1] - p[:, 3, 1]) <= tol) & (np.abs(p[:, 3, 0] - p[:, 0, 0]) <= tol)
        if not ok.all():
            raise MeshError("elements must be axis-aligned rectangles")
        if (self.element_size <= 0).any():
            raise MeshError("elements must be positively oriented")

    # -- connectivity ----------------------------------------------------
    @cached_property
    def _edge_table(self):
        local = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
        pairs = self.elements[:, local].reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        uniq, first, inverse, counts = np.unique(key, axis=0, return_index=True,
                                                 return_inverse=True, return_counts=True)
        # keep edges in first-appearance order for deterministic numbering
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        edges = pairs[first[order]]
        counts = counts[order]
        elem_edges = rank[inverse.ravel()].reshape(-1, 4)
        adjacent = np.full((len(edges), 2), -1, dtype=np.int64)
        for e in range(self.n_elements):
            for le in range(4):
                k = elem_edges[e, le]
                adjacent[k, 0 if adjacent[k, 0] < 0 else 1] = e
        return edges, counts, elem_edges, adjacent

    @property
    def edges(self) -> np.ndarray:
        """(n_edges, 2) node pairs, oriented as in the first adjacent element."""
        return self._edge_table[0]

    @property
    def edge_elements(self) -> np.ndarray:
        """(n_edges, 2) adjacent element indices, -1 where absent."""
        return self._edge_table[3]

    @property
    def element_edges(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        counts = self._edge_table[1]
        if (counts > 2).any():
            raise MeshError("non-manifold edge")
        return np.flatnonzero(counts == 1)

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.boundary_edge_ids]

    @cached_property
    def boundary_edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.boundary_edges].mean(axis=1)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def boundary_edges_with(self, tags) -> np.ndarray:
        if isinstance(tags, str):
            tags = {tags}
        mask = np.array([t in tags for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask] if len(mask) else np.zeros((0, 2), dtype=np.int64)

    def heat_dirichlet_nodes(self) -> np.ndarray:
        tags = {t for t, (kind, _) in BOUNDARY_TAGS.items() if kind == "dirichlet"}
        return np.unique(self.boundary_edges_with(tags))

    def robin_edges(self) -> np.ndarray:
        return self.boundary_edges_with(ROBIN)

    def clamped_nodes(self) -> np.ndarray:
        tags = {t for t, (_, clamped) in BOUNDARY_TAGS.items() if clamped}
        return np.unique(self.boundary_edges_with(tags))

    def region_id(self, name: str) -> int:
        return self.region_names.index(name)

    def elements_in(self, names) -> np.ndarray:
        if isinstance(names, str):
            names = [names]
        ids = [self.region_names.index(n) for n in names]
        return np.flatnonzero(np.isin(self.region_tags, ids))

    def nodes_of_elements(self, elems) -> np.ndarray:
        return np.unique(self.elements[np.asarray(elems, dtype=np.int64)])

    def find_element(self, point) -> int:
        """Index of the first element containing ``point``."""
        x, y = point
        lo = self.element_lower
        hi = lo + self.element_size
        inside = (lo[:, 0] <= x) & (x <= hi[:, 0]) & (lo[:, 1] <= y) & (y <= hi[:, 1])
        hits = np.flatnonzero(inside)
        if len(hits) == 0:
            raise MeshError(f"point {point} lies outside the mesh")
        return int(hits[0])

    def grid_lines(self):
        return np.unique(self.nodes[:, 0]), np.unique(self.nodes[:, 1])

    def replace(self, **changes) -> QuadMesh:
        kw = dict(nodes=self.nodes, elements=self.elements, region_tags=self.region_tags,
                  region_names=self.region_names, boundary_tags=self.boundary_tags,
                  warnings=self.warnings)
        kw.update(changes)
        return QuadMesh(**kw)


def _grid_mesh(xs, ys, keep=None, region_tags=None, region_names=(DEFAULT_REGION,)):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    i, j = i.ravel(), j.ravel()
    n0 = j * nx + i
    elements = np.column_stack([n0, n0 + 1, n0 + 1 + nx, n0 + nx])
    if region_tags is None:
        region_tags = np.zeros(len(elements), dtype=np.int64)
    if keep is not None:
        elements = elements[keep]
        region_tags = np.asarray(region_tags)[keep]
        used = np.unique(elements)
        renum = np.full(len(nodes), -1, dtype=np.int64)
        renum[used] = np.arange(len(used))
        nodes = nodes[used]
        elements = renum[elements]
    return QuadMesh(nodes, elements, region_tags, tuple(region_names))


def build_rectangle_mesh(lower_corner, upper_corner, refinements: int) -> QuadMesh:
    """Uniformly refined mesh of a rectangle: 4**refinements congruent cells."""
    (x0, y0), (x1, y1) = lower_corner, upper_corner
    if refinements < 0 or int(refinements) != refinements:
        raise MeshError("refinements must be a nonnegative integer")
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {lower_corner} x {upper_corner}")
    n = 2 ** int(refinements)
    return _grid_mesh(np.linspace(x0, x1, n + 1), np.linspace(y0, y1, n + 1))


def build_grid_mesh(lower_corner, upper_corner, nx: int, ny: int) -> QuadMesh:
    """Tensor grid of nx by ny equal rectangles."""
    (x0, y0), (x1, y1) = lower_corner, upper_corner
    if min(nx, ny) < 1 or int(nx) != nx or int(ny) != ny:
        raise MeshError("cell counts must be positive integers")
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {lower_corner} x {upper_corner}")
    return _grid_mesh(np.linspace(x0, x1, int(nx) + 1), np.linspace(y0, y1, int(ny) + 1))


def _subdivide(breaks, h):
    lines = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        k = max(1, math.ceil((b - a) / h - 1e-9))
        lines.extend(np.linspace(a, b, k + 1)[1:])
    return np.array(lines)


def snap_region_mesh(mesh: QuadMesh, regions: RegionSpec, merge_tol=1e-10) -> QuadMesh:
    """Re-grid ``mesh`` so that every region interface is a mesh line.

    The interval between consecutive interface coordinates is split into the
    fewest equal pieces not exceeding the input mesh width, so thin strips get
    anisotropic elements of exactly their width.  Cells outside every region
    are removed, which is how composite (cross-shaped) domains are built from
    a bounding rectangle.
    """
    if not regions.regions:
        return mesh.replace(region_tags=np.zeros(mesh.n_elements, dtype=np.int64),
                            region_names=(DEFAULT_REGION,), boundary_tags=None)
    regions.check_disjoint()
    mesh.check_rectangles()
    gx, gy = mesh.grid_lines()
    if len(gx) * len(gy) != mesh.n_nodes:
        raise MeshError("snap_region_mesh needs a full tensor-product input mesh")
    hx = np.diff(gx).max()
    hy = np.diff(gy).max()
    lo = np.array([gx[0], gy[0]])
    hi = np.array([gx[-1], gy[-1]])

    per_axis = []
    for axis, h in ((0, hx), (1, hy)):
        coords = [lo[axis], hi[axis]]
        for r in regions.regions:
            for c in (r.lower[axis], r.upper[axis]):
                if c < lo[axis] - merge_tol or c > hi[axis] + merge_tol:
                    raise MeshError(f"region {r.name!r} interface {c} lies outside the mesh")
                coords.append(min(max(c, lo[axis]), hi[axis]))
        coords = np.sort(np.array(coords))
        breaks = [coords[0]]
        for c in coords[1:]:
            if c - breaks[-1] > merge_tol:
                breaks.append(c)
            elif c != breaks[-1]:
                raise MeshError(f"region interfaces {breaks[-1]} and {c} are too close to align")
        per_axis.append(_subdivide(breaks, h))

    xs, ys = per_axis
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy)
    CX, CY = CX.ravel(), CY.ravel()
    names = regions.names
    tags = np.full(len(CX), -1, dtype=np.int64)
    for r in regions.regions:
        inside = r.contains(CX, CY, tol=0.0)
        tags[inside] = names.index(r.name)
    keep = np.flatnonzero(tags >= 0)
    if len(keep) == 0:
        raise MeshError("no element lies inside any region")
    return _grid_mesh(xs, ys, keep=keep, region_tags=tags, region_names=names)


Predicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


def tag_boundary(mesh: QuadMesh, side_predicates: Mapping[str, Predicate]) -> QuadMesh:
    """Tag boundary edges by evaluating predicates at edge midpoints.

    Predicates are tried in mapping order and the first match wins; edges
    matched by more than one predicate are reported in ``mesh.warnings``.
    Unmatched edges default to ``insulated_free``.
    """
    mid = mesh.boundary_edge_midpoints
    tags = np.array([INSULATED_FREE] * len(mid), dtype=object)
    assigned = np.zeros(len(mid), dtype=bool)
    notes = list(mesh.warnings)
    for tag, pred in side_predicates.items():
        if tag not in BOUNDARY_TAGS:
            raise MeshError(f"unknown boundary tag {tag!r}")
        hit = np.asarray(pred(mid[:, 0], mid[:, 1]), dtype=bool)
        clash = hit & assigned
        if clash.any():
            msg = f"{int(clash.sum())} boundary edges also match {tag!r}; first match kept"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
        new = hit & ~assigned
        tags[new] = tag
        assigned |= new
    return mesh.replace(boundary_tags=tuple(tags.tolist()), warnings=tuple(notes))


def dump_mesh(mesh: QuadMesh, path) -> None:
    """Plain-text listing: counts, then ``index x y`` and ``index n0 n1 n2 n3`` lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {mesh.n_elements}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
        for i, el in enumerate(mesh.elements):
            fh.write(f"{i} {el[0]} {el[1]} {el[2]} {el[3]}\n")
