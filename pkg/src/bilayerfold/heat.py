"""Backward-Euler Q1 solver for heat diffusion on the flat parametric domain.

Every coefficient is stored divided by the heat capacity: the mass matrix is
the plain L2 Gram matrix, the stiffness uses the diffusivity (mm^2/s) and the
Robin matrix the transfer velocity (mm/s).  Sources are rates in C/s.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dkq import gauss_rule
from .mesh import QuadMesh


def _as_function(value) -> Callable[[float], float]:
    if callable(value):
        return value
    v = float(value)
    return lambda t: v


@dataclass(frozen=True)
class RegionSource:
    """Spatially constant rate (C/s) on a set of elements."""

    elements: np.ndarray
    rate: Callable[[float], float]


@dataclass(frozen=True)
class FieldSource:
    """Source given pointwise as ``f(x1, x2, t)``."""

    func: Callable


@dataclass
class BoundaryData:
    dirichlet: Callable[[float], float] | float = 0.0
    ambient: Callable[[float], float] | float = 0.0
    sources: Sequence = ()
    # optional pointwise Dirichlet trace g(x1, x2, t); overrides ``dirichlet``
    dirichlet_field: Callable | None = None

    def dirichlet_values(self, nodes, t):
        if self.dirichlet_field is not None:
            return np.asarray(self.dirichlet_field(nodes[:, 0], nodes[:, 1], t), dtype=float) \
                * np.ones(len(nodes))
        return np.full(len(nodes), _as_function(self.dirichlet)(t))


def q1_basis(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return 0.25 * np.stack([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                            (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)], axis=-1)


def q1_gradient(xi, eta, hx, hy):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)], axis=-1)
    deta = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)], axis=-1)
    return np.stack([dxi * 2 / hx, deta * 2 / hy], axis=-2)


@dataclass(eq=False)
class HeatSystem:
    mesh: QuadMesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    robin: sp.csr_matrix
    dirichlet_nodes: np.ndarray
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def free_nodes(self):
        mask = np.ones(self.mesh.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    def robin_load(self, ambient):
        return self.robin @ np.full(self.mesh.n_nodes, float(ambient))

    def source_load(self, sources, t):
        b = np.zeros(self.mesh.n_nodes)
        for src in sources:
            if isinstance(src, RegionSource):
                rate = src.rate(t)
                if rate != 0.0:
                    b += rate * _indicator_load(self.mesh, src.elements)
            elif isinstance(src, FieldSource):
                b += _field_load(self.mesh, src.func, t)
            else:
                raise TypeError(f"unknown source {src!r}")
        return b

    def factor(self, tau):
        key = float(tau)
        if key not in self._factors:
            A = (self.mass / tau + self.stiffness + self.robin).tocsc()
            free = self.free_nodes
            Aff = A[free][:, free].tocsc()
            self._factors[key] = (A, spla.splu(Aff))
        return self._factors[key]


def _indicator_load(mesh, elements):
    elements = np.asarray(elements, dtype=np.int64)
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.elements[elements],
              np.repeat(mesh.element_area[elements, None] / 4, 4, axis=1))
    return b


def _field_load(mesh, func, t):
    pts, wts = gauss_rule(3)
    N = q1_basis(pts[:, 0], pts[:, 1])  # (q, 4)
    lo = mesh.element_lower
    hs = mesh.element_size
    X = lo[:, None, 0] + 0.5 * hs[:, None, 0] * (pts[None, :, 0] + 1)
    Y = lo[:, None, 1] + 0.5 * hs[:, None, 1] * (pts[None, :, 1] + 1)
    F = np.asarray(func(X, Y, t), dtype=float) * np.ones_like(X)
    local = np.einsum("eq,q,qa->ea", F, wts, N) * (mesh.element_area / 4)[:, None]
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.elements, local)
    return b


def _element_matrices(hx, hy, diffusivity):
    pts, wts = gauss_rule(2)
    N = q1_basis(pts[:, 0], pts[:, 1])
    dN = q1_gradient(pts[:, 0], pts[:, 1], hx, hy)
    jac = 0.25 * hx * hy
    M = np.einsum("q,qa,qb->ab", wts * jac, N, N)
    K = np.einsum("q,qia,qib->ab", wts * jac, dN, dN) * diffusivity
    return M, K


def assemble_heat_system(mesh: QuadMesh, diffusivity, robin_velocity=0.0) -> HeatSystem:
    """Assemble mass, stiffness and Robin matrices.

    ``diffusivity`` and ``robin_velocity`` are scalars or per-element arrays
    (a Robin edge uses the value of its element).
    """
    mesh.check_rectangles()
    E = mesh.n_elements
    kappa = np.broadcast_to(np.asarray(diffusivity, dtype=float), (E,))
    if not np.all(np.isfinite(kappa)) or (kappa <= 0).any():
        raise ValueError("diffusivity must be positive on every element")
    eta = np.broadcast_to(np.asarray(robin_velocity, dtype=float), (E,))
    if (eta < 0).any():
        raise ValueError("Robin transfer velocity must be nonnegative")

    Mb = np.empty((E, 4, 4))
    Kb = np.empty((E, 4, 4))
    for e, (hx, hy) in enumerate(mesh.element_size):
        Mb[e], Kb[e] = _element_matrices(hx, hy, kappa[e])
    rows = np.repeat(mesh.elements, 4, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 4)).ravel()
    n = mesh.n_nodes
    M = sp.coo_matrix((Mb.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = sp.coo_matrix((Kb.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    # Robin edge integrals with 2-point Gauss on each edge
    ids = [i for i, t in zip(mesh.boundary_edge_ids, mesh.boundary_tags) if t == "robin"]
    R = sp.csr_matrix((n, n))
    if ids:
        ids = np.array(ids)
        pairs = mesh.edges[ids]
        elem = mesh.edge_elements[ids, 0]
        length = np.linalg.norm(mesh.nodes[pairs[:, 1]] - mesh.nodes[pairs[:, 0]], axis=1)
        g, w = np.polynomial.legendre.leggauss(2)
        phi = np.stack([(1 - g) / 2, (1 + g) / 2], axis=1)
        local = np.einsum("q,qa,qb->ab", w / 2, phi, phi)
        blocks = local[None] * (eta[elem] * length)[:, None, None]
        rr = np.repeat(pairs, 2, axis=1).ravel()
        cc = np.tile(pairs, (1, 2)).ravel()
        R = sp.coo_matrix((blocks.ravel(), (rr, cc)), shape=(n, n)).tocsr()
    return HeatSystem(mesh, M, K, R, mesh.heat_dirichlet_nodes())


def heat_step(system: HeatSystem, theta_k, tau, data: BoundaryData, t_next):
    """One backward-Euler step; Dirichlet data enters lifted at ``t_next``."""
    if not tau > 0:
        raise ValueError("time step must be positive")
    theta_k = np.asarray(theta_k, dtype=float)
    A, lu = system.factor(tau)
    rhs = system.mass @ theta_k / tau + system.source_load(data.sources, t_next)
    amb = _as_function(data.ambient)(t_next)
    if system.robin.nnz:
        rhs += system.robin_load(amb)
    theta = np.empty_like(theta_k)
    d = system.dirichlet_nodes
    free = system.free_nodes
    if len(d):
        theta[d] = data.dirichlet_values(system.mesh.nodes[d], t_next)
        rhs = rhs - A[:, d] @ theta[d]
    theta[free] = lu.solve(rhs[free])
    if not np.all(np.isfinite(theta)):
        res = np.linalg.norm(A[free][:, free] @ theta[free] - rhs[free])
        raise FloatingPointError(f"heat solve failed, residual {res:.3e}")
    return theta


def stationary_solution(system: HeatSystem, data: BoundaryData, t):
    """Solve (K + R) theta = r + f with the Dirichlet trace at time ``t``."""
    A = (system.stiffness + system.robin).tocsc()
    rhs = system.source_load(data.sources, t)
    if system.robin.nnz:
        rhs = rhs + system.robin_load(_as_function(data.ambient)(t))
    theta = np.zeros(system.mesh.n_nodes)
    d = system.dirichlet_nodes
    free = system.free_nodes
    if len(d):
        theta[d] = data.dirichlet_values(system.mesh.nodes[d], t)
        rhs = rhs - A[:, d] @ theta[d]
    theta[free] = spla.spsolve(A[free][:, free].tocsc(), rhs[free])
    return theta


def l2_error(mesh: QuadMesh, theta, exact, t, order=3):
    """L2 norm of the Q1 field minus ``exact(x1, x2, t)`` by tensor Gauss quadrature."""
    pts, wts = gauss_rule(order)
    N = q1_basis(pts[:, 0], pts[:, 1])
    lo = mesh.element_lower
    hs = mesh.element_size
    X = lo[:, None, 0] + 0.5 * hs[:, None, 0] * (pts[None, :, 0] + 1)
    Y = lo[:, None, 1] + 0.5 * hs[:, None, 1] * (pts[None, :, 1] + 1)
    uh = np.asarray(theta)[mesh.elements] @ N.T
    diff = uh - exact(X, Y, t)
    return float(np.sqrt(np.sum(diff ** 2 * wts[None, :] * (mesh.element_area / 4)[:, None])))


def verify_manufactured(refinements: Sequence[int], exact, source, diffusivity=1.0,
                        t_final=0.25, tau_of_h=lambda h: h * h,
                        domain=((-1.0, -1.0), (1.0, 1.0))):
    """Final-time L2 errors and observed orders for a manufactured solution.

    ``exact(x1, x2, t)`` supplies both the initial state and the Dirichlet
    trace on the whole boundary; ``source(x1, x2, t)`` must equal
    d_t theta - diffusivity * Laplace theta.  Returns ``(hs, errors, orders)``.
    """
    from .mesh import DIRICHLET_FREE, build_rectangle_mesh, tag_boundary

    hs, errs = [], []
    for r in refinements:
        mesh = build_rectangle_mesh(*domain, r)
        mesh = tag_boundary(mesh, {DIRICHLET_FREE: lambda x, y: np.ones_like(x, dtype=bool)})
        system = assemble_heat_system(mesh, diffusivity)
        h = mesh.h
        n_steps = max(1, int(round(t_final / tau_of_h(h))))
        tau = t_final / n_steps
        data = BoundaryData(sources=[FieldSource(source)], dirichlet_field=exact)
        theta = exact(mesh.nodes[:, 0], mesh.nodes[:, 1], 0.0) * np.ones(mesh.n_nodes)
        for k in range(n_steps):
            theta = heat_step(system, theta, tau, data, (k + 1) * tau)
        hs.append(h)
        errs.append(l2_error(mesh, theta, exact, t_final))
    hs, errs = np.array(hs), np.array(errs)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
    return hs, errs, orders
