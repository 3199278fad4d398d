"""Discrete Kirchhoff quadrilateral (DKQ) element on axis-aligned rectangles.

The scalar space carries value and gradient at every vertex.  On each element
a function is the bicubic fixed by those 12 values plus four edge conditions:
the normal derivative at an edge midpoint is the mean of the normal
derivatives at the edge endpoints.  The discrete gradient interpolates the
gradient into continuous biquadratic vector fields (vertex values taken from
the nodal gradients, edge midpoints exact, element centre the vertex mean),
and the discrete Hessian is the elementwise gradient of that field.

Global scalar DOF layout is ``3*node + k`` with ``k = 0`` value, ``1`` d/dx1,
``2`` d/dx2.  Deformations are stored as ``(n_nodes, 3, 3)`` arrays indexed
``[node, k, component]`` whose flattening gives ``9*node + 3*k + component``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import QuadMesh

# reference square [-1, 1]^2, vertices counterclockwise from the lower left
VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
# (vertex a, vertex b, normal axis) for each edge
EDGES = ((0, 1, 1), (1, 2, 0), (2, 3, 1), (3, 0, 0))
# biquadratic nodes, xi fastest
Q2_POINTS = np.array([[a, b] for b in (-1.0, 0.0, 1.0) for a in (-1.0, 0.0, 1.0)])
Q2_VERTEX = (0, 2, 8, 6)
Q2_MIDPOINT = {0: 1, 1: 5, 2: 7, 3: 3}
Q2_CENTER = 4

_POW = np.array([(i, j) for i in range(4) for j in range(4)])


def monomials(xi, eta, dxi=0, deta=0):
    """Derivatives of the 16 monomials xi**i * eta**j, shape ``(..., 16)``."""
    xi = np.asarray(xi, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    i, j = _POW[:, 0], _POW[:, 1]

    def dpow(t, p, d):
        coef = np.ones_like(p, dtype=float)
        for s in range(d):
            coef = coef * (p - s)
        e = np.maximum(p - d, 0)
        return np.where(p >= d, coef * t ** e, 0.0)

    return dpow(xi, i, dxi) * dpow(eta, j, deta)


def _functional_rows():
    """Vertex DOFs followed by the four edge-midpoint conditions, on the monomials."""
    rows = []
    for v in VERTICES:
        rows.append(monomials(*v))
        rows.append(monomials(*v, dxi=1))
        rows.append(monomials(*v, deta=1))
    for a, b, axis in EDGES:
        d = (1, 0) if axis == 0 else (0, 1)
        mid = 0.5 * (VERTICES[a] + VERTICES[b])
        rows.append(monomials(*mid, *d)
                    - 0.5 * (monomials(*VERTICES[a], *d) + monomials(*VERTICES[b], *d)))
    return np.array(rows)


@dataclass(frozen=True)
class DkqElementBasis:
    """12 reference shape functions as coefficients over the 16 monomials.

    ``coefficients[:, i]`` is shape function ``i``; ``functionals`` holds the
    16 functionals (12 vertex DOFs then 4 edge conditions) applied to the
    monomials.  On bicubics the edge conditions satisfy one linear relation,
    leaving the interior bubble xi*eta*(1 - xi**2)*(1 - eta**2) free; it has
    zero vertex data and zero discrete gradient, and is removed by asking the
    xi**3 * eta**3 coefficient to vanish.
    """

    coefficients: np.ndarray
    functionals: np.ndarray

    def eval(self, xi, eta, dxi=0, deta=0):
        return monomials(xi, eta, dxi, deta) @ self.coefficients


@lru_cache(maxsize=None)
def build_dkq_basis() -> DkqElementBasis:
    F = _functional_rows()
    C = F.copy()
    C[15] = 0.0
    C[15, 15] = 1.0  # xi^3 eta^3 coefficient
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError("DKQ construction system is singular")
    rhs = np.zeros((16, 12))
    rhs[:12] = np.eye(12)
    coef = np.linalg.solve(C, rhs)
    if np.abs(F[15] @ coef).max() > 1e-12:
        raise np.linalg.LinAlgError("edge condition on the last edge is not implied")
    coef.flags.writeable = False
    F.flags.writeable = False
    return DkqElementBasis(coef, F)


def gauss_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def _q2_1d(t, d=0):
    t = np.asarray(t, dtype=float)
    if d == 0:
        return np.stack([0.5 * t * (t - 1), 1 - t * t, 0.5 * t * (t + 1)], axis=-1)
    return np.stack([t - 0.5, -2 * t, t + 0.5], axis=-1)


def q2_basis(xi, eta, dxi=0, deta=0):
    """Biquadratic Lagrange basis on Q2_POINTS, shape ``(..., 9)``."""
    a = _q2_1d(xi, dxi)
    b = _q2_1d(eta, deta)
    return (b[..., :, None] * a[..., None, :]).reshape(*np.shape(xi), 9)


def dof_scaling(hx, hy):
    """Maps physical local DOFs (value, d/dx, d/dy per vertex) to reference ones."""
    return np.diag(np.tile([1.0, 0.5 * hx, 0.5 * hy], 4))


def reference_from_physical(hx, hy):
    return build_dkq_basis().coefficients @ dof_scaling(hx, hy)


@dataclass(frozen=True)
class ElementOperators:
    """Per-shape element matrices for a rectangle with sides ``hx, hy``."""

    hx: float
    hy: float
    gradient_map: np.ndarray  # (9, 2, 12): nodal values of the discrete gradient
    stiffness: np.ndarray  # (12, 12): int D_h^2 w : D_h^2 v
    mass: np.ndarray  # (12, 12): int w v of the bicubic reconstruction
    vertex_laplacian: np.ndarray  # (4, 12): Delta_h w at the 4 vertices

    @property
    def area(self):
        return self.hx * self.hy

    def hessian_at(self, xi, eta):
        """Discrete Hessian rows, shape ``(..., 2, 2, 12)`` with [i, j] = d_j (grad_h w)_i."""
        dx = q2_basis(xi, eta, dxi=1) * (2.0 / self.hx)
        dy = q2_basis(xi, eta, deta=1) * (2.0 / self.hy)
        H = np.empty(np.shape(xi) + (2, 2, 12))
        for i in range(2):
            H[..., i, 0, :] = dx @ self.gradient_map[:, i, :]
            H[..., i, 1, :] = dy @ self.gradient_map[:, i, :]
        return H

    def laplacian_at(self, xi, eta):
        H = self.hessian_at(xi, eta)
        return H[..., 0, 0, :] + H[..., 1, 1, :]

    def value_at(self, xi, eta):
        return monomials(xi, eta) @ reference_from_physical(self.hx, self.hy)

    def gradient_at(self, xi, eta):
        """Exact gradient of the bicubic reconstruction, ``(..., 2, 12)``."""
        R = reference_from_physical(self.hx, self.hy)
        gx = monomials(xi, eta, dxi=1) @ R * (2.0 / self.hx)
        gy = monomials(xi, eta, deta=1) @ R * (2.0 / self.hy)
        return np.stack([gx, gy], axis=-2)

    def discrete_gradient_at(self, xi, eta):
        """Discrete gradient rows at arbitrary points, ``(..., 2, 12)``."""
        L = q2_basis(xi, eta)
        return np.stack([L @ self.gradient_map[:, 0, :], L @ self.gradient_map[:, 1, :]], axis=-2)


def _gradient_map(hx, hy):
    G = np.zeros((9, 2, 12))
    for a, p in enumerate(Q2_VERTEX):
        G[p, 0, 3 * a + 1] = 1.0
        G[p, 1, 3 * a + 2] = 1.0
    ops = ElementOperators(hx, hy, G, None, None, None)
    for e, (a, b, _) in enumerate(EDGES):
        mid = 0.5 * (VERTICES[a] + VERTICES[b])
        G[Q2_MIDPOINT[e]] = ops.gradient_at(*mid)
    G[Q2_CENTER] = 0.25 * sum(G[p] for p in Q2_VERTEX)
    return G


@lru_cache(maxsize=256)
def _element_operators(hx, hy):
    G = _gradient_map(hx, hy)
    ops = ElementOperators(hx, hy, G, None, None, None)
    pts, wts = gauss_rule(3)
    H = ops.hessian_at(pts[:, 0], pts[:, 1]).reshape(len(pts), 4, 12)
    jac = 0.25 * hx * hy
    K = np.einsum("q,qri,qrj->ij", wts * jac, H, H)
    pts4, wts4 = gauss_rule(4)
    N = ops.value_at(pts4[:, 0], pts4[:, 1])
    M = np.einsum("q,qi,qj->ij", wts4 * jac, N, N)
    lap = ops.laplacian_at(VERTICES[:, 0], VERTICES[:, 1])
    for arr in (G, K, M, lap):
        arr.flags.writeable = False
    return ElementOperators(hx, hy, G, 0.5 * (K + K.T), 0.5 * (M + M.T), lap)


def element_operators(hx, hy) -> ElementOperators:
    # rounding makes cache hits independent of last-bit noise in the mesh
    return _element_operators(float(np.round(hx, 14)), float(np.round(hy, 14)))


def discrete_gradient(element_size, local_w_dofs):
    """Discrete gradient coefficients at the 9 biquadratic nodes, ``(9, 2)``.

    ``element_size`` is ``(hx, hy)``; ``local_w_dofs`` the 12 physical DOFs.
    """
    ops = element_operators(*element_size)
    return np.einsum("pci,i->pc", ops.gradient_map, np.asarray(local_w_dofs, dtype=float))


def evaluate_discrete_hessian_trace(element_size, local_dofs, points):
    """Discrete Laplacian at reference ``points`` of shape ``(n, 2)``."""
    ops = element_operators(*element_size)
    pts = np.asarray(points, dtype=float)
    return ops.laplacian_at(pts[:, 0], pts[:, 1]) @ np.asarray(local_dofs, dtype=float)


class DkqSpace:
    """Global DKQ machinery on a rectangular mesh."""

    def __init__(self, mesh: QuadMesh):
        mesh.check_rectangles()
        self.mesh = mesh
        sizes = mesh.element_size
        key = np.round(sizes, 14)
        shapes, self.shape_index = np.unique(key, axis=0, return_inverse=True)
        self.shape_index = self.shape_index.ravel()
        self.shapes = [element_operators(hx, hy) for hx, hy in shapes]
        el = mesh.elements
        self.local_dofs = (3 * el[:, :, None] + np.arange(3)).reshape(len(el), 12)

    @property
    def n_scalar(self):
        return 3 * self.mesh.n_nodes

    def _assemble(self, attr, coef):
        E = self.mesh.n_elements
        blocks = np.empty((E, 12, 12))
        for s, ops in enumerate(self.shapes):
            sel = self.shape_index == s
            blocks[sel] = getattr(ops, attr)[None]
        blocks *= np.asarray(coef, dtype=float).reshape(-1, 1, 1) * np.ones((E, 1, 1))
        rows = np.repeat(self.local_dofs, 12, axis=1).ravel()
        cols = np.tile(self.local_dofs, (1, 12)).ravel()
        A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(self.n_scalar,) * 2).tocsr()
        A.sum_duplicates()
        return A

    def bending_matrix(self, mu_bar=1.0):
        """Scalar matrix of (mu_bar D_h^2 w, D_h^2 v)."""
        mu = np.broadcast_to(np.asarray(mu_bar, dtype=float), (self.mesh.n_elements,))
        if (mu <= 0).any():
            raise ValueError("bending coefficient must be positive")
        return self._assemble("stiffness", mu)

    def mass_matrix(self):
        """Scalar L2 Gram matrix of the bicubic reconstructions."""
        return self._assemble("mass", 1.0)

    def element_blocks(self, attr):
        return np.stack([getattr(self.shapes[s], attr) for s in self.shape_index])

    def lumped_weights(self):
        """Nodal weights m_z = sum over elements at z of |T|/4."""
        w = np.zeros(self.mesh.n_nodes)
        np.add.at(w, self.mesh.elements, np.repeat(self.mesh.element_area[:, None] / 4, 4, axis=1))
        return w

    def laplacian_coupling(self, weight):
        """Sparse Q with (Q @ g)[i] = sum_T |T|/4 sum_z weight_T Delta_h phi_i|_T(z) g(z).

        Rows are scalar DOFs, columns nodes.
        """
        weight = np.broadcast_to(np.asarray(weight, dtype=float), (self.mesh.n_elements,))
        lap = self.element_blocks("vertex_laplacian")  # (E, 4, 12)
        vals = lap * (self.mesh.element_area * weight / 4)[:, None, None]
        rows = np.broadcast_to(self.local_dofs[:, None, :], vals.shape).ravel()
        cols = np.broadcast_to(self.mesh.elements[:, :, None], vals.shape).ravel()
        return sp.coo_matrix((vals.ravel(), (rows, cols)),
                             shape=(self.n_scalar, self.mesh.n_nodes)).tocsr()

    # -- field helpers ---------------------------------------------------
    def interpolate(self, f, grad):
        """Scalar DOFs ``(n_nodes, 3)`` of a function given with its gradient."""
        x, y = self.mesh.nodes[:, 0], self.mesh.nodes[:, 1]
        g = np.asarray(grad(x, y), dtype=float)
        return np.column_stack([np.broadcast_to(f(x, y), x.shape), g[0] * np.ones_like(x),
                                g[1] * np.ones_like(x)])

    def element_dofs(self, scalar_dofs, e):
        return np.asarray(scalar_dofs).reshape(-1)[self.local_dofs[e]]

    def evaluate(self, scalar_dofs, points):
        """Values of the bicubic reconstruction at physical ``points`` (n, 2)."""
        flat = np.asarray(scalar_dofs).reshape(-1)
        out = np.empty(len(points))
        for n, p in enumerate(points):
            e = self.mesh.find_element(p)
            ops = self.shapes[self.shape_index[e]]
            lo = self.mesh.element_lower[e]
            xi = 2 * (p[0] - lo[0]) / ops.hx - 1
            eta = 2 * (p[1] - lo[1]) / ops.hy - 1
            out[n] = ops.value_at(xi, eta) @ flat[self.local_dofs[e]]
        return out


def lumped_inner_product(mesh: QuadMesh, phi, psi) -> float:
    """(phi, psi)_h = sum_T |T|/4 sum_{z in T} phi|_T(z) . psi|_T(z).

    ``phi`` and ``psi`` are either nodal arrays ``(n_nodes, ...)`` or arrays
    of per-element corner values ``(n_elements, 4, ...)``.
    """

    def corners(f):
        f = np.asarray(f, dtype=float)
        if f.shape[:2] == (mesh.n_elements, 4) and f.shape[0] != mesh.n_nodes:
            return f
        return f[mesh.elements]

    a, b = corners(phi), corners(psi)
    prod = (a * b).reshape(mesh.n_elements, 4, -1).sum(axis=(1, 2))
    return float(np.sum(mesh.element_area / 4 * prod))
