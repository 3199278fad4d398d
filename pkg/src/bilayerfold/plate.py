"""Semi-implicit plate update with nodal linearized isometry and obstacle splitting.

One step finds the increment ``d = y^{k+1} - y^k`` in the tangent space of
the current deformation (nodal linearized isometry, homogeneous clamped
data) that solves

    (mu D_h^2 (y^k + d), D_h^2 w) + 1/eps (y^k + d - s^k, w)_h
        = (mu Delta_h w . (d1 y^k x d2 y^k), alpha theta)_h

for all tangent ``w``, then projects ``y^{k+1}`` nodewise onto the obstacle
set to obtain ``s^{k+1}``.  The constraint only involves the six gradient
DOFs of each node, so the tangent space has a block-diagonal basis and the
default solve eliminates the constraints node by node; a Lagrange-multiplier
saddle-point solve is available as a cross-check.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .dkq import DkqSpace
from .mesh import QuadMesh

log = logging.getLogger(__name__)

RANK_TOL = 1e-8


# -- obstacles -----------------------------------------------------------------
class NoObstacle:
    def project(self, points):
        return np.array(points, dtype=float, copy=True)

    def penetration(self, points):
        return np.zeros(len(points))

    def __eq__(self, other):
        return isinstance(other, NoObstacle)

    def __repr__(self):
        return "NoObstacle()"


@dataclass(frozen=True)
class HalfSpace:
    """Admissible set {y : y3 <= height}."""

    height: float

    def project(self, points):
        out = np.array(points, dtype=float, copy=True)
        out[:, 2] = np.minimum(out[:, 2], self.height)
        return out

    def penetration(self, points):
        return np.maximum(np.asarray(points)[:, 2] - self.height, 0.0)


@dataclass(frozen=True)
class SphereUnion:
    """Complement of a union of balls; points inside go to the nearest sphere surface."""

    centers: tuple
    radius: float

    def __post_init__(self):
        if len(self.centers) == 0:
            raise ValueError("sphere union needs at least one sphere")
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def _distances(self, points):
        c = np.asarray(self.centers, dtype=float)
        diff = np.asarray(points, dtype=float)[:, None, :] - c[None, :, :]
        return diff, np.linalg.norm(diff, axis=2)

    def project(self, points):
        out = np.array(points, dtype=float, copy=True)
        diff, dist = self._distances(points)
        nearest = np.argmin(dist, axis=1)
        idx = np.arange(len(out))
        dn = dist[idx, nearest]
        inside = dn < self.radius
        if inside.any():
            d = diff[idx, nearest][inside]
            n = dn[inside]
            safe = np.where(n > 0, n, 1.0)
            unit = d / safe[:, None]
            unit[n == 0] = np.array([0.0, 0.0, 1.0])
            c = np.asarray(self.centers, dtype=float)[nearest[inside]]
            out[inside] = c + self.radius * unit
        return out

    def penetration(self, points):
        _, dist = self._distances(points)
        return np.maximum(self.radius - dist, 0.0).max(axis=1)


# -- nodal geometry --------------------------------------------------------------
def nodal_gradients(y):
    """(N, 3, 2) matrices [d1 y, d2 y] read from the nodal DOFs."""
    y = np.asarray(y)
    return np.stack([y[:, 1, :], y[:, 2, :]], axis=2)


def isometry_defect_per_node(y):
    G = nodal_gradients(y)
    GtG = np.einsum("nci,ncj->nij", G, G)
    return np.linalg.norm(GtG - np.eye(2), axis=(1, 2))


def isometry_defect(y) -> float:
    """max over nodes of |G^T G - I|_F."""
    return float(isometry_defect_per_node(y).max())


def nodal_normals(y):
    y = np.asarray(y)
    return np.cross(y[:, 1, :], y[:, 2, :])


def constraint_blocks(y):
    """(N, 3, 6) linearized isometry rows acting on (d1 v, d2 v) at every node."""
    y = np.asarray(y)
    g1, g2 = y[:, 1, :], y[:, 2, :]
    z = np.zeros_like(g1)
    return np.stack([np.concatenate([g1, z], axis=1),
                     np.concatenate([z, g2], axis=1),
                     np.concatenate([g2, g1], axis=1)], axis=1)


def flat_state(mesh: QuadMesh):
    """y = [id, 0] with gradient [e1, e2]."""
    y = np.zeros((mesh.n_nodes, 3, 3))
    y[:, 0, :2] = mesh.nodes
    y[:, 1, 0] = 1.0
    y[:, 2, 1] = 1.0
    return y


@dataclass(frozen=True)
class SplitState:
    y: np.ndarray  # (N, 3, 3)
    s: np.ndarray  # (N, 3)

    @classmethod
    def initial(cls, mesh: QuadMesh):
        y = flat_state(mesh)
        return cls(y, y[:, 0, :].copy())


def build_constraints(y_k, clamped_nodes=()):
    """Stacked sparse constraint matrix B over the full 9N DOF vector.

    Clamped nodes carry no rows (their DOFs are eliminated); every other
    node contributes its 3 rows, reduced to the rank-revealed ones when the
    nodal gradient matrix is degenerate.
    """
    y_k = np.asarray(y_k)
    N = len(y_k)
    free = np.ones(N, dtype=bool)
    free[np.asarray(clamped_nodes, dtype=np.int64)] = False
    nodes = np.flatnonzero(free)
    blocks = constraint_blocks(y_k)[nodes]  # (n, 3, 6)
    sv = np.linalg.svd(blocks, compute_uv=False)
    bad = np.flatnonzero(sv[:, -1] < RANK_TOL * np.maximum(sv[:, 0], 1.0))
    row_blocks = [blocks[i] for i in range(len(nodes))] if len(bad) else None
    if len(bad):
        log.warning("degenerate nodal gradient at %d nodes", len(bad))
        for i in bad:
            U, sv_i, Vt = np.linalg.svd(blocks[i])
            k = int(np.sum(sv_i > RANK_TOL * max(sv_i[0], 1.0)))
            row_blocks[i] = sv_i[:k, None] * Vt[:k]
        counts = np.array([len(rb) for rb in row_blocks])
        starts = np.concatenate([[0], np.cumsum(counts)])
        rows = np.concatenate([np.repeat(np.arange(starts[i], starts[i + 1]), 6)
                               for i in range(len(nodes))])
        cols = np.concatenate([np.tile(9 * n + 3 + np.arange(6), counts[i])
                               for i, n in enumerate(nodes)])
        vals = np.concatenate([rb.ravel() for rb in row_blocks])
        return sp.csr_matrix((vals, (rows, cols)), shape=(starts[-1], 9 * N))
    rows = np.repeat(np.arange(3 * len(nodes)), 6)
    cols = (9 * nodes[:, None, None] + 3 + np.arange(6)[None, None, :]).repeat(3, axis=1).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(3 * len(nodes), 9 * N))


def constraint_residual(y_k, v, clamped_nodes=()):
    """max |B v| evaluated node by node without assembling B."""
    blocks = constraint_blocks(y_k)
    grad = np.asarray(v).reshape(len(blocks), 9)[:, 3:]
    r = np.abs(np.einsum("nij,nj->ni", blocks, grad))
    r[np.asarray(clamped_nodes, dtype=np.int64)] = 0.0
    return float(r.max()) if len(r) else 0.0


def tangent_basis(y_k, clamped_nodes=(), pinned_nodes=()):
    """Sparse basis Z (9N x m) of the discrete tangent space, block diagonal per node.

    Clamped nodes keep no DOFs; pinned nodes keep only gradient directions.
    Returns ``(Z, degenerate_nodes)``.
    """
    y_k = np.asarray(y_k)
    N = len(y_k)
    clamped = np.zeros(N, dtype=bool)
    clamped[np.asarray(clamped_nodes, dtype=np.int64)] = True
    pinned = np.zeros(N, dtype=bool)
    pinned[np.asarray(pinned_nodes, dtype=np.int64)] = True
    pinned &= ~clamped

    # infinitesimal rotations w x G span the null space whenever G has rank 2;
    # they vary smoothly with y_k, which keeps consecutive reduced systems close
    g1, g2 = y_k[:, 1, :], y_k[:, 2, :]
    scale = np.maximum(np.linalg.norm(g1, axis=1) * np.linalg.norm(g2, axis=1), 1.0)
    degenerate = np.flatnonzero((np.linalg.norm(np.cross(g1, g2), axis=1) < RANK_TOL * scale)
                                & ~clamped)

    n_val = np.where(clamped | pinned, 0, 3)
    n_null = np.where(clamped, 0, 3)
    null = {}
    for n in degenerate:
        U, S, Vt = np.linalg.svd(constraint_blocks(y_k[n:n + 1])[0])
        k = int(np.sum(S > RANK_TOL * max(S[0], 1.0)))
        null[n] = Vt[k:].T
        n_null[n] = 6 - k
    counts = n_val + n_null
    offsets = np.concatenate([[0], np.cumsum(counts)])

    rows, cols, vals = [], [], []
    # value columns
    vn = np.flatnonzero(n_val == 3)
    for c in range(3):
        rows.append(9 * vn + c)
        cols.append(offsets[vn] + c)
        vals.append(np.ones(len(vn)))
    # regular null spaces, vectorized
    reg = np.flatnonzero((n_null == 3) & ~np.isin(np.arange(N), degenerate))
    if len(reg):
        eye = np.eye(3)[None, :, :]
        NB = np.concatenate([np.cross(eye, g1[reg, None, :]),
                             np.cross(eye, g2[reg, None, :])], axis=2)  # (n, 3, 6)
        NB = np.transpose(NB, (0, 2, 1))  # (n, 6, 3)
        r_idx = 9 * reg[:, None, None] + 3 + np.arange(6)[None, :, None]
        c_idx = (offsets[reg] + n_val[reg])[:, None, None] + np.arange(3)[None, None, :]
        rows.append(np.broadcast_to(r_idx, NB.shape).ravel())
        cols.append(np.broadcast_to(c_idx, NB.shape).ravel())
        vals.append(NB.ravel())
    for n, NB in null.items():
        r_idx = 9 * n + 3 + np.arange(6)[:, None]
        c_idx = offsets[n] + n_val[n] + np.arange(NB.shape[1])[None, :]
        rows.append(np.broadcast_to(r_idx, NB.shape).ravel())
        cols.append(np.broadcast_to(c_idx, NB.shape).ravel())
        vals.append(NB.ravel())
    Z = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(9 * N, int(offsets[-1])))
    return Z, degenerate


def _bandwidth(A, perm):
    C = A[perm][:, perm].tocoo()
    return int(np.abs(C.row - C.col).max()) if C.nnz else 0


class BandedCholesky:
    """Cholesky factor of an SPD sparse matrix stored in banded form after ``perm``."""

    def __init__(self, A, perm=None):
        A = A.tocsr()
        n = A.shape[0]
        if perm is None:
            perm = reverse_cuthill_mckee(A, symmetric_mode=True)
        self.perm = np.asarray(perm)
        self.shape = A.shape
        C = A[self.perm][:, self.perm].tocoo()
        upper = C.row <= C.col
        bw = int((C.col - C.row)[upper].max()) if upper.any() else 0
        if (bw + 1) * n * 8 > 2e9:
            raise MemoryError(f"band of width {bw} is too large")
        ab = np.zeros((bw + 1, n))
        ab[bw + C.row[upper] - C.col[upper], C.col[upper]] = C.data[upper]
        self.factor = sla.cholesky_banded(ab, overwrite_ab=True, check_finite=False)

    def solve(self, b):
        x = np.empty_like(b)
        x[self.perm] = sla.cho_solve_banded((self.factor, False), b[self.perm],
                                            check_finite=False)
        return x


def solve_spd(A, b, perm=None):
    """Solve with an SPD sparse matrix by banded Cholesky in the ordering ``perm``.

    Falls back to sparse LU when the banded factorization breaks down.
    """
    try:
        return BandedCholesky(A, perm).solve(b)
    except (np.linalg.LinAlgError, MemoryError):
        return spla.splu(A.tocsc()).solve(b)


def preconditioned_cg(matvec, b, precond, rtol=1e-12, maxiter=40):
    """Conjugate gradients from zero; returns ``(x, iterations, converged)``.

    Every iterate lowers the quadratic ``x.Ax/2 - b.x``, so a truncated run
    is still a descent step.
    """
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, True
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if not pAp > 0:
            return x, it, False
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it, True
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, False


def _node_ordering(K_scalar):
    """Node rank from the cheaper of the natural and reverse Cuthill-McKee orders."""
    n = K_scalar.shape[0] // 3
    P = sp.kron(sp.identity(n, format="csr"), np.ones((1, 3)), format="csr")
    G = (P @ abs(K_scalar) @ P.T).tocsr()
    G.data[:] = 1.0
    perm = min([np.arange(n), reverse_cuthill_mckee(G, symmetric_mode=True)],
               key=lambda p: _bandwidth(G, p))
    rank = np.empty(n, dtype=np.int64)
    rank[perm] = np.arange(n)
    return rank


def _column_ordering(Z, node_rank):
    """Order reduced unknowns node by node so the band follows the mesh graph."""
    Zc = Z.tocsc()
    col_node = Zc.indices[Zc.indptr[:-1]] // 9
    return np.argsort(node_rank[col_node], kind="stable")


# -- step operator ---------------------------------------------------------------
def check_tau_epsilon(tau, epsilon, time_scale, mu0, length=1.0, factor=0.01):
    """Warn unless tau^2 <= factor * T^2 mu0 eps / l^4; returns the ratio."""
    bound = time_scale ** 2 * mu0 * epsilon / length ** 4
    ratio = tau ** 2 / bound
    if ratio > factor:
        warnings.warn(f"tau^2 = {tau ** 2:.3g} is not small against T^2 mu0 eps / l^4 = "
                      f"{bound:.3g}; plate motion is dominated by the penalty", stacklevel=2)
    return ratio


@dataclass
class StepInfo:
    functional_before: float
    functional_after: float
    constraint_residual: float
    velocity_norm: float
    degenerate_nodes: int
    functional_change: float = 0.0  # J_after - J_before without cancellation

    @property
    def relative_rise(self):
        return self.functional_change / max(1.0, abs(self.functional_before))


@dataclass(eq=False)
class PlateOperator:
    """Time-independent matrices of the plate step on one mesh."""

    mesh: QuadMesh
    mu_bar: np.ndarray
    alpha_bar: np.ndarray
    epsilon: float
    clamped_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pinned_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    method: str = "nullspace"
    cg_rtol: float = 1e-12

    def __post_init__(self):
        E = self.mesh.n_elements
        self.mu_bar = np.broadcast_to(np.asarray(self.mu_bar, dtype=float), (E,)).copy()
        self.alpha_bar = np.broadcast_to(np.asarray(self.alpha_bar, dtype=float), (E,)).copy()
        if (self.mu_bar <= 0).any():
            raise ValueError("bending coefficient must be positive")
        if not self.epsilon > 0:
            raise ValueError("penalty parameter must be positive")
        if self.method not in ("nullspace", "saddle"):
            raise ValueError(f"unknown solve method {self.method!r}")
        self.clamped_nodes = np.unique(np.asarray(self.clamped_nodes, dtype=np.int64))
        self.pinned_nodes = np.setdiff1d(np.asarray(self.pinned_nodes, dtype=np.int64),
                                         self.clamped_nodes)
        self.space = DkqSpace(self.mesh)
        I3 = sp.identity(3, format="csr")
        self.K_scalar = self.space.bending_matrix(self.mu_bar)
        self.K = sp.kron(self.K_scalar, I3, format="csr")
        self.lumped = self.space.lumped_weights()
        mvec = np.zeros((self.mesh.n_nodes, 3, 3))
        mvec[:, 0, :] = self.lumped[:, None]
        self.M_lumped = sp.diags(mvec.ravel(), format="csr")
        self.A = (self.K + self.M_lumped / self.epsilon).tocsr()
        self.coupling = self.space.laplacian_coupling(self.mu_bar * self.alpha_bar)
        self.hessian_gram = sp.kron(self.space.bending_matrix(1.0), I3, format="csr")
        self.l2_gram = sp.kron(self.space.mass_matrix(), I3, format="csr")
        self._const_weight = self.mesh.element_area / 4 * self.mu_bar * self.alpha_bar ** 2
        self._ordering = None
        self._precond = None
        self._node_rank = _node_ordering(self.K_scalar)

    # -- pieces of the functional ---------------------------------------
    def forcing(self, y_ref, theta):
        """Vector F with F . w = (mu Delta_h w . (d1 y_ref x d2 y_ref), alpha theta)_h."""
        nu = nodal_normals(y_ref)
        g = np.asarray(theta, dtype=float)[:, None] * nu
        return (self.coupling @ g).reshape(-1)

    def constant_term(self, theta):
        th = np.asarray(theta, dtype=float)[self.mesh.elements]
        return float(np.sum(self._const_weight[:, None] * th ** 2))

    def functional(self, y, y_k, s_k, theta):
        """Semi-implicit functional J[y; y^k, s^k, theta] (lumped penalty and coupling)."""
        yf = np.asarray(y).reshape(-1)
        gap = np.asarray(y)[:, 0, :] - s_k
        return (yf @ (self.K @ yf) / 12.0
                + np.sum(self.lumped[:, None] * gap ** 2) / (12.0 * self.epsilon)
                - yf @ self.forcing(y_k, theta) / 6.0
                + self.constant_term(theta) / 6.0)

    def functional_change(self, d, y_k, s_k, theta):
        """J[y^k + d] - J[y^k] expanded in d.

        y.K y cancels heavily for near rigid motions, so the plain difference
        of two J values carries roundoff of order |K| |y|^2 eps_machine.
        """
        df = np.asarray(d).reshape(-1)
        yf = np.asarray(y_k).reshape(-1)
        dv = np.asarray(d)[:, 0, :]
        gap = np.asarray(y_k)[:, 0, :] - s_k
        pen = np.sum(self.lumped[:, None] * (2.0 * gap + dv) * dv)
        return ((2.0 * df @ (self.K @ yf) + df @ (self.K @ df)) / 12.0
                + pen / (12.0 * self.epsilon) - df @ self.forcing(y_k, theta) / 6.0)

    def bending_energy(self, y, theta):
        """I[y] = 1/12 int mu |D_h^2 y|^2 - 2 alpha mu theta Delta_h y . nu + 2 mu (alpha theta)^2."""
        yf = np.asarray(y).reshape(-1)
        return (yf @ (self.K @ yf) - 2.0 * yf @ self.forcing(y, theta)
                + 2.0 * self.constant_term(theta)) / 12.0

    def stationarity_norm(self, y_next, y_prev):
        """||y' - y||_L2 + ||grad grad_h (y' - y)||_L2 of the DKQ functions."""
        d = (np.asarray(y_next) - np.asarray(y_prev)).reshape(-1)
        return float(np.sqrt(max(d @ (self.l2_gram @ d), 0.0))
                     + np.sqrt(max(d @ (self.hessian_gram @ d), 0.0)))

    # -- the step ------------------------------------------------------------
    def solve_increment(self, y_k, s_k, theta):
        """Increment d = tau v of one step; returns ``(d, degenerate node count)``."""
        yf = np.asarray(y_k).reshape(-1)
        gap = np.zeros_like(np.asarray(y_k))
        gap[:, 0, :] = np.asarray(y_k)[:, 0, :] - s_k
        b = self.forcing(y_k, theta) - self.K @ yf - self.M_lumped @ gap.reshape(-1) / self.epsilon
        if self.method == "nullspace":
            Z, degenerate = tangent_basis(y_k, self.clamped_nodes, self.pinned_nodes)
            Zt = Z.T.tocsr()
            u = self._reduced_solve(Z, Zt, Zt @ b, refresh=len(degenerate) > 0)
            d = Z @ u
            n_deg = len(degenerate)
        else:
            d, n_deg = self._saddle_solve(b, build_constraints(y_k, self.clamped_nodes))
        return d.reshape(np.shape(y_k)), n_deg

    def _reduced_solve(self, Z, Zt, rhs, refresh=False):
        """Solve (Z^T A Z) u = rhs, reusing an older factorization as preconditioner.

        The reduced matrix drifts slowly with the deformation, so a factor from
        a recent step makes conjugate gradients converge in a few iterations;
        the factor is rebuilt when it stops doing so.
        """
        pre = self._precond
        if pre is not None and pre.shape[0] == len(rhs) and not refresh:
            u, its, ok = preconditioned_cg(lambda x: Zt @ (self.A @ (Z @ x)), rhs, pre.solve,
                                           rtol=self.cg_rtol)
            if ok:
                if its > 12:
                    self._precond = None
                return u
        Ar = (Zt @ self.A @ Z).tocsr()
        if self._ordering is None or len(self._ordering) != Ar.shape[0] or refresh:
            self._ordering = _column_ordering(Z, self._node_rank)
        try:
            pre = BandedCholesky(Ar, self._ordering)
        except (np.linalg.LinAlgError, MemoryError):
            self._precond = None
            return spla.splu(Ar.tocsc()).solve(rhs)
        self._precond = None if refresh else pre
        return pre.solve(rhs)

    def _saddle_solve(self, b, B):
        n = self.A.shape[0]
        keep = np.ones(n, dtype=bool)
        fixed = np.concatenate([9 * self.clamped_nodes[:, None] + np.arange(9),
                                9 * self.pinned_nodes[:, None] + np.arange(3)], axis=None)
        keep[fixed.astype(np.int64)] = False
        idx = np.flatnonzero(keep)
        A = self.A[idx][:, idx]
        Bk = B[:, idx]
        m = Bk.shape[0]
        S = sp.bmat([[A, Bk.T], [Bk, None]], format="csc")
        rhs = np.concatenate([b[idx], np.zeros(m)])
        try:
            sol = spla.splu(S).solve(rhs)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"saddle-point solve failed ({m} constraint rows): {exc}")
        d = np.zeros(n)
        d[idx] = sol[:len(idx)]
        return d, 0


def plate_step(operator: PlateOperator, state: SplitState, theta_next, tau, obstacle,
               check_descent=True):
    """Advance (y, s) by one step; returns ``(new_state, StepInfo)``."""
    if not tau > 0:
        raise ValueError("time step must be positive")
    y_k = np.asarray(state.y)
    d, n_deg = operator.solve_increment(y_k, state.s, theta_next)
    if not np.all(np.isfinite(d)):
        raise np.linalg.LinAlgError("plate solve produced non-finite values")
    y_next = y_k + d
    v = d.reshape(-1) / tau
    resid = constraint_residual(y_k, v, operator.clamped_nodes)
    J0 = operator.functional(y_k, y_k, state.s, theta_next)
    dJ = float(operator.functional_change(d, y_k, state.s, theta_next))
    if check_descent and dJ > 1e-12 * max(1.0, abs(J0)):
        raise ArithmeticError(f"semi-implicit functional increased by {dJ!r} from {J0!r}")
    s_next = obstacle.project(y_next[:, 0, :])
    info = StepInfo(J0, J0 + dJ, resid, float(np.abs(v).max()), n_deg, dJ)
    return SplitState(y_next, s_next), info
