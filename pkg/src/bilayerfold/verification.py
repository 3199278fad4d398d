"""Reference problems with known answers: a manufactured heat solution and the
rolled-up clamped strip."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heat import verify_manufactured
from .mesh import INSULATED_CLAMPED, build_grid_mesh, tag_boundary
from .plate import NoObstacle, PlateOperator, SplitState, isometry_defect, plate_step


def heat_exact(x, y, t):
    return np.exp(-t) * np.cos(np.pi * x / 2) * np.cos(np.pi * y / 2)


def heat_source(x, y, t, diffusivity=1.0):
    # d_t u - D lap u with lap u = -(pi^2/2) u
    return (-1.0 + diffusivity * np.pi ** 2 / 2) * heat_exact(x, y, t)


def heat_space_orders(refinements=(3, 4, 5, 6)):
    """Observed L2 orders with tau = h^2 on (-1, 1)^2."""
    return verify_manufactured(refinements, heat_exact, heat_source, 1.0)


def heat_time_orders(refinement=6, steps=(4, 8, 16), t_final=0.5):
    """Observed orders under tau halving at a fixed fine mesh."""
    out = []
    for n in steps:
        tau = t_final / n
        _, errs, _ = verify_manufactured([refinement], heat_exact, heat_source, 1.0,
                                         t_final=t_final, tau_of_h=lambda h, tau=tau: tau)
        out.append(errs[0])
    errs = np.array(out)
    return errs, np.log2(errs[:-1] / errs[1:])


@dataclass
class CylinderResult:
    curvature: float
    kappa: float
    steps: int
    stationary: bool
    defect: float
    tip: np.ndarray
    tip_exact: np.ndarray
    functionals: np.ndarray
    residuals: np.ndarray
    mesh: object
    state: SplitState

    @property
    def relative_error(self):
        return abs(self.curvature - self.kappa) / self.kappa


def strip_mesh(length=2.0, width=0.25, nx=64, ny=8):
    m = build_grid_mesh((0.0, 0.0), (length, width), nx, ny)
    return tag_boundary(m, {INSULATED_CLAMPED: lambda x, y: np.isclose(x, 0.0)})


def midline_curvature(mesh, y, width):
    """Slope of the tangent angle along the line x2 = width/2 (least squares)."""
    mid = np.flatnonzero(np.isclose(mesh.nodes[:, 1], width / 2))
    mid = mid[np.argsort(mesh.nodes[mid, 0])]
    ang = np.unwrap(np.arctan2(y[mid, 1, 2], y[mid, 1, 0]))
    return float(np.polyfit(mesh.nodes[mid, 0], ang, 1)[0])


def cylinder_oracle(length=2.0, width=0.25, kappa=0.5, epsilon=3e-3, nx=64, ny=8,
                    tol=1e-5, max_steps=20000, mu_bar=1.0):
    """Clamped strip with constant preferred curvature run to stationarity.

    The isometric minimizer is the cylinder of curvature ``kappa``; the fitted
    midline curvature of the stationary discrete state is returned with the
    per-step functional values and constraint residuals.
    """
    m = strip_mesh(length, width, nx, ny)
    op = PlateOperator(m, mu_bar, 1.0, epsilon, clamped_nodes=m.clamped_nodes())
    theta = np.full(m.n_nodes, kappa)
    st = SplitState.initial(m)
    obstacle = NoObstacle()
    J, R = [], []
    stationary = False
    k = 0
    for k in range(1, max_steps + 1):
        new, info = plate_step(op, st, theta, 1.0, obstacle)
        J.append((info.functional_before, info.functional_after, info.functional_change))
        R.append((info.constraint_residual, info.velocity_norm))
        res = op.stationarity_norm(new.y, st.y)
        st = new
        if res <= tol:
            stationary = True
            break
    tip = np.flatnonzero(np.isclose(m.nodes[:, 0], length) & np.isclose(m.nodes[:, 1], width / 2))
    tip_exact = np.array([np.sin(kappa * length) / kappa, width / 2,
                          (1 - np.cos(kappa * length)) / kappa])
    return CylinderResult(midline_curvature(m, st.y, width), kappa, k, stationary,
                          isometry_defect(st.y), st.y[tip[0], 0].copy(), tip_exact,
                          np.array(J), np.array(R), m, st)
