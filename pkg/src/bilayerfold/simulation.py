"""Outer time loop, effective parameters and the built-in scenarios.

Units throughout: mm, s, MPa, degrees Celsius.  Heat coefficients are the
ratios to the heat capacity (diffusivity in mm^2/s, transfer velocity in
mm/s); bending coefficients in MPa; expansion per unit thickness in 1/(mm C);
the penalty parameter in mm^4/MPa.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import mesh as meshmod
from .dkq import DkqSpace
from .heat import BoundaryData, RegionSource, assemble_heat_system, heat_step
from .mesh import QuadMesh, RegionSpec, build_rectangle_mesh, snap_region_mesh, tag_boundary
from .plate import (HalfSpace, NoObstacle, PlateOperator, SphereUnion, SplitState,
                    check_tau_epsilon, isometry_defect, plate_step)


class SimulationError(RuntimeError):
    """A step failed; ``step`` holds the index of the failing step."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


# -- material data -------------------------------------------------------------
@dataclass(frozen=True)
class RegionMaterial:
    mu_bar: float  # MPa
    alpha_bar: float  # 1/(mm C), signed
    diffusivity: float  # mm^2/s

    def __post_init__(self):
        if not self.mu_bar > 0:
            raise ValueError("mu_bar must be positive")
        if not self.diffusivity > 0:
            raise ValueError("diffusivity must be positive")
        if not math.isfinite(self.alpha_bar):
            raise ValueError("alpha_bar must be finite")


@dataclass(frozen=True)
class MaterialField:
    """Per-region coefficients plus the Robin transfer velocity (mm/s)."""

    regions: dict
    robin_velocity: float = 0.0

    def per_element(self, mesh: QuadMesh):
        """Arrays (mu_bar, alpha_bar, diffusivity) over the elements of ``mesh``."""
        missing = [n for n in mesh.region_names if n not in self.regions]
        if missing:
            raise ValueError(f"no material given for region(s) {missing}")
        table = np.array([[self.regions[n].mu_bar, self.regions[n].alpha_bar,
                           self.regions[n].diffusivity] for n in mesh.region_names])
        vals = table[mesh.region_tags]
        return vals[:, 0], vals[:, 1], vals[:, 2]


def effective_parameters(alpha, delta, lam, mu, kappa=None, rho_cv=None, eta=None):
    """Thin-film coefficients from layer data.

    alpha in 1/C, delta (total thickness) in mm, Lame constants in MPa,
    conductivity kappa in W/(m C), volumetric heat capacity rho_cv in
    J/(m^3 C), surface transfer coefficient eta in W/(mm^2 C).  Returns a
    dict with alpha_bar (1/(mm C)), mu_bar (MPa) and, when the heat data is
    given, diffusivity (mm^2/s) and robin_velocity (mm/s).
    """
    if not delta > 0:
        raise ValueError("thickness must be positive")
    if not 2 * mu + lam > 0:
        raise ValueError("need 2 mu + lambda > 0")
    out = {"alpha_bar": 3.0 * alpha / delta, "mu_bar": mu + lam * mu / (2 * mu + lam)}
    if kappa is not None or eta is not None:
        if rho_cv is None or not rho_cv > 0:
            raise ValueError("heat capacity needed for the heat coefficients")
        if kappa is not None:
            out["diffusivity"] = kappa / rho_cv * 1e6  # m^2/s -> mm^2/s
        if eta is not None:
            out["robin_velocity"] = eta / (rho_cv * 1e-9)  # J/(mm^3 C)
    return out


# -- configuration -----------------------------------------------------------------
Box = tuple  # ((x0, y0), (x1, y1))


@dataclass(frozen=True)
class HeatSourceSpec:
    """Rate (C/s) on elements whose centroid lies in a disc, active on [t_on, t_off)."""

    center: tuple
    radius: float
    rate: float
    t_on: float = 0.0
    t_off: float = math.inf


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    domain: Box
    refinements: int
    regions: tuple = ()  # ((name, (x0, y0), (x1, y1)), ...)
    material: MaterialField = field(default_factory=lambda: MaterialField(
        {meshmod.DEFAULT_REGION: RegionMaterial(2.0e3, 0.1, 0.1)}))
    boundary: tuple = ()  # ((tag, (x0, y0), (x1, y1)), ...), first match wins
    dirichlet_value: float = 0.0  # C
    dirichlet_ramp: float = 0.0  # s; theta_D = min(1, t/ramp) * value
    ambient: float = 0.0  # C
    sources: tuple = ()  # HeatSourceSpec
    obstacle: object = field(default_factory=NoObstacle)
    clamp_regions: tuple = ()  # regions whose nodes are fully clamped
    pin_points: tuple = ()  # vertices of the element containing each point keep their position
    tau: float = 1e-2
    epsilon: float = 4e-6
    t_max: float = 1.0
    stationary_tol: float = 1e-5
    stop_at_stationary: bool = True
    stationary_after: float = 0.0  # s; no stationarity test before this time
    time_scale: float = 10.0  # T in the tau-epsilon condition
    length_scale: float = 1.0  # l in the tau-epsilon condition
    snapshot_every: int = 0  # 0: ceil(t_max / tau / 50)
    snapshot_times: tuple = ()
    subiterations: int = 0
    solve_plate: bool = True

    def validate(self):
        errs = []
        if not self.tau > 0:
            errs.append("tau must be positive")
        if not self.epsilon > 0:
            errs.append("epsilon must be positive")
        if not self.t_max > 0:
            errs.append("t_max must be positive")
        if self.refinements < 0:
            errs.append("refinements must be nonnegative")
        for tag, *_ in self.boundary:
            if tag not in meshmod.BOUNDARY_TAGS:
                errs.append(f"unknown boundary tag {tag!r}")
        names = {r[0] for r in self.regions} or {meshmod.DEFAULT_REGION}
        for n in self.clamp_regions:
            if n not in names:
                errs.append(f"clamp region {n!r} is not a mesh region")
        for n in names - set(self.material.regions):
            errs.append(f"no material for region {n!r}")
        if errs:
            raise ValueError("; ".join(errs))
        return self

    @property
    def cadence(self):
        if self.snapshot_every > 0:
            return int(self.snapshot_every)
        return max(1, math.ceil(self.t_max / self.tau / 50 - 1e-9))


def _in_box(box, tol=1e-9):
    (x0, y0), (x1, y1) = box

    def pred(x, y):
        return (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
    return pred


def build_mesh(config: ScenarioConfig) -> QuadMesh:
    lower, upper = config.domain
    m = build_rectangle_mesh(lower, upper, config.refinements)
    m = snap_region_mesh(m, RegionSpec.from_boxes(config.regions))
    # earlier boxes take precedence, so later predicates exclude them
    mid = m.boundary_edge_midpoints
    tags = {}
    taken = np.zeros(len(mid), dtype=bool)
    for tag, lo, up in config.boundary:
        hit = _in_box((lo, up))(mid[:, 0], mid[:, 1]) & ~taken
        tags[tag] = tags.get(tag, np.zeros(len(mid), dtype=bool)) | hit
        taken |= hit
    preds = {tag: (lambda sel: lambda x, y: sel)(sel) for tag, sel in tags.items()}
    return tag_boundary(m, preds)


def clamped_and_pinned(config: ScenarioConfig, mesh: QuadMesh):
    clamped = [mesh.clamped_nodes()]
    if config.clamp_regions:
        clamped.append(mesh.nodes_of_elements(mesh.elements_in(config.clamp_regions)))
    clamped = np.unique(np.concatenate(clamped)).astype(np.int64)
    pinned = [mesh.elements[mesh.find_element(p)] for p in config.pin_points]
    pinned = np.unique(np.concatenate(pinned)).astype(np.int64) if pinned \
        else np.zeros(0, dtype=np.int64)
    return clamped, np.setdiff1d(pinned, clamped)


def boundary_data(config: ScenarioConfig, mesh: QuadMesh) -> BoundaryData:
    ramp, value = config.dirichlet_ramp, config.dirichlet_value
    if ramp > 0:
        dirichlet = lambda t: min(1.0, t / ramp) * value  # noqa: E731
    else:
        dirichlet = value
    sources = []
    c = mesh.centroids
    for src in config.sources:
        inside = np.flatnonzero(np.hypot(c[:, 0] - src.center[0], c[:, 1] - src.center[1])
                                <= src.radius)
        rate = (lambda s: lambda t: s.rate if s.t_on <= t < s.t_off else 0.0)(src)
        sources.append(RegionSource(inside, rate))
    return BoundaryData(dirichlet=dirichlet, ambient=config.ambient, sources=sources)


# -- diagnostics ---------------------------------------------------------------------
DIAGNOSTIC_COLUMNS = ("time", "energy", "functional", "defect", "penetration",
                      "stationarity", "theta_min", "theta_max")


@dataclass
class Diagnostics:
    rows: list = field(default_factory=list)

    def append(self, **values):
        if self.rows and values["time"] < self.rows[-1][0]:
            raise ValueError("diagnostics must be appended in time order")
        self.rows.append(tuple(float(values[c]) for c in DIAGNOSTIC_COLUMNS))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = DIAGNOSTIC_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])


@dataclass(frozen=True)
class Snapshot:
    step: int
    time: float
    y: np.ndarray
    s: np.ndarray
    theta: np.ndarray


@dataclass
class RunResult:
    config: ScenarioConfig
    mesh: QuadMesh
    state: SplitState
    theta: np.ndarray
    diagnostics: Diagnostics
    snapshots: list
    steps: int
    time: float
    stationary: bool
    thetas: list = field(default_factory=list)
    # worst per-step |B v|_inf / (1 + |v|_inf) and (J_after - J_before) / max(1, |J_before|)
    max_residual_ratio: float = 0.0
    max_functional_rise: float = -math.inf


_STATIONARY_CACHE: dict = {}


def check_stationary(mesh: QuadMesh, y_next, y_prev, tol=1e-5) -> bool:
    """||y' - y||_L2 + ||grad grad_h (y' - y)||_L2 <= tol."""
    return stationarity_norm(mesh, y_next, y_prev) <= tol


def stationarity_norm(mesh: QuadMesh, y_next, y_prev) -> float:
    key = id(mesh)
    if key not in _STATIONARY_CACHE or _STATIONARY_CACHE[key][0] is not mesh:
        space = DkqSpace(mesh)
        _STATIONARY_CACHE.clear()
        _STATIONARY_CACHE[key] = (mesh, space.mass_matrix(), space.bending_matrix(1.0))
    _, M, K = _STATIONARY_CACHE[key]
    # rows are scalar DOFs (3 per node), columns the three components
    d = (np.asarray(y_next) - np.asarray(y_prev)).reshape(-1, 3)
    l2 = np.einsum("ic,ic->", d, M @ d)
    h2 = np.einsum("ic,ic->", d, K @ d)
    return float(np.sqrt(max(l2, 0.0)) + np.sqrt(max(h2, 0.0)))


def run(config: ScenarioConfig, on_snapshot: Callable | None = None,
        keep_thetas=False) -> RunResult:
    """Alternate heat and plate steps from theta = 0 and the flat state."""
    config.validate()
    mesh = build_mesh(config)
    mu, alpha, kappa = config.material.per_element(mesh)
    heat = assemble_heat_system(mesh, kappa, config.material.robin_velocity)
    data = boundary_data(config, mesh)
    clamped, pinned = clamped_and_pinned(config, mesh)
    obstacle = config.obstacle
    state = SplitState.initial(mesh)
    if obstacle.penetration(state.y[:, 0, :]).max() > 0:
        raise ValueError("the undeformed plate violates the obstacle")
    check_tau_epsilon(config.tau, config.epsilon, config.time_scale, float(mu.max()),
                      config.length_scale)
    op = PlateOperator(mesh, mu, alpha, config.epsilon, clamped, pinned) \
        if config.solve_plate else None

    theta = np.zeros(mesh.n_nodes)
    diag = Diagnostics()
    snaps = []
    thetas = [theta] if keep_thetas else []
    cadence = config.cadence
    pending = sorted(config.snapshot_times)

    def snap(k, t):
        sn = Snapshot(k, t, state.y.copy(), state.s.copy(), theta.copy())
        snaps.append(sn)
        if on_snapshot is not None:
            on_snapshot(sn)

    snap(0, 0.0)
    n_steps = max(1, math.ceil(config.t_max / config.tau - 1e-9))
    t, k, stationary = 0.0, 0, False
    worst_res, worst_dJ = 0.0, -math.inf
    while k < n_steps:
        k += 1
        t = k * config.tau
        try:
            theta = heat_step(heat, theta, config.tau, data, t)
            if op is not None:
                new, info = plate_step(op, state, theta, config.tau, obstacle)
                for _ in range(config.subiterations):
                    new, info = plate_step(op, SplitState(state.y, new.s), theta,
                                           config.tau, obstacle)
                worst_res = max(worst_res, info.constraint_residual / (1.0 + info.velocity_norm))
                worst_dJ = max(worst_dJ, info.relative_rise)
                res = op.stationarity_norm(new.y, state.y)
                energy = op.bending_energy(new.y, theta)
                functional = info.functional_after
                state = new
            else:
                res = energy = functional = 0.0
        except (ArithmeticError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SimulationError(k, f"{type(exc).__name__}: {exc}") from exc
        if keep_thetas:
            thetas.append(theta)
        diag.append(time=t, energy=energy, functional=functional,
                    defect=isometry_defect(state.y),
                    penetration=float(obstacle.penetration(state.y[:, 0, :]).max()),
                    stationarity=res, theta_min=theta.min(), theta_max=theta.max())
        stationary = (op is not None and config.stop_at_stationary
                      and t >= config.stationary_after - 1e-12
                      and res <= config.stationary_tol)
        due = k % cadence == 0 or k == n_steps or stationary
        while pending and pending[0] <= t + 0.5 * config.tau:
            pending.pop(0)
            due = True
        if due:
            snap(k, t)
        if stationary:
            break
    return RunResult(config, mesh, state, theta, diag, snaps, k, t, stationary, thetas,
                     worst_res, worst_dJ)


# -- geometry helpers used by the scenario checks -----------------------------------
def node_near(mesh: QuadMesh, point):
    return int(np.argmin(np.linalg.norm(mesh.nodes - np.asarray(point, dtype=float), axis=1)))


def region_normal(mesh: QuadMesh, y, names):
    """Mean unit normal over the nodes of the named regions."""
    nodes = mesh.nodes_of_elements(mesh.elements_in(names))
    nu = np.cross(y[nodes, 1, :], y[nodes, 2, :]).mean(axis=0)
    return nu / np.linalg.norm(nu)


def fold_angle(mesh: QuadMesh, y, region_a, region_b):
    """Angle (degrees) between the mean normals of two regions."""
    na = region_normal(mesh, y, [region_a])
    nb = region_normal(mesh, y, [region_b])
    return float(np.degrees(np.arccos(np.clip(na @ nb, -1.0, 1.0))))


# -- built-in scenarios ----------------------------------------------------------------
SCENARIOS = ("switch", "dogear_a", "dogear_b", "box", "airfoil", "capsule")

# refinements used by the paper and the reduced desk-scale default
PAPER_REFINEMENTS = {"switch": 6, "dogear_a": 6, "dogear_b": 6, "box": 6, "airfoil": 6,
                     "capsule": 8}
DESK_REFINEMENTS = {"switch": 5, "dogear_a": 4, "dogear_b": 4, "box": 6, "airfoil": 6,
                    "capsule": 6}

BOX_HINGE = math.pi / 48
SWITCH_HINGE = math.pi / 40
CAPSULE_SPHERES = ((0.28, 0.28, 0.25), (0.72, 0.28, 0.25), (0.28, 0.72, 0.25),
                   (0.72, 0.72, 0.25), (0.5, 0.5, 0.5))


def _switch(r):
    b = SWITCH_HINGE
    return ScenarioConfig(
        name="switch", domain=((-1.0, -1.0), (1.0, 1.0)), refinements=r,
        regions=(("hinge", (-1.0, -1.0), (-1.0 + b, 1.0)),
                 ("plate", (-1.0 + b, -1.0), (1.0, 1.0))),
        material=MaterialField({"hinge": RegionMaterial(2.0e3, 0.1, 0.1),
                                "plate": RegionMaterial(2.0e3, 0.0, 0.1)}),
        boundary=((meshmod.DIRICHLET_CLAMPED, (-1.0, -1.0), (-1.0, 1.0)),),
        dirichlet_value=100.0, dirichlet_ramp=5.0,
        obstacle=HalfSpace(0.5), tau=3.0e-3, epsilon=4e-6, t_max=200.0,
        stationary_after=5.0, time_scale=10.0)


def _dogear(r, diffusivity, name):
    scale = diffusivity  # snapshot times are multiples of kappa/sigma
    return ScenarioConfig(
        name=name, domain=((-1.0, -1.0), (1.0, 1.0)), refinements=r,
        material=MaterialField({meshmod.DEFAULT_REGION: RegionMaterial(2.0e3, 0.1, diffusivity)},
                               robin_velocity=2.0),
        boundary=((meshmod.INSULATED_CLAMPED, (-1.0, -1.0), (-1.0, 1.0)),
                  (meshmod.ROBIN, (-1.0, -1.0), (1.0, 1.0))),
        ambient=50.0, tau=5.0e-3, epsilon=4e-6, t_max=16.0 * scale,
        stop_at_stationary=False,
        snapshot_times=tuple(s * scale for s in (1.0, 2.5, 16.0)))


def _box_layout(b=BOX_HINGE):
    """Cross net: centre plate (0,1)^2, four side plates and a lid beyond the top one."""
    s = 1.0 + b
    plates = (("center", (0.0, 0.0), (1.0, 1.0)),
              ("left", (-s, 0.0), (-b, 1.0)),
              ("right", (s, 0.0), (1.0 + s, 1.0)),
              ("bottom", (0.0, -s), (1.0, -b)),
              ("top", (0.0, s), (1.0, 1.0 + s)),
              ("lid", (0.0, 2 * s), (1.0, 1.0 + 2 * s)))
    hinges = (("hinge", (-b, 0.0), (0.0, 1.0)),
              ("hinge", (1.0, 0.0), (s, 1.0)),
              ("hinge", (0.0, -b), (1.0, 0.0)),
              ("hinge", (0.0, 1.0), (1.0, s)),
              ("hinge", (0.0, 1.0 + s), (1.0, 2 * s)))
    return plates + hinges


def _box(r):
    b = BOX_HINGE
    plate = RegionMaterial(4.0e4, 0.0, 10.0)
    mats = {n: plate for n in ("center", "left", "right", "bottom", "top", "lid")}
    mats["hinge"] = RegionMaterial(2.0e3, 0.1, 10.0)
    lo = (-1.0 - b, -1.0 - b)
    return ScenarioConfig(
        name="box", domain=(lo, (lo[0] + 8.0, lo[1] + 8.0)), refinements=r,
        regions=_box_layout(b), material=MaterialField(mats),
        sources=(HeatSourceSpec((0.5, 0.5), 0.25, 75.0, 0.0, 19.0),),
        clamp_regions=("center",), tau=0.5, epsilon=4e-6, t_max=30.0,
        stop_at_stationary=False)


AIRFOIL_SIGNS = (1.0, -1.0, -1.0, 1.0)


def _airfoil(r):
    b = BOX_HINGE
    s = 1.0 + b
    regions, mats, boundary = [], {}, []
    plate = RegionMaterial(4.0e4, 0.0, 0.1)
    for i in range(5):
        regions.append((f"plate{i}", (i * s, 0.0), (i * s + 1.0, 1.0)))
        mats[f"plate{i}"] = plate
    for i, sign in enumerate(AIRFOIL_SIGNS):
        x0, x1 = i * s + 1.0, (i + 1) * s
        regions.append((f"hinge{i}", (x0, 0.0), (x1, 1.0)))
        mats[f"hinge{i}"] = RegionMaterial(2.0e3, 0.3 * sign, 0.1)
        boundary.append((meshmod.DIRICHLET_FREE, (x0, 0.0), (x1, 0.0)))
        boundary.append((meshmod.DIRICHLET_FREE, (x0, 1.0), (x1, 1.0)))
    return ScenarioConfig(
        name="airfoil", domain=((0.0, 0.0), (8.0, 8.0)), refinements=r,
        regions=tuple(regions), material=MaterialField(mats), boundary=tuple(boundary),
        dirichlet_value=60.0, clamp_regions=("plate2",), tau=0.5, epsilon=4e-6,
        t_max=500.0, stop_at_stationary=False)


def _capsule(r):
    regions = (("center", (0.0, 0.0), (1.0, 1.0)),
               ("petal", (-1.0, 0.0), (0.0, 1.0)),
               ("petal", (1.0, 0.0), (2.0, 1.0)),
               ("petal", (0.0, -1.0), (1.0, 0.0)),
               ("petal", (0.0, 1.0), (1.0, 2.0)))
    mat = RegionMaterial(2.0e3, 0.1, 0.1)
    return ScenarioConfig(
        name="capsule", domain=((-1.0, -1.0), (3.0, 3.0)), refinements=r,
        regions=regions, material=MaterialField({"center": mat, "petal": mat},
                                                robin_velocity=2.0),
        boundary=((meshmod.ROBIN, (-1.0, -1.0), (3.0, 3.0)),), ambient=100.0,
        obstacle=SphereUnion(CAPSULE_SPHERES, 0.24), pin_points=((0.5, 0.5),),
        tau=2.5e-4, epsilon=5.0e-8, t_max=1.0, stop_at_stationary=False)


_BUILDERS = {"switch": _switch,
             "dogear_a": lambda r: _dogear(r, 0.1, "dogear_a"),
             "dogear_b": lambda r: _dogear(r, 1.0, "dogear_b"),
             "box": _box, "airfoil": _airfoil, "capsule": _capsule}


def builtin_scenario(name: str, refinements: int | None = None, paper_scale=False,
                     **overrides) -> ScenarioConfig:
    """Scenario with the paper's data; ``refinements`` defaults to the desk-scale level."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if refinements is None:
        refinements = (PAPER_REFINEMENTS if paper_scale else DESK_REFINEMENTS)[name]
    cfg = _BUILDERS[name](int(refinements))
    return replace(cfg, **overrides) if overrides else cfg


# -- the penalty sweep of the switch ---------------------------------------------------
@dataclass
class SweepRow:
    j: int
    epsilon: float
    steps: int
    time: float
    stationary: bool
    tip_height: float
    max_penetration: float
    cut: np.ndarray  # deformed positions along x2 = 0, ordered by x1
    mesh_width: float = math.nan
    max_residual_ratio: float = 0.0
    max_functional_rise: float = -math.inf


def switch_cut(mesh: QuadMesh, y):
    line = np.flatnonzero(np.isclose(mesh.nodes[:, 1], 0.0))
    line = line[np.argsort(mesh.nodes[line, 0])]
    return np.asarray(y)[line, 0, :].copy()


def sweep_epsilon(js=range(4, 10), refinements=None, progress=None, **overrides):
    """Run the switch to stationarity for eps = 4 * 10**-j; one row per j."""
    rows = []
    for j in js:
        eps = 4.0 * 10.0 ** (-j)
        cfg = builtin_scenario("switch", refinements, epsilon=eps, **overrides)
        res = run(cfg)
        cut = switch_cut(res.mesh, res.state.y)
        tip = res.state.y[node_near(res.mesh, (1.0, 0.0)), 0, 2]
        rows.append(SweepRow(j, eps, res.steps, res.time, res.stationary, float(tip),
                             float(res.diagnostics.column("penetration").max()), cut,
                             float(res.mesh.element_size.max()), res.max_residual_ratio,
                             res.max_functional_rise))
        if progress is not None:
            progress(rows[-1])
    return rows
