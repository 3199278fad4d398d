"""Finite element simulation of thermally actuated bilayer plates.

A Q1 backward Euler heat solve drives a discrete Kirchhoff (DKQ) bending
model with a linearized isometry constraint and an obstacle handled by a
penalty splitting.
"""
from .mesh import (BOUNDARY_TAGS, QuadMesh, RegionSpec, build_grid_mesh, build_rectangle_mesh,
                   snap_region_mesh, tag_boundary)
from .dkq import DkqSpace
from .heat import BoundaryData, assemble_heat_system, heat_step
from .plate import (HalfSpace, NoObstacle, PlateOperator, SphereUnion, SplitState,
                    isometry_defect, plate_step)
from .simulation import (MaterialField, RegionMaterial, ScenarioConfig, SimulationError,
                         builtin_scenario, check_stationary, effective_parameters, run,
                         sweep_epsilon)
from .io import ConfigError, parse_config, serialize_config, write_diagnostics, write_snapshot

__version__ = "0.1.0"
