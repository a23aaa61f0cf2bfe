"""Semi-implicit fractional-step solver for non-hydrostatic flow in
compliant vessels, with analytic references and a verification harness."""

from .fields import FieldState, FluidParams, SolverParams, VesselCollapse, WallLaw
from .mesh import Curvature, Grid, GridCapacityError, GridSpec, build_grid
from .stepper import Drivers, PressureDriver, StepOptions, VelocityDriver, advance

__all__ = [
    "Curvature", "Drivers", "FieldState", "FluidParams", "Grid", "GridCapacityError", "GridSpec",
    "PressureDriver", "SolverParams", "StepOptions", "VelocityDriver", "VesselCollapse", "WallLaw",
    "advance", "build_grid",
]
