"""Flow state, wall law and the hydrostatic / non-hydrostatic pressure split.

All pressures are density-normalised (p / rho, units m^2/s^2) and the
rigidity ``beta`` is stored in the matching normalisation (m/s^2 per m).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class VesselCollapse(ValueError):
    """Wall pressure fell so low that the radius became non-positive."""


@dataclass
class FluidParams:
    nu: float
    rho: float = 1000.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("kinematic viscosity must be positive")
        if not self.rho > 0:
            raise ValueError("density must be positive")


@dataclass
class WallLaw:
    """Laplace wall law  p_wall = p_ext + beta (R - R0).

    ``beta`` and ``R0`` are scalars or arrays broadcastable to the wall
    pressure array (axial segment x angular slice).  ``p_ext`` is a scalar
    or a callable of time.
    """

    beta: object
    p_ext: object = 0.0
    R0: object = None

    def __post_init__(self):
        if np.any(np.asarray(self.beta) <= 0):
            raise ValueError("rigidity beta must be positive")
        if self.R0 is not None and np.any(np.asarray(self.R0) <= 0):
            raise ValueError("equilibrium radius must be positive")

    def external(self, t=0.0):
        return self.p_ext(t) if callable(self.p_ext) else self.p_ext

    @classmethod
    def from_physical(cls, beta_pa_per_m, rho, p_ext_pa=0.0, R0=None):
        """Build from a rigidity in Pa/m and a physical external pressure."""
        return cls(beta=np.asarray(beta_pa_per_m) / rho, p_ext=p_ext_pa / rho, R0=R0)


@dataclass
class SolverParams:
    dt: float
    theta: float = 1.0
    theta_prime: float = 1.0
    cg_tol: float = 1e-12
    newton_tol: float = 1e-10
    cg_maxiter: int = 20000
    newton_maxiter: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        for name in ("theta", "theta_prime"):
            val = getattr(self, name)
            if not 0.5 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [1/2, 1]")


@dataclass
class FieldState:
    """Staggered velocities and split pressure.

    Shapes (``ncap`` radial capacity of the grid):
      u  (nx+1, ncap, nphi)  axial faces
      v  (nx, ncap, nphi)    angular faces, index l is face l+1/2
      w  (nx, ncap+1, nphi)  radial faces, index k is the face at zf[k]
      p_tilde (nx,)          hydrostatic pressure per axial segment
      q  (nx, ncap, nphi)    non-hydrostatic pressure per cell
    """

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    p_tilde: np.ndarray
    q: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, nx, ncap, nphi, t=0.0):
        return cls(
            u=np.zeros((nx + 1, ncap, nphi)),
            v=np.zeros((nx, ncap, nphi)),
            w=np.zeros((nx, ncap + 1, nphi)),
            p_tilde=np.zeros(nx),
            q=np.zeros((nx, ncap, nphi)),
            t=t,
        )

    def copy(self):
        return FieldState(self.u.copy(), self.v.copy(), self.w.copy(),
                          self.p_tilde.copy(), self.q.copy(), self.t, dict(self.info))


def radius_from_pressure(law: WallLaw, p_wall, R0=None, t=0.0):
    """Invert the wall law; raises :class:`VesselCollapse` if R <= 0."""
    r0 = law.R0 if R0 is None else R0
    R = r0 + (np.asarray(p_wall) - law.external(t)) / law.beta
    if np.any(R <= 0):
        raise VesselCollapse("vessel collapse: non-positive wall radius")
    return R


def pressure_from_radius(law: WallLaw, R, R0=None, t=0.0):
    r0 = law.R0 if R0 is None else R0
    return law.external(t) + law.beta * (np.asarray(R) - r0)


def beta_from_materials(h0, E, poisson, R0):
    """Rigidity from wall thickness, Young modulus and Poisson ratio."""
    if not 0 <= poisson < 1:
        raise ValueError("Poisson ratio must lie in [0, 1)")
    if h0 <= 0 or E <= 0 or np.any(np.asarray(R0) <= 0):
        raise ValueError("h0, E and R0 must be positive")
    return h0 * E / ((1.0 - poisson**2) * np.asarray(R0) ** 2)


def wall_normal_velocity_bc(law: WallLaw, p_wall_old, p_wall_new, dt):
    """Radial wall velocity implied by a change of wall pressure over dt."""
    return (np.asarray(p_wall_new) - np.asarray(p_wall_old)) / (law.beta * dt)


def compose_pressure(state: FieldState):
    """Total pressure per cell, p = p_tilde + q."""
    return state.p_tilde[:, None, None] + state.q


def split_pressure(p, p_tilde):
    """Inverse of :func:`compose_pressure` for a given hydrostatic part."""
    return np.asarray(p) - np.asarray(p_tilde)[:, None, None]
