"""One time step of the fractional-step scheme.

Stage 1 (hydrostatic): per axial face an SPD cross-section system for the
axial velocity, condensed into a tridiagonal mildly nonlinear wave equation
for the section pressure p~; then the tangential and radial velocities.

Stage 2 (non-hydrostatic): a mildly nonlinear Poisson-type system for the
cell pressure q, whose wall rows carry the slice volume, followed by the
velocity corrections and the new wall radii.

All cross-section systems are scaled so that they are symmetric:
  axial     rows times the face area a = z dz dphi
  angular   rows times z dz
  radial    rows times z_face * (distance between cell centres)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import transport
from .analytic import WomersleyCase, poiseuille_profile, womersley_profile
from .fields import FieldState, FluidParams, SolverParams, WallLaw
from .linsolve import (
    CrossSectionOperator,
    MildlyNonlinearSystem,
    NonConvergence,
    SparseOperator,
    ShiftedOperator,
    TridiagonalOperator,
    cg_solve,
    newton_mildly_nonlinear,
    perturbative_cross_section_solve,
)
from .mesh import Grid

log = logging.getLogger(__name__)

MODES = ("full", "hydrostatic", "direct", "axisymmetric")


# ---------------------------------------------------------------------------
# boundary drivers
# ---------------------------------------------------------------------------


@dataclass
class PressureDriver:
    """End pressure  value + amplitude cos(omega t + phase)."""

    value: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    kind = "pressure"

    def pressure(self, t):
        return self.value + self.amplitude * np.cos(self.omega * t + self.phase)


@dataclass
class VelocityDriver:
    """Prescribed axial profile: Poiseuille flux Q plus an optional
    Womersley component.  Profiles are stretched to the current face radius."""

    Q: float = 0.0
    womersley: WomersleyCase | None = None
    kind = "velocity"

    def profile(self, z, R, t):
        u = poiseuille_profile(self.Q, R, z)
        if self.womersley is not None:
            u = u + womersley_profile(self.womersley, np.minimum(z / R, 1.0) * self.womersley.R, t)
        return u


@dataclass
class Drivers:
    inlet: object
    outlet: object

    def __post_init__(self):
        for d in (self.inlet, self.outlet):
            if getattr(d, "kind", None) not in ("pressure", "velocity"):
                raise ValueError(f"unknown driver kind: {d!r}")


@dataclass
class BoundaryValues:
    u_in: np.ndarray | None
    p_in: float | None
    u_out: np.ndarray | None
    p_out: float | None


def apply_boundary_drivers(grid: Grid, drivers: Drivers, t):
    """Boundary values of both end faces at time t."""
    out = {}
    for name, drv, f in (("in", drivers.inlet, 0), ("out", drivers.outlet, grid.nx)):
        if drv.kind == "pressure":
            out["p_" + name] = float(drv.pressure(t))
            out["u_" + name] = None
        else:
            R = grid.Ru[f][None, :]
            u = drv.profile(grid.zc_u[f], R, t)
            out["u_" + name] = np.where(grid.active_u[f], u, 0.0)
            out["p_" + name] = None
    return BoundaryValues(**out)


# ---------------------------------------------------------------------------
# options and results
# ---------------------------------------------------------------------------


@dataclass
class StepOptions:
    mode: str = "full"
    advection: bool = False
    axial_viscosity: bool = True
    wall_model: str = "staircase"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.wall_model not in WALL_MODELS:
            raise ValueError(f"unknown wall model {self.wall_model!r}; expected one of {WALL_MODELS}")


@dataclass
class StepStats:
    step: int = 0
    t: float = 0.0
    newton_h: int = 0
    newton_q: int = 0
    cg_max: int = 0
    mass_res: float = 0.0
    inflow_volume: float = 0.0   # net volume entering through the ends

    def line(self):
        return (f"step={self.step} t={self.t:.6g} newton_h={self.newton_h} "
                f"newton_q={self.newton_q} cg_max={self.cg_max} mass_res={self.mass_res:.3e}")


@dataclass
class AxialSystem:
    op: CrossSectionOperator     # M = diag(a) + theta dt nu S
    visc: CrossSectionOperator   # S
    G: np.ndarray                # explicit right-hand side
    A_hat: np.ndarray            # face areas
    A_tilde: np.ndarray          # areas over axial distance
    fixed: np.ndarray            # (nx+1,) faces with prescribed velocity


@dataclass
class HydrostaticStageResult:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    p_tilde: np.ndarray
    R_tilde: np.ndarray
    newton_iterations: int = 0
    cg_iterations: int = 0


@dataclass
class NonHydroStageResult:
    q: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    R_new: np.ndarray
    newton_iterations: int = 0
    cg_iterations: int = 0
    mass_residual: float = 0.0
    delta: np.ndarray | None = None


# ---------------------------------------------------------------------------
# volume increments
# ---------------------------------------------------------------------------


def _slice_coeffs(grid: Grid):
    c2 = 0.5 * grid.dphi * grid.dx
    c3 = 0.0 if grid.rc is None else grid.dx * grid._dsin() / (3.0 * grid.rc)
    return c2, c3


def volume_increment(grid: Grid, R_old, dR):
    """V(R_old + dR) - V(R_old) per slice, free of cancellation."""
    c2, c3 = _slice_coeffs(grid)
    out = c2 * (2.0 * R_old + dR) * dR
    if grid.rc is not None:
        out = out + c3 * dR * (3 * R_old**2 + 3 * R_old * dR + dR**2)
    return out


def volume_derivative(grid: Grid, R):
    c2, c3 = _slice_coeffs(grid)
    out = 2.0 * c2 * R
    if grid.rc is not None:
        out = out + 3.0 * c3 * R**2
    return out


def _radius(law: WallLaw, grid: Grid, p_wall, t):
    R = grid.R0 + (p_wall - law.external(t)) / law.beta
    if np.any(R <= 0):
        from .fields import VesselCollapse
        raise VesselCollapse("vessel collapse: non-positive wall radius")
    return R


def _top(grid: Grid, a):
    """Values of a cell field in the wall-adjacent cell of every column."""
    return np.take_along_axis(a, np.expand_dims(grid.K - 1, 1), axis=1)[:, 0, :]


# ---------------------------------------------------------------------------
# cross-section operators
# ---------------------------------------------------------------------------


def _pair_overlap(zb, zt, active):
    """Overlap height and exposed heights between slice l and l+1 per layer."""
    ztn = np.roll(zt, -1, axis=2)
    an = np.roll(active, -1, axis=2)
    both = active & an
    top = np.minimum(zt, ztn)
    ov = np.where(both, np.maximum(top - zb, 0.0), 0.0)
    return ov, both


WALL_MODELS = ("staircase", "oblique")


def _obliquity(R, dphi, wall_model):
    """(1 + (R'/R)^2): wall length over normal distance relative to a
    circular wall of the same radius.  R has slices on the last axis."""
    if wall_model != "oblique" or R.shape[-1] < 3:
        return np.ones_like(R)
    slope = (np.roll(R, -1, axis=-1) - np.roll(R, 1, axis=-1)) / (2 * dphi)
    return 1.0 + (slope / R) ** 2


def axial_viscous_operator(grid: Grid, wall_model="staircase"):
    """S for the axial velocity (scaled by the face area).

    ``staircase`` puts no-slip side walls on cells that stick out above an
    angular neighbour; ``oblique`` drops them and instead tilts the column
    top to the slope of the wall.
    """
    act = grid.active_u
    zb, zt, zc = grid.zb_u, grid.zt_u, grid.zc_u
    dphi = grid.dphi
    nf = grid.nx + 1
    rad = np.zeros_like(zc)
    up = act[:, 1:, :]
    dzc = np.where(up, zc[:, 1:, :] - zc[:, :-1, :], 1.0)
    rad[:, :-1, :] = np.where(up, dphi * grid.zf[None, 1:-1, None] / dzc, 0.0)
    diag = rad.copy()
    diag[:, 1:, :] += rad[:, :-1, :]
    # wall above the top layer
    jj, ll = np.meshgrid(np.arange(nf), np.arange(grid.nphi), indexing="ij")
    ktop = grid.Ku - 1
    zct = zc[jj, ktop, ll]
    diag[jj, ktop, ll] += dphi * grid.Ru / (grid.Ru - zct) * _obliquity(grid.Ru, dphi, wall_model)
    ang = np.zeros_like(zc)
    if grid.nphi > 1:
        ov, both = _pair_overlap(zb, zt, act)
        zm = zb + 0.5 * ov
        ang = np.where(both & (ov > 0), ov / (np.where(zm > 0, zm, 1.0) * dphi), 0.0)
        diag += ang + np.roll(ang, 1, axis=2)
        if wall_model == "staircase":
            h = zt - zb
            exposed = np.where(act, 2 * h - ov - np.roll(ov, 1, axis=2), 0.0)
            diag += np.where(act, 2.0 * exposed / (np.where(act, zc, 1.0) * dphi), 0.0)
    diag = np.where(act, diag, 0.0)
    return CrossSectionOperator(diag, rad, ang)


def tangential_viscous_operator(grid: Grid):
    """S for the tangential velocity (rows scaled by z dz)."""
    act = grid.active_v
    zc = np.where(act, grid.zc_v, 1.0)
    dz = grid.zt_v - grid.zb_v
    dphi = grid.dphi
    up = act[:, 1:, :]
    zf = grid.zf[None, 1:-1, None]
    dzc = np.where(up, zc[:, 1:, :] - zc[:, :-1, :], 1.0)
    rad = np.zeros_like(zc)
    rad[:, :-1, :] = np.where(up, zc[:, :-1, :] * zc[:, 1:, :] / (zf * dzc), 0.0)
    diag = np.zeros_like(zc)
    diag[:, :-1, :] += np.where(up, zc[:, :-1, :] ** 2 / (zf * dzc), 0.0)
    diag[:, 1:, :] += np.where(up, zc[:, 1:, :] ** 2 / (zf * dzc), 0.0)
    diag[:, 0, :] += 2.0
    jj, ll = np.meshgrid(np.arange(grid.nx), np.arange(grid.nphi), indexing="ij")
    ktop = np.maximum(grid.Kv - 1, 0)
    zct = zc[jj, ktop, ll]
    Rv = grid.zt_v[jj, ktop, ll]
    Rv = np.where(grid.Kv > 0, Rv, 1.0)
    diag[jj, ktop, ll] += np.where(grid.Kv > 0, zct**2 / (Rv * np.maximum(Rv - zct, 1e-300)), 0.0)
    dzn = np.roll(dz, -1, axis=2)
    both = act & np.roll(act, -1, axis=2)
    ang = np.where(both, np.minimum(dz, dzn) / (zc * dphi**2), 0.0)
    own = np.where(act, dz / (zc * dphi**2), 0.0)
    # neighbour missing on either side: wall (v = 0) one face spacing away
    diag += ang + np.roll(ang, 1, axis=2)
    diag += np.where(act & ~np.roll(act, -1, axis=2), own, 0.0)
    diag += np.where(act & ~np.roll(act, 1, axis=2), own, 0.0)
    diag = np.where(act, diag, 0.0)
    return CrossSectionOperator(diag, rad, ang)


def radial_viscous_operator(grid: Grid):
    """S for the radial velocity on interior radial faces.

    Returns the operator and the coupling of the top interior face to the
    wall value (multiplies w_wall on the right-hand side).
    """
    act = grid.active_w
    nx, ncap, nphi = act.shape[0], act.shape[1], act.shape[2]
    zf = np.broadcast_to(grid.zf[None, :, None], act.shape)
    zc_lo = np.concatenate([np.ones((nx, 1, nphi)), np.where(grid.active, grid.zc, 1.0)], axis=1)
    dz_lo = np.concatenate([np.ones((nx, 1, nphi)), np.where(grid.active, grid.dz, 1.0)], axis=1)
    # cell k-1 lies below face k: index k in the padded arrays
    below = zf**2 / (zc_lo * dz_lo)
    cell_above_zc = np.concatenate([np.where(grid.active, grid.zc, 1.0), np.ones((nx, 1, nphi))], axis=1)
    cell_above_dz = np.concatenate([np.where(grid.active, grid.dz, 1.0), np.ones((nx, 1, nphi))], axis=1)
    above = zf**2 / (cell_above_zc * cell_above_dz)
    diag = np.where(act, below + above, 0.0)
    up = act[:, 1:, :] & act[:, :-1, :]
    rad = np.zeros(act.shape)
    rad[:, :-1, :] = np.where(up, zf[:, :-1, :] * zf[:, 1:, :] / (cell_above_zc[:, :-1, :] * cell_above_dz[:, :-1, :]), 0.0)
    # face K-1 couples to the wall node at R through the top cell
    jj, ll = np.meshgrid(np.arange(nx), np.arange(nphi), indexing="ij")
    kt = grid.K - 1
    has = kt >= 1
    wall = np.where(has, grid.zf[kt] * grid.R / (grid.zc[jj, kt, ll] * grid.dz[jj, kt, ll]), 0.0)
    ang = np.zeros(act.shape)
    if nphi > 1:
        dist = np.where(act, grid.dist_w, 0.0)
        zfs = np.where(act, zf, 1.0)
        both = act & np.roll(act, -1, axis=2)
        ang = np.where(both, np.minimum(dist, np.roll(dist, -1, axis=2)) / (zfs * grid.dphi**2), 0.0)
        own = np.where(act, dist / (zfs * grid.dphi**2), 0.0)
        diag += ang + np.roll(ang, 1, axis=2)
        diag += np.where(act & ~np.roll(act, -1, axis=2), own, 0.0)
        diag += np.where(act & ~np.roll(act, 1, axis=2), own, 0.0)
    diag = np.where(act, diag, 0.0)
    return CrossSectionOperator(diag, rad, ang), wall


def _system(mass, visc: CrossSectionOperator, c, active):
    diag = np.where(active, mass + c * visc.diag, 1.0)
    return CrossSectionOperator(diag, c * visc.rad, c * visc.ang)


def _apply_masked(op: CrossSectionOperator, x, active):
    return np.where(active, op.apply(np.where(active, x, 0.0)), 0.0)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------


def _q_difference_u(grid: Grid, q, q_in, q_out):
    """q_R - q_L across every axial face layer (ghosts at the ends)."""
    nf = grid.nx + 1
    ll = np.arange(grid.nphi)[None, None, :]
    qL = np.empty((nf, grid.ncap, grid.nphi))
    qR = np.empty_like(qL)
    jl = np.maximum(np.arange(nf) - 1, 0)[:, None, None]
    jr = np.minimum(np.arange(nf), grid.nx - 1)[:, None, None]
    qL[:] = q[jl, grid.k_left_u, ll]
    qR[:] = q[jr, grid.k_right_u, ll]
    qL[0] = q_in
    qR[-1] = q_out
    return qR - qL


def assemble_axial_system(grid: Grid, state: FieldState, uL, fluid: FluidParams,
                          params: SolverParams, bc_old: BoundaryValues, bc_new: BoundaryValues,
                          opts: StepOptions):
    """Cross-section systems M u~ = G - theta dt (p_R - p_L) A~ for every face."""
    dt, th, thq, nu = params.dt, params.theta, params.theta_prime, fluid.nu
    act = grid.active_u
    a = grid.area_u
    At = np.where(act, a / grid.dist_u, 0.0)
    S = axial_viscous_operator(grid, opts.wall_model)
    op = _system(a, S, th * dt * nu, act)
    G = a * uL
    if opts.axial_viscosity:
        G += a * dt * nu * transport.explicit_viscous_u(grid, uL)
    G -= (1.0 - th) * dt * nu * _apply_masked(S, state.u, act)
    direct = opts.mode == "direct"
    if opts.mode != "hydrostatic":
        q_in = (bc_old.p_in if direct and bc_old.p_in is not None else 0.0)
        q_out = (bc_old.p_out if direct and bc_old.p_out is not None else 0.0)
        G -= (1.0 - thq) * dt * At * _q_difference_u(grid, state.q, q_in, q_out)
    if not direct:
        p = state.p_tilde
        dp = np.empty(grid.nx + 1)
        dp[1:-1] = p[1:] - p[:-1]
        dp[0] = p[0] - (bc_old.p_in if bc_old.p_in is not None else p[0])
        dp[-1] = (bc_old.p_out if bc_old.p_out is not None else p[-1]) - p[-1]
        G -= (1.0 - th) * dt * At * dp[:, None, None]
    G = np.where(act, G, 0.0)
    fixed = np.zeros(grid.nx + 1, dtype=bool)
    for f, u_bc in ((0, bc_new.u_in), (grid.nx, bc_new.u_out)):
        if u_bc is not None:
            fixed[f] = True
            op.diag[f] = 1.0
            op.rad[f] = 0.0
            op.ang[f] = 0.0
            G[f] = u_bc
            At[f] = 0.0
    return AxialSystem(op, S, G, a, At, fixed)


def hydrostatic_pressure_solve(grid: Grid, state: FieldState, system: AxialSystem, law: WallLaw,
                               params: SolverParams, bc_new: BoundaryValues, t_new):
    """Solve the wave equation for p~; returns (p~, u~, newton its, cg its)."""
    dt, th = params.dt, params.theta
    cg_its = 0
    g, n1 = perturbative_cross_section_solve(system.op, system.G, params.cg_tol, params.cg_maxiter)
    m, n2 = perturbative_cross_section_solve(system.op, system.A_tilde, params.cg_tol, params.cg_maxiter)
    cg_its = max(n1, n2)
    act = grid.active_u
    Ah = np.where(act, system.A_hat, 0.0)
    Gf = np.sum(Ah * g, axis=(1, 2))
    hf = np.sum(Ah * m, axis=(1, 2))
    Un = np.sum(Ah * state.u, axis=(1, 2))
    c = th * th * dt * dt
    nx = grid.nx
    diag = c * (hf[:-1] + hf[1:])
    off = np.zeros(nx)
    off[:-1] = c * hf[1:-1]
    flux = th * Gf + (1 - th) * Un
    rhs = -dt * (flux[1:] - flux[:-1])
    if bc_new.p_in is not None:
        rhs[0] += c * hf[0] * bc_new.p_in
    if bc_new.p_out is not None:
        rhs[-1] += c * hf[-1] * bc_new.p_out
    T = TridiagonalOperator(diag, off)
    q_top = _top(grid, state.q)
    R_old = grid.R

    def dR(p):
        return _radius(law, grid, p[:, None] + q_top, t_new) - R_old

    def volume(p):
        return volume_increment(grid, R_old, dR(p)).sum(axis=1)

    def dvolume(p):
        return (volume_derivative(grid, R_old + dR(p)) / law.beta).sum(axis=1)

    scale = max(float(np.max(np.abs(rhs))), float(dt * np.max(np.abs(flux))), 1e-300)
    nl = MildlyNonlinearSystem(volume, dvolume, T, rhs)
    res = newton_mildly_nonlinear(nl, state.p_tilde, tol=params.newton_tol, scale=scale,
                                  maxiter=params.newton_maxiter,
                                  jacobian_solver=lambda dv, r: T.solve(r, extra_diag=dv))
    p = res.p
    pL = np.concatenate([[bc_new.p_in if bc_new.p_in is not None else p[0]], p])
    pR = np.concatenate([p, [bc_new.p_out if bc_new.p_out is not None else p[-1]]])
    u = g - th * dt * (pR - pL)[:, None, None] * m
    u = np.where(act, u, 0.0)
    return p, u, res.iterations, cg_its


def hydrostatic_velocity_solves(grid: Grid, state: FieldState, vL, wL, fluid: FluidParams,
                                params: SolverParams, opts: StepOptions, w_wall_new):
    """Tangential and radial hydrostatic velocities; returns (v~, w~, cg its)."""
    dt, th, thq, nu = params.dt, params.theta, params.theta_prime, fluid.nu
    c = th * dt * nu
    cg_its = 0
    q_on = opts.mode != "hydrostatic"
    v = np.zeros_like(state.v)
    if grid.nphi > 1:
        act = grid.active_v
        mass = np.where(act, grid.zc_v * (grid.zt_v - grid.zb_v), 0.0)
        S = tangential_viscous_operator(grid)
        H = mass * (vL + dt * nu * transport.explicit_viscous_v(grid, state.v, state.w, opts.axial_viscosity))
        H -= (1 - th) * dt * nu * _apply_masked(S, state.v, act)
        if q_on:
            dq = np.roll(state.q, -1, axis=2) - state.q
            H -= (1 - thq) * dt * mass * dq / grid.dist_v
        H = np.where(act, H, 0.0)
        v, its = perturbative_cross_section_solve(_system(mass, S, c, act), H, params.cg_tol, params.cg_maxiter)
        v = np.where(act, v, 0.0)
        cg_its = max(cg_its, its)
    act = grid.active_w
    mass = np.where(act, grid.zf[None, :, None] * grid.dist_w, 0.0)
    S, wall = radial_viscous_operator(grid)
    # the angular coupling takes the new v: lagging both couplings is
    # unstable once nu dt / z^2 is large, the sequential sweep is not
    Lh = mass * (wL + dt * nu * transport.explicit_viscous_w(grid, state.w, v, opts.axial_viscosity))
    Lh -= (1 - th) * dt * nu * _apply_masked(S, state.w, act)
    jj, ll = np.meshgrid(np.arange(grid.nx), np.arange(grid.nphi), indexing="ij")
    kt = grid.K - 1
    w_wall_old = state.w[jj, grid.K, ll]
    Lh[jj, kt, ll] += np.where(kt >= 1, dt * nu * wall * (th * w_wall_new + (1 - th) * w_wall_old), 0.0)
    if q_on:
        dq = np.zeros_like(state.w)
        dq[:, 1:-1, :] = state.q[:, 1:, :] - state.q[:, :-1, :]
        Lh -= (1 - thq) * dt * mass * dq / grid.dist_w
    Lh = np.where(act, Lh, 0.0)
    w, its = perturbative_cross_section_solve(_system(mass, S, c, act), Lh, params.cg_tol, params.cg_maxiter)
    w = np.where(act, w, 0.0)
    w[jj, grid.K, ll] = w_wall_new
    return v, w, max(cg_its, its)


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------


@dataclass
class FaceSet:
    """All faces carrying a non-hydrostatic correction, flattened."""

    left: np.ndarray      # cell index or -1 (ghost)
    right: np.ndarray
    coef: np.ndarray      # area / distance
    area: np.ndarray
    kind: np.ndarray      # 0 axial, 1 angular, 2 radial
    where: tuple          # index arrays into (u, v, w)
    ghost: np.ndarray     # ghost pressure for boundary faces

    def gradient(self, q):
        qL = np.where(self.left >= 0, q[np.maximum(self.left, 0)], self.ghost)
        qR = np.where(self.right >= 0, q[np.maximum(self.right, 0)], self.ghost)
        return qR - qL


def build_face_set(grid: Grid, bc: BoundaryValues, ghost_in=0.0, ghost_out=0.0):
    ci = grid.cell_index
    parts = []
    ll = np.arange(grid.nphi)
    # axial faces
    f, k, l = np.nonzero(grid.active_u)
    keep = ((f > 0) | (bc.p_in is not None)) & ((f < grid.nx) | (bc.p_out is not None))
    f, k, l = f[keep], k[keep], l[keep]
    left = np.where(f > 0, ci[np.maximum(f - 1, 0), grid.k_left_u[f, k, l], l], -1)
    right = np.where(f < grid.nx, ci[np.minimum(f, grid.nx - 1), grid.k_right_u[f, k, l], l], -1)
    ghost = np.where(f == 0, ghost_in, np.where(f == grid.nx, ghost_out, 0.0))
    parts.append((left, right, grid.area_u[f, k, l] / grid.dist_u[f, k, l], grid.area_u[f, k, l],
                  np.zeros(f.size, int), (f, k, l), ghost))
    # angular faces
    j, k, l = np.nonzero(grid.active_v)
    parts.append((ci[j, k, l], ci[j, k, (l + 1) % grid.nphi], grid.area_v[j, k, l] / grid.dist_v[j, k, l],
                  grid.area_v[j, k, l], np.ones(j.size, int), (j, k, l), np.zeros(j.size)))
    # radial faces
    j, k, l = np.nonzero(grid.active_w)
    parts.append((ci[j, k - 1, l], ci[j, k, l], grid.area_w[j, k, l] / grid.dist_w[j, k, l],
                  grid.area_w[j, k, l], np.full(j.size, 2), (j, k, l), np.zeros(j.size)))
    cat = [np.concatenate([p[i] for p in parts]) for i in (0, 1, 2, 3, 4, 6)]
    where = tuple(p[5] for p in parts)
    return FaceSet(cat[0], cat[1], cat[2], cat[3], cat[4], where, cat[5])


def _laplacian(fs: FaceSet, n):
    inner = (fs.left >= 0) & (fs.right >= 0)
    rows = [fs.left[inner], fs.right[inner], fs.left[inner], fs.right[inner]]
    cols = [fs.left[inner], fs.right[inner], fs.right[inner], fs.left[inner]]
    c = fs.coef[inner]
    data = [c, c, -c, -c]
    bl = (fs.left < 0) & (fs.right >= 0)
    br = (fs.right < 0) & (fs.left >= 0)
    rows += [fs.right[bl], fs.left[br]]
    cols += [fs.right[bl], fs.left[br]]
    data += [fs.coef[bl], fs.coef[br]]
    L = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return L.tocsr()


def _face_values(fs: FaceSet, u, v, w):
    return np.concatenate([u[fs.where[0]], v[fs.where[1]], w[fs.where[2]]])


def _divergence(fs: FaceSet, flux, n):
    """Net outflow of each cell for face fluxes oriented left -> right."""
    out = np.zeros(n)
    ok = fs.left >= 0
    np.add.at(out, fs.left[ok], flux[ok])
    ok = fs.right >= 0
    np.add.at(out, fs.right[ok], -flux[ok])
    return out


def _column_xphi_divergence(grid: Grid, u, v, fixed_faces=None):
    """Net axial + angular outflow of every (j, l) column."""
    au = np.where(grid.active_u, grid.area_u * u, 0.0).sum(axis=1)
    div = au[1:] - au[:-1]
    if grid.nphi > 1:
        bv = np.where(grid.active_v, grid.area_v * v, 0.0).sum(axis=1)
        div = div + bv - np.roll(bv, 1, axis=1)
    return div


def nonhydrostatic_solve(grid: Grid, state: FieldState, hydro: HydrostaticStageResult, law: WallLaw,
                         params: SolverParams, bc_new: BoundaryValues, t_new, direct=False):
    dt, thq = params.dt, params.theta_prime
    n = grid.ncells
    gin = bc_new.p_in if (direct and bc_new.p_in is not None) else 0.0
    gout = bc_new.p_out if (direct and bc_new.p_out is not None) else 0.0
    fs = build_face_set(grid, bc_new, gin, gout)
    L = _laplacian(fs, n)
    T = SparseOperator(thq * dt * L)
    # right-hand side: divergence of the hydrostatic velocities
    flux_t = fs.area * _face_values(fs, hydro.u, hydro.v, hydro.w)
    div = _divergence(fs, flux_t, n)
    # prescribed-velocity ends add their flux to the adjacent cells
    ll = np.arange(grid.nphi)
    for f, sign, jcell, kmap in ((0, -1.0, 0, grid.k_right_u), (grid.nx, 1.0, grid.nx - 1, grid.k_left_u)):
        if (f == 0 and bc_new.u_in is not None) or (f == grid.nx and bc_new.u_out is not None):
            k, l = np.nonzero(grid.active_u[f])
            cells = grid.cell_index[jcell, kmap[f, k, l], l]
            np.add.at(div, cells, sign * grid.area_u[f, k, l] * hydro.u[f, k, l])
    rhs = -div
    bnd = (fs.left < 0) | (fs.right < 0)
    cell_b = np.where(fs.left[bnd] >= 0, fs.left[bnd], fs.right[bnd])
    np.add.at(rhs, cell_b, thq * dt * fs.coef[bnd] * fs.ghost[bnd])
    top = grid.top_index()
    delta = -(1 - thq) * dt * _column_xphi_divergence(grid, state.u, state.v)
    rhs[top.ravel()] += (delta / (thq * dt)).ravel()
    p_t = np.zeros(grid.nx) if direct else hydro.p_tilde
    R_old = grid.R
    top_flat = top.ravel()

    def dR(qt):
        return _radius(law, grid, p_t[:, None] + qt.reshape(grid.R.shape), t_new) - R_old

    def volume(q):
        out = np.zeros(n)
        out[top_flat] = (volume_increment(grid, R_old, dR(q[top_flat])) / (thq * dt)).ravel()
        return out

    def dvolume(q):
        out = np.zeros(n)
        R = R_old + dR(q[top_flat])
        out[top_flat] = (volume_derivative(grid, R) / (law.beta * thq * dt)).ravel()
        return out

    scale_vec = np.zeros(n)
    np.add.at(scale_vec, np.where(fs.left >= 0, fs.left, 0), np.where(fs.left >= 0, np.abs(flux_t), 0.0))
    np.add.at(scale_vec, np.where(fs.right >= 0, fs.right, 0), np.where(fs.right >= 0, np.abs(flux_t), 0.0))
    scale = max(float(np.max(np.abs(rhs))), float(np.max(scale_vec)), 1e-300)
    stats = {"cg": 0}
    # inexact Newton: the linear residual only has to drop below a tenth of
    # the Newton limit, which bounds its max norm as well
    floor = 0.1 * params.newton_tol * scale / params.cg_tol

    def jac_solve(dv, r):
        out = cg_solve(ShiftedOperator(T, dv), r, tol=params.cg_tol, maxiter=params.cg_maxiter,
                       ref_norm=max(float(np.linalg.norm(r)), floor, 1e-300))
        stats["cg"] = max(stats["cg"], out.iterations)
        return out.x

    q0 = state.q[grid.active]
    nl = MildlyNonlinearSystem(volume, dvolume, T, rhs)
    res = newton_mildly_nonlinear(nl, q0, tol=params.newton_tol, scale=scale,
                                  maxiter=params.newton_maxiter, jacobian_solver=jac_solve)
    qf = res.p
    grad = fs.gradient(qf) / np.where(fs.coef > 0, fs.area / fs.coef, 1.0)
    corr = thq * dt * grad
    u, v, w = hydro.u.copy(), hydro.v.copy(), hydro.w.copy()
    nu_ = len(fs.where[0][0])
    nv_ = len(fs.where[1][0])
    u[fs.where[0]] -= corr[:nu_]
    v[fs.where[1]] -= corr[nu_:nu_ + nv_]
    w[fs.where[2]] -= corr[nu_ + nv_:]
    q = np.zeros_like(state.q)
    q[grid.active] = qf
    R_new = R_old + dR(qf[top_flat])
    jj, ll2 = np.meshgrid(np.arange(grid.nx), np.arange(grid.nphi), indexing="ij")
    w[jj, grid.K, ll2] = (R_new - R_old) / dt
    # per-cell residual of the discrete continuity (volume change in wall cells)
    flux_n = fs.area * _face_values(fs, u, v, w)
    res_c = _divergence(fs, flux_n, n)
    for f, sign, jcell, kmap in ((0, -1.0, 0, grid.k_right_u), (grid.nx, 1.0, grid.nx - 1, grid.k_left_u)):
        if (f == 0 and bc_new.u_in is not None) or (f == grid.nx and bc_new.u_out is not None):
            k, l = np.nonzero(grid.active_u[f])
            cells = grid.cell_index[jcell, kmap[f, k, l], l]
            np.add.at(res_c, cells, sign * grid.area_u[f, k, l] * u[f, k, l])
    dV = volume_increment(grid, R_old, R_new - R_old)
    res_c[top_flat] += ((dV - delta) / (thq * dt)).ravel()
    mass_res = float(np.max(np.abs(res_c))) / scale if n else 0.0
    return NonHydroStageResult(q, u, v, w, R_new, res.iterations, stats["cg"], mass_res, delta)


# ---------------------------------------------------------------------------
# wall motion and the full step
# ---------------------------------------------------------------------------


def _resize(arr, K_old, K_new):
    """Extend columns upwards by copying the old top value; clear above K_new."""
    k = np.arange(arr.shape[1])[None, :, None]
    Ko = np.expand_dims(np.maximum(K_old, 1), 1)
    Kn = np.expand_dims(K_new, 1)
    topv = np.take_along_axis(arr, Ko - 1, axis=1)
    out = np.where((k >= Ko) & (k < Kn), topv, arr)
    return np.where(k < Kn, out, 0.0)


def _end_radius(grid: Grid, law: WallLaw, bc: BoundaryValues, t):
    ends = []
    for p, j in ((bc.p_in, 0), (bc.p_out, grid.nx - 1)):
        if p is None:
            ends.append(None)
        else:
            ends.append(grid.R0[j] + (p - law.external(t)) / law.beta)
    return tuple(ends)


def update_grid(grid: Grid, state: FieldState, R_new, law: WallLaw, bc: BoundaryValues, t):
    """Move the wall and carry the fields over to the new column layout."""
    ends = _end_radius(grid, law, bc, t)
    new = grid.with_radius(R_new, ends)
    if (np.array_equal(new.K, grid.K) and np.array_equal(new.Ku, grid.Ku)
            and np.array_equal(new.Kv, grid.Kv)):
        return new, state
    st = state.copy()
    st.u = _resize(state.u, grid.Ku, new.Ku)
    st.v = _resize(state.v, grid.Kv, new.Kv)
    jj, ll = np.meshgrid(np.arange(grid.nx), np.arange(grid.nphi), indexing="ij")
    # the wall pressure p~ + q_top stays continuous across a ring change
    q_top = state.q[jj, grid.K - 1, ll]
    st.q = _resize(state.q, grid.K, new.K)
    st.q[jj, new.K - 1, ll] = q_top
    w_wall = state.w[jj, grid.K, ll]
    k = np.arange(grid.ncap + 1)[None, :, None]
    Ko, Kn = grid.K[:, None, :], new.K[:, None, :]
    w = np.where((k >= Ko) & (k < Kn), w_wall[:, None, :], state.w)
    w = np.where((k >= 1) & (k < Kn), w, 0.0)
    w[jj, new.K, ll] = w_wall
    st.w = w
    return new, st


def _end_inflow(grid: Grid, u):
    a = np.where(grid.active_u, grid.area_u * u, 0.0)
    return float(a[0].sum() - a[-1].sum())


def initial_radius(grid: Grid, state: FieldState, law: WallLaw, t=0.0):
    return _radius(law, grid, state.p_tilde[:, None] + _top(grid, state.q), t)


def advance(grid: Grid, state: FieldState, fluid: FluidParams, law: WallLaw, params: SolverParams,
            drivers: Drivers, opts: StepOptions, step=0):
    """Advance one time step; returns (grid, state, stats)."""
    dt = params.dt
    t_old, t_new = state.t, state.t + dt
    mode = opts.mode
    if mode == "axisymmetric" and grid.nphi != 1:
        raise ValueError("axisymmetric mode needs nphi = 1")
    if opts.axial_viscosity and step == 0 and fluid.nu * dt / grid.dx**2 > 0.5:
        log.warning("explicit axial viscosity beyond its stability limit (nu dt / dx^2 = %.3g)",
                    fluid.nu * dt / grid.dx**2)
    bc_old = apply_boundary_drivers(grid, drivers, t_old)
    bc_new = apply_boundary_drivers(grid, drivers, t_new)
    uL, vL, wL = transport.foot_values(grid, state, dt, opts.advection)
    system = assemble_axial_system(grid, state, uL, fluid, params, bc_old, bc_new, opts)
    direct = mode == "direct"
    stats = StepStats(step=step, t=t_new)
    if direct:
        g, its = perturbative_cross_section_solve(system.op, system.G, params.cg_tol, params.cg_maxiter)
        u_t = np.where(grid.active_u, g, 0.0)
        p_t = np.zeros(grid.nx)
        R_t = grid.R
        newton_h = 0
    else:
        p_t, u_t, newton_h, its = hydrostatic_pressure_solve(grid, state, system, law, params, bc_new, t_new)
        R_t = _radius(law, grid, p_t[:, None] + _top(grid, state.q), t_new)
    stats.newton_h = newton_h
    stats.cg_max = its
    w_wall = (R_t - grid.R) / dt
    v_t, w_t, its = hydrostatic_velocity_solves(grid, state, vL, wL, fluid, params, opts, w_wall)
    stats.cg_max = max(stats.cg_max, its)
    hydro = HydrostaticStageResult(u_t, v_t, w_t, p_t, R_t, newton_h, stats.cg_max)
    new = state.copy()
    new.t = t_new
    if mode == "hydrostatic":
        new.u, new.v, new.w, new.p_tilde = u_t, v_t, w_t, p_t
        new.q = np.zeros_like(state.q)
        R_new = R_t
    else:
        nh = nonhydrostatic_solve(grid, state, hydro, law, params, bc_new, t_new, direct=direct)
        new.u, new.v, new.w, new.q, new.p_tilde = nh.u, nh.v, nh.w, nh.q, p_t
        R_new = nh.R_new
        stats.newton_q = nh.newton_iterations
        stats.cg_max = max(stats.cg_max, nh.cg_iterations)
        stats.mass_res = nh.mass_residual
    for f, u_bc in ((0, bc_new.u_in), (grid.nx, bc_new.u_out)):
        if u_bc is not None:
            new.u[f] = u_bc
    thq = params.theta if mode == "hydrostatic" else params.theta_prime
    stats.inflow_volume = dt * (thq * _end_inflow(grid, new.u) + (1 - thq) * _end_inflow(grid, state.u))
    new.info = {"stats": stats}
    grid2, new = update_grid(grid, new, R_new, law, bc_new, t_new)
    return grid2, new, stats
