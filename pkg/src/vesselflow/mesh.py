"""Staggered cylindrical / toroidal grid with a moving, wall-following top ring.

Radial ring faces ``zf`` are fixed in time.  Each (axial segment, angular
slice) column holds ``K`` active cells; the outermost one is a cut cell whose
outer face sits exactly on the current wall radius.  Axial faces use the
mean radius of the two adjacent columns, angular faces the smaller one.

Index conventions (0-based):
  cells          (j, k, l)   j < nx, k < K[j,l], l < nphi
  axial faces    (f, k, l)   f = 0..nx, face f sits between cells f-1 and f
  angular faces  (j, k, l)   between slices l and l+1 (periodic)
  radial faces   (j, k, l)   at zf[k]; k = 0 is the axis, k = K is the wall
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import VesselCollapse, WallLaw, radius_from_pressure


class GridCapacityError(ValueError):
    """Wall moved beyond the outermost allocated radial ring."""


@dataclass(frozen=True)
class Curvature:
    radius: float
    angle: float

    def __post_init__(self):
        if self.radius <= 0 or self.angle <= 0:
            raise ValueError("curvature radius and angle must be positive")


@dataclass
class GridSpec:
    nx: int
    nz: int
    nphi: int
    length: float = 1.0
    equilibrium_radius: object = 0.025
    curvature: Curvature | None = None
    radial_ratio: float = 1.0
    capacity: float = 0.5
    merge_fraction: float = 0.5

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1 or self.nphi < 1:
            raise ValueError("nx, nz and nphi must be >= 1")
        if self.curvature is None and not self.length > 0:
            raise ValueError("length must be positive")
        if not self.radial_ratio > 0:
            raise ValueError("radial_ratio must be positive")

    @property
    def axis_length(self):
        if self.curvature is not None:
            return self.curvature.radius * self.curvature.angle
        return self.length

    @property
    def dphi(self):
        return 2.0 * np.pi / self.nphi

    def r0(self, x, phi):
        f = self.equilibrium_radius
        if callable(f):
            return np.asarray(f(x, phi), dtype=float)
        return np.full(np.broadcast_shapes(np.shape(x), np.shape(phi)), float(f))


def radial_faces(r_ref, nz, ratio=1.0, capacity=0.5):
    """Ring face positions: ``nz`` rings over [0, r_ref] plus spare rings."""
    if ratio == 1.0:
        dz = np.full(nz, r_ref / nz)
    else:
        dz0 = r_ref * (1.0 - ratio) / (1.0 - ratio**nz)
        dz = dz0 * ratio ** np.arange(nz)
    extra = max(2, int(np.ceil(capacity * nz)))
    dz = np.concatenate([dz, np.full(extra, dz[-1])])
    zf = np.concatenate([[0.0], np.cumsum(dz)])
    zf[nz] = r_ref
    return zf


def _columns(R, zf, merge):
    """Cut-cell layering of columns with outer radius R (any shape)."""
    ncap = zf.size - 1
    K = np.searchsorted(zf, R, side="left")
    if np.any(K > ncap):
        raise GridCapacityError("wall radius beyond allocated radial rings")
    K = np.maximum(K, 1)
    width = zf[K] - zf[K - 1]
    thin = (R - zf[K - 1] < merge * width) & (K > 1)
    K = np.where(thin, K - 1, K)
    k = np.arange(ncap)
    shape = R.shape[:-1] + (ncap,) + R.shape[-1:]
    kk = k.reshape((1,) * (R.ndim - 1) + (ncap, 1))
    Kb = np.expand_dims(K, -2)
    active = kk < Kb
    zb = np.where(active, np.broadcast_to(zf[:-1].reshape(kk.shape), shape), 0.0)
    zt_full = np.broadcast_to(zf[1:].reshape(kk.shape), shape)
    zt = np.where(kk == Kb - 1, np.expand_dims(R, -2), zt_full)
    zt = np.where(active, zt, 0.0)
    return K, zb, zt, active


class Grid:
    """Geometry of the grid for one wall configuration (treated as immutable)."""

    def __init__(self, spec: GridSpec, zf, R0, R, end_radius=(None, None)):
        self.spec = spec
        self.nx, self.nphi = spec.nx, spec.nphi
        self.zf = zf
        self.ncap = zf.size - 1
        self.dphi = spec.dphi
        self.dx = spec.axis_length / spec.nx
        self.rc = spec.curvature.radius if spec.curvature is not None else None
        self.x_c = (np.arange(self.nx) + 0.5) * self.dx
        self.x_f = np.arange(self.nx + 1) * self.dx
        self.phi_c = np.arange(self.nphi) * self.dphi
        self.phi_f = self.phi_c + 0.5 * self.dphi
        self.R0 = np.asarray(R0, dtype=float)
        self.R = np.asarray(R, dtype=float)
        if np.any(self.R <= 0):
            raise VesselCollapse("vessel collapse: non-positive wall radius")
        self.end_radius = end_radius
        self._build()

    # -- geometry ----------------------------------------------------------
    def metric(self, z, phi):
        """Ratio of local to axis arc length (1 for a straight tube)."""
        if self.rc is None:
            return np.ones(np.broadcast_shapes(np.shape(z), np.shape(phi)))
        return 1.0 + z * np.cos(phi) / self.rc

    def _dsin(self):
        return np.sin(self.phi_c + 0.5 * self.dphi) - np.sin(self.phi_c - 0.5 * self.dphi)

    def _sector_volume(self, zb, zt):
        """Exact volume of annular sectors [zb, zt] x slice x axial segment."""
        vol = 0.5 * (zt**2 - zb**2) * self.dphi
        if self.rc is not None:
            vol = vol + (zt**3 - zb**3) / (3.0 * self.rc) * self._dsin()
        return self.dx * vol

    def slice_volume_from_radius(self, R):
        """Volume of each (segment, slice) column for wall radius R."""
        return self._sector_volume(0.0, np.asarray(R))

    def slice_volume_derivative(self, R):
        R = np.asarray(R)
        dv = R * self.dphi
        if self.rc is not None:
            dv = dv + R**2 / self.rc * self._dsin()
        return self.dx * dv

    def _face_radius(self):
        R = self.R
        Ru = np.empty((self.nx + 1, self.nphi))
        Ru[1:-1] = 0.5 * (R[1:] + R[:-1])
        r_in, r_out = self.end_radius
        if r_in is not None:
            Ru[0] = r_in
        elif self.nx > 1:
            Ru[0] = np.maximum(1.5 * R[0] - 0.5 * R[1], 0.5 * R[0])
        else:
            Ru[0] = R[0]
        if r_out is not None:
            Ru[-1] = r_out
        elif self.nx > 1:
            Ru[-1] = np.maximum(1.5 * R[-1] - 0.5 * R[-2], 0.5 * R[-1])
        else:
            Ru[-1] = R[-1]
        return Ru

    def _build(self):
        merge = self.spec.merge_fraction
        nx, nphi = self.nx, self.nphi
        # cells
        self.K, self.zb, self.zt, self.active = _columns(self.R, self.zf, merge)
        self.zc = 0.5 * (self.zb + self.zt)
        self.dz = self.zt - self.zb
        self.volume = np.where(self.active, self._sector_volume(self.zb, self.zt), 0.0)
        # axial faces
        self.Ru = self._face_radius()
        self.Ku, zb_u, self.zt_u, self.active_u = _columns(self.Ru, self.zf, merge)
        self.zb_u = zb_u
        self.zc_u = 0.5 * (zb_u + self.zt_u)
        self.dz_u = self.zt_u - zb_u
        self.area_u = np.where(self.active_u, 0.5 * (self.zt_u**2 - zb_u**2) * self.dphi, 0.0)
        h_u = self.metric(self.zc_u, self.phi_c)
        dist = self.dx * h_u
        dist[0] *= 0.5
        dist[-1] *= 0.5
        self.dist_u = dist
        k = np.arange(self.ncap)[None, :, None]
        Kl = np.concatenate([self.K[:1], self.K], axis=0)[:, None, :]
        Kr = np.concatenate([self.K, self.K[-1:]], axis=0)[:, None, :]
        self.k_left_u = np.minimum(k, Kl - 1)
        self.k_right_u = np.minimum(k, Kr - 1)
        # angular faces
        if nphi > 1:
            Kn = np.roll(self.K, -1, axis=1)
            self.Kv = np.minimum(self.K, Kn)
            self.active_v = k < self.Kv[:, None, :]
            zt_v = np.minimum(self.zt, np.roll(self.zt, -1, axis=2))
            self.zt_v = np.where(self.active_v, zt_v, 0.0)
            self.zb_v = np.where(self.active_v, self.zb, 0.0)
            self.zc_v = 0.5 * (self.zt_v + self.zb_v)
            area = self.zt_v - self.zb_v
            if self.rc is not None:
                area = area + (self.zt_v**2 - self.zb_v**2) * np.cos(self.phi_f) / (2 * self.rc)
            self.area_v = np.where(self.active_v, self.dx * area, 0.0)
            self.dist_v = np.where(self.active_v, self.zc_v * self.dphi, 1.0)
        else:
            self.Kv = np.zeros_like(self.K)
            self.active_v = np.zeros((nx, self.ncap, nphi), dtype=bool)
            self.zt_v = self.zb_v = self.zc_v = np.zeros((nx, self.ncap, nphi))
            self.area_v = np.zeros((nx, self.ncap, nphi))
            self.dist_v = np.ones((nx, self.ncap, nphi))
        # radial faces (interior ones carry unknowns)
        kw = np.arange(self.ncap + 1)[None, :, None]
        self.active_w = (kw >= 1) & (kw < self.K[:, None, :])
        zfw = np.broadcast_to(self.zf[None, :, None], (nx, self.ncap + 1, nphi))
        area = zfw * self.dphi
        if self.rc is not None:
            area = area + zfw**2 * self._dsin() / self.rc
        self.area_w = np.where(self.active_w, self.dx * area, 0.0)
        zc_lo = np.concatenate([np.zeros((nx, 1, nphi)), self.zc], axis=1)
        zc_hi = np.concatenate([self.zc, np.zeros((nx, 1, nphi))], axis=1)
        self.dist_w = np.where(self.active_w, zc_hi - zc_lo, 1.0)
        # flat cell numbering
        self.cell_index = np.full(self.active.shape, -1, dtype=np.int64)
        self.ncells = int(self.active.sum())
        self.cell_index[self.active] = np.arange(self.ncells)
        top = np.zeros_like(self.active)
        jj, ll = np.meshgrid(np.arange(nx), np.arange(nphi), indexing="ij")
        top[jj, self.K - 1, ll] = True
        self.top = top

    # -- derived quantities ----------------------------------------------
    def with_radius(self, R, end_radius=None):
        ends = self.end_radius if end_radius is None else end_radius
        return Grid(self.spec, self.zf, self.R0, R, ends)

    def top_index(self):
        """Flat indices of the wall-adjacent cell of every column."""
        jj, ll = np.meshgrid(np.arange(self.nx), np.arange(self.nphi), indexing="ij")
        return self.cell_index[jj, self.K - 1, ll]

    def total_volume(self):
        return float(self.volume.sum())


def build_grid(spec: GridSpec) -> Grid:
    x_c = (np.arange(spec.nx) + 0.5) * spec.axis_length / spec.nx
    phi_c = np.arange(spec.nphi) * spec.dphi
    R0 = spec.r0(x_c[:, None], phi_c[None, :]) * np.ones((spec.nx, spec.nphi))
    if np.any(R0 <= 0):
        raise ValueError("equilibrium radius must be positive")
    if spec.curvature is not None and R0.max() / spec.curvature.radius >= 1.0:
        raise ValueError("curved grid self-intersects: R0/Rc >= 1")
    zf = radial_faces(float(R0.max()), spec.nz, spec.radial_ratio, spec.capacity)
    return Grid(spec, zf, R0, R0.copy())


def cell_volumes(grid: Grid):
    return grid.volume


def slice_volume(grid: Grid, law: WallLaw, p_wall, t=0.0):
    """Per-slice volume V_{j,l} for wall pressures of shape (nx, nphi)."""
    R = radius_from_pressure(law, p_wall, grid.R0, t)
    return grid.slice_volume_from_radius(R)


def segment_volume(grid: Grid, law: WallLaw, p_wall, t=0.0):
    """Axial-segment volume V_j (sum over slices)."""
    return slice_volume(grid, law, p_wall, t).sum(axis=1)


@dataclass
class VolumeTable:
    grid: Grid
    law: WallLaw

    def V_jl(self, p_wall, t=0.0):
        return slice_volume(self.grid, self.law, p_wall, t)

    def V_j(self, p_wall, t=0.0):
        return segment_volume(self.grid, self.law, p_wall, t)


def apply_wall_motion(grid: Grid, law: WallLaw, p_wall, t=0.0, end_radius=None):
    """New grid with radii from the wall law at the given wall pressures."""
    R = radius_from_pressure(law, p_wall, grid.R0, t)
    if end_radius is None and np.array_equal(R, grid.R):
        return grid
    return grid.with_radius(R, end_radius)


# ---------------------------------------------------------------------------
# Cartesian embedding
# ---------------------------------------------------------------------------


def to_cartesian(grid: Grid, s, z, phi):
    """Map (axial arc length, radius, angle) to Cartesian coordinates."""
    s, z, phi = np.broadcast_arrays(np.asarray(s, float), np.asarray(z, float), np.asarray(phi, float))
    if grid.rc is None:
        return np.stack([s, z * np.cos(phi), z * np.sin(phi)], axis=-1)
    th = s / grid.rc
    d = grid.rc + z * np.cos(phi)
    return np.stack([d * np.sin(th), grid.rc - d * np.cos(th), z * np.sin(phi)], axis=-1)


def from_cartesian(grid: Grid, X):
    X = np.asarray(X, float)
    if grid.rc is None:
        s = X[..., 0]
        y, zz = X[..., 1], X[..., 2]
    else:
        ax, ay = X[..., 0], grid.rc - X[..., 1]
        th = np.arctan2(ax, ay)
        s = th * grid.rc
        y = np.hypot(ax, ay) - grid.rc
        zz = X[..., 2]
    z = np.hypot(y, zz)
    phi = np.mod(np.arctan2(zz, y), 2 * np.pi)
    return s, z, phi


def local_basis(grid: Grid, s, phi):
    """Unit vectors (e_axial, e_radial, e_angular) at (s, phi); shape (..., 3)."""
    s, phi = np.broadcast_arrays(np.asarray(s, float), np.asarray(phi, float))
    c, sn = np.cos(phi), np.sin(phi)
    zero = np.zeros_like(s)
    one = np.ones_like(s)
    if grid.rc is None:
        e_s = np.stack([one, zero, zero], -1)
        n = np.stack([zero, one, zero], -1)
    else:
        th = s / grid.rc
        e_s = np.stack([np.cos(th), np.sin(th), zero], -1)
        n = np.stack([np.sin(th), -np.cos(th), zero], -1)
    b = np.stack([zero, zero, one], -1)
    e_z = c[..., None] * n + sn[..., None] * b
    e_p = -sn[..., None] * n + c[..., None] * b
    return e_s, e_z, e_p
