"""Eulerian-Lagrangian advection and the explicit viscous operators.

Foot points are found by integrating backwards in Cartesian space, so the
curvature and cylindrical metric terms come out of the trajectory itself.
The velocity at a foot is interpolated component-wise (each component from
its own staggered nodes), turned into a Cartesian vector and projected onto
the local basis of the arrival face.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import FieldState
from .mesh import Grid, from_cartesian, local_basis, to_cartesian


@dataclass
class FootPoint:
    s: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    cell: tuple
    weights: np.ndarray


# ---------------------------------------------------------------------------
# component node tables
# ---------------------------------------------------------------------------


@dataclass
class _Nodes:
    s0: float
    ds: float
    ns: int
    phi0: float
    nphi: int
    zg: np.ndarray     # shared node heights (full layers)
    Z: np.ndarray      # (ns, m, nphi) node heights, padded with the wall node
    V: np.ndarray      # (ns, m, nphi) node values
    n: np.ndarray      # (ns, nphi) node count, last one is the wall node
    mirror: np.ndarray  # (ns, nphi) value at -Z[:,0,:]


def _pad_column(Z, V, n):
    """Repeat the last valid node upwards so lookups past the wall clamp."""
    m = Z.shape[1]
    k = np.arange(m)[None, :, None]
    last = np.expand_dims(n - 1, 1)
    Zl = np.take_along_axis(Z, last, axis=1)
    Vl = np.take_along_axis(V, last, axis=1)
    return np.where(k < last, Z, Zl), np.where(k < last, V, Vl)


def _half_turn(a, sign):
    N = a.shape[-1]
    if N % 2 == 0:
        return sign * np.roll(a, -N // 2, axis=-1)
    return a if sign > 0 else np.zeros_like(a)


def _u_nodes(grid: Grid, u):
    ncap = grid.ncap
    Z = np.concatenate([grid.zc_u, np.zeros((grid.nx + 1, 1, grid.nphi))], axis=1)
    V = np.concatenate([np.where(grid.active_u, u, 0.0), np.zeros((grid.nx + 1, 1, grid.nphi))], axis=1)
    jj, ll = np.meshgrid(np.arange(grid.nx + 1), np.arange(grid.nphi), indexing="ij")
    Z[jj, grid.Ku, ll] = grid.Ru
    V[jj, grid.Ku, ll] = 0.0
    Z, V = _pad_column(Z, V, grid.Ku + 1)
    zg = 0.5 * (grid.zf[:-1] + grid.zf[1:])
    return _Nodes(0.0, grid.dx, grid.nx + 1, 0.0, grid.nphi, zg, Z, V, grid.Ku + 1,
                  _half_turn(V[:, 0, :], 1.0))


def _v_nodes(grid: Grid, v):
    nx, nphi = grid.nx, grid.nphi
    Z = np.concatenate([grid.zc_v, np.zeros((nx, 1, nphi))], axis=1)
    V = np.concatenate([np.where(grid.active_v, v, 0.0), np.zeros((nx, 1, nphi))], axis=1)
    jj, ll = np.meshgrid(np.arange(nx), np.arange(nphi), indexing="ij")
    Kv = np.maximum(grid.Kv, 1)
    top = np.take_along_axis(grid.zt_v, np.expand_dims(Kv - 1, 1), axis=1)[:, 0, :]
    Z[jj, Kv, ll] = top
    V[jj, Kv, ll] = 0.0
    Z, V = _pad_column(Z, V, Kv + 1)
    zg = 0.5 * (grid.zf[:-1] + grid.zf[1:])
    return _Nodes(0.5 * grid.dx, grid.dx, nx, 0.5 * grid.dphi, nphi, zg, Z, V, Kv + 1,
                  _half_turn(V[:, 0, :], -1.0))


def _w_nodes(grid: Grid, w):
    nx, nphi, ncap = grid.nx, grid.nphi, grid.ncap
    Z = np.broadcast_to(grid.zf[None, 1:, None], (nx, ncap, nphi)).copy()
    V = w[:, 1:, :].copy()
    jj, ll = np.meshgrid(np.arange(nx), np.arange(nphi), indexing="ij")
    Z[jj, grid.K - 1, ll] = grid.R
    V[jj, grid.K - 1, ll] = w[jj, grid.K, ll]
    Z, V = _pad_column(Z, V, grid.K)
    return _Nodes(0.5 * grid.dx, grid.dx, nx, 0.0, nphi, grid.zf[1:], Z, V, grid.K,
                  _half_turn(V[:, 0, :], -1.0))


def _column_value(nodes: _Nodes, i, l, z):
    """Linear interpolation in z inside column (i, l) for each point."""
    n = nodes.n[i, l]
    k = np.searchsorted(nodes.zg, z, side="right") - 1
    k = np.clip(k, 0, np.maximum(n - 2, 0))
    z_lo = nodes.Z[i, k, l]
    k = np.where((z < z_lo) & (k > 0), k - 1, k)
    z_lo = nodes.Z[i, k, l]
    k_hi = np.minimum(k + 1, n - 1)
    z_hi = nodes.Z[i, k_hi, l]
    v_lo = nodes.V[i, k, l]
    v_hi = nodes.V[i, k_hi, l]
    span = np.where(z_hi > z_lo, z_hi - z_lo, 1.0)
    t = np.clip((z - z_lo) / span, 0.0, 1.0)
    inner = v_lo + t * (v_hi - v_lo)
    # below the first node: blend with the mirrored node across the axis
    z0 = nodes.Z[i, 0, l]
    tm = np.clip((z + z0) / (2.0 * z0), 0.0, 1.0)
    below = nodes.mirror[i, l] + tm * (nodes.V[i, 0, l] - nodes.mirror[i, l])
    return np.where(z < z0, below, inner)


def _interp(nodes: _Nodes, s, z, phi):
    if nodes.ns > 1:
        xs = np.clip((s - nodes.s0) / nodes.ds, 0.0, nodes.ns - 1)
        i0 = np.minimum(np.floor(xs).astype(np.int64), nodes.ns - 2)
        ts = xs - i0
    else:
        i0 = np.zeros(np.shape(s), dtype=np.int64)
        ts = np.zeros(np.shape(s))
    i1 = np.minimum(i0 + 1, nodes.ns - 1)
    if nodes.nphi > 1:
        dphi = 2 * np.pi / nodes.nphi
        xp = (phi - nodes.phi0) / dphi
        fl = np.floor(xp)
        tp = xp - fl
        l0 = np.mod(fl.astype(np.int64), nodes.nphi)
        l1 = np.mod(l0 + 1, nodes.nphi)
    else:
        l0 = l1 = np.zeros(np.shape(s), dtype=np.int64)
        tp = np.zeros(np.shape(s))
    out = (1 - ts) * (1 - tp) * _column_value(nodes, i0, l0, z)
    out += ts * (1 - tp) * _column_value(nodes, i1, l0, z)
    out += (1 - ts) * tp * _column_value(nodes, i0, l1, z)
    out += ts * tp * _column_value(nodes, i1, l1, z)
    return out


class VelocityInterpolator:
    """Evaluates the staggered velocity at arbitrary points of the vessel."""

    def __init__(self, grid: Grid, state: FieldState):
        self.grid = grid
        self.nu = _u_nodes(grid, state.u)
        self.nv = _v_nodes(grid, state.v) if grid.nphi > 1 else None
        self.nw = _w_nodes(grid, state.w)

    def local(self, s, z, phi):
        u = _interp(self.nu, s, z, phi)
        v = _interp(self.nv, s, z, phi) if self.nv is not None else np.zeros_like(u)
        w = _interp(self.nw, s, z, phi)
        return u, v, w

    def cartesian(self, s, z, phi):
        u, v, w = self.local(s, z, phi)
        e_s, e_z, e_p = local_basis(self.grid, s, phi)
        return u[..., None] * e_s + w[..., None] * e_z + v[..., None] * e_p


def interpolate_velocity(grid: Grid, state: FieldState, s, z, phi):
    """(u, v, w) at points given in (axial arc length, radius, angle)."""
    return VelocityInterpolator(grid, state).local(np.asarray(s, float), np.asarray(z, float),
                                                   np.mod(np.asarray(phi, float), 2 * np.pi))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _wall_radius_at(grid: Grid, s, phi):
    j = np.clip((s / grid.dx).astype(np.int64), 0, grid.nx - 1)
    l = np.mod(np.rint(phi / grid.dphi).astype(np.int64), grid.nphi)
    return grid.R[j, l]


def _clamp(grid: Grid, s, z, phi):
    L = grid.nx * grid.dx
    s = np.clip(s, 0.0, L)
    phi = np.mod(phi, 2 * np.pi)
    z = np.minimum(np.abs(z), _wall_radius_at(grid, s, phi))
    return s, z, phi


def backtrack(grid: Grid, state: FieldState, s, z, phi, dt, interp=None, max_substeps=64):
    """Departure points of trajectories arriving at (s, z, phi) after dt."""
    s = np.asarray(s, float)
    z = np.asarray(z, float)
    phi = np.mod(np.asarray(phi, float), 2 * np.pi)
    interp = interp or VelocityInterpolator(grid, state)
    u, v, w = interp.local(s, z, phi)
    zmin = grid.zf[1]
    cfl = dt * (np.abs(u) / grid.dx + np.abs(w) / grid.zf[1]
                + np.abs(v) / (np.maximum(z, zmin) * grid.dphi))
    nsub = np.clip(np.ceil(cfl), 1, max_substeps).astype(np.int64)
    h = dt / nsub
    X = to_cartesian(grid, s, z, phi)
    cs, cz, cp = s.copy(), z.copy(), phi.copy()
    for it in range(int(nsub.max()) if nsub.size else 0):
        act = nsub > it
        if not np.any(act):
            break
        hs = h[act][:, None]
        V0 = interp.cartesian(cs[act], cz[act], cp[act])
        Xm = X[act] - 0.5 * hs * V0
        ms, mz, mp = _clamp(grid, *from_cartesian(grid, Xm))
        Vm = interp.cartesian(ms, mz, mp)
        Xn = X[act] - hs * Vm
        ns_, nz_, np_ = _clamp(grid, *from_cartesian(grid, Xn))
        X[act] = to_cartesian(grid, ns_, nz_, np_)
        cs[act], cz[act], cp[act] = ns_, nz_, np_
    j = np.clip((cs / grid.dx).astype(np.int64), 0, grid.nx - 1)
    l = np.mod(np.floor(cp / grid.dphi + 0.5).astype(np.int64), grid.nphi)
    k = np.clip(np.searchsorted(grid.zf, cz, side="right") - 1, 0, grid.K[j, l] - 1)
    ts = np.clip(cs / grid.dx - (j + 0.5), -0.5, 0.5) + 0.5
    tp = np.mod(cp / grid.dphi + 0.5, 1.0)
    weights = np.stack([(1 - ts) * (1 - tp), ts * (1 - tp), (1 - ts) * tp, ts * tp], axis=-1)
    return FootPoint(cs, cz, cp, (j, k, l), weights)


def _face_coordinates(grid: Grid):
    fu = np.nonzero(grid.active_u)
    pu = (grid.x_f[fu[0]], grid.zc_u[fu], grid.phi_c[fu[2]])
    fv = np.nonzero(grid.active_v)
    pv = (grid.x_c[fv[0]], grid.zc_v[fv], grid.phi_f[fv[2]])
    fw = np.nonzero(grid.active_w)
    pw = (grid.x_c[fw[0]], grid.zf[fw[1]], grid.phi_c[fw[2]])
    return (fu, pu), (fv, pv), (fw, pw)


def foot_values(grid: Grid, state: FieldState, dt, advection=True):
    """Velocities at the departure points of all active faces.

    With advection switched off the foot values are the face values.
    """
    if not advection:
        return state.u.copy(), state.v.copy(), state.w.copy()
    interp = VelocityInterpolator(grid, state)
    uL, vL, wL = state.u.copy(), state.v.copy(), state.w.copy()
    faces = _face_coordinates(grid)
    for (idx, (s, z, phi)), out, which in zip(faces, (uL, vL, wL), (0, 2, 1)):
        if len(idx[0]) == 0:
            continue
        foot = backtrack(grid, state, s, z, phi, dt, interp)
        V = interp.cartesian(foot.s, foot.z, foot.phi)
        basis = local_basis(grid, s, phi)[which]
        out[idx] = np.einsum("...i,...i->...", V, basis)
    return uL, vL, wL


# ---------------------------------------------------------------------------
# explicit viscous operators
# ---------------------------------------------------------------------------


def _axial_second_difference(f, active, dx):
    """Second difference along axis 0; missing neighbours count as no-slip
    (inside the wall) and the two end rows are left at zero."""
    g = np.where(active, f, 0.0)
    out = np.zeros_like(g)
    out[1:-1] = (g[2:] - 2 * g[1:-1] + g[:-2]) / dx**2
    return np.where(active, out, 0.0)


def explicit_viscous_u(grid: Grid, u):
    """Axial part of the viscous term of the axial momentum equation."""
    return _axial_second_difference(u, grid.active_u, grid.dx)


def explicit_viscous_v(grid: Grid, v, w, axial=True):
    """Axial viscous part plus the 2/z^2 dw/dphi coupling at angular faces."""
    out = _axial_second_difference(v, grid.active_v, grid.dx) if axial else np.zeros_like(v)
    if grid.nphi == 1:
        return np.zeros_like(v)
    wc = 0.5 * (w[:, 1:, :] + w[:, :-1, :])  # cell-centred average of radial velocity
    dw = np.roll(wc, -1, axis=2) - wc
    z = np.where(grid.active_v, grid.zc_v, 1.0)
    out = out + np.where(grid.active_v, 2.0 * dw / (z**2 * grid.dphi), 0.0)
    return out


def explicit_viscous_w(grid: Grid, w, v, axial=True):
    """Axial viscous part minus the 2/z^2 dv/dphi coupling at radial faces."""
    out = _axial_second_difference(w, grid.active_w, grid.dx) if axial else np.zeros_like(w)
    if grid.nphi == 1:
        return out
    vm = np.where(grid.active_v, v, 0.0)
    dv = vm - np.roll(vm, 1, axis=2)
    pair = np.zeros_like(w)
    pair[:, 1:-1, :] = 0.5 * (dv[:, 1:, :] + dv[:, :-1, :])
    z = np.broadcast_to(grid.zf[None, :, None], w.shape)
    z = np.where(grid.active_w, z, 1.0)
    return out - np.where(grid.active_w, 2.0 * pair / (z**2 * grid.dphi), 0.0)
