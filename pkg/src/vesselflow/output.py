"""CSV writers, cross-section sampling and text checkpoints."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .fields import FieldState
from .transport import VelocityInterpolator

FMT = "%.17g"


def write_csv(path, header, columns):
    """Columns of equal length, written with 17 significant digits."""
    cols = [np.asarray(c, float).ravel() for c in columns]
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([FMT % v for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(header)))
    return header, {h: data[:, i] for i, h in enumerate(header)}


# ---------------------------------------------------------------------------
# section sampling
# ---------------------------------------------------------------------------


@dataclass
class SectionSample:
    s: float
    z: np.ndarray        # (nr,)
    phi: np.ndarray      # (np,)
    u: np.ndarray        # (nr, np) axial
    v: np.ndarray        # angular component
    w: np.ndarray        # radial component
    q: np.ndarray        # cell value of the segment holding s
    wall: np.ndarray     # wall radius per sampled angle

    @property
    def y(self):
        return self.z[:, None] * np.cos(self.phi)[None, :]

    @property
    def zz(self):
        return self.z[:, None] * np.sin(self.phi)[None, :]

    def in_plane(self):
        """Cartesian in-plane components (along y = outer side, along zz)."""
        c, s = np.cos(self.phi)[None, :], np.sin(self.phi)[None, :]
        return self.w * c - self.v * s, self.w * s + self.v * c


def _segment(grid, s):
    return int(np.clip(np.floor(s / grid.dx), 0, grid.nx - 1))


def sample_section(grid, state: FieldState, s, nr=41, nphi=None, phi=None):
    """Velocities on a polar sampling grid of the cross section at arc length s.

    Radii are fractions of the local wall radius, from the axis to the wall.
    """
    if phi is None:
        nphi = grid.nphi if nphi is None else nphi
        phi = np.arange(nphi) * 2 * np.pi / nphi
    phi = np.asarray(phi, float)
    j = _segment(grid, s)
    l_near = np.mod(np.rint(phi / grid.dphi).astype(int), grid.nphi)
    wall = grid.R[j, l_near]
    frac = np.linspace(0.0, 1.0, nr)
    Z = frac[:, None] * wall[None, :]
    P = np.broadcast_to(phi[None, :], Z.shape)
    S = np.full(Z.shape, float(s))
    interp = VelocityInterpolator(grid, state)
    u, v, w = interp.local(S, Z, P)
    k = np.clip(np.searchsorted(grid.zf, Z, side="right") - 1, 0, None)
    k = np.minimum(k, grid.K[j, l_near][None, :] - 1)
    q = state.q[j, k, np.broadcast_to(l_near[None, :], Z.shape)]
    return SectionSample(float(s), frac, phi, u, v, w, q, wall)


def diameter_profiles(grid, state: FieldState, s, n=81):
    """Axial velocity along the y (phi = 0 / pi) and z (phi = pi/2, 3pi/2)
    diameters.  Returns dict name -> (coordinate, u)."""
    out = {}
    for name, (a, b) in {"y": (0.0, np.pi), "z": (0.5 * np.pi, 1.5 * np.pi)}.items():
        samp = sample_section(grid, state, s, nr=n, phi=[a, b])
        r_pos = samp.z * samp.wall[0]
        r_neg = samp.z * samp.wall[1]
        coord = np.concatenate([-r_neg[::-1], r_pos[1:]])
        u = np.concatenate([samp.u[::-1, 1], samp.u[1:, 0]])
        out[name] = (coord, u)
    return out


def write_profiles(grid, state: FieldState, s, out_dir, prefix="section", nr=41):
    """Diameter profiles plus the full section (u, in-plane vector, q)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, (coord, u) in diameter_profiles(grid, state, s).items():
        p = os.path.join(out_dir, f"{prefix}_diameter_{name}.csv")
        write_csv(p, ["s", name, "u"], [np.full(coord.size, s), coord, u])
        paths.append(p)
    samp = sample_section(grid, state, s, nr=nr)
    vy, vz = samp.in_plane()
    p = os.path.join(out_dir, f"{prefix}_field.csv")
    write_csv(p, ["s", "y", "z", "u", "vy", "vz", "q"],
              [np.full(samp.u.size, s), samp.y, samp.zz, samp.u, vy, vz, samp.q])
    paths.append(p)
    return paths


def write_grid(grid, path):
    """Cell layout: one row per active cell."""
    j, k, l = np.nonzero(grid.active)
    write_csv(path, ["j", "k", "l", "x", "z_bottom", "z_top", "phi", "volume"],
              [j, k, l, grid.x_c[j], grid.zb[j, k, l], grid.zt[j, k, l], grid.phi_c[l], grid.volume[j, k, l]])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_ARRAYS = ("u", "v", "w", "p_tilde", "q")


def write_checkpoint(path, grid, state: FieldState):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vesselflow-checkpoint 1\n")
        fh.write(f"t {FMT % state.t}\n")
        for name in _ARRAYS + ("R",):
            a = grid.R if name == "R" else getattr(state, name)
            fh.write(f"{name} {' '.join(str(d) for d in a.shape)}\n")
            fh.write(" ".join(FMT % v for v in a.ravel()) + "\n")


def read_checkpoint(path):
    """Returns (state, R)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "vesselflow-checkpoint 1":
        raise ValueError(f"{path}: not a checkpoint file")
    t = float(lines[1].split()[1])
    arrays = {}
    i = 2
    while i < len(lines):
        head = lines[i].split()
        shape = tuple(int(d) for d in head[1:])
        vals = np.array([float(v) for v in lines[i + 1].split()]) if lines[i + 1] else np.zeros(0)
        arrays[head[0]] = vals.reshape(shape)
        i += 2
    st = FieldState(arrays["u"], arrays["v"], arrays["w"], arrays["p_tilde"], arrays["q"], t)
    return st, arrays["R"]
