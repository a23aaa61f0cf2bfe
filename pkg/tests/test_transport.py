import numpy as np
from hypothesis import given, strategies as st

from vesselflow.fields import FieldState
from vesselflow.mesh import GridSpec, build_grid
from vesselflow.transport import (backtrack, explicit_viscous_u, explicit_viscous_v, explicit_viscous_w,
                                  foot_values, interpolate_velocity)


def _grid(nx=8, nz=8, nphi=8):
    return build_grid(GridSpec(nx=nx, nz=nz, nphi=nphi, length=1.0, equilibrium_radius=0.025))


def _fill(g, fu=None, fv=None, fw=None):
    st_ = FieldState.zeros(g.nx, g.ncap, g.nphi)
    if fu is not None:
        x = g.x_f[:, None, None] * np.ones_like(g.zc_u)
        st_.u = np.where(g.active_u, fu(x, g.zc_u, g.phi_c[None, None, :] + 0 * x), 0.0)
    if fv is not None:
        st_.v = np.where(g.active_v, fv(g.zc_v, g.phi_f[None, None, :]), 0.0)
    if fw is not None:
        z = g.zf[None, :, None] * np.ones(st_.w.shape)
        st_.w = np.where(g.active_w, fw(z, g.phi_c[None, None, :]), 0.0)
    return st_


def test_zero_velocity_keeps_foot_points():
    g = _grid()
    st_ = FieldState.zeros(g.nx, g.ncap, g.nphi)
    s, z, phi = np.array([0.3, 0.61]), np.array([0.004, 0.012]), np.array([0.2, 4.0])
    foot = backtrack(g, st_, s, z, phi, 0.1)
    assert np.array_equal(foot.s, s) and np.allclose(foot.z, z) and np.allclose(foot.phi, phi)


def test_uniform_translation():
    g = _grid()
    st_ = _fill(g, fu=lambda x, z, p: np.full_like(x, 0.7))
    s, z, phi = np.array([0.5, 0.8]), np.array([0.003, 0.01]), np.array([0.0, 2.0])
    foot = backtrack(g, st_, s, z, phi, 0.2)
    assert np.allclose(foot.s, s - 0.14, atol=1e-12)
    assert np.allclose(foot.z, z, atol=1e-12) and np.allclose(foot.phi, phi, atol=1e-12)


def test_rigid_rotation_angle():
    g = _grid(nx=4, nz=16, nphi=64)
    omega, dt = 2.0, 0.05
    st_ = _fill(g, fv=lambda z, p: omega * z)
    z = np.array([0.005, 0.01, 0.015])
    phi = np.array([1.0, 2.5, 5.0])
    foot = backtrack(g, st_, np.full(3, 0.5), z, phi, dt)
    dphi = np.angle(np.exp(1j * (foot.phi - (phi - omega * dt))))
    assert np.max(np.abs(dphi)) <= 2e-3 * omega * dt
    assert np.allclose(foot.z, z, rtol=5e-3)


def test_node_reproduction_and_linear_exactness():
    g = _grid()
    st_ = _fill(g, fu=lambda x, z, p: 3.0 * x - 1.0)
    j, k, l = 3, 2, 5
    u, _, _ = interpolate_velocity(g, st_, g.x_f[j], g.zc_u[j, k, l], g.phi_c[l])
    assert u == st_.u[j, k, l]
    s = np.linspace(0.1, 0.9, 17)
    u, _, _ = interpolate_velocity(g, st_, s, np.full(17, 0.01), np.full(17, 1.3))
    assert np.allclose(u, 3.0 * s - 1.0, atol=1e-12)


def test_interpolation_second_order():
    f = lambda x, z, p: np.sin(2 * np.pi * x) * np.cos(40.0 * z) * (1 + 0.3 * np.cos(p))  # noqa: E731
    rng = np.random.default_rng(3)
    s = rng.uniform(0.1, 0.9, 200)
    z = rng.uniform(0.002, 0.018, 200)
    p = rng.uniform(0, 2 * np.pi, 200)
    errs = []
    for n in (8, 16, 32):
        g = _grid(nx=n, nz=n, nphi=n)
        u, _, _ = interpolate_velocity(g, _fill(g, fu=f), s, z, p)
        errs.append(np.max(np.abs(u - f(s, z, p))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders


def test_advection_off_returns_face_values():
    g = _grid()
    st_ = _fill(g, fu=lambda x, z, p: x * z)
    uL, vL, wL = foot_values(g, st_, 0.1, advection=False)
    assert np.array_equal(uL, st_.u) and np.array_equal(vL, st_.v) and np.array_equal(wL, st_.w)


def test_axial_viscous_u():
    g = _grid(nx=10)
    assert np.allclose(explicit_viscous_u(g, _fill(g, fu=lambda x, z, p: np.full_like(x, 2.0)).u)[1:-1], 0, atol=1e-9)
    assert np.allclose(explicit_viscous_u(g, _fill(g, fu=lambda x, z, p: 5 * x).u)[1:-1], 0, atol=1e-9)
    out = explicit_viscous_u(g, _fill(g, fu=lambda x, z, p: x**2).u)
    act = g.active_u[1:-1]
    assert np.allclose(out[1:-1][act], 2.0, atol=1e-10)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_coupling_vanishes_for_constant_and_axisymmetric_fields(a, b):
    g = _grid(nphi=6)
    st_ = _fill(g, fv=lambda z, p: np.full_like(z * p, a), fw=lambda z, p: np.full_like(z * p, b))
    assert np.allclose(explicit_viscous_v(g, st_.v, st_.w, axial=False), 0, atol=1e-12)
    assert np.allclose(explicit_viscous_w(g, st_.w, st_.v, axial=False), 0, atol=1e-12)
    st_ = _fill(g, fw=lambda z, p: a * z + b * z**2 + 0 * p)
    assert np.allclose(explicit_viscous_v(g, st_.v, st_.w, axial=False), 0, atol=1e-12)


def test_v_coupling_of_sinusoidal_w():
    g = _grid(nx=2, nz=4, nphi=4)
    st_ = _fill(g, fw=lambda z, p: np.sin(p) + 0 * z)
    out = explicit_viscous_v(g, st_.v, st_.w, axial=False)
    l = np.arange(4)
    w_c = np.sin(g.phi_c)
    for k in range(3):
        z = g.zc_v[0, k, 0]
        # cell-centred w is the average of the faces below and above (the bottom face at the axis is zero)
        below = 0.0 if k == 0 else 1.0
        wk = 0.5 * (below + 1.0) * w_c
        ref = 2.0 * (wk[(l + 1) % 4] - wk) / (z**2 * g.dphi)
        assert np.allclose(out[0, k], ref, rtol=1e-12, atol=1e-12)
