"""Acceptance suite: one test per criterion, tolerances as pinned.

Every run is small enough for a single core; the whole module takes about
twelve minutes.  Meshes below the stated ones are used only where the flow
is uniform along the axis or the criterion is a qualitative property; the
reasons are logged in the decisions ledger.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from vesselflow import analytic, config, harness, output
from vesselflow.verify import run_verify

pytestmark = pytest.mark.slow

CASES = Path(__file__).resolve().parents[1] / "cases"


def load(name, **overrides):
    cfg = config.load_config(CASES / f"{name}.cfg")
    return cfg.with_overrides(**overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# 1. steady elastic tube
# ---------------------------------------------------------------------------


def test_c1_steady_elastic_tube_error_and_order():
    cfg = load("steady_elastic")
    assert (cfg["geometry"]["nx"], cfg["geometry"]["nz"], cfg["geometry"]["nphi"]) == (100, 50, 30)
    assert cfg["numerics"]["dt"] * cfg["numerics"]["steps"] == pytest.approx(10.0)
    res = harness.run_case(cfg, log_every=0)
    errs = harness.reference_errors(cfg, res.grid, res.state)
    assert errs["u"] <= 1.6e-4, errs
    assert errs["R"] <= 3.0e-5, errs
    rep = harness.run_convergence(cfg, [(50, 25, 30, 100), (100, 50, 30, 100), (200, 100, 30, 100)])
    print(rep.table())
    for k in ("u", "R"):
        assert min(rep.orders[k]) >= 1.9, (k, rep.orders[k])


# ---------------------------------------------------------------------------
# 2. Womersley flow
# ---------------------------------------------------------------------------


def _womersley_profiles(name, nz, times):
    cfg = load(name, geometry__nz=nz)
    steps = int(round(max(times) / cfg["numerics"]["dt"]))
    cfg = cfg.with_overrides(numerics__steps=steps)
    wc = harness.womersley_reference(cfg)
    rows = []

    def grab(n, grid, state, stats):
        if np.min(np.abs(np.asarray(times) - state.t)) < 1e-9:
            f = grid.nx // 2
            act = grid.active_u[f, :, 0]
            z = grid.zc_u[f, act, 0]
            ue = analytic.womersley_profile(wc, z, state.t)
            rows.append((state.t, float(np.max(np.abs(state.u[f, act, 0] - ue))), float(np.max(np.abs(ue)))))

    harness.run_case(cfg, on_step=grab, log_every=0)
    assert len(rows) == len(times)
    return np.array(rows)


def test_c2_womersley_order_error_and_profiles():
    cfg = load("womersley_re5000", numerics__mode="axisymmetric")
    rep = harness.run_convergence(cfg, [(100, 25, 1, 25), (200, 50, 1, 50), (400, 100, 1, 100)])
    print(rep.table())
    assert min(rep.orders["u"]) >= 1.8, rep.orders
    assert rep.errors["u"][-1] <= 1.4e-5, rep.errors
    # profiles against the Bessel solution; the peak is the largest exact
    # value over the compared phases
    for name, nz, times in (("womersley_re50", 50, (1.7, 1.8, 1.9, 2.0, 2.1)),
                            ("womersley_re5000", 100, (1.8, 1.9, 2.0, 2.1, 2.2))):
        r = _womersley_profiles(name, nz, times)
        worst = r[:, 1].max() / r[:, 2].max()
        print(name, "worst profile error / peak", worst)
        assert worst <= 0.01, (name, r)


# ---------------------------------------------------------------------------
# 3. elliptic cross section
# ---------------------------------------------------------------------------


def _major_axis(grid, state, f):
    n = grid.nphi
    prof = []
    for l in (n // 2, 0):
        act = grid.active_u[f, :, l]
        prof.append((grid.zc_u[f, act, l], state.u[f, act, l]))
    (z0, u0), (z1, u1) = prof
    return np.concatenate([-z0[::-1], z1]), np.concatenate([u0[::-1], u1])


def _local_maxima(u):
    i = np.arange(1, u.size - 1)
    return i[(u[i] > u[i - 1]) & (u[i] > u[i + 1])]


def _elliptic_run(lam):
    cfg = load(f"elliptic_lam{lam}")
    ec = harness.elliptic_reference(cfg)
    nper = int(round(2 * np.pi / ec.omega / cfg["numerics"]["dt"]))
    first = cfg["numerics"]["steps"] - nper
    rows, double = [], []

    def grab(n, grid, state, stats):
        if n < first:
            return
        errs, peak = harness.elliptic_axis_errors(ec, grid, state)
        rows.append((max(errs), peak))
        f = grid.nx // 2
        y, u = _major_axis(grid, state, f)
        ue = analytic.elliptic_profile_yz(ec, y, 0 * y, state.t)
        sgn = np.sign(ue[np.argmax(np.abs(ue))])
        double.append((_local_maxima(sgn * ue), _local_maxima(sgn * u), u, peak))

    harness.run_case(cfg, on_step=grab, log_every=0)
    return np.array(rows), double


def test_c3_elliptic_section_profiles():
    report = {}
    for lam in (1, 10, 100):
        rows, double = _elliptic_run(lam)
        report[lam] = (float(np.max(rows[:, 0] / rows[:, 1])), float(rows[:, 0].max() / rows[:, 1].max()))
        if lam == 10:
            # double-peaked major-axis profile, mirror symmetric
            hits = [d for d in double if d[0].size == 2]
            assert hits, "reference never shows two maxima on the major axis"
            for ref_max, num_max, u, peak in hits:
                assert num_max.size == 2
                assert num_max[0] + num_max[1] == u.size - 1
                assert np.max(np.abs(u - u[::-1])) <= 1e-6 * peak
    print("lambda: (worst error / instantaneous peak, worst error / period peak)", report)
    for lam, (inst, _) in report.items():
        assert inst <= 0.05, report


# ---------------------------------------------------------------------------
# 4. curved tube, steady
# ---------------------------------------------------------------------------

CURVED_MESH = dict(geometry__nx=24, geometry__nz=12, geometry__nphi=32, numerics__steps=150, numerics__dt=0.4)


def _half_circulations(grid, state, s, frac=0.9, n=64):
    """Circulation around each half section (phi > 0, phi < 0), taken on the
    contour made of the arc at ``frac`` of the wall radius and the diameter
    in the curvature plane; counter-clockwise in the (y, z) plane."""
    mid = (np.arange(n) + 0.5) * np.pi / n
    nr = int(round(1 / (1 - frac))) + 1
    d = output.sample_section(grid, state, s, nr=41, phi=[0.0, np.pi])
    y = np.concatenate([-d.z[::-1] * d.wall[1], d.z[1:] * d.wall[0]])
    vy = np.concatenate([-d.w[::-1, 1], d.w[1:, 0]])
    keep = np.abs(y) <= frac * d.wall.max()
    dia = np.trapezoid(vy[keep], y[keep]) if hasattr(np, "trapezoid") else np.trapz(vy[keep], y[keep])
    out = []
    for sgn in (1.0, -1.0):
        sm = output.sample_section(grid, state, s, nr=nr, phi=sgn * mid)
        i = int(round(frac * (sm.z.size - 1)))
        arc = np.sum(sgn * sm.v[i] * frac * sm.wall * np.pi / n)
        out.append(sgn * (dia + arc))
    return out


def _curved(re):
    cfg = load(f"curved_steady_re{re}", **CURVED_MESH)
    res = harness.run_case(cfg, log_every=0)
    s = cfg["geometry"]["curvature_radius"] * np.pi / 2
    samp = output.sample_section(res.grid, res.state, s, nr=41)
    u = samp.u
    peak = float(u.max())
    mirror = (-np.arange(u.shape[1])) % u.shape[1]
    vy, vz = samp.in_plane()
    asym = max(np.abs(u - u[:, mirror]).max(), np.abs(vy - vy[:, mirror]).max(), np.abs(vz + vz[:, mirror]).max())
    i, l = np.unravel_index(np.argmax(u), u.shape)
    y_peak = samp.z[i] * samp.wall[l] * np.cos(samp.phi[l])
    gam = _half_circulations(res.grid, res.state, s)
    return dict(peak=peak, asym=asym / peak, y_peak=y_peak, gamma=gam,
                scale=peak * cfg["geometry"]["radius"])


def test_c4_curved_tube_secondary_flow():
    out = {re: _curved(re) for re in (300, 1200)}
    print(out)
    for re, o in out.items():
        assert o["asym"] <= 1e-6, (re, o)
        assert o["y_peak"] > 0.0, (re, o)
        g_up, g_down = o["gamma"]
        assert g_up * g_down < 0.0, (re, o)
        assert min(abs(g_up), abs(g_down)) >= 1e-3 * o["scale"], (re, o)
    assert out[1200]["y_peak"] > out[300]["y_peak"]


# ---------------------------------------------------------------------------
# 5. hydrostatic exactness
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def womersley_full():
    cfg = load("womersley_re50", geometry__nx=20, geometry__nz=10, geometry__nphi=16, numerics__mode="full")
    ratios, q_abs, p_abs = [], [], []

    def grab(n, grid, state, stats):
        q_abs.append(float(np.max(np.abs(state.q))))
        p_abs.append(float(np.max(np.abs(state.p_tilde))))
        ratios.append(q_abs[-1] / p_abs[-1])

    res = harness.run_case(cfg, on_step=grab, log_every=0)
    return cfg, res, np.array(ratios), np.array(q_abs), np.array(p_abs)


def test_c5_hydrostatic_exactness(womersley_full):
    _, _, ratios, q_abs, p_abs = womersley_full
    worst = int(np.argmax(ratios))
    print("worst step", worst, "q/p", ratios[worst], "|q|", q_abs[worst], "|p|", p_abs[worst],
          "q over the run peak of p", q_abs.max() / p_abs.max())
    assert ratios.max() <= 1e-6


# ---------------------------------------------------------------------------
# 6. conservation
# ---------------------------------------------------------------------------


def test_c6_conservation(womersley_full):
    cfg_w, res_w, *_ = womersley_full
    cfg = load("curved_compliant", geometry__nx=20, geometry__nz=8, geometry__nphi=16, numerics__steps=100)
    vol = []
    case = harness.build_case(cfg)
    v0 = float(case.grid.slice_volume_from_radius(case.grid.R).sum())
    res = harness.run_case(case, log_every=0,
                           on_step=lambda n, g, st, s: vol.append(float(g.slice_volume_from_radius(g.R).sum())))
    for c, r in ((cfg, res), (cfg_w, res_w)):
        tol = c["numerics"]["newton_tol"]
        worst = max(s.mass_res for s in r.stats)
        assert worst <= 10 * tol, (worst, tol)
    vol = np.array([v0] + vol)
    inflow = np.array([s.inflow_volume for s in res.stats])
    assert abs(vol[-1] - vol[0] - inflow.sum()) <= 1e-9 * v0
    assert np.max(np.abs(np.diff(vol) - inflow)) <= 1e-9 * v0
    assert np.ptp(vol) > 1e-3 * v0  # the wall does move


# ---------------------------------------------------------------------------
# 7. reduction to the axisymmetric model
# ---------------------------------------------------------------------------


def test_c7_axisymmetric_reduction():
    base = load("steady_elastic", geometry__nx=25, geometry__nz=10)
    a = harness.run_case(base.with_overrides(geometry__nphi=1, numerics__mode="axisymmetric"), log_every=0)
    b = harness.run_case(base.with_overrides(geometry__nphi=30, numerics__mode="full"), log_every=0)
    du = np.abs(b.state.u - a.state.u).max() / np.abs(a.state.u).max()
    dR = np.abs(b.grid.R - a.grid.R).max() / a.grid.R.max()
    dp = np.abs(b.state.p_tilde - a.state.p_tilde).max() / np.abs(a.state.p_tilde).max()
    print("relative differences u, R, p", du, dR, dp)
    assert max(du, dR, dp) <= 1e-8


# ---------------------------------------------------------------------------
# 8. splitting efficiency
# ---------------------------------------------------------------------------


def test_c8_splitting_faster_than_direct():
    cfg = load("timing_womersley")
    g = cfg["geometry"]
    assert (g["nx"], g["nz"], g["nphi"]) == (100, 20, 30)
    rep = harness.run_timing_comparison(cfg, ("full", "direct"), repeats=3, steps=20)
    print(rep.table())
    assert rep.ratio("direct", "full") >= 5.0


# ---------------------------------------------------------------------------
# 9. oracle suites
# ---------------------------------------------------------------------------


def test_c9_oracle_suites():
    t0 = time.perf_counter()
    results = run_verify(seed=0)
    elapsed = time.perf_counter() - t0
    for r in results:
        print(r.line())
    by_name = {r.name: r for r in results}
    for name in ("cg_vs_dense", "perturbative_vs_cg", "newton_vs_bisection"):
        assert by_name[name].instances >= 100
    assert all(r.passed for r in results)
    assert elapsed <= 600.0
