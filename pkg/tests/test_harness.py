import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vesselflow import cli, harness, output
from vesselflow.config import parse
from vesselflow.fields import FieldState
from vesselflow.mesh import Curvature, GridSpec, build_grid
from vesselflow.analytic import poiseuille_profile

from test_config import MINIMAL

WOMERSLEY = """
[geometry]
nx = 12
nz = 8
nphi = 1
radius = 0.025
[fluid]
nu = 1e-3
rho = 1.0
[wall]
beta = 1e12
[numerics]
dt = 0.05
steps = 8
theta = 0.5
axial_viscosity = off
[inlet]
kind = pressure
[outlet]
kind = pressure
amplitude = -1.0
omega = 6.283185307179586
[initial]
velocity = womersley
womersley_amplitude = 1.0
womersley_omega = 6.283185307179586
pressure_gradient = 1.0
[output]
log_every = 0
[reference]
case = womersley
"""


def test_l2_identical_and_offset():
    g = build_grid(GridSpec(nx=7, nz=5, nphi=6, equilibrium_radius=0.02, curvature=Curvature(0.3, 1.0)))
    v = np.random.default_rng(0).normal(size=g.volume.shape)
    assert harness.l2_error(v, v, g.volume) == 0.0
    assert harness.l2_error(v + 0.37, v, g.volume) == pytest.approx(0.37, rel=1e-13)


@given(st.floats(1e-3, 1e3), st.floats(0.5, 4.0), st.integers(2, 6))
def test_order_estimator_exact(C, p, n):
    h = 0.5 ** np.arange(n)
    assert np.allclose(harness.observed_orders(C * h**p), p, rtol=0, atol=1e-12)


def test_order_from_table_rows():
    assert harness.observed_orders([3.9260e-4, 7.7510e-5])[0] == pytest.approx(2.34, abs=0.005)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cols = [rng.normal(size=40) * 10.0 ** rng.integers(-300, 300, 40), rng.uniform(size=40)]
    p = tmp_path / "x.csv"
    output.write_csv(p, ["a", "b"], cols)
    head, data = output.read_csv(p)
    assert head == ["a", "b"]
    assert np.array_equal(data["a"], cols[0]) and np.array_equal(data["b"], cols[1])


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_round_trip_property(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("csv") / "v.csv"
    output.write_csv(p, ["v"], [vals])
    assert np.array_equal(output.read_csv(p)[1]["v"], np.array(vals, float))


def test_poiseuille_diameter_profile_symmetric():
    g = build_grid(GridSpec(nx=4, nz=20, nphi=8, equilibrium_radius=0.025))
    st_ = FieldState.zeros(g.nx, g.ncap, g.nphi)
    st_.u = np.where(g.active_u, poiseuille_profile(1e-3, 0.025, g.zc_u), 0.0)
    prof = output.diameter_profiles(g, st_, 0.5, n=41)
    for coord, u in prof.values():
        assert coord.size == 81
        assert np.max(np.abs(u - u[::-1])) <= 1e-12
        assert u[40] == u.max()


def test_section_sample_counts():
    g = build_grid(GridSpec(nx=4, nz=6, nphi=12, equilibrium_radius=0.025))
    samp = output.sample_section(g, FieldState.zeros(g.nx, g.ncap, g.nphi), 0.3, nr=9)
    assert samp.u.shape == (9, 12) and samp.phi.size == 12 and samp.y.shape == (9, 12)


def test_checkpoint_round_trip(tmp_path):
    res = harness.run_case(parse(WOMERSLEY))
    p = tmp_path / "c.txt"
    output.write_checkpoint(p, res.grid, res.state)
    st_, R = output.read_checkpoint(p)
    for name in ("u", "v", "w", "q", "p_tilde"):
        assert np.array_equal(getattr(st_, name), getattr(res.state, name))
    assert np.array_equal(R, res.grid.R) and st_.t == res.state.t


def test_convergence_single_mesh_table():
    rep = harness.run_convergence(parse(WOMERSLEY), [(12, 8, 1, 8)])
    lines = rep.table().splitlines()
    assert len(lines) == 2 and "O_u" in lines[0]
    assert lines[1].split()[-1] != "" and len(lines[1].split()) == 5


def test_runs_are_deterministic():
    a = harness.run_case(parse(WOMERSLEY))
    b = harness.run_case(parse(WOMERSLEY))
    assert np.max(np.abs(a.state.u - b.state.u)) <= 1e-12


def test_timing_report():
    rep = harness.run_timing_comparison(parse(WOMERSLEY), ("full", "hydrostatic"), repeats=1)
    assert set(rep.seconds) == {"full", "hydrostatic"}
    assert "ratio" in rep.table()


def test_cli_run_profiles_and_errors(tmp_path, capsys):
    cfg = tmp_path / "w.cfg"
    cfg.write_text(WOMERSLEY.replace("[output]\nlog_every = 0", "[output]\nlog_every = 0\nprofile_section = 0.5"))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert "error_u" in capsys.readouterr().out
    assert os.path.exists(out / "final.txt") and os.path.exists(out / "section_diameter_y.csv")
    assert cli.main(["profiles", "--config", str(cfg), "--checkpoint", str(out / "final.txt"),
                     "--section", "0.25", "--out", str(tmp_path / "p")]) == 0
    head, data = output.read_csv(tmp_path / "p" / "section_diameter_z.csv")
    assert head == ["s", "z", "u"] and np.all(data["s"] == 0.25)
    assert cli.main(["run", "--config", str(cfg), "--bogus-flag"]) != 0
    assert "usage" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) != 0
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL.replace("nphi = 1", "nphi = 0"))
    assert cli.main(["run", "--config", str(bad)]) != 0
    assert "line" in capsys.readouterr().err


def test_cli_verify_exit_zero(capsys):
    assert cli.main(["verify", "--seed", "3"]) == 0
    assert capsys.readouterr().out.count("PASS") == 5
