"""Case setup, runs, error norms, convergence and timing studies."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytic, stepper
from .config import CaseConfig
from .fields import FieldState, FluidParams, SolverParams, WallLaw
from .mesh import Curvature, Grid, GridSpec, build_grid

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# case construction
# ---------------------------------------------------------------------------


@dataclass
class Case:
    grid: Grid
    state: FieldState
    fluid: FluidParams
    law: WallLaw
    params: SolverParams
    drivers: stepper.Drivers
    options: stepper.StepOptions
    steps: int
    config: CaseConfig


def grid_spec(cfg: CaseConfig) -> GridSpec:
    g = cfg["geometry"]
    radius = g["radius"]
    if g["minor_radius"] is not None:
        a1, a2 = radius, g["minor_radius"]
        radius = lambda x, phi: analytic.ellipse_radius(a1, a2, phi)  # noqa: E731
    curv = None
    if g["curvature_radius"] is not None:
        curv = Curvature(g["curvature_radius"], np.deg2rad(g["curvature_angle_deg"]))
    return GridSpec(nx=g["nx"], nz=g["nz"], nphi=g["nphi"], length=g["length"],
                    equilibrium_radius=radius, curvature=curv,
                    radial_ratio=g["radial_ratio"], capacity=g["capacity"])


def _womersley(amplitude, omega, R, nu):
    if amplitude == 0.0:
        return None
    if omega <= 0:
        raise ValueError("an oscillating profile needs a positive womersley_omega")
    return analytic.WomersleyCase(R=R, P=amplitude, rho=1.0, omega=omega, nu=nu)


def _driver(sec, R, nu):
    if sec["kind"] == "pressure":
        return stepper.PressureDriver(sec["value"], sec["amplitude"], sec["omega"], sec["phase"])
    return stepper.VelocityDriver(sec["Q"], _womersley(sec["womersley_amplitude"], sec["womersley_omega"], R, nu))


def initial_state(cfg: CaseConfig, grid: Grid) -> FieldState:
    ini = cfg["initial"]
    nu = cfg["fluid"]["nu"]
    st = FieldState.zeros(grid.nx, grid.ncap, grid.nphi)
    kind = ini["velocity"]
    R = grid.Ru[:, None, :]
    z = grid.zc_u
    u = np.zeros_like(st.u)
    if kind in ("poiseuille", "pulsatile"):
        u += analytic.poiseuille_profile(ini["Q"], R, z)
    if kind in ("womersley", "pulsatile"):
        wc = _womersley(ini["womersley_amplitude"], ini["womersley_omega"], 1.0, nu)
        if wc is not None:
            # profile in the unit tube, stretched to the local radius
            wc.R = float(np.mean(grid.R0))
            u += analytic.womersley_profile(wc, np.minimum(z / R, 1.0) * wc.R, 0.0)
    st.u = np.where(grid.active_u, u, 0.0)
    st.p_tilde = -ini["pressure_gradient"] * grid.x_c
    return st


def build_case(cfg: CaseConfig) -> Case:
    spec = grid_spec(cfg)
    grid = build_grid(spec)
    fl = cfg["fluid"]
    n = cfg["numerics"]
    law = WallLaw(beta=cfg["wall"]["beta"], p_ext=cfg["wall"]["p_ext"], R0=grid.R0)
    params = SolverParams(dt=n["dt"], theta=n["theta"], theta_prime=n["theta_prime"],
                          cg_tol=n["cg_tol"], newton_tol=n["newton_tol"])
    R_in = float(np.mean(grid.R0[0]))
    R_out = float(np.mean(grid.R0[-1]))
    drivers = stepper.Drivers(_driver(cfg["inlet"], R_in, fl["nu"]), _driver(cfg["outlet"], R_out, fl["nu"]))
    opts = stepper.StepOptions(mode=n["mode"], advection=n["advection"],
                               axial_viscosity=n["axial_viscosity"], wall_model=n["wall_model"])
    return Case(grid, initial_state(cfg, grid), FluidParams(nu=fl["nu"], rho=fl["rho"]), law, params,
                drivers, opts, n["steps"], cfg)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    case: Case
    grid: Grid
    state: FieldState
    stats: list
    seconds: float
    volumes: list = field(default_factory=list)


def run_case(cfg_or_case, steps=None, on_step=None, log_every=None, record_volume=False) -> RunResult:
    """Advance a case.  ``on_step(n, grid, state, stats)`` is called after each step.

    The reported wall time covers the time loop only.
    """
    case = cfg_or_case if isinstance(cfg_or_case, Case) else build_case(cfg_or_case)
    nsteps = case.steps if steps is None else steps
    every = case.config["output"]["log_every"] if log_every is None else log_every
    grid, state = case.grid, case.state
    stats = []
    volumes = [grid.total_volume()] if record_volume else []
    elapsed = 0.0
    for n in range(nsteps):
        t0 = time.perf_counter()
        grid, state, s = stepper.advance(grid, state, case.fluid, case.law, case.params,
                                         case.drivers, case.options, n)
        elapsed += time.perf_counter() - t0
        stats.append(s)
        if record_volume:
            volumes.append(grid.total_volume())
        if every and (n % every == 0 or n == nsteps - 1):
            log.info(s.line())
        if on_step is not None:
            on_step(n, grid, state, s)
    return RunResult(case, grid, state, stats, elapsed, volumes)


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------


def l2_error(values, reference, weights, normalize=True):
    """Volume-weighted L2 norm of ``values - reference``.

    With ``normalize`` the result is the root-mean-square over the total
    weight, so a constant offset c gives c.  Without it the result is
    sqrt(sum w e^2), the unscaled discrete norm.
    """
    values = np.asarray(values, float)
    reference = np.asarray(reference, float)
    weights = np.asarray(weights, float)
    e2 = np.sum(weights * (values - reference) ** 2)
    if normalize:
        total = np.sum(weights)
        return float(np.sqrt(e2 / total)) if total > 0 else 0.0
    return float(np.sqrt(e2))


def axial_velocity_error(grid: Grid, state: FieldState, reference, normalize=True):
    """L2 error of u against ``reference(x, z, phi)`` over active axial faces."""
    ref = reference(grid.x_f[:, None, None], grid.zc_u, grid.phi_c[None, None, :])
    w = np.where(grid.active_u, grid.area_u * grid.dx, 0.0)
    return l2_error(np.where(grid.active_u, state.u, 0.0), np.where(grid.active_u, ref, 0.0), w, normalize)


def radius_error(grid: Grid, reference, normalize=True):
    """L2 error of the wall radius against ``reference(x)``; each axial
    segment weighs dx, spread evenly over the slices."""
    ref = np.broadcast_to(np.asarray(reference(grid.x_c), float)[:, None], grid.R.shape)
    w = np.full(grid.R.shape, grid.dx / grid.nphi)
    return l2_error(grid.R, ref, w, normalize)


def observed_orders(errors, ratio=2.0):
    """log_ratio(e_coarse / e_fine) for successive entries."""
    e = np.asarray(errors, float)
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))


def reference_errors(cfg: CaseConfig, grid: Grid, state: FieldState, normalize=False):
    """Errors against the analytic reference named in the config."""
    ref = cfg["reference"]["case"]
    nu = cfg["fluid"]["nu"]
    out = {}
    if ref == "steady_elastic":
        inlet = cfg["inlet"]
        sc = analytic.SteadyElasticCase(nu=nu, beta=cfg["wall"]["beta"], p_ext=cfg["wall"]["p_ext"],
                                        R0=cfg["geometry"]["radius"], Q=inlet["Q"], L=cfg["geometry"]["length"])
        out["u"] = axial_velocity_error(grid, state, lambda x, z, phi: analytic.steady_profile(sc, x, z), normalize)
        out["R"] = radius_error(grid, lambda x: analytic.steady_radius(sc, x), normalize)
    elif ref == "womersley":
        wc = womersley_reference(cfg)
        out["u"] = axial_velocity_error(grid, state, lambda x, z, phi: analytic.womersley_profile(wc, z, state.t),
                                        normalize)
    elif ref == "elliptic":
        ec = elliptic_reference(cfg)
        errs, peak = elliptic_axis_errors(ec, grid, state)
        out["u_axes"] = max(errs) / peak if peak > 0 else 0.0
    return out


def womersley_reference(cfg: CaseConfig):
    out = cfg["outlet"]
    L = cfg["geometry"]["length"]
    # outlet pressure -(P L / rho) cos(omega t) with the inlet held at zero
    return analytic.WomersleyCase(R=cfg["geometry"]["radius"], P=-out["amplitude"] / L, rho=1.0,
                                  omega=out["omega"], nu=cfg["fluid"]["nu"])


def elliptic_reference(cfg: CaseConfig):
    g = cfg["geometry"]
    out = cfg["outlet"]
    return analytic.EllipticCase(alpha1=g["radius"], alpha2=g["minor_radius"], lam=cfg["reference"]["lam"],
                                 nu=cfg["fluid"]["nu"], P=-out["amplitude"] / g["length"], rho=1.0)


def elliptic_axis_errors(ec, grid: Grid, state: FieldState, face=None):
    """Max pointwise error on the four half-axes and the instantaneous peak."""
    f = grid.nx // 2 if face is None else face
    n = grid.nphi
    errs = []
    peak = 0.0
    for l in (0, n // 4, n // 2, 3 * n // 4):
        act = grid.active_u[f, :, l]
        z = grid.zc_u[f, act, l]
        phi = grid.phi_c[l]
        ue = analytic.elliptic_profile_yz(ec, z * np.cos(phi), z * np.sin(phi), state.t)
        errs.append(float(np.max(np.abs(state.u[f, act, l] - ue))))
        peak = max(peak, float(np.max(np.abs(ue))))
    return errs, peak


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


@dataclass
class ErrorReport:
    meshes: list
    errors: dict
    orders: dict
    seconds: list

    def table(self):
        fields = list(self.errors)
        head = ["Nx", "Nz", "Nphi", "Nt"]
        for f in fields:
            head += [f"e_{f}", f"O_{f}"]
        rows = [" ".join(f"{h:>12}" for h in head)]
        for i, m in enumerate(self.meshes):
            row = [str(v) for v in m]
            for f in fields:
                row.append(f"{self.errors[f][i]:.4E}")
                row.append(f"{self.orders[f][i - 1]:.2f}" if i > 0 else "")
            rows.append(" ".join(f"{c:>12}" for c in row))
        return "\n".join(rows)


def run_convergence(cfg: CaseConfig, meshes, normalize=False) -> ErrorReport:
    """Run ``cfg`` on each ``(nx, nz, nphi, nt)`` mesh; nt rescales dt so the
    final time stays fixed.  Orders assume successive halving."""
    t_end = cfg["numerics"]["dt"] * cfg["numerics"]["steps"]
    errors = {}
    seconds = []
    for nx, nz, nphi, nt in meshes:
        c = cfg.with_overrides(geometry__nx=nx, geometry__nz=nz, geometry__nphi=nphi,
                               numerics__steps=nt, numerics__dt=t_end / nt)
        res = run_case(c, log_every=0)
        seconds.append(res.seconds)
        for k, v in reference_errors(c, res.grid, res.state, normalize).items():
            errors.setdefault(k, []).append(v)
    orders = {k: observed_orders(v) for k, v in errors.items()}
    return ErrorReport([tuple(m) for m in meshes], errors, orders, seconds)


@dataclass
class TimingReport:
    modes: list
    seconds: dict
    runs: dict

    def ratio(self, slow, fast):
        return self.seconds[slow] / self.seconds[fast]

    def table(self):
        base = self.modes[0]
        lines = [f"{'mode':>12} {'seconds':>12} {'ratio':>8}"]
        for m in self.modes:
            lines.append(f"{m:>12} {self.seconds[m]:>12.4E} {self.seconds[m] / self.seconds[base]:>8.2f}")
        return "\n".join(lines)


def run_timing_comparison(cfg: CaseConfig, modes=("full", "hydrostatic", "direct"), repeats=3, steps=None):
    """Median time-loop wall time per mode over ``repeats`` runs."""
    seconds = {}
    runs = {}
    for m in modes:
        c = cfg.with_overrides(numerics__mode=m)
        t = []
        for _ in range(repeats):
            res = run_case(c, steps=steps, log_every=0)
            t.append(res.seconds)
        seconds[m] = float(np.median(t))
        runs[m] = t
    return TimingReport(list(modes), seconds, runs)
