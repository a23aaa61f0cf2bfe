"""Built-in oracle suite run by ``vesselflow verify``.

Each check draws randomized instances from a seeded generator and compares
a solver against an independent reference (dense factorization, plain CG,
bisection, closed-form geometry).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import analytic
from .linsolve import (
    CrossSectionOperator,
    MildlyNonlinearSystem,
    SparseOperator,
    TridiagonalOperator,
    cg_solve,
    newton_mildly_nonlinear,
    perturbative_cross_section_solve,
)
from .mesh import Curvature, GridSpec, build_grid


@dataclass
class CheckResult:
    name: str
    instances: int
    worst: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.worst <= self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.instances} instances, worst {self.worst:.3e} (tol {self.tol:.0e})"


def random_spd_banded(rng, n, bandwidth=2):
    """Symmetric, strictly diagonally dominant banded matrix."""
    diags = []
    offs = []
    for k in range(1, bandwidth + 1):
        diags.append(rng.uniform(-1.0, 1.0, n - k))
        offs.append(k)
    A = sp.diags(diags + diags, offs + [-k for k in offs], shape=(n, n)).toarray()
    A += np.diag(np.abs(A).sum(axis=1) + rng.uniform(0.1, 2.0, n))
    return A


def random_cross_section(rng, nsys, nk, nl):
    rad = rng.uniform(0.0, 1.0, (nsys, nk, nl))
    rad[:, -1, :] = 0.0
    ang = rng.uniform(0.0, 1.0, (nsys, nk, nl)) if nl > 1 else np.zeros((nsys, nk, nl))
    diag = rad + np.roll(rad, 1, axis=1) * (np.arange(nk)[None, :, None] > 0)
    if nl > 1:
        diag = diag + ang + np.roll(ang, 1, axis=2)
    diag = diag + rng.uniform(0.05, 1.0, (nsys, nk, nl))
    return CrossSectionOperator(diag, rad, ang)


def check_cg_dense(rng, n_instances=100, tol=1e-10):
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(5, 200))
        A = random_spd_banded(rng, n, int(rng.integers(1, 3)))
        b = rng.normal(size=n)
        x = cg_solve(SparseOperator(sp.csr_matrix(A)), b, tol=1e-14).x
        ref = np.linalg.solve(A, b)
        worst = max(worst, float(np.linalg.norm(x - ref) / np.linalg.norm(ref)))
    return worst


def check_perturbative(rng, n_instances=100, tol=1e-10):
    worst = 0.0
    for _ in range(n_instances):
        op = random_cross_section(rng, int(rng.integers(1, 4)), int(rng.integers(2, 12)), int(rng.integers(1, 17)))
        b = rng.normal(size=op.diag.shape)
        x, _ = perturbative_cross_section_solve(op, b, tol=1e-14)
        ref = cg_solve(op, b, tol=1e-14, batched=True).x
        worst = max(worst, float(np.linalg.norm(x - ref) / np.linalg.norm(ref)))
    return worst


def check_newton_bisection(rng, n_instances=100, tol=1e-10):
    """Decoupled wall-law volumes V_i(p) = c_i (R0 + p / beta)^2 with a
    diagonal T: every component is a scalar root found by bisection."""
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 30))
        c = np.pi * rng.uniform(0.005, 0.02, n)
        R0 = rng.uniform(0.01, 0.03, n)
        beta = 10.0 ** rng.uniform(2, 5, n)
        t = 10.0 ** rng.uniform(-8, -4, n)
        p_true = rng.uniform(-0.3, 1.0, n) * beta * R0 * 0.5
        d = c * (R0 + p_true / beta) ** 2 + t * p_true
        T = TridiagonalOperator(t, np.zeros(n))
        system = MildlyNonlinearSystem(lambda p: c * (R0 + p / beta) ** 2,
                                       lambda p: 2 * c * (R0 + p / beta) / beta, T, d)
        res = newton_mildly_nonlinear(system, np.zeros(n), tol=1e-14,
                                      jacobian_solver=lambda dv, r: T.solve(r, extra_diag=dv))
        for i in range(n):
            f = lambda p: c[i] * (R0[i] + p / beta[i]) ** 2 + t[i] * p - d[i]  # noqa: E731
            lo = -R0[i] * beta[i] * (1 - 1e-12)
            hi = abs(p_true[i]) * 4 + 1.0
            ref = scipy.optimize.bisect(f, lo, hi, xtol=1e-15 * max(1.0, abs(p_true[i])), rtol=1e-15, maxiter=500)
            worst = max(worst, abs(res.p[i] - ref) / max(abs(ref), 1e-300))
        if any(b > a * (1 + 1e-12) for a, b in zip(res.residuals, res.residuals[1:])):
            worst = max(worst, np.inf)
    return worst


def check_volumes(rng, n_instances=20, tol=1e-12):
    """Cell volumes sum to the exact straight and toroidal volumes."""
    worst = 0.0
    for _ in range(n_instances):
        R0 = rng.uniform(0.01, 0.03)
        nx, nz, nphi = (int(v) for v in rng.integers(2, 12, 3))
        g = build_grid(GridSpec(nx=nx, nz=nz, nphi=nphi, length=rng.uniform(0.5, 2.0), equilibrium_radius=R0))
        exact = np.pi * R0**2 * g.spec.axis_length
        worst = max(worst, abs(g.total_volume() - exact) / exact)
        Rc = rng.uniform(5, 20) * R0
        g = build_grid(GridSpec(nx=nx, nz=nz, nphi=nphi, equilibrium_radius=R0,
                                curvature=Curvature(Rc, rng.uniform(0.2, 1.6))))
        exact = np.pi * R0**2 * g.spec.axis_length
        worst = max(worst, abs(g.total_volume() - exact) / exact)
    return worst


def check_mathieu_norm(rng, n_instances=10, tol=1e-10):
    """Mathieu normalisation sum against quadrature of ce^2."""
    worst = 0.0
    eta = np.linspace(0, 2 * np.pi, 4097)[:-1]
    for _ in range(n_instances):
        lam = 10.0 ** rng.uniform(0, 2)
        ec = analytic.EllipticCase(lam=lam)
        _, A = analytic.mathieu_coefficients(ec.mathieu_q, 60)
        ce = analytic.mathieu_ce(A[:, :5], eta)
        quad = np.sum(ce**2, axis=0) * (2 * np.pi / eta.size)
        I = analytic.mathieu_norm(A[:, :5])
        worst = max(worst, float(np.max(np.abs(quad - I) / np.abs(I))))
    return worst


CHECKS = {
    "cg_vs_dense": (check_cg_dense, 1e-10),
    "perturbative_vs_cg": (check_perturbative, 1e-10),
    "newton_vs_bisection": (check_newton_bisection, 1e-10),
    "cell_volumes": (check_volumes, 1e-12),
    "mathieu_norm": (check_mathieu_norm, 1e-10),
}

_COUNTS = {"cg_vs_dense": 100, "perturbative_vs_cg": 100, "newton_vs_bisection": 100,
           "cell_volumes": 20, "mathieu_norm": 10}


def run_verify(seed=0, names=None):
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, tol) in CHECKS.items():
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        worst = fn(rng, _COUNTS[name], tol)
        out.append(CheckResult(name, _COUNTS[name], worst, tol, time.perf_counter() - t0))
    return out
