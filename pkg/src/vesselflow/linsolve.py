"""Banded SPD solvers and the Newton iteration for mildly nonlinear systems.

Operators are matrix-free: anything exposing ``apply(x)`` and ``diagonal()``
can be handed to :func:`cg_solve`.  Cross-section systems come in batches
(one pentadiagonal system per axial face or per axial segment) and are
stored as :class:`CrossSectionOperator` with the batch on axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class NonConvergence(RuntimeError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


@dataclass
class TridiagonalOperator:
    """Symmetric tridiagonal matrix, ``off[i]`` couples rows i and i+1."""

    diag: np.ndarray
    off: np.ndarray

    symmetric = True

    def apply(self, x):
        y = self.diag * x
        y[:-1] -= self.off[:-1] * x[1:]
        y[1:] -= self.off[:-1] * x[:-1]
        return y

    def diagonal(self):
        return self.diag

    def solve(self, rhs, extra_diag=None):
        d = self.diag if extra_diag is None else self.diag + extra_diag
        lower = np.zeros_like(d)
        lower[1:] = -self.off[:-1]
        upper = np.zeros_like(d)
        upper[:-1] = -self.off[:-1]
        return thomas_solve(lower, d, upper, rhs)


@dataclass
class CrossSectionOperator:
    """A batch of symmetric pentadiagonal cross-section systems.

    Arrays have shape ``(nsys, nk, nl)``: radial index k, periodic angular
    index l.  The matrix acts as::

        (A x)[k,l] = diag x[k,l] - rad[k,l] x[k+1,l] - rad[k-1,l] x[k-1,l]
                     - ang[k,l] x[k,l+1] - ang[k,l-1] x[k,l-1]

    Inactive unknowns are identity rows with zero couplings.
    """

    diag: np.ndarray
    rad: np.ndarray
    ang: np.ndarray

    symmetric = True

    def apply(self, x):
        y = self.diag * x
        rx = self.rad * x
        y[:, :-1, :] -= self.rad[:, :-1, :] * x[:, 1:, :]
        y[:, 1:, :] -= rx[:, :-1, :]
        if x.shape[2] > 1:
            y -= self.ang * np.roll(x, -1, axis=2)
            y -= np.roll(self.ang * x, 1, axis=2)
        return y

    def diagonal(self):
        return self.diag

    def radial_part_diagonal(self):
        """Diagonal with the angular coupling contributions removed."""
        if self.diag.shape[2] == 1:
            return self.diag
        return self.diag - self.ang - np.roll(self.ang, 1, axis=2)

    def solve_radial(self, rhs):
        """Solve the independent radial tridiagonal systems (angular terms dropped)."""
        d = self.radial_part_diagonal()
        lower = np.zeros_like(d)
        lower[:, 1:, :] = -self.rad[:, :-1, :]
        upper = np.zeros_like(d)
        upper[:, :-1, :] = -self.rad[:, :-1, :]
        return thomas_solve(lower, d, upper, rhs, axis=1)


class SparseOperator:
    """Thin wrapper over a scipy sparse SPD matrix (storage only)."""

    symmetric = True

    def __init__(self, matrix):
        self.matrix = sp.csr_matrix(matrix)
        self._diag = self.matrix.diagonal()

    def apply(self, x):
        return self.matrix @ x

    def diagonal(self):
        return self._diag


class ShiftedOperator:
    """``A + diag(d)`` without copying A."""

    symmetric = True

    def __init__(self, base, shift):
        self.base = base
        self.shift = shift

    def apply(self, x):
        return self.base.apply(x) + self.shift * x

    def diagonal(self):
        return self.base.diagonal() + self.shift


# --------------------------------------------------------------------------
# direct tridiagonal solve
# --------------------------------------------------------------------------


def thomas_solve(lower, diag, upper, rhs, axis=-1):
    """Solve tridiagonal systems along ``axis`` (batched over the others).

    ``lower[i]`` multiplies x[i-1] and ``upper[i]`` multiplies x[i] + 1 in
    row i; ``lower[0]`` and ``upper[-1]`` are ignored.
    """
    lower = np.moveaxis(np.asarray(lower, dtype=float), axis, 0)
    diag = np.moveaxis(np.asarray(diag, dtype=float), axis, 0)
    upper = np.moveaxis(np.asarray(upper, dtype=float), axis, 0)
    rhs = np.moveaxis(np.asarray(rhs, dtype=float), axis, 0)
    n = diag.shape[0]
    cp = np.empty_like(diag)
    dp = np.empty(np.broadcast_shapes(diag.shape, rhs.shape))
    den = diag[0]
    if np.any(den == 0.0):
        raise ZeroDivisionError("zero pivot in tridiagonal solve")
    cp[0] = upper[0] / den
    dp[0] = rhs[0] / den
    for i in range(1, n):
        den = diag[i] - lower[i] * cp[i - 1]
        if np.any(den == 0.0):
            raise ZeroDivisionError("zero pivot in tridiagonal solve")
        cp[i] = upper[i] / den
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    x = np.empty_like(dp)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.moveaxis(x, 0, axis)


# --------------------------------------------------------------------------
# conjugate gradients
# --------------------------------------------------------------------------


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def _dot(a, b, batched):
    if batched:
        return np.sum(a * b, axis=tuple(range(1, a.ndim)), keepdims=True)
    return float(np.dot(a.ravel(), b.ravel()))


def cg_solve(system, b, tol=1e-12, x0=None, maxiter=None, batched=False, ref_norm=None):
    """Jacobi-preconditioned conjugate gradients.

    With ``batched=True`` axis 0 indexes independent systems that share one
    loop but keep their own step lengths and stopping tests.  Convergence is
    ``||r|| <= tol * ref`` with ``ref = ||b||`` unless ``ref_norm`` is given.
    Raises :class:`NonConvergence` after ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if maxiter is None:
        maxiter = max(10 * b[0].size if batched else 10 * b.size, 100)
    inv_d = 1.0 / system.diagonal()
    ref = np.sqrt(_dot(b, b, batched)) if ref_norm is None else ref_norm
    r = b - system.apply(x) if x0 is not None else b.copy()
    rnorm = np.sqrt(_dot(r, r, batched))
    limit = tol * ref
    active = rnorm > limit
    if not np.any(active):
        return CGResult(x, 0, float(np.max(rnorm)))
    z = inv_d * r
    p = z.copy()
    rz = _dot(r, z, batched)
    it = 0
    while it < maxiter:
        it += 1
        ap = system.apply(p)
        pap = _dot(p, ap, batched)
        if batched:
            alpha = np.where(active & (pap > 0), rz / np.where(pap > 0, pap, 1.0), 0.0)
        else:
            if pap <= 0:
                raise NonConvergence("operator not positive definite", float(rnorm), it)
            alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = np.sqrt(_dot(r, r, batched))
        active = rnorm > limit
        if not np.any(active):
            return CGResult(x, it, float(np.max(rnorm)))
        z = inv_d * r
        rz_new = _dot(r, z, batched)
        if batched:
            beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        else:
            beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    raise NonConvergence(
        f"CG did not converge in {maxiter} iterations (residual {np.max(rnorm):.3e})",
        float(np.max(rnorm)),
        it,
    )


def perturbative_cross_section_solve(system: CrossSectionOperator, rhs, tol=1e-12, maxiter=None):
    """Slice-wise tridiagonal guess followed by a CG correction.

    Returns ``(x, cg_iterations)``.  When the radial guess already satisfies
    the full system (axisymmetric data) the correction step is skipped.
    """
    rhs = np.asarray(rhs, dtype=float)
    guess = system.solve_radial(rhs)
    if rhs.shape[2] == 1:
        return guess, 0
    res = rhs - system.apply(guess)
    ref = np.sqrt(_dot(rhs, rhs, True))
    rn = np.sqrt(_dot(res, res, True))
    if np.all(rn <= tol * ref):
        return guess, 0
    out = cg_solve(system, res, tol=tol, batched=True, ref_norm=ref, maxiter=maxiter)
    return guess + out.x, out.iterations


# --------------------------------------------------------------------------
# Newton for  V(p) + T p = b
# --------------------------------------------------------------------------


@dataclass
class MildlyNonlinearSystem:
    """``volume(p) + T p = rhs`` with componentwise nondecreasing ``volume``.

    ``volume`` and ``dvolume`` return arrays shaped like p.  ``volume`` may
    be an increment relative to a reference state; only differences matter.
    """

    volume: Callable[[np.ndarray], np.ndarray]
    dvolume: Callable[[np.ndarray], np.ndarray]
    linear: object
    rhs: np.ndarray

    def residual(self, p):
        return self.volume(p) + self.linear.apply(p) - self.rhs


@dataclass
class NewtonResult:
    p: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    cg_iterations: int = 0


def newton_mildly_nonlinear(system: MildlyNonlinearSystem, p0, tol=1e-10, scale=None,
                            maxiter=50, cg_tol=1e-12, jacobian_solver=None):
    """Damped Newton iteration; the Jacobian ``T + diag(V')`` is SPD.

    Stops when ``max|F(p)| <= tol * scale``; ``scale`` defaults to
    ``max(|rhs|)``.  ``jacobian_solver(dv, r)`` may replace the default CG
    solve of ``(T + diag(dv)) dp = r``.
    """
    p = np.array(p0, dtype=float)
    if scale is None:
        scale = float(np.max(np.abs(system.rhs))) if system.rhs.size else 1.0
        scale = scale if scale > 0 else 1.0
    limit = tol * scale
    f = system.residual(p)
    fn = float(np.max(np.abs(f))) if f.size else 0.0
    history = [fn]
    cg_its = 0
    it = 0
    while fn > limit:
        if it >= maxiter:
            raise NonConvergence(f"Newton did not converge (residual {fn:.3e})", fn, it)
        it += 1
        dv = system.dvolume(p)
        if jacobian_solver is not None:
            dp = jacobian_solver(dv, f)
        else:
            jac = ShiftedOperator(system.linear, dv)
            out = cg_solve(jac, f, tol=cg_tol, x0=None)
            dp = out.x
            cg_its += out.iterations
        step = 1.0
        for _ in range(40):
            trial = p - step * dp
            try:
                f_new = system.residual(trial)
            except ValueError:
                step *= 0.5
                continue
            fn_new = float(np.max(np.abs(f_new)))
            if fn_new <= fn:
                break
            step *= 0.5
        else:
            raise NonConvergence("Newton line search failed", fn, it)
        if fn_new >= fn and fn_new > limit:
            # stagnation at rounding level
            if fn_new <= 10 * limit:
                p, f, fn = trial, f_new, fn_new
                history.append(fn)
                break
            raise NonConvergence(f"Newton stagnated (residual {fn:.3e})", fn, it)
        p, f, fn = trial, f_new, fn_new
        history.append(fn)
    return NewtonResult(p, it, history, cg_its)
