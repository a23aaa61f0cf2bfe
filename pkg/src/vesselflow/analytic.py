"""Closed-form and series reference solutions.

All pressures are density-normalised.  The pulsatile solutions correspond
to the driving gradient  -dp/dx = (P/rho) cos(omega t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import VesselCollapse


class TruncationError(RuntimeError):
    """A series did not reach the requested accuracy."""


# ---------------------------------------------------------------------------
# steady flow in an elastic tube
# ---------------------------------------------------------------------------


@dataclass
class SteadyElasticCase:
    nu: float = 1e-3
    beta: float = 2500.0
    p_ext: float = 0.0
    R0: float = 0.025
    Q: float = 0.001875
    L: float = 1.0


def steady_radius(case: SteadyElasticCase, x):
    r5 = case.R0**5 - 40.0 * case.nu * case.Q * np.asarray(x, float) / (np.pi * case.beta)
    if np.any(r5 <= 0):
        raise VesselCollapse("steady taper collapses inside the domain")
    return r5**0.2


def steady_profile(case: SteadyElasticCase, x, z):
    R = steady_radius(case, x)
    z = np.asarray(z, float)
    return 2.0 * case.Q / (np.pi * R**4) * (R**2 - z**2)


def steady_pressure(case: SteadyElasticCase, x):
    return case.p_ext + case.beta * (steady_radius(case, x) - case.R0)


def poiseuille_profile(Q, R, z):
    """Parabolic profile carrying flow rate Q through radius R."""
    return 2.0 * Q / (np.pi * R**4) * (R**2 - np.asarray(z, float) ** 2)


# ---------------------------------------------------------------------------
# Womersley flow
# ---------------------------------------------------------------------------


def bessel_j0_complex(zc, cap=50.0, rtol=1e-16):
    """J0 of a complex argument from its power series.

    Terms are summed until they drop below ``rtol`` of the running sum; the
    argument magnitude is limited to ``cap`` to keep cancellation bounded.
    On the Womersley ray arg z = 3 pi/4 the relative error grows roughly as
    1e-16 exp(0.29 |z|): about 1e-13 at |z| = 25 and 1e-10 at the cap.
    """
    zc = np.asarray(zc, dtype=complex)
    if np.any(np.abs(zc) > cap):
        raise ValueError(f"|z| exceeds the series cap {cap}")
    x = -0.25 * zc * zc
    term = np.ones_like(zc)
    total = np.ones_like(zc)
    for m in range(1, 1000):
        term = term * x / (m * m)
        total = total + term
        if np.all(np.abs(term) <= rtol * np.maximum(np.abs(total), 1e-300)) and m > 2:
            return total
    raise TruncationError("J0 series did not converge")


@dataclass
class WomersleyCase:
    R: float = 0.025
    P: float = 1000.0
    rho: float = 1000.0
    omega: float = 2.0 * np.pi
    nu: float = 1e-3

    @property
    def alpha(self):
        return self.R * np.sqrt(self.omega / self.nu)

    @property
    def gradient(self):
        return self.P / self.rho


_I32 = np.exp(0.75j * np.pi)


def womersley_complex(case: WomersleyCase, z):
    """Complex amplitude of the Womersley profile (multiply by e^{i omega t})."""
    y = np.asarray(z, float) / case.R
    a = case.alpha
    ratio = bessel_j0_complex(a * y * _I32) / bessel_j0_complex(a * _I32)
    return case.gradient / (1j * case.omega) * (1.0 - ratio)


def womersley_profile(case: WomersleyCase, z, t):
    return np.real(womersley_complex(case, z) * np.exp(1j * case.omega * np.asarray(t, float)))


# ---------------------------------------------------------------------------
# elliptic section (Mathieu functions)
# ---------------------------------------------------------------------------


@dataclass
class EllipticCase:
    alpha1: float = 0.025
    alpha2: float = 0.0075
    lam: float = 10.0
    nu: float = 1e-4
    P: float = 1000.0
    rho: float = 1000.0
    n_trunc: int = 40

    def __post_init__(self):
        if not self.alpha1 > self.alpha2 > 0:
            raise ValueError("need alpha1 > alpha2 > 0")
        if not self.lam > 0:
            raise ValueError("frequency parameter must be positive")

    @property
    def d(self):
        return np.sqrt(self.alpha1**2 - self.alpha2**2)

    @property
    def xi0(self):
        return np.arctanh(self.alpha2 / self.alpha1)

    @property
    def sigma(self):
        return np.sqrt(2 * self.alpha1**2 * self.alpha2**2 / (self.alpha1**2 + self.alpha2**2))

    @property
    def omega(self):
        return self.lam * self.nu / self.sigma**2

    @property
    def mathieu_q(self):
        return 1j * self.lam * self.d**2 / (4 * self.sigma**2)

    @property
    def gradient(self):
        return self.P / self.rho


def _mathieu_matrix(Q, n):
    """Complex symmetric matrix of the even, pi-periodic recurrence.

    The first unknown is scaled by sqrt(2) so the matrix is symmetric.
    """
    M = np.zeros((n, n), dtype=complex)
    M[np.arange(n), np.arange(n)] = 4.0 * np.arange(n) ** 2
    off = np.full(n - 1, Q, dtype=complex)
    off[0] = np.sqrt(2.0) * Q
    M[np.arange(n - 1), np.arange(1, n)] = off
    M[np.arange(1, n), np.arange(n - 1)] = off
    return M


def mathieu_coefficients(mathieu_q, n_trunc=40, tol=1e-14):
    """Eigenvalues a_{2n} and coefficient vectors A_{2r}^{(2n)} for parameter -q.

    Returns ``(a, A)`` with ``A[r, n]`` the coefficient of cos(2 r eta) in
    ce_{2n}.  Columns are normalised with 2 A0^2 + sum A_{2r}^2 = 1 (no
    conjugation) and ordered by the real part of the eigenvalue.
    """
    Q = -complex(mathieu_q)
    M = _mathieu_matrix(Q, n_trunc)
    a, B = np.linalg.eig(M)
    order = np.argsort(a.real)
    a, B = a[order], B[:, order]
    norm = np.sqrt(np.sum(B * B, axis=0))
    B = B / norm
    A = B.copy()
    A[0] /= np.sqrt(2.0)
    if Q == 0:
        return a, np.where(np.abs(A) > 1e-12, A, 0.0)
    # modes resolved by the truncation: tail coefficient negligible
    tail = np.abs(A[-1]) / np.max(np.abs(A), axis=0)
    if np.any(tail[: n_trunc // 2] > tol):
        raise TruncationError("Mathieu recurrence truncated too early; raise n_trunc")
    return a, A


def mathieu_norm(A):
    """I_{2n} = 2 pi A0^2 + pi sum_{r>=1} A_{2r}^2 (unconjugated)."""
    return 2 * np.pi * A[0] ** 2 + np.pi * np.sum(A[1:] ** 2, axis=0)


def mathieu_ce(A, eta):
    r = np.arange(A.shape[0])
    return np.cos(2 * np.multiply.outer(np.asarray(eta, float), r)) @ A


def mathieu_Ce(A, xi):
    r = np.arange(A.shape[0])
    return np.cosh(2 * np.multiply.outer(np.asarray(xi, float), r)) @ A


def elliptic_coordinates(d, y, zz):
    """(xi, eta) from Cartesian section coordinates, y along the major axis."""
    w = np.arccosh((np.asarray(y, float) + 1j * np.asarray(zz, float)) / d)
    xi, eta = w.real, w.imag
    flip = xi < 0
    return np.where(flip, -xi, xi), np.mod(np.where(flip, -eta, eta), 2 * np.pi)


def elliptic_complex(case: EllipticCase, xi, eta):
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    n = case.n_trunc
    while True:
        try:
            _, A = mathieu_coefficients(case.mathieu_q, n)
            break
        except TruncationError:
            n *= 2
            if n > 1024:
                raise
    # only modes with a converged tail take part
    keep = np.abs(A[-1]) <= 1e-14 * np.max(np.abs(A), axis=0)
    A = A[:, keep]
    I = mathieu_norm(A)
    Ce0 = mathieu_Ce(A, case.xi0)
    coef = A[0] / (Ce0 * I)
    terms = mathieu_Ce(A, xi) * mathieu_ce(A, eta) * coef
    series = 2 * np.pi * np.sum(terms, axis=-1)
    return case.gradient / (1j * case.omega) * (1.0 - series)


def elliptic_profile(case: EllipticCase, xi, eta, t):
    return np.real(elliptic_complex(case, xi, eta) * np.exp(1j * case.omega * np.asarray(t, float)))


def elliptic_profile_yz(case: EllipticCase, y, zz, t):
    xi, eta = elliptic_coordinates(case.d, y, zz)
    return elliptic_profile(case, np.minimum(xi, case.xi0), eta, t)


def ellipse_radius(alpha1, alpha2, phi):
    """Polar radius of the ellipse with semi-axes alpha1 (phi=0) and alpha2."""
    phi = np.asarray(phi, float)
    return alpha1 * alpha2 / np.sqrt((alpha2 * np.cos(phi)) ** 2 + (alpha1 * np.sin(phi)) ** 2)


# ---------------------------------------------------------------------------
# curved tube
# ---------------------------------------------------------------------------


@dataclass
class DeanCase:
    R0: float
    Rc: float
    Re: float

    def __post_init__(self):
        if self.R0 <= 0 or self.Rc <= 0 or self.Re < 0:
            raise ValueError("R0, Rc must be positive and Re non-negative")


def dean_number(case: DeanCase):
    return 4.0 * case.Re * np.sqrt(2.0 * case.R0 / case.Rc)


def mean_velocity(Re, nu, R0):
    """U0 from the diameter-based Reynolds number."""
    return Re * nu / (2.0 * R0)
