"""Field profiles: the symmetric 2x2 matrix unknown and derived objects.

The public data model stores the matrix entries (q11, x, q22) and their first
derivatives at the nodes, plus psi = -ln det q.  Internally the solvers work
in the log/angle chart

    p     = ln q11
    theta = atanh(x / q11)
    psi   = -ln det q

which maps R^3 bijectively onto the admissible cone {q positive definite,
|x| < q11} and evaluates every tail-sensitive quantity without catastrophic
cancellation:  q22 = e^{-psi-p} + e^{p} tanh^2(theta) is a sum of positives,
and det q = e^{-psi} never involves a subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ProfileError
from .mesh import Mesh

__all__ = [
    "SymmetricMatrixProfile",
    "BackgroundFields",
    "GravSolution",
    "chart_from_q",
    "q_from_chart",
    "log_sech",
    "sech2",
    "softplus",
]


# ---------------------------------------------------------------------------
# stable scalar helpers
# ---------------------------------------------------------------------------

def softplus(t):
    """ln(1 + e^t), stable for large |t|."""
    return np.logaddexp(0.0, t)


def log_sech(theta):
    """ln sech(theta) = ln 2 - |theta| - ln(1 + e^{-2|theta|})."""
    a = np.abs(theta)
    return np.log(2.0) - a - np.log1p(np.exp(-2.0 * a))


def sech2(theta):
    """sech^2(theta) = 4*sigma(2θ)*sigma(-2θ); underflows gracefully."""
    return 4.0 * expit(2.0 * np.asarray(theta, dtype=float)) * expit(
        -2.0 * np.asarray(theta, dtype=float)
    )


def one_minus_tanh(theta):
    """1 - tanh(theta) = 2*sigma(-2θ) without cancellation at theta >> 1."""
    return 2.0 * expit(-2.0 * np.asarray(theta, dtype=float))


def one_plus_tanh(theta):
    """1 + tanh(theta) = 2*sigma(2θ) without cancellation at theta << -1."""
    return 2.0 * expit(2.0 * np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# chart transforms
# ---------------------------------------------------------------------------

def q_from_chart(p, theta, psi):
    """Map chart fields to matrix entries (q11, x, q22)."""
    p = np.asarray(p, dtype=float)
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    q11 = np.exp(p)
    xi = np.tanh(theta)
    x = q11 * xi
    q22 = np.exp(-psi - p) + q11 * xi * xi
    return q11, x, q22


def chart_from_q(q11, x, q22=None, psi=None):
    """Map matrix entries to chart fields (p, theta, psi).

    Either ``q22`` or ``psi`` must be given.  When only (q11, x, q22) is
    available, psi is computed from det q = q11*q22 - x^2 directly, which is
    fine in the core of the domain but loses relative accuracy in the far
    tails; callers holding a psi profile (e.g. re-reading an exported CSV)
    should pass it instead.
    """
    q11 = np.asarray(q11, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(q11 <= 0.0):
        raise ProfileError("q11 must be positive everywhere")
    if np.any(np.abs(x) >= q11):
        raise ProfileError("|x| must stay below q11 (positive definiteness)")
    if psi is None:
        if q22 is None:
            raise ProfileError("need q22 or psi to build the chart")
        q22 = np.asarray(q22, dtype=float)
        det = q11 * q22 - x * x
        if np.any(det <= 0.0):
            raise ProfileError("det q must be positive everywhere")
        psi = -np.log(det)
    else:
        psi = np.asarray(psi, dtype=float)
    p = np.log(q11)
    theta = np.arctanh(x / q11)
    return p, theta, psi


def q_derivatives_from_chart(p, theta, psi, pd, thetad, psid):
    """First derivatives (q11', x', q22') from chart values and derivatives."""
    P = np.exp(p)
    xi = np.tanh(theta)
    s2 = sech2(theta)
    E = np.exp(-psi - p)
    q11d = P * pd
    xd = P * (pd * xi + s2 * thetad)
    q22d = -E * (psid + pd) + P * (pd * xi * xi + 2.0 * xi * s2 * thetad)
    return q11d, xd, q22d


# ---------------------------------------------------------------------------
# profile containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetricMatrixProfile:
    """Nodal values of the real symmetric matrix q and its first derivative.

    Invariants (checked on construction): q11 > 0, q22 > 0 and
    det q = q11*q22 - x^2 > 0 at every node, so psi = -ln det q is finite.
    """

    mesh: Mesh
    q11: np.ndarray
    x: np.ndarray
    q22: np.ndarray
    q11prime: np.ndarray
    xprime: np.ndarray
    q22prime: np.ndarray
    psi: np.ndarray
    # chart fields; present whenever the profile came out of the solver
    p: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    pprime: Optional[np.ndarray] = None
    thetaprime: Optional[np.ndarray] = None
    psiprime: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.mesh.size
        for name in ("q11", "x", "q22", "q11prime", "xprime", "q22prime", "psi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ProfileError(f"{name} must have shape ({m},)")
            object.__setattr__(self, name, arr)
        if np.any(self.q11 <= 0.0):
            raise ProfileError("q11 must be positive at every node")
        if np.any(self.q22 <= 0.0):
            raise ProfileError("q22 must be positive at every node")
        if not np.all(np.isfinite(self.psi)):
            raise ProfileError("psi must be finite at every node")
        if self.p is None:
            # Externally assembled data: check semi-definiteness on the raw
            # entries, with rounding slack because x^2 and q11*q22 agree to
            # machine precision in the far tails.  Chart-built profiles are
            # positive by construction (|tanh| < 1, det = e^{-psi}), and the
            # raw test would spuriously fail out there.
            gap = self.x * self.x - self.q11 * self.q22
            tol = 1e-9 * np.maximum(self.q11 * self.q22, 1e-300)
            if np.any(gap > tol):
                raise ProfileError("x^2 must not exceed q11*q22 (definiteness)")

    @classmethod
    def from_chart(cls, mesh: Mesh, p, theta, psi, pd, thetad, psid):
        q11, x, q22 = q_from_chart(p, theta, psi)
        q11d, xd, q22d = q_derivatives_from_chart(p, theta, psi, pd, thetad, psid)
        return cls(
            mesh=mesh,
            q11=q11,
            x=x,
            q22=q22,
            q11prime=q11d,
            xprime=xd,
            q22prime=q22d,
            psi=np.asarray(psi, dtype=float),
            p=np.asarray(p, dtype=float),
            theta=np.asarray(theta, dtype=float),
            pprime=np.asarray(pd, dtype=float),
            thetaprime=np.asarray(thetad, dtype=float),
            psiprime=np.asarray(psid, dtype=float),
        )

    def det(self) -> np.ndarray:
        """det q at the nodes, evaluated stably through psi."""
        return np.exp(-self.psi)

    def matrix_at(self, i: int) -> np.ndarray:
        return np.array(
            [[self.q11[i], self.x[i]], [self.x[i], self.q22[i]]], dtype=float
        )

    def chart_arrays(self):
        """(p, theta, psi) nodal arrays, reconstructing if necessary."""
        if self.p is not None and self.theta is not None:
            return self.p, self.theta, self.psi
        p, theta, psi = chart_from_q(self.q11, self.x, psi=self.psi)
        return p, theta, psi


@dataclass(frozen=True)
class BackgroundFields:
    """Decoupled (s=0) vortex data feeding the coupled solve.

    detg0 is tied to q0 by definition,
        detg0(t) = det q0(t) * (1 + e^t)^{2N} * e^{-N t} / 4,
    and that formula is asserted at construction rather than trusted.
    u0 has w-weighted mean zero on the mesh.
    """

    params: "ModelParams"
    mesh: Mesh
    q0: SymmetricMatrixProfile
    detg0: np.ndarray
    u0: np.ndarray
    u0prime: np.ndarray
    degree_residual: float
    u0_end_slope: float

    def __post_init__(self):
        m = self.mesh.size
        for name in ("detg0", "u0", "u0prime"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ProfileError(f"{name} must have shape ({m},)")
            object.__setattr__(self, name, arr)
        if np.any(self.detg0 <= 0.0):
            raise ProfileError("detg0 must be positive")
        t = self.mesh.nodes
        n = self.params.N
        log_expected = (
            -self.q0.psi + 2.0 * n * softplus(t) - n * t - np.log(4.0)
        )
        err = np.max(np.abs(np.log(self.detg0) - log_expected))
        if err > 1e-10:
            raise ProfileError(
                f"detg0 does not satisfy its defining formula (max log error {err:.3e})"
            )


@dataclass(frozen=True)
class GravSolution:
    """Converged solution of the coupled system at a given (lambda, s).

    ``coeff`` caches the conformal density Lambda(t) = lambda_s(t) *
    exp(-2*alpha*q11 - psi/N); it is strictly positive.
    """

    params: "ModelParams"
    mesh: Mesh
    q: SymmetricMatrixProfile
    residual_norm: float
    coeff: np.ndarray
    path_max_q11: float = float("nan")
    newton_iterations: int = 0

    def __post_init__(self):
        coeff = np.asarray(self.coeff, dtype=float)
        if coeff.shape != (self.mesh.size,):
            raise ProfileError("coeff must be nodal")
        if np.any(coeff <= 0.0):
            raise ProfileError("coeff must be positive at every node")
        object.__setattr__(self, "coeff", coeff)

    @property
    def psi(self) -> np.ndarray:
        return self.q.psi

    @property
    def psiprime(self) -> np.ndarray:
        if self.q.psiprime is None:
            raise ProfileError("solution lacks a psi derivative profile")
        return self.q.psiprime

    def volume(self) -> float:
        """Total measure of the mapped region, integral of 2*coeff dt."""
        return float(self.mesh.trapz(2.0 * self.coeff))
