"""Conformal density entering the reduced ODE system.

The right-hand side of the coupled system is Lambda(t) * (E q - tau I) with

    Lambda(t) = A(t) * exp(-2*alpha*q11(t) - psi(t)/N),

where the t-dependent coupling A(t) is assembled from the decoupled
background data and the interpolation/scale parameters (s, lambda):

    ln A(t) = ln(C_N * V0) + s*ln(lambda) - (1/N) ln detg0(t)
              + 2*alpha*(1-s)*q0_11(t) + s*u0(t),
    C_N = 1 / (2 * 4^(1/N)).

At s=0 the q0-dependent pieces cancel against detg0 and Lambda evaluated on
the background profile collapses to the fixed density (V0/2) * w(t) of the
decoupled problem; at s=1 the coupling is constant in t (up to mesh error),
so lambda and V0 enter the coupled problem only through the product
`lambda * V0 * exp(u0-shift)`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams, fs_weight
from .mesh import Mesh

__all__ = [
    "background_density",
    "log_coupling_profile",
    "FixedDensity",
    "SelfConsistentDensity",
    "exp_clip",
]

# exp(700) ~ 1e304: huge enough that a clipped overflow still makes any
# Armijo candidate look terrible, small enough to stay finite.
_EXP_CAP = 700.0


def exp_clip(x):
    """exp with the argument capped at 700 to keep intermediates finite."""
    return np.exp(np.minimum(x, _EXP_CAP))


def background_density(params: ModelParams, mesh: Mesh) -> np.ndarray:
    """Fixed density (V0/2) * w(t) of the decoupled vortex problem."""
    return 0.5 * params.V0 * fs_weight(mesh.nodes)


def log_coupling_profile(params: ModelParams, background, s=None, lam=None):
    """Nodal ln A(t) for given (s, lambda), defaulting to the params' values."""
    if s is None:
        s = params.s
    if lam is None:
        lam = params.lam
    if not lam > 0.0:
        raise ValueError("lambda must be positive")
    n = params.N
    log_cn = -(1.0 + 2.0 / n) * np.log(2.0)
    return (
        log_cn
        + np.log(params.V0)
        + s * np.log(lam)
        - np.log(background.detg0) / n
        + 2.0 * params.alpha * (1.0 - s) * background.q0.q11
        + s * background.u0
    )


@dataclass(frozen=True)
class FixedDensity:
    """Density with no dependence on the unknown fields (decoupled stage)."""

    values: np.ndarray

    def __call__(self, p, psi):
        return self.values

    def with_partials(self, p, psi):
        zero = np.zeros_like(self.values)
        return self.values, zero, zero


@dataclass(frozen=True)
class SelfConsistentDensity:
    """Density A(t) * exp(-2*alpha*e^p - psi/N) and its chart partials."""

    log_coupling: np.ndarray
    alpha: float
    N: int

    def __call__(self, p, psi):
        q11 = exp_clip(p)
        return exp_clip(self.log_coupling - 2.0 * self.alpha * q11 - psi / self.N)

    def with_partials(self, p, psi):
        q11 = exp_clip(p)
        lam = exp_clip(self.log_coupling - 2.0 * self.alpha * q11 - psi / self.N)
        d_p = -2.0 * self.alpha * q11 * lam
        d_psi = -lam / self.N
        return lam, d_p, d_psi
