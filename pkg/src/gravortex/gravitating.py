"""Coupled stage: self-consistent density, interpolation path, scale walks.

The coupled problem is reached from the decoupled one by a homotopy in
s from 0 to 1: the density interpolates between the fixed profile (at
s=0 it collapses onto (V0/2) w(t) when evaluated on the decoupled
solution, so the walk starts from an essentially exact point) and the
fully self-consistent one.  The scale parameter enters the coupling as
s*ln(lambda), so a single s-walk lands on any requested scale; branch
walks between scales at s=1 are done in ln(lambda).
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .background import (
    ReferenceProfile,
    assemble_profile,
    build_vortex_system,
    deviation_of_profile,
    reference_profile,
    solve_background,
)
from .bvp import (
    ContinuationResult,
    Discretization,
    SolveControls,
    continue_parameter,
    discretize,
)
from .coefficients import SelfConsistentDensity, log_coupling_profile
from .errors import AdmissibilityError
from .mesh import Mesh
from .params import ModelParams
from .profiles import BackgroundFields, GravSolution

__all__ = [
    "coupling_family",
    "scale_family",
    "solve_coupled",
    "continue_scale",
    "reverse_to_decoupled",
]


def _density_at(params: ModelParams, background: BackgroundFields, s: float, lam: float):
    logc = log_coupling_profile(params, background, s=s, lam=lam)
    return SelfConsistentDensity(log_coupling=logc, alpha=params.alpha, N=params.N)


def coupling_family(params, mesh, background, ref, lam):
    """Problem family over the interpolation parameter s at fixed scale."""

    def make(s):
        dens = _density_at(params, background, s, lam)
        return build_vortex_system(
            params, mesh, dens, ref, name=f"coupled s={s:.4g} lam={lam:.6g}"
        )

    return make


def scale_family(params, mesh, background, ref):
    """Problem family over ln(lambda) at s=1."""

    def make(loglam):
        lam = float(np.exp(loglam))
        dens = _density_at(params, background, 1.0, lam)
        return build_vortex_system(
            params, mesh, dens, ref, name=f"coupled lam={lam:.6g}"
        )

    return make


class _PathTracker:
    """Collects per-step peak q11 along a walk and enforces the ceiling.

    Accepted iterates must keep the leading entry below tau; crossing
    tau*(1+1e-6) means the walk left the branch the path bound protects,
    so the whole solve is rejected rather than silently continued.
    """

    def __init__(self, ref: ReferenceProfile, tau: float):
        self.ref = ref
        self.tau = tau
        self.max_q11 = float("-inf")
        self.newton_iterations = 0
        self.thetas: List[float] = []

    def __call__(self, theta, result):
        peak = float(np.exp((self.ref.value[:, 0] + result.Y[:, 0]).max()))
        self.max_q11 = max(self.max_q11, peak)
        self.newton_iterations += result.iterations
        self.thetas.append(float(theta))
        if peak > self.tau * (1.0 + 1e-6):
            raise AdmissibilityError(
                f"accepted step at parameter {theta:.6g} has max q11 = "
                f"{peak:.12g} above the ceiling tau = {self.tau:.6g}"
            )


def _package(params, mesh, ref, density, result, tracker) -> GravSolution:
    profile = assemble_profile(mesh, ref, result.Y, result.Yp)
    coeff = density(profile.p, profile.psi)
    return GravSolution(
        params=params,
        mesh=mesh,
        q=profile,
        residual_norm=result.interior_residual,
        coeff=np.asarray(coeff, dtype=float),
        path_max_q11=tracker.max_q11,
        newton_iterations=tracker.newton_iterations,
    )


def solve_coupled(
    params: ModelParams,
    mesh: Mesh,
    background: Optional[BackgroundFields] = None,
    order: int = 6,
    controls: Optional[SolveControls] = None,
    disc: Optional[Discretization] = None,
    seed=None,
) -> GravSolution:
    """Walk s from 0 to 1 starting at the decoupled solution.

    The arrival scale is params.lam (the s-coupling carries s*ln lambda).
    Returns the converged solution at s=1 together with path metadata:
    the largest q11 seen at any accepted step and the total Newton count.
    ``seed`` replaces the start profile (default: the decoupled solution);
    any admissible profile in the basin of the s=0 problem works and must
    land on the same branch -- a direct uniqueness probe.
    """
    if controls is None:
        controls = SolveControls()
    if disc is None:
        disc = discretize(mesh, order)
    if background is None:
        background = solve_background(params, mesh, order=order, controls=controls, disc=disc)
    ref = reference_profile(params, mesh)
    dev0 = deviation_of_profile(background.q0 if seed is None else seed, ref)
    tracker = _PathTracker(ref, params.tau)
    family = coupling_family(params, mesh, background, ref, params.lam)
    cont = continue_parameter(
        family, 0.0, 1.0, dev0, disc, controls, initial_step=0.5, on_accept=tracker
    )
    final_params = params.with_updates(s=1.0)
    density = _density_at(final_params, background, 1.0, final_params.lam)
    return _package(final_params, mesh, ref, density, cont.final, tracker)


def reverse_to_decoupled(
    solution: GravSolution,
    background: BackgroundFields,
    controls: Optional[SolveControls] = None,
    disc: Optional[Discretization] = None,
    order: int = 6,
):
    """Walk the interpolation parameter back from 1 to 0.

    Returns the arrival profile, which must coincide with the decoupled
    solution the forward walk started from (each member of the family has
    a single solution on the branch, so the path is retraceable).
    """
    params = solution.params
    mesh = solution.mesh
    if controls is None:
        controls = SolveControls()
    if disc is None:
        disc = discretize(mesh, order)
    ref = reference_profile(params, mesh)
    dev = deviation_of_profile(solution.q, ref)
    family = coupling_family(params, mesh, background, ref, params.lam)
    cont = continue_parameter(family, 1.0, 0.0, dev, disc, controls, initial_step=0.5)
    return assemble_profile(mesh, ref, cont.final.Y, cont.final.Yp)


def continue_scale(
    solution: GravSolution,
    background: BackgroundFields,
    new_lam: float,
    controls: Optional[SolveControls] = None,
    disc: Optional[Discretization] = None,
    order: int = 6,
) -> GravSolution:
    """Walk the s=1 branch from the solution's scale to new_lam in log scale."""
    if not new_lam > 0.0:
        raise ValueError("lambda must be positive")
    params = solution.params
    mesh = solution.mesh
    if controls is None:
        controls = SolveControls()
    if disc is None:
        disc = discretize(mesh, order)
    ref = reference_profile(params, mesh)
    dev0 = deviation_of_profile(solution.q, ref)
    tracker = _PathTracker(ref, params.tau)
    family = scale_family(params, mesh, background, ref)
    cont = continue_parameter(
        family,
        float(np.log(solution.params.lam)),
        float(np.log(new_lam)),
        dev0,
        disc,
        controls,
        initial_step=0.25,
        on_accept=tracker,
    )
    final_params = params.with_updates(lam=float(new_lam), s=1.0)
    density = _density_at(final_params, background, 1.0, final_params.lam)
    return _package(final_params, mesh, ref, density, cont.final, tracker)
