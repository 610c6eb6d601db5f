"""Decoupled stage: start profile, solved fields, shift potential."""

import numpy as np
import pytest

from gravortex.background import (
    assemble_profile,
    initial_guess_deviation,
    reference_profile,
    shift_potential,
    solve_background,
)
from gravortex.bvp import discretize
from gravortex.errors import ProfileError
from gravortex.mesh import Mesh
from gravortex.params import fs_weight, validate_params


def guess_profile(params, mesh, disc):
    ref = reference_profile(params, mesh)
    Y0 = initial_guess_deviation(params, mesh, ref)
    Y0p = disc.differentiate(ref.value + Y0) - ref.d1
    return assemble_profile(mesh, ref, Y0, Y0p)


def test_start_profile_shape(ref_params, coarse_mesh, coarse_disc):
    prof = guess_profile(ref_params, coarse_mesh, coarse_disc)
    t = coarse_mesh.nodes
    assert np.all(prof.q11 > 0.0)
    assert np.all(prof.q22 > 0.0)
    assert np.all(prof.q11 * prof.q22 - prof.x**2 > 0.0)
    # amplitude split starts the off-diagonal negative at the center
    assert prof.x[coarse_mesh.center_index] < 0.0
    # peak height of the leading entry is about half the ceiling
    assert 0.3 < prof.q11.max() < 0.75 * ref_params.tau
    # left-end decay rate of q11 is the smaller winding order
    ref = reference_profile(ref_params, coarse_mesh)
    lead = prof.q11[:5] * np.exp(-ref_params.l * t[:5])
    assert lead == pytest.approx(1.1 * ref.kappa, rel=1e-6)


def test_reference_profile_carries_end_slopes(ref_params, coarse_mesh):
    ref = reference_profile(ref_params, coarse_mesh)
    n = ref_params.N
    # closed-form first derivatives: p' -> +-l (both branches shed the
    # faster rate after the curvature factor), theta' = (N-2l)/2, psi' -> +-N
    assert ref.d1[0, 0] == pytest.approx(ref_params.l, abs=1e-8)
    assert ref.d1[-1, 0] == pytest.approx(-ref_params.l, abs=1e-8)
    assert ref.d1[:, 1] == pytest.approx(0.5 * (n - 2 * ref_params.l))
    assert ref.d1[-1, 2] == pytest.approx(n, abs=1e-8)
    assert ref.d1[0, 2] == pytest.approx(-n, abs=1e-8)


def test_degree_identity_on_solved_background(ref_params, ref_mesh, ref_background):
    w = fs_weight(ref_mesh.nodes)
    integral = ref_mesh.trapz(
        0.5 * ref_params.V0 * (2.0 * ref_params.tau - ref_background.q0.q11) * w
    )
    assert abs(integral - 2.0 * ref_params.N) < 1e-6
    assert ref_background.degree_residual < 1e-6


def test_background_end_slopes(ref_background):
    psid = ref_background.q0.psiprime
    assert psid[-1] == pytest.approx(3.0, abs=1e-4)
    assert psid[0] == pytest.approx(-3.0, abs=1e-4)


def test_background_respects_ceiling(ref_params, ref_background):
    assert ref_background.q0.q11.max() <= ref_params.tau + 1e-10


def test_background_psi_convex(ref_background, ref_disc, ref_mesh):
    psidd = ref_disc.differentiate(ref_background.q0.psi, 2)
    # the true curvature decays like exp(-|t|); past |t| ~ 26 it drops
    # below the stencil's roundoff scale eps*|psi|/h^2, so test the sign
    # where it is resolvable and bound the wobble beyond
    sel = np.abs(ref_mesh.nodes) <= 25.0
    assert np.all(psidd[sel] > 0.0)
    assert psidd[1:-1].min() > -1e-9


def test_background_off_diagonal_is_odd_and_center_zero(ref_background, ref_mesh):
    x = ref_background.q0.x
    assert x[ref_mesh.center_index] == 0.0
    assert np.array_equal(x, -x[::-1])


def test_degree_identity_pinned_at_solver_floor(ref_params):
    # the boundary rows enforce the discrete mass integral directly, so
    # the residual sits at roundoff on every mesh instead of refining
    for count in (251, 1001):
        mesh = Mesh.uniform(40.0, count)
        bg = solve_background(ref_params, mesh, order=2)
        assert bg.degree_residual < 1e-12


def test_shift_potential_balances(ref_params, ref_mesh, ref_background):
    assert abs(ref_background.u0_end_slope) < 1e-5
    w = fs_weight(ref_mesh.nodes)
    weighted_mean = ref_mesh.trapz(ref_background.u0 * w)
    assert abs(weighted_mean) < 1e-12


def test_shift_potential_rejects_flat_ceiling_profile(ref_params, ref_mesh):
    fake_q11 = np.full(ref_mesh.size, ref_params.tau)
    with pytest.raises(ProfileError):
        shift_potential(ref_params, ref_mesh, fake_q11, slope_tol=1e-4, enforce=True)
    # unbalanced slope tends to 2 - (V0/N)(tau/2) = 5/6 for the reference run
    _, _, slope = shift_potential(
        ref_params, ref_mesh, fake_q11, slope_tol=1e-4, enforce=False
    )
    assert slope == pytest.approx(5.0 / 6.0, abs=1e-6)


def test_background_determinant_identity(ref_background, ref_mesh):
    q0 = ref_background.q0
    det = q0.q11 * q0.q22 - q0.x**2
    # interior only: the tails underflow-multiply to zero in either factor
    sel = np.abs(ref_mesh.nodes) <= 20.0
    assert det[sel] == pytest.approx(np.exp(-q0.psi[sel]), rel=1e-11)


def test_detg0_positive_and_finite(ref_background):
    assert np.all(np.isfinite(ref_background.detg0))
    assert np.all(ref_background.detg0 > 0.0)


def test_background_coarse_instance_agrees(ref_params, coarse_background):
    # independent short-interval instance: same identities hold
    assert coarse_background.degree_residual < 1e-6
    assert abs(coarse_background.q0.psiprime[-1] - 3.0) < 1e-4
