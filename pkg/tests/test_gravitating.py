"""Coupled stage: s-walk, scale walks, matrix-form residual, uniqueness."""

import numpy as np
import pytest

from gravortex.background import (
    build_vortex_system,
    initial_guess_deviation,
    reference_profile,
)
from gravortex.bvp import SolveControls, _residual, dense_jacobian, discretize
from gravortex.coefficients import SelfConsistentDensity, log_coupling_profile
from gravortex.diagnostics import compute_volume
from gravortex.errors import AdmissibilityError
from gravortex.gravitating import (
    _PathTracker,
    continue_scale,
    reverse_to_decoupled,
    solve_coupled,
)
from gravortex.mesh import Mesh
from gravortex.profiles import SymmetricMatrixProfile


def matrix_residual(profile, coeff, disc, tau):
    """Second-order matrix equation residual, assembled from raw entries.

    Independent re-derivation: differentiate the entry tables with the
    stencils and plug into q'' - q' q^{-1} q' - q*Lambda*(Eq - tau*I).
    Returns the four components (row-major) and the off-symmetry gap
    R12 - R21, which must vanish on symmetric-chart solutions.
    """
    q11, x, q22 = profile.q11, profile.x, profile.q22
    d1 = lambda a: disc.differentiate(a)
    d2 = lambda a: disc.differentiate(a, 2)
    det = np.exp(-profile.psi)

    def mul(a, b):
        return (
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        )

    qp = (d1(q11), d1(x), d1(x), d1(q22))
    qinv = (q22 / det, -x / det, -x / det, q11 / det)
    rhs = mul((q11, x, x, q22),
              (coeff * (q11 - tau), coeff * x, np.zeros_like(x), -coeff * tau))
    curv = mul(mul(qp, qinv), qp)
    second = (d2(q11), d2(x), d2(x), d2(q22))
    R = tuple(second[i] - curv[i] - rhs[i] for i in range(4))
    return R, R[1] - R[2]


# ---------------------------------------------------------------------------
# arrival state and path bound
# ---------------------------------------------------------------------------

def test_arrival_state(ref_solution):
    assert ref_solution.params.s == 1.0
    assert ref_solution.params.lam == 1.0
    assert ref_solution.residual_norm <= 1e-10
    assert ref_solution.newton_iterations > 0
    assert np.all(np.isfinite(ref_solution.coeff))
    assert np.all(ref_solution.coeff > 0.0)


def test_ceiling_holds_on_path_and_at_arrival(ref_params, ref_solution):
    tau = ref_params.tau
    assert ref_solution.path_max_q11 <= tau * (1.0 + 1e-8)
    assert ref_solution.q.q11.max() < tau


def test_tracker_rejects_ceiling_crossing(ref_params, coarse_mesh):
    ref = reference_profile(ref_params, coarse_mesh)
    tracker = _PathTracker(ref, ref_params.tau)

    class Fake:
        Y = np.zeros((coarse_mesh.size, 3))
        iterations = 1

    Fake.Y[:, 0] = 0.1 - ref.value[:, 0]  # pushes q11 to e^{0.1} > tau
    with pytest.raises(AdmissibilityError, match="ceiling"):
        tracker(0.5, Fake)


# ---------------------------------------------------------------------------
# matrix-form residual (independent of the chart formulation)
# ---------------------------------------------------------------------------

def test_matrix_equation_residual_small(coarse_solution, coarse_disc, ref_params):
    R, gap = matrix_residual(
        coarse_solution.q, coarse_solution.coeff, coarse_disc, ref_params.tau
    )
    assert max(np.abs(c).max() for c in R) < 1e-6
    # chart unknowns parametrize symmetric matrices, so the fourth scalar
    # equation is satisfied identically, not just to solver tolerance
    assert np.abs(gap).max() < 1e-12


def test_trace_equation_on_solution(coarse_solution, coarse_disc, ref_params):
    q = coarse_solution.q
    psidd = coarse_disc.differentiate(q.psi, 2)
    target = coarse_solution.coeff * (2.0 * ref_params.tau - q.q11)
    assert np.abs(psidd - target).max() < 1e-7


def test_trace_identity_is_algebraic(ref_params):
    # random consistent jet tables: entries and their first two derivatives
    # all derived from one chart jet, so trace(q^{-1} R) must collapse to
    # -psi'' + Lambda*(2 tau - q11) at roundoff, with no mesh involved
    rng = np.random.default_rng(42)
    m = 64
    tau = ref_params.tau
    p = rng.uniform(-2.0, 0.5, m)
    th = rng.uniform(-3.0, 3.0, m)
    ps = rng.uniform(-1.0, 4.0, m)
    pd, thd, psd = rng.uniform(-2.0, 2.0, (3, m))
    pdd, thdd, psdd = rng.uniform(-2.0, 2.0, (3, m))
    lam = rng.uniform(0.2, 3.0, m)

    P, S = np.exp(p), np.tanh(th)
    C2 = 1.0 / np.cosh(th) ** 2
    E2 = np.exp(-ps - p)
    q11, x, q22 = P, P * S, P * S**2 + E2
    q11p = P * pd
    xp = P * (pd * S + thd * C2)
    q22p = P * (pd * S**2 + 2.0 * S * C2 * thd) - E2 * (psd + pd)
    q11pp = P * (pdd + pd**2)
    xpp = P * (S * (pdd + pd**2) + C2 * (thdd + 2.0 * pd * thd - 2.0 * S * thd**2))
    q22pp = P * (
        S**2 * (pdd + pd**2)
        + 4.0 * pd * S * C2 * thd
        + 2.0 * C2 * thd**2 * (C2 - 2.0 * S**2)
        + 2.0 * S * C2 * thdd
    ) + E2 * ((psd + pd) ** 2 - (psdd + pdd))

    det = q11 * q22 - x * x
    assert det == pytest.approx(np.exp(-ps), rel=1e-12)

    def mul(a, b):
        return (
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        )

    qp = (q11p, xp, xp, q22p)
    qinv = (q22 / det, -x / det, -x / det, q11 / det)
    curv = mul(mul(qp, qinv), qp)
    rhs = mul((q11, x, x, q22),
              (lam * (q11 - tau), lam * x, np.zeros(m), -lam * tau))
    R = (q11pp - curv[0] - rhs[0], xpp - curv[1] - rhs[1],
         xpp - curv[2] - rhs[2], q22pp - curv[3] - rhs[3])
    trace = qinv[0] * R[0] + qinv[1] * R[2] + qinv[2] * R[1] + qinv[3] * R[3]
    target = -psdd + lam * (2.0 * tau - q11)
    scale = max(1.0, np.abs(trace).max())
    assert np.abs(trace - target).max() < 1e-12 * scale


# ---------------------------------------------------------------------------
# analytic Jacobian of the full three-field system
# ---------------------------------------------------------------------------

def test_full_system_jacobian_matches_fd(ref_params):
    mesh = Mesh.uniform(6.0, 25)
    disc = discretize(mesh, 4)
    t = mesh.nodes
    dens = SelfConsistentDensity(
        log_coupling=np.log(3.5) + 0.1 / np.cosh(t),
        alpha=ref_params.alpha,
        N=ref_params.N,
    )
    ref = reference_profile(ref_params, mesh)
    system = build_vortex_system(ref_params, mesh, dens, ref)
    rng = np.random.default_rng(11)
    Y = initial_guess_deviation(ref_params, mesh, ref)
    Y = Y + 0.05 * rng.standard_normal(Y.shape)
    J = dense_jacobian(system, disc, Y)

    def residual_vector(flat):
        F, _ = _residual(system, disc, flat.reshape(mesh.size, 3))
        return F.ravel()

    base = Y.ravel()
    n = base.size
    fd = np.zeros((n, n))
    for j in range(n):
        for step, weight in ((1e-5, -1.0 / 3.0), (5e-6, 4.0 / 3.0)):
            e = np.zeros(n)
            e[j] = step
            fd[:, j] += weight * (
                residual_vector(base + e) - residual_vector(base - e)
            ) / (2.0 * step)
    assert np.abs(J - fd).max() / np.abs(J).max() < 1e-6


# ---------------------------------------------------------------------------
# density model
# ---------------------------------------------------------------------------

def test_density_doubles_with_lambda_at_full_coupling(ref_params, coarse_background):
    base = log_coupling_profile(ref_params, coarse_background, s=1.0, lam=1.0)
    double = log_coupling_profile(ref_params, coarse_background, s=1.0, lam=2.0)
    assert double - base == pytest.approx(np.log(2.0), abs=1e-15)
    mk = lambda logc: SelfConsistentDensity(
        log_coupling=logc, alpha=ref_params.alpha, N=ref_params.N
    )
    q = coarse_background.q0
    ratio = mk(double)(q.p, q.psi) / mk(base)(q.p, q.psi)
    assert ratio == pytest.approx(2.0, rel=1e-14)


def test_density_not_scale_invariant(ref_params, coarse_background):
    logc = log_coupling_profile(ref_params, coarse_background, s=1.0, lam=1.0)
    dens = SelfConsistentDensity(
        log_coupling=logc, alpha=ref_params.alpha, N=ref_params.N
    )
    q = coarse_background.q0
    # doubling q (p -> p + ln 2, psi -> psi - 2 ln 2) does not rescale the
    # density by any constant: the exponent is affine in q11, not in ln q11
    ratio = dens(q.p + np.log(2.0), q.psi - 2.0 * np.log(2.0)) / dens(q.p, q.psi)
    assert ratio.max() / ratio.min() > 1.1
    assert np.abs(ratio - 2.0).max() > 0.5


def test_invalid_lambda_rejected(ref_params, coarse_background):
    with pytest.raises(ValueError):
        log_coupling_profile(ref_params, coarse_background, s=1.0, lam=-1.0)
    with pytest.raises(ValueError):
        continue_scale(None, coarse_background, 0.0)


# ---------------------------------------------------------------------------
# shape invariants of the arrived solution
# ---------------------------------------------------------------------------

def test_psi_and_log_combination_convex(coarse_solution, coarse_disc):
    q = coarse_solution.q
    psidd = coarse_disc.differentiate(q.psi, 2)
    assert np.all(psidd[1:-1] > 0.0)
    combodd = coarse_disc.differentiate(q.p + 0.5 * q.psi, 2)
    assert np.all(combodd[1:-1] > 0.0)


def test_pinning_integral(ref_params, ref_solution, coarse_solution):
    n2 = float(ref_params.N**2)
    for sol, tol in ((ref_solution, 1e-4), (coarse_solution, 5e-4)):
        t = sol.mesh.nodes
        q = sol.q
        c = int(np.argmin(q.psi))
        assert c == sol.mesh.center_index
        integrand = sol.coeff * (2.0 * ref_params.tau - q.q11) * q.psiprime
        right = 2.0 * np.trapezoid(integrand[c:], t[c:])
        assert abs(right - n2) / n2 < tol


def test_mixing_ratio_monotone(ref_solution):
    ratio = ref_solution.q.x / ref_solution.q.q11
    steps = np.diff(ratio)
    assert steps.min() > -1e-10
    t = ref_solution.mesh.nodes[:-1]
    assert steps[np.abs(t) <= 15.0].min() > 0.0


def test_off_diagonal_odd_with_zero_center(ref_solution, ref_mesh):
    x = ref_solution.q.x
    assert x[ref_mesh.center_index] == 0.0
    assert np.array_equal(x, -x[::-1])
    assert np.all(x[: ref_mesh.center_index] < 0.0)


# ---------------------------------------------------------------------------
# uniqueness probes: seeds, reversal, scale walks
# ---------------------------------------------------------------------------

def perturbed_seed(profile, mesh, disc):
    t = mesh.nodes
    bp = -0.05 / np.cosh(t)
    bt = 0.03 * np.tanh(t) / np.cosh(t)
    bs = 0.05 / np.cosh(t)
    return SymmetricMatrixProfile.from_chart(
        mesh,
        profile.p + bp,
        profile.theta + bt,
        profile.psi + bs,
        profile.pprime + disc.differentiate(bp),
        profile.thetaprime + disc.differentiate(bt),
        profile.psiprime + disc.differentiate(bs),
    )


def test_two_seeds_land_on_one_branch(
    ref_params, coarse_mesh, coarse_disc, coarse_background, coarse_solution
):
    seed = perturbed_seed(coarse_background.q0, coarse_mesh, coarse_disc)
    other = solve_coupled(
        ref_params, coarse_mesh, background=coarse_background,
        disc=coarse_disc, seed=seed,
    )
    for name in ("q11", "x", "q22", "psi"):
        gap = np.abs(getattr(other.q, name) - getattr(coarse_solution.q, name))
        assert gap.max() < 1e-6


def test_reverse_walk_recovers_background(
    coarse_solution, coarse_background
):
    back = reverse_to_decoupled(coarse_solution, coarse_background)
    q0 = coarse_background.q0
    for name in ("q11", "x", "q22", "psi"):
        gap = np.abs(getattr(back, name) - getattr(q0, name))
        assert gap.max() < 1e-8


def test_scale_walk_and_return(
    ref_params, coarse_background, coarse_solution
):
    up = continue_scale(coarse_solution, coarse_background, 4.0)
    assert up.params.lam == 4.0
    assert up.residual_norm <= 1e-10
    assert up.path_max_q11 <= ref_params.tau * (1.0 + 1e-8)
    # larger coupling scale concentrates the profile: volume decreases
    assert compute_volume(up) < compute_volume(coarse_solution)
    back = continue_scale(up, coarse_background, 1.0)
    for name in ("q11", "x", "q22", "psi"):
        gap = np.abs(getattr(back.q, name) - getattr(coarse_solution.q, name))
        assert gap.max() < 1e-8
