"""The banded collocation engine: stencils, Newton, continuation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravortex.bvp import (
    FieldSystem,
    SolveControls,
    _residual,
    continue_parameter,
    damped_newton,
    dense_jacobian,
    discretize,
    fd_weights,
    parity_project,
)
from gravortex.diagnostics import liouville_crosscheck
from gravortex.errors import (
    AdmissibilityError,
    ContinuationStuckError,
    MeshError,
    NonconvergenceError,
)
from gravortex.mesh import Mesh


# ---------------------------------------------------------------------------
# stencil weights
# ---------------------------------------------------------------------------

def test_fd_weights_textbook_stencils():
    c = fd_weights(0.0, np.array([-1.0, 0.0, 1.0]), 2)
    assert c[:, 1] == pytest.approx([-0.5, 0.0, 0.5], abs=1e-15)
    assert c[:, 2] == pytest.approx([1.0, -2.0, 1.0], abs=1e-14)
    c5 = fd_weights(0.0, np.arange(-2.0, 3.0), 2)
    assert c5[:, 2] == pytest.approx(
        np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, abs=1e-13
    )


def test_fd_weights_one_sided_first_derivative():
    c = fd_weights(0.0, np.array([0.0, 1.0, 2.0]), 1)
    assert c[:, 1] == pytest.approx([-1.5, 2.0, -0.5], abs=1e-14)


@given(
    offs=st.lists(
        st.integers(min_value=-6, max_value=6), min_size=3, max_size=7, unique=True
    ),
    deriv=st.integers(min_value=0, max_value=2),
)
@settings(max_examples=200, deadline=None)
def test_fd_weights_exact_on_polynomials(offs, deriv):
    x = np.sort(np.array(offs, dtype=float))
    c = fd_weights(0.0, x, deriv)
    scale = max(1.0, np.abs(c).max())
    for k in range(x.size):  # monomial x^k, derivative at z=0
        applied = float(c[:, deriv] @ x**k)
        exact = float(math.factorial(k)) if k == deriv else 0.0
        assert applied == pytest.approx(exact, abs=1e-9 * scale * max(1.0, 6.0**k))


# ---------------------------------------------------------------------------
# discretization operators
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("order", [2, 4, 6])
def test_differentiate_exact_on_low_polynomials(order):
    mesh = Mesh.uniform(3.0, 61)
    disc = discretize(mesh, order)
    t = mesh.nodes
    # interior stencils carry order+1 points: exact through degree = order
    for deg in range(order + 1):
        v = t**deg
        d1 = disc.differentiate(v)
        d2 = disc.differentiate(v, 2)
        e1 = deg * t ** (deg - 1) if deg >= 1 else np.zeros_like(t)
        e2 = deg * (deg - 1) * t ** (deg - 2) if deg >= 2 else np.zeros_like(t)
        assert d1 == pytest.approx(e1, abs=1e-9)
        assert d2 == pytest.approx(e2, abs=1e-8)


def test_differentiate_order_six_accuracy_jump():
    fine = Mesh.uniform(3.0, 121)
    coarse = Mesh.uniform(3.0, 61)
    errs = {}
    for mesh in (coarse, fine):
        disc = discretize(mesh, 6)
        err = np.abs(disc.differentiate(np.sin(mesh.nodes)) - np.cos(mesh.nodes))
        errs[mesh.size] = err.max()
    ratio = errs[61] / errs[121]
    assert ratio > 2.0**6 * 0.7  # ~64x for a sixth-order scheme


def test_derivative_matrix_matches_einsum_path():
    mesh = Mesh.uniform(2.0, 41)
    disc = discretize(mesh, 4)
    rng = np.random.default_rng(7)
    v = rng.standard_normal(mesh.size)
    for deriv in (1, 2):
        direct = disc.differentiate(v, deriv)
        via_matrix = disc.derivative_matrix(deriv) @ v
        assert via_matrix == pytest.approx(direct, rel=1e-13, abs=1e-13)


def test_differentiation_commutes_with_reflection():
    mesh = Mesh.uniform(2.0, 41)
    disc = discretize(mesh, 6)
    rng = np.random.default_rng(3)
    v = rng.standard_normal(mesh.size)
    left = disc.differentiate(v[::-1])
    right = -disc.differentiate(v)[::-1]
    assert left == pytest.approx(right, rel=1e-14, abs=1e-13)
    left2 = disc.differentiate(v[::-1], 2)
    right2 = disc.differentiate(v, 2)[::-1]
    assert left2 == pytest.approx(right2, rel=1e-14, abs=1e-12)


def test_discretize_rejects_unknown_order():
    mesh = Mesh.uniform(2.0, 41)
    with pytest.raises(MeshError):
        discretize(mesh, 3)


def test_parity_projection_idempotent_and_signed():
    rng = np.random.default_rng(11)
    Y = rng.standard_normal((21, 3))
    parity = np.array([1.0, -1.0, 1.0])
    P = parity_project(Y, parity)
    assert parity_project(P, parity) == pytest.approx(P, rel=0, abs=0)
    assert P[:, 0] == pytest.approx(P[::-1, 0])
    assert P[:, 1] == pytest.approx(-P[::-1, 1])
    assert parity_project(Y, None) is Y


# ---------------------------------------------------------------------------
# scalar problem helpers
# ---------------------------------------------------------------------------

def scalar_system(
    g,
    dg_dy,
    dg_dyp,
    bc_left,
    bc_right,
    admissible=None,
    parity=None,
    name="scalar",
):
    """Wrap scalar callables (arrays in, arrays out) as a 1-field system."""

    def rhs(Y, Yp):
        return g(Y[:, 0], Yp[:, 0])[:, None]

    def rhs_jacobian(Y, Yp):
        m = Y.shape[0]
        dgy = np.zeros((m, 1, 1))
        dgyp = np.zeros((m, 1, 1))
        dgy[:, 0, 0] = dg_dy(Y[:, 0], Yp[:, 0])
        dgyp[:, 0, 0] = dg_dyp(Y[:, 0], Yp[:, 0])
        return dgy, dgyp

    def bcl(y, yp):
        r, ry, ryp = bc_left(y[0], yp[0])
        return np.array([r]), np.array([[ry]]), np.array([[ryp]])

    def bcr(y, yp):
        r, ry, ryp = bc_right(y[0], yp[0])
        return np.array([r]), np.array([[ry]]), np.array([[ryp]])

    return FieldSystem(
        nfields=1,
        rhs=rhs,
        rhs_jacobian=rhs_jacobian,
        bc_left=bcl,
        bc_right=bcr,
        bc_scale_left=np.ones(1),
        bc_scale_right=np.ones(1),
        admissible=admissible,
        parity=parity,
        name=name,
    )


ZERO = lambda y, yp: np.zeros_like(y)


def test_constant_solves_laplace_neumann_in_zero_iterations():
    mesh = Mesh.uniform(5.0, 41)
    disc = discretize(mesh, 2)
    sys_ = scalar_system(
        ZERO,
        ZERO,
        ZERO,
        bc_left=lambda y, yp: (yp, 0.0, 1.0),
        bc_right=lambda y, yp: (yp, 0.0, 1.0),
    )
    res = damped_newton(sys_, disc, np.full((41, 1), 4.2))
    assert res.iterations == 0
    assert res.interior_residual <= 1e-10


def test_linear_ramp_solves_laplace_with_slope_rows():
    mesh = Mesh.uniform(5.0, 41)
    disc = discretize(mesh, 2)
    sys_ = scalar_system(
        ZERO,
        ZERO,
        ZERO,
        bc_left=lambda y, yp: (yp - 1.0, 0.0, 1.0),
        bc_right=lambda y, yp: (yp - 1.0, 0.0, 1.0),
    )
    res = damped_newton(sys_, disc, mesh.nodes[:, None].copy())
    assert res.iterations <= 1
    assert np.abs(disc.differentiate(res.Y[:, 0]) - 1.0).max() < 1e-8


def exp_system():
    return scalar_system(
        lambda y, yp: y,
        lambda y, yp: np.ones_like(y),
        ZERO,
        bc_left=lambda y, yp: (y - np.exp(-1.0), 1.0, 0.0),
        bc_right=lambda y, yp: (y - np.exp(1.0), 1.0, 0.0),
        name="exponential growth",
    )


def test_second_order_scheme_recovers_exponential():
    errors = {}
    for count in (41, 81):
        mesh = Mesh.uniform(1.0, count)
        disc = discretize(mesh, 2)
        res = damped_newton(exp_system(), disc, np.ones((count, 1)))
        errors[count] = np.abs(res.Y[:, 0] - np.exp(mesh.nodes)).max()
    assert errors[41] < 5e-4
    assert 3.3 < errors[41] / errors[81] < 4.7  # h^2 halving


def test_newton_linear_problem_single_step():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)
    res = damped_newton(exp_system(), disc, np.zeros((41, 1)))
    assert res.iterations == 1


def test_inadmissible_start_is_rejected_before_iterating():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)
    sys_ = scalar_system(
        ZERO,
        ZERO,
        ZERO,
        bc_left=lambda y, yp: (yp, 0.0, 1.0),
        bc_right=lambda y, yp: (yp, 0.0, 1.0),
        admissible=lambda Y: None if Y.max() < 1.0 else "field too large",
    )
    with pytest.raises(AdmissibilityError, match="field too large"):
        damped_newton(sys_, disc, np.full((41, 1), 2.0))


def test_iteration_budget_overrun_carries_history():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)
    controls = SolveControls(max_iterations=1, tol_newton=1e-14)
    with pytest.raises(NonconvergenceError) as info:
        damped_newton(exp_system(), disc, np.full((41, 1), 37.0), controls)
    assert len(info.value.residual_history) >= 1


def test_wrong_shape_start_rejected():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)
    with pytest.raises(ValueError):
        damped_newton(exp_system(), disc, np.zeros((40, 1)))


# ---------------------------------------------------------------------------
# the closed-form nonlinear oracle
# ---------------------------------------------------------------------------

def test_scalar_curvature_profile_reproduced():
    err, history = liouville_crosscheck(Mesh.uniform(40.0, 2001), n=3, order=6)
    assert err < 1e-6
    assert history[-1] < 1e-10


def test_scalar_curvature_newton_locally_quadratic():
    _, history = liouville_crosscheck(Mesh.uniform(40.0, 501), n=3, order=6)
    # once inside the quadratic basin each step roughly squares the residual
    tail = [r for r in history if r < 1e-2]
    assert len(tail) >= 3
    assert tail[-1] < 1e-10
    for before, after in zip(tail, tail[1:]):
        assert after <= 1e3 * before**2


def test_scalar_curvature_order_two_halving_ratio():
    errs = {
        count: liouville_crosscheck(Mesh.uniform(40.0, count), order=2)[0]
        for count in (501, 1001)
    }
    assert errs[501] / errs[1001] >= 3.5


# ---------------------------------------------------------------------------
# analytic vs finite-difference Jacobian (engine level)
# ---------------------------------------------------------------------------

def test_dense_jacobian_matches_finite_differences():
    mesh = Mesh.uniform(2.0, 21)
    disc = discretize(mesh, 4)
    sys_ = scalar_system(
        lambda y, yp: np.sin(y) + 0.1 * yp**2,
        lambda y, yp: np.cos(y),
        lambda y, yp: 0.2 * yp,
        bc_left=lambda y, yp: (yp - y, -1.0, 1.0),
        bc_right=lambda y, yp: (yp + y, 1.0, 1.0),
    )
    rng = np.random.default_rng(5)
    Y = 0.3 * rng.standard_normal((mesh.size, 1))
    J = dense_jacobian(sys_, disc, Y)

    def residual_vector(Yflat):
        F, _ = _residual(sys_, disc, Yflat.reshape(mesh.size, 1))
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
# continuation driver
# ---------------------------------------------------------------------------

def test_zero_perturbation_family_is_a_single_step():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)
    base = damped_newton(exp_system(), disc, np.ones((41, 1)))
    cont = continue_parameter(
        lambda theta: exp_system(), 0.0, 1.0, base.Y, disc, initial_step=1.0
    )
    assert len(cont.records) == 1
    assert cont.final.Y == pytest.approx(base.Y, rel=0, abs=1e-12)


def test_continuation_retraces_to_its_seed():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)

    def family(theta):
        return scalar_system(
            lambda y, yp, th=theta: y + th * y**3,
            lambda y, yp, th=theta: 1.0 + 3.0 * th * y**2,
            ZERO,
            bc_left=lambda y, yp: (y - np.exp(-1.0), 1.0, 0.0),
            bc_right=lambda y, yp: (y - np.exp(1.0), 1.0, 0.0),
        )

    seed = damped_newton(family(0.0), disc, np.ones((41, 1)))
    forward = continue_parameter(family, 0.0, 1.0, seed.Y, disc)
    assert forward.thetas[-1] == 1.0
    back = continue_parameter(family, 1.0, 0.0, forward.final.Y, disc)
    assert np.abs(back.final.Y - seed.Y).max() < 1e-10


def test_continuation_stall_reports_last_good_parameter():
    mesh = Mesh.uniform(1.0, 41)
    disc = discretize(mesh, 2)

    def family(theta):
        # solution is the constant 1 + 3*theta; inadmissible past theta = 1/3
        return scalar_system(
            lambda y, yp, th=theta: y - (1.0 + 3.0 * th),
            lambda y, yp: np.ones_like(y),
            ZERO,
            bc_left=lambda y, yp: (yp, 0.0, 1.0),
            bc_right=lambda y, yp: (yp, 0.0, 1.0),
            admissible=lambda Y: None if Y.max() < 2.0 else "out of bounds",
        )

    seed = damped_newton(family(0.0), disc, np.full((41, 1), 1.0))
    with pytest.raises(ContinuationStuckError) as info:
        continue_parameter(family, 0.0, 1.0, seed.Y, disc, min_step=1e-3)
    assert info.value.last_good is not None
    assert info.value.last_good < 0.34
    assert info.value.last_solution is not None
