"""Banded collocation engine for systems of second-order two-point BVPs.

The engine solves systems of the form

    y_c''(t) = G_c(t, y, y'),   c = 0..n-1,

with n nonlinear boundary rows r(y, y') = 0 at each mesh end, by high-order
finite differences on a symmetric uniform mesh.  The discrete nonlinear
system is solved by a damped Newton iteration whose linear stages go through
``scipy.linalg.solve_banded``; a natural-parameter continuation driver with
adaptive step halving/growth sits on top.

Design notes that matter for accuracy:

* Orders 2, 4 and 6 are supported.  An order-k scheme uses the centred
  (k+1)-point stencil at interior nodes and a one-sidedly biased
  (k+2)-point stencil at the k/2 nodes next to each boundary, so the
  formal order is k uniformly.  Boundary rows evaluate y' with the
  (k+2)-point one-sided stencil of the end node.
* Stencil weights are generated in integer offset space and divided by the
  mesh spacing afterwards, and the right half of the table is an explicit
  bitwise mirror of the left half (centred weights are symmetrised).  As a
  consequence the discrete operators commute exactly with the reflection
  t -> -t, so the optional per-field parity projection is compatible with
  Newton: projecting every iterate does not fight the linear solves.
* Fields with linear growth at the ends should be supplied to the engine as
  deviations from a smooth reference profile whose derivatives are known in
  closed form; differencing a field of magnitude ~100 with 1/h^2-sized
  weights leaves rounding noise of order 1e-10, which would sit exactly at
  the interior residual tolerance.  The problem builders in this package do
  that shift; the engine itself is agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve_banded
from scipy.sparse import coo_matrix, csr_matrix

from .errors import (
    AdmissibilityError,
    ContinuationStuckError,
    MeshError,
    NonconvergenceError,
)
from .mesh import Mesh

__all__ = [
    "SUPPORTED_ORDERS",
    "fd_weights",
    "discretize",
    "Discretization",
    "FieldSystem",
    "SolveControls",
    "NewtonResult",
    "ContinuationResult",
    "damped_newton",
    "continue_parameter",
    "parity_project",
    "dense_jacobian",
]

SUPPORTED_ORDERS = (2, 4, 6)


def fd_weights(z, x, max_deriv):
    """Finite-difference weights at the point z from arbitrary nodes x.

    Returns an array c of shape (len(x), max_deriv+1) with c[j, s] the
    weight multiplying f(x[j]) in the approximation of the s-th derivative
    at z.  This is the standard one-pass recursion on divided differences;
    it is exact on polynomials of degree len(x)-1.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, max_deriv + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, max_deriv)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for s in range(mn, 0, -1):
                    c[i, s] = c1 * (s * c[i - 1, s - 1] - c5 * c[i - 1, s]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for s in range(mn, 0, -1):
                c[j, s] = (c4 * c[j, s] - s * c[j, s - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


@dataclass(frozen=True)
class Discretization:
    """Per-node derivative stencils of a fixed order on a uniform mesh.

    columns[i] holds the node indices of row i's stencil (padded with i and
    zero weights up to the common width), w1/w2 the first/second derivative
    weights including the 1/h, 1/h^2 factors.
    """

    mesh: Mesh
    order: int
    columns: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @property
    def width(self) -> int:
        return self.columns.shape[1]

    def derivative_matrix(self, deriv: int = 1) -> csr_matrix:
        """Sparse m-by-m matrix applying the requested derivative (1 or 2)."""
        if deriv not in (1, 2):
            raise ValueError("deriv must be 1 or 2")
        w = self.w1 if deriv == 1 else self.w2
        m = self.mesh.size
        rows = np.repeat(np.arange(m), self.width)
        mat = coo_matrix((w.ravel(), (rows, self.columns.ravel())), shape=(m, m))
        mat = mat.tocsr()
        mat.eliminate_zeros()
        return mat

    def differentiate(self, values, deriv: int = 1):
        """Apply the derivative stencils to nodal values, shape (m,) or (m, n)."""
        w = self.w1 if deriv == 1 else self.w2
        v = np.asarray(values, dtype=float)
        g = v[self.columns]
        if g.ndim == 2:
            return np.einsum("iw,iw->i", w, g)
        return np.einsum("iw,iwn->in", w, g)


def discretize(mesh: Mesh, order: int = 6) -> Discretization:
    """Build derivative stencils of the given order on a uniform mesh."""
    if order not in SUPPORTED_ORDERS:
        raise MeshError(f"order must be one of {SUPPORTED_ORDERS}, got {order!r}")
    k = order
    half = k // 2
    width = k + 2
    m = mesh.size
    if m < width:
        raise MeshError(f"mesh needs at least {width} nodes for order {k}")
    h = mesh.spacing

    columns = np.empty((m, width), dtype=np.intp)
    w1 = np.zeros((m, width))
    w2 = np.zeros((m, width))

    # Shared centred stencil, symmetrised so that w1 is exactly odd and w2
    # exactly even in the offset (the exact weights are; this strips ulps).
    wc = fd_weights(0.0, np.arange(-half, half + 1, dtype=float), 2)
    w1c = 0.5 * (wc[:, 1] - wc[:, 1][::-1])
    w2c = 0.5 * (wc[:, 2] + wc[:, 2][::-1])
    for i in range(half, m - half):
        columns[i, : k + 1] = np.arange(i - half, i + half + 1)
        columns[i, k + 1 :] = i
        w1[i, : k + 1] = w1c
        w2[i, : k + 1] = w2c

    # Left-biased rows on the window [0, k+1]; the right end is the exact
    # mirror (ascending window [m-k-2, m-1], weights reversed, odd sign on
    # w1) so the whole operator commutes with t -> -t bit for bit.
    for i in range(half):
        off = np.arange(width, dtype=float) - i
        wb = fd_weights(0.0, off, 2)
        columns[i] = np.arange(width)
        w1[i] = wb[:, 1]
        w2[i] = wb[:, 2]
        j = m - 1 - i
        columns[j] = np.arange(m - width, m)
        w1[j] = -wb[::-1, 1]
        w2[j] = wb[::-1, 2]

    w1 /= h
    w2 /= h * h
    w1.setflags(write=False)
    w2.setflags(write=False)
    columns.setflags(write=False)
    return Discretization(mesh=mesh, order=order, columns=columns, w1=w1, w2=w2)


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSystem:
    """Callbacks defining y'' = G(t, y, y') with nonlinear boundary rows.

    rhs(Y, Yp) -> G with shape (m, n); rhs_jacobian(Y, Yp) -> (dG_dY,
    dG_dYp), each (m, n, n) indexed [node, equation, field].  bc_left /
    bc_right map the end-node values (y, y') to (r, dr_dy, dr_dyp) with r of
    shape (n,).  Boundary rows are multiplied by the fixed positive scales
    before entering the residual, so tolerances act on scaled rows.
    admissible(Y) returns None or a short reason string; parity is an
    optional vector of +-1 per field enabling reflection projection of all
    iterates.
    """

    nfields: int
    rhs: Callable
    rhs_jacobian: Callable
    bc_left: Callable
    bc_right: Callable
    bc_scale_left: np.ndarray
    bc_scale_right: np.ndarray
    admissible: Optional[Callable] = None
    parity: Optional[np.ndarray] = None
    name: str = "bvp"


@dataclass(frozen=True)
class SolveControls:
    """Newton iteration knobs; the two tolerances act on different rows."""

    tol_newton: float = 1e-10
    tol_bc: float = 1e-6
    max_iterations: int = 40
    min_damping: float = 1e-9
    armijo: float = 1e-4


@dataclass(frozen=True)
class NewtonResult:
    Y: np.ndarray
    Yp: np.ndarray
    interior_residual: float
    bc_residual: float
    iterations: int
    history: List[float]


@dataclass(frozen=True)
class ContinuationResult:
    records: List[Tuple[float, NewtonResult]]
    final: NewtonResult

    @property
    def Y(self) -> np.ndarray:
        return self.final.Y

    @property
    def thetas(self) -> List[float]:
        return [theta for theta, _ in self.records]


def parity_project(Y: np.ndarray, parity: Optional[np.ndarray]) -> np.ndarray:
    """Average a field table with its reflection, per-field sign from parity."""
    if parity is None:
        return Y
    return 0.5 * (Y + np.asarray(parity)[None, :] * Y[::-1])


def _residual(problem: FieldSystem, disc: Discretization, Y: np.ndarray):
    gathered = Y[disc.columns]
    Yp = np.einsum("iw,iwn->in", disc.w1, gathered)
    Ypp = np.einsum("iw,iwn->in", disc.w2, gathered)
    F = Ypp - problem.rhs(Y, Yp)
    rl, _, _ = problem.bc_left(Y[0], Yp[0])
    rr, _, _ = problem.bc_right(Y[-1], Yp[-1])
    F[0] = problem.bc_scale_left * rl
    F[-1] = problem.bc_scale_right * rr
    return F, Yp


def _jacobian_banded(problem: FieldSystem, disc: Discretization, Y, Yp):
    m, n = Y.shape
    nm = m * n
    kl = ku = (disc.order + 2) * n - 1
    ab = np.zeros((kl + ku + 1, nm))
    flat = ab.reshape(-1)
    dGY, dGYp = problem.rhs_jacobian(Y, Yp)
    comp = np.arange(n)

    ii = np.arange(1, m - 1)
    cols_n = disc.columns[ii]
    eye = np.eye(n)
    B = (
        disc.w2[ii][:, :, None, None] * eye[None, None]
        - disc.w1[ii][:, :, None, None] * dGYp[ii][:, None, :, :]
    )
    r = (n * ii)[:, None, None, None] + comp[None, None, :, None]
    q = (n * cols_n)[:, :, None, None] + comp[None, None, None, :]
    np.add.at(flat, ((ku + r - q) * nm + q).ravel(), B.ravel())

    r2 = (n * ii)[:, None, None] + comp[None, :, None]
    q2 = (n * ii)[:, None, None] + comp[None, None, :]
    np.add.at(flat, ((ku + r2 - q2) * nm + q2).ravel(), (-dGY[ii]).ravel())

    for node, bcfun, scale in (
        (0, problem.bc_left, problem.bc_scale_left),
        (m - 1, problem.bc_right, problem.bc_scale_right),
    ):
        _, Jy, Jyp = bcfun(Y[node], Yp[node])
        base = n * node
        r3 = (base + comp)[:, None]
        q3 = (base + comp)[None, :]
        np.add.at(flat, ((ku + r3 - q3) * nm + q3).ravel(), (scale[:, None] * Jy).ravel())
        ccols = disc.columns[node]
        r4 = (base + comp)[:, None, None]
        q4 = (n * ccols)[None, :, None] + comp[None, None, :]
        vals = scale[:, None, None] * Jyp[:, None, :] * disc.w1[node][None, :, None]
        np.add.at(flat, ((ku + r4 - q4) * nm + q4).ravel(), vals.ravel())
    return ab, kl, ku


def dense_jacobian(problem: FieldSystem, disc: Discretization, Y: np.ndarray):
    """Dense Jacobian of the scaled residual vector; for tests and studies."""
    _, Yp = _residual(problem, disc, np.array(Y, dtype=float))
    ab, kl, ku = _jacobian_banded(problem, disc, Y, Yp)
    nm = Y.size
    J = np.zeros((nm, nm))
    for band in range(kl + ku + 1):
        offset = ku - band  # column minus row
        if offset >= 0:
            J[np.arange(nm - offset), np.arange(offset, nm)] = ab[band, offset:]
        else:
            J[np.arange(-offset, nm), np.arange(nm + offset)] = ab[band, : nm + offset]
    return J


def _norms(F: np.ndarray) -> Tuple[float, float]:
    interior = float(np.abs(F[1:-1]).max()) if F.shape[0] > 2 else 0.0
    bc = float(max(np.abs(F[0]).max(), np.abs(F[-1]).max()))
    return interior, bc


def damped_newton(
    problem: FieldSystem,
    disc: Discretization,
    Y0: np.ndarray,
    controls: SolveControls = SolveControls(),
) -> NewtonResult:
    """Damped (Armijo-monitored) Newton iteration on the collocated system.

    Convergence requires both gates at once: the interior rows below
    tol_newton and the scaled boundary rows below tol_bc, in the max norm.
    An exact starting point returns with zero iterations.  Initial iterates
    outside the admissible set raise AdmissibilityError; stalls and
    iteration-budget overruns raise NonconvergenceError carrying the
    residual-norm history.
    """
    Y = parity_project(np.array(Y0, dtype=float), problem.parity)
    m = disc.mesh.size
    if Y.shape != (m, problem.nfields):
        raise ValueError(f"Y0 must have shape ({m}, {problem.nfields})")
    if problem.admissible is not None:
        reason = problem.admissible(Y)
        if reason is not None:
            raise AdmissibilityError(f"initial iterate rejected: {reason}")
    F, Yp = _residual(problem, disc, Y)
    norm = float(np.abs(F).max())
    if not np.isfinite(norm):
        raise AdmissibilityError("initial iterate gives a non-finite residual")
    history = [norm]
    iterations = 0
    while True:
        interior, bc = _norms(F)
        if interior <= controls.tol_newton and bc <= controls.tol_bc:
            return NewtonResult(
                Y=Y,
                Yp=Yp,
                interior_residual=interior,
                bc_residual=bc,
                iterations=iterations,
                history=history,
            )
        if iterations >= controls.max_iterations:
            raise NonconvergenceError(
                f"{problem.name}: no convergence in {controls.max_iterations} "
                f"Newton steps (interior {interior:.3e} vs {controls.tol_newton:.1e},"
                f" boundary {bc:.3e} vs {controls.tol_bc:.1e})",
                history,
            )
        ab, kl, ku = _jacobian_banded(problem, disc, Y, Yp)
        try:
            delta = solve_banded(
                (kl, ku), ab, -F.reshape(-1), overwrite_ab=True, check_finite=False
            )
        except LinAlgError as exc:
            raise NonconvergenceError(f"{problem.name}: linear solve failed ({exc})", history)
        if not np.all(np.isfinite(delta)):
            raise NonconvergenceError(
                f"{problem.name}: linear solve returned a non-finite step", history
            )
        delta = delta.reshape(Y.shape)
        beta = 1.0
        while True:
            cand = parity_project(Y + beta * delta, problem.parity)
            reason = problem.admissible(cand) if problem.admissible is not None else None
            if reason is None:
                Fc, Ypc = _residual(problem, disc, cand)
                cn = float(np.abs(Fc).max())
                if np.isfinite(cn) and cn <= (1.0 - controls.armijo * beta) * norm:
                    Y, F, Yp, norm = cand, Fc, Ypc, cn
                    break
            beta *= 0.5
            if beta < controls.min_damping:
                raise NonconvergenceError(
                    f"{problem.name}: line search stalled at residual {norm:.3e}",
                    history,
                )
        iterations += 1
        history.append(norm)


def continue_parameter(
    family: Callable[[float], FieldSystem],
    theta0: float,
    theta1: float,
    Y0: np.ndarray,
    disc: Discretization,
    controls: SolveControls = SolveControls(),
    *,
    initial_step: Optional[float] = None,
    min_step: float = 1e-6,
    growth: float = 1.5,
    on_accept: Optional[Callable] = None,
) -> ContinuationResult:
    """Walk a solution branch from theta0 to theta1 with adaptive steps.

    ``family(theta)`` builds the problem at a parameter value; Y0 must solve (or
    nearly solve) the theta0 problem.  Failed steps are halved; accepted
    steps grow by ``growth`` up to the initial step.  When the step falls
    below min_step the walk aborts with ContinuationStuckError carrying the
    last good parameter value and solution.
    """
    Y = np.array(Y0, dtype=float)
    span = float(theta1) - float(theta0)
    if span == 0.0:
        res = damped_newton(family(float(theta1)), disc, Y, controls)
        return ContinuationResult(records=[(float(theta1), res)], final=res)
    direction = 1.0 if span > 0 else -1.0
    max_step = abs(span) / 2.0 if initial_step is None else float(initial_step)
    step = max_step
    theta = float(theta0)
    records: List[Tuple[float, NewtonResult]] = []
    last: Optional[NewtonResult] = None
    while direction * (float(theta1) - theta) > 0.0:
        remaining = abs(float(theta1) - theta)
        attempt = min(step, remaining)
        target = float(theta1) if attempt >= remaining else theta + direction * attempt
        try:
            res = damped_newton(family(target), disc, Y, controls)
        except (NonconvergenceError, AdmissibilityError) as exc:
            step = attempt / 2.0
            if step < min_step:
                raise ContinuationStuckError(
                    f"continuation stalled at parameter {theta:.8g} "
                    f"(step {attempt:.3e} failed: {exc})",
                    last_good=theta,
                    last_solution=last,
                )
            continue
        theta = target
        Y = res.Y
        last = res
        records.append((theta, res))
        if on_accept is not None:
            on_accept(theta, res)
        step = min(attempt * growth, max_step)
    assert last is not None
    return ContinuationResult(records=records, final=last)
