"""Mapping the total volume against the scale parameter.

The volume of the emergent surface moves continuously with the scale weight
lam, filling the open admissible window between the two limit values
2N/tau (strong scale) and (4N-4l)/tau (weak scale).  This module walks a
log-spaced grid of scales by warm-started continuation and tabulates the
volume together with the center invariants and identity residuals
(sweep_lambda), and inverts the map -- given a target volume strictly inside
the window, it brackets and bisects in ln(lam) until the solved volume
matches (find_lambda_for_volume).  Bisection is used instead of a secant
type update on purpose: continuity of the map is established, monotonicity
is only observed, and bisection on a verified bracket cannot be fooled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .diagnostics import compute_volume, extract_abc, identity_suite
from .errors import (
    AdmissibilityError,
    ContinuationStuckError,
    SearchFailureError,
)
from .gravitating import continue_scale, solve_coupled
from .mesh import Mesh
from .params import ModelParams, admissible_interval
from .profiles import BackgroundFields, GravSolution

__all__ = [
    "SweepRow",
    "SweepResult",
    "sweep_lambda",
    "find_lambda_for_volume",
    "SCAN_RANGE",
]

# half-decade bracketing scan is confined to this window of scales
SCAN_RANGE = (1e-6, 1e6)


@dataclass(frozen=True)
class SweepRow:
    """One accepted scale: volume, center invariants, and health numbers."""

    lam: float
    volume: float
    a: float
    b: float
    c: float
    q11_center: float
    identity_max: float
    solver_residual: float
    suite_ok: bool


@dataclass(frozen=True)
class SweepResult:
    """Sweep table in ascending scale order plus observed trend flags.

    ``small_end_monotone`` records whether the volume grows monotonically
    toward the weak-scale limit over the smallest decade of the grid; the
    trend is observed, not a theorem, so it is reported rather than
    enforced.
    """

    rows: Tuple[SweepRow, ...]

    @property
    def lams(self) -> np.ndarray:
        return np.array([r.lam for r in self.rows])

    @property
    def volumes(self) -> np.ndarray:
        return np.array([r.volume for r in self.rows])

    @property
    def small_end_monotone(self) -> bool:
        lams = self.lams
        sel = lams <= lams.min() * 10.0
        if sel.sum() < 2:
            return True
        return bool(np.all(np.diff(self.volumes[sel]) < 0.0))

    def all_suites_ok(self) -> bool:
        return all(r.suite_ok for r in self.rows)


def _row_from_solution(sol: GravSolution) -> SweepRow:
    rep = identity_suite(sol)
    inv = extract_abc(sol)
    return SweepRow(
        lam=sol.params.lam,
        volume=compute_volume(sol),
        a=inv.a,
        b=inv.b,
        c=inv.c,
        q11_center=float(sol.q.q11[sol.mesh.center_index]),
        identity_max=rep.max_identity_residual,
        solver_residual=sol.residual_norm,
        suite_ok=rep.all_ok,
    )


def sweep_lambda(
    params: ModelParams,
    background: BackgroundFields,
    mesh: Mesh,
    lam_grid: Sequence[float],
    threads: int = 1,
    controls=None,
    on_solution: Optional[Callable[[GravSolution], None]] = None,
) -> SweepResult:
    """Tabulate (lam, V, c, a, b, residuals) over a sorted grid of scales.

    The grid is traversed by warm-started continuation outward from the
    point nearest lam=1 (one serial pass -- each solve seeds its neighbor);
    the per-row diagnostics afterwards are independent and run on a thread
    pool when ``threads`` > 1.  Row order in the result is ascending in lam
    regardless of execution order.  A stalled continuation propagates
    ContinuationStuckError with the last scale that solved.
    """
    grid = np.asarray(list(lam_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("lam_grid must not be empty")
    if np.any(grid <= 0.0):
        raise ValueError("scales must be positive")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("lam_grid must be strictly increasing")

    anchor = int(np.argmin(np.abs(np.log(grid))))
    solutions: List[Optional[GravSolution]] = [None] * grid.size
    base = solve_coupled(
        params.with_updates(lam=float(grid[anchor])),
        mesh,
        background,
        controls=controls,
    )
    solutions[anchor] = base
    if on_solution is not None:
        on_solution(base)

    for indices in (range(anchor + 1, grid.size), range(anchor - 1, -1, -1)):
        prev = base
        for i in indices:
            try:
                prev = continue_scale(prev, background, float(grid[i]), controls=controls)
            except ContinuationStuckError as exc:
                raise ContinuationStuckError(
                    f"scale sweep stalled between lam={prev.params.lam:g} and "
                    f"lam={grid[i]:g}: {exc}",
                    last_good=prev.params.lam,
                    last_solution=prev,
                ) from exc
            solutions[i] = prev
            if on_solution is not None:
                on_solution(prev)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_row_from_solution, solutions))
    else:
        rows = [_row_from_solution(s) for s in solutions]
    return SweepResult(rows=tuple(rows))


def find_lambda_for_volume(
    params: ModelParams,
    background: BackgroundFields,
    mesh: Mesh,
    v_target: float,
    tol: float = 1e-4,
    controls=None,
) -> Tuple[float, GravSolution]:
    """Scale lam* whose solution has volume v_target, with that solution.

    The target must lie strictly inside the admissible window (the
    endpoints are limit values, attained by no solution).  A half-decade
    scan walks from lam=1 in the direction indicated by the volume defect
    until the target is bracketed, then bisection in ln(lam) -- each probe
    warm-started from the nearer bracket end -- runs until
    |V(lam*) - v_target| < tol.
    """
    lo, hi = admissible_interval(params.N, params.l, params.tau)
    if not (lo < v_target < hi):
        raise AdmissibilityError(
            f"target volume {v_target!r} is not strictly inside the "
            f"admissible window ({lo:g}, {hi:g})"
        )

    base = solve_coupled(params.with_updates(lam=1.0), mesh, background, controls=controls)
    v_base = compute_volume(base)
    if abs(v_base - v_target) < tol:
        return 1.0, base

    # volume falls as the scale grows (weak-scale limit hi at lam->0,
    # strong-scale limit lo at lam->inf), so walk toward larger lam when
    # the target is below the lam=1 volume
    step = 0.5 * math.log(10.0) * (1.0 if v_target < v_base else -1.0)
    log_a, v_a, sol_a = 0.0, v_base, base
    log_b = None
    prev = base
    while True:
        log_next = log_a + step if log_b is None else None
        if log_next is None:
            break
        lam_next = math.exp(log_next)
        if not (SCAN_RANGE[0] <= lam_next <= SCAN_RANGE[1]):
            raise SearchFailureError(
                f"no scale in [{SCAN_RANGE[0]:g}, {SCAN_RANGE[1]:g}] brackets "
                f"volume {v_target!r} (last volume {v_a!r} at lam={math.exp(log_a):g})"
            )
        prev = continue_scale(prev, background, lam_next, controls=controls)
        v_next = compute_volume(prev)
        if abs(v_next - v_target) < tol:
            return lam_next, prev
        if (v_a - v_target) * (v_next - v_target) < 0.0:
            log_b, v_b, sol_b = log_next, v_next, prev
            break
        log_a, v_a, sol_a = log_next, v_next, prev

    for _ in range(200):
        log_m = 0.5 * (log_a + log_b)
        seed = sol_a if abs(log_m - log_a) <= abs(log_m - log_b) else sol_b
        sol_m = continue_scale(seed, background, math.exp(log_m), controls=controls)
        v_m = compute_volume(sol_m)
        if abs(v_m - v_target) < tol:
            return math.exp(log_m), sol_m
        if (v_a - v_target) * (v_m - v_target) < 0.0:
            log_b, v_b, sol_b = log_m, v_m, sol_m
        else:
            log_a, v_a, sol_a = log_m, v_m, sol_m
    raise SearchFailureError(
        f"bisection did not reach |V - {v_target!r}| < {tol:g}; bracket "
        f"[{math.exp(log_a):g}, {math.exp(log_b):g}] with volumes ({v_a!r}, {v_b!r})"
    )
