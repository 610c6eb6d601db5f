"""Geometry on the sphere rebuilt from the reduced radial profile.

The solver works with the 2x2 profile q(t) and the log-determinant psi; this
module turns those back into the objects living on the sphere: the Hermitian
fiber metric H in the standard trivialization (monomial holomorphic frame),
the conformal factor of the emergent surface, and its Gauss curvature.  The
curvature is computed along two independent routes -- once through the field
equations (exact on solutions, defined at every node) and once by direct
numerical differentiation of the log conformal factor (pure finite
differences, no knowledge of the equations) -- so their agreement is a
nontrivial consistency check rather than a tautology.  CSV/SVG export of the
nodal profiles lives here as well.

Phases are never materialized: by circle symmetry every stored field is real
and the only angular content of H is an integer winding on the off-diagonal
entry, reported as metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import ExtrapolationError, ProfileError
from .profiles import GravSolution, log_sech
from .params import ModelParams

__all__ = [
    "ReconstructedMetric",
    "GeometryProfiles",
    "reconstruct_H",
    "norm_phi_squared",
    "conformal_factor_and_curvature",
    "export_profiles",
    "write_svg_lines",
    "CSV_HEADER",
]

CSV_HEADER = "t,q11,x,q22,psi,f,K,normphi2"


# ---------------------------------------------------------------------------
# fiber metric in the standard trivialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReconstructedMetric:
    """Radial part of the fiber metric, plus the off-diagonal winding.

    ``matrix`` holds the Hermitian-positive value on the positive real axis
    (shape (..., 2, 2), real symmetric there); at angle ``arg z`` the
    off-diagonal entries pick up the phase exp(-i*winding*arg z) /
    its conjugate and nothing else changes.
    """

    matrix: np.ndarray
    winding: int


def reconstruct_H(sol: GravSolution, t) -> ReconstructedMetric:
    """Fiber metric H(t) in the monomial frame, for t strictly inside (-T, T).

    The reduction stores q = P^dag H P with P built from the two monomial
    sections z^l and z^{N-l}; inverting that congruence gives closed forms

        H11 = (q11 - 2x + q22) / (4 e^{l t})
        H22 = (q11 + 2x + q22) / (4 e^{(N-l) t})
        H12 = (q11 - q22)      / (4 e^{N t / 2})   (radial part)

    so det H = det q / (4 e^{N t}), and the H-norm of the section pair
    reproduces q11 exactly (see norm_phi_squared).  Values between nodes are
    interpolated by quintic splines of the nodal profile.
    """
    tval = np.asarray(t, dtype=float)
    T = sol.mesh.T
    if np.any(np.abs(tval) >= T):
        raise ExtrapolationError(
            f"fiber metric reconstruction needs |t| < {T:g}; got {tval!r}"
        )
    n, l = sol.params.N, sol.params.l
    grid = sol.mesh.nodes
    q = sol.q
    q11 = make_interp_spline(grid, q.q11, k=5)(tval)
    x = make_interp_spline(grid, q.x, k=5)(tval)
    q22 = make_interp_spline(grid, q.q22, k=5)(tval)

    h = np.zeros(tval.shape + (2, 2))
    h[..., 0, 0] = 0.25 * np.exp(-l * tval) * (q11 - 2.0 * x + q22)
    h[..., 1, 1] = 0.25 * np.exp(-(n - l) * tval) * (q11 + 2.0 * x + q22)
    off = 0.25 * np.exp(-0.5 * n * tval) * (q11 - q22)
    h[..., 0, 1] = off
    h[..., 1, 0] = off
    return ReconstructedMetric(matrix=h, winding=n - 2 * l)


def norm_phi_squared(metric: ReconstructedMetric, t, params: ModelParams):
    """H-norm squared of the section pair at t; algebraically equal to q11.

    The angular phases of the off-diagonal entry and of the section product
    cancel exactly, so the contraction is radial:
    e^{l t} H11 + e^{(N-l) t} H22 + 2 e^{N t / 2} H12.
    """
    tval = np.asarray(t, dtype=float)
    n, l = params.N, params.l
    h = metric.matrix
    return (
        np.exp(l * tval) * h[..., 0, 0]
        + np.exp((n - l) * tval) * h[..., 1, 1]
        + 2.0 * np.exp(0.5 * n * tval) * h[..., 0, 1]
    )


# ---------------------------------------------------------------------------
# conformal factor and curvature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryProfiles:
    """Conformal factor and Gauss curvature along the profile.

    ``curvature`` comes from the field equations (the second derivative of
    q11 is rewritten through the chart so no numerical differentiation
    enters); ``curvature_fd`` comes from 5-point finite differences of the
    log conformal factor and is NaN within two nodes of each end, where the
    stencil does not fit.  ``gauss_bonnet`` integrates K dA with the
    equation-route K; ``gauss_bonnet_fd`` uses the difference-route K away
    from the ends (the four end nodes contribute ~e^{-T} and are filled from
    the equation route).  Both must land on 4*pi for a closed surface.
    """

    f: np.ndarray
    curvature: np.ndarray
    curvature_fd: np.ndarray
    volume: float
    gauss_bonnet: float
    gauss_bonnet_fd: float


# 5-point central second-derivative stencil, O(h^4)
_STENCIL2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def conformal_factor_and_curvature(sol: GravSolution) -> GeometryProfiles:
    """Profiles (f, K) of the emergent surface, with K computed two ways.

    f is the volume density with respect to dt (total area = 2*pi * int f);
    the equation route evaluates

        K = alpha * q11'' / coeff - alpha*tau*(q11 - 2*tau)

    with q11'' = q11 * (coeff*(q11 - tau) + w4*theta'^2 + p'^2) taken from
    the chart form of the first field equation, and the difference route
    evaluates K = -(d^2/dt^2 ln f) / f directly from nodal data.
    """
    q = sol.q
    if q.p is None or q.theta is None or q.pprime is None:
        raise ProfileError("curvature extraction needs chart data")
    params = sol.params
    alpha, tau = params.alpha, params.tau
    lam = sol.coeff
    f = 2.0 * lam

    w4 = np.exp(q.psi + 2.0 * q.p + 4.0 * log_sech(q.theta))
    q11pp = q.q11 * (
        lam * (q.q11 - tau)
        + w4 * q.thetaprime * q.thetaprime
        + q.pprime * q.pprime
    )
    k_eq = alpha * q11pp / lam - alpha * tau * (q.q11 - 2.0 * tau)

    h = sol.mesh.spacing
    logf = np.log(f)
    k_fd = np.full_like(f, np.nan)
    m = f.size
    if m >= 5:
        second = (
            _STENCIL2[0] * logf[:-4]
            + _STENCIL2[1] * logf[1:-3]
            + _STENCIL2[2] * logf[2:-2]
            + _STENCIL2[3] * logf[3:-1]
            + _STENCIL2[4] * logf[4:]
        ) / (h * h)
        k_fd[2 : m - 2] = -second / f[2 : m - 2]
        # the quotient only carries information where the rounding floor of
        # the stencil (eps * |ln f| summed with the stencil weights, over
        # h^2 f) stays below the h^2 truncation scale; deep in the tails f
        # is ~e^{-2T} and no double-precision difference of ln f can resolve
        # the curvature, so those nodes are reported as undefined just like
        # the two boundary nodes where the stencil does not fit
        absl = np.abs(logf)
        wmax = np.maximum.reduce(
            [absl[:-4], absl[1:-3], absl[2:-2], absl[3:-1], absl[4:]]
        )
        floor = (
            np.sum(np.abs(_STENCIL2))
            * np.finfo(float).eps
            * wmax
            / (h * h * f[2 : m - 2])
        )
        k_fd[2 : m - 2][floor > h * h] = np.nan

    volume = float(sol.mesh.trapz(f))
    gb_eq = 2.0 * math.pi * float(sol.mesh.trapz(k_eq * f))
    k_mixed = np.where(np.isnan(k_fd), k_eq, k_fd)
    gb_fd = 2.0 * math.pi * float(sol.mesh.trapz(k_mixed * f))
    return GeometryProfiles(
        f=f,
        curvature=k_eq,
        curvature_fd=k_fd,
        volume=volume,
        gauss_bonnet=gb_eq,
        gauss_bonnet_fd=gb_fd,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_profiles(
    sol: GravSolution,
    path: str,
    plot: Optional[str] = None,
) -> GeometryProfiles:
    """Write the nodal profile table as CSV; optionally an SVG line plot.

    Columns: t, q11, x, q22, psi, f, K, normphi2 -- K is the equation-route
    curvature (defined at every node) and normphi2 the H-norm squared of the
    section pair, which coincides with q11 by the reconstruction identity.
    Floats are printed with 17 significant digits so a re-read reproduces
    the nodal values bit for bit.
    """
    geo = conformal_factor_and_curvature(sol)
    q = sol.q
    cols = (sol.mesh.nodes, q.q11, q.x, q.q22, q.psi, geo.f, geo.curvature, q.q11)
    lines = [CSV_HEADER]
    for row in zip(*cols):
        lines.append(",".join("%.17g" % v for v in row))
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write profile table {path}: {exc}") from exc

    if plot is not None:
        series = {"q11": q.q11, "psi_prime": q.psiprime, "f": geo.f}
        write_svg_lines(plot, sol.mesh.nodes, series, xlabel="t", ylabel="value")
    return geo


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def write_svg_lines(
    path: str,
    xs: np.ndarray,
    series: Dict[str, Sequence[float]],
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
) -> None:
    """Minimal standalone SVG line plot: one polyline per series, no assets.

    Axis ranges are annotated at the corners; a colored label per series
    doubles as the legend.  Intended for quick visual checks, not
    publication graphics.
    """
    width, height = 640, 420
    mleft, mright, mtop, mbottom = 60, 20, 30, 45
    xv = np.log10(np.asarray(xs, dtype=float)) if logx else np.asarray(xs, dtype=float)
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    finite = [y[np.isfinite(y)] for y in ys]
    ymin = min(float(y.min()) for y in finite if y.size)
    ymax = max(float(y.max()) for y in finite if y.size)
    if ymax == ymin:
        ymax = ymin + 1.0
    xmin, xmax = float(xv.min()), float(xv.max())
    if xmax == xmin:
        xmax = xmin + 1.0

    def sx(x):
        return mleft + (x - xmin) / (xmax - xmin) * (width - mleft - mright)

    def sy(y):
        return height - mbottom - (y - ymin) / (ymax - ymin) * (height - mtop - mbottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{mleft}" y1="{height - mbottom}" x2="{width - mright}" '
        f'y2="{height - mbottom}" stroke="black"/>',
        f'<line x1="{mleft}" y1="{mtop}" x2="{mleft}" '
        f'y2="{height - mbottom}" stroke="black"/>',
        f'<text x="{mleft}" y="{height - 8}" font-size="12">{xmin:.6g}</text>',
        f'<text x="{width - mright - 40}" y="{height - 8}" font-size="12">'
        f"{xmax:.6g}</text>",
        f'<text x="4" y="{height - mbottom}" font-size="12">{ymin:.6g}</text>',
        f'<text x="4" y="{mtop + 4}" font-size="12">{ymax:.6g}</text>',
        f'<text x="{(width + mleft) // 2}" y="{height - 8}" font-size="12">'
        f"{('log10 ' if logx else '') + xlabel}</text>",
        f'<text x="4" y="{(height + mtop) // 2}" font-size="12">{ylabel}</text>',
    ]
    for idx, (name, yv) in enumerate(zip(series.keys(), ys)):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        keep = np.isfinite(yv)
        pts = " ".join(
            f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xv[keep], yv[keep])
        )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>'
        )
        parts.append(
            f'<text x="{width - mright - 100}" y="{mtop + 16 * (idx + 1)}" '
            f'font-size="12" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
