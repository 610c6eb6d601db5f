"""Command line interface.

Six batch subcommands cover the pipeline: ``background`` (decoupled stage),
``solve`` (coupled solve at one scale), ``verify`` (re-run the identity
battery on an exported profile table), ``export`` (profile table -> table +
optional SVG), ``sweep`` (volume-versus-scale map) and ``find-volume``
(invert the map).  Every command reads one flat config file, accepts a few
overriding flags, writes deterministic artifacts (CSV with 17 significant
digits, JSON with sorted keys, no timestamps) and reports through exit
codes: 0 success, 1 solver/verification failure, 2 configuration or usage
error.  Prerequisites are computed in memory -- ``solve`` always builds its
own background stage, nothing needs to exist on disk beforehand.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, Optional

import numpy as np

from .background import solve_background
from .bvp import discretize
from .config import RunConfig, load_config
from .diagnostics import (
    compute_volume,
    extract_abc,
    identity_suite,
    shooting_crosscheck,
    solution_from_arrays,
    witness_spectrum,
)
from .errors import (
    AdmissibilityError,
    ConfigError,
    GravortexError,
    MeshError,
    ProfileError,
)
from .geometry import CSV_HEADER, export_profiles, write_svg_lines
from .gravitating import solve_coupled
from .mesh import Mesh
from .profiles import GravSolution
from .volume_map import find_lambda_for_volume, sweep_lambda

__all__ = ["main", "build_parser"]


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, int(args.threads))
    env = os.environ.get("GRAVORTEX_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _config_from_args(args) -> RunConfig:
    overrides: Dict[str, str] = {}
    if getattr(args, "lam", None) is not None:
        overrides["lambda"] = repr(float(args.lam))
    if getattr(args, "mesh_nodes", None) is not None:
        overrides["nodes"] = str(int(args.mesh_nodes))
    if getattr(args, "mesh_T", None) is not None:
        overrides["T"] = repr(float(args.mesh_T))
    return load_config(args.config, overrides)


def _base_payload(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "params": cfg.params.as_dict(),
        "mesh": {"T": cfg.T, "nodes": cfg.nodes, "spacing": 2.0 * cfg.T / (cfg.nodes - 1)},
        "tolerances": {"tol_newton": cfg.tol_newton, "tol_bc": cfg.tol_bc},
    }


def _write_report(path: Optional[str], payload: dict) -> None:
    if path is None:
        return
    text = json.dumps(payload, sort_keys=True, indent=2)
    try:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc


def _load_solution_csv(path: str, cfg: RunConfig) -> GravSolution:
    """Rebuild a GravSolution from an exported profile table.

    The mesh is reconstructed from the t column (it must be the uniform
    symmetric grid the exporter writes), the density from the f column, and
    psi' by differentiating psi; admissibility of the loaded profile is
    checked before any further use.
    """
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ProfileError(f"cannot read profile table {path}: {exc}") from exc
    expected = tuple(CSV_HEADER.split(","))
    if data.dtype.names != expected:
        raise ProfileError(
            f"{path}: column header {data.dtype.names!r} does not match {expected!r}"
        )
    t = np.atleast_1d(data["t"])
    if t.size < 9:
        raise ProfileError(f"{path}: too few rows ({t.size})")
    mesh = Mesh.uniform(float(t[-1]), t.size)
    if not np.allclose(mesh.nodes, t, rtol=0.0, atol=1e-12 * (1.0 + abs(t[-1]))):
        raise MeshError(f"{path}: t column is not the uniform symmetric grid")
    coeff = 0.5 * np.atleast_1d(data["f"])
    if np.any(~np.isfinite(coeff)) or np.any(coeff <= 0.0):
        raise ProfileError(f"{path}: density column must be positive and finite")
    disc = discretize(mesh, order=6)
    psi = np.atleast_1d(data["psi"])
    return solution_from_arrays(
        cfg.params,
        mesh,
        np.atleast_1d(data["q11"]),
        np.atleast_1d(data["x"]),
        np.atleast_1d(data["q22"]),
        psi,
        disc.differentiate(psi),
        coeff,
        disc=disc,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_background(args) -> int:
    cfg = _config_from_args(args)
    mesh = cfg.mesh()
    bg = solve_background(cfg.params, mesh, controls=cfg.controls())
    q0 = bg.q0
    cols = (mesh.nodes, q0.q11, q0.x, q0.q22, q0.psi, bg.detg0, bg.u0, bg.u0prime)
    lines = ["t,q11,x,q22,psi,detg0,u0,u0prime"]
    for row in zip(*cols):
        lines.append(",".join("%.17g" % v for v in row))
    try:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write background table {args.out}: {exc}") from exc
    payload = _base_payload(cfg, "background")
    payload["degree_residual"] = bg.degree_residual
    payload["shift_balance_slope"] = bg.u0_end_slope
    payload["psi_end_slope"] = float(q0.psiprime[-1])
    _write_report(args.report, payload)
    print(
        f"background: degree residual {bg.degree_residual:.3e}, "
        f"psi end slope {float(q0.psiprime[-1]):.6f} -> {args.out}"
    )
    return 0


def _diagnose(sol: GravSolution, deep: bool) -> dict:
    rep = identity_suite(sol)
    inv = extract_abc(sol)
    body = rep.as_dict()
    body["max_identity_residual"] = rep.max_identity_residual
    out = {
        "identity": body,
        "verdict": rep.all_ok,
        "volume": compute_volume(sol),
        "invariants": {"a": inv.a, "b": inv.b, "c": inv.c},
    }
    if deep:
        out["shooting_deviation"] = shooting_crosscheck(sol)
        ws = witness_spectrum(sol)
        out["witness"] = {
            "symmetric_min": ws.symmetric_min,
            "symmetric_bottom": list(ws.symmetric_bottom),
            "unconstrained_bottom": list(ws.unconstrained_bottom),
        }
    return out


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    mesh = cfg.mesh()
    bg = solve_background(cfg.params, mesh, controls=cfg.controls())
    sol = solve_coupled(cfg.params, mesh, bg, controls=cfg.controls())
    export_profiles(sol, args.out, plot=args.plot)
    payload = _base_payload(cfg, "solve")
    payload.update(_diagnose(sol, deep=args.deep))
    payload["solver_residual"] = sol.residual_norm
    _write_report(args.report, payload)
    print(
        f"solved lam={cfg.params.lam:g}: V={payload['volume']:.10f} "
        f"c={payload['invariants']['c']:.8f} "
        f"max identity residual {payload['identity']['max_identity_residual']:.3e} "
        f"verdict={'pass' if payload['verdict'] else 'FAIL'} -> {args.out}"
    )
    return 0 if payload["verdict"] else 1


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    payload = _base_payload(cfg, "verify")
    payload["source"] = args.sol
    try:
        sol = _load_solution_csv(args.sol, cfg)
        payload.update(_diagnose(sol, deep=args.deep))
    except (ProfileError, MeshError) as exc:
        payload["error"] = str(exc)
        payload["identity"] = {"flags": {"positivity": False}}
        payload["verdict"] = False
        _write_report(args.report, payload)
        print(f"verify: REJECTED {args.sol}: {exc}")
        return 1
    _write_report(args.report, payload)
    ok = payload["verdict"]
    print(
        f"verify {args.sol}: V={payload['volume']:.10f} "
        f"max identity residual {payload['identity']['max_identity_residual']:.3e} "
        f"verdict={'pass' if ok else 'FAIL'}"
    )
    return 0 if ok else 1


def cmd_export(args) -> int:
    cfg = _config_from_args(args)
    sol = _load_solution_csv(args.sol, cfg)
    geo = export_profiles(sol, args.out, plot=args.plot)
    payload = _base_payload(cfg, "export")
    payload.update(
        {
            "source": args.sol,
            "volume": geo.volume,
            "gauss_bonnet": geo.gauss_bonnet,
            "gauss_bonnet_fd": geo.gauss_bonnet_fd,
        }
    )
    _write_report(args.report, payload)
    print(
        f"export {args.sol} -> {args.out}: volume {geo.volume:.10f}, "
        f"total curvature {geo.gauss_bonnet:.10f}"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    if not (args.lambda_min > 0.0 and args.lambda_max > args.lambda_min):
        raise ConfigError("need 0 < --lambda-min < --lambda-max")
    if args.points < 2:
        raise ConfigError("need --points >= 2")
    mesh = cfg.mesh()
    bg = solve_background(cfg.params, mesh, controls=cfg.controls())
    grid = np.logspace(
        np.log10(args.lambda_min), np.log10(args.lambda_max), args.points
    )
    res = sweep_lambda(
        cfg.params, bg, mesh, grid, threads=_threads(args), controls=cfg.controls()
    )
    lines = ["lam,V,a,b,c,q11_center,identity_max,solver_residual,suite_ok"]
    for r in res.rows:
        lines.append(
            ",".join(
                "%.17g" % v
                for v in (
                    r.lam,
                    r.volume,
                    r.a,
                    r.b,
                    r.c,
                    r.q11_center,
                    r.identity_max,
                    r.solver_residual,
                )
            )
            + f",{int(r.suite_ok)}"
        )
    try:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write sweep table {args.out}: {exc}") from exc
    if args.plot is not None:
        write_svg_lines(
            args.plot,
            res.lams,
            {"V": res.volumes},
            xlabel="lambda",
            ylabel="volume",
            logx=True,
        )
    payload = _base_payload(cfg, "sweep")
    payload.update(
        {
            "rows": len(res.rows),
            "volume_range": [float(res.volumes.min()), float(res.volumes.max())],
            "all_rows_pass": res.all_suites_ok(),
            "small_end_monotone": res.small_end_monotone,
        }
    )
    _write_report(args.report, payload)
    ok = res.all_suites_ok()
    print(
        f"sweep {args.points} scales in [{args.lambda_min:g}, {args.lambda_max:g}]: "
        f"V in [{res.volumes.min():.6f}, {res.volumes.max():.6f}], "
        f"rows {'all pass' if ok else 'FAIL'} -> {args.out}"
    )
    return 0 if ok else 1


def cmd_find_volume(args) -> int:
    cfg = _config_from_args(args)
    mesh = cfg.mesh()
    bg = solve_background(cfg.params, mesh, controls=cfg.controls())
    lam_star, sol = find_lambda_for_volume(
        cfg.params, bg, mesh, args.target, controls=cfg.controls()
    )
    export_profiles(sol, args.out, plot=args.plot)
    payload = _base_payload(cfg, "find-volume")
    payload.update(_diagnose(sol, deep=args.deep))
    payload["target"] = args.target
    payload["lam_star"] = lam_star
    payload["volume_defect"] = payload["volume"] - args.target
    _write_report(args.report, payload)
    print(
        f"find-volume V={args.target:g}: lam*={lam_star!r} "
        f"V={payload['volume']:.10f} c={payload['invariants']['c']:.8f} -> {args.out}"
    )
    return 0 if payload["verdict"] else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gravortex",
        description="symmetric critical vortex profiles on the sphere: "
        "solve, verify, and map volume against scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default, report_default="report.json"):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--report", default=report_default, help="JSON report path")
        p.add_argument("--mesh-nodes", type=int, default=None, dest="mesh_nodes")
        p.add_argument("--mesh-T", type=float, default=None, dest="mesh_T")
        if out_default is not None:
            p.add_argument("--out", default=out_default, help="output CSV path")

    p = sub.add_parser("background", help="solve the decoupled stage")
    common(p, "bg.csv")
    p.set_defaults(func=cmd_background)

    p = sub.add_parser("solve", help="solve the coupled system at one scale")
    common(p, "sol.csv")
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--plot", default=None, help="SVG plot path")
    p.add_argument("--deep", action="store_true", help="add shooting and witness checks")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-run the identity battery on a profile table")
    common(p, None)
    p.add_argument("--sol", required=True, help="profile table to verify")
    p.add_argument("--deep", action="store_true", help="add shooting and witness checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="recompute geometry columns from a profile table")
    common(p, "profiles.csv", report_default=None)
    p.add_argument("--sol", required=True, help="input profile table")
    p.add_argument("--plot", default=None, help="SVG plot path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sweep", help="tabulate volume against scale")
    common(p, "vmap.csv")
    p.add_argument("--lambda-min", type=float, default=1e-3, dest="lambda_min")
    p.add_argument("--lambda-max", type=float, default=1e3, dest="lambda_max")
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--plot", default=None, help="SVG plot path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("find-volume", help="find the scale matching a target volume")
    common(p, "sol.csv")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--plot", default=None, help="SVG plot path")
    p.add_argument("--deep", action="store_true", help="add shooting and witness checks")
    p.set_defaults(func=cmd_find_volume)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if isinstance(code, int) else 2
    try:
        return args.func(args)
    except (ConfigError, AdmissibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GravortexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
