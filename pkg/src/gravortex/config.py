"""Flat key=value run configuration.

One small text format drives every command: ``key = value`` lines, blank
lines and ``#`` comments ignored, and exactly the nine keys below -- model
constants (N, l, tau, V0, lambda), mesh extent (T, nodes), and the two
solver tolerances (tol_newton, tol_bc).  Anything else is rejected loudly;
a config file that parses is a complete, reproducible description of a run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

from .bvp import SolveControls
from .errors import ConfigError, MeshError, ParameterError
from .mesh import Mesh
from .params import ModelParams, validate_params

__all__ = ["RunConfig", "DEFAULTS", "parse_config_text", "load_config"]

DEFAULTS: Dict[str, str] = {
    "N": "3",
    "l": "1",
    "tau": "1.0",
    "V0": "7.0",
    "lambda": "1.0",
    "T": "40.0",
    "nodes": "2001",
    "tol_newton": "1e-10",
    "tol_bc": "1e-6",
}

_INT_KEYS = ("N", "l", "nodes")
_FLOAT_KEYS = ("tau", "V0", "lambda", "T", "tol_newton", "tol_bc")


@dataclass(frozen=True)
class RunConfig:
    """Typed configuration: validated parameters plus mesh/solver knobs."""

    params: ModelParams
    T: float
    nodes: int
    tol_newton: float
    tol_bc: float

    def mesh(self) -> Mesh:
        return Mesh.uniform(self.T, self.nodes)

    def controls(self) -> SolveControls:
        return SolveControls(tol_newton=self.tol_newton, tol_bc=self.tol_bc)

    def as_dict(self) -> dict:
        out = self.params.as_dict()
        out.update(
            {
                "T": self.T,
                "nodes": self.nodes,
                "tol_newton": self.tol_newton,
                "tol_bc": self.tol_bc,
            }
        )
        return out


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines into a string map; reject anything odd."""
    values: Dict[str, str] = {}
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if key not in DEFAULTS:
            raise ConfigError(
                f"line {num}: unknown key {key!r} (known: {', '.join(sorted(DEFAULTS))})"
            )
        if key in values:
            raise ConfigError(f"line {num}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {num}: empty value for {key!r}")
        values[key] = value
    return values


def _coerce(merged: Mapping[str, str]) -> RunConfig:
    typed: Dict[str, float] = {}
    for key in _INT_KEYS:
        try:
            typed[key] = int(merged[key])
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {merged[key]!r} is not an integer") from exc
    for key in _FLOAT_KEYS:
        try:
            typed[key] = float(merged[key])
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {merged[key]!r} is not a number") from exc
    try:
        params = validate_params(
            {
                "N": typed["N"],
                "l": typed["l"],
                "tau": typed["tau"],
                "V0": typed["V0"],
                "lambda": typed["lambda"],
            }
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    if not (typed["T"] > 0.0):
        raise ConfigError(f"T must be positive, got {typed['T']}")
    if not (typed["tol_newton"] > 0.0 and typed["tol_bc"] > 0.0):
        raise ConfigError("tolerances must be positive")
    try:
        Mesh.uniform(typed["T"], int(typed["nodes"]))
    except MeshError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        params=params,
        T=typed["T"],
        nodes=int(typed["nodes"]),
        tol_newton=typed["tol_newton"],
        tol_bc=typed["tol_bc"],
    )


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge defaults <- config file <- explicit overrides and validate.

    ``overrides`` maps config keys to *string* values (command-line text);
    a missing/unreadable file and every malformed or inconsistent value
    raise ConfigError, which commands translate into exit code 2.
    """
    merged = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        merged.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = str(value)
    return _coerce(merged)
