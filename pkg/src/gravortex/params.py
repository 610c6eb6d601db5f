"""Model parameters and the elementary functions attached to them.

The model is posed on the round sphere with a rank-2 bundle of twist ``N``
split by a holomorphic section vanishing to orders ``l`` and ``N - l`` at the
two poles.  The symmetry-breaking scale is ``tau``; the gravitational coupling
``alpha`` is never free — it is pinned by the criticality relation
``2*N*alpha*tau = 1``.  ``V0`` is the background volume divided by 2*pi and
must lie in the open stability window ``(2N/tau, (4N-4l)/tau)``.  ``lam`` is
the continuation weight of the coupled system and ``s`` the homotopy parameter
that deforms the decoupled problem (s=0) into the coupled one (s=1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Tuple

import numpy as np

from .errors import ParameterError

__all__ = [
    "ModelParams",
    "validate_params",
    "admissible_interval",
    "fs_weight",
]


@dataclass(frozen=True)
class ModelParams:
    """Validated constants of one problem instance.

    Use :func:`validate_params` to construct instances; the constructor
    itself performs no checking so that trusted internal call sites (e.g.
    continuation sweeping ``lam``/``s``) can clone cheaply.
    """

    N: int
    l: int
    tau: float
    alpha: float
    V0: float
    lam: float
    s: float

    def with_updates(self, **kw) -> "ModelParams":
        """Clone with selected fields replaced (``lam``/``s`` hops)."""
        new = replace(self, **kw)
        if not (new.lam > 0.0):
            raise ParameterError(f"lambda must be positive, got {new.lam}")
        if not (0.0 <= new.s <= 1.0):
            raise ParameterError(f"s must lie in [0, 1], got {new.s}")
        return new

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "l": self.l,
            "tau": self.tau,
            "alpha": self.alpha,
            "V0": self.V0,
            "lambda": self.lam,
            "s": self.s,
        }


def _as_positive_int(name: str, value) -> int:
    iv = int(value)
    if iv != value:
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if iv <= 0:
        raise ParameterError(f"{name} must be positive, got {value!r}")
    return iv


def validate_params(raw: Mapping) -> ModelParams:
    """Validate a raw parameter record and return :class:`ModelParams`.

    ``raw`` must supply N, l, tau, V0 and may supply lambda (or lam) and s.
    ``alpha`` is always computed from criticality, never accepted as input.
    Every rejection message names the violated inequality.
    """
    unknown = set(raw) - {"N", "l", "tau", "V0", "lambda", "lam", "s"}
    if unknown:
        raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
    try:
        N = _as_positive_int("N", raw["N"])
        l = _as_positive_int("l", raw["l"])
        tau = float(raw["tau"])
        V0 = float(raw["V0"])
    except KeyError as missing:
        raise ParameterError(f"missing required parameter {missing}") from None
    lam = float(raw.get("lambda", raw.get("lam", 1.0)))
    s = float(raw.get("s", 1.0))

    if not (tau > 0.0):
        raise ParameterError(f"tau must be positive, got {tau}")
    if not (V0 > 0.0):
        raise ParameterError(f"V0 must be positive, got {V0}")
    if not (lam > 0.0):
        raise ParameterError(f"lambda must be positive, got {lam}")
    if not (0.0 <= s <= 1.0):
        raise ParameterError(f"s must lie in [0, 1], got {s}")
    if 2 * l >= N:
        raise ParameterError(
            f"need 2*l < N (strict); got 2*{l} = {2 * l} >= N = {N} "
            "(the balanced split 2l = N is excluded)"
        )
    half_vol = tau * V0 / 2.0
    if not (half_vol > N):
        raise ParameterError(
            f"admissibility fails: tau*V0/2 = {half_vol:g} is not > N = {N}"
        )
    if not (half_vol < 2 * N - 2 * l):
        raise ParameterError(
            f"admissibility fails: tau*V0/2 = {half_vol:g} is not < "
            f"2N - 2l = {2 * N - 2 * l}"
        )
    alpha = 1.0 / (2.0 * N * tau)
    return ModelParams(N=N, l=l, tau=tau, alpha=alpha, V0=V0, lam=lam, s=s)


def admissible_interval(N: int, l: int, tau: float) -> Tuple[float, float]:
    """Open interval of admissible volumes ``(2N/tau, (4N-4l)/tau)``."""
    N = _as_positive_int("N", N)
    l = _as_positive_int("l", l)
    if 2 * l >= N:
        raise ParameterError(f"need 2*l < N; got l = {l}, N = {N}")
    if not (tau > 0.0):
        raise ParameterError(f"tau must be positive, got {tau}")
    return (2.0 * N / tau, (4.0 * N - 4.0 * l) / tau)


def fs_weight(t):
    """Round-sphere area weight ``w(t) = e^t / (1 + e^t)^2`` in t = ln|z|^2.

    Even in t, integrates to 1 over the whole line (antiderivative
    ``-1/(1+e^t)``).  Computed through e^{-|t|} so that large |t| underflows
    gracefully instead of overflowing.
    """
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    out = e / (1.0 + e) ** 2
    if out.ndim == 0:
        return float(out)
    return out
