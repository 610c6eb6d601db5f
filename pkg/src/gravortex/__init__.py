"""Numerical laboratory for gravitating rank-2 vortex profiles on the sphere.

The package solves the reduced radial system for rotationally symmetric
critical vortex configurations coupled to the sphere metric, follows the
solution family in the coupling and scale parameters, verifies the exact
integral and pointwise identities the continuum problem imposes, and maps
the total-volume invariant against the scale.  Entry points:

* :func:`validate_params` / :class:`ModelParams` -- model constants,
* :func:`solve_background` then :func:`solve_coupled` -- the two-stage solve,
* :func:`identity_suite`, :func:`witness_spectrum` -- verification,
* :func:`sweep_lambda`, :func:`find_lambda_for_volume` -- the volume map,
* :func:`export_profiles` -- geometry tables and plots,
* ``gravortex`` console script -- batch commands over a flat config file.
"""

from .background import solve_background
from .bvp import SolveControls, discretize
from .config import RunConfig, load_config
from .diagnostics import (
    admissible_interval,
    compute_volume,
    extract_abc,
    identity_suite,
    liouville_crosscheck,
    shooting_crosscheck,
    solution_from_arrays,
    witness_spectrum,
)
from .errors import (
    AdmissibilityError,
    ConfigError,
    ContinuationStuckError,
    ExtrapolationError,
    GravortexError,
    InconsistentSolutionError,
    MeshError,
    NonconvergenceError,
    ParameterError,
    ProfileError,
    SearchFailureError,
)
from .geometry import export_profiles, reconstruct_H
from .gravitating import continue_scale, coupling_family, solve_coupled
from .mesh import Mesh
from .params import ModelParams, validate_params
from .profiles import BackgroundFields, GravSolution, SymmetricMatrixProfile
from .volume_map import find_lambda_for_volume, sweep_lambda

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "BackgroundFields",
    "ConfigError",
    "ContinuationStuckError",
    "ExtrapolationError",
    "GravSolution",
    "GravortexError",
    "InconsistentSolutionError",
    "Mesh",
    "MeshError",
    "ModelParams",
    "NonconvergenceError",
    "ParameterError",
    "ProfileError",
    "RunConfig",
    "SearchFailureError",
    "SolveControls",
    "SymmetricMatrixProfile",
    "admissible_interval",
    "compute_volume",
    "continue_scale",
    "coupling_family",
    "discretize",
    "export_profiles",
    "extract_abc",
    "find_lambda_for_volume",
    "identity_suite",
    "liouville_crosscheck",
    "load_config",
    "reconstruct_H",
    "shooting_crosscheck",
    "solution_from_arrays",
    "solve_background",
    "solve_coupled",
    "sweep_lambda",
    "validate_params",
    "witness_spectrum",
    "__version__",
]
