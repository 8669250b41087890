"""Two-level overlapping Schwarz preconditioners with spectral coarse spaces."""

from .errors import (
    BreakdownNonpositiveCurvature,
    EmptyRegion,
    InsufficientData,
    MaxIterations,
    NonHermitian,
    NotPositiveDefinite,
    SingularCore,
    StageError,
    TooLargeForOracle,
)
from .coarse import (
    CoarseBasis,
    LocalEigenBasis,
    build_economical,
    build_eigenbases,
    build_psi_global,
    build_psibar_global,
    project_pi,
    solve_local_gep,
)
from .elliptic import EllipticSystem, assemble_global, coefficient_field
from .experiments import ExperimentConfig, run
from .mesh import StructuredMesh, build_structured_mesh
from .partition import (
    Decomposition,
    PartitionOfUnity,
    build_decomposition,
    build_dual_pou,
    build_nodal_pou,
)
from .pcg import PcgReport, estimate_condition, pcg_solve
from .pwls import PwlsSystem, assemble_pwls, evaluate_error
from .schwarz import SchwarzPreconditioner, build_schwarz

__version__ = "0.1.0"

__all__ = [
    "BreakdownNonpositiveCurvature",
    "CoarseBasis",
    "Decomposition",
    "EllipticSystem",
    "EmptyRegion",
    "ExperimentConfig",
    "LocalEigenBasis",
    "PcgReport",
    "PwlsSystem",
    "SchwarzPreconditioner",
    "InsufficientData",
    "MaxIterations",
    "NonHermitian",
    "NotPositiveDefinite",
    "PartitionOfUnity",
    "SingularCore",
    "StageError",
    "StructuredMesh",
    "TooLargeForOracle",
    "build_decomposition",
    "build_dual_pou",
    "build_nodal_pou",
    "assemble_global",
    "assemble_pwls",
    "build_economical",
    "build_eigenbases",
    "build_psi_global",
    "build_psibar_global",
    "build_schwarz",
    "build_structured_mesh",
    "coefficient_field",
    "estimate_condition",
    "evaluate_error",
    "pcg_solve",
    "project_pi",
    "run",
    "solve_local_gep",
]
