"""Bound-preserving finite elements for fast bimolecular reactive transport.

The package solves the two reaction-invariant diffusion problems of an
instantaneous reaction n_a A + n_b B -> n_c C, enforces physical bounds by
minimizing the discrete energy over a box, and recovers the species fields
algebraically. Galerkin and clip-afterwards variants are included as
diagnostic baselines, along with the benchmark problems used to study them.
"""

__version__ = "0.1.0"

from .analysis import (
    ConvergenceFit,
    convergence_rates,
    h1_seminorm_error,
    integrated_concentration_over_y,
    l2_error,
    l2_norm,
    violation_stats,
)
from .assembly import (
    AssembledSystem,
    AssemblyError,
    TensorField,
    assemble,
    assemble_load,
    constant_tensor,
    dump_system,
    element_capacity,
    element_stiffness,
    isotropic,
    lump_capacity,
    rotated_anisotropic,
    rotated_field,
)
from .benchmarks import (
    BENCHMARKS,
    BenchmarkCase,
    comparison_counterexample,
    manufactured,
    point_sources,
    slug,
    tank,
)
from .boxqp import MACHINE_EPS, QpSolution, SolverError, solve_box_qp, solve_unconstrained
from .mesh import Mesh, MeshError, generate_structured, nearest_node
from .reaction import (
    DataError,
    InvariantData,
    ProblemSpec,
    ReactionResult,
    SpeciesData,
    Stoichiometry,
    TransientReactionResult,
    recover_species,
    run_steady,
    run_transient,
    to_invariants,
)
from .solvers import (
    Bounds,
    NodalField,
    TransientResult,
    solve_steady,
    solve_transient,
)
from .vtkio import write_vtk

__all__ = [
    "AssembledSystem",
    "AssemblyError",
    "BENCHMARKS",
    "BenchmarkCase",
    "Bounds",
    "ConvergenceFit",
    "DataError",
    "InvariantData",
    "MACHINE_EPS",
    "Mesh",
    "MeshError",
    "NodalField",
    "ProblemSpec",
    "QpSolution",
    "ReactionResult",
    "SolverError",
    "SpeciesData",
    "Stoichiometry",
    "TensorField",
    "TransientReactionResult",
    "TransientResult",
    "assemble",
    "assemble_load",
    "comparison_counterexample",
    "constant_tensor",
    "convergence_rates",
    "dump_system",
    "element_capacity",
    "element_stiffness",
    "generate_structured",
    "h1_seminorm_error",
    "integrated_concentration_over_y",
    "isotropic",
    "l2_error",
    "l2_norm",
    "lump_capacity",
    "manufactured",
    "nearest_node",
    "point_sources",
    "recover_species",
    "rotated_anisotropic",
    "rotated_field",
    "run_steady",
    "run_transient",
    "slug",
    "solve_box_qp",
    "solve_steady",
    "solve_transient",
    "solve_unconstrained",
    "tank",
    "to_invariants",
    "violation_stats",
    "write_vtk",
]
