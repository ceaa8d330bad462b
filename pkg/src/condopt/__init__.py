"""SPH heat conduction on a square plate and target-driven optimization of
its conductivity field."""
from .kernel import KernelSpec, kernel_dr, kernel_dr_over_r, kernel_gradient, kernel_value
from .optimizer import (
    OptimizationReport,
    OptimizerOptions,
    OptimizerState,
    evolve_k,
    impose_target,
    pde_relax,
    regularize_k,
    renormalize_k,
    run_optimization,
    update_schedules,
)
from .particles import CellGrid, NeighborList, ParticleSystem, Role, build_cell_grid, build_lattice, neighbors
from .problems import (
    BoundarySegment,
    GaussianSource,
    ProblemSpec,
    UniformSource,
    builtin,
    source_at,
    spec_from_text,
    spec_to_text,
)
from .solver import (
    ResidualStats,
    TimeStepPolicy,
    compute_residuals,
    discretize,
    implicit_local_step,
    refresh_boundaries,
    solve_steady,
    solve_steady_direct,
    solve_steady_explicit,
    steady_temperature,
    strang_sweep,
)

__version__ = "0.1.0"
