"""HDG solver for magnetic advection-diffusion problems in 2D and 3D."""

__version__ = "0.1.0"

from .assembly import (
    AssemblyError,
    FieldSolution,
    HDGSpace,
    TraceSystem,
    assemble_global,
    assemble_local_blocks,
    assemble_monolithic,
    condense,
    recover_fields,
    solve_problem,
)
from .basis import (
    QuadratureRule,
    ScalarBasis,
    VectorBasis,
    build_curl_range_basis,
    quadrature_rule,
)
from .driver import RunConfig, run_convergence, run_field_dump, sample_field
from .linsolve import SolveOptions, SolveReport, SparseMatrix, dense_lu_solve, sparse_solve
from .mesh import (
    Mesh,
    build_unit_cube_mesh,
    build_unit_square_mesh,
    classify_boundary_point,
    write_mesh_vtk,
)
from .norms import (
    ErrorReport,
    energy_error,
    energy_identity_residual,
    energy_norm_discrete,
    eoc,
    hcurl_seminorm_error,
    l2_error,
    w_scaled_l2_error,
)
from .postprocess import PostField, postprocess_curlfit, postprocess_star_2d
from .problems import (
    Experiment,
    ProblemSpec,
    StabilizationParams,
    build_stabilization,
    default_stabilization,
    dual_advection_apply,
    experiment_catalog,
    friedrichs_min_eig,
    lie_advection_apply,
)
