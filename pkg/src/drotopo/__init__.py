"""Distributionally robust compliance minimization on 2D density meshes."""

from .dro import (
    DroParams,
    DualObjectiveEvaluation,
    density_gradient,
    dual_lambda_derivative,
    eval_dual,
    hard_dual,
    logsumexp,
    minimize_lambda,
    node_costs,
    nominal_evaluation,
    worst_case_limit,
)
from .elasticity import (
    ComplianceForm,
    DisplacementField,
    IsotropicHooke,
    Mesh2D,
    assemble_stiffness,
    bridge_mesh,
    cantilever_mesh,
    compliance_form,
    compliance_gradient_fields,
    solve_unit_loads,
    unit_load_vectors,
)
from .errors import ConfigurationError, NumericalError
from .material import (
    DensityField,
    SimpParams,
    density_filter,
    density_filter_transpose,
    simp_scale,
    simp_scale_derivative,
)
from .optimize import (
    HistoryRecord,
    OptimizerConfig,
    ProblemSetup,
    optimize,
    project_volume_box,
)
from .oracle import (
    DiscreteTransportProblem,
    PrimalSearchResult,
    entropic_ot,
    fd_gradient,
    primal_supremum,
)
from .uncertainty import (
    LoadSpaceDiscretization,
    NominalLaw,
    ReferenceMarginals,
    build_load_grid,
    cost_matrix,
    ground_cost,
    reference_marginals,
)

__version__ = "0.1.0"
