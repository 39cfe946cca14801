"""Nearest-neighbor fused lasso: locally adaptive regression on neighborhood
graphs, with exact graph TV denoising, simulation scenarios, and scaling-law
validation tools."""

from .errors import (
    DataFormatError,
    EmptyNeighborhoodError,
    InvalidParameterError,
    SolverFailureError,
)
from .graphs import (
    IncidenceOperator,
    NeighborGraph,
    PointCloud,
    build_epsilon_graph,
    build_knn_graph,
    graph_stats,
    incidence_apply,
    nearest_neighbor_sets,
)
from .regression import (
    CvReport,
    FittedModel,
    fit,
    kfold_cv,
    knn_regression,
    load_model,
    predict,
    predict_batch,
    save_model,
)
from .scenarios import (
    Dataset,
    MethodSpec,
    ScenarioSpec,
    default_lambda_grid,
    f0_intro,
    f0_s1,
    f0_s3,
    f0_s4,
    generate,
    generate_manifold_mix,
    mse,
    optimized_mse,
    sample_intro_density,
)
from .solver import (
    TvProblem,
    TvSolution,
    duality_gap,
    objective_value,
    solve,
    solve_dual_prox,
    solve_path,
)
from .theory import (
    MeshQuantization,
    ScalingReport,
    build_mesh,
    check_embedding_inequalities,
    degree_check,
    estimate_aerr,
    lattice_resolution,
    manifold_contrast,
    max_knn_radius,
    omega_event_holds,
    penalty_scaling,
    polylog_k,
    radius_scaling,
    rate_experiment,
)

__version__ = "0.1.0"
