"""Joint estimation of linear dynamical systems on graphs.

Provides graph construction and spectral algebra, the graph-geometry
scalars that control joint-estimation difficulty (inverse scaling
factors, compatibility factors, Cheeger constants), ground-truth system
ensembles and trajectory simulation, controllability-Grammian
dispersion and its upper bounds, a generalized-lasso solver for the
graph total-variation penalized least-squares estimator plus baselines,
numeric evaluation of the error-bound ingredients, an experiment
harness, and EPA-style station-data ingestion.
"""

from graphlds.graphs import (
    Graph,
    GraphSpectrum,
    build_graph,
    complete_graph,
    erdos_renyi_graph,
    grid2d_graph,
    incidence,
    knn_graph,
    path_graph,
    spectrum,
    star_graph,
)
from graphlds.geometry import (
    CompatReport,
    ScalingFactors,
    cheeger_exact_small,
    compat_exact_small,
    compat_lower_bound,
    edges_appearing,
    scaling_factors,
)
from graphlds.systems import (
    DispersionBounds,
    GrammianBundle,
    PiecewiseField,
    SmoothField,
    SystemEnsemble,
    TrajectoryPanel,
    deltaG_bounds,
    gen_ground_truth,
    grammian,
    grammian_aggregate,
    grammian_bundle,
    grammian_lipschitz_factor,
    one_step_pred_mse,
    simulate_panel,
    toeplitz_spectral_norm,
)
from graphlds.estimators import (
    DesignSystem,
    FitResult,
    PathResult,
    SolverOptions,
    build_design,
    fit_graph_tv,
    fit_group_lasso,
    fit_laplacian,
    fit_ols_individual,
    fit_ols_pooled,
    lambda_max,
    regularization_path,
    theoretical_lambda,
)
from graphlds.theory import (
    BoundConstants,
    BoundTerms,
    ConditionCheck,
    ConditionInputs,
    TheoryReport,
    build_theory_report,
    check_theorem_conditions,
    evaluate_bound_terms,
    geometry_log_multiplier,
    theorem_error_bound,
)
from graphlds.experiments import (
    MetricRow,
    SplitSpec,
    SweepConfig,
    coefficient_stability,
    compute_metrics,
    make_splits,
    run_sweep,
)

__version__ = "0.1.0"
