"""Pareto-optimal moral-hazard-free insurance contract design.

The insured ranks outcomes by a rank-dependent (Choquet) utility, the
insurer prices by the mean-variance principle, and contracts are restricted
to the incentive-compatible class where both compensation and retention are
nondecreasing with slopes in [0, 1].  The package solves for the optimal
contract two ways - a concave quantile optimization (the oracle, valid for
every distortion measure) and a complementarity-ODE shooting scheme for
measures with a density - and verifies the optimality conditions they both
must satisfy.
"""

from .models import (
    Grid,
    LossModel,
    DistortionMeasure,
    Utility,
    MarketParams,
    RetentionQuantile,
    FeasibilityReport,
    build_loss_model,
    measure_from_weighting,
    build_closed_form_measure,
    validate_feasible,
)
from .choquet import (
    InsuranceProblem,
    WealthBase,
    choquet_expectation,
    wealth_after_premium,
    rdu_objective,
    rdu_gradient,
    build_psi,
    build_lambda_hat,
)
from .direct import DirectConfig, DirectResult, solve_direct, kkt_residual
from .shooting import (
    OdeConfig,
    OdeSolution,
    AtomsUnsupportedError,
    integrate_inner,
    solve_ode,
    warm_start_constants,
)
from .verify import (
    OptimalityReport,
    evaluate_optimality,
    oide_residual,
    variational_inequality_gap,
    run_closed_form_example,
    closed_form_problem,
)
from .contracts import (
    Contract,
    FrontierPoint,
    contract_from_quantile,
    benchmark_contract,
    evaluate_contract,
    pareto_frontier,
)
from .estimator import ContractDesigner

__version__ = "0.1.0"

__all__ = [
    "Grid", "LossModel", "DistortionMeasure", "Utility", "MarketParams",
    "RetentionQuantile", "FeasibilityReport", "build_loss_model",
    "measure_from_weighting", "build_closed_form_measure", "validate_feasible",
    "InsuranceProblem", "WealthBase", "choquet_expectation",
    "wealth_after_premium", "rdu_objective", "rdu_gradient", "build_psi",
    "build_lambda_hat", "DirectConfig", "DirectResult", "solve_direct",
    "kkt_residual", "OdeConfig", "OdeSolution", "AtomsUnsupportedError",
    "integrate_inner", "solve_ode", "warm_start_constants",
    "OptimalityReport", "evaluate_optimality", "oide_residual",
    "variational_inequality_gap", "run_closed_form_example",
    "closed_form_problem", "Contract", "FrontierPoint",
    "contract_from_quantile", "benchmark_contract", "evaluate_contract",
    "pareto_frontier", "ContractDesigner",
]
