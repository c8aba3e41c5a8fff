"""Estimator-style front end: fit on loss data, predict contract payouts.

``ContractDesigner`` wraps the solver stack behind the familiar
fit/predict surface so the optimizer composes with pipelines and parameter
search utilities: parameters are declared in ``__init__`` (``get_params`` /
``set_params`` come from the scikit-learn base class), ``fit`` consumes a
loss sample or loss specification, and fitted attributes carry the solved
contract.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .choquet import InsuranceProblem, build_lambda_hat, build_psi
from .contracts import contract_from_quantile, evaluate_contract
from .direct import DirectConfig, solve_direct
from .models import (
    DistortionMeasure,
    Grid,
    LossModel,
    MarketParams,
    Utility,
    build_closed_form_measure,
    build_loss_model,
    measure_from_weighting,
)
from .shooting import OdeConfig, solve_ode
from .validation import check_loss_sample

__all__ = ["ContractDesigner"]

_WEIGHTINGS = {
    "identity": lambda p: p,
}


class ContractDesigner(BaseEstimator):
    """Design the Pareto-optimal moral-hazard-free contract for a loss.

    Parameters
    ----------
    theta, sigma, gamma, beta:
        Market constants: safety loading, variance loading, insurer
        reservation value and insured initial wealth.
    utility, alpha:
        Utility family ("exponential" or "linear") and risk aversion.
    weighting:
        Probability weighting: "identity", "power", a callable w(p), or a
        ready :class:`DistortionMeasure` (then ``weighting_exponent`` is
        ignored).  "closed_form" selects the analytic regression measure.
    weighting_exponent:
        Exponent for the "power" weighting w(p) = p ** exponent.
    n:
        Grid resolution.
    method:
        "direct", "ode" (direct solve plus shooting refinement) or "both"
        (also records the cross-solver gap).
    max_iters, tol_grad:
        Direct-solver budget and projected-gradient tolerance.

    Attributes
    ----------
    problem_ : InsuranceProblem
    retention_quantile_ : ndarray of nodal G values
    psi_, lambda_hat_ : ndarray diagnostics of the solution
    contract_ : Contract priced at the tight premium
    premium_, insurer_value_, insured_value_ : float
    solver_gap_ : float, sup gap between the two solvers (method="both")
    n_iter_ : int, direct-solver iterations
    converged_ : bool
    """

    def __init__(self, *, theta=0.1, sigma=0.5, gamma=0.0, beta=0.0,
                 utility="exponential", alpha=1.0,
                 weighting="identity", weighting_exponent=2.0,
                 n=1000, method="direct", max_iters=200_000, tol_grad=1e-8):
        self.theta = theta
        self.sigma = sigma
        self.gamma = gamma
        self.beta = beta
        self.utility = utility
        self.alpha = alpha
        self.weighting = weighting
        self.weighting_exponent = weighting_exponent
        self.n = n
        self.method = method
        self.max_iters = max_iters
        self.tol_grad = tol_grad

    def _build_measure(self, grid: Grid) -> DistortionMeasure:
        w = self.weighting
        if isinstance(w, DistortionMeasure):
            if w.grid.n != grid.n:
                raise ValueError("supplied distortion measure uses a different grid")
            return w
        if callable(w):
            return measure_from_weighting(w, grid)
        if w == "power":
            k = float(self.weighting_exponent)
            if k <= 0:
                raise ValueError("power weighting needs a positive exponent")
            return measure_from_weighting(lambda p: p ** k, grid)
        if w == "closed_form":
            return build_closed_form_measure(grid)
        if w in _WEIGHTINGS:
            return measure_from_weighting(_WEIGHTINGS[w], grid)
        raise ValueError(f"unknown weighting {w!r}")

    def _build_problem(self, X) -> InsuranceProblem:
        grid = Grid(self.n)
        if isinstance(X, LossModel):
            if X.grid.n != grid.n:
                raise ValueError("loss model grid does not match n")
            loss = X
        elif isinstance(X, dict):
            loss = build_loss_model(X, grid)
        else:
            loss = build_loss_model(check_loss_sample(X), grid)
        return InsuranceProblem(
            loss=loss,
            measure=self._build_measure(grid),
            utility=Utility(self.utility, alpha=self.alpha),
            market=MarketParams(theta=self.theta, sigma=self.sigma,
                                gamma=self.gamma, beta=self.beta),
        )

    def fit(self, X, y=None):
        """Solve the contract design problem for the given loss.

        ``X`` is a 1-D array of nonnegative loss observations, a loss spec
        dict understood by :func:`build_loss_model`, or a prebuilt
        :class:`LossModel` on the same grid.  ``y`` is ignored.
        """
        if self.method not in ("direct", "ode", "both"):
            raise ValueError(f"unknown method {self.method!r}")
        problem = self._build_problem(X)
        cfg = DirectConfig(max_iters=int(self.max_iters), tol_grad=self.tol_grad)
        direct = solve_direct(problem, cfg)
        g = direct.g.values
        converged = direct.converged
        gap = None
        if self.method in ("ode", "both"):
            ode = solve_ode(problem, OdeConfig(), warm_start=direct.g)
            gap = float(np.max(np.abs(ode.gamma - g)))
            converged = converged and ode.diagnostics.converged
            if self.method == "ode":
                g = ode.gamma

        self.problem_ = problem
        self.retention_quantile_ = g
        self.psi_ = build_psi(g, problem)
        self.lambda_hat_ = build_lambda_hat(g, problem)
        self.contract_ = contract_from_quantile(g, problem)
        self.premium_ = self.contract_.premium
        self.insurer_value_, self.insured_value_ = evaluate_contract(
            self.contract_, problem)
        self.objective_value_ = direct.objective
        self.solver_gap_ = gap
        self.n_iter_ = direct.iterations
        self.converged_ = converged
        return self

    def predict(self, X) -> np.ndarray:
        """Compensation I(x) the insurer pays at each loss level."""
        check_is_fitted(self, "contract_")
        return self.contract_.compensation(np.asarray(X, dtype=float))

    def predict_retention(self, X) -> np.ndarray:
        """Retained loss R(x) at each loss level."""
        check_is_fitted(self, "contract_")
        return self.contract_.retention(np.asarray(X, dtype=float))
