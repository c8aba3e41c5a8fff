"""Loss-space contracts, party valuations, benchmarks and the frontier sweep.

A solved retention quantile G maps back to loss space through the loss cdf:
R(x) = G(F_X(x)), I(x) = x - R(x).  Premiums always make the insurer's
participation constraint tight, premium = gamma + theta E[I] + sigma Var[I],
so the insurer's valuation of any contract produced here equals gamma and
comparisons across contracts are comparisons of the insured's value alone.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .choquet import InsuranceProblem, _nodal
from .direct import DirectConfig, solve_direct
from .models import LossModel, RetentionQuantile
from .shooting import OdeConfig, solve_ode

__all__ = [
    "Contract",
    "FrontierPoint",
    "contract_from_quantile",
    "benchmark_contract",
    "parse_benchmark_spec",
    "evaluate_contract",
    "pareto_frontier",
]


@dataclass(frozen=True)
class Contract:
    """Retention/compensation pair with its tight premium."""

    loss: LossModel
    retention_quantile: np.ndarray
    premium: float
    expected_compensation: float
    compensation_variance: float

    def retention(self, x) -> np.ndarray:
        p = self.loss.cdf_at(x)
        return np.interp(p, self.loss.grid.nodes, self.retention_quantile)

    def compensation(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.retention(x)


def contract_from_quantile(g, problem: InsuranceProblem) -> Contract:
    """Price a feasible retention quantile with the tight premium."""
    gv = _nodal(g)
    loss = problem.loss
    comp = loss.quantile - gv
    e_i = loss.grid.trapezoid(comp)
    var_i = loss.grid.trapezoid(comp * comp) - e_i * e_i
    market = problem.market
    premium = market.gamma + market.theta * e_i + market.sigma * var_i
    return Contract(
        loss=loss,
        retention_quantile=gv,
        premium=premium,
        expected_compensation=e_i,
        compensation_variance=var_i,
    )


def parse_benchmark_spec(text: str) -> tuple[str, float]:
    """Parse "deductible:<d>" or "quota:<a>" benchmark descriptions."""
    kind, sep, raw = text.partition(":")
    if not sep:
        raise ValueError(f"benchmark spec {text!r} must look like kind:value")
    kind = kind.strip().lower()
    if kind not in ("deductible", "quota"):
        raise ValueError(f"unknown benchmark kind {kind!r}")
    return kind, float(raw)


def benchmark_contract(problem: InsuranceProblem, kind: str, param: float) -> Contract:
    """Classical contract re-premiumed to the problem's reservation value.

    ``deductible``: compensation max(x - d, 0); ``quota``: compensation a x.
    Parameters outside their ranges would break the slope bounds and are
    rejected.
    """
    q = problem.loss.quantile
    if kind == "deductible":
        if param < 0.0:
            raise ValueError("deductible level must be nonnegative")
        g = np.minimum(q, param)
    elif kind == "quota":
        if not 0.0 <= param <= 1.0:
            raise ValueError("quota share must lie in [0, 1]")
        g = (1.0 - param) * q
    else:
        raise ValueError(f"unknown benchmark kind {kind!r}")
    return contract_from_quantile(g, problem)


def evaluate_contract(contract, problem: InsuranceProblem) -> tuple[float, float]:
    """Both parties' valuations of a contract (or benchmark spec string).

    The insurer values premium minus loading; the insured values the
    distorted expectation of utility of net wealth through the quantile of
    the net position, evaluated with the same midpoint-and-atom convention
    as the solver objective (at the tight premium the two agree exactly).
    """
    if isinstance(contract, str):
        contract = benchmark_contract(problem, *parse_benchmark_spec(contract))
    elif isinstance(contract, (RetentionQuantile, np.ndarray)):
        contract = contract_from_quantile(contract, problem)
    market = problem.market
    u_insurer = (contract.premium - market.theta * contract.expected_compensation
                 - market.sigma * contract.compensation_variance)
    ws = problem._ws
    g = contract.retention_quantile
    wealth = market.beta - contract.premium
    u = problem.utility
    u_insured = float(
        ws.m @ u.value(wealth - ws.reflected_midpoints(g))
        + ws.atom_mass @ u.value(wealth - ws.reflected_atoms(g)))
    return u_insurer, u_insured


@dataclass
class FrontierPoint:
    gamma: float
    premium: float
    u_insured: float
    converged: bool
    retention_quantile: np.ndarray


def _solve_entry(problem: InsuranceProblem, gamma: float, method: str,
                 direct_config, ode_config) -> FrontierPoint:
    entry = InsuranceProblem(
        loss=problem.loss,
        measure=problem.measure,
        utility=problem.utility,
        market=dataclasses.replace(problem.market, gamma=gamma),
    )
    direct = solve_direct(entry, direct_config)
    g = direct.g
    converged = direct.converged
    if method == "ode":
        ode = solve_ode(entry, ode_config, warm_start=direct.g)
        g = RetentionQuantile(entry.grid, ode.gamma)
        converged = converged and ode.diagnostics.converged
    contract = contract_from_quantile(g, entry)
    _, u_insured = evaluate_contract(contract, entry)
    return FrontierPoint(
        gamma=gamma,
        premium=contract.premium,
        u_insured=u_insured,
        converged=converged,
        retention_quantile=g.values,
    )


def pareto_frontier(gammas, problem: InsuranceProblem, method: str = "direct",
                    direct_config: DirectConfig | None = None,
                    ode_config: OdeConfig | None = None,
                    max_workers: int | None = None) -> list[FrontierPoint]:
    """Solve the design problem across reservation values.

    Entries are independent solves on immutable inputs and run on a small
    thread pool; results come back in input order.  Non-convergent entries
    are flagged, not dropped.
    """
    gammas = [float(gv) for gv in gammas]
    if not gammas:
        raise ValueError("frontier sweep needs at least one reservation value")
    if method not in ("direct", "ode"):
        raise ValueError(f"unknown frontier method {method!r}")
    workers = max(1, min(max_workers or 4, len(gammas)))
    if workers == 1:
        return [_solve_entry(problem, gv, method, direct_config, ode_config)
                for gv in gammas]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_solve_entry, problem, gv, method,
                               direct_config, ode_config) for gv in gammas]
        return [f.result() for f in futures]
