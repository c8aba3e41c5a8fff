"""Shared fixtures: the closed-form instance and a panel of generated ones.

Heavy solves are session-scoped so the acceptance tests and the unit tests
share one solution per instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from mhfdesign import (
    DirectConfig,
    InsuranceProblem,
    MarketParams,
    Utility,
    build_loss_model,
    closed_form_problem,
    measure_from_weighting,
    run_closed_form_example,
    solve_direct,
    solve_ode,
)
from mhfdesign.models import Grid
from mhfdesign.verify import closed_form_retention_quantile


@dataclass
class SolvedInstance:
    name: str
    problem: InsuranceProblem
    direct: object
    ode: object | None


def make_problem(n, loss_spec, weighting, utility_kind, alpha, theta, sigma,
                 gamma=0.0, beta=0.0) -> InsuranceProblem:
    grid = Grid(n)
    return InsuranceProblem(
        loss=build_loss_model(loss_spec, grid),
        measure=measure_from_weighting(weighting, grid),
        utility=Utility(utility_kind, alpha=alpha),
        market=MarketParams(theta=theta, sigma=sigma, gamma=gamma, beta=beta),
    )


# five density-measure instances: both utility families, four weightings,
# three loss families; three have interior singular arcs, one is a
# deductible-type bang-bang solution, one has steep slope caps at the ends
PANEL_SPECS = [
    ("uniform2_identity_linear",
     {"kind": "uniform", "scale": 2.0}, lambda p: p, "linear", 1.0, 0.8, 0.8),
    ("atom_power07_exponential",
     {"kind": "uniform_with_atom", "m0": 0.5, "scale": 1.0},
     lambda p: p ** 0.7, "exponential", 1.0, 0.5, 0.5),
    ("uniform2_power15_exponential",
     {"kind": "uniform", "scale": 2.0}, lambda p: p ** 1.5,
     "exponential", 0.5, 1.3, 0.25),
    ("atom_identity_exponential2",
     {"kind": "uniform_with_atom", "m0": 0.5, "scale": 1.0},
     lambda p: p, "exponential", 2.0, 0.5, 1.0),
    ("beta22_power08_linear",
     {"kind": "beta", "a": 2.0, "b": 2.0, "scale": 1.0},
     lambda p: p ** 0.8, "linear", 1.0, 0.6, 0.8),
]

PANEL_N = 1200


@pytest.fixture(scope="session")
def panel():
    """The five generated instances, solved by both routes at n = 1200."""
    solved = []
    for name, loss_spec, w, uk, alpha, theta, sigma in PANEL_SPECS:
        problem = make_problem(PANEL_N, loss_spec, w, uk, alpha, theta, sigma)
        direct = solve_direct(problem, DirectConfig(max_iters=400_000))
        ode = solve_ode(problem, warm_start=direct.g)
        solved.append(SolvedInstance(name, problem, direct, ode))
    return solved


@pytest.fixture(scope="session")
def cf_report_4000():
    """Closed-form regression at the acceptance grid size."""
    return run_closed_form_example(4000)


@pytest.fixture(scope="session")
def cf_1200():
    """Closed-form instance solved at a medium grid for unit tests."""
    problem = closed_form_problem(1200)
    direct = solve_direct(problem, DirectConfig(max_iters=400_000))
    ode = solve_ode(problem, warm_start=direct.g)
    return SolvedInstance("closed_form_1200", problem, direct, ode)


@pytest.fixture(scope="session")
def cf_true_1200(cf_1200):
    return closed_form_retention_quantile(cf_1200.problem.grid.nodes)
