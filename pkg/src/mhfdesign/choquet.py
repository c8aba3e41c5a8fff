"""Distorted expectations and the insured's objective.

The insured ranks contracts by a Choquet expectation: the quantile of her
net wealth integrated against a distortion measure on [0, 1].  After the
change of variables to retention-quantile space the net wealth quantile is
``W(g) - g(1 - p)`` where ``W(g)`` (:func:`wealth_after_premium`) collects
the wealth left after paying the tight premium.  This module evaluates that
functional, the resulting objective, its exact discrete gradient, and the
two diagnostic transforms ``Psi`` and ``Lambda_hat`` used by the optimality
checks.

All quadrature follows the convention frozen in :mod:`mhfdesign.models`:
trapezoid for dt-integrals, cell masses at midpoints (plus atoms) for
measure integrals.  The gradient is the exact derivative of the discretized
objective, so central finite differences of :func:`rdu_objective` reproduce
it to quadrature precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .models import (
    DistortionMeasure,
    Grid,
    LossModel,
    MarketParams,
    RetentionQuantile,
    Utility,
)

__all__ = [
    "WealthBase",
    "InsuranceProblem",
    "choquet_expectation",
    "wealth_after_premium",
    "rdu_objective",
    "rdu_gradient",
    "build_psi",
    "build_lambda_hat",
    "ClampWarning",
]


class ClampWarning(RuntimeWarning):
    """Raised when utility evaluation hits the exponent clamp."""


@dataclass(frozen=True)
class WealthBase:
    """Constant pieces of the premium-adjusted wealth functional.

    ``k`` is the wealth left under full coverage (f = 0); ``theta_eff`` is
    the coefficient of the mean-retention term.
    """

    k: float
    theta_eff: float

    @classmethod
    def from_inputs(cls, market: MarketParams, loss: LossModel) -> "WealthBase":
        k = (market.beta - market.gamma - market.theta * loss.mean
             - market.sigma * loss.variance)
        return cls(k=k, theta_eff=market.theta - 2.0 * market.sigma * loss.mean)


@dataclass(frozen=True)
class InsuranceProblem:
    """Immutable bundle of loss model, distortion, utility and market data."""

    loss: LossModel
    measure: DistortionMeasure
    utility: Utility
    market: MarketParams

    def __post_init__(self) -> None:
        if self.loss.grid.n != self.measure.grid.n:
            raise ValueError("loss model and distortion measure use different grids")

    @property
    def grid(self) -> Grid:
        return self.loss.grid

    @cached_property
    def wealth_base(self) -> WealthBase:
        return WealthBase.from_inputs(self.market, self.loss)

    @cached_property
    def _ws(self) -> "_Workspace":
        return _Workspace(self)


class _Workspace:
    """Precomputed arrays shared by objective, gradient and diagnostics."""

    def __init__(self, problem: InsuranceProblem):
        grid = problem.grid
        self.n = grid.n
        self.dp = grid.dp
        self.p = grid.nodes
        self.q = problem.loss.quantile
        self.h = problem.loss.h
        self.tw = grid.trapezoid_weights * grid.dp  # nodal trapezoid weights
        self.m = problem.measure.cell_masses
        self.sigma = problem.market.sigma
        self.theta = problem.market.theta
        self.k = problem.wealth_base.k
        self.theta_eff = problem.wealth_base.theta_eff
        self.mean = problem.loss.mean
        self.utility = problem.utility
        atoms = problem.measure.atoms
        self.atom_loc = np.array([a for a, _ in atoms])
        self.atom_mass = np.array([m for _, m in atoms])
        # interpolation stencil for g(1 - atom_location)
        if atoms:
            pos = (1.0 - self.atom_loc) / self.dp
            idx = np.clip(np.floor(pos).astype(int), 0, self.n - 1)
            self.atom_idx = idx
            self.atom_frac = pos - idx
        else:
            self.atom_idx = np.zeros(0, dtype=int)
            self.atom_frac = np.zeros(0)

    def reflected_midpoints(self, g: np.ndarray) -> np.ndarray:
        """g(1 - p) at the midpoint of every measure cell, in cell order."""
        return (0.5 * (g[:-1] + g[1:]))[::-1]

    def reflected_atoms(self, g: np.ndarray) -> np.ndarray:
        if self.atom_loc.size == 0:
            return np.zeros(0)
        lo = g[self.atom_idx]
        hi = g[self.atom_idx + 1]
        return lo + self.atom_frac * (hi - lo)

    def wealth(self, f: np.ndarray):
        value, intF = self.wealth_gauged(f)
        return value + self.k, intF

    def wealth_gauged(self, f: np.ndarray):
        """Premium-adjusted wealth minus its constant part k."""
        intF = self.tw @ f
        intF2 = self.tw @ (f * f)
        intQF = self.tw @ (self.q * f)
        value = (self.sigma * intF * intF - self.sigma * intF2
                 + 2.0 * self.sigma * intQF + self.theta_eff * intF)
        return value, intF

    def true_objective(self, j_gauged: float) -> float:
        """Undo the wealth gauge: exponential utilities scale, linear shift."""
        u = self.utility
        if u.kind == "linear":
            return j_gauged + self.k
        return j_gauged * float(np.exp(np.clip(-u.alpha * self.k, -700.0, 700.0)))

    def gradient_scale(self) -> float:
        u = self.utility
        if u.kind == "linear":
            return 1.0
        return float(np.exp(np.clip(-u.alpha * self.k, -700.0, 700.0)))

    def evaluate(self, g: np.ndarray, need_grad: bool):
        """Gauged objective (and gradient) of the discretized problem.

        Utilities are evaluated at the wealth shifted by -k, which drops the
        constant part of the premium-adjusted wealth from every exponent.
        For exponential utilities the result is the true objective times
        exp(alpha k); for linear, the true objective minus k.  The shift
        makes the whole iteration independent of the wealth constants, so
        the solver output is exactly invariant under gamma/beta shifts for
        exponential utilities (the CARA translation property).
        """
        ol_g, intG = self.wealth_gauged(g)
        gt = self.reflected_midpoints(g)
        ga = self.reflected_atoms(g)
        xs = ol_g - gt
        xa = ol_g - ga
        u = self.utility
        J = float(self.m @ u.value(xs) + self.atom_mass @ u.value(xa))
        clamped = u.clamps(xs) or u.clamps(xa)
        if not need_grad:
            return J, None, clamped
        up_cells = u.derivative(xs)
        up_atoms = u.derivative(xa)
        A = float(self.m @ up_cells + self.atom_mass @ up_atoms)
        psi_prime = self.theta_eff + 2.0 * self.sigma * (intG - g + self.q)
        grad = self.tw * psi_prime * A
        rev = (self.m * up_cells)[::-1]
        grad[:-1] -= 0.5 * rev
        grad[1:] -= 0.5 * rev
        if self.atom_loc.size:
            w_at = self.atom_mass * up_atoms
            np.add.at(grad, self.atom_idx, -(1.0 - self.atom_frac) * w_at)
            np.add.at(grad, self.atom_idx + 1, -self.atom_frac * w_at)
        return J, grad, clamped


def _nodal(g) -> np.ndarray:
    if isinstance(g, RetentionQuantile):
        return g.values
    return np.asarray(g, dtype=float)


def choquet_expectation(quantile_of_y, measure: DistortionMeasure) -> float:
    """Integral of a nondecreasing nodal quantile against the measure.

    Cells contribute mass times the midpoint value; atoms contribute point
    evaluations of the nodal interpolant.
    """
    y = _nodal(quantile_of_y)
    if y.shape != (measure.grid.n + 1,):
        raise ValueError("quantile array does not match the measure grid")
    scale = max(1.0, float(np.max(np.abs(y))))
    if np.any(np.diff(y) < -1e-12 * scale):
        raise ValueError("choquet_expectation needs a nondecreasing quantile")
    mid = 0.5 * (y[:-1] + y[1:])
    total = float(measure.cell_masses @ mid)
    for loc, mass in measure.atoms:
        total += mass * float(np.interp(loc, measure.grid.nodes, y))
    return total


def wealth_after_premium(f, base: WealthBase, loss: LossModel, sigma: float) -> float:
    """Wealth left to the insured once the tight premium for retention f is paid.

    For a feasible retention quantile this equals beta - premium; as a
    functional it is concave, and adding a constant c to f adds c * theta.
    """
    f = _nodal(f)
    grid = loss.grid
    tw = grid.trapezoid_weights * grid.dp
    intF = tw @ f
    intF2 = tw @ (f * f)
    intQF = tw @ (loss.quantile * f)
    return float(sigma * intF * intF - sigma * intF2 + 2.0 * sigma * intQF
                 + base.theta_eff * intF + base.k)


def rdu_objective(g, problem: InsuranceProblem) -> float:
    """Insured's rank-dependent utility of the net wealth for retention g."""
    ws = problem._ws
    J, _, clamped = ws.evaluate(_nodal(g), need_grad=False)
    if clamped:
        warnings.warn("utility exponent clamped during objective evaluation",
                      ClampWarning, stacklevel=2)
    return ws.true_objective(J)


def rdu_gradient(g, problem: InsuranceProblem) -> np.ndarray:
    """Exact nodal gradient of the discretized objective.

    Node i collects dp-weighted Psi'(p_i) times the mean marginal utility,
    minus the measure mass reflected onto the node.
    """
    ws = problem._ws
    _, grad, clamped = ws.evaluate(_nodal(g), need_grad=True)
    if clamped:
        warnings.warn("utility exponent clamped during gradient evaluation",
                      ClampWarning, stacklevel=2)
    with np.errstate(over="ignore"):  # extreme alpha: the clamp warning covers it
        return grad * ws.gradient_scale()


def build_psi(g, problem: InsuranceProblem) -> np.ndarray:
    """Nodal Psi: the integrated first-order coefficient of the objective.

    Psi(p) = (2 sigma int G + theta - 2 sigma E[X]) (p - 1)
             + 2 sigma int_p^1 (G - quantile) + 1, by trapezoid partial sums.
    Psi(1) = 1 exactly; Psi(0) = 1 - theta up to the quadrature consistency
    of the stored loss mean (exact for models built in this package).
    """
    ws = problem._ws
    g = _nodal(g)
    intG = ws.tw @ g
    coef = 2.0 * ws.sigma * intG + ws.theta - 2.0 * ws.sigma * ws.mean
    diff = g - ws.q
    cell = 0.5 * ws.dp * (diff[:-1] + diff[1:])
    tail = np.concatenate((np.cumsum(cell[::-1])[::-1], [0.0]))
    return coef * (ws.p - 1.0) + 2.0 * ws.sigma * tail + 1.0


def build_lambda_hat(g, problem: InsuranceProblem) -> np.ndarray:
    """Nodal Lambda_hat: normalized tail measure reweighted by marginal utility.

    Lambda_hat(p) integrates u'(W(g) - g(1 - t)) over t in (1 - p, 1] and
    divides by the full integral, making it a distribution function with
    Lambda_hat(0) = 0 and Lambda_hat(1) = 1.  Atoms enter as point masses:
    an atom at location a is excluded at the node p = 1 - a and included
    strictly beyond it.
    """
    ws = problem._ws
    g = _nodal(g)
    ol, _ = ws.wealth(g)
    up_cells = ws.utility.derivative(ol - ws.reflected_midpoints(g))
    up_atoms = ws.utility.derivative(ol - ws.reflected_atoms(g))
    weights = ws.m * up_cells
    # node p_i covers measure cells n-i .. n-1 (the interval (1-p_i, 1])
    tail = np.concatenate(([0.0], np.cumsum(weights[::-1])))
    total = tail[-1]
    if ws.atom_loc.size:
        lam = tail.copy()
        for loc, w in zip(ws.atom_loc, ws.atom_mass * up_atoms):
            include = ws.p > (1.0 - loc) + 1e-12
            lam[include] += w
        total = lam[-1]
        return lam / total
    return tail / total
