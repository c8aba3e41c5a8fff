"""Domain types and constructors for the contract design problem.

Everything downstream shares one discretization convention, fixed here:

* The probability axis [0, 1] carries a uniform grid with ``n`` cells.
  Functions of probability (loss quantile, retention quantile, Psi,
  Lambda_hat) live on the ``n + 1`` nodes; slope-like quantities (the
  quantile derivative ``h``, distortion densities) live on the ``n`` cells.
* Integrals of nodal functions use the composite trapezoid rule.
* Integrals against the distortion measure use cell masses applied to the
  integrand at cell midpoints, plus point evaluations at atoms.

Mixing quadrature families would break the exact algebraic identities the
verification layer relies on, so builders in this module always derive
derived quantities (moments, ``h``) with the same rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate
from scipy import stats

__all__ = [
    "FEASIBILITY_TOL",
    "MASS_TOL",
    "Grid",
    "LossModel",
    "DistortionMeasure",
    "Utility",
    "MarketParams",
    "RetentionQuantile",
    "FeasibilityReport",
    "build_loss_model",
    "measure_from_weighting",
    "build_closed_form_measure",
    "validate_feasible",
]

#: feasibility test tolerance for retention quantiles (currency units)
FEASIBILITY_TOL = 1e-9
#: distortion measures must carry total mass 1 within this tolerance
MASS_TOL = 1e-10

# exponent clamp shared by the exponential utility family
_EXP_CLAMP = 700.0


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of [0, 1] with ``n`` cells."""

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid size must be an integer >= 8, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dp(self) -> float:
        return 1.0 / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @cached_property
    def midpoints(self) -> np.ndarray:
        return (self.nodes[:-1] + self.nodes[1:]) / 2.0

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Node weights w such that ``dp * w @ f`` is the trapezoid integral."""
        w = np.ones(self.n + 1)
        w[0] = w[-1] = 0.5
        return w

    def trapezoid(self, values: np.ndarray) -> float:
        return float(self.dp * (self.trapezoid_weights @ np.asarray(values)))


@dataclass(frozen=True)
class LossModel:
    """Bounded nonnegative loss described through its quantile function.

    ``quantile`` holds nodal values of the loss quantile, ``h`` the per-cell
    slope (so ``quantile[i+1] - quantile[i] == h[i] * dp``).  ``m0`` is the
    probability mass at zero loss, i.e. the width of the initial flat piece.
    """

    grid: Grid
    quantile: np.ndarray
    h: np.ndarray
    mean: float
    variance: float
    m0: float
    ess_sup: float

    def __post_init__(self) -> None:
        q = np.asarray(self.quantile, dtype=float)
        h = np.asarray(self.h, dtype=float)
        object.__setattr__(self, "quantile", q)
        object.__setattr__(self, "h", h)
        n = self.grid.n
        if q.shape != (n + 1,) or h.shape != (n,):
            raise ValueError("quantile/h shapes do not match the grid")
        if not np.all(np.isfinite(q)):
            raise ValueError("loss quantile must be finite (bounded support)")
        scale = max(1.0, float(q[-1]))
        if abs(q[0]) > 1e-12 * scale:
            raise ValueError("loss quantile must start at 0")
        if np.any(np.diff(q) < -1e-12 * scale):
            raise ValueError("loss quantile must be nondecreasing")
        if np.any(h < -1e-12):
            raise ValueError("quantile slope h must be nonnegative")
        if np.max(np.abs(np.diff(q) - h * self.grid.dp)) > 1e-12 * scale:
            raise ValueError("h is inconsistent with the quantile increments")
        if abs(self.grid.dp * h.sum() - self.ess_sup) > 1e-10 * scale:
            raise ValueError("cumulative h must equal the essential supremum")

    @property
    def n(self) -> int:
        return self.grid.n

    def quantile_at(self, p) -> np.ndarray:
        """Linear interpolation of the loss quantile at arbitrary p."""
        return np.interp(p, self.grid.nodes, self.quantile)

    def cdf_at(self, x) -> np.ndarray:
        """Left-continuous inverse of the quantile grid (the loss cdf).

        On the initial flat piece every loss level 0 maps to the left edge;
        beyond ``m0`` the quantile is strictly increasing so the inverse is
        unambiguous up to grid resolution.
        """
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.quantile, x, side="left")
        idx = np.clip(idx, 1, self.n)
        q_lo = self.quantile[idx - 1]
        q_hi = self.quantile[idx]
        p_lo = self.grid.nodes[idx - 1]
        denom = np.where(q_hi > q_lo, q_hi - q_lo, 1.0)
        frac = np.clip((x - q_lo) / denom, 0.0, 1.0)
        p = p_lo + frac * self.grid.dp
        return np.where(x <= self.quantile[0], 0.0, np.minimum(p, 1.0))


@dataclass(frozen=True)
class DistortionMeasure:
    """Probability measure on [0, 1] with cellwise density plus atoms.

    ``density`` holds the cell-average density, so ``density * dp`` are the
    cell masses.  Atoms live at locations in (0, 1]; no mass at 0 is allowed.
    """

    grid: Grid
    density: np.ndarray
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        d = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "density", d)
        atoms = tuple((float(a), float(m)) for a, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if d.shape != (self.grid.n,):
            raise ValueError("density must hold one value per grid cell")
        if np.any(d < -1e-14):
            raise ValueError("distortion density must be nonnegative")
        for loc, mass in atoms:
            if not 0.0 < loc <= 1.0:
                raise ValueError(f"atom location {loc} outside (0, 1]")
            if mass < 0.0:
                raise ValueError("atom masses must be nonnegative")
        total = self.total_mass
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"distortion measure has total mass {total}, expected 1")

    @property
    def cell_masses(self) -> np.ndarray:
        return self.density * self.grid.dp

    @property
    def total_mass(self) -> float:
        return float(self.cell_masses.sum() + sum(m for _, m in self.atoms))

    @property
    def has_atoms(self) -> bool:
        return any(m > 0.0 for _, m in self.atoms)


@dataclass(frozen=True)
class Utility:
    """Concave, strictly increasing utility defined on the whole real line.

    Two families are supported: ``linear`` (u(x) = x) and ``exponential``
    with risk aversion ``alpha`` (u(x) = -exp(-alpha x) / alpha).  The
    exponential evaluators clamp the exponent at +/-700 to survive extreme
    line-search iterates; callers that care can watch for the clamp through
    :func:`mhfdesign.choquet.rdu_objective` diagnostics.
    """

    kind: str
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "exponential"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "exponential" and not self.alpha > 0.0:
            raise ValueError("exponential utility needs alpha > 0")

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x
        expo = np.clip(-self.alpha * x, -_EXP_CLAMP, _EXP_CLAMP)
        return -np.exp(expo) / self.alpha

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.ones_like(x)
        expo = np.clip(-self.alpha * x, -_EXP_CLAMP, _EXP_CLAMP)
        return np.exp(expo)

    def clamps(self, x) -> bool:
        """True when evaluating at x engages the exponent clamp."""
        if self.kind == "linear":
            return False
        return bool(np.any(np.abs(self.alpha * np.asarray(x)) > _EXP_CLAMP))


@dataclass(frozen=True)
class MarketParams:
    """Pricing and wealth constants shared by both parties.

    theta: safety loading, sigma: variance loading, gamma: insurer
    reservation value, beta: insured initial wealth.
    """

    theta: float
    sigma: float
    gamma: float = 0.0
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.theta < 0.0:
            raise ValueError("safety loading theta must be >= 0")
        if not self.sigma > 0.0:
            raise ValueError("variance loading sigma must be > 0")


@dataclass(frozen=True)
class RetentionQuantile:
    """Retention expressed in quantile space: nodal values of G = R(quantile)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n + 1,):
            raise ValueError("retention quantile must hold one value per node")

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def at(self, p) -> np.ndarray:
        return np.interp(p, self.grid.nodes, self.values)


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-cell constraint violations of a retention quantile."""

    start_violation: float
    lower_violation: np.ndarray
    upper_violation: np.ndarray
    max_violation: float
    passed: bool


def validate_feasible(g: RetentionQuantile, loss: LossModel,
                      tol: float = FEASIBILITY_TOL) -> FeasibilityReport:
    """Check G(0) = 0 and 0 <= increments <= h * dp cell by cell."""
    if g.grid.n != loss.grid.n:
        raise ValueError("retention quantile and loss model use different grids")
    inc = g.increments
    cap = loss.h * loss.grid.dp
    lower = np.maximum(0.0, -inc)
    upper = np.maximum(0.0, inc - cap)
    start = abs(float(g.values[0]))
    worst = max(start, float(lower.max(initial=0.0)), float(upper.max(initial=0.0)))
    return FeasibilityReport(
        start_violation=start,
        lower_violation=lower,
        upper_violation=upper,
        max_violation=worst,
        passed=worst <= tol,
    )


# ---------------------------------------------------------------------------
# loss model construction
# ---------------------------------------------------------------------------

def _loss_from_quantile(grid: Grid, q: np.ndarray) -> LossModel:
    q = np.asarray(q, dtype=float)
    h = np.diff(q) / grid.dp
    mean = grid.trapezoid(q)
    second = grid.trapezoid(q * q)
    ess_sup = float(q[-1])
    zero = np.nonzero(q > 1e-14 * max(1.0, ess_sup))[0]
    m0 = float(grid.nodes[zero[0] - 1]) if zero.size else 1.0
    return LossModel(
        grid=grid,
        quantile=q,
        h=h,
        mean=mean,
        variance=second - mean * mean,
        m0=m0,
        ess_sup=ess_sup,
    )


def _check_strict_increase(model: LossModel, flat_frac_tol: float = 0.02) -> None:
    """Reject quantiles that stay flat over a nontrivial part of (m0, 1)."""
    beyond = model.grid.midpoints > model.m0 + 0.5 * model.grid.dp
    if not np.any(beyond):
        raise ValueError("degenerate loss: no mass above zero (m0 must be < 1)")
    flat = beyond & (model.h <= 1e-14 * max(1.0, model.ess_sup))
    frac = flat.sum() / beyond.sum()
    if frac > flat_frac_tol:
        raise ValueError(
            f"loss quantile is flat on {frac:.1%} of (m0, 1); "
            "a strictly increasing quantile beyond the zero mass is required"
        )


def build_loss_model(spec, grid: Grid) -> LossModel:
    """Construct a validated loss model on the grid.

    ``spec`` is either a 1-D array of nonnegative loss observations (the
    empirical quantile is linearly interpolated between order statistics and
    pinned to 0 at p = 0) or a dict with a ``kind`` key:

    * ``uniform_with_atom``: mass ``m0`` at zero, uniform tail up to ``scale``
    * ``uniform``: uniform on [0, scale]
    * ``beta``: Beta(a, b) stretched to [0, scale]
    """
    if isinstance(spec, dict):
        kind = spec.get("kind")
        p = grid.nodes
        if kind == "uniform_with_atom":
            m0 = float(spec.get("m0", 0.5))
            scale = float(spec.get("scale", 1.0))
            if not 0.0 <= m0 < 1.0:
                raise ValueError(f"mass at zero must lie in [0, 1), got {m0}")
            if not scale > 0.0:
                raise ValueError("loss scale must be positive")
            q = scale * np.maximum(p - m0, 0.0) / (1.0 - m0)
        elif kind == "uniform":
            scale = float(spec.get("scale", 1.0))
            if not scale > 0.0:
                raise ValueError("loss scale must be positive")
            q = scale * p
        elif kind == "beta":
            a = float(spec.get("a", 2.0))
            b = float(spec.get("b", 2.0))
            scale = float(spec.get("scale", 1.0))
            if a <= 0.0 or b <= 0.0 or scale <= 0.0:
                raise ValueError("beta loss needs a > 0, b > 0, scale > 0")
            q = scale * stats.beta.ppf(p, a, b)
        else:
            raise ValueError(f"unknown loss kind {kind!r}")
        model = _loss_from_quantile(grid, q)
    else:
        sample = np.asarray(spec, dtype=float).ravel()
        if sample.size < 2:
            raise ValueError("empirical loss needs at least two observations")
        if not np.all(np.isfinite(sample)):
            raise ValueError("loss observations must be finite (bounded support)")
        if np.any(sample < 0.0):
            raise ValueError("loss observations must be nonnegative")
        s = np.sort(sample)
        probs = np.concatenate(([0.0], np.arange(1, s.size + 1) / s.size))
        values = np.concatenate(([0.0], s))
        q = np.interp(grid.nodes, probs, values)
        model = _loss_from_quantile(grid, q)
    _check_strict_increase(model)
    return model


# ---------------------------------------------------------------------------
# distortion measure construction
# ---------------------------------------------------------------------------

def measure_from_weighting(w: Callable[[float], float], grid: Grid,
                           atom_tol: float = 1e-10) -> DistortionMeasure:
    """Distortion measure induced by a probability weighting function.

    The measure satisfies mu([0, p]) = 1 - w(1 - p) at the nodes.  Jumps of
    ``w`` at node locations become atoms of the measure.  A genuine jump
    keeps its size as the probing offset shrinks, while steep continuous
    growth (even a Hoelder root) collapses with it, so jumps are accepted
    only when the two-sided gap survives a 1e4-fold offset reduction; gaps
    below ``atom_tol`` are smeared into the cell density either way.  A
    jump of w at 1 would put mass at p = 0 and is rejected.
    """
    eps = 1e-9
    eps_fine = 1e-13
    qs = 1.0 - grid.nodes  # weighting argument per node, decreasing
    vals = np.array([float(w(max(0.0, min(1.0, q)))) for q in qs])
    lo = np.array([float(w(max(0.0, q - eps))) for q in qs])
    hi = np.array([float(w(min(1.0, q + eps))) for q in qs])
    if abs(vals[-1]) > 1e-12 or abs(vals[0] - 1.0) > 1e-12:
        raise ValueError("weighting function must satisfy w(0) = 0 and w(1) = 1")
    probe = np.concatenate([vals, lo, hi])
    order = np.concatenate([qs, np.maximum(0.0, qs - eps), np.minimum(1.0, qs + eps)])
    rank = np.argsort(order, kind="stable")
    if np.any(np.diff(probe[rank]) < -1e-12):
        raise ValueError("weighting function must be nondecreasing")

    gaps = np.maximum(0.0, hi - lo)

    def jump_at(i: int) -> float:
        if gaps[i] <= atom_tol:
            return 0.0
        q = qs[i]
        fine = float(w(min(1.0, q + eps_fine))) - float(w(max(0.0, q - eps_fine)))
        if fine > atom_tol and fine >= 0.5 * gaps[i]:
            return fine
        return 0.0

    jumps = np.array([jump_at(i) for i in range(grid.n + 1)])
    if jumps[0] > 0.0:
        raise ValueError("weighting function jumps at 1, implying mass at p = 0")
    atoms = [(float(grid.nodes[i]), float(jumps[i]))
             for i in range(1, grid.n + 1) if jumps[i] > 0.0]
    # open-cell masses: w((1-p_i)-) - w((1-p_{i+1})+)
    cell_mass = lo[:-1] - hi[1:]
    cell_mass = np.maximum(cell_mass, 0.0)
    # absorb the probe offsets so the total telescopes exactly to 1
    total = cell_mass.sum() + sum(m for _, m in atoms)
    if total > 0:
        cell_mass *= (1.0 - sum(m for _, m in atoms)) / cell_mass.sum()
    return DistortionMeasure(grid=grid, density=cell_mass / grid.dp, atoms=tuple(atoms))


# piecewise tail density of the closed-form regression measure, expressed as
# a function of the reflected variable: tail(p) is the measure density at 1-p
def _closed_form_tail_pieces(c: float):
    e89 = np.exp(8.0 / 9.0)

    def seg1(p):  # p in (1/2, 2/3)
        return c * e89 * (2.0 * p - 1.0 / 9.0)

    def seg1_anti(p):
        return c * e89 * (p * p - p / 9.0)

    def seg2(p):  # p in (2/3, 1)
        return c * (p + 5.0 / 9.0) * np.exp(-p + 14.0 / 9.0)

    def seg2_anti(p):
        return -c * (p + 14.0 / 9.0) * np.exp(-p + 14.0 / 9.0)

    return seg1, seg1_anti, seg2, seg2_anti


def closed_form_measure_constant() -> float:
    """Normalization constant of the closed-form regression measure.

    Computed by adaptive quadrature of the two tail-density pieces; the free
    region below 1/2 contributes (13/36) e^{8/9} of reciprocal mass.
    """
    e89 = np.exp(8.0 / 9.0)
    i1, _ = integrate.quad(lambda t: e89 * (2.0 * t - 1.0 / 9.0), 0.5, 2.0 / 3.0,
                           epsabs=1e-14, epsrel=1e-13)
    i2, _ = integrate.quad(lambda t: (t + 5.0 / 9.0) * np.exp(-t + 14.0 / 9.0),
                           2.0 / 3.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / ((13.0 / 36.0) * e89 + i1 + i2)


def build_closed_form_measure(grid: Grid) -> DistortionMeasure:
    """Distortion measure of the analytically solvable regression instance.

    The density at 1 - p is pinned on p in (1/2, 1) by two exponential-family
    pieces meeting at 2/3; below 1/2 it is unconstrained and filled with a
    constant carrying the residual mass (13/36) e^{8/9} times the
    normalization constant.  Cell masses are exact piecewise integrals, so
    the grid only needs to place 1/2 at a node (n even).
    """
    if grid.n % 2 != 0:
        raise ValueError("closed-form measure needs an even grid (1/2 must be a node)")
    c = closed_form_measure_constant()
    free_mass = (13.0 / 36.0) * np.exp(8.0 / 9.0) * c
    if free_mass < 0.0:
        raise RuntimeError("negative residual mass; normalization constant is wrong")
    seg1, seg1_anti, seg2, seg2_anti = _closed_form_tail_pieces(c)

    def tail_cell_mass(a: float, b: float) -> float:
        """Integral of the tail density over [a, b] within (1/2, 1)."""
        mass = 0.0
        lo, hi = max(a, 0.5), min(b, 2.0 / 3.0)
        if hi > lo:
            mass += seg1_anti(hi) - seg1_anti(lo)
        lo, hi = max(a, 2.0 / 3.0), min(b, 1.0)
        if hi > lo:
            mass += seg2_anti(hi) - seg2_anti(lo)
        return mass

    # measure cell (s_i, s_{i+1}) receives the tail mass of (1-s_{i+1}, 1-s_i)
    nodes = grid.nodes
    masses = np.zeros(grid.n)
    free_density = 2.0 * free_mass  # constant density on the reflected half (0, 1/2)
    for i in range(grid.n):
        a, b = 1.0 - nodes[i + 1], 1.0 - nodes[i]
        m = tail_cell_mass(a, b)
        lo, hi = max(a, 0.0), min(b, 0.5)
        if hi > lo:
            m += free_density * (hi - lo)
        masses[i] = m
    density = masses / grid.dp
    # remove float drift so the declared mass invariant holds exactly
    density /= density.sum() * grid.dp
    return DistortionMeasure(grid=grid, density=density)
