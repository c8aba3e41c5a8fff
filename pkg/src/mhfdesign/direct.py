"""Concave maximization of the insured's objective over feasible retentions.

The decision variable is the vector of nodal increments ``delta`` with
``0 <= delta_i <= h_i * dp``, which turns the slope constraint into
independent boxes: projection is a coordinatewise clip and every accepted
iterate is feasible by construction.  The ascent itself is projected
gradient with Nesterov momentum, a monotone safeguard and backtracking on
the step length (accelerated ascent is required for the tight tolerances at
fine grids; plain projected gradient stalls on the prefix-sum conditioning).

This solver is the oracle for every distortion measure, atoms included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .choquet import InsuranceProblem, build_lambda_hat, build_psi, _nodal
from .models import RetentionQuantile

__all__ = ["DirectConfig", "DirectResult", "KktReport", "solve_direct", "kkt_residual"]


@dataclass(frozen=True)
class DirectConfig:
    """Stopping rules and step policy for the increment ascent.

    ``tol_grad`` is the projected-gradient target.  Near the optimum the
    objective improvements fall below float resolution while the projected
    gradient still sits around 1e-7 .. 1e-6; a stall of the objective
    (relative change below ``tol_obj`` across ``stall_window`` iterations)
    with the projected gradient under ``tol_grad_soft`` is therefore also
    reported as converged.
    """

    max_iters: int = 20000
    tol_grad: float = 1e-8       # projected-gradient sup norm, times max(1, ess_sup)
    tol_grad_soft: float = 1e-5  # acceptable gradient norm at an objective stall
    tol_obj: float = 1e-12       # relative objective stall over the stall window
    stall_window: int = 2000
    check_every: int = 20
    initial_step: float | None = None   # overrides the curvature estimate

    def __post_init__(self) -> None:
        if self.tol_grad <= 0 or self.tol_obj <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class DirectResult:
    g: RetentionQuantile
    objective: float
    iterations: int
    converged: bool
    projected_gradient_norm: float
    curvature_estimate: float
    feasibility_violation: float
    objective_trace: np.ndarray
    clamped: bool


@dataclass(frozen=True)
class KktReport:
    """Cellwise check of the three-case optimality condition."""

    residual: float
    per_cell: np.ndarray
    psi: np.ndarray
    lambda_hat: np.ndarray
    gap_midpoints: np.ndarray
    tie_tol: float


def _quadratic_curvature(problem: InsuranceProblem, iters: int = 60) -> float:
    """Power-iteration bound on the quadratic part's curvature in delta space."""
    ws = problem._ws
    n = ws.n
    sigma = ws.sigma
    v = np.sin(np.linspace(0.3, 2.1, n))  # deterministic, not axis-aligned
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        g = np.concatenate(([0.0], np.cumsum(v)))
        y = 2.0 * sigma * (ws.tw @ g) * ws.tw - 2.0 * sigma * ws.tw * g
        hv = np.cumsum(y[::-1])[::-1][1:]
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            break
        v = hv / lam
    return lam


def _projected_gradient(delta: np.ndarray, grad: np.ndarray,
                        ub: np.ndarray) -> np.ndarray:
    pg = grad.copy()
    at_lo = delta <= 0.0
    at_hi = delta >= ub
    pg[at_lo] = np.maximum(pg[at_lo], 0.0)
    pg[at_hi] = np.minimum(pg[at_hi], 0.0)
    pg[at_lo & at_hi] = 0.0  # degenerate box (h = 0 cells): variable is fixed
    return pg


def solve_direct(problem: InsuranceProblem, config: DirectConfig | None = None,
                 start: RetentionQuantile | None = None) -> DirectResult:
    """Maximize the insured's objective over the feasible retention set.

    Starts from half retention (delta = h dp / 2) unless ``start`` is given;
    uniqueness of the optimum makes the starting point cosmetic.  Returns the
    best iterate with a convergence flag; the flag is False when the
    iteration cap is hit before the projected gradient meets its tolerance.
    """
    cfg = config or DirectConfig()
    ws = problem._ws
    ub = ws.h * ws.dp
    if start is not None:
        delta = np.clip(np.diff(_nodal(start)), 0.0, ub)
    else:
        delta = 0.5 * ub

    def eval_at(delta: np.ndarray, need_grad: bool = True):
        g = np.concatenate(([0.0], np.cumsum(delta)))
        J, grad_g, clamped = ws.evaluate(g, need_grad=need_grad)
        if not need_grad:
            return J, None, clamped
        grad_d = np.cumsum(grad_g[::-1])[::-1][1:]
        return J, grad_d, clamped

    scale = max(1.0, problem.loss.ess_sup)
    grad_tol = cfg.tol_grad * scale
    # under the wealth gauge the marginal utility at full coverage is 1, so
    # the quadratic part's curvature is the whole initial estimate
    L = max(_quadratic_curvature(problem), 1e-12)
    if cfg.initial_step is not None:
        L = 1.0 / cfg.initial_step

    x = delta
    Jx, _, clamp_seen = eval_at(x, need_grad=False)
    y = x.copy()
    t = 1.0
    trace = [Jx]
    pg_norm = math.inf
    it = 0
    converged = False

    while it < cfg.max_iters:
        it += 1
        Jy, gy, clamped = eval_at(y)
        clamp_seen = clamp_seen or clamped
        # backtracking: shrink the step until the ascent surrogate holds
        for _ in range(60):
            z = np.clip(y + gy / L, 0.0, ub)
            Jz, _, cl2 = eval_at(z, need_grad=False)
            dzy = z - y
            if Jz >= Jy + gy @ dzy - 0.5 * L * (dzy @ dzy) - 1e-18:
                break
            L *= 2.0
        clamp_seen = clamp_seen or cl2
        if Jz >= Jx:
            x_new, Jx_new = z, Jz
        else:
            x_new, Jx_new = x, Jx
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y_new = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        if (y - z) @ (z - x) > 0.0:  # momentum points uphill of the ascent: restart
            t_new = 1.0
            y_new = x_new
        x, Jx, y, t = x_new, Jx_new, np.clip(y_new, 0.0, ub), t_new
        L = max(L * 0.97, 1e-12)

        if it % cfg.check_every == 0 or it == cfg.max_iters:
            _, gx, _ = eval_at(x)
            pg = _projected_gradient(x, gx, ub)
            pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
            trace.append(Jx)
            if pg_norm <= grad_tol:
                converged = True
                break
            window = max(1, cfg.stall_window // cfg.check_every)
            if len(trace) > window and trace[-1] - trace[-window - 1] <= cfg.tol_obj * (1.0 + abs(Jx)):
                converged = pg_norm <= cfg.tol_grad_soft * scale
                break

    g = np.concatenate(([0.0], np.cumsum(x)))
    feas = max(0.0, float(np.max(x - ub, initial=0.0)), float(np.max(-x, initial=0.0)))
    return DirectResult(
        g=RetentionQuantile(problem.grid, g),
        objective=ws.true_objective(Jx),
        iterations=it,
        converged=converged,
        projected_gradient_norm=pg_norm,
        curvature_estimate=L,
        feasibility_violation=feas,
        objective_trace=np.asarray([ws.true_objective(v) for v in trace]),
        clamped=clamp_seen,
    )


def default_tie_tol(n: int) -> float:
    """Width of the Psi - Lambda_hat band treated as the singular region."""
    return max(1e-5, 10.0 / (n * n))


def kkt_residual(g, problem: InsuranceProblem, tie_tol: float | None = None) -> KktReport:
    """Three-case complementarity check of a feasible retention quantile.

    Where Psi - Lambda_hat is below the tie band the slope must equal h;
    above the band it must vanish; inside the band any slope in [0, h] is
    admissible.  Violations are reported in slope units (currency per unit
    probability), the scalar residual being their maximum over cells.  A
    cell in whose interior Lambda_hat jumps (the reflection of a measure
    atom) mixes both sides of the jump and is evaluated one-sidedly, i.e.
    skipped here.
    """
    ws = problem._ws
    gv = _nodal(g)
    if tie_tol is None:
        tie_tol = default_tie_tol(ws.n)
    psi = build_psi(gv, problem)
    lam = build_lambda_hat(gv, problem)
    s = 0.5 * (psi[:-1] + psi[1:]) - 0.5 * (lam[:-1] + lam[1:])
    slope = np.diff(gv) / ws.dp
    viol = np.zeros(ws.n)
    lo_band = s < -tie_tol
    hi_band = s > tie_tol
    viol[lo_band] = np.abs(ws.h[lo_band] - slope[lo_band])
    viol[hi_band] = np.abs(slope[hi_band])
    for loc, mass in problem.measure.atoms:
        if mass <= 0.0:
            continue
        j = int(np.searchsorted(ws.p, (1.0 - loc) + 1e-12, side="right")) - 1
        if 0 <= j < ws.n:
            viol[j] = 0.0
    return KktReport(
        residual=float(viol.max(initial=0.0)),
        per_cell=viol,
        psi=psi,
        lambda_hat=lam,
        gap_midpoints=s,
        tie_tol=tie_tol,
    )
