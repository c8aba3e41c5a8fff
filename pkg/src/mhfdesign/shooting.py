"""Initial-value integration of the complementarity system and the outer
root-find on its matching constants.

When the distortion measure has a density, the optimal retention quantile
``Gamma`` solves an initial-value system driven by a slack function
``Lambda``: the retention slope is 0 while Lambda is positive, h while it is
negative, and on the singular band ``|Lambda| ~ 0`` it is the slope that
keeps Lambda stationary.  The system depends on three constants: a
normalization ``c`` for the marginal-utility weights, the premium-adjusted
wealth ``d`` and the initial slope ``rho`` of the integrated optimality
transform.  Those constants are matched by a damped Broyden iteration on
the residual vector

    ( Lambda(1),
      wealth_after_premium(Gamma) - d,
      rho - theta - 2 sigma int Gamma + 2 sigma E[X] ).

Measures with atoms have no density to drive Lambda' and are rejected; the
direct solver covers them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .choquet import InsuranceProblem, wealth_after_premium, _nodal
from .models import RetentionQuantile

__all__ = ["OdeConfig", "OdeSolution", "OdeDiagnostics", "AtomsUnsupportedError",
           "integrate_inner", "solve_ode", "warm_start_constants"]


class AtomsUnsupportedError(ValueError):
    """The shooting scheme needs a density; atom-bearing measures go direct."""


@dataclass(frozen=True)
class OdeConfig:
    residual_tol: float = 1e-7
    max_outer: int = 80
    damping: float = 0.5
    band: float | None = None        # singular-arc half width for Lambda
    fd_step: float = 1e-6
    max_backtracks: int = 12
    jacobian_refresh: int = 15


@dataclass
class OdeDiagnostics:
    converged: bool
    outer_iterations: int
    residual_norm: float
    residuals: np.ndarray
    integrations: int
    singular_fallbacks: int


@dataclass
class OdeSolution:
    """Trajectories and matched constants of the complementarity system.

    ``psi`` is reconstructed as 2 sigma int_0^p (quantile - Gamma) + rho p
    + 1 - theta; at a converged solution psi(1) = 1 holds exactly because
    the third residual ties rho to int Gamma.
    """

    lambda_: np.ndarray
    gamma: np.ndarray
    c: float
    d: float
    rho: float
    psi: np.ndarray
    diagnostics: OdeDiagnostics | None = None

    def retention(self, grid) -> RetentionQuantile:
        return RetentionQuantile(grid, self.gamma)


def _scalar_marginal_utility(problem: InsuranceProblem):
    u = problem.utility
    if u.kind == "linear":
        return lambda x: 1.0
    alpha = u.alpha
    return lambda x: math.exp(min(700.0, max(-700.0, -alpha * x)))


def integrate_inner(c: float, d: float, rho: float, problem: InsuranceProblem,
                    band: float | None = None):
    """Fixed-step integration of (Lambda, Gamma) across the grid.

    Per cell the retention slope follows the complementarity branches; on
    the singular band Gamma is moved to the root of Lambda' = 0 (the right
    side is strictly decreasing in Gamma), clamped to the feasible slope
    range.  When no feasible slope can hold Lambda' at zero the bang branch
    matching the sign Lambda is about to take is used.  Lambda itself is
    advanced with the classical fourth-order Runge-Kutta step, which for
    this state-free right side reduces to Simpson's rule.

    Returns (lambda_nodes, gamma_nodes, singular_fallbacks).
    """
    if problem.measure.has_atoms:
        raise AtomsUnsupportedError(
            "the shooting scheme requires a distortion density; "
            "use the direct solver for measures with atoms")
    if c <= 0.0:
        raise ValueError("the weight normalization c must be positive")
    ws = problem._ws
    n = ws.n
    dp = ws.dp
    q = ws.q
    h = ws.h
    sigma = ws.sigma
    theta = ws.theta
    dens = problem.measure.density
    up = _scalar_marginal_utility(problem)
    if band is None:
        band = 1e-6 * (1.0 + abs(1.0 - theta))

    lam = np.empty(n + 1)
    gam = np.empty(n + 1)
    lam[0] = 1.0 - theta
    gam[0] = 0.0
    fallbacks = 0
    on_arc = False
    rate_band = band / dp
    capture_near = 1e-3 * (1.0 + abs(1.0 - theta))
    capture_far = 5e-2 * (1.0 + abs(1.0 - theta))

    for i in range(n):
        # the step reflects into measure cell n-1-i, where the density is constant
        dc = dens[n - 1 - i]
        q0, q1 = q[i], q[i + 1]
        qm = 0.5 * (q0 + q1)
        g0 = gam[i]
        hi_cap = h[i] * dp

        def lam_rate(qv, gv):
            return 2.0 * sigma * (qv - gv) + rho - c * up(d - gv) * dc

        # arc detection: the base band is widened by how far Lambda can move
        # within one step (no stepping over the arc undetected); once riding,
        # hysteresis keeps the step singular until a structural exit signal;
        # trajectories creeping toward the arc (small Lambda, small rate) or
        # arriving tangentially (the frozen-retention rate changes sign) are
        # captured when a feasible interior root of Lambda' = 0 exists
        r_start = lam_rate(q0, g0)
        entry = max(band, 2.0 * dp * abs(r_start))
        run_singular = on_arc or abs(lam[i]) <= entry
        if not run_singular and abs(lam[i]) <= capture_far:
            root_ok = (lam_rate(qm, g0) > 0.0
                       and lam_rate(qm, g0 + 0.5 * hi_cap) < 0.0)
            tangential = r_start * lam_rate(q1, g0) <= 0.0
            run_singular = root_ok and (abs(lam[i]) <= capture_near or tangential)
        if not run_singular:
            slope_move = 0.0 if lam[i] > 0.0 else hi_cap
        else:
            # classify at the cell midpoint, where the cell-average density is
            # second-order accurate; the rate is strictly decreasing in Gamma,
            # so sign checks at the slope caps settle the step before bisection
            f_lo = lam_rate(qm, g0)
            f_hi = lam_rate(qm, g0 + 0.5 * hi_cap)
            if f_lo <= 0.0:
                # root at or below zero slope: ride the bound while the exit
                # rate is negligible; a decisively negative rate is either a
                # bang-0 leg still descending (Lambda > 0) or a downward exit
                on_arc = f_lo >= -rate_band
                if on_arc or lam[i] > band:
                    slope_move = 0.0
                else:
                    slope_move = hi_cap
            elif f_hi >= 0.0:
                # root at or above the cap: ride the cap; a decisively positive
                # rate is a bang-h leg still ascending (Lambda < 0) or an
                # upward exit
                on_arc = f_hi <= rate_band
                if on_arc or lam[i] < -band:
                    slope_move = hi_cap
                else:
                    slope_move = 0.0
            else:
                try:
                    root = brentq(lambda gv: lam_rate(qm, gv), g0, g0 + 0.5 * hi_cap,
                                  xtol=1e-14, rtol=8.9e-16)
                except ValueError:
                    fallbacks += 1
                    root = g0 + 0.25 * hi_cap
                slope_move = 2.0 * (root - g0)
                on_arc = True

        g1 = g0 + slope_move
        gm = g0 + 0.5 * slope_move
        k1 = lam_rate(q0, g0)
        k2 = lam_rate(qm, gm)
        k4 = lam_rate(q1, g1)
        lam_next = lam[i] + dp / 6.0 * (k1 + 4.0 * k2 + k4)

        if (not run_singular) and hi_cap > 0.0 and lam[i] * lam_next < 0.0:
            # transversal zero crossing inside a bang cell: place the switch
            # at the interpolated crossing and integrate the two sub-pieces
            # with their own bang slopes, so the terminal residual depends
            # continuously on the matching constants instead of snapping to
            # cell boundaries
            frac = lam[i] / (lam[i] - lam_next)
            inc1 = slope_move * frac
            inc2 = (0.0 if lam[i] < 0.0 else hi_cap) * (1.0 - frac)
            lam_next = lam[i]
            for start, width, base, inc in (
                    (0.0, frac * dp, g0, inc1),
                    (frac * dp, (1.0 - frac) * dp, g0 + inc1, inc2)):
                if width <= 0.0:
                    continue
                qa = q0 + h[i] * start
                qb = qa + h[i] * width
                ka = lam_rate(qa, base)
                kb = lam_rate(0.5 * (qa + qb), base + 0.5 * inc)
                kc = lam_rate(qb, base + inc)
                lam_next += width / 6.0 * (ka + 4.0 * kb + kc)
            g1 = g0 + inc1 + inc2
            on_arc = False

        lam[i + 1] = lam_next
        gam[i + 1] = g1

    return lam, gam, fallbacks


def warm_start_constants(problem: InsuranceProblem, g) -> tuple[float, float, float]:
    """Matching constants implied by a candidate optimal retention quantile."""
    ws = problem._ws
    gv = _nodal(g)
    d = wealth_after_premium(gv, problem.wealth_base, problem.loss, ws.sigma)
    rho = ws.theta + 2.0 * ws.sigma * (ws.tw @ gv) - 2.0 * ws.sigma * ws.mean
    up = ws.utility.derivative(d - ws.reflected_midpoints(gv))
    denom = float(ws.m @ up)
    if ws.atom_loc.size:
        denom += float(ws.atom_mass @ ws.utility.derivative(d - ws.reflected_atoms(gv)))
    return 1.0 / denom, d, rho


def solve_ode(problem: InsuranceProblem, config: OdeConfig | None = None,
              warm_start: RetentionQuantile | None = None) -> OdeSolution:
    """Shooting solve: match (c, d, rho) so the integrated system is consistent.

    With a warm start (typically the direct solver's output) the constants
    begin at their implied values and the outer loop only refines them; cold
    starts use (1/u'(k), k, theta) and are not guaranteed to converge from
    arbitrary instances.
    """
    cfg = config or OdeConfig()
    if problem.measure.has_atoms:
        raise AtomsUnsupportedError(
            "the shooting scheme requires a distortion density; "
            "use the direct solver for measures with atoms")
    ws = problem._ws
    ess = max(problem.loss.ess_sup, 1e-12)
    scale = np.array([1.0, 1.0 / ess, 1.0])

    if warm_start is not None:
        x = np.array(warm_start_constants(problem, warm_start))
    else:
        k = problem.wealth_base.k
        up_k = float(problem.utility.derivative(np.array([k]))[0])
        x = np.array([1.0 / up_k, k, problem.market.theta])

    state = {"integrations": 0, "fallbacks": 0}

    def residual(vec: np.ndarray):
        c, d, rho = vec
        lam, gam, fb = integrate_inner(c, d, rho, problem, band=cfg.band)
        state["integrations"] += 1
        state["fallbacks"] += fb
        r = np.array([
            lam[-1],
            wealth_after_premium(gam, problem.wealth_base, problem.loss, ws.sigma) - d,
            rho - ws.theta - 2.0 * ws.sigma * (ws.tw @ gam) + 2.0 * ws.sigma * ws.mean,
        ])
        return r * scale, lam, gam

    def fd_jacobian(vec: np.ndarray, r0: np.ndarray) -> np.ndarray:
        J = np.empty((3, 3))
        for j in range(3):
            step = cfg.fd_step * (1.0 + abs(vec[j]))
            probe = vec.copy()
            probe[j] += step
            if j == 0 and probe[0] <= 0.0:
                probe[0] = vec[0] * 0.5
                step = probe[0] - vec[0]
            rj, _, _ = residual(probe)
            J[:, j] = (rj - r0) / step
        return J

    r, lam, gam = residual(x)
    norm = float(np.max(np.abs(r)))
    J = None
    since_refresh = 0
    converged = norm <= cfg.residual_tol
    it = 0
    while not converged and it < cfg.max_outer:
        it += 1
        if J is None:
            J = fd_jacobian(x, r)
            since_refresh = 0
        try:
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            J = None
            continue
        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = x + step * dx
            if x_new[0] <= 0.0:
                step *= 0.5
                continue
            r_new, lam_new, gam_new = residual(x_new)
            norm_new = float(np.max(np.abs(r_new)))
            if norm_new < norm or norm_new <= cfg.residual_tol:
                dxs = x_new - x
                dr = r_new - r
                J = J + np.outer((dr - J @ dxs) / (dxs @ dxs), dxs)
                x, r, norm, lam, gam = x_new, r_new, norm_new, lam_new, gam_new
                accepted = True
                since_refresh += 1
                break
            step *= cfg.damping
        if not accepted:
            if since_refresh == 0:
                break  # fresh Jacobian and still no progress
            J = None
            continue
        if since_refresh >= cfg.jacobian_refresh:
            J = None
        converged = norm <= cfg.residual_tol

    c, d, rho = (float(v) for v in x)
    diff = ws.q - gam
    cells = 0.5 * ws.dp * (diff[:-1] + diff[1:])
    psi = 2.0 * ws.sigma * np.concatenate(([0.0], np.cumsum(cells))) \
        + rho * ws.p + 1.0 - ws.theta
    diag = OdeDiagnostics(
        converged=bool(converged),
        outer_iterations=it,
        residual_norm=norm,
        residuals=r / scale,
        integrations=state["integrations"],
        singular_fallbacks=state["fallbacks"],
    )
    return OdeSolution(lambda_=lam, gamma=gam, c=c, d=d, rho=rho, psi=psi,
                       diagnostics=diag)
