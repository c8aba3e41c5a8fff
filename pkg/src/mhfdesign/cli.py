"""Command-line surface.

Subcommands: ``solve`` (run the solvers, emit solution/contract CSVs and a
summary), ``verify`` (re-derive diagnostics from a solution CSV and gate on
tolerances), ``example`` (the closed-form regression), ``frontier`` (sweep
the insurer reservation value) and ``eval`` (price and value a benchmark
contract).  Exit codes: 0 success, 2 configuration error, 3 solver
non-convergence, 4 verification/regression failure.

CSV payloads are deterministic (17 significant digits, fixed column
orders); summaries additionally carry wall-time fields, which are the only
nondeterministic bytes emitted.  The MHF_THREADS environment variable caps
frontier parallelism.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .choquet import InsuranceProblem, build_lambda_hat, build_psi, rdu_objective
from .config import ConfigError, load_config, problem_from_config
from .contracts import (
    benchmark_contract,
    contract_from_quantile,
    evaluate_contract,
    parse_benchmark_spec,
    pareto_frontier,
)
from .direct import DirectConfig, kkt_residual, solve_direct
from .models import RetentionQuantile, validate_feasible
from .shooting import AtomsUnsupportedError, OdeConfig, solve_ode
from .verify import (
    oide_residual_detail,
    run_closed_form_example,
    variational_inequality_gap,
)

log = logging.getLogger("mhfdesign")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_VERIFY_FAILED = 4

_FMT = "%.17g"


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack(columns)
    np.savetxt(path, data, fmt=_FMT, delimiter=",",
               header=",".join(header), comments="")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _residual_column(g, problem: InsuranceProblem) -> np.ndarray:
    detail = oide_residual_detail(build_psi(g, problem), problem)
    out = np.zeros(problem.grid.n + 1)
    out[1:-1][detail.evaluated] = detail.per_node[detail.evaluated]
    return out


def _node_h(problem: InsuranceProblem) -> np.ndarray:
    h = problem.loss.h
    out = np.empty(problem.grid.n + 1)
    out[0] = h[0]
    out[-1] = h[-1]
    out[1:-1] = 0.5 * (h[:-1] + h[1:])
    return out


def _threads() -> int:
    raw = os.environ.get("MHF_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 4


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solution_tables(g: np.ndarray, problem: InsuranceProblem, out: Path) -> dict:
    psi = build_psi(g, problem)
    lam = build_lambda_hat(g, problem)
    res = _residual_column(g, problem)
    _write_csv(out / "solution.csv", ["p", "G", "Psi", "Lambda_hat", "residual"],
               [problem.grid.nodes, g, psi, lam, res])
    contract = contract_from_quantile(g, problem)
    x = np.linspace(0.0, problem.loss.ess_sup, problem.grid.n + 1)
    r = contract.retention(x)
    _write_csv(out / "contract.csv", ["x", "R", "I"], [x, r, x - r])
    u_insurer, u_insured = evaluate_contract(contract, problem)
    kkt = kkt_residual(g, problem)
    return {
        "premium": contract.premium,
        "u_insurer": u_insurer,
        "u_insured": u_insured,
        "kkt_residual": kkt.residual,
        "oide_residual": float(res.max()),
        "boundary_errors": [abs(float(psi[0] - (1 - problem.market.theta))),
                            abs(float(psi[-1] - 1.0))],
    }


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    problem = problem_from_config(cfg, n_override=args.n,
                                  base_dir=Path(args.config).parent)
    method = args.method
    if method in ("ode", "both") and problem.measure.has_atoms:
        raise ConfigError("the shooting method needs a distortion density; "
                          "rerun with --method direct")
    out = _out_dir(args)
    t0 = time.perf_counter()
    direct_cfg = DirectConfig(max_iters=args.max_iters)
    direct = solve_direct(problem, direct_cfg)
    log.info("direct solve: %d iterations, pg=%.3e, converged=%s",
             direct.iterations, direct.projected_gradient_norm, direct.converged)
    g = direct.g.values
    summary = {
        "method": method,
        "n": problem.grid.n,
        "iterations": direct.iterations,
        "converged": bool(direct.converged),
        "objective": direct.objective,
        "feasibility_violation": direct.feasibility_violation,
    }
    ode_sol = None
    if method in ("ode", "both"):
        ode_sol = solve_ode(problem, OdeConfig(), warm_start=direct.g)
        diag = ode_sol.diagnostics
        summary["ode"] = {
            "c": ode_sol.c, "d": ode_sol.d, "rho": ode_sol.rho,
            "outer_iterations": diag.outer_iterations,
            "residual_norm": diag.residual_norm,
            "converged": bool(diag.converged),
        }
        summary["converged"] = bool(summary["converged"] and diag.converged)
        if method == "ode":
            g = ode_sol.gamma
        else:
            summary["solver_gap"] = float(np.max(np.abs(ode_sol.gamma - g)))
    summary.update(_solution_tables(g, problem, out))
    summary["wall_time_seconds"] = time.perf_counter() - t0
    _write_json(out / "summary.json", summary)
    print(f"premium={summary['premium']:.6g} "
          f"u_insured={summary['u_insured']:.6g} "
          f"kkt={summary['kkt_residual']:.3g} "
          f"wall={summary['wall_time_seconds']:.2f}s")
    if "solver_gap" in summary:
        print(f"cross-solver gap: {summary['solver_gap']:.3g}")
    return EXIT_OK if summary["converged"] else EXIT_NO_CONVERGENCE


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    problem = problem_from_config(cfg, n_override=args.n,
                                  base_dir=Path(args.config).parent)
    sol_path = Path(args.solution)
    if not sol_path.is_file():
        raise ConfigError(f"solution file not found: {sol_path}")
    try:
        table = np.loadtxt(sol_path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"could not parse solution CSV: {exc}") from exc
    if table.shape[0] != problem.grid.n + 1 or table.shape[1] < 2:
        raise ConfigError(
            f"solution has {table.shape[0]} rows, expected {problem.grid.n + 1} "
            "(grid size mismatch)")
    g = table[:, 1]
    out = _out_dir(args)
    feas = validate_feasible(RetentionQuantile(problem.grid, g), problem.loss)
    kkt = kkt_residual(g, problem)
    psi = kkt.psi
    lam = kkt.lambda_hat
    detail = oide_residual_detail(psi, problem)
    res = np.zeros(problem.grid.n + 1)
    res[1:-1][detail.evaluated] = detail.per_node[detail.evaluated]
    vi_gap = variational_inequality_gap(g, problem, samples=200, seed=args.seed)
    _write_csv(out / "verification.csv",
               ["p", "F_X_inv", "h", "G", "Psi", "Lambda_hat", "residual"],
               [problem.grid.nodes, problem.loss.quantile, _node_h(problem),
                g, psi, lam, res])
    checks = {
        "feasibility": (feas.max_violation, 1e-9),
        "kkt_residual": (kkt.residual, args.kkt_tol),
        "oide_residual": (float(res.max()), args.oide_tol),
        "psi_boundary_0": (abs(float(psi[0] - (1 - problem.market.theta))), 1e-8),
        "psi_boundary_1": (abs(float(psi[-1] - 1.0)), 1e-8),
        "variational_gap": (max(vi_gap, 0.0), args.vi_tol),
    }
    passed = all(value <= tol for value, tol in checks.values())
    payload = {name: {"value": value, "tolerance": tol, "passed": value <= tol}
               for name, (value, tol) in checks.items()}
    payload["passed"] = passed
    _write_json(out / "verify_summary.json", payload)
    for name, (value, tol) in checks.items():
        print(f"{'PASS' if value <= tol else 'FAIL'} {name}: {value:.3g} (tol {tol:.3g})")
    if not passed:
        bad = np.nonzero(kkt.per_cell > args.kkt_tol)[0]
        if bad.size:
            cells = ", ".join(str(i) for i in bad[:8])
            print(f"complementarity violations at cells: {cells}"
                  + (" ..." if bad.size > 8 else ""))
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_example(args) -> int:
    n = args.n
    if n < 600 or n % 2 != 0:
        raise ConfigError("the regression needs an even grid size n >= 600")
    report = run_closed_form_example(n)
    rows = [
        ("G error (direct)", report.g_direct_error),
        ("G error (ode)", report.g_ode_error),
        ("Psi error (direct)", report.psi_direct_error),
        ("Psi error (ode)", report.psi_ode_error),
        ("retention error", report.retention_error),
        ("solver gap", report.solver_gap),
        ("rho error", report.rho_error),
        ("|c - d|", report.cd_gap),
        ("kkt (direct)", report.kkt_direct),
    ]
    for label, value in rows:
        print(f"{label:>22}: {value:.3e}")
    print(f"{'tolerance':>22}: {report.tolerance:.3e}")
    print(f"{'wall time':>22}: direct {report.direct_seconds:.2f}s, "
          f"ode {report.ode_seconds:.2f}s")
    print("PASS" if report.passed else "FAIL")
    if args.out is not None:
        out = _out_dir(args)
        _write_json(out / "example_report.json",
                    {k: getattr(report, k) for k in report.__dataclass_fields__})
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_frontier(args) -> int:
    cfg = load_config(args.config)
    problem = problem_from_config(cfg, n_override=args.n,
                                  base_dir=Path(args.config).parent)
    if args.gamma_steps < 1:
        raise ConfigError("frontier sweep needs at least one gamma value")
    if args.gamma_steps == 1:
        gammas = [args.gamma_min]
    else:
        gammas = list(np.linspace(args.gamma_min, args.gamma_max, args.gamma_steps))
    if args.method in ("ode", "both") and problem.measure.has_atoms:
        raise ConfigError("the shooting method needs a distortion density; "
                          "rerun with --method direct")
    method = "ode" if args.method == "ode" else "direct"
    points = pareto_frontier(gammas, problem, method=method,
                             direct_config=DirectConfig(max_iters=args.max_iters),
                             max_workers=_threads())
    out = _out_dir(args)
    _write_csv(out / "frontier.csv", ["gamma", "premium", "U_insured"],
               [np.array([pt.gamma for pt in points]),
                np.array([pt.premium for pt in points]),
                np.array([pt.u_insured for pt in points])])
    for pt in points:
        flag = "" if pt.converged else "  [not converged]"
        print(f"gamma={pt.gamma:.6g} premium={pt.premium:.6g} "
              f"U_insured={pt.u_insured:.6g}{flag}")
    return EXIT_OK if any(pt.converged for pt in points) else EXIT_NO_CONVERGENCE


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    problem = problem_from_config(cfg, n_override=args.n,
                                  base_dir=Path(args.config).parent)
    try:
        kind, param = parse_benchmark_spec(args.contract)
        contract = benchmark_contract(problem, kind, param)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    u_insurer, u_insured = evaluate_contract(contract, problem)
    payload = {
        "kind": kind,
        "param": param,
        "premium": contract.premium,
        "u_insurer": u_insurer,
        "u_insured": u_insured,
        "objective_at_quantile": rdu_objective(contract.retention_quantile, problem),
    }
    if args.out is not None:
        _write_json(_out_dir(args) / "eval.json", payload)
    print(f"{kind}({param:g}): premium={contract.premium:.6g} "
          f"u_insurer={u_insurer:.6g} u_insured={u_insured:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhf",
        description="Pareto-optimal moral-hazard-free insurance design")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON run configuration")
        p.add_argument("--n", type=int, default=None, help="grid size override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for sampling diagnostics")

    p = sub.add_parser("solve", help="solve for the optimal contract")
    common(p)
    p.add_argument("--method", choices=("direct", "ode", "both"), default="direct")
    p.add_argument("--max-iters", type=int, default=200_000, dest="max_iters")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="verify a solution CSV")
    common(p)
    p.add_argument("--solution", required=True, help="solution.csv to verify")
    p.add_argument("--kkt-tol", type=float, default=2e-3, dest="kkt_tol")
    p.add_argument("--oide-tol", type=float, default=1e-3, dest="oide_tol")
    p.add_argument("--vi-tol", type=float, default=1e-6, dest="vi_tol")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example", help="run the closed-form regression")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("frontier", help="sweep the insurer reservation value")
    common(p)
    p.add_argument("--method", choices=("direct", "ode"), default="direct")
    p.add_argument("--max-iters", type=int, default=200_000, dest="max_iters")
    p.add_argument("--gamma-min", type=float, required=True, dest="gamma_min")
    p.add_argument("--gamma-max", type=float, required=True, dest="gamma_max")
    p.add_argument("--gamma-steps", type=int, required=True, dest="gamma_steps")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("eval", help="evaluate a benchmark contract")
    common(p)
    p.add_argument("--contract", required=True,
                   help="deductible:<d> or quota:<a>")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except AtomsUnsupportedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
