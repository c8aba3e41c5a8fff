"""JSON run configuration: parsing and problem construction.

A config file carries five blocks::

    {
      "loss":    {"kind": "uniform_with_atom", "params": {"m0": 0.5, "scale": 1.0}},
      "measure": {"kind": "weighting", "params": {"name": "power", "exponent": 2.0}},
      "utility": {"kind": "exponential", "alpha": 1.0},
      "market":  {"theta": 0.3, "sigma": 0.5, "gamma": 0.0, "beta": 0.0},
      "grid":    {"n": 1200}
    }

Loss kinds: ``uniform_with_atom``, ``uniform``, ``beta`` (parametric) and
``empirical`` with a ``sample_path`` pointing at a single-column CSV of
nonnegative losses.  Measure kinds: ``weighting`` (named weighting
functions: identity, power), ``density`` (explicit cell values and/or
atoms; densities are normalized to carry the mass the atoms leave) and
``closed_form`` (the analytic regression measure).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .choquet import InsuranceProblem
from .models import (
    DistortionMeasure,
    Grid,
    MarketParams,
    Utility,
    build_closed_form_measure,
    build_loss_model,
    measure_from_weighting,
)

__all__ = ["ConfigError", "load_config", "problem_from_config"]


class ConfigError(Exception):
    """Unusable run configuration (missing file, bad keys, bad values)."""


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _loss_from_config(block: dict, grid: Grid, base_dir: Path):
    kind = block.get("kind")
    params = dict(block.get("params", {}))
    if kind == "empirical":
        rel = block.get("sample_path") or params.get("sample_path")
        if not rel:
            raise ConfigError("empirical loss needs a sample_path")
        path = Path(rel)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"loss sample file not found: {path}")
        try:
            sample = np.loadtxt(path, delimiter=",", ndmin=1)
        except ValueError as exc:
            raise ConfigError(f"could not parse loss sample CSV: {exc}") from exc
        return build_loss_model(sample, grid)
    if kind in ("uniform_with_atom", "uniform", "beta"):
        return build_loss_model({"kind": kind, **params}, grid)
    raise ConfigError(f"unknown loss kind {kind!r}")


def _measure_from_config(block: dict, grid: Grid) -> DistortionMeasure:
    kind = block.get("kind")
    params = dict(block.get("params", {}))
    if kind == "closed_form":
        return build_closed_form_measure(grid)
    if kind == "weighting":
        name = params.get("name", "identity")
        if name == "identity":
            return measure_from_weighting(lambda p: p, grid)
        if name == "power":
            k = float(params.get("exponent", 2.0))
            if k <= 0:
                raise ConfigError("power weighting needs a positive exponent")
            return measure_from_weighting(lambda p: p ** k, grid)
        raise ConfigError(f"unknown weighting name {name!r}")
    if kind == "density":
        atoms = tuple((float(a), float(m)) for a, m in params.get("atoms", []))
        atom_mass = sum(m for _, m in atoms)
        if atom_mass > 1.0 + 1e-12:
            raise ConfigError("atom masses exceed total probability")
        values = params.get("values")
        if values is None:
            density = np.ones(grid.n)
        else:
            density = np.asarray(values, dtype=float)
            if density.shape != (grid.n,):
                raise ConfigError(
                    f"density needs one value per cell ({grid.n}), got {density.size}")
            if np.any(density < 0):
                raise ConfigError("density values must be nonnegative")
        total = density.sum() * grid.dp
        if total <= 0 and atom_mass < 1.0 - 1e-12:
            raise ConfigError("density carries no mass but atoms do not sum to 1")
        if total > 0:
            density = density * ((1.0 - atom_mass) / total)
        return DistortionMeasure(grid=grid, density=density, atoms=atoms)
    raise ConfigError(f"unknown measure kind {kind!r}")


def problem_from_config(cfg: dict, n_override: int | None = None,
                        base_dir=None) -> InsuranceProblem:
    """Build the full problem bundle from a parsed config dict."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        n = int(n_override if n_override is not None else cfg["grid"]["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"missing or bad grid size: {exc}") from exc
    try:
        grid = Grid(n)
        loss = _loss_from_config(cfg.get("loss") or {}, grid, base_dir)
        measure = _measure_from_config(cfg.get("measure") or {}, grid)
        ut = cfg.get("utility") or {}
        utility = Utility(ut.get("kind", "exponential"), alpha=float(ut.get("alpha", 1.0)))
        mk = cfg.get("market") or {}
        market = MarketParams(
            theta=float(mk.get("theta", 0.0)),
            sigma=float(mk.get("sigma", 1.0)),
            gamma=float(mk.get("gamma", 0.0)),
            beta=float(mk.get("beta", 0.0)),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return InsuranceProblem(loss=loss, measure=measure, utility=utility, market=market)
