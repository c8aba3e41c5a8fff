"""CLI surface: exit codes, file outputs, determinism, verify pipeline."""

import json
from pathlib import Path

import numpy as np
import pytest

from mhfdesign.cli import main

BASE_CONFIG = {
    "loss": {"kind": "uniform_with_atom", "params": {"m0": 0.5, "scale": 1.0}},
    "measure": {"kind": "weighting", "params": {"name": "power", "exponent": 0.7}},
    "utility": {"kind": "exponential", "alpha": 1.0},
    "market": {"theta": 0.5, "sigma": 0.5, "gamma": 0.0, "beta": 0.0},
    "grid": {"n": 600},
}

ATOM_CONFIG = {
    "loss": {"kind": "uniform_with_atom", "params": {"m0": 0.5, "scale": 1.0}},
    "measure": {"kind": "density", "params": {"atoms": [[0.5, 0.2]]}},
    "utility": {"kind": "exponential", "alpha": 1.0},
    "market": {"theta": 1.1, "sigma": 0.5, "gamma": 0.0, "beta": 0.0},
    "grid": {"n": 400},
}


def write_config(tmp_path: Path, cfg: dict, name="config.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestSolve:
    def test_solve_and_verify_roundtrip(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out = str(tmp_path / "run")
        assert main(["solve", "--config", cfg, "--out", out,
                     "--method", "both"]) == 0
        for name in ("solution.csv", "contract.csv", "summary.json"):
            assert (Path(out) / name).is_file()
        summary = json.loads((Path(out) / "summary.json").read_text())
        assert summary["converged"]
        assert "solver_gap" in summary and summary["solver_gap"] <= 5e-3
        assert summary["u_insurer"] == pytest.approx(0.0, abs=1e-8)
        # verification of the emitted solution passes
        code = main(["verify", "--config", cfg, "--solution",
                     str(Path(out) / "solution.csv"), "--out",
                     str(tmp_path / "ver")])
        assert code == 0
        assert (tmp_path / "ver" / "verification.csv").is_file()

    def test_deterministic_outputs(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["solve", "--config", cfg, "--out", out1]) == 0
        assert main(["solve", "--config", cfg, "--out", out2]) == 0
        for name in ("solution.csv", "contract.csv"):
            a = (Path(out1) / name).read_bytes()
            b = (Path(out2) / name).read_bytes()
            assert a == b
        s1 = json.loads((Path(out1) / "summary.json").read_text())
        s2 = json.loads((Path(out2) / "summary.json").read_text())
        s1.pop("wall_time_seconds"); s2.pop("wall_time_seconds")
        assert s1 == s2

    def test_atoms_with_ode_method_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path, ATOM_CONFIG)
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--method", "ode"]) == 2

    def test_atoms_with_direct_method_works(self, tmp_path):
        cfg = write_config(tmp_path, ATOM_CONFIG)
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--method", "direct"]) == 0

    def test_missing_config(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_sample_csv(self, tmp_path):
        cfg = dict(BASE_CONFIG)
        cfg["loss"] = {"kind": "empirical", "sample_path": "absent.csv"}
        path = write_config(tmp_path, cfg)
        assert main(["solve", "--config", path,
                     "--out", str(tmp_path / "o")]) == 2

    def test_empirical_sample_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        np.savetxt(tmp_path / "losses.csv", rng.uniform(0, 1, 300), delimiter=",")
        cfg = dict(BASE_CONFIG)
        cfg["loss"] = {"kind": "empirical", "sample_path": "losses.csv"}
        cfg["grid"] = {"n": 200}
        path = write_config(tmp_path, cfg)
        assert main(["solve", "--config", path,
                     "--out", str(tmp_path / "emp")]) == 0

    def test_closed_form_config_reports_small_gap(self, tmp_path):
        cfg = {
            "loss": {"kind": "uniform_with_atom", "params": {"m0": 0.5, "scale": 1.0}},
            "measure": {"kind": "closed_form"},
            "utility": {"kind": "exponential", "alpha": 1.0},
            "market": {"theta": 13.0 / 12.0, "sigma": 0.5},
            "grid": {"n": 600},
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "cf"
        assert main(["solve", "--config", path, "--out", str(out),
                     "--method", "both"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["solver_gap"] <= 5e-3


class TestVerify:
    def test_hand_edited_solution_fails(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out = str(tmp_path / "run")
        assert main(["solve", "--config", cfg, "--out", out]) == 0
        sol = Path(out) / "solution.csv"
        table = np.loadtxt(sol, delimiter=",", skiprows=1)
        # push retention up on a band, staying feasible but non-optimal
        p = table[:, 0]
        bump = np.minimum(np.maximum(p - 0.75, 0), np.maximum(0.9 - p, 0))
        table[:, 1] = np.minimum(table[:, 1] + 0.8 * bump,
                                 np.maximum(2 * p - 1, 0))
        np.savetxt(sol, table, delimiter=",", fmt="%.17g",
                   header="p,G,Psi,Lambda_hat,residual", comments="")
        assert main(["verify", "--config", cfg, "--solution", str(sol),
                     "--out", str(tmp_path / "ver")]) == 4

    def test_grid_mismatch_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out = str(tmp_path / "run")
        assert main(["solve", "--config", cfg, "--out", out]) == 0
        assert main(["verify", "--config", cfg, "--n", "500",
                     "--solution", str(Path(out) / "solution.csv"),
                     "--out", str(tmp_path / "ver")]) == 2


class TestExample:
    def test_odd_grid_rejected(self, tmp_path):
        assert main(["example", "--n", "601"]) == 2

    def test_small_grid_rejected(self):
        assert main(["example", "--n", "598"]) == 2

    def test_coarse_run_passes(self, tmp_path):
        assert main(["example", "--n", "600", "--out",
                     str(tmp_path / "ex")]) == 0
        report = json.loads((tmp_path / "ex" / "example_report.json").read_text())
        assert report["passed"]
        assert report["g_direct_error"] <= 2e-2


class TestFrontier:
    def test_three_point_sweep(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out = tmp_path / "front"
        assert main(["frontier", "--config", cfg, "--out", str(out),
                     "--gamma-min", "0.0", "--gamma-max", "0.5",
                     "--gamma-steps", "3"]) == 0
        table = np.loadtxt(out / "frontier.csv", delimiter=",", skiprows=1)
        assert table.shape == (3, 3)
        assert np.all(np.diff(table[:, 2]) < 0)  # U_insured decreasing in gamma
        # CARA: premiums shift one-for-one with gamma
        assert np.allclose(np.diff(table[:, 1]), 0.25, atol=1e-9)

    def test_empty_range_rejected(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        assert main(["frontier", "--config", cfg, "--out", str(tmp_path / "f"),
                     "--gamma-min", "0.0", "--gamma-max", "1.0",
                     "--gamma-steps", "0"]) == 2


class TestThreadCap:
    def test_env_variable_parsed(self, monkeypatch):
        from mhfdesign.cli import _threads

        monkeypatch.setenv("MHF_THREADS", "2")
        assert _threads() == 2
        monkeypatch.setenv("MHF_THREADS", "bogus")
        assert _threads() == 4
        monkeypatch.setenv("MHF_THREADS", "0")
        assert _threads() == 1


class TestEval:
    def test_deductible(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        assert main(["eval", "--config", cfg, "--contract", "deductible:0.3",
                     "--out", str(tmp_path / "ev")]) == 0
        payload = json.loads((tmp_path / "ev" / "eval.json").read_text())
        assert payload["u_insurer"] == pytest.approx(0.0, abs=1e-10)

    def test_bad_benchmark(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        assert main(["eval", "--config", cfg, "--contract", "quota:1.5"]) == 2
        assert main(["eval", "--config", cfg, "--contract", "swaption=1"]) == 2
