import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from mfcsim import cli
from mfcsim import experiments as X
from mfcsim.liouvillian import SolverError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def runner():
    return CliRunner()


def write_yaml(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    return rows[0], rows[1:]


SMALL_SCAN = {
    "scenario": "fidelity-scan",
    "params": {"Gamma_M": "50 kHz"},
    "max_excitations": 2,
    "axes": [{"name": "Gamma", "values": ["1 MHz", "100 MHz"]},
             {"name": "kappa", "values": ["10 MHz", "10 GHz"]}],
}


# run ----------------------------------------------------------------------------------------

def test_vacuum_run_writes_series_and_manifest(runner, tmp_path):
    cfg = write_yaml(tmp_path / "v.yaml", {"scenario": "vacuum-swap", "t_end": "4.5 us", "n_points": 101})
    out = tmp_path / "out"
    res = runner.invoke(cli.main, ["run", str(cfg), "-o", str(out)])
    assert res.exit_code == 0, res.output
    header, rows = read_csv(out / "vacuum-swap.csv")
    assert header[:2] == ["t_ns", "emitter"]
    assert float(rows[0][1]) == 1.0
    assert len(rows) == 101
    manifest = json.loads((out / "vacuum-swap_manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0
    for entry in manifest["outputs"]:
        data = (out / entry["file"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
    assert set(manifest["stages"]) >= {"parse_s", "compute_s", "write_s"}
    assert manifest["metrics"]["period_ns"] == pytest.approx(4500, rel=0.05)


def test_missing_unit_exits_2_naming_key(runner, tmp_path):
    cfg = write_yaml(tmp_path / "bad.yaml", {"scenario": "pumped-swap", "params": {"Gamma": 0.05}})
    res = runner.invoke(cli.main, ["run", str(cfg), "-o", str(tmp_path / "o")])
    assert res.exit_code == 2
    report = json.loads(res.stderr.strip().splitlines()[-1])
    assert report["key"] == "params.Gamma"
    assert "params.Gamma" in report["message"]
    assert not (tmp_path / "o").exists()


def test_unreadable_config_exits_2(runner, tmp_path):
    res = runner.invoke(cli.main, ["validate", str(tmp_path / "nope.yaml")])
    assert res.exit_code == 2


def test_solver_failure_exits_3(runner, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SolverError("integration failed", t_reached=3.0)

    monkeypatch.setattr(X, "run_pumped_swap", boom)
    cfg = write_yaml(tmp_path / "p.yaml", {"scenario": "pumped-swap"})
    out = tmp_path / "out"
    res = runner.invoke(cli.main, ["run", str(cfg), "-o", str(out)])
    assert res.exit_code == 3
    manifest = json.loads((out / "pumped-swap_manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["error"]["t_reached_ns"] == 3.0


def test_output_dir_from_environment(runner, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    cfg = write_yaml(tmp_path / "c.yaml", {"scenario": "cmt-curves", "ratios": {"values": [0, 1]}})
    res = runner.invoke(cli.main, ["run", str(cfg)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "env_out" / "cmt-curves.csv").exists()


def test_repeated_runs_are_byte_identical(runner, tmp_path):
    cfg = write_yaml(tmp_path / "v.yaml", {"scenario": "vacuum-swap", "n_points": 51})
    for d in ("a", "b"):
        assert runner.invoke(cli.main, ["run", str(cfg), "-o", str(tmp_path / d)]).exit_code == 0
    assert (tmp_path / "a" / "vacuum-swap.csv").read_bytes() == (tmp_path / "b" / "vacuum-swap.csv").read_bytes()


# sweep -----------------------------------------------------------------------------------------

def test_sweep_job_counts_give_identical_bytes(runner, tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", SMALL_SCAN)
    outs = []
    for jobs in (1, 3):
        out = tmp_path / f"j{jobs}"
        res = runner.invoke(cli.main, ["sweep", str(cfg), "-j", str(jobs), "-o", str(out)])
        assert res.exit_code == 0, res.output
        assert "[4/4] points done" in res.stderr
        outs.append((out / "fidelity-scan.csv").read_bytes())
    assert outs[0] == outs[1]
    header, rows = read_csv(tmp_path / "j1" / "fidelity-scan.csv")
    assert header == ["Gamma", "kappa", "fidelity", "valid"]
    assert len(rows) == 4 and all(r[3] == "true" for r in rows)


def test_single_point_sweep_matches_run(runner, tmp_path):
    data = {**SMALL_SCAN, "axes": [{"name": "Gamma", "values": ["1 MHz"]}, {"name": "kappa", "values": ["1 GHz"]}]}
    cfg = write_yaml(tmp_path / "one.yaml", data)
    assert runner.invoke(cli.main, ["run", str(cfg), "-o", str(tmp_path / "r")]).exit_code == 0
    assert runner.invoke(cli.main, ["sweep", str(cfg), "-j", "2", "-o", str(tmp_path / "s")]).exit_code == 0
    assert (tmp_path / "r" / "fidelity-scan.csv").read_bytes() == (tmp_path / "s" / "fidelity-scan.csv").read_bytes()


def test_sweep_rejects_non_scan(runner, tmp_path):
    cfg = write_yaml(tmp_path / "v.yaml", {"scenario": "vacuum-swap"})
    res = runner.invoke(cli.main, ["sweep", str(cfg)])
    assert res.exit_code == 2


def test_too_many_invalid_points_exit_4(runner, tmp_path, monkeypatch):
    def fake_scan(params, axes, **kw):
        axes = X._make_axes(axes)
        values = np.array([[0.5, np.nan], [0.4, 0.3]])
        valid = np.isfinite(values)
        return X.ScanResult(axes, "fidelity", values, valid, [{}] * 4, {})

    monkeypatch.setattr(X, "swap_fidelity_scan", fake_scan)
    cfg = write_yaml(tmp_path / "s.yaml", SMALL_SCAN)
    out = tmp_path / "out"
    res = runner.invoke(cli.main, ["sweep", str(cfg), "-o", str(out)])
    assert res.exit_code == 4
    _, rows = read_csv(out / "fidelity-scan.csv")
    assert [r[3] for r in rows] == ["true", "false", "true", "true"]


# validate ------------------------------------------------------------------------------------

@pytest.mark.parametrize("name,dim", [("vacuum_swap", 32), ("cooling_scan", 240)])
def test_validate_reports_hilbert_dimension(runner, name, dim):
    res = runner.invoke(cli.main, ["validate", str(CONFIGS / f"{name}.yaml")])
    assert res.exit_code == 0, res.output
    report = yaml.safe_load(res.output)
    assert report["sizes"]["hilbert_dim"] == dim
    assert report["sizes"]["liouvillian_dim"] == dim * dim
    assert report["input"]["scenario"] == report["normalized"]["scenario"]


def test_validate_echoes_times_in_ns(runner, tmp_path):
    cfg = write_yaml(tmp_path / "v.yaml", {"scenario": "vacuum-swap", "t_end": "4.5 μs"})
    report = yaml.safe_load(runner.invoke(cli.main, ["validate", str(cfg)]).output)
    assert report["normalized"]["t_end"] == "4500.0 ns"
    assert report["input"]["t_end"] == "4.5 μs"


def test_normalized_config_gives_identical_manifest(runner, tmp_path):
    src = write_yaml(tmp_path / "c.yaml", {"scenario": "cmt-curves", "params": {"J": "100 GHz"},
                                           "ratios": {"start": -1, "stop": 1, "num": 5}})
    norm = tmp_path / "norm.yaml"
    assert runner.invoke(cli.main, ["validate", str(src), "--normalized", str(norm)]).exit_code == 0
    manifests = []
    for path, d in ((src, "a"), (norm, "b")):
        assert runner.invoke(cli.main, ["run", str(path), "-o", str(tmp_path / d)]).exit_code == 0
        m = json.loads((tmp_path / d / "cmt-curves_manifest.json").read_text())
        manifests.append(m)
    a, b = manifests
    assert a["config_digest"] == b["config_digest"]
    assert a["normalized_config"] == b["normalized_config"]
    assert a["outputs"] == b["outputs"]


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(runner, path):
    assert runner.invoke(cli.main, ["validate", str(path)]).exit_code == 0


# scenario smoke runs ---------------------------------------------------------------------------

@pytest.mark.slow
def test_cooling_grid_reproduces_bath_at_zero_pump(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(cli.main, ["sweep", str(CONFIGS / "cooling_scan.yaml"), "-o", str(out)])
    assert res.exit_code == 0, res.output
    _, rows = read_csv(out / "cooling-scan.csv")
    zero = [float(r[2]) for r in rows if float(r[1]) == 0.0]
    assert zero and all(v == pytest.approx(4.0, abs=0.04) for v in zero)
    manifest = json.loads((out / "cooling-scan_manifest.json").read_text())
    assert manifest["metrics"]["metadata"]["guard"]["passed"] is True
