"""Command-line front end: ``mfcsim run``, ``mfcsim validate`` and ``mfcsim sweep``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 scan with
fewer than 99 % valid points.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from . import experiments as X
from . import models as M
from .config import ConfigError, ScenarioConfig, dump_normalized, load_config
from .liouvillian import SolverError, build_liouvillian

OUTPUT_ENV = "MFCSIM_OUTPUT_DIR"
DEFAULT_OUTPUT = "mfcsim-output"
MIN_VALID_FRACTION = 0.99
FIGURE_N_B = 0.8

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVALID_POINTS = 4


@dataclass
class Table:
    name: str
    header: list[str]
    columns: list

    def rows(self):
        return zip(*self.columns)


@dataclass
class Outcome:
    tables: list[Table] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    valid_fraction: float | None = None


def format_value(v) -> str:
    """Deterministic text for a CSV cell: shortest round-trip repr for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_bytes(table: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(table.header)
    for row in table.rows():
        w.writerow([format_value(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _json_safe(obj.real), "im": _json_safe(obj.imag)}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


# scenario execution ---------------------------------------------------------------

def _series(times, **cols) -> Table:
    header = ["t_ns"] + list(cols)
    return Table("", header, [np.asarray(times, dtype=float)] + [np.asarray(c, dtype=float) for c in cols.values()])


def _run_vacuum(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    o = cfg.options
    res = X.run_vacuum_swap(cfg.params, resonance=cfg.resonance, sideband=o["sideband"], t_end=o["t_end"],
                            n_points=o["n_points"], dims=o["dims"] or None, solver=cfg.solver)
    f, r = res.full, res.reduced
    t = _series(f.times, emitter=f.real("emitter"), photon=f.real("photon"), phonon=f.real("phonon"),
                emitter_reduced=r.real("emitter"), photon_reduced=r.real("photon"),
                phonon_reduced=r.real("phonon"))
    t.name = "timeseries"
    return Outcome([t], dict(res.metrics), {"full": f.diagnostics, "reduced": r.diagnostics})


def _run_pumped(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    o = cfg.options
    res = X.run_pumped_swap(cfg.params, o["protocol"], o["n_cav"], resonance=cfg.resonance, model=o["model"],
                            dims=o["dims"] or None, max_excitations=o["max_excitations"], release=o["release"],
                            solver=cfg.solver)
    s = res.search
    pump = [res.pump_on.value_at(t) for t in s.times]
    t = _series(s.times, n_cav_pump=pump, phonon_p1=s.real("phonon_p1"), phonon=s.real("phonon"),
                emitter=s.real("emitter"))
    t.name = "timeseries"
    tables = [t]
    diags = {"search": s.diagnostics}
    if res.release is not None:
        r = res.release
        pump_r = [res.pump_off.value_at(x) for x in r.times]
        tr = _series(r.times, n_cav_pump=pump_r, phonon_p1=r.real("phonon_p1"), phonon=r.real("phonon"),
                     emitter=r.real("emitter"))
        tr.name = "release"
        tables.append(tr)
        diags["release"] = r.diagnostics
    metrics = dict(res.metrics)
    metrics["figure_reference"] = {
        "n_b_figure": FIGURE_N_B,
        "n_b_simulated": res.metrics["n_b_at_switch_off"],
        "note": "figure value depends on unpublished drive details; reported for comparison only",
    }
    return Outcome(tables, metrics, diags)


def _scan_table(scan: X.ScanResult) -> Table:
    rows = list(scan.rows())
    header = [a.name for a in scan.axes] + [scan.metric, "valid"]
    cols = [list(c) for c in zip(*rows)] if rows else [[] for _ in header]
    return Table("scan", header, cols)


def _scan_diagnostics(scan: X.ScanResult) -> dict:
    diags = scan.diagnostics
    errors = [{"index": i, "error": d["error"]} for i, d in enumerate(diags) if "error" in d]
    summary: dict = {"points": int(scan.values.size), "valid": int(scan.valid.sum()), "failures": errors}
    for key, agg in (("max_trace_error", max), ("min_eigenvalue", min), ("residual", max),
                     ("phonon_dim", max)):
        vals = [d[key] for d in diags if key in d]
        if vals:
            summary[key] = agg(vals)
    return summary


def _run_fidelity_scan(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    o = cfg.options
    scan = X.swap_fidelity_scan(cfg.params, o["axes"], n_cav=o["n_cav"], protocol=o["protocol"],
                                resonance=cfg.resonance, model=o["model"], dims=o["dims"] or None,
                                max_excitations=o["max_excitations"], jobs=jobs, solver=cfg.solver or None,
                                progress=progress)
    return Outcome([_scan_table(scan)], {"metadata": scan.metadata, "valid_fraction": scan.valid_fraction},
                   _scan_diagnostics(scan), scan.valid_fraction)


def _run_cooling_scan(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    o = cfg.options
    gam, ncav = o["axes"]
    scan = X.cooling_scan(cfg.params, gam.values, ncav.values, phonon_dim=o["phonon_dim"],
                          cavity_dim=o["cavity_dim"], max_phonon_dim=o["max_phonon_dim"],
                          top_population_tol=o["top_population_tol"], guard_phonon_dim=o["guard_phonon_dim"],
                          resonance=cfg.resonance, jobs=jobs, solver=cfg.solver or None,
                          cavity_check=o["cavity_check"], progress=progress)
    scan.axes = (gam, ncav)
    return Outcome([_scan_table(scan)], {"metadata": scan.metadata, "valid_fraction": scan.valid_fraction},
                   _scan_diagnostics(scan), scan.valid_fraction)


def _run_mech(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    o = cfg.options
    res = X.mech_supermode_validation(cfg.params, o["pumped"], n_cav=o["n_cav"], resonance=cfg.resonance,
                                      t_end=o["t_end"], n_points=o["n_points"], solver=cfg.solver)
    f, r = res.full, res.reduced
    cols = {k: f.real(k) for k in ("n_b0", "n_b_plus", "n_b_minus", "n_mech_L", "n_mech_T", "n_mech_R", "emitter")}
    cols["phonon_reduced"] = r.real("phonon")
    cols["emitter_reduced"] = r.real("emitter")
    t = _series(f.times, **cols)
    t.name = "timeseries"
    return Outcome([t], dict(res.metrics), {"full": f.diagnostics, "reduced": r.diagnostics})


def _run_cmt(cfg: ScenarioConfig, jobs: int, progress) -> Outcome:
    curves = X.cmt_curves(cfg.params.J, cfg.options["ratios"], cfg.params.g)
    return Outcome([Table("curves", list(curves), list(curves.values()))], {"points": len(cfg.options["ratios"])})


RUNNERS = {
    "vacuum-swap": _run_vacuum,
    "pumped-swap": _run_pumped,
    "fidelity-scan": _run_fidelity_scan,
    "cooling-scan": _run_cooling_scan,
    "mech-validation": _run_mech,
    "cmt-curves": _run_cmt,
}


def execute(cfg: ScenarioConfig, jobs: int = 1, progress=None) -> Outcome:
    """Run the configured scenario and return its tables and metrics."""
    return RUNNERS[cfg.scenario](cfg, jobs, progress)


# sizes -----------------------------------------------------------------------------

def problem_sizes(cfg: ScenarioConfig) -> dict:
    """Hilbert dimension and Liouvillian size of the scenario's largest model."""
    o, p = cfg.options, cfg.params
    if cfg.scenario == "cmt-curves":
        return {"hilbert_dim": 3, "liouvillian_dim": 0, "liouvillian_nnz": 0, "points": len(o["ratios"])}
    p = X.at_resonance(p, cfg.resonance)
    points = 1
    if cfg.scenario == "vacuum-swap":
        lay = M.three_cavity_layout(**o["dims"])
        model = M.with_losses(M.build_three_cavity_hamiltonian(p, lay), p)
        value = None
    elif cfg.scenario in ("pumped-swap", "fidelity-scan"):
        model, lay, _, _ = X._displaced_setup(p, o["n_cav"], o["model"], o["dims"] or None, o["max_excitations"])
        value = o["n_cav"]
        if cfg.scenario == "fidelity-scan":
            points = int(np.prod([len(a.values) for a in o["axes"]]))
    elif cfg.scenario == "cooling-scan":
        model = X.cooling_model(p, 1.0, phonon_dim=o["phonon_dim"], cavity_dim=o["cavity_dim"])
        lay = model.layout
        value = 1.0
        points = int(np.prod([len(a.values) for a in o["axes"]]))
    else:
        lay = M.full_mech_layout()
        model = M.with_losses(M.build_three_cavity_full_mech_hamiltonian(p, lay), p)
        value = None
    L = build_liouvillian(model, value)
    out = {"hilbert_dim": lay.total_dim, "liouvillian_dim": L.dim, "liouvillian_nnz": int(L.matrix.nnz),
           "points": points}
    if cfg.scenario == "cooling-scan":
        out["max_hilbert_dim"] = lay.total_dim // o["phonon_dim"] * o["max_phonon_dim"]
        if o["guard_phonon_dim"] is not None:
            out["guard_hilbert_dim"] = lay.total_dim // o["phonon_dim"] * o["guard_phonon_dim"]
    return out


# output ----------------------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def resolve_output_dir(cfg: ScenarioConfig, override: str | None) -> Path:
    return Path(override or cfg.output.get("dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _file_name(cfg: ScenarioConfig, table: Table) -> str:
    prefix = cfg.output.get("prefix", cfg.scenario)
    return f"{prefix}.csv" if table.name in ("timeseries", "scan", "curves") else f"{prefix}_{table.name}.csv"


def run_scenario(cfg: ScenarioConfig, out_dir: Path, *, jobs: int = 1, progress=None,
                 config_path: str | None = None, parse_time_s: float = 0.0) -> tuple[int, dict]:
    """Execute, write the CSV files and the manifest; return (exit code, manifest)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg.output.get("prefix", cfg.scenario)
    manifest: dict = {
        "tool": "mfcsim",
        "version": __version__,
        "scenario": cfg.scenario,
        "config_path": config_path,
        "config_digest": cfg.digest(),
        "normalized_config": cfg.normalized(),
        "jobs": jobs,
        "units": {"time": "ns", "rates": "rad/ns", "n_cav": "photons"},
        "stages": {"parse_s": parse_time_s},
        "outputs": [],
    }
    code = 0
    t0 = time.perf_counter()
    try:
        outcome = execute(cfg, jobs, progress)
    except SolverError as exc:
        manifest["stages"]["compute_s"] = time.perf_counter() - t0
        manifest["status"] = "failed"
        manifest["error"] = {"kind": "solver", "message": str(exc),
                             "t_reached_ns": getattr(exc, "t_reached", None)}
        code = EXIT_SOLVER
        outcome = None
    except (M.ModelError, ValueError) as exc:
        manifest["stages"]["compute_s"] = time.perf_counter() - t0
        manifest["status"] = "failed"
        manifest["error"] = {"kind": "config", "key": cfg.scenario, "message": str(exc)}
        code = EXIT_CONFIG
        outcome = None
    if outcome is not None:
        manifest["stages"]["compute_s"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        for table in outcome.tables:
            data = csv_bytes(table)
            name = _file_name(cfg, table)
            (out_dir / name).write_bytes(data)
            manifest["outputs"].append({"file": name, "sha256": _sha256(data), "bytes": len(data),
                                        "rows": len(table.columns[0]) if table.columns else 0,
                                        "columns": table.header})
        manifest["stages"]["write_s"] = time.perf_counter() - t1
        manifest["metrics"] = outcome.metrics
        manifest["diagnostics"] = outcome.diagnostics
        manifest["status"] = "ok"
        if outcome.valid_fraction is not None and outcome.valid_fraction < MIN_VALID_FRACTION:
            manifest["status"] = "too-many-invalid-points"
            manifest["error"] = {"kind": "scan", "message": f"only {outcome.valid_fraction:.1%} of points valid"}
            code = EXIT_INVALID_POINTS
    manifest["exit_code"] = code
    manifest = _json_safe(manifest)
    (out_dir / f"{prefix}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                     encoding="utf-8")
    return code, manifest


def _report_error(code: int, kind: str, message: str, key: str | None = None):
    report = {"status": "error", "exit_code": code, "kind": kind, "message": message}
    if key is not None:
        report["key"] = key
    click.echo(json.dumps(report, sort_keys=True), err=True)
    sys.exit(code)


def _load(path: str) -> tuple[ScenarioConfig, float]:
    t0 = time.perf_counter()
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        _report_error(EXIT_CONFIG, "config", str(exc), exc.key)
    return cfg, time.perf_counter() - t0


def _progress(done: int, total: int):
    click.echo(f"[{done}/{total}] points done", err=True)


# commands --------------------------------------------------------------------------

@click.group()
@click.version_option(__version__, prog_name="mfcsim")
def main():
    """Emitter-photon-phonon swap and cooling simulations."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output-dir", "-o", default=None, help=f"Output directory (default: config, ${OUTPUT_ENV}, "
                                                        f"or ./{DEFAULT_OUTPUT}).")
def run(config, output_dir):
    """Run the scenario in CONFIG and write CSV results plus a JSON manifest."""
    cfg, t_parse = _load(config)
    out = resolve_output_dir(cfg, output_dir)
    code, manifest = run_scenario(cfg, out, jobs=1, config_path=str(config), parse_time_s=t_parse)
    _finish(code, manifest, out)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--jobs", "-j", default=1, show_default=True, type=click.IntRange(min=1),
              help="Worker processes for the scan points.")
@click.option("--output-dir", "-o", default=None, help="Output directory.")
def sweep(config, jobs, output_dir):
    """Run a scan scenario with its grid points spread over worker processes."""
    cfg, t_parse = _load(config)
    if not cfg.is_scan:
        _report_error(EXIT_CONFIG, "config", f"scenario {cfg.scenario!r} is not a scan", "scenario")
    out = resolve_output_dir(cfg, output_dir)
    code, manifest = run_scenario(cfg, out, jobs=jobs, progress=_progress, config_path=str(config),
                                  parse_time_s=t_parse)
    _finish(code, manifest, out)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--normalized", "normalized_path", default=None, type=click.Path(dir_okay=False),
              help="Also write the normalized config to this file.")
def validate(config, normalized_path):
    """Check CONFIG, echo it in internal units (rad/ns, ns) and estimate problem sizes."""
    cfg, _ = _load(config)
    try:
        sizes = problem_sizes(cfg)
    except (M.ModelError, ValueError) as exc:
        _report_error(EXIT_CONFIG, "config", str(exc), cfg.scenario)
    report = {"input": cfg.source, "normalized": cfg.normalized(), "sizes": sizes, "config_digest": cfg.digest()}
    click.echo(yaml.safe_dump(_json_safe(report), sort_keys=False, allow_unicode=True), nl=False)
    if normalized_path:
        Path(normalized_path).write_text(dump_normalized(cfg), encoding="utf-8")


def _finish(code: int, manifest: dict, out: Path):
    if code:
        err = manifest.get("error", {})
        _report_error(code, err.get("kind", "error"), err.get("message", ""), err.get("key"))
    files = ", ".join(o["file"] for o in manifest["outputs"])
    click.echo(f"{manifest['scenario']}: wrote {files} to {out}")


if __name__ == "__main__":  # pragma: no cover
    main()
