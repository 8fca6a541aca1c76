"""Batch driver: ``inclusion-probe {forward,probe,inside-dtn,kernels-check} CONFIG``.

Every output is a plain CSV or JSON file; the run manifest lists their
SHA-256 digests.  Wall-clock timings go to stderr only so that a fixed
(config, seed) pair reproduces the output directory byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .elastic import run_suite, suite_report
from .fem import GapOracle, assemble_dtn, write_matrix_csv
from .geometry import Mesh2D, build_domain_mesh, impact_parameter_oracle, needle_family, write_mesh
from .inside_dtn import (
    InsideDtnPipeline,
    comparison_report,
    dtn_inside_direct,
    g_operator_direct,
    operator_identity_residual,
    relative_error,
)
from .probe import (
    ProbeSettings,
    Prober,
    TraceUnusable,
    one_sided_distance,
    oracle_distances,
    reconstruct_boundary,
)
from .runge import DEFAULT_SCHEDULE
from .scenario import ConfigError, ConductivityScenario, load_config, require_sections, scenario_from_config

COMMAND_SECTIONS = {
    "forward": ["domain", "gamma0", "mesh"],
    "probe": ["domain", "gamma0", "mesh", "needles", "probe"],
    "inside-dtn": ["domain", "gamma0", "mesh", "inclusion", "gamma_inside", "inside_dtn"],
    "kernels-check": ["kernels"],
}


@dataclass
class RunConfig:
    """Parsed config plus command-line mode flags."""

    command: str
    config: dict
    out: Path
    seed: int = 0
    jobs: int = 1
    validation: bool = False
    exact_interior: bool = False
    written: list[Path] = field(default_factory=list)

    def __post_init__(self):
        if self.command not in COMMAND_SECTIONS:
            raise ConfigError(f"unknown command {self.command!r}")
        require_sections(self.config, COMMAND_SECTIONS[self.command])
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p


# ----------------------------------------------------------------------------
# shared plumbing


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(x):
    """Floats that JSON can hold (inf/nan become strings)."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_manifest(rc: RunConfig, extra: dict) -> Path:
    files = {str(p.relative_to(rc.out)): _sha256(p) for p in sorted(set(rc.written))}
    manifest = {
        "command": rc.command,
        "seed": rc.seed,
        "validation": rc.validation,
        "exact_interior": rc.exact_interior,
        "version": __version__,
        "files": files,
        **extra,
    }
    p = rc.out / "manifest.json"
    _write_json(p, _jsonable(manifest))
    return p


def _schedule(cfg: dict, section: str) -> tuple:
    sec = cfg.get(section, {})
    if "schedule" in sec:
        return tuple(float(v) for v in sec["schedule"])
    if "schedule" in cfg.get("runge", {}):
        return tuple(float(v) for v in cfg["runge"]["schedule"])
    return DEFAULT_SCHEDULE


def build_mesh(cfg: dict, scenario: ConductivityScenario, h: float | None = None) -> Mesh2D:
    m = cfg["mesh"]
    if "h" not in m:
        raise ConfigError("missing required key h in section [mesh]")
    arc = m.get("gamma_arc")
    return build_domain_mesh(
        scenario.domain,
        float(h if h is not None else m["h"]),
        gamma_arc=None if arc is None else (float(arc[0]), float(arc[1])),
        interface=scenario.inclusion if m.get("conform_inclusion", True) else None,
    )


def _mesh_stats(mesh: Mesh2D) -> dict:
    return {
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_cells,
        "boundary_nodes": int(len(mesh.boundary_nodes)),
        "gamma_nodes": int(len(mesh.gamma_nodes)),
        "h": mesh.h,
        "max_edge": float(mesh.edge_lengths().max()),
        "min_angle_deg": mesh.min_angle_deg(),
    }


def _oracle(rc: RunConfig, mesh: Mesh2D, scenario: ConductivityScenario, audit: Path | None) -> GapOracle:
    oc = rc.config.get("oracle", {})
    if audit is not None:
        audit.write_text("")
    return GapOracle.from_scenario(
        mesh, scenario, noise=float(oc.get("noise", 0.0)), seed=rc.seed, audit_path=audit
    )


def _sort_audit(path: Path) -> None:
    # threads interleave queries; sorted lines keep the log reproducible
    lines = path.read_text().splitlines()
    path.write_text("".join(line + "\n" for line in sorted(lines)))


# ----------------------------------------------------------------------------
# commands


def cmd_forward(rc: RunConfig) -> dict:
    """Discrete DtN maps for γ and γ₀, the gap matrix and an oracle audit on the Γ hats."""
    cfg = rc.config
    scenario = scenario_from_config(cfg)
    mesh = build_mesh(cfg, scenario)
    write_mesh(mesh, rc.path("mesh.txt"))
    dtn = assemble_dtn(mesh, scenario)
    dtn0 = dtn if scenario.is_null else assemble_dtn(mesh, scenario.gamma0)
    header = [str(int(n)) for n in mesh.boundary_nodes]
    write_matrix_csv(rc.path("dtn_gamma.csv"), dtn.L, header)
    write_matrix_csv(rc.path("dtn_gamma0.csv"), dtn0.L, header)
    gap = dtn.L - dtn0.L
    write_matrix_csv(rc.path("gap.csv"), gap, header)
    audit = rc.path("oracle_audit.csv")
    oracle = _oracle(rc, mesh, scenario, audit)
    on_gamma = np.flatnonzero(oracle.gamma_mask)
    for i in on_gamma:
        e = np.zeros(len(mesh.boundary_nodes))
        e[i] = 1.0
        oracle.quadratic(e)
    _sort_audit(audit)
    gap_norm = float(np.abs(gap).max())
    summary = {
        "mesh": _mesh_stats(mesh),
        "null_experiment": bool(scenario.is_null or gap_norm <= 1e-12 * oracle.scale),
        "dtn_symmetry_residual": dtn.asymmetry(),
        "dtn0_symmetry_residual": dtn0.asymmetry(),
        "dtn_constant_residual": dtn.constant_residual(),
        "gap_max_abs": gap_norm,
        "oracle_queries": oracle.n_queries,
    }
    return summary


def cmd_probe(rc: RunConfig) -> dict:
    """Indicator scans along every needle, the boundary point cloud and a summary."""
    cfg = rc.config
    scenario = scenario_from_config(cfg)
    mesh = build_mesh(cfg, scenario)
    try:
        needles = needle_family(scenario.domain, cfg["needles"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"section [needles]: {e}") from e
    pc = dict(cfg["probe"])
    pc.setdefault("schedule", list(_schedule(cfg, "probe")))
    try:
        settings = ProbeSettings.from_config(pc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section [probe]: {e}") from e
    audit = rc.path("oracle_audit.csv")
    oracle = _oracle(rc, mesh, scenario, audit)
    prober = Prober(mesh, scenario.gamma0, oracle, settings)
    t0 = time.perf_counter()
    results = prober.scan_all(needles, jobs=rc.jobs)
    _log(f"probe: {len(needles)} needles scanned in {time.perf_counter() - t0:.1f}s")
    _sort_audit(audit)

    per_needle, estimates = [], []
    for (trace, est), nd in zip(results, needles):
        if rc.validation:
            trace.oracle_distance = oracle_distances(nd, trace.t, scenario.inclusion)
        cols = ["t", "n", "gap", "runge_error", "accepted"] + (["oracle_distance"] if rc.validation else [])
        _write_rows(rc.path(f"traces/needle_{trace.needle_id:03d}.csv"), trace.rows(), cols)
        entry = {
            "needle_id": trace.needle_id,
            "name": nd.name,
            "length": nd.length,
            "t_hat": est.t_hat,
            "tau": est.tau,
            "slope": est.slope,
            "samples": len(trace.samples),
            "accepted": int(trace.accepted.sum()),
            "notes": est.notes,
        }
        if rc.validation:
            t_true = impact_parameter_oracle(nd, scenario.inclusion)
            entry["t_true"] = t_true
            entry["arclength_error"] = (est.t_hat - t_true) * nd.length
        per_needle.append(entry)
        estimates.append(est)
    cloud = reconstruct_boundary(estimates, needles, truth=scenario.inclusion if rc.validation else None)
    _write_json(rc.path("cloud.json"), cloud.to_json())
    summary = {
        "mesh": _mesh_stats(mesh),
        "settings": {k: getattr(settings, k) for k in settings.__dataclass_fields__},
        "needles": per_needle,
        "cloud_size": int(len(cloud.points)),
        "oracle_queries": oracle.n_queries,
    }
    if rc.validation and scenario.inclusion is not None:
        summary["hausdorff_one_sided"] = one_sided_distance(cloud, scenario.inclusion)
        summary["hausdorff_symmetric"] = cloud.hausdorff
        summary["hausdorff_tolerance"] = 3 * mesh.h
    _write_json(rc.path("summary.json"), _jsonable(summary))
    return {"mesh": _mesh_stats(mesh), "cloud_size": summary["cloud_size"]}


def cmd_inside_dtn(rc: RunConfig) -> dict:
    """Recover Λ⁻ on ∂D from exact interior fields or from Runge-approximated gap queries."""
    cfg = rc.config
    sec = cfg["inside_dtn"]
    scenario = scenario_from_config(cfg)
    if scenario.inclusion is None:
        raise ConfigError("section [inclusion] must describe an inclusion for inside-dtn")
    mesh = build_mesh(cfg, scenario, sec.get("h"))
    ring = tuple(float(v) for v in sec.get("ring", (2.0, 4.0)))
    cond_cap = float(sec.get("cond_cap", 1e10))
    pipe = InsideDtnPipeline(mesh, scenario.gamma0, scenario.inclusion, ring=ring)
    header = pipe.split.node_coordinates()
    validation = rc.validation or rc.exact_interior
    Lm_direct = G_direct = None
    if validation:
        Lm_direct = dtn_inside_direct(mesh, scenario.gamma_inside, scenario.inclusion, pipe.split)
        G_direct = g_operator_direct(mesh, scenario, pipe.split)
    t0 = time.perf_counter()
    if rc.exact_interior:
        rec = pipe.exact_interior(scenario, cond_cap)
        trail = None
    else:
        oracle = _oracle(rc, mesh, scenario, None)
        ops, rm = pipe.full_runge(oracle, schedule=_schedule(cfg, "inside_dtn"), cond_cap=cond_cap)
        rec = ops[-1]
        trail = []
        for k, op in enumerate(ops):
            row = {
                "stage": k,
                "rho": float(rm.rhos[k]),
                "runge_max_relative_error": float(rm.max_relative_error[k]),
                "condition": op.condition,
                "tikhonov": op.tikhonov,
            }
            if validation:
                row["lambda_minus_relative_error"] = relative_error(op.lambda_minus_hat, Lm_direct)
                row["g_relative_error"] = relative_error(op.G_hat, G_direct)
            trail.append(row)
    _log(f"inside-dtn: recovery in {time.perf_counter() - t0:.1f}s")
    write_matrix_csv(rc.path("lambda_minus.csv"), rec.lambda_minus_hat, header)
    write_matrix_csv(rc.path("lambda_plus.csv"), rec.lambda_plus, header)
    write_matrix_csv(rc.path("g_operator.csv"), rec.G_hat, header)
    report = comparison_report(rec, Lm_direct, G_direct)
    report["mode"] = "exact_interior" if rc.exact_interior else "full_runge"
    report["n_anchors"] = int(len(pipe.anchors))
    if validation:
        report["identity_residual_direct"] = operator_identity_residual(Lm_direct, rec.lambda_plus, G_direct)
    if trail is not None:
        cols = list(trail[0].keys())
        _write_rows(rc.path("trail.csv"), trail, cols)
        report["trail"] = trail
        if validation:
            errs = [r["lambda_minus_relative_error"] for r in trail]
            report["trail_monotone"] = bool(all(b <= a + 1e-12 for a, b in zip(errs, errs[1:])))
    _write_json(rc.path("comparison.json"), _jsonable(report))
    return {"mesh": _mesh_stats(mesh), "interface_nodes": int(len(pipe.split.interface))}


def cmd_kernels(rc: RunConfig) -> dict:
    """Randomised elastic kernel suite; the report fails if any identity fails."""
    sec = rc.config["kernels"]
    entries = run_suite(
        seed=rc.seed,
        n_draws=int(sec.get("n_draws", 10_000)),
        inject_failure=bool(sec.get("inject_failure", False)),
    )
    report = suite_report(entries, rc.seed)
    _write_json(rc.path("report.json"), _jsonable(report))
    return {"passed": report["passed"]}


COMMANDS = {
    "forward": cmd_forward,
    "probe": cmd_probe,
    "inside-dtn": cmd_inside_dtn,
    "kernels-check": cmd_kernels,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inclusion-probe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="TOML scenario file")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--jobs", type=int, default=1, help="worker threads for needle scans")
        s.add_argument("--validation", action="store_true", help="write ground-truth comparisons")
        s.add_argument("--exact-interior", action="store_true", help="inside-dtn from exact interior fields")
        s.add_argument("--inject-failure", action="store_true", help="kernels-check: perturb one identity")
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.inject_failure:
            cfg.setdefault("kernels", {})["inject_failure"] = True
        rc = RunConfig(
            command=args.command,
            config=cfg,
            out=Path(args.out),
            seed=args.seed,
            jobs=args.jobs,
            validation=args.validation,
            exact_interior=args.exact_interior,
        )
    except ConfigError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    rc.out.mkdir(parents=True, exist_ok=True)
    try:
        extra = COMMANDS[args.command](rc)
    except ConfigError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except TraceUnusable as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _write_manifest(rc, extra)
    if args.command == "kernels-check" and not extra["passed"]:
        return 1
    return 0


def main() -> None:
    sys.exit(run())


__all__ = ["RunConfig", "build_parser", "build_mesh", "cmd_forward", "cmd_inside_dtn", "cmd_kernels", "cmd_probe", "main", "run"]
