"""Command-line front end: ``ivnn simulate | pretrain | sweep | plot``.

Every command writes ``config.resolved.yaml`` into its output directory so the
directory can be regenerated from the snapshot alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis as an
from . import plots
from .config import ExperimentConfig
from .errors import (ConfigError, EmptyResults, LinearSolveFailure, NoConvergence, NotConverged,
                     SingularCrossMatrix, SingularNormalMatrix)
from .nn import load_params, save_params, unflatten
from .plant import generate_disturbance, simulate_closed_loop
from .train import IV, LS, pretrain_noiseless

log = logging.getLogger("ivnn")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
SNAPSHOT = "config.resolved.yaml"
PHI0_FILE = "phi0.json"
RESULTS_FILE = "results.csv"
CELL_DIR = "cells"


class CliError(Exception):
    """Validation problem detected by the front end itself."""


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "workers", None) is not None:
        cfg.sweep.workers = args.workers
    cfg.validate()
    return cfg


def _prepare_out(cfg, args) -> Path:
    out = cfg.resolve_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(cfg, out: Path, extra: dict | None = None):
    doc = cfg.to_dict()
    if extra:
        doc["run"] = extra
    (out / SNAPSHOT).write_text(yaml.safe_dump(doc, sort_keys=False))


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    sigma = 0.0 if args.sigma is None else args.sigma
    seed = cfg.master_seed if args.seed is None else args.seed
    if sigma < 0:
        raise CliError("--sigma must be >= 0")
    out = _prepare_out(cfg, args)
    r = cfg.make_reference()
    d = generate_disturbance(cfg.make_noise_filter(), sigma, seed, len(r), r.ts)
    ds = simulate_closed_loop(cfg.make_plant(), cfg.make_controller(), r, d, sigma_nu=sigma, seed=seed)
    ds.to_csv(out / "dataset.csv")
    _write_snapshot(cfg, out, {"command": "simulate", "sigma_nu": sigma, "seed": seed})
    print(f"wrote {out / 'dataset.csv'} ({ds.n} samples, max plant residual {ds.max_residual:.2e})")
    return EXIT_OK


# -- pretrain ---------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg.pretrain.seed = args.seed
    out = _prepare_out(cfg, args)
    _write_snapshot(cfg, out, {"command": "pretrain"})
    r = cfg.make_reference()
    res = pretrain_noiseless(cfg.make_shape(r), cfg.make_plant(), cfg.make_controller(), r,
                             cfg.pretrain_options(), cfg.pretrain.seed, strict=False,
                             polish_lambda_min=cfg.pretrain.polish_lambda_min,
                             polish_iters=cfg.pretrain.polish_iters)
    rep = res.report
    u_rms = float(np.sqrt(np.mean(res.dataset.u.values ** 2)))
    summary = {
        "status": rep.status, "converged": rep.converged, "iterations": rep.iterations,
        "grad_norm": rep.grad_norm, "final_cost": rep.final_cost,
        "floor_rms": res.floor_rms, "floor_norm": res.floor_norm, "u0_rms": u_rms,
        "seed": cfg.pretrain.seed,
    }
    (out / "pretrain_report.json").write_text(json.dumps(summary, indent=1) + "\n")
    if not rep.converged:
        partial = out / "phi0.partial.json"
        save_params(res.phi0, partial, {"pretrain": summary})
        raise NotConverged(
            f"pretraining stopped ({rep.status}) after {rep.iterations} iterations, gradient norm "
            f"{rep.grad_norm:.3e}; partial parameters in {partial}", rep)
    save_params(res.phi0, out / PHI0_FILE, {"pretrain": summary})
    print(f"wrote {out / PHI0_FILE}: {rep.iterations} iterations, floor rms {res.floor_rms:.3e} "
          f"({100 * res.floor_rms / u_rms:.3g}% of rms u0)")
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

def _read_raw_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write_raw_rows(path: Path, rows: list[dict]):
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=an.RESULT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    tmp.replace(path)


def _row_key(row) -> tuple:
    return int(row["sigma_index"]), int(row["realization"]), row["criterion"]


def _ordered(rows: dict) -> list[dict]:
    # same order as analysis.consistency_sweep: by cell, LS before IV
    return [rows[k] for k in sorted(rows, key=lambda k: (k[0], k[1], k[2] != LS))]


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.sigma is not None:
        cfg.sweep.sigma_levels = [float(args.sigma)]
    out = _prepare_out(cfg, args)
    phi0_path = Path(args.phi0) if args.phi0 else out / PHI0_FILE
    if not phi0_path.exists():
        raise CliError(f"parameter file not found: {phi0_path} (run 'ivnn pretrain' first or pass --phi0)")
    phi0 = load_params(phi0_path)

    snap = out / SNAPSHOT
    run_info = {"command": "sweep", "phi0": str(phi0_path.resolve())}
    results_path = out / RESULTS_FILE
    existing = _read_raw_rows(results_path)
    if existing and snap.exists():
        old = yaml.safe_load(snap.read_text()) or {}
        old.pop("run", None)
        new = cfg.to_dict()
        # the worker count does not influence any number
        old.get("sweep", {}).pop("workers", None)
        new["sweep"].pop("workers", None)
        if old != new:
            raise CliError(f"{out} holds results of a different configuration; use another --out")
    _write_snapshot(cfg, out, run_info)

    r = cfg.make_reference()
    sweep_cfg = an.SweepConfig(
        plant=cfg.make_plant(), controller=cfg.make_controller(), noise_filter=cfg.make_noise_filter(),
        reference=r, phi0=phi0, sigma_levels=tuple(cfg.sweep.sigma_levels),
        realizations=cfg.sweep.realizations, master_seed=cfg.master_seed,
        optimizer=cfg.optimizer_options(), workers=cfg.sweep.workers,
    )
    rows = {_row_key(row): row for row in existing}
    done = {k[:2] for k in rows if (k[0], k[1], LS) in rows and (k[0], k[1], IV) in rows}
    todo = [c for c in an.sweep_cells(sweep_cfg) if c.key not in done]
    cell_dir = out / CELL_DIR
    cell_dir.mkdir(exist_ok=True)
    print(f"{len(done)} cells already present, {len(todo)} to run")

    def collect(cell, results):
        for res in results:
            stem = f"s{cell.sigma_index:03d}_r{cell.realization:03d}_{res.criterion}"
            if res.phi_hat is not None:
                save_params(unflatten(res.phi_hat, phi0.shape), cell_dir / f"{stem}.json",
                            {"cell": res.row(), "report": res.report.to_dict()})
            row = {k: str(v) for k, v in res.row().items()}
            rows[_row_key(row)] = row
        # results file is rewritten after every cell so an interrupted sweep resumes cleanly
        _write_raw_rows(results_path, _ordered(rows))
        print(f"cell sigma={cell.sigma_nu:g} realization={cell.realization}: "
              + ", ".join(f"{x.criterion} {x.status_text()}" for x in results), flush=True)

    if todo:
        an.consistency_sweep(sweep_cfg, todo, on_cell=collect)
    else:
        _write_raw_rows(results_path, _ordered(rows))
    failed = sum(1 for row in rows.values() if row["error"])
    print(f"wrote {results_path} ({len(rows)} rows, {failed} failed)")
    return EXIT_OK


# -- plot -------------------------------------------------------------------

def cmd_plot(args) -> int:
    results_path = Path(args.results)
    if not results_path.exists():
        raise CliError(f"results file not found: {results_path}")
    rows = an.read_results_csv(results_path)
    if not rows:
        raise EmptyResults(f"{results_path} contains no result rows")
    run_dir = results_path.parent
    target = Path(args.out) if args.out else run_dir / f"{args.kind}.svg"
    if target.suffix != ".svg":
        target = target / f"{args.kind}.svg"

    if args.kind == "fig4":
        ref = None
        phi0_path = Path(args.phi0) if args.phi0 else run_dir / PHI0_FILE
        if phi0_path.exists():
            phi0 = load_params(phi0_path)
            ref = float(phi0.flatten()[phi0.shape.weight_index(*an.MONITORED_WEIGHT)])
        plots.plot_coefficients(rows, target, ref)
    elif args.kind == "fig5":
        plots.plot_residual_norms(rows, target)
    else:
        snap = run_dir / SNAPSHOT
        if not snap.exists():
            raise CliError(f"{snap} missing; fig6 needs the run's resolved configuration")
        doc = yaml.safe_load(snap.read_text())
        doc.pop("run", None)
        cfg = ExperimentConfig.from_dict(doc)
        levels = sorted({row["sigma_nu"] for row in rows})
        want = 0.005 if args.sigma is None else args.sigma
        sigma = min(levels, key=lambda s: (abs(s - want), s))
        real = an.median_realization(rows, sigma, LS)
        sidx = next(row["sigma_index"] for row in rows if row["sigma_nu"] == sigma)
        r = cfg.make_reference()
        ds0 = simulate_closed_loop(cfg.make_plant(), cfg.make_controller(), r,
                                   generate_disturbance(cfg.make_noise_filter(), 0.0, 0, len(r), r.ts))
        traces = {}
        for crit in (LS, IV):
            path = run_dir / CELL_DIR / f"s{sidx:03d}_r{real:03d}_{crit}.json"
            if path.exists():
                traces[crit] = an.residual_trace(load_params(path), ds0)[0].values
        plots.plot_traces(traces, target, ts=r.ts, title=f"median LS realization {real} at sigma = {sigma:g}")
    print(f"wrote {target}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivnn", description="Closed-loop feedforward identification experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="YAML experiment file (defaults if omitted)")
        p.add_argument("--out", metavar="DIR", help="output directory (relative paths sit under $IVNN_OUTPUT_ROOT)")

    p = sub.add_parser("simulate", help="run one closed-loop experiment and write the dataset")
    common(p)
    p.add_argument("--sigma", type=float, help="noise standard deviation (default 0)")
    p.add_argument("--seed", type=int, help="noise seed (default: master_seed)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pretrain", help="fit phi0 on the noiseless closed-loop data")
    common(p)
    p.add_argument("--seed", type=int, help="initialization seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("sweep", help="Monte-Carlo LS vs IV sweep over noise levels")
    common(p)
    p.add_argument("--phi0", metavar="PATH", help="pretrained parameters (default: <out>/phi0.json)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--sigma", type=float, help="run a single noise level instead of the configured grid")
    p.add_argument("--workers", type=int, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render sweep results to SVG")
    p.add_argument("--results", metavar="PATH", required=True, help="results CSV written by 'sweep'")
    p.add_argument("--kind", choices=("fig4", "fig5", "fig6"), required=True)
    p.add_argument("--out", metavar="PATH", help="SVG file or directory (default: next to the results)")
    p.add_argument("--phi0", metavar="PATH", help="parameters for the reference line of fig4")
    p.add_argument("--sigma", type=float, help="noise level of the fig6 traces (default 0.005)")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NotConverged, NoConvergence, LinearSolveFailure, SingularNormalMatrix, SingularCrossMatrix) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CliError, EmptyResults, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
