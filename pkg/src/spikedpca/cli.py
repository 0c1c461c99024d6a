"""Command-line front end.

Subcommands: ``simulate``, ``population``, ``sweep``, ``check``, ``report``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 missing inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ConditionParams, check_condition1, check_condition2
from .config import load_config, sweep_config, trial_config, tree_hash
from .errors import BlowUpError, BudgetError, ConfigError, DimensionError, NumericalError, SingularMatrixError
from .harness import (
    _render,
    csv_columns,
    dumps17,
    estimate_flops,
    fmt_float,
    provenance_line,
    read_results,
    run_sweep,
    run_trial,
    summarize_rows,
    _row,
    write_trajectory_json,
)
from .manifold import Scale, StiefelPoint, correlation_matrix, sample_invariant
from .model import make_model
from .population import PopulationModel, eigen_track, integrate_corr

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4

log = logging.getLogger("spikedpca")


class MissingInputError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, flush=True)


def _tree(args, required: bool = True) -> dict:
    if args.config is None and required:
        raise ConfigError("--config is required for this subcommand")
    tree = load_config(args.config, args.override)
    if args.seed is not None:
        tree["dynamics"]["seed"] = args.seed
        tree["sweep"]["master_seed"] = args.seed
    return tree


def _provenance(h: str) -> dict:
    return {"config_hash": h, "version": __version__}


def cmd_simulate(args) -> int:
    tree = _tree(args)
    cfg = trial_config(tree)
    h = tree_hash(tree)
    seed = int(tree["dynamics"]["seed"])
    rec = run_trial(cfg, seed, keep_trajectory=True, deterministic=args.deterministic)
    out = _out_dir(args)
    summary_only = cfg.dynamics == "sgd" and cfg.steps == 0
    if tree["output"]["trajectory"] and not summary_only:
        write_trajectory_json(out / "trajectory.json", rec.trajectory, {**_provenance(h), "seed": seed})
    row = _row(0, float("nan"), cfg, seed, rec)
    (out / "summary.csv").write_text(provenance_line(h) + "\n" + _render([csv_columns(cfg.r), row]), encoding="utf-8")
    (out / "record.json").write_text(dumps17({**rec.to_json_dict(), **_provenance(h)}) + "\n", encoding="utf-8")
    sigma = None if rec.permutation is None else [s + 1 for s in rec.permutation]
    _say(args, f"exact recovery: {str(rec.exact_recovery).lower()}")
    _say(args, f"permutation recovery: {sigma if sigma else 'none'}")
    _say(args, f"sequential elimination: {str(rec.elimination.satisfied).lower()}")
    return EXIT_OK


def cmd_population(args) -> int:
    tree = _tree(args)
    cfg = trial_config(tree)
    h = tree_hash(tree)
    if cfg.M0 is not None:
        M0 = np.array(cfg.M0)
    else:
        rng = np.random.default_rng([int(tree["dynamics"]["seed"]), 0])
        model = make_model(cfg.N, cfg.r, cfg.p, cfg.lambdas, rng)
        M0 = correlation_matrix(model.V, sample_invariant(cfg.N, cfg.r, Scale.UNIT, rng)).data
    every = cfg.record_every or 1
    traj = integrate_corr(M0, PopulationModel(cfg.lambdas, cfg.p), cfg.T, cfg.dt, record_every=every)
    r = cfg.r
    tracks = eigen_track([M.T @ M for M in traj.corr])
    header = ["t"] + [f"m_{i + 1}{j + 1}" for i in range(r) for j in range(r)] + [f"theta_{k + 1}" for k in range(r)]
    rows = [header]
    for t, M, th in zip(traj.times, traj.corr, tracks):
        rows.append([fmt_float(t)] + [fmt_float(x) for x in M.ravel()] + [fmt_float(x) for x in th])
    out = _out_dir(args)
    (out / "population.csv").write_text(provenance_line(h) + "\n" + _render(rows), encoding="utf-8")
    meta = {**_provenance(h), **traj.meta, "events": traj.events, "rows": len(rows) - 1}
    (out / "population.meta.json").write_text(dumps17(meta) + "\n", encoding="utf-8")
    if traj.meta.get("truncated"):
        _say(args, f"blow-up: integration truncated at t = {traj.times[-1]}")
    _say(args, f"wrote {len(rows) - 1} rows to {out / 'population.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    tree = _tree(args)
    sweep = sweep_config(tree)
    flops = estimate_flops(sweep)
    if args.dry_run:
        n = len(sweep.cells()) * sweep.trials
        _say(args, f"cells: {len(sweep.cells())}, trials: {n}, estimated FLOPs: {flops:.3e}")
        return EXIT_OK
    out = _out_dir(args)

    def progress(cid, seed):
        if not args.quiet:
            print(f"cell {cid} seed {seed} done", file=sys.stderr, flush=True)

    summary = run_sweep(sweep, out / "sweep.csv", deterministic=args.deterministic, force=args.force,
                        progress=progress)
    h = sweep.config_hash()
    payload = {**_provenance(h), "cells": summary.table(), "threshold": summary.threshold}
    (out / "threshold.json").write_text(dumps17(payload) + "\n", encoding="utf-8")
    _say(args, _markdown(summary))
    return EXIT_OK


def _load_init(path: str, N: int, r: int) -> StiefelPoint:
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"init file {p} not found")
    X = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, delimiter=",", ndmin=2)
    if X.shape != (N, r):
        raise ConfigError(f"init file holds a {X.shape} matrix, expected {(N, r)}")
    return StiefelPoint.checked(X, Scale.UNIT, tol=1e-8)


def cmd_check(args) -> int:
    tree = _tree(args)
    cfg = trial_config(tree)
    c = tree["conditions"]
    h = tree_hash(tree)
    params = ConditionParams(cfg.gamma0, cfg.gamma1, cfg.gamma2, cfg.gamma)
    rng = np.random.default_rng([int(tree["dynamics"]["seed"]), 0])
    model = make_model(cfg.N, cfg.r, cfg.p, cfg.lambdas, rng)
    if c["init_file"]:
        inits = [_load_init(c["init_file"], cfg.N, cfg.r)]
    else:
        inits = [sample_invariant(cfg.N, cfg.r, Scale.UNIT, rng) for _ in range(int(c["samples"]))]
    rows = [["sample", "condition1", "condition1_abs", "condition2", "max_abs_sqrtN_m"]]
    n1 = n1a = n2 = 0
    for k, X in enumerate(inits):
        r1 = check_condition1(X, model.V, params)
        r1a = check_condition1(X, model.V, params, absolute=True)
        c2 = check_condition2(X, model.V, cfg.lambdas, cfg.p, params).ok if cfg.p >= 3 else None
        n1 += r1.ok
        n1a += r1a.ok
        n2 += bool(c2)
        rows.append([str(k), str(int(r1.ok)), str(int(r1a.ok)), "" if c2 is None else str(int(c2)),
                     fmt_float(r1.statistic)])
    out = _out_dir(args)
    (out / "check.csv").write_text(provenance_line(h) + "\n" + _render(rows), encoding="utf-8")
    n = len(inits)
    _say(args, f"condition 1 pass rate: {n1}/{n} = {n1 / n:.3f}")
    _say(args, f"condition 1 (absolute) pass rate: {n1a}/{n} = {n1a / n:.3f}")
    if cfg.p >= 3:
        _say(args, f"condition 2 pass rate: {n2}/{n} = {n2 / n:.3f}")
    return EXIT_OK


def _markdown(summary) -> str:
    lines = ["| cell | N | budget | steps | trials | successes | fraction | 95% CI | errors |",
             "|---:|---:|---:|---:|---:|---:|---:|---|---:|"]
    for c in summary.cells:
        lines.append(f"| {c.cell_id} | {c.N} | {c.budget_value:g} | {c.steps} | {c.trials} | {c.successes} | "
                     f"{c.fraction:.3f} | [{c.ci_low:.3f}, {c.ci_high:.3f}] | {c.errors} |")
    return "\n".join(lines)


def cmd_report(args) -> int:
    out = Path(args.out)
    files = sorted(out.glob("**/sweep.csv")) if out.is_dir() else []
    sections = []
    for f in files:
        prov, header, rows = read_results(f)
        if not rows:
            continue
        summary = summarize_rows(header, rows)
        rel = f.relative_to(out).as_posix()
        sections.append(f"## {rel}\n\n{prov or ''}\n\n{_markdown(summary)}\n")
    if not sections:
        raise MissingInputError(f"no result rows under {out}")
    text = f"<!-- spikedpca {__version__} -->\n# Sweep report\n\n" + "\n".join(sections)
    (out / "report.md").write_text(text, encoding="utf-8")
    if not args.quiet:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "population": cmd_population,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, metavar="U64", help="seed (trial seed and sweep master seed)")
    common.add_argument("--override", action="append", default=[], metavar="K=V",
                        help="dotted section.key=value override, repeatable")
    common.add_argument("--deterministic", action="store_true", help="write wall_seconds as 0")
    common.add_argument("--dry-run", action="store_true", help="sweep: print the FLOP estimate and exit")
    common.add_argument("--force", action="store_true", help="sweep: overwrite results from another config")
    common.add_argument("--quiet", action="store_true", help="suppress progress and summaries")
    parser = argparse.ArgumentParser(prog="spikedpca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"spikedpca {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BudgetError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, BlowUpError, SingularMatrixError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
