"""Command-line front end: ``eitsize solve|sweep|lines|report|freq``.

Exit codes: 0 success, 2 configuration or input error, 3 solver failure.
Set ``EIT_LOG`` (DEBUG, INFO, ...) to control log output on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import bounds
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import SweepAborted, generate_inclusions, run_sweep, sweep_summary
from .forward import ForwardModel, NeumannSpec, SolveRecord
from .linsolve import SolverError
from .records import format_float, read_csv, records_to_csv, records_to_dat

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("eitsize")


def _dump(obj, out=None):
    out = out or sys.stdout
    json.dump(obj, out, indent=2, allow_nan=True)
    out.write("\n")


def _line_for(cfg: ExperimentConfig, k: float):
    """Theoretical line matching a config's scenario, or None if there is none."""
    exc = cfg.excitation
    if cfg.model == "cem":
        if exc.test != "T1":
            return None
        return bounds.theoretical_line_cem_uniform(k, cfg.mesh.side_l, exc.zeta * cfg.mesh.side_l)
    if exc.test == "cosine":
        if exc.n in (1, 2) and exc.sign == "opposite":
            return bounds.theoretical_line_cosine(k, exc.n)
        return None if exc.n else bounds.theoretical_line_uniform(k)
    return bounds.theoretical_line_uniform(k)


# -- commands -----------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    mesh = cfg.build_mesh()
    excitation = cfg.build_excitation(mesh)
    model = ForwardModel(mesh, excitation)
    seed = args.seed if args.seed is not None else 0
    if cfg.inclusion is None:
        W0 = model.W0
        rec = SolveRecord(excitation.test_id, model.model, mesh.dim, mesh.n_e, 1.0, -1, -1, 0,
                          0.0, W0, W0, 0.0, seed, "ok", mesh.key, "", excitation.descriptor)
    else:
        inclusion = cfg.build_inclusion(mesh)
        if inclusion.n_elements == 0:
            raise ConfigError("inclusion: no elements given")
        rec = model.run_pair(inclusion, seed)
    _dump(rec.to_dict())
    return EXIT_OK


def _progress(done, total):
    if done == total or done % max(1, total // 20) == 0:
        print(f"{done}/{total} solves", file=sys.stderr, flush=True)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    plan = cfg.build_plan(seed=args.seed)
    out = args.out or cfg.output.csv
    if out is None:
        raise ConfigError("no output path: pass --out or set output.csv")
    sets = generate_inclusions(plan)
    records = run_sweep(plan, workers=args.workers, sets=sets,
                        progress=None if args.quiet else _progress)
    text = records_to_csv(records)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    if cfg.output.dat:
        lines = [(ln.provenance, ln) for k in plan.k_values
                 if (ln := _line_for(cfg, k)) is not None]
        with open(cfg.output.dat, "w", encoding="utf-8") as fh:
            fh.write(records_to_dat(records, lines))
    if cfg.output.meta:
        with open(cfg.output.meta, "w", encoding="utf-8") as fh:
            _dump(sweep_summary(plan, sets), fh)
    failed = sum(r.status != "ok" for r in records)
    log.info("wrote %d records (%d failed) to %s", len(records), failed, out)
    return EXIT_OK


def lines_table(k: float, scenario: str, n: int = 1, zeta: float = 0.2, side_l: float = 1.0):
    if scenario == "uniform":
        line = bounds.theoretical_line_uniform(k)
    elif scenario == "cosine":
        line = bounds.theoretical_line_cosine(k, n)
    elif scenario == "cem":
        if not zeta > 0:
            raise ConfigError("zeta must be positive")
        line = bounds.theoretical_line_cem_uniform(k, side_l, zeta * side_l)
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    return {"scenario": scenario, "k": k, "lower_coef": line.lower_coef,
            "upper_coef": line.upper_coef, "exponent": line.exponent,
            "provenance": line.provenance}


def cmd_lines(args) -> int:
    ks = args.k
    for k in ks:
        if not k > 0 or k == 1:
            raise ConfigError(f"k must be positive and != 1, got {k}")
    rows = [lines_table(k, args.scenario, args.n, args.zeta, args.side_l) for k in ks]
    if args.json:
        _dump(rows)
        return EXIT_OK
    print(f"{'k':>10} {'lower':>24} {'upper':>24}  scenario")
    for r in rows:
        print(f"{r['k']!r:>10} {format_float(r['lower_coef']):>24} "
              f"{format_float(r['upper_coef']):>24}  {r['provenance']}")
    return EXIT_OK


def report(records, k=None):
    """Empirical constants and a power-law fit for the ok records of one regime."""
    records = [r for r in records if r.status == "ok"]
    if k is not None:
        records = [r for r in records if r.k == k]
    if not records:
        raise ConfigError("no usable records")
    emp = bounds.empirical_constants(records, k)
    line = emp.line()
    out = {"k": emp.k, "n_samples": emp.n_samples, "C1_emp": emp.C1_emp, "C2_emp": emp.C2_emp,
           "lower_coef": line.lower_coef, "upper_coef": line.upper_coef}
    try:
        C, e = bounds.powerlaw_fit(records)
        out.update(powerlaw_C=C, powerlaw_exponent=e)
    except ValueError as err:
        out.update(powerlaw_C=None, powerlaw_exponent=None, powerlaw_note=str(err))
    return out


def cmd_report(args) -> int:
    summaries = []
    for path in args.csv:
        try:
            records = read_csv(path)
        except (OSError, ValueError) as err:
            raise ConfigError(str(err)) from err
        try:
            summary = report(records, args.k)
        except bounds.RegimeMismatch as err:
            raise ConfigError(f"{path}: {err}; select one contrast with --k") from err
        summaries.append({"csv": str(path), **summary})
    _dump(summaries if len(summaries) > 1 else summaries[0])
    return EXIT_OK


def cmd_freq(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        mesh = cfg.build_mesh()
        spec = cfg.build_excitation(mesh)
        if not isinstance(spec, NeumannSpec):
            raise ConfigError("frequency is defined for Neumann current densities")
    else:
        from .forward import neumann_cosine
        from .mesh import build_mesh

        if args.n < 0 or args.n_e < 3:
            raise ConfigError("need n >= 0 and n_e >= 3")
        mesh = build_mesh(3, args.n_e)
        spec = neumann_cosine(3, args.n)
    F = bounds.frequency(mesh, spec)
    _dump({"excitation": spec.descriptor, "n_e": mesh.n_e, "F": F})
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eitsize", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="one paired solve, printed as JSON")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="run a sweep and write the records CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: available cores)")
    s.add_argument("--quiet", action="store_true", help="no progress on stderr")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("lines", help="theoretical bound coefficients")
    s.add_argument("--k", type=float, nargs="+", required=True)
    s.add_argument("--scenario", choices=("uniform", "cosine", "cem"), default="uniform")
    s.add_argument("--n", type=int, default=1, help="cosine frequency (1 or 2)")
    s.add_argument("--zeta", type=float, default=0.2)
    s.add_argument("--side-l", type=float, default=1.0)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_lines)

    s = sub.add_parser("report", help="empirical constants from records CSVs")
    s.add_argument("csv", nargs="+")
    s.add_argument("--k", type=float)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("freq", help="frequency F of a Neumann current density")
    s.add_argument("--config")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--n-e", type=int, default=12)
    s.set_defaults(func=cmd_freq)
    return p


def main(argv=None) -> int:
    level = os.environ.get("EIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SweepAborted) as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as err:
        # invalid values that pass the schema but not the numerics
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
