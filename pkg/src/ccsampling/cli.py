"""``ccs`` command line.

Every output carries the fully resolved configuration: JSON outputs under a
``config`` key, CSV outputs as a leading ``# config: {...}`` comment line.
Exit status is 0 on success, 2 on invalid input and 3 when replications
or table cells had to be skipped.
"""

from __future__ import annotations

import argparse
import io as _io
import json
import sys
from pathlib import Path

import numpy as np

from . import streams
from .bias import BiasInputs, closed_form_rb
from .designs import CrossSample, DesignError, DesignSpec, parse_design
from .estimation import ht_ratio, ht_total
from .exact import SizeGuardError, decompose, variance_ratio_sweep
from .io import PopulationFileError, read_manifest, read_population, write_manifest, write_population
from .montecarlo import (
    ExperimentSpec,
    ReplicationError,
    run_experiment,
    run_table,
    table1_matrix,
    table2_matrix,
    table_to_csv,
)
from .population import ConstantP, LogitP, ModelParams, PopulationGrid, generate_count_pair, generate_grid
from .varest import estimate_variances

EXIT_INVALID = 2
EXIT_SKIPPED = 3

# Maternity and day strata of the canned scenario, as (N_h, n_h).
SCENARIO_ROWS = ((108, 21), (108, 41), (109, 55), (108, 80), (111, 90))
SCENARIO_COLS = ((91, 4), (91, 6), (91, 7), (92, 8))


class UsageError(ValueError):
    pass


# -- output -------------------------------------------------------------------

def _config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "default_format")}


def _emit(args, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _emit_json(args, payload: dict) -> None:
    _emit(args, json.dumps({"config": _config(args), **payload}, indent=2, sort_keys=True) + "\n")


def _emit_rows(args, rows: list[dict], extra: dict | None = None) -> None:
    if args.format == "json":
        _emit_json(args, {**(extra or {}), "rows": rows})
        return
    buf = _io.StringIO()
    buf.write("# config: " + json.dumps({**_config(args), **(extra or {})}, sort_keys=True) + "\n")
    table_to_csv(rows, buf)
    _emit(args, buf.getvalue())


# -- inputs -------------------------------------------------------------------

def _load(path: str, name: str | None = None) -> PopulationGrid:
    if path.endswith(".json"):
        variables = read_manifest(path)
        if name is None:
            if len(variables) != 1:
                raise UsageError(f"{path} holds {sorted(variables)}; pick one with --var")
            return next(iter(variables.values()))
        if name not in variables:
            raise UsageError(f"{path} has no variable {name!r}")
        return variables[name]
    return read_population(path)


def _designs(args, grid: PopulationGrid) -> tuple[DesignSpec, DesignSpec]:
    base = Path(args.pop).parent
    dm = parse_design(args.dm, grid.n_rows, base_dir=base)
    dd = parse_design(args.dd, grid.n_cols, base_dir=base)
    return dm, dd


def _target_vars(args) -> tuple[PopulationGrid, PopulationGrid | None]:
    y = _load(args.pop, args.var)
    x = None
    if args.x is not None:
        x = _load(args.x, args.x_var)
    elif args.pop.endswith(".json") and args.target == "ratio" and args.x_var is not None:
        x = _load(args.pop, args.x_var)
    if args.target == "ratio" and x is None:
        raise UsageError("--target ratio needs a denominator variable (--x FILE or --x-var NAME)")
    return y, x


def _model_params(args, n_rows: int, n_cols: int) -> ModelParams:
    return ModelParams(args.mu, args.sigma_m, args.sigma_d, args.sigma_e, n_rows, n_cols, seed=args.seed)


# -- subcommands --------------------------------------------------------------

def cmd_gen_pop(args) -> int:
    if args.out in (None, "-"):
        raise UsageError("gen-pop needs --out PATH")
    params = _model_params(args, args.nm, args.nd)
    echo = "model(" + ",".join(f"{k}={v}" for k, v in params.to_dict().items()) + ")"
    if args.count_pair is None:
        write_population(args.out, generate_grid(params, label=echo))
        return 0
    mode = ConstantP(args.p) if args.count_pair == "constant" else LogitP(target=args.p)
    pair = generate_count_pair(params, mode)
    out = Path(args.out)
    stem = out.with_suffix("")
    thinning = f"thinning={args.count_pair},p={args.p}"
    if isinstance(pair.p_mode, LogitP):
        thinning += f",beta={pair.p_mode.beta!r}"
    xp = write_population(f"{stem}_x.csv", PopulationGrid(pair.x.values, f"x {echo} {thinning}"))
    yp = write_population(f"{stem}_y.csv", PopulationGrid(pair.y.values, f"y {echo} {thinning}"))
    write_manifest(out.with_suffix(".json"), {"x": xp.name, "y": yp.name})
    return 0


def cmd_estimate(args) -> int:
    y, x = _target_vars(args)
    dm, dd = _designs(args, y)
    rng = streams.generator(args.seed, streams.REPLICATION, 0)
    s = CrossSample(dm.draw(rng), dd.draw(rng))
    # reports use 1-based unit labels
    payload = {"sample": {"rows": (s.rows + 1).tolist(), "cols": (s.cols + 1).tolist()}}
    if args.target == "total":
        payload["t_hat"] = ht_total(y, dm, dd, s).t_hat
        values = y
    else:
        r = ht_ratio(y, x, dm, dd, s)
        payload.update(r_hat=r.r_hat, t_hat_y=r.t_hat_y, t_hat_x=r.t_hat_x)
        values = r.linearized
    payload["variances"] = estimate_variances(values, dm, dd, s).to_dict()
    if args.format == "csv":
        row = {k: v for k, v in payload.items() if k not in ("sample", "variances")}
        _emit_rows(args, [{**row, **payload["variances"]}])
        return 0
    _emit_json(args, payload)
    return 0


def cmd_exact_variance(args) -> int:
    y = _load(args.pop, args.var)
    dm, dd = _designs(args, y)
    rep = decompose(y, dm, dd, method=args.method)
    _emit_json(args, {**rep.to_dict(), "dm": dm.to_dict(), "dd": dd.to_dict()})
    return 0


def _sizes(text: str) -> list[tuple[int, int]]:
    """``5,10,100`` (all pairs) or ``5x5,10x100`` (explicit pairs)."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        if any("x" in p for p in parts):
            return [tuple(int(v) for v in p.split("x")) for p in parts]
        single = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"cannot read sizes {text!r}") from None
    return [(a, b) for a in single for b in single]


def cmd_compare_designs(args) -> int:
    y = _load(args.pop, args.var)
    rows = variance_ratio_sweep(y, _sizes(args.sizes))
    _emit_rows(args, rows)
    return 0


def _check_skipped(skipped: int, args) -> int:
    if skipped > args.max_skipped:
        print(f"error: {skipped} replication(s) skipped (tolerance {args.max_skipped})", file=sys.stderr)
        return EXIT_SKIPPED
    return 0


def cmd_simulate(args) -> int:
    if args.table is not None:
        maker = table1_matrix if args.table == 1 else table2_matrix
        sizes = _sizes(args.sizes) if args.sizes else None
        kw = {"size": args.grid_size, "reps": args.reps, "truth_reps": args.truth_reps, "seed": args.seed}
        if sizes:
            kw["sizes"] = sizes
        rows = run_table(maker(**kw), workers=args.threads)
        _emit_rows(args, rows)
        failed = sum(1 for r in rows if r.get("error"))
        if failed:
            print(f"error: {failed} table cell(s) failed", file=sys.stderr)
            return EXIT_SKIPPED
        return _check_skipped(sum(r["skipped"] for r in rows), args)
    if args.pop is None:
        raise UsageError("simulate needs --pop (or --table)")
    y, x = _target_vars(args)
    specs = []
    if args.sizes:
        for n_m, n_d in _sizes(args.sizes):
            specs.append((f"si(n={n_m})", f"si(n={n_d})"))
    else:
        specs.append((args.dm, args.dd))
    base = Path(args.pop).parent
    matrix = [
        ExperimentSpec(
            y, parse_design(a, y.n_rows, base), parse_design(b, y.n_cols, base),
            target=args.target, x=x, reps=args.reps, truth_reps=args.truth_reps, seed=args.seed,
            ci_level=args.ci_level, truth=args.truth, label=f"{a} x {b}",
        )
        for a, b in specs
    ]
    if len(matrix) == 1 and args.format == "json":
        summary = run_experiment(matrix[0], workers=args.threads)
        _emit_json(args, summary.to_dict())
        return _check_skipped(summary.skipped, args)
    rows = run_table(matrix, workers=args.threads)
    _emit_rows(args, rows)
    if any(r.get("error") for r in rows):
        return EXIT_SKIPPED
    return _check_skipped(sum(r["skipped"] for r in rows), args)


def cmd_model_bias(args) -> int:
    res = closed_form_rb(BiasInputs(args.rm, args.rd, args.nm, args.nd, args.NM, args.ND))
    _emit_json(args, res.to_dict())
    return 0


def scenario_designs() -> tuple[DesignSpec, DesignSpec]:
    return DesignSpec.stsi(SCENARIO_ROWS), DesignSpec.stsi(SCENARIO_COLS)


def cmd_elfe_scenario(args) -> int:
    dm, dd = scenario_designs()
    params = _model_params(args, dm.population_size, dd.population_size)
    y = generate_grid(params)
    rd = {k: [] for k in ("v_simp1", "v_simp2", "v_simp3")}
    last = None
    for b in range(args.reps):
        rng = streams.generator(args.seed, streams.SCENARIO, b)
        s = CrossSample(dm.draw(rng), dd.draw(rng))
        rep = estimate_variances(y, dm, dd, s)
        for k in rd:
            rd[k].append((getattr(rep, k) - rep.v_ht) / rep.v_ht)
        last = (s, rep)
    s, rep = last
    _emit_json(args, {
        "n_rows": dm.population_size,
        "n_cols": dd.population_size,
        "sample_rows": int(dm.expected_size),
        "sample_cols": int(dd.expected_size),
        "dm": dm.describe(),
        "dd": dd.describe(),
        "t_y": y.total,
        "t_hat": ht_total(y, dm, dd, s).t_hat,
        "variances": rep.to_dict(),
        "rd": {k: float(np.mean(v)) for k, v in rd.items()},
    })
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (64-bit unsigned)")
    common.add_argument("--format", choices=("json", "csv"), default=None, help="default json (csv for compare-designs)")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for replications")

    parser = argparse.ArgumentParser(prog="ccs", description="Estimation under cross-classified sampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, defaults):
        p.add_argument("--mu", type=float, default=200.0)
        p.add_argument("--sigma-m", type=float, default=defaults)
        p.add_argument("--sigma-d", type=float, default=defaults)
        p.add_argument("--sigma-e", type=float, default=5.0)

    def pop_flags(p, designs=True):
        p.add_argument("--pop", required=designs, help="population CSV or variable manifest JSON")
        p.add_argument("--var", default=None, help="variable name inside a manifest")
        if designs:
            p.add_argument("--dm", required=True, help="row design, e.g. 'si(n=5)'")
            p.add_argument("--dd", required=True, help="column design")

    p = sub.add_parser("gen-pop", parents=[common], help="generate a model population")
    p.add_argument("--nm", type=int, default=1000)
    p.add_argument("--nd", type=int, default=1000)
    model_flags(p, 5.0)
    p.add_argument("--count-pair", choices=("constant", "logit"), default=None,
                   help="write a count pair (x, y) plus manifest instead of one grid")
    p.add_argument("--p", type=float, default=0.3, help="thinning probability (mean for logit)")
    p.set_defaults(func=cmd_gen_pop)

    def target_flags(p):
        p.add_argument("--target", choices=("total", "ratio"), default="total")
        p.add_argument("--x", default=None, help="denominator population file for ratios")
        p.add_argument("--x-var", default=None, help="denominator variable name inside a manifest")

    p = sub.add_parser("estimate", parents=[common], help="estimate from one drawn cross sample")
    pop_flags(p)
    target_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("exact-variance", parents=[common], help="exact design variances")
    pop_flags(p)
    p.add_argument("--method", choices=("fast", "generic"), default="fast")
    p.set_defaults(func=cmd_exact_variance)

    p = sub.add_parser("compare-designs", parents=[common], help="V_MD / V_CCS over SI size pairs")
    pop_flags(p, designs=False)
    p.add_argument("--sizes", default="5,10,100,500")
    p.set_defaults(func=cmd_compare_designs, default_format="csv")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo relative biases")
    p.add_argument("--pop", default=None, help="population CSV or manifest")
    p.add_argument("--var", default=None)
    p.add_argument("--dm", default="si(n=5)")
    p.add_argument("--dd", default="si(n=5)")
    target_flags(p)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--truth-reps", type=int, default=50_000)
    p.add_argument("--truth", choices=("mc", "exact"), default="mc")
    p.add_argument("--ci-level", type=float, default=None)
    p.add_argument("--sizes", default=None, help="SI size pairs; overrides --dm/--dd")
    p.add_argument("--table", type=int, choices=(1, 2), default=None, help="run a regenerated table matrix")
    p.add_argument("--grid-size", type=int, default=1000, help="population side for --table")
    p.add_argument("--max-skipped", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("model-bias", parents=[common], help="closed-form model-design biases")
    p.add_argument("--rm", type=float, required=True)
    p.add_argument("--rd", type=float, required=True)
    p.add_argument("--nm", type=int, required=True)
    p.add_argument("--NM", type=int, required=True)
    p.add_argument("--nd", type=int, required=True)
    p.add_argument("--ND", type=int, required=True)
    p.set_defaults(func=cmd_model_bias)

    p = sub.add_parser("elfe-scenario", parents=[common], help="stratified two-way scenario with RD report")
    model_flags(p, 5.0)
    p.add_argument("--reps", type=int, default=1, help="samples averaged in the RD report")
    p.set_defaults(func=cmd_elfe_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = getattr(args, "default_format", "json")
    try:
        streams.check_seed(args.seed)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args)
    except (UsageError, DesignError, PopulationFileError, SizeGuardError, ReplicationError,
            ZeroDivisionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
