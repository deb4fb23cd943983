"""Replicated cross-sample simulations.

Each replication ``b`` draws its cross sample from the substream
``(seed, REPLICATION, b)`` and each truth replication from
``(seed, TRUTH, b)``, so summaries are bit-identical whatever the number of
worker processes.  Reductions always run over the full, index-ordered
arrays of per-replication results.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import streams
from .designs import CrossSample, DesignError, DesignSpec
from .exact import decompose
from .population import ConstantP, LogitP, ModelParams, PopulationGrid, generate_count_pair, generate_grid
from .varest import estimate_variances, report_from_expanded

__all__ = [
    "ExperimentSpec",
    "SimulationSummary",
    "run_experiment",
    "run_table",
    "coverage_study",
    "model_bias_experiment",
    "table1_matrix",
    "table2_matrix",
    "table_to_csv",
    "ReplicationError",
    "ESTIMATORS",
    "TABLE_SIZES",
    "TABLE1_CONFIGS",
    "TABLE2_CONFIGS",
]

ESTIMATORS = ("v_ht", "v_yg", "v_simp1", "v_simp2", "v_simp3")
TABLE_SIZES = ((5, 5), (10, 10), (10, 100), (100, 100), (500, 500))
TABLE1_CONFIGS = ((5.0, 5.0), (50.0, 5.0), (0.5, 5.0), (0.5, 0.5))
TABLE2_CONFIGS = (("i", 5.0), ("i", 50.0), ("ii", 5.0), ("ii", 50.0))

# Per-replication result columns: estimate, then ESTIMATORS.
_NCOL = 1 + len(ESTIMATORS)


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One simulation cell.

    ``target`` is ``"total"`` (of ``y``) or ``"ratio"`` (``t_y / t_x``,
    variance estimators applied to the estimated linearized variable).
    ``truth`` selects how the reference variance is obtained: ``"mc"`` uses
    the empirical variance over ``truth_reps`` independent draws, ``"exact"``
    the closed-form design variance (totals only).
    """

    y: PopulationGrid
    dm: DesignSpec
    dd: DesignSpec
    target: str = "total"
    x: PopulationGrid | None = None
    reps: int = 10_000
    truth_reps: int = 50_000
    seed: int = 0
    ci_level: float | None = None
    truth: str = "mc"
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target not in ("total", "ratio"):
            raise ValueError(f"target must be 'total' or 'ratio', got {self.target!r}")
        if self.target == "ratio" and self.x is None:
            raise ValueError("a ratio target needs a denominator variable x")
        if self.x is not None and self.x.shape != self.y.shape:
            raise ValueError("x and y grids differ in shape")
        if self.y.shape != (self.dm.population_size, self.dd.population_size):
            raise ValueError(
                f"grid is {self.y.shape[0]}x{self.y.shape[1]}, designs cover "
                f"{self.dm.population_size}x{self.dd.population_size}"
            )
        if self.reps < 1 or self.truth_reps < 2:
            raise ValueError("need reps >= 1 and truth_reps >= 2")
        if self.ci_level is not None and not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.truth not in ("mc", "exact"):
            raise ValueError("truth must be 'mc' or 'exact'")
        if self.truth == "exact" and self.target != "total":
            raise ValueError("exact truth is only available for totals")
        streams.check_seed(self.seed)

    def echo(self) -> dict:
        return {
            "label": self.label,
            "population": self.y.label,
            "denominator": self.x.label if self.x is not None else None,
            "shape": list(self.y.shape),
            "dm": self.dm.describe(),
            "dd": self.dd.describe(),
            "target": self.target,
            "reps": self.reps,
            "truth_reps": self.truth_reps,
            "truth": self.truth,
            "seed": self.seed,
            "ci_level": self.ci_level,
            **self.meta,
        }


@dataclass
class SimulationSummary:
    spec_echo: dict
    parameter: float
    rb_mc: dict
    neg_count: dict
    mean_estimates: dict
    true_variance: float
    true_variance_se: float
    coverage: float | None
    skipped: int
    elapsed_ms: float

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "spec_echo": self.spec_echo,
            "parameter": self.parameter,
            "rb_mc": self.rb_mc,
            "neg_count": self.neg_count,
            "mean_estimates": self.mean_estimates,
            "true_variance": self.true_variance,
            "true_variance_se": self.true_variance_se,
            "coverage": self.coverage,
            "skipped": self.skipped,
        }
        if timing:
            out["elapsed_ms"] = self.elapsed_ms
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)


class ReplicationError(RuntimeError):
    """A replication failed; ``index`` is its replication number."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"replication {index}: {type(cause).__name__}: {cause}")
        self.index = index

    def __reduce__(self):
        return (_rebuild_replication_error, (self.index, str(self)))


def _rebuild_replication_error(index: int, message: str) -> ReplicationError:
    err = ReplicationError.__new__(ReplicationError)
    RuntimeError.__init__(err, message)
    err.index = index
    return err


# -- per-replication work -----------------------------------------------------

_CTX: dict = {}


def _set_context(ctx: dict) -> None:
    _CTX.clear()
    _CTX.update(ctx)


def _draw(ctx: dict, stream: int, b: int) -> CrossSample:
    rng = streams.generator(ctx["seed"], stream, b)
    return CrossSample(ctx["dm"].draw(rng), ctx["dd"].draw(rng))


def _point(ctx: dict, s: CrossSample):
    """Point estimate and the expanded values the variance estimators see.

    The expanded array is freshly allocated and may be overwritten.
    """
    dm, dd = ctx["dm"], ctx["dd"]
    wm = (1.0 / dm.pi[s.rows])[:, None]
    wd = 1.0 / dd.pi[s.cols]
    ye = ctx["y"][s.rows][:, s.cols]
    ye *= wm
    ye *= wd
    ty = float(ye.sum())
    if ctx["target"] == "total":
        return ty, ye
    xe = ctx["x"][s.rows][:, s.cols]
    xe *= wm
    xe *= wd
    tx = float(xe.sum())
    if tx == 0.0:
        return None, None
    r = ty / tx
    # expanded linearized variable (Y - r X) / tx
    xe *= r
    ye -= xe
    ye /= tx
    return r, ye


def _replicate_chunk(bounds: tuple[int, int]) -> np.ndarray:
    ctx = _CTX
    lo, hi = bounds
    out = np.full((hi - lo, _NCOL), np.nan)
    for row, b in enumerate(range(lo, hi)):
        s = _draw(ctx, streams.REPLICATION, b)
        est, values = _point(ctx, s)
        if est is None:
            continue
        out[row, 0] = est
        if min(s.shape) == 0:
            out[row, 1:] = 0.0
            continue
        try:
            rep = report_from_expanded(values, ctx["dm"], ctx["dd"], s, overwrite=True)
        except (DesignError, ZeroDivisionError) as exc:
            raise ReplicationError(b, exc) from exc
        out[row, 1:] = [np.nan if v is None else v for v in (rep.v_ht, rep.v_yg, rep.v_simp1, rep.v_simp2, rep.v_simp3)]
    return out


def _total(values: np.ndarray, ctx: dict, s: CrossSample) -> float:
    # column weights scattered over the full axis: one matrix-vector product
    # instead of extracting the sampled submatrix
    wd = np.zeros(values.shape[1])
    wd[s.cols] = 1.0 / ctx["dd"].pi[s.cols]
    return float((values @ wd)[s.rows] @ (1.0 / ctx["dm"].pi[s.rows]))


def _truth_chunk(bounds: tuple[int, int]) -> np.ndarray:
    ctx = _CTX
    lo, hi = bounds
    out = np.full(hi - lo, np.nan)
    for row, b in enumerate(range(lo, hi)):
        s = _draw(ctx, streams.TRUTH, b)
        ty = _total(ctx["y"], ctx, s)
        if ctx["target"] == "total":
            out[row] = ty
            continue
        tx = _total(ctx["x"], ctx, s)
        if tx != 0.0:
            out[row] = ty / tx
    return out


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(n / (workers * 8)))
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def _map(fn, n: int, ctx: dict, workers: int) -> np.ndarray:
    parts = _chunks(n, workers)
    if workers <= 1:
        _set_context(ctx)
        try:
            return np.concatenate([fn(p) for p in parts])
        finally:
            _CTX.clear()
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    with ProcessPoolExecutor(workers, mp_context=mp.get_context(method), initializer=_set_context, initargs=(ctx,)) as pool:
        return np.concatenate(list(pool.map(fn, parts)))


def _context(spec: ExperimentSpec) -> dict:
    return {
        "y": spec.y.values,
        "x": spec.x.values if spec.x is not None else None,
        "dm": spec.dm,
        "dd": spec.dd,
        "target": spec.target,
        "seed": spec.seed,
    }


def _covered(est: np.ndarray, var: np.ndarray, theta: float, level: float) -> np.ndarray:
    z = stats.norm.ppf(0.5 + level / 2)
    half = z * np.sqrt(np.maximum(var, 0.0))
    # allowance for rounding in estimates that equal the parameter exactly
    slack = 64 * np.finfo(float).eps * np.maximum(np.abs(est), abs(theta))
    return np.abs(est - theta) <= half + slack


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> SimulationSummary:
    """Run one simulation cell.

    Relative biases are in percent, ``100 * (mean(V_hat) - V) / V``; they
    are ``None`` when ``V`` is zero or the estimator is undefined for the
    designs.  Negative counts are kept for ``v_ht`` and ``v_yg`` only.
    """
    t0 = time.perf_counter()
    ctx = _context(spec)
    results = _map(_replicate_chunk, spec.reps, ctx, workers)
    kept = ~np.isnan(results[:, 0])
    skipped = int(spec.reps - kept.sum())
    res = results[kept]

    if spec.target == "total":
        theta = spec.y.total
    else:
        theta = spec.y.total / spec.x.total

    if spec.truth == "exact":
        true_var = decompose(spec.y, spec.dm, spec.dd).v_ccs
        true_se = 0.0
    else:
        truth = _map(_truth_chunk, spec.truth_reps, ctx, workers)
        truth = truth[~np.isnan(truth)]
        skipped += spec.truth_reps - truth.size
        true_var = float(np.var(truth, ddof=1))
        sq = (truth - truth.mean()) ** 2
        true_se = float(np.std(sq, ddof=1) / math.sqrt(truth.size))

    rb, means, neg = {}, {}, {}
    for col, name in enumerate(ESTIMATORS, start=1):
        values = res[:, col]
        if values.size == 0 or np.all(np.isnan(values)):
            rb[name] = means[name] = None
            continue
        m = float(values.mean())
        means[name] = m
        rb[name] = 100.0 * (m - true_var) / true_var if true_var > 0 else None
        if name in ("v_ht", "v_yg"):
            neg[name] = int(np.count_nonzero(values < 0))

    coverage = None
    if spec.ci_level is not None and res.shape[0] and not np.all(np.isnan(res[:, 5])):
        coverage = float(_covered(res[:, 0], res[:, 5], theta, spec.ci_level).mean())

    return SimulationSummary(
        spec_echo=spec.echo(),
        parameter=float(theta),
        rb_mc=rb,
        neg_count=neg,
        mean_estimates={"estimate": float(res[:, 0].mean()) if res.size else None, **means},
        true_variance=float(true_var),
        true_variance_se=true_se,
        coverage=coverage,
        skipped=skipped,
        elapsed_ms=1000.0 * (time.perf_counter() - t0),
    )


def coverage_study(spec: ExperimentSpec, workers: int = 1, level: float = 0.95) -> float:
    """Empirical coverage of normal intervals built from ``v_simp3``."""
    if spec.ci_level is None:
        spec = ExperimentSpec(**{**spec.__dict__, "ci_level": level})
    return run_experiment(spec, workers).coverage


# -- experiment matrices ------------------------------------------------------

def run_table(matrix: list[ExperimentSpec], workers: int = 1) -> list[dict]:
    """One flat row per cell; a failing cell gets an ``error`` entry instead of results."""
    rows = []
    for spec in matrix:
        base = {"label": spec.label, "design_m": spec.dm.describe(), "design_d": spec.dd.describe(), **spec.meta}
        try:
            summary = run_experiment(spec, workers)
        except Exception as exc:  # isolate the cell
            rows.append({**base, "error": f"{type(exc).__name__}: {exc}"})
            continue
        row = dict(base)
        for name in ESTIMATORS:
            v = summary.rb_mc[name]
            row[f"rb_{name}"] = None if v is None else round(v, 1)
        row["neg_v_ht"] = summary.neg_count.get("v_ht")
        row["neg_v_yg"] = summary.neg_count.get("v_yg")
        row["true_variance"] = summary.true_variance
        row["true_variance_se"] = summary.true_variance_se
        row["coverage"] = summary.coverage
        row["skipped"] = summary.skipped
        row["elapsed_ms"] = round(summary.elapsed_ms, 1)
        row["error"] = None
        rows.append(row)
    return rows


def table_to_csv(rows: list[dict], fh) -> None:
    if not rows:
        return
    fields = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("NA" if row.get(k) is None else row.get(k)) for k in fields})


def table1_matrix(
    size: int = 1000,
    sizes=TABLE_SIZES,
    configs=TABLE1_CONFIGS,
    reps: int = 10_000,
    truth_reps: int = 50_000,
    seed: int = 0,
    mu: float = 200.0,
    sigma_e: float = 5.0,
) -> list[ExperimentSpec]:
    """Totals under SI x SI: one population per ``(sigma_m, sigma_d)`` config."""
    matrix = []
    for c, (sm, sd) in enumerate(configs):
        params = ModelParams(mu, sm, sd, sigma_e, size, size, seed=(seed + c) % 2**64)
        y = generate_grid(params)
        for n_m, n_d in sizes:
            matrix.append(ExperimentSpec(
                y, DesignSpec.si(size, n_m), DesignSpec.si(size, n_d),
                reps=reps, truth_reps=truth_reps, seed=seed,
                label=f"sigma_m={sm:g},sigma_d={sd:g},n_m={n_m},n_d={n_d}",
                meta={"sigma_m": sm, "sigma_d": sd, "size_m": n_m, "size_d": n_d},
            ))
    return matrix


def table2_matrix(
    size: int = 1000,
    sizes=TABLE_SIZES,
    configs=TABLE2_CONFIGS,
    reps: int = 10_000,
    truth_reps: int = 50_000,
    seed: int = 0,
    p: float = 0.3,
) -> list[ExperimentSpec]:
    """Ratios of thinned counts to counts; case ``i`` has constant thinning
    ``p``, case ``ii`` logistic thinning with mean ``p``."""
    matrix = []
    for c, (case, sm) in enumerate(configs):
        params = ModelParams(200.0, sm, 5.0, 5.0, size, size, seed=(seed + c) % 2**64)
        mode = ConstantP(p) if case == "i" else LogitP(target=p)
        pair = generate_count_pair(params, mode)
        for n_m, n_d in sizes:
            matrix.append(ExperimentSpec(
                pair.y, DesignSpec.si(size, n_m), DesignSpec.si(size, n_d),
                target="ratio", x=pair.x, reps=reps, truth_reps=truth_reps, seed=seed,
                label=f"case={case},sigma_m={sm:g},n_m={n_m},n_d={n_d}",
                meta={"case": case, "sigma_m": sm, "sigma_d": 5.0, "size_m": n_m, "size_d": n_d},
            ))
    return matrix


# -- model-design bias --------------------------------------------------------

def model_bias_experiment(
    params: ModelParams,
    n_m: int,
    n_d: int,
    populations: int = 20,
    samples: int = 2000,
    seed: int = 0,
) -> dict:
    """Empirical model-design relative bias of the simplified estimators.

    Draws ``populations`` grids from ``params`` (seeds offset from
    ``params.seed``), takes the exact CCS variance of each, and averages
    each simplified estimator over ``samples`` SI x SI cross samples.
    Returns, per estimator, the bias ratio
    ``sum_p (mean_p - V_p) / sum_p V_p`` and its standard error from the
    between-population spread of the linearized ratio.
    """
    diffs = np.empty((populations, 3))
    truths = np.empty(populations)
    for p in range(populations):
        pp = ModelParams(**{**params.to_dict(), "seed": (params.seed + p) % 2**64})
        grid = generate_grid(pp)
        dm = DesignSpec.si(pp.n_rows, n_m)
        dd = DesignSpec.si(pp.n_cols, n_d)
        truths[p] = decompose(grid, dm, dd).v_ccs
        acc = np.zeros(3)
        for b in range(samples):
            rng = streams.generator(seed, streams.REPLICATION, p, b)
            s = CrossSample(dm.draw(rng), dd.draw(rng))
            rep = estimate_variances(grid, dm, dd, s)
            acc += (rep.v_simp1, rep.v_simp2, rep.v_simp3)
        diffs[p] = acc / samples - truths[p]
    out = {}
    scale = truths.mean()
    for c, name in enumerate(("v_simp1", "v_simp2", "v_simp3")):
        rb = diffs[:, c].sum() / truths.sum()
        z = diffs[:, c] - rb * truths
        out[name] = {"rb": float(rb), "se": float(z.std(ddof=1) / math.sqrt(populations) / scale)}
    out["mean_v_ccs"] = float(scale)
    return out
