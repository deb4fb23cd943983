"""Population grids from the two-way random-effects model and the count process.

The grid model is ``Y_ik = mu + sigma_m U_i + sigma_d V_k + sigma_e W_ik`` with
independent standard normal ``U``, ``V`` and ``W``.  The count process draws
``X_ik ~ Poisson(Z_ik)`` from a model grid ``Z`` and thins it binomially,
``Y_ik ~ Binomial(X_ik, p_ik)``, with ``p_ik`` constant or logistic in ``Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import streams

__all__ = [
    "ModelParams",
    "PopulationGrid",
    "ConstantP",
    "LogitP",
    "CountVariablePair",
    "generate_grid",
    "generate_count_pair",
    "calibrate_beta",
    "POISSON_FLOOR",
]

POISSON_FLOOR = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the crossed random-effects model."""

    mu: float = 200.0
    sigma_m: float = 5.0
    sigma_d: float = 5.0
    sigma_e: float = 5.0
    n_rows: int = 1000
    n_cols: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("mu", "sigma_m", "sigma_d", "sigma_e"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("sigma_m", "sigma_d", "sigma_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid dimensions must be positive")
        streams.check_seed(self.seed)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma_m": self.sigma_m,
            "sigma_d": self.sigma_d,
            "sigma_e": self.sigma_e,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class PopulationGrid:
    """Values ``Y_ik`` on ``n_rows`` maternities by ``n_cols`` days."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or 0 in values.shape:
            raise ValueError(f"population grid must be a non-empty matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("population grid has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def scaled(self, c: float) -> PopulationGrid:
        return PopulationGrid(self.values * c, self.label)


@dataclass(frozen=True)
class ConstantP:
    """Thinning probability shared by every cell."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"thinning probability must lie in (0, 1], got {self.p}")

    def probabilities(self, z: np.ndarray) -> np.ndarray:
        return np.full(np.shape(z), self.p)


@dataclass(frozen=True)
class LogitP:
    """``logit(p_ik) = beta * Z_ik``; when ``beta`` is None it is calibrated so
    that the grid average of ``p_ik`` equals ``target``."""

    beta: float | None = None
    target: float = 0.3

    def resolve(self, z: np.ndarray) -> LogitP:
        if self.beta is not None:
            return self
        return LogitP(calibrate_beta(z, self.target), self.target)

    def probabilities(self, z: np.ndarray) -> np.ndarray:
        if self.beta is None:
            raise ValueError("beta not calibrated; call resolve() first")
        return special.expit(self.beta * np.asarray(z))


@dataclass(frozen=True, eq=False)
class CountVariablePair:
    x: PopulationGrid
    y: PopulationGrid
    p_mode: ConstantP | LogitP
    z: PopulationGrid | None = field(default=None, repr=False)


def generate_grid(params: ModelParams, label: str | None = None) -> PopulationGrid:
    """Draw one population from the crossed random-effects model.

    ``U`` (rows), ``V`` (columns) and ``W`` (cells) are drawn in that order
    from the population stream of ``params.seed``; the same parameters always
    give a bit-identical grid.
    """
    rng = streams.generator(params.seed, streams.POPULATION)
    u = rng.standard_normal(params.n_rows)
    v = rng.standard_normal(params.n_cols)
    w = rng.standard_normal((params.n_rows, params.n_cols))
    values = params.mu + params.sigma_m * u[:, None] + params.sigma_d * v[None, :] + params.sigma_e * w
    if label is None:
        label = (
            f"model(mu={params.mu:g},sigma_m={params.sigma_m:g},sigma_d={params.sigma_d:g},"
            f"sigma_e={params.sigma_e:g},seed={params.seed})"
        )
    return PopulationGrid(values, label)


def generate_count_pair(params: ModelParams, p_mode: ConstantP | LogitP) -> CountVariablePair:
    """Counts ``X ~ Poisson(Z)`` and thinned counts ``Y ~ Binomial(X, p)``.

    ``Z`` is the model grid for ``params``; entries at or below zero are
    clamped to ``POISSON_FLOOR``.  A :class:`LogitP` without ``beta`` is
    calibrated once on the realized ``Z``.
    """
    z = generate_grid(params, label="z")
    lam = np.maximum(z.values, POISSON_FLOOR)
    if isinstance(p_mode, LogitP):
        p_mode = p_mode.resolve(z.values)
    p = p_mode.probabilities(z.values)
    rng = streams.generator(params.seed, streams.COUNTS)
    x = rng.poisson(lam)
    y = rng.binomial(x, p)
    return CountVariablePair(
        x=PopulationGrid(x.astype(float), "x"),
        y=PopulationGrid(y.astype(float), "y"),
        p_mode=p_mode,
        z=z,
    )


def calibrate_beta(z, target: float, bracket: tuple[float, float] = (-1.0, 1.0), max_abs: float = 1e6) -> float:
    """Find ``beta`` with ``mean(expit(beta * z)) == target`` by bisection.

    The bracket is doubled until the residual changes sign or ``|beta|``
    would exceed ``max_abs``; then a ``ValueError`` names the last bracket.
    """
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must lie in (0, 1), got {target}")
    zv = np.asarray(getattr(z, "values", z), dtype=float).ravel()

    def residual(beta: float) -> float:
        return float(special.expit(beta * zv).mean()) - target

    if residual(0.0) == 0.0:
        return 0.0
    lo, hi = bracket
    r_lo, r_hi = residual(lo), residual(hi)
    while r_lo * r_hi > 0.0:
        if max(abs(lo), abs(hi)) * 2 > max_abs:
            raise ValueError(
                f"target {target} unreachable on beta bracket [{lo:g}, {hi:g}] "
                f"(mean probabilities {r_lo + target:.6g} .. {r_hi + target:.6g})"
            )
        lo, hi = 2 * lo, 2 * hi
        r_lo, r_hi = residual(lo), residual(hi)
    beta = optimize.bisect(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    if abs(residual(beta)) > 1e-6:
        raise ValueError(f"bisection stalled at beta={beta!r}, residual {residual(beta):.3g}")
    return float(beta)
