"""Horvitz-Thompson point estimation from a realized cross sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .designs import CrossSample, DesignError, DesignSpec
from .population import PopulationGrid

__all__ = [
    "SampleEstimate",
    "RatioEstimate",
    "DegenerateSampleError",
    "ZeroInclusionProbabilityError",
    "sample_values",
    "expanded",
    "ht_total",
    "ht_ratio",
    "linearize",
]


class ZeroInclusionProbabilityError(DesignError):
    pass


class DegenerateSampleError(ZeroDivisionError):
    """The estimated denominator total of a ratio is zero."""


@dataclass(frozen=True, eq=False)
class SampleEstimate:
    """HT total with the estimated sub-totals of sampled rows and columns.

    ``row_subtotals[a]`` is the estimated total of row ``rows[a]`` over days,
    ``col_subtotals[b]`` the estimated total of column ``cols[b]`` over rows.
    """

    t_hat: float
    rows: np.ndarray
    cols: np.ndarray
    row_subtotals: np.ndarray
    col_subtotals: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class RatioEstimate:
    r_hat: float
    t_hat_y: float
    t_hat_x: float
    linearized: np.ndarray
    sample: CrossSample


def _check(y: PopulationGrid, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> None:
    if y.shape != (dm.population_size, dd.population_size):
        raise DesignError(
            f"grid is {y.shape[0]}x{y.shape[1]} but designs cover {dm.population_size}x{dd.population_size}"
        )
    s.check(*y.shape)
    if dm.pi.min() <= 0.0 or dd.pi.min() <= 0.0:
        raise ZeroInclusionProbabilityError("HT estimation needs every inclusion probability to be positive")


def _as_grid(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample):
    # Arrays shaped like the population are grids; sample-shaped ones are
    # already restricted (under a census the two readings coincide).
    if isinstance(y, PopulationGrid):
        return y
    y = np.asarray(y, dtype=float)
    if y.shape != s.shape and y.shape == (dm.population_size, dd.population_size):
        return PopulationGrid(y)
    return y


def sample_values(y, s: CrossSample) -> np.ndarray:
    """``Y`` restricted to ``S_M x S_D``; sample-shaped arrays pass through."""
    if isinstance(y, PopulationGrid):
        return y.values[np.ix_(s.rows, s.cols)]
    y = np.asarray(y, dtype=float)
    if y.shape != s.shape:
        raise ValueError(f"sample values have shape {y.shape}, sample is {s.shape}")
    return y


def expanded(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> np.ndarray:
    """Expanded values ``Y_ik / (pi_i^M pi_k^D)`` over the sample.

    ``y`` is a :class:`PopulationGrid` or an array already restricted to
    the sample (such as a linearized variable).
    """
    y = _as_grid(y, dm, dd, s)
    if isinstance(y, PopulationGrid):
        _check(y, dm, dd, s)
    ys = sample_values(y, s)
    return ys / dm.pi[s.rows][:, None] / dd.pi[s.cols][None, :]


def ht_total(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> SampleEstimate:
    """Horvitz-Thompson estimate of the total of ``y`` from cross sample ``s``.

    An empty sample in either dimension (possible under Poisson sampling)
    gives ``t_hat = 0`` with ``degenerate=True``.
    """
    y = _as_grid(y, dm, dd, s)
    if isinstance(y, PopulationGrid):
        _check(y, dm, dd, s)
    ys = sample_values(y, s)
    pm, pd = dm.pi[s.rows], dd.pi[s.cols]
    row_sub = (ys / pd[None, :]).sum(axis=1)
    col_sub = (ys / pm[:, None]).sum(axis=0)
    t_hat = float((row_sub / pm).sum())
    return SampleEstimate(t_hat, s.rows, s.cols, row_sub, col_sub, degenerate=min(s.shape) == 0)


def ht_ratio(y: PopulationGrid, x: PopulationGrid, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> RatioEstimate:
    """Substitution estimator ``t_hat_y / t_hat_x`` with its linearized variable."""
    if y.shape != x.shape:
        raise ValueError("numerator and denominator grids differ in shape")
    ty = ht_total(y, dm, dd, s).t_hat
    tx = ht_total(x, dm, dd, s).t_hat
    if tx == 0.0:
        raise DegenerateSampleError("estimated denominator total is zero")
    r_hat = ty / tx
    ys, xs = sample_values(y, s), sample_values(x, s)
    return RatioEstimate(r_hat, ty, tx, (ys - r_hat * xs) / tx, s)


def linearize(y: PopulationGrid, x: PopulationGrid, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> np.ndarray:
    """Estimated linearized variable ``(Y_ik - R_hat X_ik) / t_hat_x`` on the sample."""
    return ht_ratio(y, x, dm, dd, s).linearized
