"""Variance estimators for the HT total under cross-classified sampling.

All estimators take values either as a :class:`PopulationGrid` (restricted
to the sample internally) or as an array already shaped like the sample;
the latter is how a linearized variable for a ratio is plugged in.

With ``W = Delta_ij / pi_ij`` over the sample and ``a_i = sum_k Yc_ik``,
``b_k = sum_i Yc_ik`` (``Yc`` the expanded values):

* HT components are ``a' W_M a``, ``b' W_D b`` and ``sum Yc * (W_M Yc W_D)``;
* YG components equal them minus ``sum_i a_i^2 r_i`` (and analogues),
  where ``r`` holds the row sums of ``W``.  For SI and STSI the row sums
  vanish except at a unit drawn alone from a stratum of several, so the
  two families coincide term by term unless such a unit is sampled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import streams
from .designs import CrossSample, DesignError, DesignSpec
from .estimation import _as_grid, expanded, sample_values
from .population import ModelParams, PopulationGrid, generate_grid

__all__ = [
    "Components",
    "VarEstimateReport",
    "v_ht",
    "v_yg",
    "v_simplified",
    "simplified_closed_form",
    "estimate_variances",
    "report_from_expanded",
    "relative_difference",
    "NegativeCase",
    "find_negative_case",
]


class Components(NamedTuple):
    total: float
    c1: float
    c2: float
    c3: float


@dataclass(frozen=True)
class VarEstimateReport:
    v_ht: float
    v_ht_1: float
    v_ht_2: float
    v_ht_3: float
    v_yg: float | None
    v_yg_1: float | None
    v_yg_2: float | None
    v_yg_3: float | None
    v_simp1: float | None
    v_simp2: float | None
    v_simp3: float | None
    negative_ht: bool
    negative_yg: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _require_fixed(dm: DesignSpec, dd: DesignSpec, what: str) -> None:
    if not (dm.fixed_size and dd.fixed_size):
        raise DesignError(f"{what} requires fixed-size designs in both dimensions")


def _fast_parts(ye: np.ndarray, dm: DesignSpec, dd: DesignSpec, s: CrossSample, overwrite: bool = False):
    # with overwrite, ye is consumed by the double transform
    ta = dm.sample_root(s.rows, ye.sum(axis=1), overwrite=True)
    tb = dd.sample_root(s.cols, ye.sum(axis=0), overwrite=True)
    t3 = dd.sample_root(s.cols, ye, axis=1, overwrite=overwrite)
    t3 = dm.sample_root(s.rows, t3, axis=0, overwrite=True)
    return ta, tb, t3


def _yg_from_roots(ta, tb, t3, single_m, single_d) -> tuple[float, float, float]:
    # For SI and STSI the Delta/pi rows sum to zero except at a unit drawn
    # alone from its stratum, whose row is its diagonal term.  The YG
    # components are therefore the HT sums of squares with those diagonal
    # entries left out; summing the rest avoids a cancelling subtraction.
    y1 = float(ta @ ta) if not single_m.any() else float(ta[~single_m] @ ta[~single_m])
    y2 = float(tb @ tb) if not single_d.any() else float(tb[~single_d] @ tb[~single_d])
    if not (single_m.any() and single_d.any()):
        return y1, y2, float(np.vdot(t3, t3))
    rest = t3[single_m][:, ~single_d]
    other = t3[~single_m]
    return y1, y2, float(np.vdot(other, other) + np.vdot(rest, rest))


def _generic_guard(shape: tuple[int, int], max_terms: int) -> None:
    if (shape[0] * shape[1]) ** 2 > max_terms:
        raise DesignError(f"sample too large for the generic route ({shape[0]}x{shape[1]})")


def _exact_expanded(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> np.ndarray:
    # rational copy of the expanded values, so the generic route is rounding-free
    ys = np.vectorize(Fraction, otypes=[object])(sample_values(_as_grid(y, dm, dd, s), s))
    pm = np.array([dm.pi1_exact(int(i)) for i in s.rows], dtype=object)
    pd = np.array([dd.pi1_exact(int(k)) for k in s.cols], dtype=object)
    return ys / np.outer(pm, pd)


def v_ht(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample, method: str = "fast", max_terms: int = 2 * 10**5) -> Components:
    """Unbiased HT variance estimator and its three components.

    Returns ``(v_ht, v_ht_1, v_ht_2, v_ht_3)`` with
    ``v_ht = v_ht_1 + v_ht_2 - v_ht_3``.  The generic route evaluates the
    total from the ``Gamma / (pi_ij pi_kl)`` weights directly and each
    component from its own literal quadruple sum.
    """
    ye = expanded(y, dm, dd, s)
    if method == "fast":
        ta, tb, t3 = _fast_parts(ye, dm, dd, s)
        c1, c2, c3 = float(ta @ ta), float(tb @ tb), float(np.vdot(t3, t3))
        return Components(c1 + c2 - c3, c1, c2, c3)
    if method != "generic":
        raise ValueError(f"unknown method {method!r}")
    _generic_guard(ye.shape, max_terms)
    ye = _exact_expanded(y, dm, dd, s)
    wm = dm.sample_weight_matrix(s.rows, exact=True)
    wd = dd.sample_weight_matrix(s.cols, exact=True)
    pm = np.array([dm.pi1_exact(int(i)) for i in s.rows], dtype=object)
    pd = np.array([dd.pi1_exact(int(k)) for k in s.cols], dtype=object)
    pm2 = np.array([[dm.pi2_exact(int(i), int(j)) for j in s.rows] for i in s.rows], dtype=object)
    pd2 = np.array([[dd.pi2_exact(int(k), int(l)) for l in s.cols] for k in s.cols], dtype=object)
    qm = np.outer(pm, pm) / pm2
    qd = np.outer(pd, pd) / pd2

    def quad(x, z):
        return np.einsum("ij,kl,ik,jl->", x, z, ye, ye, optimize=False)

    one_m = np.full(wm.shape, Fraction(1), dtype=object)
    one_d = np.full(wd.shape, Fraction(1), dtype=object)
    total = quad(one_m, one_d) - quad(qm, qd)
    return Components(*(float(v) for v in (total, quad(wm, one_d), quad(one_m, wd), quad(wm, wd))))


def v_yg(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample, method: str = "fast", max_terms: int = 2 * 10**5) -> Components:
    """Yates-Grundy type estimator ``(v_yg, v_yg_1, v_yg_2, v_yg_3)``.

    Only defined for fixed-size designs.  ``v_yg_1`` and ``v_yg_2`` are
    pairwise-difference sums over the estimated row and column sub-totals;
    ``v_yg_3`` runs over pairs of sampled cells.
    """
    _require_fixed(dm, dd, "the Yates-Grundy estimator")
    ye = expanded(y, dm, dd, s)
    if method == "fast":
        y1, y2, y3 = _yg_from_roots(*_fast_parts(ye, dm, dd, s), dm.sample_singles(s.rows), dd.sample_singles(s.cols))
        return Components(y1 + y2 - y3, y1, y2, y3)
    if method != "generic":
        raise ValueError(f"unknown method {method!r}")
    _generic_guard(ye.shape, max_terms)
    ye = _exact_expanded(y, dm, dd, s)
    wm = dm.sample_weight_matrix(s.rows, exact=True)
    wd = dd.sample_weight_matrix(s.cols, exact=True)
    a = ye.sum(axis=1)
    b = ye.sum(axis=0)

    def pairwise(w, v):
        total = Fraction(0)
        for i in range(v.size):
            for j in range(v.size):
                if i != j:
                    total += w[i, j] * (v[i] - v[j]) ** 2
        return -total / 2

    y1 = pairwise(wm, a)
    y2 = pairwise(wd, b)
    y3 = Fraction(0)
    for i in range(ye.shape[0]):
        # cells (i, k) against every (j, l); the (i, k) == (j, l) terms are zero
        diff = ye[i][None, :, None] - ye[:, None, :]
        y3 += np.sum(wm[i][:, None, None] * wd[None] * diff**2)
    y3 = -y3 / 2
    return Components(float(y1 + y2 - y3), float(y1), float(y2), float(y3))


def v_simplified(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample, method: str = "fast") -> tuple[float, float, float]:
    """The three non-negative simplified estimators ``(simp1, simp2, simp3)``.

    ``simp1`` keeps the row component of the YG estimator, ``simp2`` the
    column component and ``simp3`` their sum.
    """
    yg = v_yg(y, dm, dd, s, method=method)
    return yg.c1, yg.c2, yg.c1 + yg.c2


def _stratified_fpc_variance(design: DesignSpec, idx: np.ndarray, subtotals: np.ndarray) -> float:
    starts, counts, ids = design.sample_blocks(idx)
    total = 0.0
    for start, count, h in zip(starts, counts, ids):
        N_h, n_h = design.strata[h]
        if n_h == N_h or count < 2:
            # no sampled pairs inside the stratum
            continue
        s2 = np.var(subtotals[start : start + count], ddof=1)
        total += N_h**2 * (1.0 / n_h - 1.0 / N_h) * s2
    return float(total)


def simplified_closed_form(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> tuple[float, float, float]:
    """Simplified estimators from fpc-weighted variances of estimated sub-totals.

    For SI in both dimensions this is ``N_M^2 (1/n_M - 1/N_M) s^2`` of the
    estimated row totals (and the column analogue); for STSI the same
    expression is summed over strata.
    """
    _require_fixed(dm, dd, "the simplified estimators")
    ys = sample_values(_as_grid(y, dm, dd, s), s)
    row_sub = (ys / dd.pi[s.cols][None, :]).sum(axis=1)
    col_sub = (ys / dm.pi[s.rows][:, None]).sum(axis=0)
    s1 = _stratified_fpc_variance(dm, s.rows, row_sub)
    s2 = _stratified_fpc_variance(dd, s.cols, col_sub)
    return s1, s2, s1 + s2


def estimate_variances(y, dm: DesignSpec, dd: DesignSpec, s: CrossSample) -> VarEstimateReport:
    """Every variance estimator for one cross sample (fast route).

    YG-type and simplified estimators are ``None`` unless both designs are
    fixed-size.  Negative HT/YG values are reported as they are.
    """
    return report_from_expanded(expanded(y, dm, dd, s), dm, dd, s, overwrite=True)


def report_from_expanded(ye: np.ndarray, dm: DesignSpec, dd: DesignSpec, s: CrossSample, overwrite: bool = False) -> VarEstimateReport:
    """:func:`estimate_variances` from expanded sample values.

    With ``overwrite`` the caller hands over ``ye`` as scratch space, which
    saves two sample-sized temporaries per call.
    """
    ta, tb, t3 = _fast_parts(ye, dm, dd, s, overwrite)
    c1, c2, c3 = float(ta @ ta), float(tb @ tb), float(np.vdot(t3, t3))
    v = c1 + c2 - c3
    if dm.fixed_size and dd.fixed_size:
        single_m, single_d = dm.sample_singles(s.rows), dd.sample_singles(s.cols)
        if single_m.any() or single_d.any():
            y1, y2, y3 = _yg_from_roots(ta, tb, t3, single_m, single_d)
        else:
            y1, y2, y3 = c1, c2, c3
        yg = y1 + y2 - y3
        simp = (y1, y2, y1 + y2)
    else:
        y1 = y2 = y3 = yg = None
        simp = (None, None, None)
    return VarEstimateReport(
        v_ht=v,
        v_ht_1=c1,
        v_ht_2=c2,
        v_ht_3=c3,
        v_yg=yg,
        v_yg_1=y1,
        v_yg_2=y2,
        v_yg_3=y3,
        v_simp1=simp[0],
        v_simp2=simp[1],
        v_simp3=simp[2],
        negative_ht=v < 0,
        negative_yg=yg is not None and yg < 0,
    )


def relative_difference(v_simp: float, v: float) -> float:
    """``(v_simp - v) / v``; NaN when ``v`` is zero."""
    return (v_simp - v) / v if v != 0 else float("nan")


@dataclass(frozen=True, eq=False)
class NegativeCase:
    grid: PopulationGrid
    dm: DesignSpec
    dd: DesignSpec
    sample: CrossSample
    report: VarEstimateReport
    draws: int


def find_negative_case(
    budget: int = 20_000,
    seed: int = 0,
    design: str = "si",
    n: int = 5,
    size: int = 20,
    params: ModelParams | None = None,
    grid: PopulationGrid | None = None,
    draws_per_population: int = 200,
) -> NegativeCase | None:
    """Randomized search for a sample with a negative HT or YG estimate.

    Populations are drawn from ``params`` (default: ``size x size`` grids
    with weak row and column effects, ``sigma_m = sigma_d = 0.5``,
    ``sigma_e = 5``) unless a fixed ``grid`` is given.  ``design`` is
    ``"si"`` (SI of ``n`` in each dimension) or ``"poisson"`` (Poisson with
    probability ``n / N``).  Returns ``None`` once ``budget`` samples have
    been tried without success.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    draws = 0
    population = 0
    while draws < budget:
        if grid is None:
            p = params or ModelParams(mu=200.0, sigma_m=0.5, sigma_d=0.5, sigma_e=5.0, n_rows=size, n_cols=size)
            p = ModelParams(**{**p.to_dict(), "seed": (seed + population) % 2**64})
            g = generate_grid(p)
        else:
            g = grid
        nm, nd = g.shape
        if design == "si":
            dm, dd = DesignSpec.si(nm, min(n, nm)), DesignSpec.si(nd, min(n, nd))
        elif design == "poisson":
            dm, dd = DesignSpec.poisson(n / nm, nm), DesignSpec.poisson(n / nd, nd)
        else:
            raise ValueError(f"unknown design family {design!r}")
        rng = streams.generator(seed, streams.SEARCH, population)
        for _ in range(min(draws_per_population, budget - draws)):
            draws += 1
            s = CrossSample(dm.draw(rng), dd.draw(rng))
            if min(s.shape) == 0:
                continue
            rep = estimate_variances(g, dm, dd, s)
            if rep.negative_ht or rep.negative_yg:
                return NegativeCase(g, dm, dd, s, rep, draws)
        population += 1
    return None
