"""Exact design variances under cross-classified and two-stage sampling.

Two routes compute every quantity:

* ``generic`` evaluates the defining quadruple sums literally (``einsum``
  without contraction reordering) from dense probability matrices built
  through the designs' scalar accessors.  The sums run in exact rational
  arithmetic, so the route is a rounding-free reference even when the
  variance is tiny next to the squared total.  Cost is ``O(N_M^2 N_D^2)``
  big-rational operations.
* ``fast`` uses the block structure of SI, STSI and Poisson designs, where
  ``Delta = T.T @ T`` with ``T`` a per-stratum scaled centering (or a
  diagonal).  Every component is then a sum of squares of transformed
  margins or of the doubly transformed grid, in ``O(N_M N_D)``.

Two-stage designs: ``MD`` takes rows (maternities) as primary units and
draws the day sample independently inside each selected row; ``DM`` swaps
the roles.  The ``DM`` second-stage term pairs ``Y_ik`` with ``Y_jk`` (one
day, two maternities), which is what an enumeration of the ``DM`` scheme
reproduces.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .designs import DesignError, DesignSpec

__all__ = [
    "ExactVarianceReport",
    "SizeGuardError",
    "gamma",
    "expanded_population",
    "v_ccs",
    "v_ccs_generic",
    "v_ccs_syg",
    "decompose",
    "ccs_vs_dm_difference",
    "ccs_vs_dm_difference_fixed",
    "variance_ratio_sweep",
    "MAX_GENERIC_TERMS",
]

MAX_GENERIC_TERMS = 2 * 10**5


class SizeGuardError(DesignError):
    """Population too large for the literal quadruple-sum route."""


@dataclass(frozen=True)
class ExactVarianceReport:
    v_ccs: float
    v1: float
    v2: float
    v3: float
    v_md: float
    v_md_psu: float
    v_md_ssu: float
    v_dm: float
    v_dm_psu: float
    v_dm_ssu: float

    def to_dict(self) -> dict:
        return asdict(self)

    def identity_residuals(self) -> dict[str, float]:
        """Relative residuals of the decomposition identities (all ~0)."""

        def rel(a: float, b: float) -> float:
            scale = max(abs(a), abs(b), 1e-300)
            return abs(a - b) / scale

        return {
            "v_ccs=v1+v2-v3": rel(self.v_ccs, self.v1 + self.v2 - self.v3),
            "v_ccs=v_md_psu+v_dm_psu+v3": rel(self.v_ccs, self.v_md_psu + self.v_dm_psu + self.v3),
            "v1=v_md_psu+v3": rel(self.v1, self.v_md_psu + self.v3),
            "v2=v_dm_psu+v3": rel(self.v2, self.v_dm_psu + self.v3),
            "v_md=psu+ssu": rel(self.v_md, self.v_md_psu + self.v_md_ssu),
            "v_dm=psu+ssu": rel(self.v_dm, self.v_dm_psu + self.v_dm_ssu),
        }


def _grid(y) -> np.ndarray:
    return np.asarray(getattr(y, "values", y), dtype=float)


def _check(y: np.ndarray, dm: DesignSpec, dd: DesignSpec) -> None:
    if y.shape != (dm.population_size, dd.population_size):
        raise DesignError(
            f"grid is {y.shape[0]}x{y.shape[1]} but designs cover {dm.population_size}x{dd.population_size}"
        )
    if dm.pi.min() <= 0.0 or dd.pi.min() <= 0.0:
        raise DesignError("exact variances need positive inclusion probabilities")


def _guard(y: np.ndarray, limit: int) -> None:
    terms = (y.shape[0] * y.shape[1]) ** 2
    if terms > limit:
        raise SizeGuardError(f"generic route needs {terms:.3g} terms, limit is {limit:.3g}")


def gamma(dm: DesignSpec, dd: DesignSpec, i: int, j: int, k: int, l: int) -> float:
    """Covariance of the cell indicators of ``(i, k)`` and ``(j, l)``."""
    return dm.pi2(i, j) * dd.pi2(k, l) - dm.pi1(i) * dm.pi1(j) * dd.pi1(k) * dd.pi1(l)


def expanded_population(y, dm: DesignSpec, dd: DesignSpec) -> np.ndarray:
    yv = _grid(y)
    _check(yv, dm, dd)
    return yv / dm.pi[:, None] / dd.pi[None, :]


def _quad(a: np.ndarray, b: np.ndarray, ye: np.ndarray) -> float:
    """Literal ``sum_{i,j,k,l} a_ij b_kl ye_ik ye_jl``."""
    return float(np.einsum("ij,kl,ik,jl->", a, b, ye, ye, optimize=False))


def _rational(x) -> np.ndarray:
    return np.vectorize(Fraction, otypes=[object])(np.asarray(x, dtype=float))


def _dense(design: DesignSpec, exact: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    N = design.population_size
    if exact:
        pi = np.array([design.pi1_exact(i) for i in range(N)], dtype=object)
        pi2 = np.array([[design.pi2_exact(i, j) for j in range(N)] for i in range(N)], dtype=object)
    else:
        pi = np.array([design.pi1(i) for i in range(N)])
        pi2 = design.pi2_matrix()
    return pi, pi2, pi2 - np.outer(pi, pi)


def _exact_setup(y, dm: DesignSpec, dd: DesignSpec, max_terms: int):
    yv = _grid(y)
    _check(yv, dm, dd)
    _guard(yv, max_terms)
    m, d = _dense(dm, exact=True), _dense(dd, exact=True)
    ye = _rational(yv) / np.outer(m[0], d[0])
    return ye, m, d


def v_ccs_generic(y, dm: DesignSpec, dd: DesignSpec, max_terms: int = MAX_GENERIC_TERMS) -> float:
    """Variance of the HT total as the literal quadruple sum over ``Gamma``."""
    ye, (pm, pm2, _), (pd, pd2, _) = _exact_setup(y, dm, dd, max_terms)
    return _quad(pm2, pd2, ye) - _quad(np.outer(pm, pm), np.outer(pd, pd), ye)


def v_ccs_syg(y, dm: DesignSpec, dd: DesignSpec, max_terms: int = MAX_GENERIC_TERMS) -> float:
    """Sen-Yates-Grundy form of the variance; both designs must be fixed-size."""
    if not (dm.fixed_size and dd.fixed_size):
        raise DesignError("the Sen-Yates-Grundy form requires fixed-size designs in both dimensions")
    ye = expanded_population(y, dm, dd)
    _guard(ye, max_terms)
    pm, pm2, _ = _dense(dm)
    pd, pd2, _ = _dense(dd)
    outer_d = np.outer(pd, pd)
    total = 0.0
    for i in range(ye.shape[0]):
        # g[j, k, l] = Gamma_ijkl for the fixed row i
        g = pm2[i][:, None, None] * pd2[None] - (pm[i] * pm)[:, None, None] * outer_d[None]
        diff = ye[i][None, :, None] - ye[:, None, :]
        total += float(np.sum(g * diff * diff))
    return -0.5 * total


def v_ccs(y, dm: DesignSpec, dd: DesignSpec) -> float:
    return decompose(y, dm, dd).v_ccs


def _decompose_fast(ye: np.ndarray, dm: DesignSpec, dd: DesignSpec) -> ExactVarianceReport:
    pm, pd = dm.pi, dd.pi
    row_margin = ye @ pd  # Y_i. / pi_i
    col_margin = pm @ ye  # Y_.k / pi_k
    md_psu = float(np.sum(dm.delta_root(row_margin) ** 2))
    dm_psu = float(np.sum(dd.delta_root(col_margin) ** 2))
    t_d = dd.delta_root(ye, axis=1)
    t_m = dm.delta_root(ye, axis=0)
    v3 = float(np.sum(dm.delta_root(t_d, axis=0) ** 2))
    md_ssu = float(np.sum(pm[:, None] * t_d**2))
    dm_ssu = float(np.sum(pd[None, :] * t_m**2))
    return ExactVarianceReport(
        v_ccs=md_psu + dm_psu + v3,
        v1=md_psu + v3,
        v2=dm_psu + v3,
        v3=v3,
        v_md=md_psu + md_ssu,
        v_md_psu=md_psu,
        v_md_ssu=md_ssu,
        v_dm=dm_psu + dm_ssu,
        v_dm_psu=dm_psu,
        v_dm_ssu=dm_ssu,
    )


def _decompose_generic(y, dm: DesignSpec, dd: DesignSpec, max_terms: int) -> ExactVarianceReport:
    ye, (pm, pm2, delta_m), (pd, pd2, delta_d) = _exact_setup(y, dm, dd, max_terms)
    outer_m, outer_d = np.outer(pm, pm), np.outer(pd, pd)
    v_ccs_ = np.einsum("ij,kl,ik,jl->", pm2, pd2, ye, ye, optimize=False) - np.einsum(
        "ij,kl,ik,jl->", outer_m, outer_d, ye, ye, optimize=False
    )
    v1 = _quad(delta_m, pd2, ye)
    v2 = _quad(pm2, delta_d, ye)
    v3 = _quad(delta_m, delta_d, ye)
    md_psu = np.einsum("ij,kl,ik,jl->", delta_m, outer_d, ye, ye, optimize=False)
    md_ssu = np.einsum("i,kl,ik,il->", pm, delta_d, ye, ye, optimize=False)
    dm_psu = np.einsum("ij,kl,ik,jl->", outer_m, delta_d, ye, ye, optimize=False)
    dm_ssu = np.einsum("k,ij,ik,jk->", pd, delta_m, ye, ye, optimize=False)
    return ExactVarianceReport(
        v_ccs=float(v_ccs_),
        v1=v1,
        v2=v2,
        v3=v3,
        v_md=float(md_psu + md_ssu),
        v_md_psu=float(md_psu),
        v_md_ssu=float(md_ssu),
        v_dm=float(dm_psu + dm_ssu),
        v_dm_psu=float(dm_psu),
        v_dm_ssu=float(dm_ssu),
    )


def decompose(y, dm: DesignSpec, dd: DesignSpec, method: str = "fast", max_terms: int = MAX_GENERIC_TERMS) -> ExactVarianceReport:
    """All exact variance components of the HT total.

    Parameters
    ----------
    y : PopulationGrid or array
        Population values, ``N_M x N_D``.
    dm, dd : DesignSpec
        Row (maternity) and column (day) designs.
    method : {"fast", "generic"}
        ``fast`` for SI/STSI/Poisson in linear time; ``generic`` for the
        literal quadruple sums (size-guarded by ``max_terms``).
    """
    if method == "fast":
        return _decompose_fast(expanded_population(y, dm, dd), dm, dd)
    if method == "generic":
        return _decompose_generic(y, dm, dd, max_terms)
    raise ValueError(f"unknown method {method!r}")


def ccs_vs_dm_difference(y, dm: DesignSpec, dd: DesignSpec, method: str = "fast", max_terms: int = MAX_GENERIC_TERMS) -> float:
    """``V_CCS - V_DM`` as ``sum_ij Delta_ij^M sum_{k != l} pi_kl^D Yc_ik Yc_jl``.

    The fast route drops the ``k == l`` terms from ``V1`` (they are exactly
    the second-stage ``DM`` term); the generic route sums the off-diagonal
    day pairs literally.
    """
    if method == "fast":
        rep = _decompose_fast(expanded_population(y, dm, dd), dm, dd)
        return rep.v1 - rep.v_dm_ssu
    if method != "generic":
        raise ValueError(f"unknown method {method!r}")
    ye, (_, _, delta_m), (_, pd2, _) = _exact_setup(y, dm, dd, max_terms)
    np.fill_diagonal(pd2, Fraction(0))
    return _quad(delta_m, pd2, ye)


def ccs_vs_dm_difference_fixed(y, dm: DesignSpec, dd: DesignSpec, max_terms: int = MAX_GENERIC_TERMS) -> float:
    """Pairwise-difference form of ``V_CCS - V_DM``, valid when ``dm`` is fixed-size.

    ``sum_{i != j} (-Delta_ij / 2) sum_{k != l} pi_kl / (pi_k pi_l)
    (z_ik - z_jk)(z_il - z_jl)`` with ``z_ik = Y_ik / pi_i``.
    """
    if not dm.fixed_size:
        raise DesignError("the pairwise form needs a fixed-size row design")
    yv = _grid(y)
    _check(yv, dm, dd)
    _guard(yv, max_terms)
    pm, _, delta_m = _dense(dm, exact=True)
    pd, pd2, _ = _dense(dd, exact=True)
    z = _rational(yv) / pm[:, None]
    w = pd2 / np.outer(pd, pd)
    np.fill_diagonal(w, Fraction(0))
    total = Fraction(0)
    n = yv.shape[0]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = z[i] - z[j]
            total += delta_m[i, j] * d.dot(w).dot(d)
    return float(-total / 2)


def variance_ratio_sweep(y, sizes, method: str = "fast") -> list[dict]:
    """``V_MD / V_CCS`` in percent under SI in both dimensions.

    Returns one row per ``(n_m, n_d)`` pair with keys ``n_m``, ``n_d``,
    ``v_ccs``, ``v_md`` and ``ratio_pct``; the ratio is ``None`` when the
    CCS variance is zero (census in both dimensions).
    """
    yv = _grid(y)
    nm_pop, nd_pop = yv.shape
    rows = []
    for n_m, n_d in sizes:
        dm = DesignSpec.si(nm_pop, n_m)
        dd = DesignSpec.si(nd_pop, n_d)
        rep = decompose(yv, dm, dd, method=method)
        ratio = None if rep.v_ccs == 0.0 or not math.isfinite(rep.v_ccs) else 100.0 * rep.v_md / rep.v_ccs
        rows.append({"n_m": int(n_m), "n_d": int(n_d), "v_ccs": rep.v_ccs, "v_md": rep.v_md, "ratio_pct": ratio})
    return rows
