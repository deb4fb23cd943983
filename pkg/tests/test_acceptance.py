"""Acceptance criteria 1-10.

Each test prints ``criterion N: PASS|FAIL <detail>`` and the lines are
repeated in an "acceptance criteria" section at the end of the pytest run.
Criteria 4, 5, 6, 8 and 10 are Monte Carlo runs of a few minutes each; they
carry the ``slow`` marker but stay in the default run.
"""

import itertools
import os
import time

import numpy as np
import pytest

import oracles
from ccsampling.bias import BiasInputs, closed_form_rb
from ccsampling.designs import CrossSample, DesignSpec, enumerate_cross
from ccsampling.estimation import ht_total
from ccsampling.exact import (
    ccs_vs_dm_difference,
    ccs_vs_dm_difference_fixed,
    decompose,
    v_ccs_generic,
    variance_ratio_sweep,
)
from ccsampling.montecarlo import (
    ExperimentSpec,
    model_bias_experiment,
    run_experiment,
    table1_matrix,
    table2_matrix,
)
from ccsampling.population import ModelParams, generate_grid
from ccsampling.varest import v_ht, v_yg

TOL = 1e-9
EXACT_FIELDS = ("v_ccs", "v1", "v2", "v3", "v_md", "v_md_psu", "v_md_ssu", "v_dm", "v_dm_psu", "v_dm_ssu")


def rel(a: float, b: float, floor: float = 0.0) -> float:
    scale = max(abs(a), abs(b), floor)
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def oracle_support(d: DesignSpec):
    if d.kind == "poisson":
        return oracles.poisson_support(list(d.pi))
    return oracles.stsi_support(d.strata)


# -- 1 ------------------------------------------------------------------------

def two_strata(N: int) -> DesignSpec:
    # every stratum with a sampled pair or a full take, so all joint
    # probabilities inside the sample are positive
    return DesignSpec.stsi([(1, 1), (N - 1, 2)])


def test_criterion_1_enumeration_unbiasedness(criterion_line):
    t0 = time.perf_counter()
    worst = {"t": 0.0, "ht": 0.0, "yg": 0.0, "oracle": 0.0}
    cases = 0
    for (nm, nd), family in itertools.product(itertools.product((3, 4), repeat=2), ("si", "stsi", "poisson")):
        make = {
            "si": lambda N: DesignSpec.si(N, 2),
            "stsi": two_strata,
            "poisson": lambda N: DesignSpec.poisson([0.6] * N),
        }[family]
        dm, dd = make(nm), make(nd)
        Y = generate_grid(ModelParams(200, 5, 5, 5, nm, nd, seed=cases)).values
        cases += 1
        sm, sd = oracle_support(dm), oracle_support(dd)
        pim, pi2m = oracles.inclusion(sm, nm)
        pid, pi2d = oracles.inclusion(sd, nd)
        v_enum = oracles.enumeration_variance(Y, sm, sd, pim, pid)
        v_lib = decompose(Y, dm, dd, method="generic").v_ccs
        # a census has zero variance; measure against the size of the squared
        # expanded values, which is where rounding in the sums lives
        floor = float(np.sum((Y / np.outer(pim, pid)) ** 2)) * 1e-6
        worst["oracle"] = max(worst["oracle"], rel(v_enum, v_lib, floor))
        e_t = e_ht = e_yg = e_lit = 0.0
        for s, p in enumerate_cross(dm, dd):
            e_t += p * ht_total(Y, dm, dd, s).t_hat
            e_ht += p * v_ht(Y, dm, dd, s).total
            if dm.fixed_size and dd.fixed_size:
                e_yg += p * v_yg(Y, dm, dd, s).total
        # second route: oracle-enumerated samples and literal estimator sums
        for rows, cols, p in oracles.cross_support(sm, sd):
            e_lit += p * oracles.v_ht_literal(Y, rows, cols, pim, pi2m, pid, pi2d)[0]
        worst["t"] = max(worst["t"], rel(e_t, Y.sum()))
        worst["ht"] = max(worst["ht"], rel(e_ht, v_enum, floor), rel(e_lit, v_enum, floor))
        if dm.fixed_size and dd.fixed_size:
            worst["yg"] = max(worst["yg"], rel(e_yg, v_enum, floor))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < TOL and elapsed < 1.0
    detail = (f"{cases} grid/design cases; max rel err E[t]={worst['t']:.1e} E[V_HT]={worst['ht']:.1e} "
              f"E[V_YG]={worst['yg']:.1e} library-vs-oracle V={worst['oracle']:.1e}; {elapsed:.2f}s")
    criterion_line(1, ok, detail)
    assert ok, detail


# -- 2 ------------------------------------------------------------------------

def random_design(rng: np.random.Generator, N: int, kinds=("si", "stsi", "poisson")) -> DesignSpec:
    kind = kinds[rng.integers(len(kinds))]
    if kind == "si":
        return DesignSpec.si(N, int(rng.integers(1, N + 1)))
    if kind == "poisson":
        return DesignSpec.poisson(rng.uniform(0.1, 1.0, N))
    if N < 2:
        return DesignSpec.stsi([(1, 1)])
    cut = int(rng.integers(1, N))
    return DesignSpec.stsi([(cut, int(rng.integers(1, cut + 1))), (N - cut, int(rng.integers(1, N - cut + 1)))])


def residual(lhs: float, *terms: float) -> float:
    """Relative residual of ``lhs == sum(terms)`` on the scale of its largest member."""
    scale = max(abs(lhs), *(abs(t) for t in terms))
    return 0.0 if scale == 0.0 else abs(lhs - sum(terms)) / scale


def test_criterion_2_identity_suite(criterion_line):
    rng = np.random.default_rng(20240601)
    worst = dict.fromkeys(("three_part", "md_dm_split", "v1", "v2", "ccs_minus_dm", "pairwise_diff"), 0.0)
    grids = 0
    for g in range(60):
        nm, nd = (int(v) for v in rng.integers(2, 6, 2))
        # every other row design fixed-size so the pairwise form is exercised
        dm = random_design(rng, nm, ("si", "stsi") if g % 2 == 0 else ("si", "stsi", "poisson"))
        dd = random_design(rng, nd)
        Y = rng.normal(50, 10, (nm, nd))
        rep = decompose(Y, dm, dd, method="generic")
        v_ccs = v_ccs_generic(Y, dm, dd)
        if v_ccs == 0.0:
            continue
        grids += 1
        worst["three_part"] = max(worst["three_part"], residual(v_ccs, rep.v1, rep.v2, -rep.v3))
        worst["md_dm_split"] = max(worst["md_dm_split"], residual(v_ccs, rep.v_md_psu, rep.v_dm_psu, rep.v3))
        worst["v1"] = max(worst["v1"], residual(rep.v1, rep.v_md_psu, rep.v3))
        worst["v2"] = max(worst["v2"], residual(rep.v2, rep.v_dm_psu, rep.v3))
        diff = ccs_vs_dm_difference(Y, dm, dd, method="generic")
        worst["ccs_minus_dm"] = max(worst["ccs_minus_dm"], residual(diff, v_ccs, -rep.v_dm))
        if dm.fixed_size:
            worst["pairwise_diff"] = max(worst["pairwise_diff"], residual(diff, ccs_vs_dm_difference_fixed(Y, dm, dd)))
    ok = grids >= 50 and max(worst.values()) < TOL
    detail = f"{grids} random grids; max rel residuals " + " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    criterion_line(2, ok, detail)
    assert ok, detail


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_fast_path_equivalence(criterion_line):
    rng = np.random.default_rng(7)
    worst_exact, worst_ht, worst_yg = 0.0, 0.0, 0.0
    n_cases = 0
    for case in range(120):
        nm, nd = (int(v) for v in rng.integers(2, 7, 2))
        dm, dd = random_design(rng, nm), random_design(rng, nd)
        Y = generate_grid(ModelParams(200, 5, 5, 5, nm, nd, seed=case)).values
        fast, slow = decompose(Y, dm, dd, "fast"), decompose(Y, dm, dd, "generic")
        for key in EXACT_FIELDS:
            worst_exact = max(worst_exact, rel(getattr(fast, key), getattr(slow, key)))
        s = CrossSample(dm.draw(rng), dd.draw(rng))
        if min(s.shape) == 0:
            continue
        n_cases += 1
        for a, b in zip(v_ht(Y, dm, dd, s)[1:], v_ht(Y, dm, dd, s, "generic")[1:]):
            worst_ht = max(worst_ht, rel(a, b))
        if dm.fixed_size and dd.fixed_size:
            for a, b in zip(v_yg(Y, dm, dd, s)[1:], v_yg(Y, dm, dd, s, "generic")[1:]):
                worst_yg = max(worst_yg, rel(a, b))
    ok = max(worst_exact, worst_ht, worst_yg) < TOL
    detail = (f"{n_cases} sampled cases up to 6x6 (SI/STSI/Poisson); max rel err exact components={worst_exact:.1e} "
              f"HT components={worst_ht:.1e} YG components={worst_yg:.1e}")
    criterion_line(3, ok, detail)
    assert ok, detail


# -- 4 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_closed_form_bias_vs_monte_carlo(criterion_line):
    t0 = time.perf_counter()
    params = ModelParams(200, 5, 5, 5, 200, 200, seed=1)
    mc = model_bias_experiment(params, 5, 5, populations=20, samples=2000, seed=4)
    cf = closed_form_rb(BiasInputs(1, 1, 5, 5, 200, 200))
    parts, ok = [], True
    for name, ref in (("v_simp1", cf.rb1), ("v_simp2", cf.rb2), ("v_simp3", cf.rb3)):
        z = (mc[name]["rb"] - ref) / mc[name]["se"]
        ok &= abs(z) <= 3
        parts.append(f"{name} mc={mc[name]['rb']:+.4f} closed={ref:+.4f} z={z:+.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    detail = "; ".join(parts) + f"; {elapsed:.0f}s"
    criterion_line(4, ok, detail)
    assert ok, detail


# -- 5 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_table1_reproduction(criterion_line):
    workers = os.cpu_count() or 1
    configs = ((5.0, 5.0), (0.5, 0.5), (50.0, 5.0))
    specs = table1_matrix(sizes=((5, 5),), configs=configs, reps=10_000, truth_reps=50_000, seed=0)
    s55, s05, s50 = (run_experiment(spec, workers) for spec in specs)
    checks = [
        ("sigma=(5,5) RB(V_HT)", s55.rb_mc["v_ht"], -5, 5),
        ("sigma=(5,5) RB(SIMP1)", s55.rb_mc["v_simp1"], -53, -35),
        ("sigma=(5,5) RB(SIMP3)", s55.rb_mc["v_simp3"], 2, 19),
        ("sigma=(0.5,0.5) NEG/B", s05.neg_count["v_ht"] / 10_000, 0.11, 0.17),
        ("sigma_m=50 RB(SIMP2)", s50.rb_mc["v_simp2"], -100, -96),
    ]
    ok = all(lo <= v <= hi for _, v, lo, hi in checks)
    detail = "; ".join(f"{name}={v:.3g} in [{lo}, {hi}]" for name, v, lo, hi in checks)
    criterion_line(5, ok, detail)
    assert ok, detail


# -- 6 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_table2_reproduction(criterion_line):
    workers = os.cpu_count() or 1
    specs = table2_matrix(sizes=((5, 5),), configs=(("i", 5.0), ("ii", 50.0)), reps=10_000, truth_reps=50_000, seed=0)
    case_i, case_ii = (run_experiment(spec, workers) for spec in specs)
    simp3, simp2 = case_i.rb_mc["v_simp3"], case_ii.rb_mc["v_simp2"]
    ok = 84 <= simp3 <= 114 and simp2 <= -80 and case_i.skipped == 0 and case_ii.skipped == 0
    detail = f"case (i) RB(SIMP3)={simp3:.1f} in [84, 114]; case (ii) sigma_m=50 RB(SIMP2)={simp2:.1f} <= -80"
    criterion_line(6, ok, detail)
    assert ok, detail


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_design_comparison(criterion_line):
    t0 = time.perf_counter()
    y = generate_grid(ModelParams(200, 5, 5, 5, 1000, 1000, seed=1))
    sizes = (5, 10, 100, 500)
    table = {(r["n_m"], r["n_d"]): r["ratio_pct"] for r in variance_ratio_sweep(y, list(itertools.product(sizes, sizes)))}
    below = all(v < 100 for v in table.values())
    up_in_nd = all(table[(a, b1)] < table[(a, b2)] for a in sizes for b1, b2 in zip(sizes, sizes[1:]))
    down_in_nm = all(table[(m1, b)] > table[(m2, b)] for b in sizes for m1, m2 in zip(sizes, sizes[1:]))
    elapsed = time.perf_counter() - t0
    ok = below and up_in_nd and down_in_nm
    detail = (f"V_MD/V_CCS range {min(table.values()):.1f}%..{max(table.values()):.1f}%; all<100: {below}; "
              f"increasing in n_D: {up_in_nd}; decreasing in n_M: {down_in_nm}; {elapsed:.1f}s")
    criterion_line(7, ok, detail)
    assert ok, detail


# -- 8 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_coverage(criterion_line):
    y = generate_grid(ModelParams(200, 5, 5, 5, 1000, 1000, seed=1))
    spec = ExperimentSpec(y, DesignSpec.si(1000, 100), DesignSpec.si(1000, 100), reps=5000,
                          truth="exact", ci_level=0.95, seed=8)
    cov = run_experiment(spec, os.cpu_count() or 1).coverage
    ok = 0.93 <= cov <= 0.99
    detail = f"SI(100)^2, B=5000: 95% SIMP3 interval coverage {cov:.4f} in [0.93, 0.99]"
    criterion_line(8, ok, detail)
    assert ok, detail


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_determinism(criterion_line):
    y = generate_grid(ModelParams(200, 5, 5, 5, 150, 150, seed=9))
    pair = table2_matrix(size=60, sizes=((6, 6),), configs=(("ii", 5.0),), reps=300, truth_reps=400, seed=9)[0]
    specs = [
        ExperimentSpec(y, DesignSpec.si(150, 10), DesignSpec.stsi([(75, 4), (75, 6)]), reps=600, truth_reps=900,
                       seed=99, ci_level=0.95),
        pair,
    ]
    ok = True
    for spec in specs:
        outputs = {w: run_experiment(spec, workers=w).to_json(timing=False) for w in (1, 2, 3)}
        ok &= len(set(outputs.values())) == 1
        ok &= run_experiment(spec, workers=1).to_json(timing=False) == outputs[1]
    detail = "summary JSON bit-identical for workers 1, 2, 3 and on re-run (total and ratio targets)"
    criterion_line(9, ok, detail)
    assert ok, detail


# -- 10 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_performance(criterion_line):
    workers = os.cpu_count() or 1
    spec = table1_matrix(sizes=((500, 500),), configs=((5.0, 5.0),), reps=10_000, truth_reps=50_000, seed=0)[0]
    t0 = time.perf_counter()
    summary = run_experiment(spec, workers)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 600 and summary.skipped == 0
    detail = (f"SI(500)^2 cell, B=10000 + 50000 truth draws on {workers} CPU(s): {elapsed:.0f}s (< 600s); "
              f"RB(V_HT)={summary.rb_mc['v_ht']:.1f} RB(SIMP3)={summary.rb_mc['v_simp3']:.1f}")
    criterion_line(10, ok, detail)
    assert ok, detail
