"""Acceptance criteria 1-9. Each test prints its measured values; the
verdict lines are collected in the terminal summary (see conftest.py)."""

import math
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

import test_properties as props
from rpselect.core import Dataset, Partition, cell_stats
from rpselect.diagnostics import (
    curve_schemes,
    delta_ideal,
    delta_penw,
    delta_penw_bar,
    ordering_report,
    penw_bracket,
)
from rpselect.penalties import (
    loo_weight_matrix,
    rp_penalty_closed,
    rp_penalty_mc,
    rp_penalty_weights,
    vfold_penalty,
)
from rpselect.simbench import preset, run_benchmark
from rpselect.weights import (
    Binomial,
    Efron,
    Hypergeometric,
    Loo,
    Poisson,
    PoissonLaw,
    Rademacher,
    Rho,
    c_w,
    einv,
    einv_hypergeom_table,
    loo_einv,
    verify_einv_bounds,
)

CLASSICAL = {"Efr": Efron(), "Rad": Rademacher(0.5), "Poi": Poisson(1.0), "Rho": Rho(), "Loo": Loo()}


def _band(report, res, token, centre, half):
    s = res[token]
    ok = abs(s.c_or - centre) <= half
    report(f"{token:8s} C_or = {s.c_or:.3f} +/- {s.c_or_se:.3f}   target {centre} +/- {half}   "
           f"{'in' if ok else 'OUT OF'} band")
    return ok


# -- 1 ------------------------------------------------------------------------

@pytest.mark.criterion(1, "S1 C_or values (penLoo, penRad, Mal, penRad+)")
def test_criterion_1_s1(report):
    t0 = time.perf_counter()
    res = run_benchmark(preset("s1", procedures=["penloo", "penrad", "mallows", "penrad+"]))
    elapsed = time.perf_counter() - t0
    checks = [_band(report, res, "penloo", 2.080, 0.12), _band(report, res, "penrad", 1.973, 0.12),
              _band(report, res, "mallows", 1.928, 0.12), _band(report, res, "penrad+", 1.799, 0.09)]
    report(f"runtime {elapsed:.1f} s (limit 120 s)")
    assert all(checks)
    assert elapsed < 120


# -- 2 ------------------------------------------------------------------------

@pytest.mark.criterion(2, "HSd2 C_or values (penRad, penEfr, Mal)")
def test_criterion_2_hsd2(report):
    t0 = time.perf_counter()
    res = run_benchmark(preset("hsd2", procedures=["penrad", "penefr", "mallows", "eideal"]))
    elapsed = time.perf_counter() - t0
    checks = [_band(report, res, "penrad", 1.102, 0.012), _band(report, res, "penefr", 1.114, 0.015),
              _band(report, res, "mallows", 1.373, 0.03)]
    s = res["eideal"]
    report(f"(reference) eideal C_or = {s.c_or:.3f} +/- {s.c_or_se:.3f}, penRad band centre 1.102")
    report(f"RP beats Mallows: {res['penrad'].c_or < res['mallows'].c_or}")
    report(f"runtime {elapsed:.1f} s (limit 600 s)")
    assert elapsed < 600
    assert all(checks)


# -- 3 ------------------------------------------------------------------------

@pytest.mark.criterion(3, "S2 ranking: Mal > penRad > penRad+, paired 3-sigma")
def test_criterion_3_s2_ranking(report):
    res = run_benchmark(preset("s2", procedures=["mallows", "penrad", "penrad+"]))
    for tok in ("mallows", "penrad", "penrad+"):
        report(f"{tok:8s} C_or = {res[tok].c_or:.3f} +/- {res[tok].c_or_se:.3f}")
    d1, se1 = res.paired_difference("mallows", "penrad")
    d2, se2 = res.paired_difference("penrad+", "penrad")
    report(f"C_or(Mal) - C_or(penRad)   = {d1:+.3f} +/- {se1:.3f}  ({d1 / se1:+.1f} sigma)")
    report(f"C_or(penRad+) - C_or(penRad) = {d2:+.3f} +/- {se2:.3f}  ({d2 / se2:+.1f} sigma)")
    assert d1 > 3 * se1
    assert d2 < -3 * se2


# -- 4 ------------------------------------------------------------------------

@pytest.mark.criterion(4, "closed form vs Monte-Carlo resampling penalty")
def test_criterion_4_closed_vs_mc(report):
    rng = np.random.default_rng(20240401)
    names = list(CLASSICAL)
    z_exact, z_tab = [], []
    t = 0
    while t < 50:
        n = int(rng.integers(20, 201))
        D = int(rng.integers(1, n // 4 + 1))
        d = Dataset(rng.random(n), rng.normal() * 5 + rng.uniform(0.5, 3) * rng.normal(size=n))
        p = Partition.regular(D)
        st = cell_stats(d, p)
        if st.count.min() < 3:
            continue
        scheme = CLASSICAL[names[t % 5]]
        C = c_w(scheme, n)
        mc = rp_penalty_mc(d, p, scheme, C, 10_000, rng)
        exact = rp_penalty_closed(st, scheme, C, zero_events=False)
        tab = rp_penalty_closed(st, scheme, C)
        z_exact.append(abs(mc.value - exact) / mc.se)
        z_tab.append((abs(mc.value - tab) / mc.se, names[t % 5], int(st.count.min())))
        t += 1
    report(f"50 triples, B = 10^4: max |MC - closed| = {max(z_exact):.2f} jackknife SE "
           f"(closed form without the zero-weight share of R2)")
    worst = max(z_tab)
    report(f"with the tabulated R2 as is: max {worst[0]:.2f} SE ({worst[1]}, smallest cell {worst[2]} points); "
           f"{sum(z[0] > 4 for z in z_tab)} of 50 beyond 4 SE")

    worst_loo = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        n = int(r.integers(5, 80))
        d = Dataset(r.random(n), r.normal(size=n) * 3 + 7)
        p = Partition.regular(int(r.integers(1, 6)))
        a = rp_penalty_weights(d, p, loo_weight_matrix(n), n - 1).value
        b = rp_penalty_closed(cell_stats(d, p), Loo(), n - 1)
        worst_loo = max(worst_loo, abs(a - b))
    report(f"Loo exhaustive enumeration: max |diff| = {worst_loo:.2e} (tol 1e-10)")
    assert max(z_exact) <= 4
    assert worst_loo <= 1e-10


# -- 5 ------------------------------------------------------------------------

@pytest.mark.criterion(5, "V-fold penalty at V = n equals the Loo penalty")
def test_criterion_5_vfold_loo_identity(report):
    rng = np.random.default_rng(5)
    worst, done = 0.0, 0
    while done < 100:
        n = int(rng.integers(4, 61))
        d = Dataset(rng.random(n), rng.normal(size=n) * rng.uniform(0.1, 10))
        p = Partition.regular(int(rng.integers(1, max(2, n // 4))))
        if cell_stats(d, p).count.min() < 2:
            continue
        a = vfold_penalty(d, p, n, n - 1, np.arange(n))
        b = rp_penalty_closed(cell_stats(d, p), Loo(), n - 1)
        worst = max(worst, abs(a - b))
        done += 1
    report(f"100 datasets, n <= 60: max |diff| = {worst:.2e} (tol 1e-10)")
    assert worst <= 1e-10


# -- 6 ------------------------------------------------------------------------

def _hyper_fraction(n, r, q):
    total = math.comb(n, q)
    ks = range(max(1, q - (n - r)), min(r, q) + 1)
    inv = sum(Fraction(math.comb(r, k) * math.comb(n - r, q - k), total * k) for k in ks)
    ppos = sum(Fraction(math.comb(r, k) * math.comb(n - r, q - k), total) for k in ks)
    return Fraction(q * r, n) * inv / ppos


def _binom_mp(n, p):
    mpmath.mp.dps = 40
    p = mpmath.mpf(p)
    inv = mpmath.fsum(mpmath.binomial(n, k) * p**k * (1 - p) ** (n - k) / k for k in range(1, n + 1))
    return n * p * inv / (1 - (1 - p) ** n)


def _poisson_mp(mu):
    mpmath.mp.dps = 40
    mu = mpmath.mpf(mu)
    inv, k = mpmath.mpf(0), 1
    while True:
        pmf = mpmath.exp(-mu) * mu**k / mpmath.factorial(k)
        inv += pmf / k
        if k > mu and pmf < mpmath.mpf(10) ** -35:
            break
        k += 1
    return mu * inv / (1 - mpmath.exp(-mu))


@pytest.mark.criterion(6, "e_inv bounds, Loo identity, brute-force pmf agreement")
def test_criterion_6_einv(report):
    rep = verify_einv_bounds()
    checked = sum(f.checked for f in rep.families.values())
    report(f"{checked} bound evaluations in {len(rep.families)} families, {len(rep.failures)} violations")

    worst_id = 0.0
    for n in range(2, 201):
        table = einv_hypergeom_table(n)
        r = np.arange(1, n + 1)
        closed = np.array([float(loo_einv(n, int(k))) for k in r])
        worst_id = max(worst_id, float(np.max(np.abs(table[r, n - 1] - closed))))
    report(f"Loo identity, n <= 200 all r: max |diff| = {worst_id:.2e} (tol 1e-12)")

    rng = np.random.default_rng(6)
    rel = 0.0
    for n in list(range(3, 201, 7)) + [200]:
        for p in (0.02, 1 / n, 0.3, 0.5, 0.77):
            exact = float(_binom_mp(n, p))
            rel = max(rel, abs(einv(Binomial(n, p)) - exact) / exact)
    for n in range(2, 26):
        for r_ in range(1, n + 1):
            for q in range(1, n + 1):
                exact = float(_hyper_fraction(n, r_, q))
                rel = max(rel, abs(einv(Hypergeometric(n, r_, q)) - exact) / exact)
    for n, r_, q in rng.integers(1, 201, size=(300, 3)):
        n = int(max(n, r_, q))
        exact = float(_hyper_fraction(n, int(r_), int(q)))
        rel = max(rel, abs(einv(Hypergeometric(n, int(r_), int(q))) - exact) / exact)
    for mu in np.round(np.arange(0.1, 50.01, 0.7), 1):
        exact = float(_poisson_mp(mu))
        rel = max(rel, abs(einv(PoissonLaw(float(mu))) - exact) / exact)
    report(f"brute-force pmf oracles: max relative diff = {rel:.2e} (tol 1e-10)")
    assert rep.all_passed
    assert worst_id <= 1e-12
    assert rel <= 1e-10


# -- 7 ------------------------------------------------------------------------

@pytest.mark.criterion(7, "conditional unbiasedness at C = C_W, heteroscedastic fixed design")
def test_criterion_7_unbiasedness(report):
    counts = [2, 3, 4, 6, 10, 25, 50]
    n = sum(counts)
    bounds = np.r_[0, np.cumsum(counts)] / n
    part = Partition(bounds)
    rng = np.random.default_rng(7)
    # fixed design: x spread inside each cell
    x = np.concatenate([a + (b - a) * (np.arange(k) + 0.5) / k for a, b, k in zip(bounds[:-1], bounds[1:], counts)])
    idx = part.locate(x)
    level = np.repeat(np.arange(len(counts), dtype=float), counts)
    sigma = 0.2 + x  # heteroscedastic
    sig2_cell = np.bincount(idx, weights=sigma**2) / np.bincount(idx)
    R = 10_000
    y = level + sigma * rng.standard_normal((R, n))
    ok = True
    for name, scheme in CLASSICAL.items():
        C = c_w(scheme, n)
        target = sum((2 + delta_penw(scheme, n, k)) * s2 for k, s2 in zip(counts, sig2_cell)) / n
        vals = np.array([rp_penalty_closed(cell_stats(Dataset(x, row), part), scheme, C) for row in y])
        m, se = vals.mean(), vals.std(ddof=1) / math.sqrt(R)
        z = (m - target) / se
        ok &= abs(z) <= 4
        report(f"{name}: mean {m:.6f}  formula {target:.6f}  ({z:+.2f} SE)")
    assert ok


# -- 8 ------------------------------------------------------------------------

@pytest.mark.criterion(8, "second-order bias: Efr below ideal, Loo tracks ideal, brackets")
def test_criterion_8_diagnostics(report):
    n = 200
    grid = range(3, n + 1)
    efr = [delta_penw_bar(Efron(), n, k / n) for k in grid]
    ideal = [delta_ideal(n, k / n) for k in grid]
    efr_ok = all(v < 0 for v in efr)
    ideal_pos = all(v > 0 for v in ideal[:-1])
    report(f"max delta_bar(Efr) = {max(efr):.4f} < 0: {efr_ok}; delta_ideal > 0 for np = 3..199: {ideal_pos}; "
           f"delta_ideal at np = n (p = 1) is {ideal[-1]}")
    loo_gap = max(abs(delta_penw_bar(Loo(), n, k / n) - delta_ideal(n, k / n)) for k in range(10, n + 1))
    report(f"max |delta_bar(Loo) - delta_ideal| over np >= 10: {loo_gap:.2e} (tol 0.1)")
    bad = 0
    for scheme in (Efron(), Rademacher(0.5), Poisson(1.0), Loo()):
        for k in grid:
            lo, up = penw_bracket(scheme, n, k)
            v = delta_penw(scheme, n, k)
            bad += not (lo - 1e-12 <= v <= up + 1e-12)
    report(f"bracket violations (Efr, Rad, Poi, Loo on np = 3..200): {bad}")
    signs = ordering_report(n).sign_pattern()
    for name in curve_schemes():
        s = signs[name]
        report(f"(reported) {name:4s} above ideal at {int((s > 0).sum())}/{s.size} points, "
               f"below at {int((s < 0).sum())}")
    assert efr_ok and ideal_pos and ideal[-1] == 0
    assert loo_gap <= 0.1
    assert bad == 0


# -- 9 ------------------------------------------------------------------------

PROPERTY_TESTS = [
    props.test_centering_invariance,
    props.test_nonnegativity,
    props.test_expected_ideal_nonnegative,
    props.test_linearity_in_c,
    props.test_expected_ideal_linear_in_c,
    props.test_rho_n_minus_one_is_loo,
    props.test_thread_determinism,
]


@pytest.mark.criterion(9, "property suite, 1000 randomized cases each")
def test_criterion_9_properties(report):
    failed = []
    for fn in PROPERTY_TESTS:
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - collect every failing property
            failed.append(f"{fn.__name__}: {type(e).__name__}")
    report(f"{len(PROPERTY_TESTS) - len(failed)} of {len(PROPERTY_TESTS)} properties hold")
    report("V-fold penalty excluded from nonnegativity: it can be negative (see test_vfold_penalty_can_be_negative)")
    for f in failed:
        report(f"failed: {f}")
    assert not failed
