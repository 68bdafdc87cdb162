import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from scipy import stats

from rpselect.weights import (
    Binomial,
    Efron,
    Hypergeometric,
    Loo,
    Poisson,
    PoissonLaw,
    Rademacher,
    Rho,
    VFoldSub,
    c_w,
    einv,
    einv_hypergeom_table,
    fold_assignment,
    loo_einv,
    query_checks,
    r1w,
    r2w,
    r2w_zero_mass,
    resampling_factor_table,
    sample_weights,
)


# -- brute-force oracles ------------------------------------------------------

def einv_hyper_exact(n, r, q) -> Fraction:
    total = math.comb(n, q)
    ks = range(max(1, q - (n - r)), min(r, q) + 1)
    inv = sum(Fraction(math.comb(r, k) * math.comb(n - r, q - k), total * k) for k in ks)
    ppos = sum(Fraction(math.comb(r, k) * math.comb(n - r, q - k), total) for k in ks)
    return Fraction(q * r, n) * inv / ppos


def einv_binom_mp(n, p):
    mpmath.mp.dps = 40
    p = mpmath.mpf(p)
    inv = mpmath.fsum(mpmath.binomial(n, k) * p**k * (1 - p) ** (n - k) / k for k in range(1, n + 1))
    return n * p * inv / (1 - (1 - p) ** n)


def einv_poisson_mp(mu):
    mpmath.mp.dps = 40
    mu = mpmath.mpf(mu)
    inv, k, term = mpmath.mpf(0), 1, mpmath.mpf(1)
    while True:
        pmf = mpmath.exp(-mu) * mu**k / mpmath.factorial(k)
        inv += pmf / k
        if k > mu and pmf < mpmath.mpf(10) ** -35:
            break
        k += 1
    return mu * inv / (1 - mpmath.exp(-mu))


# -- C_W and e_inv ------------------------------------------------------------

def test_c_w_table():
    assert c_w(Efron(), 37) == 1
    assert c_w(Efron(10), 40) == 0.25
    assert c_w(Rademacher(0.5), 10) == 1
    assert c_w(Rademacher(0.2), 10) == pytest.approx(0.25)
    assert c_w(Poisson(2.5), 10) == 2.5
    assert c_w(Rho(q=3), 10) == pytest.approx(3 / 7)
    assert c_w(Rho(), 200) == 1
    assert c_w(Loo(), 100) == 99
    with pytest.raises(ValueError):
        c_w(Rho(q=10), 10)


def test_einv_examples():
    assert einv(Binomial(17, 1.0)) == 1.0
    assert einv(Binomial(1, 0.3)) == pytest.approx(0.3, abs=1e-15)
    assert einv(Hypergeometric(10, 1, 9)) == pytest.approx(0.9, abs=1e-14)
    assert einv(PoissonLaw(3.0)) == pytest.approx(float(einv_poisson_mp(3.0)), rel=1e-12)


@pytest.mark.parametrize("n", [3, 7, 20, 64, 131, 200])
def test_einv_binomial_oracle(n):
    for p in (0.01, 0.1, 1 / n, 0.37, 0.5, 0.9, 0.999):
        exact = float(einv_binom_mp(n, p))
        assert einv(Binomial(n, p)) == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("n", [2, 5, 13, 40, 97, 200])
def test_einv_hypergeom_oracle(n):
    rng = np.random.default_rng(n)
    table = einv_hypergeom_table(n)
    pairs = {(1, 1), (n, n), (1, n - 1), (n // 2 or 1, n // 2 or 1)}
    pairs |= {(int(r), int(q)) for r, q in rng.integers(1, n + 1, size=(25, 2))}
    for r, q in pairs:
        exact = float(einv_hyper_exact(n, r, q))
        assert einv(Hypergeometric(n, r, q)) == pytest.approx(exact, rel=1e-10)
        assert table[r, q] == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("mu", [0.1, 0.5, 1.0, 3.7, 12.0, 50.0])
def test_einv_poisson_oracle(mu):
    assert einv(PoissonLaw(mu)) == pytest.approx(float(einv_poisson_mp(mu)), rel=1e-10)


def test_loo_identity_exact():
    for n in (2, 3, 10, 50, 199):
        for r in range(1, n + 1):
            assert float(loo_einv(n, r)) == pytest.approx(float(einv_hyper_exact(n, r, n - 1)), abs=1e-12)
    v = einv(Hypergeometric(50, 20, 49))
    assert v == pytest.approx(1 + (49 * 20 / (50 * 19) - 1) / 50, abs=1e-12)


def test_query_checks():
    assert all(c.passed for c in query_checks(Binomial(100, 0.5), einv(Binomial(100, 0.5))))
    v = einv(Binomial(100, 0.5))
    assert 1 <= v <= 2.0003
    v = einv(PoissonLaw(5.0))
    assert 1 <= v <= min(2 - 2 * math.exp(-10), 1 + 2 * (1 + math.exp(-3)) / 3)
    checks = query_checks(Hypergeometric(50, 20, 49), einv(Hypergeometric(50, 20, 49)))
    assert any(c.bound == "hypergeom loo exact" and c.passed for c in checks)


def test_invalid_laws():
    with pytest.raises(ValueError):
        einv(Binomial(0, 0.5))
    with pytest.raises(ValueError):
        einv(Hypergeometric(5, 6, 2))
    with pytest.raises(ValueError):
        einv(PoissonLaw(0.0))


# -- R1, R2 -------------------------------------------------------------------

def test_r_constants_examples():
    assert r2w(Rademacher(0.5), 30, 4) == pytest.approx(1)
    assert r2w(Efron(), 30, 1) == 0
    assert r1w(Loo(), 10, 3) == pytest.approx(0.15)
    assert r1w(Loo(), 10, 1) == 0
    assert r2w(Loo(), 10, 3) == pytest.approx(1 / 9)
    expected = 2 * float(einv_hyper_exact(10, 4, 5)) - 1
    assert r1w(Rho(q=5), 10, 4) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        r1w(VFoldSub(5), 10, 3)
    with pytest.raises(ValueError):
        r2w(Loo(), 10, 0)


def test_zero_mass_examples():
    # Rad(p): the cell is empty with probability (1-p)^k and R_V / W_hat -> 1/p there
    assert r2w_zero_mass(Rademacher(0.5), 10, 3) == pytest.approx(0.25)
    assert r2w_zero_mass(Poisson(2.0), 10, 4) == pytest.approx(0.75 / 2 * math.exp(-8))
    expected = 2 * math.comb(6, 5) / math.comb(10, 5)
    assert r2w_zero_mass(Rho(q=5), 10, 4) == pytest.approx(expected)
    assert r2w_zero_mass(Loo(), 10, 2) == 0
    assert r2w_zero_mass(Efron(), 10, 10) == 0


def test_loo_equals_rho_n_minus_one():
    for n in (5, 30, 120):
        a = resampling_factor_table(Loo(), n)
        b = resampling_factor_table(Rho(q=n - 1), n)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
        assert c_w(Loo(), n) == pytest.approx(c_w(Rho(q=n - 1), n))


@pytest.mark.parametrize("scheme", [Efron(), Efron(7), Rademacher(0.5), Rademacher(0.3), Poisson(1.0),
                                    Poisson(2.0), Rho(), Rho(q=4), Loo()])
def test_r_constants_monte_carlo(scheme):
    """R1, R2 against direct simulation of (W_1 - W_hat)^2 / W_hat^j over a cell.

    The simulated R2 term vanishes on draws where the cell gets no weight,
    so it is compared with r2w minus its zero-weight share.
    """
    n, k = 12, 5
    rng = np.random.default_rng(11)
    w = sample_weights(scheme, n, rng, size=200_000)[:, :k]
    wh = w.mean(axis=1)
    pos = wh > 0
    d2 = (w[:, 0] - wh) ** 2
    r1 = d2[pos] / wh[pos] ** 2
    r2 = np.where(pos, d2 / np.where(pos, wh, 1.0), 0.0)
    for sample, target in ((r1, r1w(scheme, n, k)), (r2, r2w(scheme, n, k) - r2w_zero_mass(scheme, n, k))):
        se = sample.std() / math.sqrt(sample.size)
        assert abs(sample.mean() - target) <= 4 * se + 1e-12


# -- samplers -----------------------------------------------------------------

ALL_SCHEMES = [Efron(), Efron(4), Rademacher(0.5), Rademacher(0.2), Poisson(1.0), Poisson(0.5),
               Rho(), Rho(q=3), Loo(), VFoldSub(3)]


@pytest.mark.parametrize("scheme", ALL_SCHEMES)
def test_weight_means(scheme):
    n = 10
    w = sample_weights(scheme, n, np.random.default_rng(5), size=100_000)
    assert w.shape == (100_000, n)
    assert np.all(w >= 0)
    m = w.mean(axis=0)
    se = w.std(axis=0) / math.sqrt(w.shape[0])
    assert np.all(np.abs(m - 1) <= 4 * se)


@pytest.mark.parametrize("scheme", [s for s in ALL_SCHEMES if not isinstance(s, VFoldSub)])
def test_exchangeable_pairs(scheme):
    n = 10
    w = sample_weights(scheme, n, np.random.default_rng(6), size=200_000)
    a, b = w[:100_000], w[100_000:]
    # project the pair on a direction that separates (u, v) from (v, u)
    g1 = a[:, 0] + math.pi * a[:, 1]
    g2 = b[:, 1] + math.pi * b[:, 0]
    assert stats.ks_2samp(g1, g2).pvalue > 1e-3


def test_sampler_supports():
    rng = np.random.default_rng(2)
    w = sample_weights(Rho(q=4), 10, rng, size=50)
    assert np.all((w == 0) | (w == 10 / 4))
    assert np.all((w > 0).sum(axis=1) == 4)
    w = sample_weights(Efron(7), 10, rng, size=50)
    np.testing.assert_allclose(w.sum(axis=1), 10)
    w = sample_weights(Rademacher(0.3), 10, rng, size=50)
    assert np.all(np.isclose(w, 0) | np.isclose(w, 1 / 0.3))
    w = sample_weights(Loo(), 8, rng)
    assert w.shape == (8,) and (w == 0).sum() == 1


def test_vfold_weights_drop_one_fold():
    rng = np.random.default_rng(3)
    folds = fold_assignment(12, 4, rng)
    assert np.bincount(folds).tolist() == [3, 3, 3, 3]
    w = sample_weights(VFoldSub(4, tuple(folds)), 12, rng, size=20)
    for row in w:
        dropped = np.unique(folds[row == 0])
        assert dropped.size == 1
        np.testing.assert_allclose(row[row > 0], 4 / 3)


def test_sampler_reproducible():
    a = sample_weights(Rho(), 20, np.random.default_rng(9), size=5)
    b = sample_weights(Rho(), 20, np.random.default_rng(9), size=5)
    np.testing.assert_array_equal(a, b)
