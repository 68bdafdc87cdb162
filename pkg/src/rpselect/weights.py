"""Exchangeable resampling weights, their constants, and the e_inv kernel.

For a nonnegative random variable Z, ``e_inv(Z) = E[Z] * E[1/Z | Z > 0]``.
It is computed here by exact summation of the pmf; the analytic brackets
on it are checked by :func:`verify_einv_bounds`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Union

import numpy as np
from numpy.typing import NDArray
from scipy import special, stats

KAPPA1 = 5.1
KAPPA2 = 3.2
POISSON_TAIL_TOL = 1e-13


# -- weight schemes -----------------------------------------------------------

@dataclass(frozen=True)
class Efron:
    """m-out-of-n bootstrap; ``m=None`` means m = n."""

    m: int | None = None

    def resolve(self, n: int) -> "Efron":
        m = n if self.m is None else self.m
        if m < 1:
            raise ValueError("Efron needs m >= 1")
        return Efron(m)


@dataclass(frozen=True)
class Rademacher:
    p: float = 0.5

    def resolve(self, n: int) -> "Rademacher":
        if not 0 < self.p < 1:
            raise ValueError("Rademacher needs p in (0, 1)")
        return self


@dataclass(frozen=True)
class Poisson:
    mu: float = 1.0

    def resolve(self, n: int) -> "Poisson":
        if not self.mu > 0:
            raise ValueError("Poisson needs mu > 0")
        return self


@dataclass(frozen=True)
class Rho:
    """Random hold-out keeping q of n points; ``q=None`` means floor(n/2)."""

    q: int | None = None
    fraction: float = 0.5

    def resolve(self, n: int) -> "Rho":
        q = int(math.floor(n * self.fraction)) if self.q is None else self.q
        if not 1 <= q <= n:
            raise ValueError(f"Rho needs 1 <= q <= n, got q={q}, n={n}")
        return Rho(q)


@dataclass(frozen=True)
class Loo:
    def resolve(self, n: int) -> "Loo":
        if n < 2:
            raise ValueError("Loo needs n >= 2")
        return self


@dataclass(frozen=True)
class VFoldSub:
    """V-fold subsampling: drop one block of a fixed partition of the indices."""

    V: int
    fold_assignment: tuple[int, ...] | None = None

    def resolve(self, n: int) -> "VFoldSub":
        if self.V < 2:
            raise ValueError("VFoldSub needs V >= 2")
        if self.fold_assignment is not None and len(self.fold_assignment) != n:
            raise ValueError("fold assignment length differs from n")
        return self


WeightScheme = Union[Efron, Rademacher, Poisson, Rho, Loo, VFoldSub]
EXCHANGEABLE = (Efron, Rademacher, Poisson, Rho, Loo)


def classical_schemes() -> dict[str, WeightScheme]:
    return {"efr": Efron(), "rad": Rademacher(), "poi": Poisson(), "rho": Rho(), "loo": Loo()}


def c_w(scheme: WeightScheme, n: int) -> float:
    """Constant making the resampling penalty unbiased at first order."""
    scheme = scheme.resolve(n)
    if isinstance(scheme, Efron):
        return scheme.m / n
    if isinstance(scheme, Rademacher):
        return scheme.p / (1 - scheme.p)
    if isinstance(scheme, Poisson):
        return scheme.mu
    if isinstance(scheme, Rho):
        if scheme.q == n:
            raise ValueError("C_W is undefined for Rho(q=n)")
        return scheme.q / (n - scheme.q)
    if isinstance(scheme, Loo):
        return n - 1.0
    if isinstance(scheme, VFoldSub):
        return 1.0
    raise TypeError(f"unknown scheme {scheme!r}")


# -- expectation of inverses --------------------------------------------------

@dataclass(frozen=True)
class Binomial:
    n: int
    p: float


@dataclass(frozen=True)
class Hypergeometric:
    """Successes in q draws without replacement from n items, r of them marked."""

    n: int
    r: int
    q: int


@dataclass(frozen=True)
class PoissonLaw:
    mu: float


EinvLaw = Union[Binomial, Hypergeometric, PoissonLaw]


def _poisson_cutoff(mu: float, tol: float) -> int:
    k = max(int(math.ceil(mu)), 1)
    while special.pdtrc(k, mu) >= tol:
        k *= 2
    return k


def einv(law: EinvLaw, tol: float = POISSON_TAIL_TOL) -> float:
    if isinstance(law, Binomial):
        if law.n < 1 or not 0 < law.p <= 1:
            raise ValueError(f"invalid {law}")
        if law.p == 1:
            return 1.0
        k = np.arange(1, law.n + 1)
        logpmf = stats.binom.logpmf(k, law.n, law.p)
        mean = law.n * law.p
        p_pos = -math.expm1(law.n * math.log1p(-law.p))
    elif isinstance(law, Hypergeometric):
        n, r, q = law.n, law.r, law.q
        if not (n >= r >= 1 and n >= q >= 1):
            raise ValueError(f"invalid {law}")
        k = np.arange(max(1, q - (n - r)), min(r, q) + 1)
        logpmf = stats.hypergeom.logpmf(k, n, r, q)
        mean = q * r / n
        p_pos = 1.0 if q > n - r else -math.expm1(stats.hypergeom.logpmf(0, n, r, q))
    elif isinstance(law, PoissonLaw):
        if not law.mu > 0:
            raise ValueError(f"invalid {law}")
        k = np.arange(1, _poisson_cutoff(law.mu, tol) + 1)
        logpmf = stats.poisson.logpmf(k, law.mu)
        mean = law.mu
        p_pos = -math.expm1(-law.mu)
    else:
        raise TypeError(f"unknown law {law!r}")
    inv_mean = math.fsum(np.exp(logpmf) / k)
    return mean * inv_mean / p_pos


def einv_hypergeom_table(n: int) -> NDArray[np.float64]:
    """``E[r, q] = e_inv(H(n, r, q))`` for all 1 <= r, q <= n (index 0 unused)."""
    lg = special.gammaln(np.arange(n + 1) + 1.0)  # lg[a] = ln(a!)

    def lbinom(a, b):
        return lg[a] - lg[b] - lg[a - b]

    out = np.full((n + 1, n + 1), np.nan)
    q = np.arange(1, n + 1)[:, None]
    for r in range(1, n + 1):
        k = np.arange(1, r + 1)[None, :]
        valid = (k <= q) & (q - k <= n - r)
        kk = np.where(valid, k, 0)
        qk = np.where(valid, q - kk, 0)
        logpmf = lbinom(r, kk) + lbinom(n - r, qk) - lbinom(n, q)
        pmf = np.where(valid, np.exp(logpmf), 0.0)
        inv_mean = (pmf / k).sum(axis=1)
        p_pos = pmf.sum(axis=1)
        out[r, 1:] = (q[:, 0] * r / n) * inv_mean / p_pos
    return out


# -- resampling constants R1, R2 ----------------------------------------------

def _check_count(n: int, k: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= n*p_hat <= n, got {k} with n={n}")


def r1w(scheme: WeightScheme, n: int, k: int) -> float:
    """``R_1`` for a cell holding ``k = n p_hat`` of the ``n`` points."""
    _check_count(n, k)
    scheme = scheme.resolve(n)
    if isinstance(scheme, Efron):
        return n / scheme.m * einv(Binomial(scheme.m, k / n)) * (1 - 1 / k)
    if isinstance(scheme, Rademacher):
        return einv(Binomial(k, scheme.p)) / scheme.p - 1
    if isinstance(scheme, Poisson):
        return einv(PoissonLaw(k * scheme.mu)) * (1 - 1 / k) / scheme.mu
    if isinstance(scheme, Rho):
        return n / scheme.q * einv(Hypergeometric(n, k, scheme.q)) - 1
    if isinstance(scheme, Loo):
        return k / (n * (k - 1)) if k >= 2 else 0.0
    raise ValueError("no closed form for non-exchangeable weights")


def r2w(scheme: WeightScheme, n: int, k: int) -> float:
    _check_count(n, k)
    scheme = scheme.resolve(n)
    if isinstance(scheme, Efron):
        return n / scheme.m * (1 - 1 / k)
    if isinstance(scheme, Rademacher):
        return 1 / scheme.p - 1
    if isinstance(scheme, Poisson):
        return (1 - 1 / k) / scheme.mu
    if isinstance(scheme, Rho):
        return n / scheme.q - 1
    if isinstance(scheme, Loo):
        return 1 / (n - 1)
    raise ValueError("no closed form for non-exchangeable weights")


def r2w_zero_mass(scheme: WeightScheme, n: int, k: int) -> float:
    """Part of ``r2w`` carried by the event that the cell gets zero total weight.

    The tabulated R2 extends ``Var(W_i | W_hat) / W_hat`` by continuity to
    ``W_hat = 0``, whereas the resampled term ``p_hat^W (beta^W - beta_hat)^2``
    vanishes there. Subtracting this value gives the exact expectation of
    that term.
    """
    _check_count(n, k)
    scheme = scheme.resolve(n)
    if isinstance(scheme, Efron):
        return n / scheme.m * (1 - 1 / k) * math.exp(scheme.m * math.log1p(-k / n)) if k < n else 0.0
    if isinstance(scheme, Rademacher):
        return (1 - scheme.p) ** k / scheme.p
    if isinstance(scheme, Poisson):
        return (1 - 1 / k) / scheme.mu * math.exp(-scheme.mu * k)
    if isinstance(scheme, (Rho, Loo)):
        q = n - 1 if isinstance(scheme, Loo) else scheme.q
        if k == 1 and isinstance(scheme, Loo):
            return r2w(scheme, n, k)
        p0 = math.exp(stats.hypergeom.logpmf(0, n, k, q)) if q <= n - k else 0.0
        return n / q * p0
    raise ValueError("no closed form for non-exchangeable weights")


@lru_cache(maxsize=64)
def zero_mass_table(scheme: WeightScheme, n: int) -> NDArray[np.float64]:
    """``r2w_zero_mass`` for k = 0..n, zero for k < 2."""
    table = np.zeros(n + 1)
    for k in range(2, n + 1):
        table[k] = r2w_zero_mass(scheme, n, k)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=64)
def resampling_factor_table(scheme: WeightScheme, n: int) -> NDArray[np.float64]:
    """``T[k] = R1(n, k/n) + R2(n, k/n)`` for k = 0..n, zero for k < 2.

    Cells with fewer than two points do not contribute to the penalty.
    """
    scheme = scheme.resolve(n)
    table = np.zeros(n + 1)
    if isinstance(scheme, Rho):
        e = einv_hypergeom_table(n)[1:, scheme.q]
        table[1:] = 2 * (n / scheme.q - 1) + n / scheme.q * (e - 1)
    else:
        for k in range(2, n + 1):
            table[k] = r1w(scheme, n, k) + r2w(scheme, n, k)
    table[:2] = 0.0
    table.setflags(write=False)
    return table


# -- samplers -----------------------------------------------------------------

def sample_weights(scheme: WeightScheme, n: int, rng: np.random.Generator, size: int | None = None) -> NDArray[np.float64]:
    """Draw one weight vector (or ``size`` of them, stacked by row)."""
    scheme = scheme.resolve(n)
    b = 1 if size is None else size
    if isinstance(scheme, Efron):
        draws = rng.integers(0, n, size=(b, scheme.m))
        offsets = (np.arange(b) * n)[:, None]
        counts = np.bincount((draws + offsets).ravel(), minlength=b * n).reshape(b, n)
        w = counts * (n / scheme.m)
    elif isinstance(scheme, Rademacher):
        w = (rng.random((b, n)) < scheme.p) / scheme.p
    elif isinstance(scheme, Poisson):
        w = rng.poisson(scheme.mu, size=(b, n)) / scheme.mu
    elif isinstance(scheme, (Rho, Loo)):
        q = n - 1 if isinstance(scheme, Loo) else scheme.q
        w = np.zeros((b, n))
        rows = np.arange(b)[:, None]
        w[rows, _partial_shuffle(n, q, rng, b)] = n / q
    elif isinstance(scheme, VFoldSub):
        folds = np.asarray(scheme.fold_assignment) if scheme.fold_assignment is not None else fold_assignment(n, scheme.V, rng)
        j = rng.integers(0, scheme.V, size=b)
        w = (folds[None, :] != j[:, None]) * (scheme.V / (scheme.V - 1))
    else:
        raise TypeError(f"unknown scheme {scheme!r}")
    w = w.astype(float)
    return w[0] if size is None else w


def _partial_shuffle(n: int, q: int, rng: np.random.Generator, b: int = 1) -> NDArray[np.intp]:
    """First q entries of ``b`` independent Fisher-Yates shuffles of range(n), by row."""
    perm = np.tile(np.arange(n), (b, 1))
    rows = np.arange(b)
    for i in range(q):
        j = rng.integers(i, n, size=b)
        perm[rows, i], perm[rows, j] = perm[rows, j], perm[rows, i]
    return perm[:, :q]


def fold_assignment(n: int, V: int, rng: np.random.Generator) -> NDArray[np.intp]:
    """Uniform random partition of range(n) into V blocks of near-equal size."""
    if not 2 <= V <= n:
        raise ValueError(f"need 2 <= V <= n, got V={V}, n={n}")
    folds = np.empty(n, dtype=np.intp)
    folds[rng.permutation(n)] = np.arange(n) % V
    return folds


# -- bound verification -------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    law: EinvLaw
    bound: str
    value: float
    lower: float
    upper: float
    passed: bool


@dataclass
class BoundFamily:
    name: str
    checked: int = 0
    failed: int = 0
    worst_margin: float = math.inf

    def update(self, value, lower, upper, rtol: float = 1e-12) -> NDArray[np.bool_]:
        value, lower, upper = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (value, lower, upper)))
        slack = rtol * np.maximum(1.0, np.abs(value))
        ok = (lower - slack <= value) & (value <= upper + slack)
        self.checked += int(ok.size)
        self.failed += int((~ok).sum())
        if ok.size:
            margin = np.minimum(value - lower, upper - value)
            self.worst_margin = min(self.worst_margin, float(margin.min()))
        return ok


@dataclass
class EinvReport:
    families: dict[str, BoundFamily]
    failures: list[BoundCheck]

    @property
    def all_passed(self) -> bool:
        return not self.failures and all(f.failed == 0 for f in self.families.values())

    def check(self, name, law_of, value, lower=-math.inf, upper=math.inf) -> None:
        fam = self.families.setdefault(name, BoundFamily(name))
        ok = fam.update(value, lower, upper)
        if not ok.all():
            value, lower, upper = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (value, lower, upper)))
            for i in zip(*np.nonzero(~ok)):
                self.failures.append(BoundCheck(law_of(i), name, float(value[i]), float(lower[i]), float(upper[i]), False))


def binomial_checks(law: Binomial, value: float) -> list[BoundCheck]:
    """Brackets that apply to one binomial query."""
    out = []
    mean = law.n * law.p
    if mean >= 1:
        lo, up = -math.expm1(-mean), min(KAPPA2, 1 + KAPPA1 * mean ** -0.25)
        out.append(BoundCheck(law, "binomial np>=1", value, lo, up, lo - 1e-12 <= value <= up + 1e-12))
    if law.p == 0.5:
        lo, up = float(law.n >= 3), 2 + 3e-4
        out.append(BoundCheck(law, "binomial p=1/2", value, lo, up, lo - 1e-12 <= value <= up + 1e-12))
    return out


def query_checks(law: EinvLaw, value: float) -> list[BoundCheck]:
    """Brackets that apply to a single e_inv query."""
    def mk(name, lo, up):
        ok = lo - 1e-12 * max(1.0, abs(value)) <= value <= up + 1e-12 * max(1.0, abs(value))
        return BoundCheck(law, name, value, lo, up, ok)

    if isinstance(law, Binomial):
        return binomial_checks(law, value)
    if isinstance(law, PoissonLaw):
        return [mk("poisson", poisson_lower(law.mu), poisson_upper(law.mu))]
    n, r, q = law.n, law.r, law.q
    out = [mk("hypergeom general lower", 1 - (math.exp(-q * r / n) if r <= n - q else 0.0), math.inf)]
    if q == n - 1 and n >= 2:
        exact = float(loo_einv(n, r))
        out.append(mk("hypergeom loo exact", exact - 1e-12, exact + 1e-12))
    if q == n // 2:
        out.append(mk("hypergeom rho sup", -math.inf, 3.0 if r >= 26 else 14.3))
    return out


def poisson_upper(mu: float) -> float:
    upper = 2 - 2 * math.exp(-2 * mu)
    if mu > 2:
        upper = min(upper, 1 + 2 * (1 + math.exp(-3)) / (mu - 2))
    return upper


def poisson_lower(mu: float) -> float:
    return 1 - (math.exp(-mu) if mu < 1.61 else 0.0)


def loo_einv(n: int, r):
    """Exact e_inv(H(n, r, n-1)); works elementwise on arrays of r."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r >= 2, 1 + ((n - 1) * r / (n * (r - 1)) - 1) / n, 1 - 1 / n)
    return out if out.ndim else float(out)


def hypergeom_checks(report: EinvReport, n: int, table: NDArray[np.float64] | None = None,
                     eps_grid: Iterable[float] = (0.1, 0.25, 0.5, 0.75, 0.9)) -> None:
    """Check every bracket on e_inv(H(n, r, q)) for all 1 <= r, q <= n."""
    if table is None:
        table = einv_hypergeom_table(n)
    v = table[1:, 1:]
    r = np.arange(1, n + 1, dtype=float)[:, None] * np.ones((1, n))
    q = np.ones((n, 1)) * np.arange(1, n + 1, dtype=float)[None, :]

    def law_of(i):
        return Hypergeometric(n, int(r[i]), int(q[i]))

    lower = 1 - np.where(r <= n - q, np.exp(-q * r / n), 0.0)
    report.check("hypergeom general lower", law_of, v, lower=lower)

    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(r)
        base = 2 * r / (2 + np.sqrt(3 * (r + 1) * logr))
        root = np.sqrt(logr / r)
    for eps in eps_grid:
        mask = (r >= 2) & (n / q <= (1 - eps) * base)
        if mask.any():
            upper = 1 + (0.9 + 1.4 / eps**2) * (n / q) * root
            sel = np.nonzero(mask)
            report.check(f"hypergeom upper eps={eps}", lambda i, sel=sel: law_of((sel[0][i[0]], sel[1][i[0]])),
                         v[sel], upper=upper[sel])

    if n >= 2:
        col = v[:, n // 2 - 1] if n // 2 >= 1 else None
        if col is not None:
            report.check("hypergeom rho sup", lambda i: Hypergeometric(n, i[0] + 1, n // 2), col, upper=14.3)
            if n >= 26:
                report.check("hypergeom rho sup r>=26", lambda i: Hypergeometric(n, i[0] + 26, n // 2),
                             col[25:], upper=3.0)
        loo = v[:, n - 2]
        rr = np.arange(1, n + 1)
        exact = loo_einv(n, rr)
        law_loo = lambda i: Hypergeometric(n, i[0] + 1, n - 1)
        report.check("hypergeom loo exact", law_loo, loo, lower=exact - 1e-12, upper=exact + 1e-12)
        with np.errstate(divide="ignore"):
            up = 1 + np.where(rr >= 2, 1 / (n * (rr - 1.0)), 0.0)
        report.check("hypergeom loo bracket", law_loo, loo, lower=1 - (rr == 1) / n, upper=up)

    mask = (r >= n - q + 1) & (n - q + 1 >= 2)
    if mask.any():
        sel = np.nonzero(mask)
        rs, qs = r[sel], q[sel]
        log_up = (np.log(rs) - np.log(rs - n + qs) + (n - qs) * math.log(n)
                  - (special.gammaln(n + 1) - special.gammaln(qs + 1)))
        report.check("hypergeom lpo", lambda i: law_of((sel[0][i[0]], sel[1][i[0]])),
                     v[sel], lower=1.0, upper=np.exp(log_up))


@dataclass(frozen=True)
class EinvGrid:
    binom_n: tuple[int, ...] = tuple(range(3, 201))
    binom_p: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.7, 0.75, 0.9, 0.99, 1.0)
    hyper_n: tuple[int, ...] = tuple(range(2, 201))
    poisson_mu: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 501))


def verify_einv_bounds(grid: EinvGrid = EinvGrid()) -> EinvReport:
    """Evaluate every bracket on e_inv over ``grid``; failures are reported, not raised.

    Binomial p values are ``grid.binom_p`` together with every k/n.
    """
    report = EinvReport({}, [])
    for n in grid.binom_n:
        ps = sorted(set(grid.binom_p) | {k / n for k in range(1, n + 1)})
        laws = [Binomial(n, p) for p in ps]
        vals = np.array([einv(law) for law in laws])
        means = np.array([n * p for p in ps])
        sel = np.nonzero(means >= 1)[0]
        report.check("binomial np>=1", lambda i, sel=sel, laws=laws: laws[sel[i[0]]], vals[sel],
                     lower=-np.expm1(-means[sel]), upper=np.minimum(KAPPA2, 1 + KAPPA1 * means[sel] ** -0.25))
        if 0.5 in ps:
            v = einv(Binomial(n, 0.5))
            report.check("binomial p=1/2", lambda i, n=n: Binomial(n, 0.5), v, lower=float(n >= 3), upper=2 + 3e-4)
    for n in grid.hyper_n:
        hypergeom_checks(report, n)
    for mu in grid.poisson_mu:
        report.check("poisson", lambda i, mu=mu: PoissonLaw(mu), einv(PoissonLaw(mu)),
                     lower=poisson_lower(mu), upper=poisson_upper(mu))
    return report
