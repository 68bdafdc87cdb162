"""Second-order bias of the ideal and resampling penalties.

Per cell, the expected ideal penalty is ``(2 + delta_ideal(n, p)) sigma^2 / n``
and the expected resampling penalty (with C = C_W) is
``(2 + delta_penw(n, k)) sigma^2 / n`` for a cell holding k points.
Both deltas are computed exactly by summing over the binomial occupancy of
the cell.

With k ~ Bin(n, p) points in the cell, the ideal penalty contributes
``1 + np/k`` (in units of sigma^2 / n) when k > 0. An empty cell contributes
``np + 1`` under the usual convention: the loss term is charged p sigma^2
and the empirical term sigma^2 / n.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .weights import (
    KAPPA1,
    KAPPA2,
    Efron,
    Loo,
    Poisson,
    Rademacher,
    Rho,
    WeightScheme,
    c_w,
    resampling_factor_table,
)

CURVE_COLUMNS = ("np", "delta_ideal", "delta_efr", "delta_rad", "delta_poi", "delta_rho2", "delta_rho4", "delta_loo")


def curve_schemes() -> dict[str, WeightScheme]:
    """Schemes shown in the comparison curves, keyed by CSV column suffix."""
    return {
        "efr": Efron(),
        "rad": Rademacher(0.5),
        "poi": Poisson(1.0),
        "rho2": Rho(fraction=0.5),
        "rho4": Rho(fraction=0.25),
        "loo": Loo(),
    }


def _binom_pmf(n: int, p: float) -> NDArray[np.float64]:
    return stats.binom.pmf(np.arange(n + 1), n, p)


def delta_ideal(n: int, p: float) -> float:
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if p == 1:
        return 0.0
    pmf = _binom_pmf(n, p)
    k = np.arange(1, n + 1)
    total = np.sum(pmf[1:] * (1 + n * p / k)) + pmf[0] * (n * p + 1)
    return float(total - 2)


@lru_cache(maxsize=64)
def delta_penw_table(scheme: WeightScheme, n: int) -> NDArray[np.float64]:
    """``delta_penw(n, k)`` for k = 0..n; cells with k < 2 get -2 (entry 0 unused)."""
    table = c_w(scheme, n) * np.asarray(resampling_factor_table(scheme, n)) - 2.0
    table.setflags(write=False)
    return table


def delta_penw(scheme: WeightScheme, n: int, k: int) -> float:
    return float(delta_penw_table(scheme, n)[k])


def delta_penw_bar(scheme: WeightScheme, n: int, p: float) -> float:
    """Average of ``delta_penw(n, k)`` over k ~ Bin(n, p) conditioned on k > 0."""
    pmf = _binom_pmf(n, p)
    table = delta_penw_table(scheme, n)
    p_pos = 1.0 - pmf[0]
    return float(np.sum(pmf[1:] * table[1:]) / p_pos)


# -- per-scheme brackets on delta_penw(n, k) ------------------------------------

def penw_bracket(scheme: WeightScheme, n: int, k: int) -> tuple[float, float] | None:
    """Known (lower, upper) bracket on ``delta_penw(n, k)``, or None for Rho."""
    scheme = scheme.resolve(n)
    if isinstance(scheme, Efron):
        b = scheme.m / n
        return -2 / k - np.exp(-b * k), min(KAPPA2 - 1, KAPPA1 / (b * k) ** 0.25)
    if isinstance(scheme, Rademacher):
        p = scheme.p
        lo = -2 * np.exp(-p * k) / (1 - p)
        up = 2 / (1 - p) * min(KAPPA2 - 1, KAPPA1 / (p * k) ** 0.25)
        if p == 0.5:
            lo = max(lo, -float(k <= 2))
            up = min(up, min(1 + 3e-4, KAPPA1 * 2**0.25 / k**0.25))
        return lo, up
    if isinstance(scheme, Poisson):
        mk = scheme.mu * k
        up = 1.0 if mk <= 2 else min(1.0, 2 * (1 + np.exp(-3)) / (mk - 2))
        lo = -2 / k - min(np.exp(-mk), float(mk < 1.61))
        return lo, up
    if isinstance(scheme, Loo):
        return -float(k == 1), (1 / (k - 1) if k >= 2 else 0.0)
    return None


# -- comparison curves ----------------------------------------------------------

@dataclass
class DeltaCurve:
    n: int
    np_grid: NDArray[np.int64]
    delta_ideal: NDArray[np.float64]
    delta_penw: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def sign_pattern(self) -> dict[str, NDArray[np.int64]]:
        """sign(delta_bar_penW - delta_ideal) at each grid point, per scheme."""
        return {name: np.sign(v - self.delta_ideal).astype(int) for name, v in self.delta_penw.items()}

    def to_csv(self, path: str | Path) -> None:
        header = ["np", "delta_ideal"] + [f"delta_{s}" for s in self.delta_penw]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, k in enumerate(self.np_grid):
                w.writerow([int(k), repr(float(self.delta_ideal[i]))]
                           + [repr(float(v[i])) for v in self.delta_penw.values()])


def ordering_report(n: int = 200, np_grid: Sequence[int] | None = None,
                    schemes: dict[str, WeightScheme] | None = None) -> DeltaCurve:
    """Exact delta curves on a grid of expected cell counts np."""
    grid = np.arange(3, n + 1) if np_grid is None else np.asarray(np_grid, dtype=np.int64)
    schemes = curve_schemes() if schemes is None else schemes
    ideal = np.array([delta_ideal(n, k / n) for k in grid])
    curves = {name: np.array([delta_penw_bar(sch, n, k / n) for k in grid]) for name, sch in schemes.items()}
    return DeltaCurve(n, grid, ideal, curves)
