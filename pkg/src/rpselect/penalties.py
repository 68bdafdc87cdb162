"""Penalties for histogram model selection.

Every penalty here estimates the ideal penalty ``(P - P_n) gamma(s_hat_m)``
of a regressogram. The resampling penalty has an exact per-cell closed form
for exchangeable weights; the Monte-Carlo version is kept both as a check on
it and for weights without a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .core import CellStats, Dataset, Partition, RegressionTruth, UndefinedCellError, cell_stats
from .diagnostics import delta_ideal
from .weights import EXCHANGEABLE, WeightScheme, c_w, resampling_factor_table, sample_weights, zero_mass_table

KINDS = ("rp", "rp_mc", "mallows", "eideal", "vfpen")


class UntrainableFoldError(UndefinedCellError):
    """Some training fold leaves a cell of the model empty."""


@dataclass(frozen=True)
class PenaltySpec:
    """Which penalty to use and how much to overpenalize.

    ``c_over_cw`` multiplies the base constant: C_W for resampling penalties,
    V - 1 for V-fold penalties and 1 for Mallows and the expected ideal
    penalty.
    """

    kind: str
    scheme: WeightScheme | None = None
    B: int = 10_000
    V: int | None = None
    c_over_cw: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind in ("rp", "rp_mc") and self.scheme is None:
            raise ValueError("resampling penalties need a weight scheme")
        if self.kind == "rp" and not isinstance(self.scheme, EXCHANGEABLE):
            raise ValueError("closed-form penalty needs exchangeable weights")
        if self.kind == "vfpen" and (self.V is None or self.V < 2):
            raise ValueError("V-fold penalty needs V >= 2")
        if not self.c_over_cw >= 0:
            raise ValueError("c_over_cw must be nonnegative")
        if self.kind == "rp_mc" and self.B < 1:
            raise ValueError("B must be positive")

    def constant(self, n: int) -> float:
        if self.kind in ("rp", "rp_mc"):
            return self.c_over_cw * c_w(self.scheme, n)
        if self.kind == "vfpen":
            return self.c_over_cw * (self.V - 1)
        return self.c_over_cw


# -- resampling penalty, closed form ------------------------------------------

def rp_penalty_closed(stats: CellStats, scheme: WeightScheme, C: float, n: int | None = None,
                      zero_events: bool = True) -> float:
    """Closed-form resampling penalty of the regressogram described by ``stats``.

    Cells with fewer than two points contribute nothing. With the default
    ``zero_events=True`` the tabulated R1 + R2 constants are used as they
    stand; ``False`` removes the (exponentially small) share of R2 carried by
    draws where a cell gets no weight, which gives the exact expectation of
    the Monte-Carlo penalty.
    """
    n = stats.n if n is None else n
    table = resampling_factor_table(scheme, n)
    if not zero_events:
        table = table - zero_mass_table(scheme, n)
    k = stats.count
    big = k >= 2
    # count * css / (k (k - 1)) = css / (k - 1)
    inner = stats.css[big] / (k[big] - 1)
    return float(C / n * np.sum(table[k[big]] * inner))


# -- resampling penalty, Monte Carlo ------------------------------------------

@dataclass(frozen=True)
class MCPenalty:
    value: float
    se: float
    degenerate: bool
    B: int


def rp_penalty_weights(dataset: Dataset, partition: Partition, weights: NDArray[np.float64], C: float) -> MCPenalty:
    """Resampling penalty averaged over the rows of an explicit weight matrix.

    The conditional term is averaged, per cell, only over the rows where
    the cell keeps positive total weight.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    n = dataset.n
    if w.shape[1] != n:
        raise ValueError("weight rows must have one entry per datapoint")
    B = w.shape[0]
    idx = partition.locate(dataset.x)
    stats = cell_stats(dataset, partition)
    occupied = np.flatnonzero(stats.count > 0)
    beta = np.zeros(partition.dim)
    beta[occupied] = stats.sum_y[occupied] / stats.count[occupied]
    yc = dataset.y - beta[idx]

    onehot = np.zeros((n, occupied.size))
    col = np.searchsorted(occupied, idx)
    onehot[np.arange(n), col] = 1.0
    sw = w @ onehot
    swy = (w * yc) @ onehot
    pos = sw > 0
    diff2 = np.divide(swy, sw, out=np.zeros_like(sw), where=pos) ** 2
    p_hat = stats.count[occupied] / n
    t1 = p_hat * diff2
    t2 = sw / n * diff2

    n_pos = pos.sum(axis=0)
    degenerate = bool(np.any(n_pos == 0))
    s1 = t1.sum(axis=0)
    s2 = t2.sum(axis=0)
    term1 = np.divide(s1, n_pos, out=np.zeros_like(s1), where=n_pos > 0)
    value = C * float(np.sum(term1) + np.sum(s2) / B)

    if B < 2:
        return MCPenalty(value, float("nan"), degenerate, B)
    # leave-one-draw-out replicates
    loo_n = n_pos[None, :] - pos
    loo_t1 = np.divide(s1[None, :] - t1, loo_n, out=np.zeros_like(t1), where=loo_n > 0)
    loo_t2 = (s2[None, :] - t2) / (B - 1)
    reps = C * (loo_t1.sum(axis=1) + loo_t2.sum(axis=1))
    se = float(np.sqrt((B - 1) / B * np.sum((reps - reps.mean()) ** 2)))
    return MCPenalty(value, se, degenerate, B)


def rp_penalty_mc(dataset: Dataset, partition: Partition, scheme: WeightScheme, C: float,
                  B: int, rng: np.random.Generator, chunk: int = 2000) -> MCPenalty:
    """Monte-Carlo resampling penalty from ``B`` weight draws."""
    if B < 2:
        raise ValueError("need B >= 2 draws")
    # Draws are generated in chunks to bound memory; the estimate only
    # depends on the concatenated draws.
    w = np.vstack([sample_weights(scheme, dataset.n, rng, size=min(chunk, B - s)) for s in range(0, B, chunk)])
    return rp_penalty_weights(dataset, partition, w, C)


def loo_weight_matrix(n: int) -> NDArray[np.float64]:
    """All n leave-one-out weight vectors, one per row."""
    return (1.0 - np.eye(n)) * (n / (n - 1))


# -- Mallows ------------------------------------------------------------------

def estimate_sigma2(dataset: Dataset) -> float:
    """Residual variance of the regular regressogram with floor(n/2) cells."""
    n = dataset.n
    if n < 2:
        raise ValueError("need n >= 2")
    d = n // 2
    rss = float(cell_stats(dataset, Partition.regular(d)).css.sum())
    return rss / (n - d)


def mallows_penalty(D_m: int, sigma2: float, n: int, C_ov: float = 1.0) -> float:
    if D_m < 1:
        raise ValueError("dimension must be positive")
    return C_ov * 2.0 * sigma2 * D_m / n


# -- expected ideal penalty ---------------------------------------------------

@lru_cache(maxsize=100_000)
def _delta_ideal_cached(n: int, p: float) -> float:
    return delta_ideal(n, p)


def expected_ideal_penalty(truth: RegressionTruth, partition: Partition, n: int, C_ov: float = 1.0) -> float:
    """Expectation of the ideal penalty under uniform design.

    The per-cell variance is Var(Y | X in cell), i.e. noise plus the spread
    of s within the cell, since the fit is compared with the cell mean of s.
    """
    mom = truth.moments(partition)
    deltas = np.array([_delta_ideal_cached(n, float(p)) for p in mom.width])
    return float(C_ov / n * np.sum((2.0 + deltas) * mom.cond_var))


# -- V-fold penalty -----------------------------------------------------------

def _fold_fits(idx, y, folds, V: int, D: int):
    """Training counts and means of every fold-complement, shape (V, D)."""
    count = np.bincount(idx, minlength=D)
    total = np.bincount(idx, weights=y, minlength=D)
    key = folds * D + idx
    f_count = np.bincount(key, minlength=V * D).reshape(V, D)
    f_sum = np.bincount(key, weights=y, minlength=V * D).reshape(V, D)
    tr_count = count[None, :] - f_count
    if np.any(tr_count[:, count > 0] == 0) or np.any(count == 0):
        raise UntrainableFoldError("a training fold leaves some cell empty")
    beta = (total[None, :] - f_sum) / tr_count
    return count, tr_count, beta


def vfold_penalty(dataset: Dataset, partition: Partition, V: int, C: float | None = None,
                  fold_assignment: NDArray[np.intp] | None = None) -> float:
    """V-fold penalty; ``C`` defaults to V - 1 and folds to ``i % V``."""
    n = dataset.n
    if V < 2:
        raise ValueError("need V >= 2")
    folds = np.arange(n) % V if fold_assignment is None else np.asarray(fold_assignment, dtype=np.intp)
    if folds.shape != (n,) or folds.min() < 0 or folds.max() >= V:
        raise ValueError("fold assignment must map every point to 0..V-1")
    C = V - 1.0 if C is None else C
    D = partition.dim
    idx = partition.locate(dataset.x)
    y = dataset.y
    count, tr_count, beta = _fold_fits(idx, y, folds, V, D)

    stats = cell_stats(dataset, partition)
    mean = stats.sum_y / count
    # full-sample risk of each fold fit: css + count (mean - beta_J)^2
    full = (stats.css[None, :] + count[None, :] * (mean[None, :] - beta) ** 2).sum(axis=1) / n
    # training risk: same sum minus the held-out points
    resid = y - beta[folds, idx]
    held = np.bincount(folds, weights=resid * resid, minlength=V)
    n_train = n - np.bincount(folds, minlength=V)
    train = (full * n - held) / n_train
    return float(C * np.mean(full - train))


# -- dispatch -----------------------------------------------------------------

def compute_penalty(spec: PenaltySpec, dataset: Dataset, stats: CellStats, *,
                    truth: RegressionTruth | None = None, sigma2: float | None = None,
                    rng: np.random.Generator | None = None,
                    fold_assignment: NDArray[np.intp] | None = None) -> float:
    """Penalty of one model given its cell statistics on ``dataset``."""
    n = dataset.n
    C = spec.constant(n)
    if spec.kind == "rp":
        return rp_penalty_closed(stats, spec.scheme, C, n)
    if spec.kind == "rp_mc":
        if rng is None:
            raise ValueError("Monte-Carlo penalty needs an rng")
        return rp_penalty_mc(dataset, stats.partition, spec.scheme, C, spec.B, rng).value
    if spec.kind == "mallows":
        s2 = estimate_sigma2(dataset) if sigma2 is None else sigma2
        return mallows_penalty(stats.partition.dim, s2, n, C)
    if spec.kind == "eideal":
        if truth is None:
            raise ValueError("expected ideal penalty needs the true regression function")
        return expected_ideal_penalty(truth, stats.partition, n, C)
    return vfold_penalty(dataset, stats.partition, spec.V, C, fold_assignment)
