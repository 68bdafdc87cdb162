"""Model filtering, penalized selection and cross-validation baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .core import CellStats, Dataset, Partition, RegressionTruth, cell_stats
from .penalties import PenaltySpec, UntrainableFoldError, _fold_fits, compute_penalty, estimate_sigma2
from .weights import fold_assignment as draw_folds

TIE_TOL = 1e-12


class NoSelectableModelError(ValueError):
    """Every model of the collection was filtered out."""


@dataclass(frozen=True)
class ModelCollection:
    models: tuple[Partition, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        models = tuple(self.models)
        labels = tuple(self.labels)
        if not models:
            raise ValueError("empty model collection")
        if len(labels) != len(models):
            raise ValueError("one label per model")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_partitions(cls, models: Sequence[Partition]) -> "ModelCollection":
        return cls(tuple(models), tuple(f"m{i}" for i in range(len(models))))

    @property
    def dims(self) -> NDArray[np.int64]:
        return np.array([m.dim for m in self.models])

    def __len__(self):
        return len(self.models)


@dataclass(frozen=True)
class CVSpec:
    """V-fold cross-validation; ``V=None`` is leave-one-out."""

    V: int | None = None

    def __post_init__(self):
        if self.V is not None and self.V < 2:
            raise ValueError("V-fold CV needs V >= 2")


@dataclass
class SelectionResult:
    """Outcome of one selection.

    ``filtered_mask`` is True for models removed before selection; their
    criterion is +inf and their penalty NaN.
    """

    selected_index: int
    criterion_values: NDArray[np.float64]
    filtered_mask: NDArray[np.bool_]
    penalty_values: NDArray[np.float64]


def argmin_tiebreak(crit: NDArray[np.float64], dims: NDArray[np.int64]) -> int:
    """Minimizer of ``crit``; near-ties go to the smallest dimension, then index."""
    crit = np.asarray(crit, dtype=float)
    finite = np.isfinite(crit)
    if not finite.any():
        raise NoSelectableModelError("no model has a finite criterion")
    best = crit[finite].min()
    cand = np.flatnonzero(finite & (crit <= best + TIE_TOL))
    return int(cand[np.lexsort((cand, dims[cand]))[0]])


def kept_mask(stats: Sequence[CellStats], threshold: int = 3) -> NDArray[np.bool_]:
    return np.array([s.min_count >= threshold for s in stats])


def filter_models(collection: ModelCollection, dataset: Dataset, threshold: int = 3) -> NDArray[np.bool_]:
    """True for models whose every cell holds at least ``threshold`` points."""
    mask = kept_mask([cell_stats(dataset, m) for m in collection.models], threshold)
    if not mask.any():
        raise NoSelectableModelError(f"no model has {threshold} or more points in every cell")
    return mask


def select_penalized(dataset: Dataset, collection: ModelCollection, spec: PenaltySpec,
                     rng: np.random.Generator | None = None, *, truth: RegressionTruth | None = None,
                     threshold: int = 3, fold_assignment: NDArray[np.intp] | None = None) -> SelectionResult:
    """Minimize empirical risk plus penalty over the filtered collection."""
    stats = [cell_stats(dataset, m) for m in collection.models]
    kept = kept_mask(stats, threshold)
    if not kept.any():
        raise NoSelectableModelError(f"no model has {threshold} or more points in every cell")
    n = dataset.n
    sigma2 = estimate_sigma2(dataset) if spec.kind == "mallows" else None
    if spec.kind == "vfpen" and fold_assignment is None:
        if rng is None:
            raise ValueError("V-fold penalty needs an rng or a fold assignment")
        fold_assignment = draw_folds(n, spec.V, rng)
    crit = np.full(len(collection), np.inf)
    pens = np.full(len(collection), np.nan)
    for i in np.flatnonzero(kept):
        try:
            pens[i] = compute_penalty(spec, dataset, stats[i], truth=truth, sigma2=sigma2,
                                      rng=rng, fold_assignment=fold_assignment)
        except UntrainableFoldError:
            continue
        crit[i] = stats[i].css.sum() / n + pens[i]
    return SelectionResult(argmin_tiebreak(crit, collection.dims), crit, ~kept, pens)


# -- cross-validation ---------------------------------------------------------

def vfcv_criterion(dataset: Dataset, partition: Partition, folds: NDArray[np.intp], V: int) -> float:
    """Mean over folds of the held-out risk of the fit trained off the fold."""
    idx = partition.locate(dataset.x)
    _, _, beta = _fold_fits(idx, dataset.y, folds, V, partition.dim)
    resid = dataset.y - beta[folds, idx]
    sse = np.bincount(folds, weights=resid * resid, minlength=V)
    size = np.bincount(folds, minlength=V)
    return float(np.mean(sse / size))


def loocv_criterion(stats: CellStats) -> float:
    """Leave-one-out risk, exact from cell statistics; +inf if some cell has < 2 points."""
    k = stats.count
    if np.any(k < 2):
        return float("inf")
    return float(np.sum((k / (k - 1)) ** 2 * stats.css) / stats.n)


def select_vfcv(dataset: Dataset, collection: ModelCollection, V: int | None = None,
                fold_assignment: NDArray[np.intp] | None = None, rng: np.random.Generator | None = None,
                *, threshold: int = 3) -> SelectionResult:
    """V-fold CV selection (``V=None`` or ``V=n`` for leave-one-out).

    Models that some training fold cannot fit are filtered for CV only.
    """
    n = dataset.n
    stats = [cell_stats(dataset, m) for m in collection.models]
    kept = kept_mask(stats, threshold)
    if not kept.any():
        raise NoSelectableModelError(f"no model has {threshold} or more points in every cell")
    loo = V is None or (V == n and fold_assignment is None)
    if not loo and fold_assignment is None:
        if rng is None:
            raise ValueError("V-fold CV needs an rng or a fold assignment")
        fold_assignment = draw_folds(n, V, rng)
    crit = np.full(len(collection), np.inf)
    for i in np.flatnonzero(kept):
        if loo:
            crit[i] = loocv_criterion(stats[i])
            continue
        try:
            crit[i] = vfcv_criterion(dataset, collection.models[i], fold_assignment, V)
        except UntrainableFoldError:
            pass
    filtered = ~np.isfinite(crit)
    return SelectionResult(argmin_tiebreak(crit, collection.dims), crit, filtered, np.full(len(collection), np.nan))
