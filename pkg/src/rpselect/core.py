"""Histogram models on [0, 1]: partitions, regressograms and their losses."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

QUAD_EPSABS = 1e-10


class UndefinedCellError(ValueError):
    """A regressogram was evaluated on a cell that holds no data.

    Such a model has no unique least-squares fit and must be filtered out.
    """


@dataclass(frozen=True, eq=False)
class Partition:
    """Cells ``[b_{j-1}, b_j)`` of [0, 1]; the last cell also contains 1."""

    breakpoints: NDArray[np.float64]

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two breakpoints")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)

    @classmethod
    def regular(cls, d: int) -> "Partition":
        return cls(np.arange(d + 1) / d)

    @classmethod
    def two_bin_sizes(cls, d1: int, d2: int) -> "Partition":
        """``d1`` regular cells on [0, 1/2) followed by ``d2`` on [1/2, 1]."""
        left = np.arange(d1) / (2 * d1)
        right = 0.5 + np.arange(d2 + 1) / (2 * d2)
        return cls(np.concatenate([left, right]))

    @property
    def dim(self) -> int:
        return self.breakpoints.size - 1

    @property
    def widths(self) -> NDArray[np.float64]:
        return np.diff(self.breakpoints)

    @property
    def cells(self) -> list[tuple[float, float]]:
        b = self.breakpoints
        return [(float(b[j]), float(b[j + 1])) for j in range(self.dim)]

    def locate(self, x: ArrayLike) -> NDArray[np.intp]:
        """Cell index of each point; x = 1 goes to the last cell."""
        idx = np.searchsorted(self.breakpoints, np.asarray(x, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.dim - 1)

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.breakpoints, other.breakpoints)

    def __hash__(self):
        return hash(self.breakpoints.tobytes())

    def __repr__(self):
        return f"Partition(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class Dataset:
    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.size != y.size:
            raise ValueError("x and y must have the same length")
        if x.size == 0:
            raise ValueError("empty dataset")
        if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
            raise ValueError("every x must lie in [0, 1]")
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    def subset(self, mask: NDArray[np.bool_]) -> "Dataset":
        return Dataset(self.x[mask], self.y[mask])


@dataclass(frozen=True)
class CellStats:
    """Per-cell sufficient statistics of a dataset on a partition.

    ``css`` is the within-cell centered sum of squares, computed in two
    passes, so that ``count * css == count * sum_y2 - sum_y**2`` without the
    cancellation the raw formula suffers from when |y| is large.
    """

    partition: Partition
    count: NDArray[np.int64]
    sum_y: NDArray[np.float64]
    sum_y2: NDArray[np.float64]
    css: NDArray[np.float64]

    @property
    def n(self) -> int:
        return int(self.count.sum())

    @property
    def scatter(self) -> NDArray[np.float64]:
        """``n p_hat S_2 - S_1**2`` per cell; independent of the centering."""
        return self.count * self.css

    @property
    def min_count(self) -> int:
        return int(self.count.min())


def _cell_stats_from_index(partition: Partition, idx: NDArray[np.intp], y: NDArray[np.float64]) -> CellStats:
    d = partition.dim
    count = np.bincount(idx, minlength=d)
    sum_y = np.bincount(idx, weights=y, minlength=d)
    sum_y2 = np.bincount(idx, weights=y * y, minlength=d)
    mean = np.divide(sum_y, count, out=np.zeros(d), where=count > 0)
    resid = y - mean[idx]
    css = np.bincount(idx, weights=resid * resid, minlength=d)
    return CellStats(partition, count, sum_y, sum_y2, css)


def cell_stats(dataset: Dataset, partition: Partition) -> CellStats:
    return _cell_stats_from_index(partition, partition.locate(dataset.x), dataset.y)


@dataclass(frozen=True)
class Regressogram:
    partition: Partition
    values: NDArray[np.float64]
    defined_mask: NDArray[np.bool_]

    @property
    def fully_defined(self) -> bool:
        return bool(self.defined_mask.all())

    def predict(self, x: ArrayLike) -> NDArray[np.float64]:
        idx = self.partition.locate(x)
        if not self.defined_mask[idx].all():
            raise UndefinedCellError("prediction requested in an empty cell")
        return self.values[idx]


def fit_regressogram(stats: CellStats) -> Regressogram:
    mask = stats.count > 0
    values = np.divide(stats.sum_y, stats.count, out=np.full(stats.count.size, np.nan), where=mask)
    return Regressogram(stats.partition, values, mask)


def empirical_risk(fit: Regressogram, dataset: Dataset) -> float:
    """Mean squared residual of ``fit`` on ``dataset``."""
    resid = dataset.y - fit.predict(dataset.x)
    return float(np.mean(resid * resid))


@dataclass(frozen=True)
class RegressionTruth:
    """Known regression function and noise level, with X uniform on [0, 1].

    ``jumps`` lists discontinuities of ``s`` (or ``sigma``) that quadrature
    must not straddle.
    """

    s: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    sigma: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    jumps: tuple[float, ...] = ()
    name: str = "custom"
    _moments: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def _quad(self, f, a: float, b: float) -> float:
        pts = [t for t in self.jumps if a < t < b]
        val, _ = integrate.quad(f, a, b, points=pts or None, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)
        return val

    def cell_moments(self, a: float, b: float) -> tuple[float, float, float]:
        """(int s, int s^2, int sigma^2) over [a, b), cached per cell."""
        key = (a, b)
        out = self._moments.get(key)
        if out is None:
            s, sig = self.s, self.sigma
            out = (
                self._quad(lambda t: float(s(t)), a, b),
                self._quad(lambda t: float(s(t)) ** 2, a, b),
                self._quad(lambda t: float(sig(t)) ** 2, a, b),
            )
            self._moments[key] = out
        return out

    def moments(self, partition: Partition) -> "CellMoments":
        rows = np.array([self.cell_moments(a, b) for a, b in partition.cells])
        return CellMoments(partition.widths, rows[:, 0], rows[:, 1], rows[:, 2])


@dataclass(frozen=True)
class CellMoments:
    """Integrals of s, s^2 and sigma^2 over every cell of a partition."""

    width: NDArray[np.float64]
    int_s: NDArray[np.float64]
    int_s2: NDArray[np.float64]
    int_sigma2: NDArray[np.float64]

    @cached_property
    def beta(self) -> NDArray[np.float64]:
        """Cell means of s, i.e. the coefficients of the best fit s_m."""
        return self.int_s / self.width

    @cached_property
    def bias_per_cell(self) -> NDArray[np.float64]:
        return np.maximum(self.int_s2 - self.int_s**2 / self.width, 0.0)

    @property
    def bias(self) -> float:
        return float(self.bias_per_cell.sum())

    @cached_property
    def cond_var(self) -> NDArray[np.float64]:
        """Var(Y | X in cell): noise plus the spread of s inside the cell."""
        return (self.int_sigma2 + self.bias_per_cell) / self.width


def excess_loss(truth: RegressionTruth, fit: Regressogram) -> float:
    """Integrated squared error of ``fit`` against ``truth.s`` under uniform X.

    Returns ``inf`` when some cell is undefined.
    """
    if not fit.fully_defined:
        return float("inf")
    total = 0.0
    for (a, b), v in zip(fit.partition.cells, fit.values):
        total += truth._quad(lambda t, v=v: (v - float(truth.s(t))) ** 2, a, b)
    return total


def excess_loss_decomposed(moments: CellMoments, values: NDArray[np.float64]) -> float:
    """Same loss as :func:`excess_loss`, as bias + sum_l p_l (b_hat_l - b_l)^2."""
    if not np.all(np.isfinite(values)):
        return float("inf")
    est = moments.width * (values - moments.beta) ** 2
    return moments.bias + float(est.sum())


def read_dataset(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x", "y"]:
            raise ValueError(f"{path}: expected header 'x,y'")
        rows = [(float(r["x"]), float(r["y"])) for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return Dataset(arr[:, 0], arr[:, 1])


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for xi, yi in zip(dataset.x, dataset.y):
            w.writerow([repr(float(xi)), repr(float(yi))])


def piecewise_constant(partition: Partition, values: Sequence[float]) -> Callable:
    """Vectorised step function, handy for building exactly representable truths."""
    vals = np.asarray(values, dtype=float)

    def f(x):
        return vals[partition.locate(np.atleast_1d(x))] if np.ndim(x) else float(vals[partition.locate([x])[0]])

    return f
