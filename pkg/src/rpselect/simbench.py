"""Simulation benchmark: data generators, model collections and the
replication engine producing the oracle-ratio accuracy indices.

For one procedure over N replications,

    C_or      = mean(loss of selected model) / mean(oracle loss)
    C_path-or = mean(loss of selected model / oracle loss)

where the oracle loss is the smallest excess loss over the whole collection
(models with an empty cell have infinite loss).
"""

from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .core import (
    CellMoments,
    CellStats,
    Dataset,
    Partition,
    RegressionTruth,
    cell_stats,
    excess_loss_decomposed,
)
from .penalties import (
    PenaltySpec,
    UntrainableFoldError,
    estimate_sigma2,
    expected_ideal_penalty,
    mallows_penalty,
    rp_penalty_closed,
    rp_penalty_mc,
    vfold_penalty,
)
from .selection import CVSpec, ModelCollection, argmin_tiebreak, kept_mask, loocv_criterion, vfcv_criterion
from .weights import Efron, Loo, Poisson, Rademacher, Rho, fold_assignment

RESULT_COLUMNS = ("procedure", "c_or", "c_or_se", "c_path_or", "c_path_or_se", "mean_dim", "n_dropped")
MAX_DROP_FRACTION = 0.01
OVERPEN = 1.25

TAG_DATA, TAG_FOLDS, TAG_MC = 0, 1, 2


class BenchmarkError(RuntimeError):
    pass


# -- regression functions -----------------------------------------------------

def heavisine(x):
    """Donoho-Johnstone HeaviSine, with jumps at 0.3 and 0.72."""
    x = np.asarray(x, dtype=float)
    out = 4 * np.sin(4 * np.pi * x) - np.sign(x - 0.3) - np.sign(0.72 - x)
    return out if out.ndim else float(out)


def sin_pi(x):
    out = np.sin(np.pi * np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def sigma_one(x):
    out = np.ones_like(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def sigma_x(x):
    out = np.asarray(x, dtype=float) * 1.0
    return out if out.ndim else float(out)


REGRESSION_FUNCTIONS = {"sin": (sin_pi, ()), "heavisine": (heavisine, (0.3, 0.72))}
NOISE_LEVELS = {"one": sigma_one, "x": sigma_x}

# Truth objects cache the cell integrals they compute, so share them.
_TRUTHS: dict[tuple[str, str], RegressionTruth] = {}


def make_truth(s: str, sigma: str) -> RegressionTruth:
    key = (s, sigma)
    if key not in _TRUTHS:
        if s not in REGRESSION_FUNCTIONS or sigma not in NOISE_LEVELS:
            raise ValueError(f"unknown truth ({s!r}, {sigma!r})")
        f, jumps = REGRESSION_FUNCTIONS[s]
        _TRUTHS[key] = RegressionTruth(f, NOISE_LEVELS[sigma], jumps, name=f"{s}/{sigma}")
    return _TRUTHS[key]


# -- model collections --------------------------------------------------------

COLLECTION_RULES = ("regular", "two_bin", "dyadic", "dyadic_two_bin")


def model_collection(rule: str, n: int) -> ModelCollection:
    """Model collections of the four experiments, by rule name or experiment name."""
    rule = {"s1": "regular", "s2": "two_bin", "hsd1": "dyadic", "hsd2": "dyadic_two_bin"}.get(rule.lower(), rule)
    if rule == "regular":
        dims = range(1, int(n / math.log(n)) + 1)
        return ModelCollection(tuple(Partition.regular(d) for d in dims), tuple(f"D={d}" for d in dims))
    if rule == "two_bin":
        top = int(n / (2 * math.log(n)))
        models, labels = [Partition.regular(1)], ["const"]
        for d1 in range(1, top + 1):
            for d2 in range(1, top + 1):
                models.append(Partition.two_bin_sizes(d1, d2))
                labels.append(f"D1={d1},D2={d2}")
        return ModelCollection(tuple(models), tuple(labels))
    kmax = int(math.floor(math.log2(n)))
    if rule == "dyadic":
        ks = range(0, kmax)
        return ModelCollection(tuple(Partition.regular(2**k) for k in ks), tuple(f"k={k}" for k in ks))
    if rule == "dyadic_two_bin":
        models, labels = [Partition.regular(1)], ["const"]
        for k1 in range(0, kmax - 1):
            for k2 in range(0, kmax - 1):
                models.append(Partition.two_bin_sizes(2**k1, 2**k2))
                labels.append(f"k1={k1},k2={k2}")
        return ModelCollection(tuple(models), tuple(labels))
    raise ValueError(f"unknown collection rule {rule!r}")


# -- procedures ---------------------------------------------------------------

_SCHEMES = {"efr": Efron(), "rad": Rademacher(0.5), "poi": Poisson(1.0), "rho": Rho(), "loo": Loo()}
STANDARD_PROCEDURES = ("eideal", "eideal+", "mallows", "mallows+", "vfcv2", "vfcv5", "vfcv10", "vfcv20", "loocv",
                     "penrad", "penrho", "penloo", "penefr", "penrad+", "penrho+", "penloo+", "penefr+")


@dataclass(frozen=True)
class Procedure:
    token: str
    spec: PenaltySpec | CVSpec | None  # None is the oracle itself


def parse_procedure(token: str) -> Procedure:
    """Parse ``pen{efr,rad,poi,rho,loo}[+]``, ``mallows[+]``, ``eideal[+]``,
    ``vfcvK``, ``loocv``, ``vfpenK[+]``, ``mcpen{...}[+]`` or ``oracle``."""
    t = token.strip().lower()
    plus = t.endswith("+")
    base = t[:-1] if plus else t
    c = OVERPEN if plus else 1.0
    m = re.fullmatch(r"(pen|mcpen)(efr|rad|poi|rho|loo)", base)
    if m:
        kind = "rp" if m.group(1) == "pen" else "rp_mc"
        return Procedure(t, PenaltySpec(kind, _SCHEMES[m.group(2)], c_over_cw=c))
    if base == "mallows":
        return Procedure(t, PenaltySpec("mallows", c_over_cw=c))
    if base == "eideal":
        return Procedure(t, PenaltySpec("eideal", c_over_cw=c))
    m = re.fullmatch(r"vfpen(\d+)", base)
    if m and int(m.group(1)) >= 2:
        return Procedure(t, PenaltySpec("vfpen", V=int(m.group(1)), c_over_cw=c))
    if not plus:
        m = re.fullmatch(r"vfcv(\d+)", base)
        if m and int(m.group(1)) >= 2:
            return Procedure(t, CVSpec(int(m.group(1))))
        if base == "loocv":
            return Procedure(t, CVSpec(None))
        if base == "oracle":
            return Procedure(t, None)
    raise ValueError(f"unknown procedure {token!r}")


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    n: int
    s: str
    sigma: str
    collection_rule: str
    procedures: tuple[str, ...] = STANDARD_PROCEDURES
    replications: int = 1000
    base_seed: int = 20080101
    paired: bool = True
    mc_draws: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "procedures", tuple(self.procedures))
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.n < 2:
            raise ValueError("need n >= 2")
        if self.collection_rule not in COLLECTION_RULES:
            raise ValueError(f"unknown collection rule {self.collection_rule!r}")
        for p in self.procedures:
            parse_procedure(p)
        make_truth(self.s, self.sigma)

    @property
    def truth(self) -> RegressionTruth:
        return make_truth(self.s, self.sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["procedures"] = list(self.procedures)
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        if base is None:
            return cls(**d)
        merged = base.to_dict()
        merged.update(d)
        return cls(**merged)


PRESETS = {
    "S1": ExperimentConfig("S1", 200, "sin", "one", "regular"),
    "S2": ExperimentConfig("S2", 200, "sin", "x", "two_bin"),
    "HSd1": ExperimentConfig("HSd1", 2048, "heavisine", "one", "dyadic"),
    "HSd2": ExperimentConfig("HSd2", 2048, "heavisine", "x", "dyadic_two_bin"),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    for key, cfg in PRESETS.items():
        if key.lower() == name.lower():
            return ExperimentConfig.from_dict(overrides, base=cfg)
    raise ValueError(f"unknown experiment {name!r}")


def substream(base_seed: int, rep: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, rep, tag, *extra]))


def gen_dataset(config: ExperimentConfig, replication_index: int, stream: int = 0) -> Dataset:
    """Uniform design, Gaussian noise; ``stream`` > 0 gives independent unpaired copies."""
    extra = (stream,) if stream else ()
    rng = substream(config.base_seed, replication_index, TAG_DATA, *extra)
    truth = config.truth
    x = rng.random(config.n)
    y = truth.s(x) + truth.sigma(x) * rng.standard_normal(config.n)
    return Dataset(x, y)


# -- losses -------------------------------------------------------------------

@dataclass(frozen=True)
class LossDecomposition:
    """bias = l(s, s_m), p1 = sum p (beta - beta_hat)^2, p2 = sum p_hat (beta - beta_hat)^2."""

    bias: float
    p1: float
    p2: float

    @property
    def excess_loss(self) -> float:
        return self.bias + self.p1


def loss_decomposition(moments: CellMoments, stats: CellStats) -> LossDecomposition:
    if np.any(stats.count == 0):
        return LossDecomposition(moments.bias, float("inf"), float("inf"))
    err2 = (stats.sum_y / stats.count - moments.beta) ** 2
    return LossDecomposition(moments.bias, float(np.sum(moments.width * err2)),
                             float(np.sum(stats.count / stats.n * err2)))


def _fit_values(stats: CellStats) -> NDArray[np.float64]:
    return np.divide(stats.sum_y, stats.count, out=np.full(stats.count.size, np.nan), where=stats.count > 0)


def oracle_losses(truth: RegressionTruth, collection: ModelCollection, dataset: Dataset):
    """(per-model excess loss, oracle index, oracle loss)."""
    losses = np.array([excess_loss_decomposed(truth.moments(m), _fit_values(cell_stats(dataset, m)))
                       for m in collection.models])
    i = int(np.argmin(losses))
    return losses, i, float(losses[i])


# -- replication engine -------------------------------------------------------

@dataclass
class _Context:
    config: ExperimentConfig
    collection: ModelCollection
    moments: list[CellMoments]
    procedures: list[Procedure]
    eideal: dict[float, NDArray[np.float64]]


def _selected(ctx: _Context, proc: Procedure, pidx: int, rep: int, dataset: Dataset,
              stats: list[CellStats], kept: NDArray[np.bool_], losses: NDArray[np.float64]) -> int:
    n = dataset.n
    dims = ctx.collection.dims
    crit = np.full(len(stats), np.inf)
    spec = proc.spec
    ids = np.flatnonzero(kept)
    if spec is None:
        # the oracle itself, over the whole collection
        return int(np.argmin(losses))
    if isinstance(spec, CVSpec):
        if spec.V is None:
            for i in ids:
                crit[i] = loocv_criterion(stats[i])
        else:
            folds = fold_assignment(n, spec.V, substream(ctx.config.base_seed, rep, TAG_FOLDS, spec.V))
            for i in ids:
                try:
                    crit[i] = vfcv_criterion(dataset, ctx.collection.models[i], folds, spec.V)
                except UntrainableFoldError:
                    pass
        return argmin_tiebreak(crit, dims)

    risk = np.array([s.css.sum() / n for s in stats])
    C = spec.constant(n)
    if spec.kind == "rp":
        for i in ids:
            crit[i] = risk[i] + rp_penalty_closed(stats[i], spec.scheme, C, n)
    elif spec.kind == "mallows":
        s2 = estimate_sigma2(dataset)
        crit[ids] = risk[ids] + np.array([mallows_penalty(int(d), s2, n, C) for d in dims[ids]])
    elif spec.kind == "eideal":
        crit[ids] = risk[ids] + ctx.eideal[spec.c_over_cw][ids]
    elif spec.kind == "vfpen":
        folds = fold_assignment(n, spec.V, substream(ctx.config.base_seed, rep, TAG_FOLDS, spec.V))
        for i in ids:
            try:
                crit[i] = risk[i] + vfold_penalty(dataset, ctx.collection.models[i], spec.V, C, folds)
            except UntrainableFoldError:
                pass
    elif spec.kind == "rp_mc":
        rng = substream(ctx.config.base_seed, rep, TAG_MC, pidx)
        for i in ids:
            crit[i] = risk[i] + rp_penalty_mc(dataset, ctx.collection.models[i], spec.scheme, C,
                                              ctx.config.mc_draws, rng).value
    return argmin_tiebreak(crit, dims)


def _evaluate(ctx: _Context, dataset: Dataset, rep: int, which: Sequence[int]):
    """Oracle loss and (selected loss, selected dim) for procedures ``which``; None if dropped."""
    stats = [cell_stats(dataset, m) for m in ctx.collection.models]
    losses = np.array([excess_loss_decomposed(mom, _fit_values(st)) for mom, st in zip(ctx.moments, stats)])
    kept = kept_mask(stats)
    if not kept.any():
        return None
    oracle = float(losses.min())
    out = []
    for j in which:
        i = _selected(ctx, ctx.procedures[j], j, rep, dataset, stats, kept, losses)
        out.append((float(losses[i]), ctx.collection.models[i].dim))
    return oracle, out


def _replicate(ctx: _Context, rep: int):
    k = len(ctx.procedures)
    if ctx.config.paired:
        res = _evaluate(ctx, gen_dataset(ctx.config, rep), rep, range(k))
        if res is None:
            return None
        oracle, out = res
        return [(oracle, *o) for o in out]
    rows = []
    for j in range(k):
        res = _evaluate(ctx, gen_dataset(ctx.config, rep, stream=j + 1), rep, [j])
        rows.append(None if res is None else (res[0], *res[1][0]))
    return rows


@dataclass
class ProcedureSummary:
    procedure: str
    c_or: float
    c_or_se: float
    c_path_or: float
    c_path_or_se: float
    mean_dim: float
    n_dropped: int
    c_or_se_plain: float

    def row(self) -> list:
        return [self.procedure, self.c_or, self.c_or_se, self.c_path_or, self.c_path_or_se, self.mean_dim, self.n_dropped]


@dataclass
class BenchmarkResult:
    config: ExperimentConfig
    summaries: list[ProcedureSummary]
    selected_loss: NDArray[np.float64]  # (N, procedures); NaN where dropped
    oracle_loss: NDArray[np.float64]  # (N, procedures)
    selected_dim: NDArray[np.float64]
    n_dropped: int = 0
    procedures: tuple[str, ...] = field(default=())

    def __getitem__(self, token: str) -> ProcedureSummary:
        for s in self.summaries:
            if s.procedure == token:
                return s
        raise KeyError(token)

    def paired_difference(self, a: str, b: str) -> tuple[float, float]:
        """C_or(a) - C_or(b) and its delta-method SE over shared replications."""
        ia, ib = self.procedures.index(a), self.procedures.index(b)
        la, lb = self.selected_loss[:, ia], self.selected_loss[:, ib]
        oa, ob = self.oracle_loss[:, ia], self.oracle_loss[:, ib]
        ok = np.isfinite(la) & np.isfinite(lb)
        if not np.array_equal(oa[ok], ob[ok]):
            raise BenchmarkError("paired difference needs a paired benchmark")
        la, lb, o = la[ok], lb[ok], oa[ok]
        obar = o.mean()
        diff = (la.mean() - lb.mean()) / obar
        infl = (la - lb - diff * o) / obar
        return float(diff), float(infl.std(ddof=1) / math.sqrt(ok.sum()))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for s in self.summaries:
                w.writerow([s.procedure] + [repr(float(v)) for v in s.row()[1:6]] + [s.n_dropped])


def _summarize(token: str, sel: NDArray, orc: NDArray, dims: NDArray) -> ProcedureSummary:
    ok = np.isfinite(sel)
    sel, orc, dims = sel[ok], orc[ok], dims[ok]
    N = sel.size
    obar = orc.mean()
    c_or = sel.mean() / obar
    ratios = sel / orc
    if N > 1:
        infl = (sel - c_or * orc) / obar
        c_or_se = infl.std(ddof=1) / math.sqrt(N)
        c_path_se = ratios.std(ddof=1) / math.sqrt(N)
        plain = sel.std(ddof=1) / obar / math.sqrt(N)
    else:
        c_or_se = c_path_se = plain = float("nan")
    return ProcedureSummary(token, float(c_or), float(c_or_se), float(ratios.mean()), float(c_path_se),
                            float(dims.mean()), int((~ok).sum()), float(plain))


def run_benchmark(config: ExperimentConfig, threads: int = 1) -> BenchmarkResult:
    """Run every procedure of ``config`` on ``config.replications`` datasets."""
    collection = model_collection(config.collection_rule, config.n)
    truth = config.truth
    procedures = [parse_procedure(p) for p in config.procedures]
    moments = [truth.moments(m) for m in collection.models]
    eideal = {}
    for p in procedures:
        if isinstance(p.spec, PenaltySpec) and p.spec.kind == "eideal":
            c = p.spec.c_over_cw
            if c not in eideal:
                eideal[c] = np.array([expected_ideal_penalty(truth, m, config.n, c) for m in collection.models])
    ctx = _Context(config, collection, moments, procedures, eideal)

    N = config.replications
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda r: _replicate(ctx, r), range(N)))
    else:
        rows = [_replicate(ctx, r) for r in range(N)]

    k = len(procedures)
    sel = np.full((N, k), np.nan)
    orc = np.full((N, k), np.nan)
    dim = np.full((N, k), np.nan)
    for r, row in enumerate(rows):
        if row is None:
            continue
        for j, cell in enumerate(row):
            if cell is not None:
                orc[r, j], sel[r, j], dim[r, j] = cell
    dropped_per_proc = np.isnan(sel).sum(axis=0)
    if dropped_per_proc.max(initial=0) > MAX_DROP_FRACTION * N:
        raise BenchmarkError(f"{int(dropped_per_proc.max())} of {N} replications had no selectable model")
    if dropped_per_proc.min(initial=0) == N:
        raise BenchmarkError("every replication was dropped")
    summaries = [_summarize(p.token, sel[:, j], orc[:, j], dim[:, j]) for j, p in enumerate(procedures)]
    return BenchmarkResult(config, summaries, sel, orc, dim, int(dropped_per_proc.max(initial=0)),
                           tuple(p.token for p in procedures))
