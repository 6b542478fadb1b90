"""Hyperparameter grids, 5-fold cross-validation, and AUC-based selection."""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .metrics import roc
from .network import default_architecture, tumor_scores
from .regularizers import METHODS, RegularizerConfig, SamplerSettings
from .rng import seed_stream
from .train import TrainConfig, train

LAMBDA_DECADES = tuple(10.0**e for e in range(-5, 3))  # 1e-5 .. 1e2
WD_DO_LAMBDAS = (1e-4, 1e-2)
DROPOUT_RATES = (0.1, 0.25, 0.5, 0.75)
POOLINGS = ("max", "average")


@dataclass(frozen=True)
class GridEntry:
    lam: float
    pooling: str
    r_do: Optional[float] = None

    def describe(self) -> str:
        s = f"lambda={self.lam:g} pooling={self.pooling}"
        if self.r_do is not None:
            s += f" r_do={self.r_do:g}"
        return s


@dataclass
class HyperGrid:
    method: str
    entries: tuple

    def __len__(self):
        return len(self.entries)


def enumerate_grid(method: str) -> HyperGrid:
    """The 16 candidate configurations per method: 8 lambda decades x 2
    poolings, except wd_do which uses 2 lambdas x 4 dropout rates x 2
    poolings."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "wd_do":
        entries = tuple(
            GridEntry(lam=lam, pooling=pool, r_do=r)
            for lam in WD_DO_LAMBDAS
            for r in DROPOUT_RATES
            for pool in POOLINGS
        )
    else:
        entries = tuple(
            GridEntry(lam=lam, pooling=pool) for lam in LAMBDA_DECADES for pool in POOLINGS
        )
    assert len(entries) == 16
    return HyperGrid(method=method, entries=entries)


@dataclass
class FoldSplit:
    """K disjoint, covering index partitions with sizes within 1 of each other."""

    folds: list
    seed: int

    def train_indices(self, k: int) -> np.ndarray:
        return np.concatenate([f for i, f in enumerate(self.folds) if i != k])


def kfold_split(n: int, k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle, then contiguous chunking into k folds."""
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldSplit(folds=list(np.array_split(perm, k)), seed=seed)


@dataclass
class SelectionResult:
    method: str
    entries: tuple
    fold_aucs: np.ndarray  # (configs, folds), NaN where unavailable
    mean_aucs: np.ndarray  # (configs,), NaN for failed configurations
    failures: dict  # config index -> first error message
    winner: int

    @property
    def winning_entry(self) -> GridEntry:
        return self.entries[self.winner]


def _reg_for(method: str, entry: GridEntry, train_x: np.ndarray, fn_samples: int,
             sampler: Optional[SamplerSettings]) -> RegularizerConfig:
    if method == "wd":
        return RegularizerConfig(method="wd", lam=entry.lam)
    if method == "wd_do":
        return RegularizerConfig(method="wd_do", lam=entry.lam, dropout_rate=entry.r_do)
    if method == "fn_dd":
        return RegularizerConfig(method="fn_dd", lam=entry.lam, reg_set=train_x)
    return RegularizerConfig(
        method="fn_ss", lam=entry.lam, sample_count=fn_samples, sampler=sampler
    )


def _cv_job(args):
    """Train one (configuration, fold) pair; returns ((ci, fi), auc, error)."""
    (ci, fi, entry, method, x, labels, fold_idx, train_idx, base, seed, fn_samples, sampler) = args
    try:
        arch = default_architecture(pooling=entry.pooling)
        config = TrainConfig(
            epochs=base.epochs,
            batch_size=base.batch_size,
            momentum=base.momentum,
            seed=seed,
            schedule=base.schedule,
        )
        reg = _reg_for(method, entry, x[train_idx], fn_samples, sampler)
        params, _ = train(x[train_idx], labels[train_idx], config, reg, arch=arch)
        curve = roc(tumor_scores(params, x[fold_idx]), labels[fold_idx])
        return (ci, fi), curve.auc, None
    except Exception as e:  # failed configs are excluded, not fatal
        return (ci, fi), None, f"{type(e).__name__}: {e}\n{traceback.format_exc(limit=3)}"


def cross_validate(
    x: np.ndarray,
    labels: np.ndarray,
    grid: HyperGrid,
    base_config: TrainConfig,
    k: int = 5,
    seed: int = 0,
    fn_samples: int = 32,
    sampler: Optional[SamplerSettings] = None,
    workers: int = 1,
    log=None,
) -> SelectionResult:
    """Mean held-out AUC per configuration over a shared k-fold split.

    The winner maximizes mean AUC; exact ties break toward smaller lambda,
    then max pooling.  Configurations that fail on any fold (or never yield
    a defined AUC) are excluded and reported in ``failures``.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    split = kfold_split(len(x), k, seed)
    jobs = []
    for ci, entry in enumerate(grid.entries):
        for fi in range(k):
            jobs.append(
                (
                    ci,
                    fi,
                    entry,
                    grid.method,
                    x,
                    labels,
                    split.folds[fi],
                    split.train_indices(fi),
                    base_config,
                    int(seed_stream(seed, f"cv-{ci}-{fi}").integers(2**31)),
                    fn_samples,
                    sampler,
                )
            )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_cv_job, jobs))
    else:
        raw = [_cv_job(j) for j in jobs]
    results = {key: (auc, err) for key, auc, err in raw}  # merge by sorted job key
    nconf = len(grid.entries)
    fold_aucs = np.full((nconf, k), np.nan)
    failures = {}
    for (ci, fi) in sorted(results):
        auc, err = results[(ci, fi)]
        if err is not None:
            failures.setdefault(ci, err)
            if log is not None:
                log(f"config {ci} ({grid.entries[ci].describe()}) fold {fi} failed: "
                    + err.splitlines()[0])
        elif auc is not None:
            fold_aucs[ci, fi] = auc
    mean_aucs = np.full(nconf, np.nan)
    for ci in range(nconf):
        if ci in failures:
            continue
        vals = fold_aucs[ci][~np.isnan(fold_aucs[ci])]
        if len(vals):
            mean_aucs[ci] = vals.mean()
        else:
            failures.setdefault(ci, "no fold produced a defined AUC")
    if np.all(np.isnan(mean_aucs)):
        raise RuntimeError("every configuration failed cross-validation")

    def sort_key(ci):
        e = grid.entries[ci]
        return (-mean_aucs[ci], e.lam, 0 if e.pooling == "max" else 1, e.r_do or 0.0)

    winner = min((ci for ci in range(nconf) if not np.isnan(mean_aucs[ci])), key=sort_key)
    return SelectionResult(
        method=grid.method,
        entries=grid.entries,
        fold_aucs=fold_aucs,
        mean_aucs=mean_aucs,
        failures=failures,
        winner=winner,
    )


def selection_table(result: SelectionResult) -> str:
    """Delimited table: configuration fields, per-fold AUCs, mean, winner mark."""
    k = result.fold_aucs.shape[1]
    header = ["lambda", "r_do", "pooling"] + [f"auc_fold{i}" for i in range(k)] + ["mean_auc", "selected"]
    lines = [",".join(header)]
    for ci, e in enumerate(result.entries):
        cells = [f"{e.lam:g}", "" if e.r_do is None else f"{e.r_do:g}", e.pooling]
        for fi in range(k):
            v = result.fold_aucs[ci, fi]
            cells.append("NA" if np.isnan(v) else f"{v:.6f}")
        m = result.mean_aucs[ci]
        cells.append("NA" if np.isnan(m) else f"{m:.6f}")
        cells.append("*" if ci == result.winner else "")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
