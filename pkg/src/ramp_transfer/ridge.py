"""Closed-form ridge regression, penalty selection by CV, repeated-run
coefficient averaging and threshold-based variable filtering."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin

from .core import RampTransferError
from .correction import Dataset

DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)

# Variable-filtering thresholds per predicted quantity.
DEFAULT_THRESHOLDS = {"speed": 0.5, "occupancy": 0.5, "flow": 50.0}


class EmptyDataset(RampTransferError):
    pass


class SingularSystem(RampTransferError):
    """The unpenalized normal equations are rank deficient."""


class InsufficientRows(RampTransferError):
    pass


@dataclass
class StandardizationRecord:
    """Column transforms applied before a fit, needed to undo predictions."""

    column_means: dict[str, float]
    column_scales: dict[str, float]
    target_mean: float
    zero_variance: tuple[str, ...] = ()


@dataclass
class RidgeModel:
    coefficients: dict[str, float]
    lam: float
    column_means: dict[str, float]
    column_scales: dict[str, float]
    target_mean: float


@dataclass
class SelectionResult:
    """Per-target averaged coefficients and the variables passing threshold."""

    coefficients: dict[str, dict[str, float]]  # target -> variable -> value
    thresholds: dict[str, float]  # target -> threshold applied
    selected: dict[str, tuple[str, ...]]  # target -> retained variables
    fallback: tuple[str, ...] = ()  # targets where no variable passed


def standardize(dataset: Dataset, target: str):
    """Center/scale inputs to sample sd 1 and center the target.

    Zero-variance columns are scaled by 1 and flagged. Returns the design
    matrix, centered target vector and the transform record.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot standardize an empty dataset")
    X = dataset.X()
    y = dataset.y(target)
    means, scales, flagged = {}, {}, []
    Xs = np.empty_like(X)
    for j, name in enumerate(dataset.input_columns):
        col = X[:, j]
        mu = float(col.mean())
        sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0
        if sd == 0.0:
            flagged.append(name)
            sd = 1.0
        means[name] = mu
        scales[name] = sd
        Xs[:, j] = (col - mu) / sd
    target_mean = float(y.mean())
    record = StandardizationRecord(column_means=means, column_scales=scales,
                                   target_mean=target_mean,
                                   zero_variance=tuple(flagged))
    return Xs, y - target_mean, record


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve (X'X + lam*I) beta = X'y by a symmetric positive-definite solve."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("X must be a nonempty n x p matrix")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    A = X.T @ X + lam * np.eye(X.shape[1])
    b = X.T @ y
    try:
        beta = scipy.linalg.solve(A, b, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"normal equations not solvable: {exc}") from exc
    residual = np.linalg.norm(A @ beta - b)
    if residual > 1e-8 * max(np.linalg.norm(b), 1.0):
        raise SingularSystem(
            f"solve residual {residual:.3e} exceeds tolerance; "
            "X'X is rank deficient at lambda=0")
    return beta


def select_lambda(X: np.ndarray, y: np.ndarray,
                  grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                  folds: int = 5, seed: int = 0) -> float:
    """Pick the grid penalty minimizing mean held-out squared error.

    Fold assignment is a seeded shuffle; ties break toward the larger
    penalty.
    """
    if not len(grid):
        raise ValueError("lambda grid must be non-empty")
    n = len(y)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise InsufficientRows(f"{n} rows < {folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds

    best_lam, best_mse = None, None
    for lam in grid:
        errors = []
        for f in range(folds):
            test = fold_of == f
            beta = ridge_fit(X[~test], y[~test], lam)
            resid = y[test] - X[test] @ beta
            errors.append(float(np.mean(resid ** 2)))
        mse = float(np.mean(errors))
        if best_mse is None or mse < best_mse or (mse == best_mse
                                                  and lam > best_lam):
            best_lam, best_mse = lam, mse
    return best_lam


def averaged_fit(dataset: Dataset, target: str, runs: int = 10,
                 subsample: float = 0.8, seed: int = 0,
                 lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                 folds: int = 5) -> dict[str, float]:
    """Average coefficients over seeded subsampled refits.

    Each run draws a row subsample without replacement, standardizes it,
    selects the penalty by CV and solves the ridge system; the returned
    vector is the elementwise mean across runs. Zero-variance columns get
    coefficient exactly 0.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if len(dataset) == 0:
        raise EmptyDataset("cannot fit an empty dataset")
    n = len(dataset)
    size = max(folds, int(round(n * subsample))) if subsample < 1.0 else n
    size = min(size, n)
    rng = np.random.default_rng(seed)

    total = np.zeros(len(dataset.input_columns))
    for _ in range(runs):
        if size < n:
            indices = np.sort(rng.choice(n, size=size, replace=False))
            subset = dataset.subset(indices.tolist())
        else:
            subset = dataset
        Xs, yc, record = standardize(subset, target)
        lam = select_lambda(Xs, yc, grid=lambda_grid, folds=folds,
                            seed=int(rng.integers(2 ** 31)))
        beta = ridge_fit(Xs, yc, lam)
        for j, name in enumerate(subset.input_columns):
            if name in record.zero_variance:
                beta[j] = 0.0
        total += beta
    mean = total / runs
    return dict(zip(dataset.input_columns, mean.tolist()))


def threshold_kind(target: str) -> str:
    """Classify a target column into its filtering-threshold family."""
    lowered = target.lower()
    if "speed" in lowered:
        return "speed"
    if "occupancy" in lowered:
        return "occupancy"
    if "flow" in lowered:
        return "flow"
    raise KeyError(f"no threshold family for target {target!r}")


def filter_variables(coefficients: dict[str, dict[str, float]],
                     thresholds: Optional[dict[str, float]] = None
                     ) -> SelectionResult:
    """Retain, per target, variables whose |averaged coefficient| exceeds the
    target kind's threshold. When nothing passes, all variables are kept and
    the target is flagged."""
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    for value in thresholds.values():
        if value < 0:
            raise ValueError("thresholds must be nonnegative")
    applied, selected, fallback = {}, {}, []
    for target, coeffs in coefficients.items():
        threshold = thresholds[threshold_kind(target)]
        applied[target] = threshold
        keep = tuple(name for name, value in coeffs.items()
                     if abs(value) > threshold)
        if not keep:
            warnings.warn(
                f"no variable passed the {threshold} threshold for {target}; "
                "keeping all variables", stacklevel=2)
            fallback.append(target)
            keep = tuple(coeffs)
        selected[target] = keep
    return SelectionResult(coefficients={t: dict(c) for t, c
                                         in coefficients.items()},
                           thresholds=applied, selected=selected,
                           fallback=tuple(fallback))


def selection_to_csv(result: SelectionResult) -> str:
    """Coefficient table, variables as rows and targets as columns, with a
    parallel selected/'' flag column per target."""
    targets = list(result.coefficients)
    variables: list[str] = []
    for coeffs in result.coefficients.values():
        for name in coeffs:
            if name not in variables:
                variables.append(name)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["variable"]
    for t in targets:
        header += [t, f"{t}__selected"]
    writer.writerow(header)
    for name in variables:
        row = [name]
        for t in targets:
            value = result.coefficients[t].get(name, "")
            flag = "1" if name in result.selected[t] else ""
            row += ["" if value == "" else f"{value:.6f}", flag]
        writer.writerow(row)
    return out.getvalue()


class RidgeRegressor(BaseEstimator, RegressorMixin):
    """Closed-form ridge with internal standardization.

    ``lam=None`` selects the penalty from ``lambda_grid`` by seeded k-fold CV
    at fit time.
    """

    def __init__(self, lam: Optional[float] = None,
                 lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                 folds: int = 5, seed: int = 0):
        self.lam = lam
        self.lambda_grid = lambda_grid
        self.folds = folds
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.means_ = X.mean(axis=0)
        sds = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
        self.zero_variance_ = sds == 0.0
        self.scales_ = np.where(self.zero_variance_, 1.0, sds)
        Xs = (X - self.means_) / self.scales_
        self.target_mean_ = float(y.mean())
        yc = y - self.target_mean_
        lam = self.lam
        if lam is None:
            lam = select_lambda(Xs, yc, grid=self.lambda_grid,
                                folds=self.folds, seed=self.seed)
        self.lam_ = lam
        self.coef_ = ridge_fit(Xs, yc, lam)
        self.coef_[self.zero_variance_] = 0.0
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        Xs = (X - self.means_) / self.scales_
        return self.target_mean_ + Xs @ self.coef_
