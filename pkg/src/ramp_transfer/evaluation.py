"""Metrics, leave-one-section-out cross-validation, grid search, the KNN
baseline, and report emission."""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .core import RampTransferError
from .correction import Dataset
from .boosting import AdaBoostR2
from .transfer import TwoStageTrAdaBoostR2

MAPE_ZERO_EPS = 1e-9

# Hyperparameter grids evaluated by default.
DEFAULT_GRIDS = {
    "tra": {"max_depth": [5, 10, 15, 20, 25],
            "n_estimators": [50, 100, 150, 200, 250]},
    "knn": {"n_neighbors": [1, 3, 5, 7, 9, 11, 13, 15, 17, 19]},
}


class LengthMismatch(RampTransferError):
    pass


class AllTargetsZero(RampTransferError):
    pass


class TooFewSections(RampTransferError):
    pass


class KTooLarge(RampTransferError):
    pass


class IoFailure(RampTransferError):
    pass


def mae(y: np.ndarray, yhat: np.ndarray) -> float:
    y, yhat = _check_pair(y, yhat)
    return float(np.mean(np.abs(yhat - y)))


def rmse(y: np.ndarray, yhat: np.ndarray) -> float:
    y, yhat = _check_pair(y, yhat)
    return float(np.sqrt(np.mean((yhat - y) ** 2)))


def mape(y: np.ndarray, yhat: np.ndarray) -> tuple[float, int]:
    """Mean absolute percentage error; near-zero targets are excluded and
    counted instead of dividing by them."""
    y, yhat = _check_pair(y, yhat)
    usable = np.abs(y) >= MAPE_ZERO_EPS
    skipped = int((~usable).sum())
    if not usable.any():
        raise AllTargetsZero("every target is (near) zero; MAPE undefined")
    value = float(np.mean(np.abs((yhat[usable] - y[usable]) / y[usable]))
                  * 100.0)
    return value, skipped


def _check_pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"shapes differ: {y.shape} vs {yhat.shape}")
    if len(y) == 0:
        raise LengthMismatch("empty vectors")
    return y, yhat


class KNNRegressor(BaseEstimator, RegressorMixin):
    """Mean of the k nearest training rows by Euclidean distance on inputs
    standardized by training statistics; distance ties go to the lower
    training-row index."""

    def __init__(self, n_neighbors: int = 5):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if self.n_neighbors > len(y):
            raise KTooLarge(f"k={self.n_neighbors} exceeds {len(y)} rows")
        self.means_ = X.mean(axis=0)
        sds = X.std(axis=0, ddof=1) if len(y) > 1 else np.zeros(X.shape[1])
        self.scales_ = np.where(sds == 0.0, 1.0, sds)
        self.X_ = (X - self.means_) / self.scales_
        self.y_ = y
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xs = (X - self.means_) / self.scales_
        out = np.empty(len(Xs))
        for i, row in enumerate(Xs):
            distances = np.linalg.norm(self.X_ - row, axis=1)
            nearest = np.argsort(distances, kind="stable")[:self.n_neighbors]
            out[i] = self.y_[nearest].mean()
        return out


def knn_fit(X, y, k: int) -> KNNRegressor:
    return KNNRegressor(n_neighbors=k).fit(X, y)


def knn_predict(model: KNNRegressor, x) -> float:
    return float(model.predict(np.atleast_2d(x))[0])


@dataclass
class ModelSpec:
    """Which model to evaluate and with what hyperparameters."""

    name: str  # "tra", "knn" or "adaboost"
    params: dict = field(default_factory=dict)

    def fit_predict(self, X_train, y_train, X_test, seed: int = 0):
        if self.name == "tra":
            model = TwoStageTrAdaBoostR2(seed=seed, **self.params)
            model.fit(X_train, y_train, target_inputs=X_test)
            return model.predict(X_test)
        if self.name == "knn":
            return KNNRegressor(**self.params).fit(X_train,
                                                   y_train).predict(X_test)
        if self.name == "adaboost":
            return AdaBoostR2(**self.params).fit(X_train,
                                                 y_train).predict(X_test)
        raise ValueError(f"unknown model {self.name!r}")


@dataclass
class MetricEntry:
    target: str
    section: str
    model: str
    mae: float
    rmse: float
    mape: float
    mape_skipped: int
    seconds: float = 0.0


@dataclass
class MetricReport:
    entries: list[MetricEntry] = field(default_factory=list)

    def sections(self) -> list[str]:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.section, None)
        return list(seen)

    def mean(self, metric: str, model: Optional[str] = None,
             target: Optional[str] = None) -> float:
        picked = [getattr(e, metric) for e in self.entries
                  if (model is None or e.model == model)
                  and (target is None or e.target == target)]
        return float(np.mean(picked))

    def to_json(self) -> str:
        # Wall-clock timings stay out of the canonical report so identical
        # runs serialize byte-identically.
        doc = [{"target": e.target, "section": e.section, "model": e.model,
                "mae": e.mae, "rmse": e.rmse, "mape": e.mape,
                "mape_skipped": e.mape_skipped} for e in self.entries]
        return json.dumps({"entries": doc}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        return cls(entries=[MetricEntry(seconds=0.0, **e)
                            for e in doc["entries"]])


def loso_cv(dataset: Dataset, target: str, spec: ModelSpec,
            seed: int = 0) -> MetricReport:
    """Leave-one-section-out evaluation: each section is held out once, the
    model trains on every other section's rows, and the held-out section's
    rows are scored."""
    sections = sorted(dataset.sections())
    if len(sections) < 2:
        raise TooFewSections("need at least 2 distinct sections")
    report = MetricReport()
    for section in sections:
        held, rest = dataset.split_by_section(section)
        start = time.perf_counter()
        preds = spec.fit_predict(rest.X(), rest.y(target), held.X(),
                                 seed=seed)
        elapsed = time.perf_counter() - start
        y_true = held.y(target)
        mape_value, skipped = mape(y_true, preds)
        report.entries.append(MetricEntry(
            target=target, section=section, model=spec.name,
            mae=mae(y_true, preds), rmse=rmse(y_true, preds),
            mape=mape_value, mape_skipped=skipped, seconds=elapsed))
    return report


@dataclass
class GridSpec:
    """Named hyperparameter value lists to cross."""

    values: dict[str, list]

    def __post_init__(self):
        if not self.values or any(not v for v in self.values.values()):
            raise ValueError("every grid dimension needs at least one value")

    def combinations(self) -> list[dict]:
        names = list(self.values)
        return [dict(zip(names, combo))
                for combo in itertools.product(*(self.values[n]
                                                 for n in names))]


@dataclass
class GridSearchResult:
    best_params: dict
    table: list[tuple[dict, float]]  # (params, mean LOSO MAE), grid order


def grid_search(dataset: Dataset, target: str, grid: GridSpec,
                model_name: str = "tra", base_params: Optional[dict] = None,
                seed: int = 0, budget: Optional[int] = None
                ) -> GridSearchResult:
    """Evaluate every grid combination by mean LOSO-CV MAE.

    Ties break toward smaller values in grid-dimension order (for the
    default grids: smaller max_depth, then smaller n_estimators). ``budget``
    caps the number of combinations by a seeded uniform subsample.
    """
    combos = grid.combinations()
    if budget is not None and budget < len(combos):
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(combos), size=budget, replace=False))
        combos = [combos[i] for i in chosen]
    base_params = base_params or {}
    table = []
    best = None
    for params in combos:
        spec = ModelSpec(name=model_name, params={**base_params, **params})
        report = loso_cv(dataset, target, spec, seed=seed)
        score = report.mean("mae")
        table.append((params, score))
        key = (score, tuple(params[k] for k in grid.values))
        if best is None or key < best[0]:
            best = (key, params)
    return GridSearchResult(best_params=best[1], table=table)


def emit_report(report: MetricReport, out_dir, header_lines: Sequence[str] = (),
                provenance: Optional[dict] = None) -> list[Path]:
    """Write per-metric CSVs (rows=sections, columns=model/target pairs), a
    JSON summary, per-metric plot-data CSVs, and a non-canonical timing
    sidecar. Returns the written paths."""
    if not report.entries:
        raise ValueError("cannot emit an empty report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        sections = sorted(report.sections())
        combos = sorted({(e.model, e.target) for e in report.entries})
        lookup = {(e.model, e.target, e.section): e for e in report.entries}
        prefix = [f"# {line}" for line in header_lines]

        for metric in ("mae", "rmse", "mape"):
            out = io.StringIO()
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["section"] + [f"{m}:{t}" for m, t in combos])
            for section in sections:
                row = [section]
                for m, t in combos:
                    entry = lookup.get((m, t, section))
                    row.append("" if entry is None
                               else f"{getattr(entry, metric):.6f}")
                writer.writerow(row)
            path = out_dir / f"report_{metric}.csv"
            path.write_text("\n".join(prefix + [out.getvalue()]))
            written.append(path)

            plot = io.StringIO()
            writer = csv.writer(plot, lineterminator="\n")
            writer.writerow(["section", "model", "target", metric])
            for m, t in combos:
                for section in sections:
                    entry = lookup.get((m, t, section))
                    if entry is not None:
                        writer.writerow([section, m, t,
                                         f"{getattr(entry, metric):.6f}"])
            path = out_dir / f"plot_{metric}.csv"
            path.write_text("\n".join(prefix + [plot.getvalue()]))
            written.append(path)

        path = out_dir / "report.json"
        doc = json.loads(report.to_json())
        if provenance:
            doc["provenance"] = provenance
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path)

        timing = {f"{e.model}:{e.target}:{e.section}": e.seconds
                  for e in report.entries}
        path = out_dir / "timings.json"
        path.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
        written.append(path)
        return written
    except OSError as exc:
        raise IoFailure(f"failed writing report to {out_dir}: {exc}") from exc
