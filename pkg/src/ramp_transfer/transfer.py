"""Two-stage instance-transfer boosting.

Target-substitute construction by cosine-similarity threshold, the stepwise
source-weight annealing schedule with a bisection-solved decay factor, F-fold
substitute-only cross-validation for step selection, and prediction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .core import RampTransferError
from .boosting import (
    MODEL_FORMAT_VERSION,
    R2Ensemble,
    adaboost_r2_fit,
    adjusted_errors,
    tree_fit,
)


class EmptySubstitute(RampTransferError):
    """No source row passed the similarity threshold; adjust theta."""


class GoalUnreachable(RampTransferError):
    """The requested target mass is below the current target mass."""


class RosterMismatch(RampTransferError):
    pass


@dataclass
class TransferConfig:
    """Knobs of the two-stage fit.

    ``theta`` is the cosine-similarity threshold for substitute membership;
    ``substitute_comparator`` selects rows with similarity <= theta ("le",
    the printed membership rule) or >= theta ("ge").
    """

    steps: int = 10
    folds: int = 5
    theta: float = 0.5
    n_estimators: int = 50
    max_depth: int = 5
    min_leaf_weight: Optional[float] = None
    seed: int = 0
    substitute_comparator: str = "le"

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not -1.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [-1, 1]")
        if self.substitute_comparator not in ("le", "ge"):
            raise ValueError("substitute_comparator must be 'le' or 'ge'")


@dataclass
class TransferModel:
    """Selected ensemble plus the bookkeeping needed to reuse it."""

    ensemble: R2Ensemble
    selected_step: int  # 1-based step index of the chosen model
    step_errors: list[float]
    column_roster: tuple[str, ...] = ()
    column_means: Optional[np.ndarray] = None
    column_scales: Optional[np.ndarray] = None
    theta: Optional[float] = None
    # Substitute weight fraction after each between-step update, in step order.
    step_substitute_mass: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = self.ensemble.to_dict()
        doc["transfer"] = {
            "selected_step": self.selected_step,
            "step_errors": list(self.step_errors),
            "step_substitute_mass": list(self.step_substitute_mass),
            "column_roster": list(self.column_roster),
            "column_means": (None if self.column_means is None
                             else self.column_means.tolist()),
            "column_scales": (None if self.column_scales is None
                              else self.column_scales.tolist()),
            "theta": self.theta,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TransferModel":
        meta = doc["transfer"]
        return cls(
            ensemble=R2Ensemble.from_dict(doc),
            selected_step=int(meta["selected_step"]),
            step_errors=[float(e) for e in meta["step_errors"]],
            column_roster=tuple(meta["column_roster"]),
            column_means=(None if meta["column_means"] is None
                          else np.array(meta["column_means"])),
            column_scales=(None if meta["column_scales"] is None
                           else np.array(meta["column_scales"])),
            theta=meta["theta"],
            step_substitute_mass=[float(v) for v
                                  in meta.get("step_substitute_mass", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TransferModel":
        doc = json.loads(text)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"unsupported model format_version {doc.get('format_version')}")
        return cls.from_dict(doc)


def source_standardizer(X_source: np.ndarray):
    """Source-statistics standardization (mean/sample-sd, zero-variance safe)."""
    X_source = np.atleast_2d(np.asarray(X_source, dtype=float))
    means = X_source.mean(axis=0)
    if X_source.shape[0] > 1:
        sds = X_source.std(axis=0, ddof=1)
    else:
        sds = np.zeros(X_source.shape[1])
    sds = np.where(sds == 0.0, 1.0, sds)
    return means, sds


def build_substitute(X_source: np.ndarray, X_target_inputs: np.ndarray,
                     theta: float, comparator: str = "le") -> np.ndarray:
    """Tag source rows as the target substitute by cosine similarity.

    Rows are standardized by source statistics; a row's similarity is the max
    cosine similarity against any target input row. Membership uses
    sim <= theta ("le") or sim >= theta ("ge"). Returns the indices of the
    substitute rows.
    """
    X_source = np.atleast_2d(np.asarray(X_source, dtype=float))
    X_target = np.atleast_2d(np.asarray(X_target_inputs, dtype=float))
    if X_source.shape[1] != X_target.shape[1]:
        raise RosterMismatch("source and target input rosters differ")
    means, sds = source_standardizer(X_source)
    S = (X_source - means) / sds
    T = (X_target - means) / sds
    s_norm = np.linalg.norm(S, axis=1)
    t_norm = np.linalg.norm(T, axis=1)
    s_norm = np.where(s_norm == 0.0, 1.0, s_norm)
    t_norm = np.where(t_norm == 0.0, 1.0, t_norm)
    cosine = (S / s_norm[:, None]) @ (T / t_norm[:, None]).T
    sim = cosine.max(axis=1)
    if comparator == "le":
        mask = sim <= theta
    elif comparator == "ge":
        mask = sim >= theta
    else:
        raise ValueError("comparator must be 'le' or 'ge'")
    indices = np.nonzero(mask)[0]
    if len(indices) == 0:
        raise EmptySubstitute(
            f"no source row qualifies at theta={theta} ({comparator}); "
            "adjust the threshold")
    return indices


def _apply_beta(w_source: np.ndarray, beta: float,
                errors: np.ndarray) -> np.ndarray:
    # beta == 0 extinguishes all source mass, including zero-error rows.
    if beta == 0.0:
        return np.zeros_like(w_source)
    return w_source * beta ** errors


def beta_search(weights: np.ndarray, substitute_mask: np.ndarray,
                goal: float, errors: np.ndarray,
                tolerance: float = 1e-8, max_iterations: int = 200) -> float:
    """Bisect for the source decay factor that reaches the goal target mass.

    After scaling source weights by beta**e and renormalizing all weights,
    the substitute (target-role) mass must equal ``goal``. ``errors`` aligns
    with the source rows in vector order. goal=1 maps to beta=0. When zero
    source errors make the goal unreachable for any beta > 0, beta=0 is
    returned with a warning (the mass then jumps to 1).
    """
    w = np.asarray(weights, dtype=float)
    mask = np.asarray(substitute_mask, dtype=bool)
    w_sub = w[mask].sum()
    w_src = w[~mask]
    current = w_sub / w.sum()
    if goal < current - tolerance:
        raise GoalUnreachable(
            f"goal {goal} below current target mass {current}")
    if goal >= 1.0:
        return 0.0

    def mass(beta: float) -> float:
        src = _apply_beta(w_src, beta, errors)
        return w_sub / (src.sum() + w_sub)

    lo, hi = 0.0, 1.0  # mass(0)=1 >= goal >= mass(1)=current
    if mass(1.0) >= goal - tolerance:
        return 1.0
    beta = 0.5
    for _ in range(max_iterations):
        beta = (lo + hi) / 2.0
        m = mass(beta)
        if abs(m - goal) <= tolerance:
            return beta
        if m > goal:
            lo = beta
        else:
            hi = beta
    # Not converged to tolerance. Zero-error source rows keep their weight
    # for every beta > 0, capping the reachable mass; when the goal exceeds
    # that cap, extinguish the source entirely. Otherwise the gap is float
    # granularity near a steep mass curve; the bisected beta is the closest
    # attainable answer.
    limit_mass = w_sub / (w_src[errors == 0.0].sum() + w_sub)
    if goal > limit_mass + tolerance:
        warnings.warn("annealing goal unreachable for beta > 0; "
                      "extinguishing source weights", stacklevel=2)
        return 0.0
    return beta


def _make_folds(m: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(m)
    fold_of = np.empty(m, dtype=int)
    fold_of[order] = np.arange(m) % folds
    return fold_of


def two_stage_fit(X: np.ndarray, y: np.ndarray,
                  substitute_mask: np.ndarray,
                  config: TransferConfig) -> TransferModel:
    """Fit the two-stage transfer ensemble and select the best step.

    Source rows (mask False) are frozen inside each step's AdaBoost.R2 call;
    the step error is RMSE under F-fold cross-validation over substitute rows
    only (source rows always train). Between steps the source weights decay
    toward the annealing schedule's target mass. The weight update is skipped
    after the final step.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    mask = np.asarray(substitute_mask, dtype=bool)
    m = int(mask.sum())
    n = int((~mask).sum())
    if m == 0:
        raise EmptySubstitute("substitute must be non-empty")
    if n == 0:
        raise ValueError("at least one pure source row is required")
    if config.folds > m:
        raise ValueError(f"folds={config.folds} exceeds substitute size {m}")

    sub_idx = np.nonzero(mask)[0]
    src_idx = np.nonzero(~mask)[0]
    rng = np.random.default_rng(config.seed)
    fold_of = _make_folds(m, config.folds, rng)

    total = n + m
    w = np.full(total, 1.0 / total)
    init_mass = m / total

    models: list[R2Ensemble] = []
    errors: list[float] = []
    masses: list[float] = []
    for t in range(1, config.steps + 1):
        ensemble, _ = adaboost_r2_fit(
            X, y, w, frozen=~mask, n_estimators=config.n_estimators,
            max_depth=config.max_depth,
            min_leaf_weight=config.min_leaf_weight)
        models.append(ensemble)

        sq_errors = []
        for f in range(config.folds):
            held = sub_idx[fold_of == f]
            train = np.concatenate([src_idx, sub_idx[fold_of != f]])
            train.sort()
            train_frozen = ~mask[train]
            cv_ensemble, _ = adaboost_r2_fit(
                X[train], y[train], w[train], frozen=train_frozen,
                n_estimators=config.n_estimators,
                max_depth=config.max_depth,
                min_leaf_weight=config.min_leaf_weight)
            preds = cv_ensemble.predict(X[held])
            sq_errors.extend(((preds - y[held]) ** 2).tolist())
        errors.append(float(np.sqrt(np.mean(sq_errors))))

        if t < config.steps and w[src_idx].sum() > 0.0:
            weak = tree_fit(X, y, w, max_depth=config.max_depth,
                            min_leaf_weight=config.min_leaf_weight)
            e_all = adjusted_errors(weak.predict(X), y)
            goal = min(1.0, init_mass + (t / (config.steps - 1))
                       * (1.0 - init_mass))
            beta = beta_search(w, mask, goal, e_all[src_idx])
            w[src_idx] = _apply_beta(w[src_idx], beta, e_all[src_idx])
            w /= w.sum()
            masses.append(float(w[sub_idx].sum()))

    selected = int(np.argmin(errors))  # ties break toward the smallest step
    return TransferModel(ensemble=models[selected],
                         selected_step=selected + 1,
                         step_errors=errors, theta=config.theta,
                         step_substitute_mass=masses)


def transfer_predict(model: TransferModel, X: np.ndarray) -> np.ndarray:
    """Predict rows with the selected ensemble, applying the stored
    standardization when one was recorded at fit time."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.column_roster and X.shape[1] != len(model.column_roster):
        raise RosterMismatch(
            f"expected {len(model.column_roster)} columns, got {X.shape[1]}")
    if len(X) == 0:
        return np.empty(0)
    if model.column_means is not None:
        X = (X - model.column_means) / model.column_scales
    return model.ensemble.predict(X)


class TwoStageTrAdaBoostR2(BaseEstimator, RegressorMixin):
    """Estimator API over substitute construction plus the two-stage fit.

    fit() takes the source-domain rows and the target section's input rows;
    the substitute is built internally by the configured similarity rule and
    the trees are trained on source-standardized inputs.
    """

    def __init__(self, steps: int = 10, folds: int = 5, theta: float = 0.5,
                 n_estimators: int = 50, max_depth: int = 5,
                 min_leaf_weight: Optional[float] = None, seed: int = 0,
                 substitute_comparator: str = "le",
                 column_roster: Sequence[str] = ()):
        self.steps = steps
        self.folds = folds
        self.theta = theta
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight
        self.seed = seed
        self.substitute_comparator = substitute_comparator
        self.column_roster = column_roster

    def _config(self) -> TransferConfig:
        return TransferConfig(
            steps=self.steps, folds=self.folds, theta=self.theta,
            n_estimators=self.n_estimators, max_depth=self.max_depth,
            min_leaf_weight=self.min_leaf_weight, seed=self.seed,
            substitute_comparator=self.substitute_comparator)

    def fit(self, X, y, target_inputs=None):
        if target_inputs is None:
            raise ValueError("target_inputs (the new section's input rows) "
                             "are required")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        config = self._config()
        indices = build_substitute(X, target_inputs, config.theta,
                                   comparator=config.substitute_comparator)
        mask = np.zeros(len(y), dtype=bool)
        mask[indices] = True
        means, sds = source_standardizer(X)
        model = two_stage_fit((X - means) / sds, y, mask, config)
        model.column_roster = tuple(self.column_roster)
        model.column_means = means
        model.column_scales = sds
        self.model_ = model
        self.substitute_indices_ = indices
        return self

    def predict(self, X):
        return transfer_predict(self.model_, X)
