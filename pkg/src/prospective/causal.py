"""Doubly-robust estimation of individualized potential outcomes.

Pipeline: cross-fitted propensity and outcome nuisances on the full sample,
doubly-robust scores, and one regression forest per arm fitted on the
training half with the scores as pseudo-outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.ensemble import RandomForestRegressor

from .core import ARM_NAMES, N_ARMS, Population, Program, SplitSpec
from .features import NUISANCE_FEATURES, feature_matrix
from .logistic import add_intercept, fit_binary, fit_multinomial, softmax_predict

E_MIN = 0.01
NUISANCE_RIDGE = 1e-4


class EstimationError(ValueError):
    pass


class PositivityError(ValueError):
    pass


class FitError(ValueError):
    pass


def _standardize(X: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X[rows].mean(axis=0)
    sd = X[rows].std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


def make_folds(pop: Population, k: int, split: SplitSpec | None = None, seed: int = 0) -> list[np.ndarray]:
    """Fold index sets; with k == 2 and a split, the folds are the two halves."""
    if k < 2:
        raise ValueError("cross-fitting needs at least 2 folds")
    if k == 2 and split is not None:
        return [np.sort(split.train_ids), np.sort(split.test_ids)]
    rng = np.random.default_rng(seed)
    labels = np.zeros(len(pop), dtype=np.int64)
    strata = pop.decisions if pop.decisions is not None else np.zeros(len(pop), dtype=np.int64)
    offset = 0
    for value in np.unique(strata):
        members = rng.permutation(np.flatnonzero(strata == value))
        labels[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    return [np.flatnonzero(labels == f) for f in range(k)]


def _check_arms(decisions: np.ndarray, folds: list[np.ndarray], k: int) -> None:
    counts = np.bincount(decisions, minlength=N_ARMS)
    thin = [ARM_NAMES[d] for d in range(N_ARMS) if counts[d] < k]
    if thin:
        raise EstimationError(f"arms with fewer than {k} members: {', '.join(thin)}")
    for f, held_out in enumerate(folds):
        mask = np.ones(len(decisions), dtype=bool)
        mask[held_out] = False
        empty = [ARM_NAMES[d] for d in range(N_ARMS) if not np.any(decisions[mask] == d)]
        if empty:
            raise EstimationError(f"fold {f}: no fitting data for arms {', '.join(empty)}")


@dataclass
class PropensityModel:
    coefs: list[np.ndarray]  # per fold, (7, p+1); row 0 is the reference arm
    scaling: list[tuple[np.ndarray, np.ndarray]]
    folds: list[np.ndarray]
    features: tuple[str, ...]
    e_min: float
    predictions: np.ndarray  # (n, 7) out-of-fold, clipped and renormalized

    def fold_of(self) -> np.ndarray:
        out = np.empty(sum(len(f) for f in self.folds), dtype=np.int64)
        for k, ids in enumerate(self.folds):
            out[ids] = k
        return out


@dataclass
class OutcomeModel:
    coefs: list[list[np.ndarray]]  # per fold, per arm: (p+1,)
    scaling: list[tuple[np.ndarray, np.ndarray]]
    folds: list[np.ndarray]
    features: tuple[str, ...]
    predictions: np.ndarray  # (n, 7) out-of-fold mu(d, x)


def clip_propensities(P: np.ndarray, e_min: float = E_MIN) -> np.ndarray:
    if e_min <= 0:
        raise ValueError("e_min must be positive")
    P = np.clip(P, e_min, 1.0)
    return P / P.sum(axis=1, keepdims=True)


def fit_propensity(
    pop: Population,
    split: SplitSpec | None = None,
    folds: int = 2,
    features: Sequence[str] = NUISANCE_FEATURES,
    e_min: float = E_MIN,
    seed: int = 0,
) -> PropensityModel:
    """Cross-fitted multinomial logit for the status-quo allocation."""
    if pop.decisions is None:
        raise EstimationError("decisions are not observed")
    fold_ids = make_folds(pop, folds, split, seed)
    d = pop.decisions
    _check_arms(d, fold_ids, folds)
    X = feature_matrix(pop, features)
    n = len(pop)
    coefs, scaling = [], []
    out = np.empty((n, N_ARMS))
    for held_out in fold_ids:
        fit_rows = np.setdiff1d(np.arange(n), held_out)
        mean, sd = _standardize(X, fit_rows)
        coef = fit_multinomial((X[fit_rows] - mean) / sd, d[fit_rows], N_ARMS, lam=NUISANCE_RIDGE)
        out[held_out] = softmax_predict(coef, (X[held_out] - mean) / sd)
        coefs.append(coef)
        scaling.append((mean, sd))
    return PropensityModel(coefs, scaling, fold_ids, tuple(features), e_min, clip_propensities(out, e_min))


def fit_outcome_model(
    pop: Population,
    split: SplitSpec | None = None,
    folds: int = 2,
    features: Sequence[str] = NUISANCE_FEATURES,
    seed: int = 0,
) -> OutcomeModel:
    """Per-arm ridge logistic fits of Y on X within each arm, cross-fitted."""
    if pop.decisions is None or pop.outcomes is None:
        raise EstimationError("decisions and outcomes must be observed")
    fold_ids = make_folds(pop, folds, split, seed)
    d, y = pop.decisions, np.asarray(pop.outcomes, dtype=float)
    _check_arms(d, fold_ids, folds)
    X = feature_matrix(pop, features)
    n = len(pop)
    coefs, scaling = [], []
    out = np.empty((n, N_ARMS))
    for held_out in fold_ids:
        fit_rows = np.setdiff1d(np.arange(n), held_out)
        mean, sd = _standardize(X, fit_rows)
        Z_held = add_intercept((X[held_out] - mean) / sd)
        per_arm = []
        for arm in range(N_ARMS):
            rows = fit_rows[d[fit_rows] == arm]
            w = fit_binary((X[rows] - mean) / sd, y[rows], lam=NUISANCE_RIDGE)
            out[held_out, arm] = expit(Z_held @ w)
            per_arm.append(w)
        coefs.append(per_arm)
        scaling.append((mean, sd))
    return OutcomeModel(coefs, scaling, fold_ids, tuple(features), out)


def dr_score(mu, e, y, treated):
    """mu + treated * (y - mu) / e, elementwise."""
    e = np.asarray(e, dtype=float)
    if np.any(e <= 0):
        raise PositivityError("propensity must be strictly positive (overlap violated)")
    mu = np.asarray(mu, dtype=float)
    out = mu + np.asarray(treated, dtype=float) * (np.asarray(y, dtype=float) - mu) / e
    return float(out) if out.ndim == 0 else out


@dataclass
class DrScoreTable:
    scores: np.ndarray  # (n, 7)
    decisions: np.ndarray | None = None

    @classmethod
    def from_nuisances(cls, pop: Population, prop: PropensityModel, outcome: OutcomeModel) -> "DrScoreTable":
        n = len(pop)
        treated = np.zeros((n, N_ARMS))
        treated[np.arange(n), pop.decisions] = 1.0
        y = np.asarray(pop.outcomes, dtype=float)[:, None]
        return cls(dr_score(outcome.predictions, prop.predictions, y, treated), pop.decisions)


@dataclass
class IapoTable:
    values: np.ndarray  # (n, 7), clipped to [0, 1]
    ids: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.ids is None:
            self.ids = np.arange(len(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, rows) -> "IapoTable":
        rows = np.asarray(rows, dtype=np.int64)
        return IapoTable(self.values[rows], self.ids[rows])

    def iate(self, d: Program | int | str, d_ref: Program | int | str = Program.NO_PROGRAM) -> np.ndarray:
        return iate(self, d, d_ref)


def fit_iapo(
    scores: DrScoreTable,
    features: np.ndarray,
    split: SplitSpec,
    seed: int = 0,
    n_trees: int = 100,
    min_leaf: int = 20,
    treated_per_leaf: float = 20.0,
    n_jobs: int | None = None,
) -> IapoTable:
    """Regress each arm's DR scores on X with a forest fitted on the training half.

    Leaves hold at least ``min_leaf`` rows and, when the score table carries
    decisions, enough rows to expect ``treated_per_leaf`` members of the arm;
    scores of rare arms are dominated by ``1/e`` weighted residuals otherwise.
    """
    X = np.asarray(features, dtype=float)
    Gamma = np.asarray(scores.scores, dtype=float)
    if not np.all(np.isfinite(Gamma)):
        raise FitError("DR scores must be finite")
    if X.ndim != 2 or X.shape[1] == 0 or np.all(np.ptp(X, axis=0) == 0):
        raise FitError("features are degenerate (no column varies)")
    # canonical row order keeps the fit invariant to how train ids are listed
    train = np.unique(np.asarray(split.train_ids, dtype=np.int64))
    if train.size == 0:
        raise FitError("no training ids")
    leaves = [min_leaf] * N_ARMS
    if scores.decisions is not None and treated_per_leaf > 0:
        share = np.bincount(scores.decisions[train], minlength=N_ARMS) / train.size
        leaves = [max(min_leaf, math.ceil(treated_per_leaf / max(s, 1.0 / train.size))) for s in share]
    master = np.random.SeedSequence(seed)
    out = np.empty((len(X), N_ARMS))
    for arm, child in enumerate(master.spawn(N_ARMS)):
        forest = RandomForestRegressor(
            n_estimators=n_trees,
            min_samples_leaf=min(leaves[arm], max(train.size // 2, 1)),
            max_features=math.ceil(math.sqrt(X.shape[1])),
            bootstrap=True,
            random_state=int(child.generate_state(1)[0]),
            n_jobs=n_jobs,
        )
        forest.fit(X[train], Gamma[train, arm])
        # summing trees in a fixed order keeps predictions identical for any n_jobs
        out[:, arm] = np.sum([tree.predict(X) for tree in forest.estimators_], axis=0) / n_trees
    return IapoTable(np.clip(out, 0.0, 1.0))


def iate(iapo: IapoTable, d: Program | int | str, d_ref: Program | int | str = Program.NO_PROGRAM) -> np.ndarray:
    a, b = Program.parse(d), Program.parse(d_ref)
    return iapo.values[:, a] - iapo.values[:, b]


def ate(scores: DrScoreTable, d: Program | int | str, d_ref: Program | int | str = Program.NO_PROGRAM) -> tuple[float, float]:
    """Mean DR-score contrast and its standard error (sd of contrasts / sqrt n)."""
    a, b = Program.parse(d), Program.parse(d_ref)
    diff = scores.scores[:, a] - scores.scores[:, b]
    n = len(diff)
    if n < 2:
        raise ValueError("need at least 2 individuals")
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n))


@dataclass
class CausalFit:
    propensity: PropensityModel
    outcome: OutcomeModel
    scores: DrScoreTable
    iapo: IapoTable


def estimate_iapos(
    pop: Population,
    split: SplitSpec,
    folds: int = 2,
    seed: int = 0,
    features: Sequence[str] = NUISANCE_FEATURES,
    n_jobs: int | None = None,
) -> CausalFit:
    """Full stage-one pipeline on the whole sample; IAPOs cover every individual."""
    prop = fit_propensity(pop, split, folds, features, seed=seed)
    outc = fit_outcome_model(pop, split, folds, features, seed=seed)
    scores = DrScoreTable.from_nuisances(pop, prop, outc)
    iapo = fit_iapo(scores, feature_matrix(pop, features), split, seed=seed, n_jobs=n_jobs)
    return CausalFit(prop, outc, scores, iapo)


def ate_summary(scores: DrScoreTable, z: float = 1.959963984540054) -> list[dict]:
    rows = []
    for arm in ARM_NAMES[1:]:
        est, se = ate(scores, arm)
        rows.append({"arm": arm, "ate": est, "se": se, "ci_low": est - z * se, "ci_high": est + z * se})
    return rows
