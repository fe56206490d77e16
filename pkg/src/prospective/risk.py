"""Logistic ridge risk scores with optional fairness constraints.

Constraints are imposed through a squared-covariance penalty between the
linear predictor and the sensitive attribute (over everyone for statistical
parity, over the positives for equal opportunity). The penalty weight is
found by bisection until the variance share explained by the sensitive
attribute drops to the budget ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from .core import Population
from .features import RISK_FEATURES, feature_matrix
from .logistic import BinaryObjective, add_intercept, fit_binary

KINDS = ("none", "stat_parity", "equal_opportunity")
DEFAULT_EPS = 0.01
DEFAULT_LAMBDA_GRID: tuple[float, ...] = tuple(sorted({*np.round(np.logspace(-4, 1, 11), 6), 0.049}))
GAMMA_MAX = 1e8


class SpecificationError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    def __init__(self, best_share: float, eps: float):
        super().__init__(f"cannot reach fairness share <= {eps} with gamma <= {GAMMA_MAX:g}; best {best_share:.4f}")
        self.best_share = best_share


class UndefinedShareError(ValueError):
    pass


@dataclass
class RiskModel:
    coef: np.ndarray  # slopes on standardized features
    intercept: float
    features: tuple[str, ...]
    center: np.ndarray
    scale: np.ndarray
    lam: float
    kind: str = "none"
    eps: float = 1.0
    gamma: float = 0.0
    train_share: float = float("nan")
    attribute: str = "female"
    cv_losses: dict[float, float] = field(default_factory=dict)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.coef):
            raise ValueError(f"expected {len(self.coef)} features, got shape {X.shape}")
        return self.intercept + ((X - self.center) / self.scale) @ self.coef

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "features": list(self.features),
            "coefficients": dict(zip(self.features, map(float, self.coef))),
            "intercept": float(self.intercept),
            "center": list(map(float, self.center)),
            "scale": list(map(float, self.scale)),
            "lambda": self.lam,
            "eps": self.eps,
            "gamma": self.gamma,
            "train_share": self.train_share,
        }


def predict_risk(model: RiskModel, features: np.ndarray | Population) -> np.ndarray:
    X = feature_matrix(features, model.features) if isinstance(features, Population) else features
    return expit(model.linear_predictor(X))


def classify(scores, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores, dtype=float) >= threshold).astype(np.int64)


def _r2(eta: np.ndarray, *regressors: np.ndarray) -> float:
    Z = add_intercept(np.column_stack(regressors).astype(float))
    beta = np.linalg.lstsq(Z, eta, rcond=None)[0]
    fitted = Z @ beta
    return float(np.var(fitted) / np.var(eta))


def fairness_share(scores, A, Y=None, kind: str = "stat_parity") -> float:
    """Fraction of the logit-score variance explained by the sensitive attribute.

    ``stat_parity``: R^2 of eta ~ A. ``equal_opportunity``: R^2(eta ~ A + Y)
    minus R^2(eta ~ Y).
    """
    s = np.clip(np.asarray(scores, dtype=float), 1e-12, 1 - 1e-12)
    eta = logit(s)
    if np.ptp(eta) == 0:
        raise UndefinedShareError("scores are constant; the share is undefined")
    A = np.asarray(A, dtype=float)
    if kind == "stat_parity":
        share = _r2(eta, A)
    elif kind == "equal_opportunity":
        if Y is None:
            raise ValueError("equal_opportunity share needs outcomes")
        Y = np.asarray(Y, dtype=float)
        share = _r2(eta, A, Y) - _r2(eta, Y)
    else:
        raise ValueError(f"unknown share kind {kind!r}")
    return float(min(max(share, 0.0), 1.0))


def covariance_form(Z: np.ndarray, A: np.ndarray, Y: np.ndarray | None, kind: str) -> np.ndarray:
    """Vector c with cov(eta, A) = c @ slopes over the penalized rows."""
    rows = np.ones(len(A), dtype=bool) if kind == "stat_parity" else np.asarray(Y) == 1
    a = np.asarray(A, dtype=float)[rows]
    return Z[rows].T @ (a - a.mean()) / rows.sum()


def risk_objective(Z, y, lam, gamma=0.0, form=None) -> BinaryObjective:
    full_form = None if form is None else np.concatenate([[0.0], form])
    return BinaryObjective(add_intercept(Z), y, lam=lam, gamma=gamma, form=full_form)


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def select_lambda(Z: np.ndarray, y: np.ndarray, grid: Sequence[float], folds: int = 5, seed: int = 0) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(len(y)) % folds)
    losses = {}
    for lam in grid:
        total = 0.0
        for f in range(folds):
            fit, val = labels != f, labels == f
            w = fit_binary(Z[fit], y[fit], lam=lam)
            total += log_loss(y[val], expit(w[0] + Z[val] @ w[1:])) * val.sum()
        losses[float(lam)] = total / len(y)
    best = min(losses, key=lambda k: (losses[k], k))
    return best, losses


def fit_risk(
    train: Population,
    kind: str = "none",
    eps: float = DEFAULT_EPS,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    seed: int = 0,
    attribute: str = "female",
    features: Sequence[str] = RISK_FEATURES,
    lam: float | None = None,
) -> RiskModel:
    """Fit a risk model on ``train``.

    The ridge strength is picked by 5-fold CV over ``lambda_grid`` on the
    unconstrained objective unless ``lam`` is given; constrained kinds reuse
    it and then bisect the fairness weight on a log scale.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if train.outcomes is None:
        raise SpecificationError("outcomes must be observed")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    A = np.asarray(train.columns[attribute], dtype=float)
    if np.ptp(A) == 0:
        raise SpecificationError(f"sensitive attribute '{attribute}' is constant")
    y = np.asarray(train.outcomes, dtype=float)
    X = feature_matrix(train, features)
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - center) / scale

    cv_losses: dict = {}
    if lam is None:
        lam, cv_losses = select_lambda(Z, y, lambda_grid, seed=seed)

    def model(w: np.ndarray, gamma: float, share: float) -> RiskModel:
        return RiskModel(w[1:], float(w[0]), tuple(features), center, scale, float(lam), kind, eps, gamma, share, attribute, cv_losses)

    def share_of(w: np.ndarray) -> float:
        return fairness_share(expit(w[0] + Z @ w[1:]), A, y, "stat_parity" if kind == "none" else kind)

    w0 = fit_binary(Z, y, lam=lam)
    share0 = share_of(w0)
    if kind == "none":
        return model(w0, 0.0, share0)
    if share0 <= eps:
        return model(w0, 0.0, share0)

    form = covariance_form(Z, A, y, kind)

    def fit_at(gamma: float, start: np.ndarray) -> np.ndarray:
        return fit_binary(Z, y, lam=lam, gamma=gamma, form=form, w0=start)

    lo, w_lo = 0.0, w0
    hi, w_hi = 1e-2, fit_at(1e-2, w0)
    while share_of(w_hi) > eps:
        if hi >= GAMMA_MAX:
            raise InfeasibleError(share_of(w_hi), eps)
        lo, w_lo = hi, w_hi
        hi = min(hi * 10.0, GAMMA_MAX)
        w_hi = fit_at(hi, w_hi)
    for _ in range(40):
        if lo > 0 and hi / lo < 1.01:
            break
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 10.0
        w_mid = fit_at(mid, w_hi)
        if share_of(w_mid) > eps:
            lo, w_lo = mid, w_mid
        else:
            hi, w_hi = mid, w_mid
    return model(w_hi, hi, share_of(w_hi))


def fit_all(
    train: Population,
    eps: float = DEFAULT_EPS,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    kinds: Sequence[str] = KINDS,
    seed: int = 0,
) -> dict[str, RiskModel]:
    """Fit every requested kind with one shared cross-validated ridge strength."""
    base = fit_risk(train, "none", eps, lambda_grid, seed)
    out = {}
    for kind in kinds:
        out[kind] = base if kind == "none" else fit_risk(train, kind, eps, seed=seed, lam=base.lam)
    return out
