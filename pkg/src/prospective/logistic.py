"""Penalized logistic solvers shared by the nuisance and risk models.

Both objectives are mean log-losses with an unpenalized intercept stored in
position 0 of the parameter vector. The binary objective optionally carries
a quadratic penalty ``gamma * (c @ w)**2`` on a linear form of the slopes,
which is how covariance-type fairness penalties enter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp

MAX_ITER = 500
GRAD_TOL = 1e-8


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (gradient max-norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


def add_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X])


@dataclass
class BinaryObjective:
    X: np.ndarray  # design with leading intercept column
    y: np.ndarray
    lam: float = 0.0
    gamma: float = 0.0
    form: np.ndarray | None = None  # linear form over the full parameter vector (0 at intercept)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self._pen = np.ones(self.X.shape[1])
        self._pen[0] = 0.0
        if self.form is None:
            self.form = np.zeros(self.X.shape[1])

    def value(self, w: np.ndarray) -> float:
        eta = self.X @ w
        nll = -np.mean(self.y * log_expit(eta) + (1 - self.y) * log_expit(-eta))
        ridge = 0.5 * self.lam * np.sum(self._pen * w * w)
        return float(nll + ridge + self.gamma * (self.form @ w) ** 2)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        p = expit(self.X @ w)
        g = self.X.T @ (p - self.y) / len(self.y)
        g += self.lam * self._pen * w
        g += 2.0 * self.gamma * (self.form @ w) * self.form
        return g

    def hessian(self, w: np.ndarray) -> np.ndarray:
        p = expit(self.X @ w)
        s = p * (1 - p)
        H = (self.X * s[:, None]).T @ self.X / len(self.y)
        H[np.diag_indices_from(H)] += self.lam * self._pen
        H += 2.0 * self.gamma * np.outer(self.form, self.form)
        return H


@dataclass
class MultinomialObjective:
    """Softmax regression with class 0 as the zero-coefficient reference.

    Parameters are a ``(K-1, p+1)`` matrix flattened row-major; column 0 of
    each row is the intercept.
    """

    X: np.ndarray  # design with leading intercept column
    labels: np.ndarray
    n_classes: int
    lam: float = 1e-4

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.zeros((len(self.labels), self.n_classes))
        self.Y[np.arange(len(self.labels)), np.asarray(self.labels, dtype=np.int64)] = 1.0
        self._shape = (self.n_classes - 1, self.X.shape[1])
        pen = np.ones(self._shape)
        pen[:, 0] = 0.0
        self._pen = pen.ravel()

    @property
    def size(self) -> int:
        return self._shape[0] * self._shape[1]

    def logits(self, w: np.ndarray) -> np.ndarray:
        B = w.reshape(self._shape)
        return np.column_stack([np.zeros(len(self.X)), self.X @ B.T])

    def value(self, w: np.ndarray) -> float:
        Z = self.logits(w)
        ll = np.sum(self.Y * Z, axis=1) - logsumexp(Z, axis=1)
        return float(-np.mean(ll) + 0.5 * self.lam * np.sum(self._pen * w * w))

    def _probs(self, w: np.ndarray) -> np.ndarray:
        Z = self.logits(w)
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        return P / P.sum(axis=1, keepdims=True)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        P = self._probs(w)
        G = (P - self.Y)[:, 1:].T @ self.X / len(self.X)
        return G.ravel() + self.lam * self._pen * w

    def hessian(self, w: np.ndarray) -> np.ndarray:
        P = self._probs(w)[:, 1:]
        k, p = self._shape
        n = len(self.X)
        H = np.empty((k, p, k, p))
        for a in range(k):
            for b in range(a, k):
                s = P[:, a] * ((a == b) - P[:, b])
                block = (self.X * s[:, None]).T @ self.X / n
                H[a, :, b, :] = block
                H[b, :, a, :] = block.T
        H = H.reshape(k * p, k * p)
        H[np.diag_indices_from(H)] += self.lam * self._pen
        return H


def newton(objective, w0: np.ndarray, max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> np.ndarray:
    """Damped Newton with Armijo backtracking; stops when max|grad| < tol."""
    w = np.array(w0, dtype=float)
    f = objective.value(w)
    g = objective.gradient(w)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return w
        H = objective.hessian(w)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)) or g @ step <= 0:
            step = g
        t = 1.0
        while True:
            w_new = w - t * step
            f_new = objective.value(w_new)
            if f_new <= f - 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and f_new > f:
            # no descent possible at machine precision
            break
        w, f = w_new, f_new
        g = objective.gradient(w)
    grad_norm = float(np.max(np.abs(g)))
    if grad_norm < tol:
        return w
    raise ConvergenceError(f"Newton solver did not converge in {max_iter} iterations", grad_norm)


def fit_binary(
    X: np.ndarray,
    y: np.ndarray,
    lam: float = 1e-4,
    gamma: float = 0.0,
    form: np.ndarray | None = None,
    w0: np.ndarray | None = None,
) -> np.ndarray:
    """Fit ``[intercept, slopes...]`` of a ridge logistic model on raw design ``X``."""
    Xi = add_intercept(X)
    full_form = None if form is None else np.concatenate([[0.0], form])
    obj = BinaryObjective(Xi, y, lam=lam, gamma=gamma, form=full_form)
    start = np.zeros(Xi.shape[1]) if w0 is None else w0
    return newton(obj, start)


def fit_multinomial(X: np.ndarray, labels: np.ndarray, n_classes: int, lam: float = 1e-4) -> np.ndarray:
    """Return a ``(n_classes, p+1)`` coefficient matrix whose row 0 is all zeros."""
    obj = MultinomialObjective(add_intercept(X), labels, n_classes, lam=lam)
    w = newton(obj, np.zeros(obj.size))
    return np.vstack([np.zeros(X.shape[1] + 1), w.reshape(n_classes - 1, X.shape[1] + 1)])


def softmax_predict(coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    Z = add_intercept(X) @ coef.T
    Z -= Z.max(axis=1, keepdims=True)
    P = np.exp(Z)
    return P / P.sum(axis=1, keepdims=True)
