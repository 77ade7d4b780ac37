"""Self-contained GLM layer: OLS, binary logistic, multinomial logistic.

Fitting is plain numpy linear algebra. Logistic models maximize the
likelihood by iteratively reweighted least squares with step halving;
the multinomial model runs damped Newton on the stacked score. Separation
is detected rather than fatal: coefficients are clamped at the last stable
iterate and the model carries a flag, so resampling experiments can keep
going on awkward cohorts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DataError, SchemaError

RIDGE = 1e-8
SCORE_TOL = 1e-8
MAX_ITER = 100
COEF_BOUND = 30.0  # logit scale; beyond this the fit is treated as separated

__all__ = [
    "DesignMatrix",
    "LinearModel",
    "LogisticModel",
    "MultinomialModel",
    "fit_ols",
    "fit_logistic",
    "fit_multinomial",
    "predict",
    "expit",
    "softmax",
]


def expit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(eta: np.ndarray) -> np.ndarray:
    eta = eta - eta.max(axis=1, keepdims=True)
    ex = np.exp(eta)
    return ex / ex.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class DesignMatrix:
    """Dense regressor matrix with named columns (intercept first by convention)."""

    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise SchemaError("design matrix must be 2-dimensional")
        if not np.all(np.isfinite(v)):
            raise SchemaError("design matrix contains non-finite entries")
        object.__setattr__(self, "values", v)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(v.shape[1])))
        elif len(self.names) != v.shape[1]:
            raise SchemaError("column names do not match design width")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def _as_design(X) -> DesignMatrix:
    return X if isinstance(X, DesignMatrix) else DesignMatrix(np.asarray(X, dtype=float))


def _check_width(model_p: int, X: np.ndarray):
    if X.shape[1] != model_p:
        raise SchemaError(f"row width {X.shape[1]} does not match model width {model_p}")


@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray
    names: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_width(self.coef.shape[0], X)
        return X @ self.coef


@dataclass(frozen=True)
class LogisticModel:
    coef: np.ndarray
    names: tuple[str, ...]
    converged: bool
    n_iter: int
    score_norm: float
    flags: tuple[str, ...] = ()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_width(self.coef.shape[0], X)
        return expit(X @ self.coef)


@dataclass(frozen=True)
class MultinomialModel:
    """Softmax regression; the reference class has implicit zero coefficients."""

    classes: tuple
    reference: object
    coef: np.ndarray  # (n_classes - 1, p), rows follow non-reference class order
    names: tuple[str, ...]
    converged: bool
    n_iter: int
    score_norm: float
    flags: tuple[str, ...] = ()

    @property
    def nonref_classes(self) -> tuple:
        return tuple(c for c in self.classes if c != self.reference)

    def predict(self, X) -> np.ndarray:
        """Class-probability matrix (n, n_classes), columns in ``classes`` order."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_width(self.coef.shape[1], X)
        eta = np.zeros((X.shape[0], len(self.classes)))
        order = {c: j for j, c in enumerate(self.classes)}
        for row, c in zip(self.coef, self.nonref_classes):
            eta[:, order[c]] = X @ row
        return softmax(eta)


def fit_ols(X, y) -> LinearModel:
    """Least squares with a tiny-ridge fallback when the design is singular."""
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise SchemaError("response length does not match design")
    if not np.all(np.isfinite(y)):
        raise SchemaError("response contains non-finite entries")
    xtx = X.values.T @ X.values
    xty = X.values.T @ y
    flags: tuple[str, ...] = ()
    try:
        c = np.linalg.cholesky(xtx)
        coef = np.linalg.solve(c.T, np.linalg.solve(c, xty))
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(xtx + RIDGE * np.eye(X.p), xty)
        flags = ("ridge_fallback",)
    return LinearModel(coef=coef, names=X.names, flags=flags)


def _bernoulli_loglik(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


def fit_logistic(X, y, max_iter: int = MAX_ITER, tol: float = SCORE_TOL) -> LogisticModel:
    """Binary logistic regression by IRLS.

    Converged when the score (log-likelihood gradient) infinity norm drops
    to ``tol``. Diverging coefficients mark the data as separated and the
    last stable iterate is returned with a "separated" flag.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise SchemaError("response length does not match design")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise SchemaError("logistic response must be 0/1")
    if len(np.unique(y)) < 2:
        raise DataError("degenerate outcome: single response class")
    beta = np.zeros(X.p)
    flags: list[str] = []
    loglik = _bernoulli_loglik(y, np.full(X.n, 0.5))
    score_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X.values @ beta)
        score = X.values.T @ (y - p)
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            # score can vanish under separation: fitted probabilities equal
            # the labels to tolerance while the true MLE is at infinity
            if it > 1 and np.all(np.abs(y - p) < 1e-6):
                flags.append("separated")
            return LogisticModel(beta, X.names, True, it - 1, score_norm, tuple(flags))
        w = p * (1 - p)
        hess = X.values.T @ (X.values * w[:, None])
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            if "hessian_ridge" not in flags:
                flags.append("hessian_ridge")
            step = np.linalg.solve(hess + RIDGE * np.eye(X.p), score)
        candidate = beta + step
        # step halving keeps the likelihood monotone
        for _ in range(30):
            cand_ll = _bernoulli_loglik(y, expit(X.values @ candidate))
            if cand_ll >= loglik - 1e-12:
                break
            step *= 0.5
            candidate = beta + step
        if np.max(np.abs(candidate)) > COEF_BOUND:
            flags.append("separated")
            return LogisticModel(beta, X.names, False, it, score_norm, tuple(flags))
        beta = candidate
        loglik = _bernoulli_loglik(y, expit(X.values @ beta))
    p = expit(X.values @ beta)
    score_norm = float(np.max(np.abs(X.values.T @ (y - p))))
    converged = score_norm <= tol
    if not converged:
        flags.append("max_iter")
    return LogisticModel(beta, X.names, converged, it, score_norm, tuple(flags))


def _multinomial_loglik(Y: np.ndarray, P: np.ndarray) -> float:
    return float(np.sum(Y * np.log(np.clip(P, 1e-12, None))))


def fit_multinomial(X, labels, reference=None, max_iter: int = MAX_ITER, tol: float = SCORE_TOL) -> MultinomialModel:
    """Multinomial logistic regression by damped Newton on the stacked score."""
    X = _as_design(X)
    labels = np.asarray(labels)
    if labels.shape != (X.n,):
        raise SchemaError("label length does not match design")
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise DataError("degenerate outcome: single response class")
    if reference is None:
        reference = classes[0]
    if reference not in classes:
        raise DataError(f"reference class {reference!r} absent from training labels")
    nonref = [c for c in classes if c != reference]
    m, p = len(nonref), X.p
    Y = np.stack([(labels == c).astype(float) for c in nonref], axis=1)  # (n, m)

    def probs(B: np.ndarray) -> np.ndarray:
        eta = np.concatenate([np.zeros((X.n, 1)), X.values @ B.T], axis=1)
        return softmax(eta)  # column 0 = reference

    B = np.zeros((m, p))
    flags: list[str] = []
    full_Y = np.concatenate([1 - Y.sum(axis=1, keepdims=True), Y], axis=1)
    loglik = _multinomial_loglik(full_Y, probs(B))
    score_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        P = probs(B)
        Pn = P[:, 1:]  # non-reference columns, (n, m)
        score = (X.values.T @ (Y - Pn)).T.reshape(-1)  # stacked by class
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            return MultinomialModel(classes, reference, B, X.names, True, it - 1, score_norm, tuple(flags))
        hess = np.empty((m * p, m * p))
        for a in range(m):
            for b in range(a, m):
                w = Pn[:, a] * ((1.0 if a == b else 0.0) - Pn[:, b])
                block = X.values.T @ (X.values * w[:, None])
                hess[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
                hess[b * p:(b + 1) * p, a * p:(a + 1) * p] = block
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            if "hessian_ridge" not in flags:
                flags.append("hessian_ridge")
            step = np.linalg.solve(hess + RIDGE * np.eye(m * p), score)
        candidate = B + step.reshape(m, p)
        for _ in range(30):
            cand_ll = _multinomial_loglik(full_Y, probs(candidate))
            if cand_ll >= loglik - 1e-12:
                break
            step *= 0.5
            candidate = B + step.reshape(m, p)
        if np.max(np.abs(candidate)) > COEF_BOUND:
            flags.append("separated")
            return MultinomialModel(classes, reference, B, X.names, False, it, score_norm, tuple(flags))
        B = candidate
        loglik = _multinomial_loglik(full_Y, probs(B))
    P = probs(B)
    score_norm = float(np.max(np.abs(((X.values.T @ (Y - P[:, 1:])).T.reshape(-1)))))
    converged = score_norm <= tol
    if not converged:
        flags.append("max_iter")
    return MultinomialModel(classes, reference, B, X.names, converged, it, score_norm, tuple(flags))


def predict(model, x) -> np.ndarray:
    """Linear predictor, success probability, or class-probability rows."""
    if isinstance(model, (LinearModel, LogisticModel, MultinomialModel)):
        return model.predict(x)
    raise TypeError(f"not a fitted model: {type(model).__name__}")
