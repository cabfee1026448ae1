"""Linear and logistic models trained on full data or on weighted condensed samples.

Every routine takes optional per-row ``weights``; ``weights=None`` is the
unweighted case. The normalizer ``n`` is the number of *original* records,
which for condensed samples is ``sum(weights)``, so a weighted sample set
and the data it summarizes share one loss scale.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .exceptions import NonBinaryLabels, NonFinite, ShapeMismatch, SingularSystem, WeightMismatch

ModelKind = Literal["linear", "logistic"]


class SingularSystemWarning(RuntimeWarning):
    """The normal equations were singular and a ridge term was added."""


@dataclass
class ModelParams:
    theta: np.ndarray
    model_kind: ModelKind = "linear"
    intercept: bool = True
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return len(self.theta) - int(self.intercept)

    def design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return add_intercept(X) if self.intercept else X

    def decision_function(self, X) -> np.ndarray:
        return self.design(X) @ self.theta

    def predict(self, X) -> np.ndarray:
        z = self.decision_function(X)
        return sigmoid(z) if self.model_kind == "logistic" else z


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    max_iters: int | None = None
    tol: float = 1e-8
    intercept: bool = True
    seed: int = 0
    standardize: bool = False
    record_every: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def iteration_budget(self, kind: ModelKind) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return 1_000_000 if kind == "linear" else 100_000


@dataclass
class TrainReport:
    params: ModelParams
    iters_run: int
    final_loss: float
    converged: bool
    wall_time: float
    last_step: float = float("nan")
    loss_curve: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "model": p.model_kind,
            "iters": self.iters_run,
            "final_loss": self.final_loss,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "last_step": self.last_step,
            "theta": p.theta.tolist(),
            "intercept": p.intercept,
            "standardize_mean": None if p.mean is None else p.mean.tolist(),
            "standardize_scale": None if p.scale is None else p.scale.tolist(),
            "loss_curve": [list(pt) for pt in self.loss_curve],
        }

    def to_text(self) -> str:
        d = self.to_dict()
        keys = ("model", "iters", "final_loss", "converged", "wall_time", "last_step")
        return " ".join(f"{k}={d[k]}" for k in keys)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- helpers -------------------------------------------------------------


def add_intercept(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _check(X, y, theta=None, weights=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} do not align")
    if theta is not None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (X.shape[1],):
            raise ShapeMismatch(f"theta {theta.shape} does not match {X.shape[1]} columns")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != y.shape:
            raise ShapeMismatch("weights must have one entry per row")
    return X, y, theta, weights


def _normalizer(y, weights, n):
    total = len(y) if weights is None else float(np.sum(weights))
    if n is None:
        return total
    if weights is not None and abs(total - n) > 1e-9:
        raise WeightMismatch(f"weights sum to {total}, expected n = {n}")
    return n


def sigmoid(z):
    """Overflow-free logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def standardization(X, weights=None):
    """Per-column (weighted) mean and std; zero std maps to 1."""
    X = np.asarray(X, dtype=np.float64)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
    mean = w @ X / w.sum()
    var = w @ (X - mean) ** 2 / w.sum()
    scale = np.sqrt(var)
    scale[scale == 0] = 1.0
    return mean, scale


# -- linear regression ----------------------------------------------------


def loss_mse(X, y, theta, n_effective=None, weights=None) -> float:
    """(1/2n) * sum_i w_i (x_i . theta - y_i)^2."""
    X, y, theta, weights = _check(X, y, theta, weights)
    n = _normalizer(y, weights, n_effective)
    r = X @ theta - y
    sq = r * r if weights is None else weights * r * r
    return float(sq.sum() / (2.0 * n))


def grad_mse(X, y, theta, weights=None, n=None) -> np.ndarray:
    X, y, theta, weights = _check(X, y, theta, weights)
    n = _normalizer(y, weights, n)
    r = X @ theta - y
    if weights is not None:
        r = weights * r
    return X.T @ r / n


def gd_step_full(X, y, theta, alpha) -> np.ndarray:
    """theta - (alpha/n) * sum_i (x_i . theta - y_i) x_i."""
    X, y, theta, _ = _check(X, y, theta)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        out = theta - alpha * (X.T @ (X @ theta - y)) / len(y)
    if not np.all(np.isfinite(out)):
        raise NonFinite("gradient step produced non-finite parameters")
    return out


def gd_step_condensed(X_c, y_c, weights, theta, alpha, n=None) -> np.ndarray:
    """theta - (alpha/n) * sum_j w_j (x_j . theta - y_j) x_j, with n = sum(w)."""
    X_c, y_c, theta, weights = _check(X_c, y_c, theta, weights)
    if weights is None:
        raise ShapeMismatch("condensed step needs weights")
    n = _normalizer(y_c, weights, n)
    with np.errstate(over="ignore", invalid="ignore"):
        out = theta - alpha * (X_c.T @ (weights * (X_c @ theta - y_c))) / n
    if not np.all(np.isfinite(out)):
        raise NonFinite("gradient step produced non-finite parameters")
    return out


def _prepare(X, cfg: TrainConfig, weights):
    X = np.asarray(X, dtype=np.float64)
    mean = scale = None
    if cfg.standardize:
        mean, scale = standardization(X, weights)
        X = (X - mean) / scale
    if cfg.intercept:
        X = add_intercept(X)
    return X, mean, scale


def _run_gd(step, loss, d, cfg: TrainConfig, kind: ModelKind):
    theta = np.zeros(d)
    budget = cfg.iteration_budget(kind)
    curve = [(0, loss(theta))]
    t0 = time.perf_counter()
    converged, delta, it = False, float("nan"), 0
    for it in range(1, budget + 1):
        new = step(theta)
        delta = float(np.max(np.abs(new - theta))) if d else 0.0
        theta = new
        if cfg.record_every and it % cfg.record_every == 0:
            curve.append((it, loss(theta)))
        if delta <= cfg.tol:
            converged = True
            break
    wall = time.perf_counter() - t0
    final = loss(theta)
    if not np.isfinite(final):
        raise NonFinite("training diverged")
    if curve[-1][0] != it:
        curve.append((it, final))
    return theta, it, final, converged, wall, delta, curve


def train(X, y, cfg: TrainConfig | None = None, weights=None) -> TrainReport:
    """Batch GD on the squared loss; weighted when ``weights`` is given."""
    cfg = cfg or TrainConfig()
    X, y, _, weights = _check(X, y, weights=weights)
    Xd, mean, scale = _prepare(X, cfg, weights)
    n = len(y) if weights is None else float(weights.sum())

    if weights is None:
        def step(th):
            return gd_step_full(Xd, y, th, cfg.learning_rate)
    else:
        def step(th):
            return gd_step_condensed(Xd, y, weights, th, cfg.learning_rate, n)

    theta, it, final, conv, wall, delta, curve = _run_gd(
        step, lambda th: loss_mse(Xd, y, th, n, weights), Xd.shape[1], cfg, "linear")
    params = ModelParams(theta, "linear", cfg.intercept, mean, scale)
    return TrainReport(params, it, final, conv, wall, delta, curve)


def _solve_normal(A: np.ndarray, b: np.ndarray, ridge_fallback: bool) -> np.ndarray:
    d = A.shape[0]
    try:
        L = np.linalg.cholesky(A)
        if np.linalg.cond(A) < 1e12:
            z = np.linalg.solve(L, b)
            return np.linalg.solve(L.T, z)
    except np.linalg.LinAlgError:
        pass
    if not ridge_fallback:
        raise SingularSystem("normal equations are singular")
    lam = 1e-8 * np.trace(A) / d if np.trace(A) > 0 else 1e-8
    warnings.warn(f"singular normal equations; solved with ridge lambda={lam:.3g}", SingularSystemWarning,
                  stacklevel=3)
    return np.linalg.solve(A + lam * np.eye(d), b)


def closed_form_full(X, y, ridge_fallback: bool = True) -> np.ndarray:
    """Solve X^T X theta = X^T y."""
    X, y, _, _ = _check(X, y)
    return _solve_normal(X.T @ X, X.T @ y, ridge_fallback)


def closed_form_weighted(X_c, y_c, weights, ridge_fallback: bool = True) -> np.ndarray:
    """Solve X_c^T W X_c theta = X_c^T W y_c for diagonal W = diag(weights)."""
    X_c, y_c, _, weights = _check(X_c, y_c, weights=weights)
    if weights is None:
        raise ShapeMismatch("weighted solve needs weights")
    Xw = X_c * weights[:, None]
    return _solve_normal(Xw.T @ X_c, Xw.T @ y_c, ridge_fallback)


# -- logistic regression --------------------------------------------------


def loss_logistic(X, y, theta, weights=None, n=None) -> float:
    """(1/n) sum_j w_j [-y_j log s(z_j) - (1 - y_j) log(1 - s(z_j))]."""
    X, y, theta, weights = _check(X, y, theta, weights)
    n = _normalizer(y, weights, n)
    z = X @ theta
    per = _softplus(z) - y * z
    if weights is not None:
        per = weights * per
    return float(per.sum() / n)


def grad_logistic(X, y, theta, weights=None, n=None) -> np.ndarray:
    X, y, theta, weights = _check(X, y, theta, weights)
    n = _normalizer(y, weights, n)
    r = sigmoid(X @ theta) - y
    if weights is not None:
        r = weights * r
    return X.T @ r / n


def train_logistic(X, y, cfg: TrainConfig | None = None, weights=None) -> TrainReport:
    """Weighted batch GD on the logistic negative log-likelihood.

    Without weights labels must be exactly 0/1; condensed samples may carry
    soft labels in [0, 1].
    """
    cfg = cfg or TrainConfig()
    X, y, _, weights = _check(X, y, weights=weights)
    if weights is None:
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryLabels("labels must be 0 or 1")
    elif np.any((y < 0) | (y > 1)):
        raise NonBinaryLabels("soft labels must lie in [0, 1]")
    Xd, mean, scale = _prepare(X, cfg, weights)
    n = len(y) if weights is None else float(weights.sum())

    def step(th):
        out = th - cfg.learning_rate * grad_logistic(Xd, y, th, weights, n)
        if not np.all(np.isfinite(out)):
            raise NonFinite("gradient step produced non-finite parameters")
        return out

    theta, it, final, conv, wall, delta, curve = _run_gd(
        step, lambda th: loss_logistic(Xd, y, th, weights, n), Xd.shape[1], cfg, "logistic")
    params = ModelParams(theta, "logistic", cfg.intercept, mean, scale)
    return TrainReport(params, it, final, conv, wall, delta, curve)


# -- evaluation ------------------------------------------------------------


def evaluate(params: ModelParams, X_test, y_test) -> dict:
    """MSE for linear models; accuracy (threshold 0.5) and probability MSE for logistic."""
    y_test = np.asarray(y_test, dtype=np.float64)
    pred = params.predict(X_test)
    if pred.shape != y_test.shape:
        raise ShapeMismatch("prediction and target shapes differ")
    mse = float(np.mean((pred - y_test) ** 2))
    if params.model_kind == "linear":
        return {"mse": mse}
    labels = (pred >= 0.5).astype(np.float64)
    return {"accuracy": float(np.mean(labels == y_test)), "mse": mse}


__all__ = [
    "ModelParams", "SingularSystemWarning", "TrainConfig", "TrainReport", "add_intercept",
    "closed_form_full", "closed_form_weighted", "evaluate", "gd_step_condensed", "gd_step_full",
    "grad_logistic", "grad_mse", "loss_logistic", "loss_mse", "sigmoid", "standardization", "train",
    "train_logistic",
]
