"""Comparison classifiers: logistic regression, Gaussian naive Bayes, k-nearest neighbours.

All three expose ``score(X) -> P(y=1)`` so they can be dropped into the same
ROC / threshold machinery as the network ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd

from .datamodel import Dataset
from .errors import ValidationError
from .metrics import auroc, best_threshold, confusion_at

KINDS = ("logistic", "gaussian_nb", "knn")
ALIASES = {"nb": "gaussian_nb", "naive_bayes": "gaussian_nb", "logreg": "logistic", "lr": "logistic"}

DISPLAY_NAMES = {
    "ensemble": "Neural Network Ensemble",
    "logistic": "Logistic Regression",
    "gaussian_nb": "Naive Bayes",
    "knn": "K-Nearest Neighbors",
}


class Scorer(Protocol):
    def score(self, X) -> np.ndarray: ...


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _as_matrix(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != dim:
        raise ValueError(f"expected {dim} features, got {X.shape[1]}")
    return X


def _require_both(y):
    if y.size == 0:
        raise ValidationError("training set is empty")
    if y.min() == y.max():
        raise ValidationError("training set holds a single class")


@dataclass
class BaselineConfig:
    # logistic
    l2: float | None = None  # None -> 1 / n_train
    learning_rate: float = 0.01
    steps: int = 3000
    checkpoint_every: int = 100
    # naive Bayes
    nb_log1p: bool = False
    var_floor_factor: float = 1e-9
    # knn
    k: int = 5


@dataclass
class LogisticModel:
    """``score(x) = sigmoid(w . x + b)`` on raw counts.

    Fitted on z-scored features with Adam; the scaling is folded back into
    ``w`` and ``b`` afterwards.
    """

    w: np.ndarray
    b: float
    loss_trace: list[float] = field(default_factory=list)
    kind: str = "logistic"

    def score(self, X) -> np.ndarray:
        X = _as_matrix(X, self.w.size)
        return _sigmoid(X @ self.w + self.b)


def fit_logistic(X, y, config: BaselineConfig = BaselineConfig()) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _require_both(y)
    n, d = X.shape
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std
    lam = 1.0 / n if config.l2 is None else config.l2

    theta = np.zeros(d + 1)  # [w, b]
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = []

    def loss_grad(theta):
        p = np.clip(_sigmoid(Z @ theta[:d] + theta[d]), 1e-12, 1 - 1e-12)
        loss = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)) + lam * theta[:d] @ theta[:d]
        r = (p - y) / n
        g = np.r_[Z.T @ r + 2 * lam * theta[:d], r.sum()]
        return loss, g

    for t in range(1, config.steps + 1):
        loss, g = loss_grad(theta)
        if (t - 1) % config.checkpoint_every == 0:
            trace.append(float(loss))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - config.learning_rate * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    trace.append(float(loss_grad(theta)[0]))
    w = theta[:d] / std
    b = float(theta[d] - np.sum(theta[:d] * mean / std))
    return LogisticModel(w=w, b=b, loss_trace=trace)


@dataclass
class GaussianNBModel:
    """Per-class, per-feature Gaussians with a shared variance floor."""

    means: np.ndarray  # (2, d)
    variances: np.ndarray  # (2, d)
    log_priors: np.ndarray  # (2,)
    log1p: bool = False
    kind: str = "gaussian_nb"

    def log_joint(self, X) -> np.ndarray:
        X = _as_matrix(X, self.means.shape[1])
        if self.log1p:
            X = np.log1p(X)
        ll = -0.5 * (
            np.log(2 * np.pi * self.variances)[None, :, :]
            + (X[:, None, :] - self.means[None, :, :]) ** 2 / self.variances[None, :, :]
        ).sum(axis=2)
        return ll + self.log_priors[None, :]

    def posterior(self, X) -> np.ndarray:
        """``(n, 2)`` class posteriors."""
        lj = self.log_joint(X)
        lj -= lj.max(axis=1, keepdims=True)
        p = np.exp(lj)
        return p / p.sum(axis=1, keepdims=True)

    def score(self, X) -> np.ndarray:
        lj = self.log_joint(X)
        # P(1|x) = sigmoid(l1 - l0), stable for large gaps
        return _sigmoid(lj[:, 1] - lj[:, 0])


def fit_gaussian_nb(X, y, config: BaselineConfig = BaselineConfig()) -> GaussianNBModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    _require_both(y)
    if config.nb_log1p:
        X = np.log1p(X)
    floor = config.var_floor_factor * float(np.max(X.var(axis=0)))
    if floor <= 0:
        floor = config.var_floor_factor
    means, variances, priors = [], [], []
    for c in (0, 1):
        Xc = X[y == c]
        means.append(Xc.mean(axis=0))
        variances.append(np.maximum(Xc.var(axis=0), floor))
        priors.append(Xc.shape[0] / X.shape[0])
    return GaussianNBModel(np.array(means), np.array(variances), np.log(priors), log1p=config.nb_log1p)


@dataclass
class KNNModel:
    """Fraction of positives among the ``k`` nearest training rows (z-scored Euclidean).

    Equal distances are broken by training-row order.
    """

    train_z: np.ndarray
    labels: np.ndarray
    k: int
    mean: np.ndarray
    std: np.ndarray
    chunk_elems: int = 1 << 23
    kind: str = "knn"

    def score(self, X) -> np.ndarray:
        X = _as_matrix(X, self.mean.size)
        Q = (X - self.mean) / self.std
        n_train, d = self.train_z.shape
        # explicit differences keep equal distances exactly equal
        step = max(1, self.chunk_elems // max(1, n_train * d))
        out = np.empty(Q.shape[0])
        for lo in range(0, Q.shape[0], step):
            q = Q[lo : lo + step]
            d2 = ((q[:, None, :] - self.train_z[None, :, :]) ** 2).sum(axis=2)
            idx = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[lo : lo + step] = self.labels[idx].mean(axis=1)
        return out


def fit_knn(X, y, config: BaselineConfig = BaselineConfig()) -> KNNModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValidationError("training set is empty")
    if not 1 <= config.k <= X.shape[0]:
        raise ValidationError(f"k={config.k} must lie in [1, {X.shape[0]}]")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return KNNModel((X - mean) / std, y, config.k, mean, std)


def fit(kind: str, train, config: BaselineConfig = BaselineConfig()):
    kind = ALIASES.get(kind, kind)
    X, y = (train.X, train.y) if isinstance(train, Dataset) else train
    if kind == "logistic":
        return fit_logistic(X, y, config)
    if kind == "gaussian_nb":
        return fit_gaussian_nb(X, y, config)
    if kind == "knn":
        return fit_knn(X, y, config)
    raise ValueError(f"unknown baseline {kind!r}; choose from {', '.join(KINDS)}")


def score(model: Scorer, x):
    single = np.ndim(x) == 1
    s = model.score(x)
    return float(s[0]) if single else s


# ----------------------------------------------------------------------------
# comparison table

COMPARISON_COLUMNS = ["model", "auroc", "tpr", "tnr", "balanced_accuracy"]


def compare_row(name: str, val_scores, val_y, test_scores, test_y, rule: str = "balanced_arithmetic") -> dict:
    """Metrics on test at the threshold the model itself picks on validation."""
    tau, _ = best_threshold(val_scores, val_y, rule)
    c = confusion_at(test_scores, test_y, tau)
    return {
        "model": name,
        "auroc": auroc(test_scores, test_y),
        "tpr": c.tpr,
        "tnr": c.tnr,
        "balanced_accuracy": (c.tpr + c.tnr) / 2.0,
        "threshold": tau,
    }


def compare(models: dict[str, Scorer], ensemble, val: Dataset, test: Dataset, rule: str | None = None) -> pd.DataFrame:
    """One row per model: AUROC, TPR, TNR, balanced accuracy on ``test``.

    The ensemble keeps its own stored threshold; every other model gets a
    threshold chosen on ``val`` with the same rule.
    """
    from .trainer import ensemble_predict

    rule = rule or (ensemble.config.threshold_rule if ensemble is not None else "balanced_arithmetic")
    rows = []
    if ensemble is not None:
        s = ensemble_predict(ensemble, test.X)
        c = confusion_at(s, test.y, ensemble.threshold)
        rows.append(
            {
                "model": "ensemble",
                "auroc": auroc(s, test.y),
                "tpr": c.tpr,
                "tnr": c.tnr,
                "balanced_accuracy": (c.tpr + c.tnr) / 2.0,
                "threshold": ensemble.threshold,
            }
        )
    for name, model in models.items():
        rows.append(compare_row(name, model.score(val.X), val.y, model.score(test.X), test.y, rule))
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS + ["threshold"])


def write_comparison(table: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    table[COMPARISON_COLUMNS].to_csv(path, index=False, float_format="%.6f")
    return path

