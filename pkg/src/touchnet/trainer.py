"""Single-network training with validation checkpointing, and the K-member ensemble."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mlp
from .datamodel import Dataset
from .errors import TrainingError, ValidationError
from .metrics import THRESHOLD_RULES, auroc, best_threshold

logger = logging.getLogger(__name__)

THREADS_ENV = "TOUCHNET_THREADS"

PROFILES = {
    "paper": {"epochs": 10000, "K": 10},
    "desk": {"epochs": 500, "K": 5},
}

INPUT_TRANSFORMS = ("none", "standardize", "log1p", "log1p_standardize")


@dataclass(frozen=True)
class InputTransform:
    """Fixed feature map applied before the network, fitted on training rows."""

    kind: str = "log1p_standardize"
    mean: tuple[float, ...] = ()
    std: tuple[float, ...] = ()

    @classmethod
    def fit(cls, kind: str, X: np.ndarray) -> "InputTransform":
        if kind not in INPUT_TRANSFORMS:
            raise ValueError(f"unknown input transform {kind!r}")
        if kind in ("none", "log1p"):
            return cls(kind)
        Z = np.log1p(X) if kind == "log1p_standardize" else np.asarray(X, dtype=float)
        mean = Z.mean(axis=0)
        std = Z.std(axis=0)
        std[std == 0] = 1.0
        return cls(kind, tuple(mean.tolist()), tuple(std.tolist()))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind in ("log1p", "log1p_standardize"):
            X = np.log1p(X)
        if self.kind in ("standardize", "log1p_standardize"):
            X = (X - np.asarray(self.mean)) / np.asarray(self.std)
        return X

    def to_json(self) -> dict:
        return {"kind": self.kind, "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_json(cls, payload: dict) -> "InputTransform":
        return cls(payload["kind"], tuple(payload["mean"]), tuple(payload["std"]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10000
    learning_rate: float = 1e-3
    eval_every: int = 50
    K: int = 10
    seeds: tuple[int, ...] = tuple(range(10))
    threshold_rule: str = "balanced_arithmetic"
    hidden: tuple[int, ...] = (10, 10, 10)
    batch_size: int | None = None
    input_transform: str = "log1p_standardize"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("ensemble seeds must be distinct")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        if self.input_transform not in INPUT_TRANSFORMS:
            raise ValueError(f"input_transform must be one of {INPUT_TRANSFORMS}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def profile(cls, name: str, seed: int = 0, **overrides) -> "TrainConfig":
        """Named preset with K seeds derived from ``seed``."""
        if name not in PROFILES:
            raise ValueError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
        kw = dict(PROFILES[name])
        kw.update(overrides)
        kw.setdefault("seeds", tuple(1000 * seed + k for k in range(kw["K"])))
        return cls(**kw)

    @property
    def arch(self) -> mlp.Architecture:
        return mlp.Architecture(31, self.hidden, 1)

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "eval_every": self.eval_every,
            "K": self.K,
            "seeds": list(self.seeds),
            "threshold_rule": self.threshold_rule,
            "hidden": list(self.hidden),
            "batch_size": self.batch_size,
            "input_transform": self.input_transform,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        payload["seeds"] = tuple(payload["seeds"])
        payload["hidden"] = tuple(payload["hidden"])
        return cls(**payload)


@dataclass
class TrainedModel:
    params: mlp.NetworkParams
    best_epoch: int
    best_val_auroc: float
    seed: int
    loss_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    val_trace: list[tuple[int, float]] = field(default_factory=list)

    def predict(self, X_transformed) -> np.ndarray:
        return mlp.forward(self.params, X_transformed)


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.X, data.y
    X, y = data
    return np.asarray(X), np.asarray(y)


def train_model(train, val, config: TrainConfig, seed: int, transform: InputTransform | None = None) -> TrainedModel:
    """Adam on mean BCE; keep the parameters with the best validation AUROC.

    Validation AUROC is measured every ``eval_every`` epochs and after the
    last one. Ties keep the earlier checkpoint.
    """
    X_train, y_train = _xy(train)
    X_val, y_val = _xy(val)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValidationError("train and validation sets must be non-empty")
    if X_train.shape[1] != X_val.shape[1]:
        raise ValidationError("train and validation feature counts differ")
    if transform is None:
        transform = InputTransform.fit(config.input_transform, X_train)
    Xt, Xv = transform(X_train), transform(X_val)
    yt = np.asarray(y_train, dtype=float)

    arch = mlp.Architecture(Xt.shape[1], config.hidden, 1)
    params = mlp.init_params(arch, seed)
    state = mlp.AdamState.fresh(params, lr=config.learning_rate)
    rng = np.random.default_rng([seed, 1])
    n = Xt.shape[0]

    losses = np.empty(config.epochs)
    best, best_epoch, best_auc = None, 0, -np.inf
    val_trace = []
    for epoch in range(1, config.epochs + 1):
        if config.batch_size is None or config.batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
        epoch_loss = 0.0
        for idx in batches:
            loss, grads = mlp.loss_and_grad(params, Xt[idx], yt[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"seed {seed}: non-finite loss {loss} at epoch {epoch}")
            state, params = mlp.adam_step(state, params, grads)
            epoch_loss += loss * (n if isinstance(idx, slice) else len(idx))
        losses[epoch - 1] = epoch_loss / n

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            auc = auroc(mlp.forward(params, Xv), y_val)
            val_trace.append((epoch, auc))
            if auc > best_auc:
                best, best_epoch, best_auc = params.copy(), epoch, auc
    logger.debug("seed %d: best val AUROC %.4f at epoch %d", seed, best_auc, best_epoch)
    return TrainedModel(best, best_epoch, float(best_auc), seed, losses, val_trace)


@dataclass
class EnsembleModel:
    members: list[TrainedModel]
    threshold: float
    transform: InputTransform
    config: TrainConfig

    def __post_init__(self):
        if not self.members:
            raise ValidationError("ensemble needs at least one member")

    @property
    def K(self) -> int:
        return len(self.members)


def member_scores(ensemble: EnsembleModel, X) -> np.ndarray:
    """``(K, n)`` matrix of member outputs."""
    Z = ensemble.transform(np.atleast_2d(np.asarray(X, dtype=float)))
    return np.vstack([mlp.forward(m.params, Z) for m in ensemble.members])


def ensemble_predict(ensemble: EnsembleModel, x):
    """Arithmetic mean of the member networks' outputs."""
    single = np.ndim(x) == 1
    scores = member_scores(ensemble, x).mean(axis=0)
    return float(scores[0]) if single else scores


def select_threshold(ensemble: EnsembleModel, val, rule: str | None = None) -> float:
    X, y = _xy(val)
    tau, _ = best_threshold(ensemble_predict(ensemble, X), y, rule or ensemble.config.threshold_rule)
    return tau


def classify(ensemble: EnsembleModel, x):
    """1 iff the ensemble score is strictly above the threshold."""
    score = ensemble_predict(ensemble, x)
    out = (np.asarray(score) > ensemble.threshold).astype(int)
    return int(out) if np.ndim(score) == 0 else out


def n_threads(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, default)))
    except ValueError:
        return default


def train_ensemble(train, val, config: TrainConfig, threads: int | None = None) -> EnsembleModel:
    """Train ``K`` members that differ only in seed, then pick the threshold on ``val``.

    Members are independent, so running them on a thread pool gives the same
    result as running them one after another.
    """
    if len(config.seeds) < config.K:
        raise ValueError(f"need {config.K} seeds, got {len(config.seeds)}")
    seeds = config.seeds[: config.K]
    X_train, _ = _xy(train)
    transform = InputTransform.fit(config.input_transform, X_train)
    threads = n_threads() if threads is None else threads

    def one(seed):
        return train_model(train, val, config, seed, transform)

    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(one, seeds))
    else:
        members = [one(s) for s in seeds]
    ensemble = EnsembleModel(members, threshold=0.5, transform=transform, config=config)
    ensemble.threshold = select_threshold(ensemble, val, config.threshold_rule)
    return ensemble


# ----------------------------------------------------------------------------
# ensemble.json


def ensemble_to_json(ensemble: EnsembleModel, extra: dict | None = None) -> dict:
    payload = {
        "config": ensemble.config.to_json(),
        "threshold": ensemble.threshold,
        "input_transform": ensemble.transform.to_json(),
        "members": [
            {
                **mlp.params_to_json(m.params, init_seed=m.seed),
                "best_epoch": m.best_epoch,
                "best_val_auroc": m.best_val_auroc,
            }
            for m in ensemble.members
        ],
    }
    if extra:
        payload.update(extra)
    return payload


def ensemble_from_json(payload: dict) -> EnsembleModel:
    members = [
        TrainedModel(
            params=mlp.params_from_json(m),
            best_epoch=int(m["best_epoch"]),
            best_val_auroc=float(m["best_val_auroc"]),
            seed=int(m["init_seed"]),
        )
        for m in payload["members"]
    ]
    return EnsembleModel(
        members=members,
        threshold=float(payload["threshold"]),
        transform=InputTransform.from_json(payload["input_transform"]),
        config=TrainConfig.from_json(payload["config"]),
    )


def save_ensemble(ensemble: EnsembleModel, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ensemble_to_json(ensemble, extra), indent=1, sort_keys=True) + "\n")
    return path


def load_ensemble(path: str | Path) -> tuple[EnsembleModel, dict]:
    """Returns the ensemble plus the raw payload (for extra keys such as data provenance)."""
    payload = json.loads(Path(path).read_text())
    return ensemble_from_json(payload), payload


def with_threshold(ensemble: EnsembleModel, tau: float) -> EnsembleModel:
    return replace(ensemble, threshold=float(tau))
