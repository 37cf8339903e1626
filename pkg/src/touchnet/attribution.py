"""Shapley attribution of a scoring function to its input features.

The value of a coalition ``S`` is the mean model output over a background
sample, with the features in ``S`` taken from the explained row and all
others from the background row (interventional masking)::

    v(S) = mean_b f(x_S, b_{not S})

``shapley_exact`` enumerates all coalitions and is the reference for small
dimension. ``shapley_permutation`` walks random feature orderings, each
paired with its reverse, and is what runs on the 31 touchpoint codes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from .datamodel import N_CODES, TOUCHPOINT_CODES, TOUCHPOINT_NAMES, Dataset

logger = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray], np.ndarray]

EXACT_MAX_DIMS = 14
# rows handed to the scoring function per call
EVAL_BATCH_ROWS = 1 << 16


def _eval(f: ScoreFn, Z: np.ndarray) -> np.ndarray:
    out = np.empty(Z.shape[0])
    for lo in range(0, Z.shape[0], EVAL_BATCH_ROWS):
        out[lo : lo + EVAL_BATCH_ROWS] = np.asarray(f(Z[lo : lo + EVAL_BATCH_ROWS]), dtype=float).reshape(-1)
    return out


def _prep(x, background) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(-1)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] < 1:
        raise ValueError("background needs at least one row")
    if bg.shape[1] != x.size:
        raise ValueError(f"background has {bg.shape[1]} features, x has {x.size}")
    return x, bg


def coalition_values(f: ScoreFn, x, background, active_dims=None) -> tuple[np.ndarray, list[int]]:
    """``v`` for every subset of ``active_dims``, indexed by bitmask.

    Features outside ``active_dims`` are held at ``x``.
    """
    x, bg = _prep(x, background)
    active = list(range(x.size)) if active_dims is None else [int(j) for j in active_dims]
    k = len(active)
    if k > EXACT_MAX_DIMS:
        raise ValueError(
            f"exact Shapley over {k} features needs 2^{k} coalitions; "
            f"the cap is {EXACT_MAX_DIMS}, use shapley_permutation instead"
        )
    base = np.repeat(bg, 1, axis=0)
    inactive = np.setdiff1d(np.arange(x.size), active)
    base[:, inactive] = x[inactive]
    masks = np.arange(1 << k)
    bits = ((masks[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)  # (2^k, k)
    v = np.empty(1 << k)
    per_chunk = max(1, EVAL_BATCH_ROWS // bg.shape[0])
    for lo in range(0, 1 << k, per_chunk):
        b = bits[lo : lo + per_chunk]
        Z = np.broadcast_to(base, (b.shape[0],) + base.shape).copy()
        for col, j in enumerate(active):
            Z[b[:, col], :, j] = x[j]
        v[lo : lo + per_chunk] = _eval(f, Z.reshape(-1, x.size)).reshape(b.shape[0], -1).mean(axis=1)
    return v, active


def shapley_exact(f: ScoreFn, x, background, active_dims=None) -> np.ndarray:
    """Shapley values over ``active_dims`` by full coalition enumeration.

    ``phi_j = sum_{S not containing j} |S|! (k-|S|-1)! / k! * (v(S+j) - v(S))``
    """
    v, active = coalition_values(f, x, background, active_dims)
    k = len(active)
    masks = np.arange(1 << k)
    size = np.array([bin(m).count("1") for m in masks])
    weight = np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) if s < k else 0.0 for s in size])
    phi = np.empty(k)
    for j in range(k):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(weight[without] * (v[without | bit] - v[without]))
    return phi


def _chain_masks(order: np.ndarray) -> np.ndarray:
    """Row ``k`` switches on the first ``k`` features of ``order``."""
    d = order.size
    rank = np.empty(d, dtype=np.int64)
    rank[order] = np.arange(1, d + 1)
    return rank[None, :] <= np.arange(d + 1)[:, None]


@dataclass(frozen=True)
class PermutationEstimate:
    values: np.ndarray
    stderr: np.ndarray
    # standard error of values.sum(); zero when every ordering sees the full background
    sum_stderr: float
    n_samples: int


def shapley_permutation(
    f: ScoreFn,
    x,
    background,
    n_perm: int = 200,
    seed=0,
    background_per_perm: int | None = None,
    return_stderr: bool = False,
):
    """Monte Carlo Shapley values from ``n_perm`` random orderings and their reverses.

    Along each ordering the features are switched from background to ``x``
    one at a time and the change in ``v`` is credited to the feature just
    switched. With ``background_per_perm=None`` every background row is used
    for every ordering, so each ordering's credits sum exactly to
    ``f(x) - mean f(background)``. Otherwise that many rows are drawn per
    ordering (shared by the ordering and its reverse).

    A feature the function ignores gets exactly zero from every ordering.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    x, bg = _prep(x, background)
    d = x.size
    rng = np.random.default_rng(seed)
    m = bg.shape[0] if background_per_perm is None else int(background_per_perm)
    rows_per_pair = 2 * (d + 1) * m
    pairs_per_batch = max(1, EVAL_BATCH_ROWS // rows_per_pair)

    pair_phi = np.empty((n_perm, d))
    done = 0
    while done < n_perm:
        n = min(pairs_per_batch, n_perm - done)
        orders, bgs = [], []
        for _ in range(n):
            order = rng.permutation(d)
            rows = bg if background_per_perm is None else bg[rng.integers(0, bg.shape[0], size=m)]
            orders.extend([order, order[::-1]])
            bgs.extend([rows, rows])
        masks = np.stack([_chain_masks(o) for o in orders])  # (2n, d+1, d)
        B = np.stack(bgs)  # (2n, m, d)
        Z = np.where(masks[:, :, None, :], x[None, None, None, :], B[:, None, :, :])
        vals = _eval(f, Z.reshape(-1, d)).reshape(2 * n, d + 1, m).mean(axis=2)
        steps = np.diff(vals, axis=1)  # (2n, d): gain when order[k] switched on
        contrib = np.zeros((2 * n, d))
        for c, order in enumerate(orders):
            contrib[c, order] = steps[c]
        pair_phi[done : done + n] = 0.5 * (contrib[0::2] + contrib[1::2])
        done += n

    phi = pair_phi.mean(axis=0)
    if not return_stderr:
        return phi
    if n_perm > 1:
        se = pair_phi.std(axis=0, ddof=1) / np.sqrt(n_perm)
        sum_se = float(pair_phi.sum(axis=1).std(ddof=1) / np.sqrt(n_perm))
    else:
        se, sum_se = np.full(d, np.inf), np.inf
    return PermutationEstimate(phi, se, sum_se, n_perm)


# ----------------------------------------------------------------------------
# dataset-level attribution


@dataclass
class AttributionConfig:
    n_perm: int = 200
    background_size: int = 512
    background_per_perm: int | None = None
    seed: int = 0
    max_users: int | None = None


@dataclass
class ShapleyMatrix:
    values: np.ndarray  # (n_users, n_features)
    base_value: float
    predictions: np.ndarray  # f(x_i)
    stderr: np.ndarray
    sum_stderr: np.ndarray
    feature_codes: tuple[int, ...] = TOUCHPOINT_CODES
    feature_names: tuple[str, ...] = TOUCHPOINT_NAMES

    def efficiency_residual(self) -> np.ndarray:
        return self.values.sum(axis=1) - (self.predictions - self.base_value)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=[f"phi{c}" for c in self.feature_codes])


def make_background(train: Dataset | np.ndarray, size: int = 512, seed: int = 0) -> np.ndarray:
    """Up to ``size`` training rows drawn without replacement."""
    X = train.X if isinstance(train, Dataset) else np.asarray(train)
    if X.shape[0] == 0:
        raise ValueError("cannot draw a background from an empty set")
    rng = np.random.default_rng([seed, 7])
    idx = np.sort(rng.choice(X.shape[0], size=min(size, X.shape[0]), replace=False))
    return X[idx].astype(float)


def attribute_dataset(
    ensemble,
    data: Dataset | np.ndarray,
    background: np.ndarray,
    config: AttributionConfig = AttributionConfig(),
    threads: int = 1,
    score_fn: ScoreFn | None = None,
) -> ShapleyMatrix:
    """Per-row Shapley values of the ensemble score.

    Row ``i`` uses the random stream ``(config.seed, i)``, so results do not
    depend on how rows are scheduled across threads.
    """
    from .trainer import ensemble_predict

    X = data.X if isinstance(data, Dataset) else np.asarray(data)
    if config.max_users is not None:
        X = X[: config.max_users]
    X = X.astype(float)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValueError("background is empty")
    f = score_fn if score_fn is not None else (lambda Z: ensemble_predict(ensemble, Z))

    def one(i):
        est = shapley_permutation(
            f, X[i], bg, config.n_perm, seed=[config.seed, i],
            background_per_perm=config.background_per_perm, return_stderr=True,
        )
        return est.values, est.stderr, est.sum_stderr

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(X.shape[0])))
    else:
        results = [one(i) for i in range(X.shape[0])]
    d = X.shape[1]
    values = np.array([r[0] for r in results]).reshape(-1, d)
    stderr = np.array([r[1] for r in results]).reshape(-1, d)
    sum_stderr = np.array([r[2] for r in results], dtype=float)
    codes = TOUCHPOINT_CODES if d == N_CODES else tuple(range(1, d + 1))
    names = TOUCHPOINT_NAMES if d == N_CODES else tuple(f"feature {c}" for c in codes)
    return ShapleyMatrix(
        values=values,
        base_value=float(np.mean(f(bg))),
        predictions=np.asarray(f(X), dtype=float).reshape(-1) if X.shape[0] else np.empty(0),
        stderr=stderr,
        sum_stderr=sum_stderr,
        feature_codes=codes,
        feature_names=names,
    )


def rank_features(matrix: ShapleyMatrix) -> list[tuple[int, str, float]]:
    """Features by total absolute Shapley value, largest first; ties by code."""
    if matrix.values.size == 0:
        raise ValueError("empty Shapley matrix")
    total = np.abs(matrix.values).sum(axis=0)
    codes = np.asarray(matrix.feature_codes)
    order = np.lexsort((codes, -total))
    n = matrix.values.shape[0]
    return [(int(codes[j]), matrix.feature_names[j], float(total[j] / n)) for j in order]


def export_importance(matrix: ShapleyMatrix, path: str | Path) -> Path:
    path = Path(path)
    ranked = rank_features(matrix)
    pd.DataFrame(
        [(r + 1, code, name, imp) for r, (code, name, imp) in enumerate(ranked)],
        columns=["rank", "code", "feature_name", "mean_abs_phi"],
    ).to_csv(path, index=False, float_format="%.17g")
    return path


def export_beeswarm(matrix: ShapleyMatrix, dataset: Dataset | np.ndarray, path: str | Path) -> Path:
    """One row per (user, feature), features in importance order."""
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset)
    n = matrix.values.shape[0]
    if X.shape[0] < n:
        raise ValueError("dataset has fewer rows than the Shapley matrix")
    code_pos = {c: j for j, c in enumerate(matrix.feature_codes)}
    frames = []
    for code, name, _ in rank_features(matrix):
        j = code_pos[code]
        frames.append(
            pd.DataFrame(
                {
                    "user_idx": np.arange(n),
                    "code": code,
                    "feature_name": name,
                    "count": X[:n, j],
                    "phi": matrix.values[:, j],
                }
            )
        )
    path = Path(path)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    return path
