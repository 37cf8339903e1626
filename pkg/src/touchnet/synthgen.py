"""Synthetic touchpoint populations with a planted purchase mechanism.

Each user is marketed over an active span of ``L`` consecutive days. For every
(user, code) pair the daily count is Poisson with intensity
``rate[code] * span_correction * scale``, where ``scale`` is a mean-one
log-normal draw, so different users lean on different channels. The purchase
label comes from a logistic link on standardised ``log1p`` counts over the span:

    logit P(buy) = bias + sum_j w_j * z_j + sum_(a,b) w_ab * z_a * z_b

with ``z_j = (log1p(n_j) - mean_j) / std_j`` computed over the population and
the bias found by bisection so the realised buyer share hits the target.
Buyers' spans end on their purchase day, so no buyer has events after it.
Non-buyers' spans are placed the same way, which keeps span placement from
leaking the label.

With ``signal_half_life_days`` set, each event's weight in the link decays
with its age relative to the end of the span; older behaviour still matters
but a short lookback sees less of what drove the outcome.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import (
    DAYS_PER_MONTH,
    DEFAULT_HORIZON_DAYS,
    N_CODES,
    REFERENCE_N_USERS,
    TOUCHPOINT_COUNTS,
    UserRecord,
    write_events,
)
from .errors import CalibrationError, ValidationError

logger = logging.getLogger(__name__)


def calibrate_rates(overall_counts, n_users: int, months: float) -> np.ndarray:
    """Per user-day event rate for each code: ``count / (n_users * months * 30.4)``."""
    if n_users <= 0 or months <= 0:
        raise ValueError("n_users and months must be positive")
    counts = np.asarray(overall_counts, dtype=float)
    return counts / (n_users * months * DAYS_PER_MONTH)


REFERENCE_RATES = calibrate_rates(TOUCHPOINT_COUNTS, REFERENCE_N_USERS, 40)


def _weights(entries: dict[int, float]) -> np.ndarray:
    w = np.zeros(N_CODES)
    for code, value in entries.items():
        w[code - 1] = value
    return w


# Effects are per standard deviation of log1p(lifetime count). Signs follow a
# mixed pattern; the remaining 23 codes are exactly zero.
DEFAULT_EFFECT_WEIGHTS = _weights(
    {
        9: 1.2,  # display impression awareness
        11: -0.9,  # display impression nonstock ROI
        14: -0.8,  # email click awareness
        16: 1.0,  # email click ROI
        22: -1.2,  # email sent awareness
        23: 0.9,  # email sent promo
        25: 0.8,  # email sent stock
        26: 1.0,  # search click nonstock brand
    }
)

# Interaction scenario: damped main effects plus products of channel pairs,
# which no model linear in the counts can express.
INTERACTION_EFFECT_WEIGHTS = 0.6 * DEFAULT_EFFECT_WEIGHTS
INTERACTION_PAIRS: tuple[tuple[int, int, float], ...] = (
    (9, 22, 1.0),
    (11, 20, -0.8),
    (18, 24, 0.8),
)


@dataclass
class GeneratorConfig:
    n_users: int = REFERENCE_N_USERS
    horizon_days: int = DEFAULT_HORIZON_DAYS
    rate_per_user_day: np.ndarray = field(default_factory=lambda: REFERENCE_RATES.copy())
    target_buyer_rate: float = 0.118
    effect_weights: np.ndarray = field(default_factory=lambda: DEFAULT_EFFECT_WEIGHTS.copy())
    # None: solve for the bias by bisection
    effect_bias: float | None = None
    interactions: tuple[tuple[int, int, float], ...] = ()
    heterogeneity_sigma: float = 1.0
    min_active_fraction: float = 0.8
    signal_half_life_days: float | None = None
    rate_tolerance: float = 0.005
    max_bisection_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        self.rate_per_user_day = np.asarray(self.rate_per_user_day, dtype=float)
        self.effect_weights = np.asarray(self.effect_weights, dtype=float)
        self.interactions = tuple((int(a), int(b), float(w)) for a, b, w in self.interactions)
        self.validate()

    def validate(self):
        if self.n_users < 1:
            raise ValidationError("n_users must be >= 1")
        if self.horizon_days < 1:
            raise ValidationError("horizon_days must be >= 1")
        if self.rate_per_user_day.shape != (N_CODES,) or np.any(self.rate_per_user_day < 0):
            raise ValidationError(f"rate_per_user_day must be {N_CODES} non-negative values")
        if self.effect_weights.shape != (N_CODES,) or not np.all(np.isfinite(self.effect_weights)):
            raise ValidationError(f"effect_weights must be {N_CODES} finite values")
        if not 0.0 < self.target_buyer_rate < 1.0:
            raise ValidationError("target_buyer_rate must lie in (0, 1)")
        if self.heterogeneity_sigma < 0:
            raise ValidationError("heterogeneity_sigma must be >= 0")
        if not 0.0 < self.min_active_fraction <= 1.0:
            raise ValidationError("min_active_fraction must lie in (0, 1]")
        for a, b, _ in self.interactions:
            if not (1 <= a <= N_CODES and 1 <= b <= N_CODES) or a == b:
                raise ValidationError(f"bad interaction pair ({a}, {b})")

    @property
    def min_span_days(self) -> int:
        return max(1, math.ceil(self.min_active_fraction * self.horizon_days))

    @property
    def span_correction(self) -> float:
        # rates are per horizon user-day; users are only active for E[L] days
        return self.horizon_days / ((self.min_span_days + self.horizon_days) / 2.0)

    def to_json(self) -> dict:
        return {
            "n_users": self.n_users,
            "horizon_days": self.horizon_days,
            "rate_per_user_day": self.rate_per_user_day.tolist(),
            "target_buyer_rate": self.target_buyer_rate,
            "effect_weights": self.effect_weights.tolist(),
            "effect_bias": self.effect_bias,
            "interactions": [list(t) for t in self.interactions],
            "heterogeneity_sigma": self.heterogeneity_sigma,
            "min_active_fraction": self.min_active_fraction,
            "signal_half_life_days": self.signal_half_life_days,
            "rate_tolerance": self.rate_tolerance,
            "seed": self.seed,
        }


SCENARIOS = ("default", "interaction", "lookback", "null")


def scenario_config(name: str, **overrides) -> GeneratorConfig:
    """Named generator presets.

    ``default``      main effects only (DEFAULT_EFFECT_WEIGHTS)
    ``interaction``  damped main effects plus pairwise products
    ``lookback``     default effects with a 180-day signal half-life
    ``null``         no signal at all
    """
    if name == "default":
        base = {}
    elif name == "interaction":
        base = {"effect_weights": INTERACTION_EFFECT_WEIGHTS.copy(), "interactions": INTERACTION_PAIRS}
    elif name == "lookback":
        base = {"signal_half_life_days": 180.0}
    elif name == "null":
        base = {"effect_weights": np.zeros(N_CODES)}
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    base.update(overrides)
    return GeneratorConfig(**base)


@dataclass
class GroundTruth:
    """What the generator planted, for checking recovered effects."""

    effect_weights: np.ndarray
    effect_bias: float
    interactions: tuple[tuple[int, int, float], ...]
    link_mean: np.ndarray
    link_std: np.ndarray
    user_scales: np.ndarray  # (n_users, 31) mean-one multipliers
    span_days: np.ndarray
    realized_rate: float
    seed: int
    horizon_days: int
    signal_half_life_days: float | None

    def link(self, features: np.ndarray) -> np.ndarray:
        """Planted log-odds for rows of (possibly decay-weighted) lifetime counts."""
        z = (np.log1p(np.asarray(features, dtype=float)) - self.link_mean) / self.link_std
        eta = self.effect_bias + z @ self.effect_weights
        for a, b, w in self.interactions:
            eta = eta + w * z[..., a - 1] * z[..., b - 1]
        return eta

    def to_json(self) -> dict:
        return {
            "effect_weights": self.effect_weights.tolist(),
            "effect_bias": self.effect_bias,
            "interactions": [list(t) for t in self.interactions],
            "link_mean": self.link_mean.tolist(),
            "link_std": self.link_std.tolist(),
            "realized_rate": self.realized_rate,
            "seed": self.seed,
            "horizon_days": self.horizon_days,
            "signal_half_life_days": self.signal_half_life_days,
        }


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def solve_bias(eta: np.ndarray, uniforms: np.ndarray, target: float, tol: float, max_iter: int = 200) -> float:
    """Bisection on the bias so that ``mean(u < sigmoid(bias + eta))`` is within tol of target.

    The realised rate is a non-decreasing step function of the bias, so the
    search either lands inside the band or proves the band is skipped over.
    """
    lo, hi = -60.0 - float(np.max(eta, initial=0.0)), 60.0 - float(np.min(eta, initial=0.0))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(uniforms < _sigmoid(mid + eta)))
        if abs(rate - target) <= tol:
            return mid
        if rate < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    raise CalibrationError(
        f"could not reach buyer rate {target} +/- {tol}: closest step gave {rate:.4f} "
        f"after bisection (n={uniforms.size})"
    )


@dataclass
class _UserDraw:
    span: int
    scales: np.ndarray
    ages: np.ndarray
    codes: np.ndarray
    label_u: float
    place_u: float
    signal_counts: np.ndarray


def _draw_user(cfg: GeneratorConfig, index: int) -> _UserDraw:
    rng = np.random.default_rng([cfg.seed, index])
    span = int(rng.integers(cfg.min_span_days, cfg.horizon_days, endpoint=True))
    sigma = cfg.heterogeneity_sigma
    scales = np.exp(sigma * rng.standard_normal(N_CODES) - 0.5 * sigma * sigma)
    lam = cfg.rate_per_user_day * cfg.span_correction * scales * span
    counts = rng.poisson(lam)
    codes = np.repeat(np.arange(1, N_CODES + 1, dtype=np.int8), counts)
    ages = rng.integers(0, span, size=codes.size).astype(np.int32)
    if cfg.signal_half_life_days is None:
        signal = counts.astype(float)
    else:
        decay = np.exp2(-ages / cfg.signal_half_life_days)
        signal = np.bincount(codes - 1, weights=decay, minlength=N_CODES)
    label_u, place_u = rng.random(2)
    return _UserDraw(span, scales, ages, codes, float(label_u), float(place_u), signal)


def generate(cfg: GeneratorConfig) -> tuple[list[UserRecord], GroundTruth]:
    """Draw a population. Deterministic in ``cfg`` (including its seed).

    Each user's draws come from a generator keyed on ``(seed, user index)``,
    so the result does not depend on the order users are produced in.
    """
    cfg.validate()
    draws = [_draw_user(cfg, i) for i in range(cfg.n_users)]

    signal = np.vstack([d.signal_counts for d in draws])
    logs = np.log1p(signal)
    mean = logs.mean(axis=0)
    std = logs.std(axis=0)
    std[std == 0] = 1.0
    truth = GroundTruth(
        effect_weights=cfg.effect_weights.copy(),
        effect_bias=0.0,
        interactions=cfg.interactions,
        link_mean=mean,
        link_std=std,
        user_scales=np.vstack([d.scales for d in draws]),
        span_days=np.array([d.span for d in draws]),
        realized_rate=float("nan"),
        seed=cfg.seed,
        horizon_days=cfg.horizon_days,
        signal_half_life_days=cfg.signal_half_life_days,
    )
    eta = truth.link(signal)
    uniforms = np.array([d.label_u for d in draws])
    if cfg.effect_bias is None:
        bias = solve_bias(eta, uniforms, cfg.target_buyer_rate, cfg.rate_tolerance, cfg.max_bisection_iter)
    else:
        bias = float(cfg.effect_bias)
    truth.effect_bias = bias
    labels = uniforms < _sigmoid(bias + eta)
    truth.realized_rate = float(labels.mean())

    width = len(str(max(cfg.n_users - 1, 0)))
    records = []
    for i, (d, buyer) in enumerate(zip(draws, labels)):
        # span end uniform over every position that keeps the span in the horizon
        end = d.span - 1 + int(d.place_u * (cfg.horizon_days - d.span + 1))
        days = end - d.ages.astype(np.int64)
        order = np.argsort(days, kind="stable")
        records.append(
            UserRecord(
                user_id=f"u{i:0{width}d}",
                days=days[order],
                codes=d.codes[order],
                purchase_day=end if buyer else None,
            )
        )
    logger.info("generated %d users, buyer rate %.4f, bias %.4f", cfg.n_users, truth.realized_rate, bias)
    return records, truth


def write_population(records, truth: GroundTruth, cfg: GeneratorConfig, directory: str | Path) -> list[Path]:
    """Write events.csv, purchases.csv and groundtruth.json into ``directory``."""
    directory = Path(directory)
    events, purchases = write_events(records, directory)
    gt_path = directory / "groundtruth.json"
    payload = truth.to_json()
    payload["config"] = cfg.to_json()
    gt_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [events, purchases, gt_path]
