"""Event, user and dataset types; event-log loading; lookback windows; splits.

Time is an integer day offset from the start of collection. A user's
touchpoints inside a closed window ``[start, start + T]`` are aggregated into a
length-31 count vector indexed by touchpoint code (code ``c`` lives at index
``c - 1``).
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

N_CODES = 31
DAYS_PER_MONTH = 30.4
DEFAULT_MONTHS = 40
DEFAULT_HORIZON_DAYS = round(DEFAULT_MONTHS * DAYS_PER_MONTH)  # 1216

# Touchpoint type per numeric code 1..31, with the overall count observed over
# the collection period.
TOUCHPOINT_TABLE: tuple[tuple[str, int], ...] = (
    ("Earned social click none", 12495),
    ("Owned social click none", 5167),
    ("Paid affiliate click none", 2178),
    ("Paid display click awareness", 1700),
    ("Paid display click nonstock consideration", 161),
    ("Paid display click nonstock ROI", 1287),
    ("Paid display click stock consideration", 240),
    ("Paid display click stock ROI", 84),
    ("Paid display impression awareness", 3278563),
    ("Paid display impression nonstock consideration", 194759),
    ("Paid display impression nonstock ROI", 6995656),
    ("Paid display impression stock consideration", 160837),
    ("Paid display impression stock ROI", 355639),
    ("Paid email click awareness", 123190),
    ("Paid email click promo", 2137),
    ("Paid email click ROI", 53556),
    ("Paid email click stock", 8810),
    ("Paid email open awareness", 1907397),
    ("Paid email open promo", 65680),
    ("Paid email open ROI", 814296),
    ("Paid email open stock", 180003),
    ("Paid email sent awareness", 2324088),
    ("Paid email sent promo", 126088),
    ("Paid email sent ROI", 864342),
    ("Paid email sent stock", 251481),
    ("Paid search click nonstock brand", 36123),
    ("Paid search click nonstock nonbrand", 11781),
    ("Paid search click stock brand", 19139),
    ("Paid search click stock nonbrand", 3240),
    ("Paid social click paid FB", 78),
    ("Paid social impression paid FB", 30402),
)
TOUCHPOINT_NAMES: tuple[str, ...] = tuple(name for name, _ in TOUCHPOINT_TABLE)
TOUCHPOINT_COUNTS = np.array([count for _, count in TOUCHPOINT_TABLE], dtype=np.int64)
TOUCHPOINT_CODES: tuple[int, ...] = tuple(range(1, N_CODES + 1))

REFERENCE_N_USERS = 20556
REFERENCE_N_BUYERS = 2425

LOOKBACK_PRESETS = {"1m": 30, "3m": 91, "12m": 365}


def lookback_days(preset: str | int, horizon_days: int = DEFAULT_HORIZON_DAYS) -> int:
    """Resolve a lookback preset (``1m``, ``3m``, ``12m``, ``full``) or day count."""
    if isinstance(preset, (int, np.integer)):
        return int(preset)
    if preset == "full":
        return int(horizon_days)
    if preset in LOOKBACK_PRESETS:
        return LOOKBACK_PRESETS[preset]
    try:
        return int(preset)
    except ValueError:
        raise ValueError(f"unknown lookback preset {preset!r}") from None


class TouchpointEvent(NamedTuple):
    user_id: str
    t_day: int
    code: int


@dataclass(frozen=True)
class UserRecord:
    """One user's touchpoint stream, stored column-wise.

    ``days`` and ``codes`` are parallel arrays sorted by day. Buyers carry the
    day of their first purchase; nothing after it may be present.
    """

    user_id: str
    days: np.ndarray
    codes: np.ndarray
    purchase_day: int | None = None

    def __post_init__(self):
        days = np.asarray(self.days, dtype=np.int64)
        codes = np.asarray(self.codes, dtype=np.int64)
        if days.shape != codes.shape or days.ndim != 1:
            raise ValidationError(f"user {self.user_id}: days and codes must be equal-length 1-d arrays")
        if days.size:
            if days.min() < 0:
                raise ValidationError(f"user {self.user_id}: negative day")
            if codes.min() < 1 or codes.max() > N_CODES:
                raise ValidationError(f"user {self.user_id}: code out of range")
            if np.any(np.diff(days) < 0):
                order = np.argsort(days, kind="stable")
                days, codes = days[order], codes[order]
            if self.purchase_day is not None and days[-1] > self.purchase_day:
                raise ValidationError(f"user {self.user_id}: events after purchase day {self.purchase_day}")
        days.flags.writeable = False
        codes.flags.writeable = False
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "codes", codes)

    @property
    def y(self) -> int:
        return int(self.purchase_day is not None)

    @property
    def events(self) -> list[TouchpointEvent]:
        return [TouchpointEvent(self.user_id, int(d), int(c)) for d, c in zip(self.days, self.codes)]

    def __len__(self) -> int:
        return int(self.days.size)

    def window_counts(self, start: int, end: int) -> np.ndarray:
        """Touchpoint counts over the closed day range ``[start, end]``."""
        lo = np.searchsorted(self.days, start, side="left")
        hi = np.searchsorted(self.days, end, side="right")
        return np.bincount(self.codes[lo:hi] - 1, minlength=N_CODES)


@dataclass(frozen=True)
class Dataset:
    """Aggregated ``(x, y)`` pairs for a single lookback length.

    ``X`` is an ``(n, 31)`` integer count matrix, ``y`` the 0/1 labels and
    ``user_ids`` the owning users, all row-aligned.
    """

    X: np.ndarray
    y: np.ndarray
    user_ids: tuple[str, ...]
    lookback_days: int

    def __post_init__(self):
        X = np.asarray(self.X)
        y = np.asarray(self.y, dtype=np.int8)
        if X.ndim != 2 or X.shape[1] != N_CODES:
            raise ValidationError(f"dataset rows must have {N_CODES} counts, got shape {X.shape}")
        if y.shape != (X.shape[0],) or len(self.user_ids) != X.shape[0]:
            raise ValidationError("X, y and user_ids must be row-aligned")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def pairs(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.y[i])) for i in range(len(self))]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            X=self.X[idx].copy(),
            y=self.y[idx].copy(),
            user_ids=tuple(self.user_ids[i] for i in idx),
            lookback_days=self.lookback_days,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")


# ----------------------------------------------------------------------------
# loading


def _line_of(row_index: int) -> int:
    # header is line 1
    return int(row_index) + 2


def _read_int_table(path: Path, columns: list[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        # pandas reports "Expected 3 fields in line 5, saw 4"
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
        raise ParseError("wrong number of fields", line=line, path=str(path)) from exc
    except pd.errors.EmptyDataError:
        raise ParseError("empty file", path=str(path)) from None
    if list(frame.columns) != columns:
        raise ParseError(f"expected header {','.join(columns)}, got {','.join(frame.columns)}", line=1, path=str(path))
    missing = (frame == "").any(axis=1).to_numpy()
    if missing.any():
        i = int(np.flatnonzero(missing)[0])
        raise ParseError("wrong number of fields", line=_line_of(i), path=str(path))
    for col in columns[1:]:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna().to_numpy() | (values.to_numpy(dtype=float) % 1 != 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ParseError(f"non-integer {col} {frame[col].iloc[i]!r}", line=_line_of(i), path=str(path))
        frame[col] = values.astype(np.int64)
    return frame


def load_events(path: str | Path) -> list[UserRecord]:
    """Load ``events.csv`` and ``purchases.csv`` into one record per user.

    ``path`` is either a directory holding both files or the events file
    itself, in which case ``purchases.csv`` is looked up next to it. Events on
    or before a buyer's purchase day are kept; later ones are dropped.
    """
    path = Path(path)
    if path.is_dir():
        events_path, purchases_path = path / "events.csv", path / "purchases.csv"
    else:
        events_path, purchases_path = path, path.with_name("purchases.csv")

    events = _read_int_table(events_path, ["user_id", "t_day", "code"])
    bad = (events["code"] < 1) | (events["code"] > N_CODES)
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"code out of range: {events['code'].iloc[i]}", line=_line_of(i), path=str(events_path))
    bad = events["t_day"] < 0
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"negative day: {events['t_day'].iloc[i]}", line=_line_of(i), path=str(events_path))

    purchase_day: dict[str, int] = {}
    if purchases_path.exists():
        purchases = _read_int_table(purchases_path, ["user_id", "t_day"])
        bad = purchases["t_day"] < 0
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError("negative day", line=_line_of(i), path=str(purchases_path))
        dup = purchases["user_id"].duplicated()
        if dup.any():
            user = purchases["user_id"][dup].iloc[0]
            raise ValidationError(f"duplicate purchase rows for user {user}")
        purchase_day = dict(zip(purchases["user_id"], purchases["t_day"].astype(int)))

    events = events.sort_values(["user_id", "t_day"], kind="stable")
    users = events["user_id"].to_numpy()
    days = events["t_day"].to_numpy(dtype=np.int64)
    codes = events["code"].to_numpy(dtype=np.int64)

    records: dict[str, UserRecord] = {}
    if users.size:
        starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
        ends = np.r_[starts[1:], users.size]
        for lo, hi in zip(starts, ends):
            uid = str(users[lo])
            d, c = days[lo:hi], codes[lo:hi]
            p = purchase_day.get(uid)
            if p is not None:
                keep = d <= p
                d, c = d[keep], c[keep]
            records[uid] = UserRecord(uid, d, c, p)
    for uid, p in purchase_day.items():
        if uid not in records:
            records[uid] = UserRecord(uid, np.empty(0, np.int64), np.empty(0, np.int64), p)
    logger.info("loaded %d users, %d events from %s", len(records), len(events), events_path)
    return [records[uid] for uid in sorted(records)]


def write_events(records: Iterable[UserRecord], directory: str | Path) -> tuple[Path, Path]:
    """Write records as ``events.csv`` / ``purchases.csv`` (inverse of load_events)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = list(records)
    lengths = np.array([len(r) for r in records], dtype=np.int64)
    uids = np.repeat(np.array([r.user_id for r in records], dtype=object), lengths)
    days = np.concatenate([r.days for r in records]) if records else np.empty(0, np.int64)
    codes = np.concatenate([r.codes for r in records]) if records else np.empty(0, np.int64)
    events_path = directory / "events.csv"
    pd.DataFrame({"user_id": uids, "t_day": days, "code": codes}).to_csv(events_path, index=False)
    buyers = [r for r in records if r.purchase_day is not None]
    purchases_path = directory / "purchases.csv"
    pd.DataFrame(
        {"user_id": [r.user_id for r in buyers], "t_day": [r.purchase_day for r in buyers]},
        columns=["user_id", "t_day"],
    ).to_csv(purchases_path, index=False)
    return events_path, purchases_path


# ----------------------------------------------------------------------------
# lookback pairs


def _user_rng(seed: int, user_id: str) -> np.random.Generator:
    digest = hashlib.sha256(user_id.encode("utf-8")).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "little")])


def window_for(record: UserRecord, T: int, horizon_days: int, seed: int) -> tuple[int, int]:
    """Closed window ``[start, end]`` used for ``record`` at lookback ``T``.

    Buyers end at their purchase day. Non-buyers start uniformly in
    ``[0, horizon - T]``, drawn from a generator keyed on ``(seed, user_id)``.
    """
    if record.purchase_day is not None:
        return record.purchase_day - T, record.purchase_day
    start = int(_user_rng(seed, record.user_id).integers(0, horizon_days - T, endpoint=True))
    return start, start + T


def build_pairs(
    records: Sequence[UserRecord],
    T: int,
    seed: int = 0,
    horizon_days: int = DEFAULT_HORIZON_DAYS,
) -> Dataset:
    """Aggregate each user's touchpoints over their lookback window.

    Users whose window holds no touchpoint at all are left out.
    """
    T = int(T)
    if T <= 0:
        raise ValueError(f"lookback must be positive, got {T}")
    if T > horizon_days:
        raise ValueError(f"lookback {T} exceeds horizon {horizon_days}")
    rows, labels, uids = [], [], []
    for rec in records:
        start, end = window_for(rec, T, horizon_days, seed)
        counts = rec.window_counts(start, end)
        if counts.any():
            rows.append(counts)
            labels.append(rec.y)
            uids.append(rec.user_id)
    X = np.vstack(rows).astype(np.int64) if rows else np.zeros((0, N_CODES), np.int64)
    dropped = len(records) - len(rows)
    if dropped:
        logger.debug("lookback %d: dropped %d unmarketed users", T, dropped)
    return Dataset(X=X, y=np.asarray(labels, dtype=np.int8), user_ids=tuple(uids), lookback_days=T)


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/validation/test partition.

    Validation and test sizes are floored; the remainder goes to training.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    # exact rational floor so 0.1 * 70 is 7, not 7.000000000000001 or 6.99...
    n_val = math.floor(Fraction(spec.val_frac).limit_denominator(10**6) * n)
    n_test = math.floor(Fraction(spec.test_frac).limit_denominator(10**6) * n)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = n - n_val - n_test
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train : n_train + n_val]),
        dataset.subset(perm[n_train + n_val :]),
    )


def class_summary(dataset: Dataset | np.ndarray) -> tuple[int, int, float]:
    y = dataset.y if isinstance(dataset, Dataset) else np.asarray(dataset)
    if y.size == 0:
        raise ValueError("class summary of an empty dataset")
    n_pos = int(np.sum(y == 1))
    n_neg = int(y.size - n_pos)
    return n_pos, n_neg, n_pos / (n_pos + n_neg)


def export_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``dataset.csv``: ``user_id,y,x1,...,x31``."""
    path = Path(path)
    frame = pd.DataFrame(dataset.X, columns=[f"x{c}" for c in TOUCHPOINT_CODES])
    frame.insert(0, "y", dataset.y.astype(int))
    frame.insert(0, "user_id", list(dataset.user_ids))
    frame.to_csv(path, index=False)
    return path


def load_dataset(path: str | Path, lookback: int) -> Dataset:
    frame = pd.read_csv(path, dtype={"user_id": str})
    expected = ["user_id", "y"] + [f"x{c}" for c in TOUCHPOINT_CODES]
    if list(frame.columns) != expected:
        raise ParseError("unexpected dataset header", line=1, path=str(path))
    return Dataset(
        X=frame[expected[2:]].to_numpy(dtype=np.int64),
        y=frame["y"].to_numpy(dtype=np.int8),
        user_ids=tuple(frame["user_id"]),
        lookback_days=lookback,
    )
