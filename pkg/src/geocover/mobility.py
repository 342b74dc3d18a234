"""Mobility traces, per-user profiles (Frequency / Poisson) and ROC scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

DAY = 86400
PERIODS = ("daily", "weekly")


class UndefinedMetric(ValueError):
    pass


def period_index(times, period: str) -> np.ndarray:
    """UTC calendar day, or Monday-based (ISO) week, counted from the epoch."""
    days = np.asarray(times, dtype=np.int64) // DAY
    if period == "daily":
        return days
    if period == "weekly":
        return (days + 3) // 7  # 1970-01-01 was a Thursday
    raise ValueError(f"unknown period {period!r}")


@dataclass(eq=False)
class TraceSet:
    """Time-sorted visit events with a train/test split.

    Users are stored as integer codes into ``user_ids``. Training covers
    ``[start, split)`` and testing covers ``[split, end]``.
    """

    user_ids: list
    user: np.ndarray
    time: np.ndarray
    loc: np.ndarray
    n_locations: int
    period: str = "daily"
    split: int = 0
    start: Optional[int] = None
    end: Optional[int] = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.period not in PERIODS:
            raise ValueError(f"period must be one of {PERIODS}")
        user = np.asarray(self.user, dtype=np.int64)
        time = np.asarray(self.time, dtype=np.int64)
        loc = np.asarray(self.loc, dtype=np.int64)
        if not (len(user) == len(time) == len(loc)):
            raise ValueError("event arrays differ in length")
        if len(time) and time.min() < 0:
            raise ValueError("timestamps must be non-negative")
        if len(loc) and (loc.min() < 0 or loc.max() >= self.n_locations):
            raise ValueError("event location outside the location set")
        order = np.argsort(time, kind="stable")
        self.user, self.time, self.loc = user[order], time[order], loc[order]
        self.user_ids = list(self.user_ids)
        self._index = {u: i for i, u in enumerate(self.user_ids)}
        if len(self._index) != len(self.user_ids):
            raise ValueError("duplicate user ids")
        if self.start is None:
            self.start = int(self.time[0]) if len(self.time) else 0
        if self.end is None:
            self.end = int(self.time[-1]) if len(self.time) else self.split
        if not self.start < self.split:
            raise ValueError("split boundary must come after the start of the trace")

    @classmethod
    def from_records(cls, records, n_locations, period="daily", split=0, start=None, end=None):
        """Build from ``(user, timestamp, loc)`` tuples."""
        ids, codes = {}, []
        times, locs = [], []
        for u, t, l in records:
            codes.append(ids.setdefault(u, len(ids)))
            times.append(int(t))
            locs.append(int(l))
        return cls(list(ids), codes, times, locs, n_locations, period, split, start, end)

    @property
    def n_users(self):
        return len(self.user_ids)

    def code(self, user) -> int:
        try:
            return self._index[user]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None

    @property
    def train_mask(self):
        return (self.time >= self.start) & (self.time < self.split)

    @property
    def test_mask(self):
        return (self.time >= self.split) & (self.time <= self.end)

    @property
    def n_train_periods(self) -> int:
        first = period_index([self.start], self.period)[0]
        last = period_index([self.split - 1], self.period)[0]
        return int(last - first + 1)

    def _train_counts(self):
        """(users x locations) total visits and distinct visited periods."""
        m = self.train_mask
        u, l = self.user[m], self.loc[m]
        p = period_index(self.time[m], self.period)
        shape = (self.n_users, self.n_locations)
        counts = np.zeros(shape)
        np.add.at(counts, (u, l), 1)
        periods = np.zeros(shape)
        if len(u):
            key = np.unique(np.column_stack([u, l, p]), axis=0)
            np.add.at(periods, (key[:, 0], key[:, 1]), 1)
        return counts, periods

    def test_visits(self) -> np.ndarray:
        """Boolean (users x locations): visited at least once in the test window."""
        m = self.test_mask
        out = np.zeros((self.n_users, self.n_locations), dtype=bool)
        out[self.user[m], self.loc[m]] = True
        return out

    def has_training_data(self) -> np.ndarray:
        out = np.zeros(self.n_users, dtype=bool)
        out[self.user[self.train_mask]] = True
        return out


@dataclass
class MobilityProfile:
    user: object
    probs: np.ndarray  # indexed by location id

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("profile probabilities must lie in [0, 1]")


def profile_matrix(traces: TraceSet, method: str = "poisson") -> np.ndarray:
    """Visit probability for every (user, location), users in ``user_ids`` order."""
    counts, periods = traces._train_counts()
    n = traces.n_train_periods
    if method == "frequency":
        return periods / n
    if method == "poisson":
        return -np.expm1(-counts / n)
    raise ValueError(f"unknown profiling method {method!r}")


def _profile(traces: TraceSet, user, method):
    code = traces.code(user)
    mask = traces.train_mask & (traces.user == code)
    if not mask.any():
        raise KeyError(f"user {user!r} has no training data")
    n = traces.n_train_periods
    locs = traces.loc[mask]
    if method == "frequency":
        periods = period_index(traces.time[mask], traces.period)
        pairs = np.unique(np.column_stack([locs, periods]), axis=0)
        probs = np.bincount(pairs[:, 0], minlength=traces.n_locations) / n
    else:
        lam = np.bincount(locs, minlength=traces.n_locations) / n
        probs = -np.expm1(-lam)
    return MobilityProfile(user, probs)


def profile_frequency(traces: TraceSet, user) -> MobilityProfile:
    """Share of training periods in which the user visited each location."""
    return _profile(traces, user, "frequency")


def profile_poisson(traces: TraceSet, user) -> MobilityProfile:
    """``1 - exp(-lambda)``, lambda being the mean visits per training period."""
    return _profile(traces, user, "poisson")


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def frequent_locations(profile: MobilityProfile, delta: float) -> set:
    _check_delta(delta)
    return {int(l) for l in np.nonzero(profile.probs > delta)[0]}


def pick_frequent_location(profile: MobilityProfile, delta: float, rng: np.random.Generator) -> Optional[int]:
    """Uniform draw among frequent locations, ``None`` when there are none."""
    _check_delta(delta)
    cands = np.nonzero(profile.probs > delta)[0]
    if len(cands) == 0:
        return None
    return int(cands[rng.integers(len(cands))])


def roc_auc(scores, labels):
    """ROC curve by threshold sweep and trapezoidal AUC (ties count half).

    ``scores`` and ``labels`` are mappings with the same keys, or aligned
    sequences. Returns ``(curve, auc)`` with curve points ``(fpr, tpr)``.
    """
    if isinstance(scores, dict):
        keys = list(scores)
        s = np.array([scores[k] for k in keys], dtype=float)
        y = np.array([labels[k] for k in keys], dtype=int)
    else:
        s = np.asarray(scores, dtype=float).ravel()
        y = np.asarray(labels, dtype=int).ravel()
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetric("ROC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]  # end of each tie block
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def profiling_roc(traces: TraceSet, method: str = "poisson"):
    """ROC of a profiler against test-window visits.

    Pairs are every (user, location) for users with training data; positives
    are the pairs visited during the test window.
    """
    probs = profile_matrix(traces, method)
    active = traces.has_training_data()
    labels = traces.test_visits()[active]
    return roc_auc(probs[active].ravel(), labels.ravel())


def load_traces(path, n_locations: int, split: int, period: str = "daily",
                start: Optional[int] = None, end: Optional[int] = None) -> TraceSet:
    """Read a ``user,timestamp,loc_id`` CSV."""
    path = Path(path)
    recs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user", "timestamp", "loc_id"]:
            raise ValueError(f"{path}:1: expected header 'user,timestamp,loc_id'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                u, t, l = rec[0], int(rec[1]), int(rec[2])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= l < n_locations:
                raise ValueError(f"{path}:{lineno}: location {l} outside 0..{n_locations - 1}")
            recs.append((u, t, l))
    return TraceSet.from_records(recs, n_locations, period, split, start, end)


def save_traces(traces: TraceSet, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "timestamp", "loc_id"])
        ids = traces.user_ids
        for u, t, l in zip(traces.user, traces.time, traces.loc):
            w.writerow([ids[u], int(t), int(l)])
