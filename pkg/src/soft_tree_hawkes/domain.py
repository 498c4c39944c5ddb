"""Core value types: events, event sequences, spatial regions and history windows."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class Event(NamedTuple):
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class SpatialRegion:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError(f"degenerate region {self}")

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_lo + self.x_hi), 0.5 * (self.y_lo + self.y_hi)

    def contains(self, locs: np.ndarray) -> np.ndarray:
        locs = np.atleast_2d(locs)
        return ((locs[:, 0] >= self.x_lo) & (locs[:, 0] <= self.x_hi)
                & (locs[:, 1] >= self.y_lo) & (locs[:, 1] <= self.y_hi))


@dataclass(frozen=True)
class HistoryWindow:
    nu: float
    t: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("history window must be positive")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Time-ordered events observed in ``region`` over ``[t_start, t_end]``.

    Events are stored column-wise (``times``, ``locs``) for the numerical
    code; iterating yields :class:`Event` tuples. Ties in time are allowed
    and keep their input order. When the observation window is not given
    it defaults to the span of the events.
    """

    times: np.ndarray
    locs: np.ndarray
    region: SpatialRegion
    t_start: float = field(default=None)
    t_end: float = field(default=None)

    def __post_init__(self):
        times = _frozen(np.asarray(self.times, dtype=float).reshape(-1))
        locs = _frozen(np.asarray(self.locs, dtype=float).reshape(-1, 2))
        if len(times) != len(locs):
            raise ValueError("times and locations differ in length")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(locs)):
            raise ValueError("non-finite event coordinates")
        if np.any(np.diff(times) < 0):
            raise ValueError("event times must be nondecreasing")
        if len(locs) and not np.all(self.region.contains(locs)):
            raise ValueError("event outside region")
        t_start = self.t_start if self.t_start is not None else (float(times[0]) if len(times) else 0.0)
        t_end = self.t_end if self.t_end is not None else (float(times[-1]) if len(times) else t_start)
        if t_end < t_start or (len(times) and (times[0] < t_start or times[-1] > t_end)):
            raise ValueError("events fall outside the observation window")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "t_start", float(t_start))
        object.__setattr__(self, "t_end", float(t_end))

    @classmethod
    def from_events(cls, events: Sequence[Event], region: SpatialRegion, **kw) -> "EventSequence":
        arr = np.array([tuple(e) for e in events], dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1:], region, **kw)

    @classmethod
    def from_unsorted(cls, times, locs, region: SpatialRegion, **kw) -> "EventSequence":
        times = np.asarray(times, dtype=float)
        order = np.argsort(times, kind="stable")
        return cls(times[order], np.asarray(locs, dtype=float).reshape(-1, 2)[order], region, **kw)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[Event]:
        for t, (x, y) in zip(self.times, self.locs):
            yield Event(float(t), float(x), float(y))

    def __getitem__(self, i) -> Event:
        return Event(float(self.times[i]), float(self.locs[i, 0]), float(self.locs[i, 1]))

    @property
    def events(self) -> list[Event]:
        return list(self)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def before(self, t: float, inclusive: bool = False) -> "EventSequence":
        """Prefix of events with time < t (or <= t)."""
        n = np.searchsorted(self.times, t, side="right" if inclusive else "left")
        return EventSequence(self.times[:n], self.locs[:n], self.region,
                             t_start=min(self.t_start, t), t_end=max(t, self.t_start))

    def slice(self, i: int, j: int, t_start=None, t_end=None) -> "EventSequence":
        return EventSequence(self.times[i:j], self.locs[i:j], self.region, t_start=t_start, t_end=t_end)


def history(seq: EventSequence, t: float, nu: float) -> list[Event]:
    """Events with time in the half-open window ``[t - nu, t)``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    lo = np.searchsorted(seq.times, t - nu, side="left")
    hi = np.searchsorted(seq.times, t, side="left")
    return [seq[i] for i in range(lo, hi)]
