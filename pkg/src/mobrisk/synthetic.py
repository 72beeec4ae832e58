"""Synthetic mobility traces.

Two generators, both emitting one event per user per day at 00:00:00 UTC, so
that every user's modal region for a day is exactly the region of that day's
event:

* :func:`generate_two_metapop` - two equal metapopulations; a fraction ``f``
  of each travels and picks one of the two regions uniformly every day.
* :func:`generate_heterogeneous` - ``M`` regions; a fraction of users is
  mobile, each mobile user has one destination region and a personal
  away-time fraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Sequence

import numpy as np

from .traces import DAY, TraceSet


def _epoch(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def _ids(prefix: str, n: int) -> tuple[str, ...]:
    width = max(2, len(str(max(n - 1, 0))))
    return tuple(f"{prefix}{j:0{width}d}" for j in range(n))


@dataclass(frozen=True)
class TwoMetapopConfig:
    population: int = 5000
    traveler_fraction: float = 0.1
    days: int = 151
    seed: int = 0
    start: date = date(2013, 1, 1)

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if not 0.0 <= self.traveler_fraction <= 1.0:
            raise ValueError("traveler_fraction must be in [0, 1]")
        if self.days < 1:
            raise ValueError("days must be >= 1")


@dataclass(frozen=True)
class HeterogeneousConfig:
    """Multi-region scenario with heterogeneous individual mobility.

    ``populations`` overrides the equal split of ``total_population`` over
    ``n_regions``. Away-time fractions of mobile users are uniform on
    ``[away_min, away_max]``.
    """

    n_regions: int = 10
    total_population: int = 20000
    populations: tuple[int, ...] | None = None
    mobile_fraction: float = 0.05
    away_min: float = 0.1
    away_max: float = 0.9
    days: int = 61
    seed: int = 0
    start: date = date(2013, 1, 1)

    def __post_init__(self):
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.populations is not None:
            if len(self.populations) != self.n_regions:
                raise ValueError("populations must list one count per region")
            if any(p < 0 for p in self.populations):
                raise ValueError("populations must be >= 0")
        elif self.total_population < 0:
            raise ValueError("total_population must be >= 0")
        for name in ("mobile_fraction", "away_min", "away_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.away_min > self.away_max:
            raise ValueError("away_min exceeds away_max")
        if self.days < 1:
            raise ValueError("days must be >= 1")

    def region_populations(self) -> tuple[int, ...]:
        if self.populations is not None:
            return tuple(int(p) for p in self.populations)
        base, extra = divmod(self.total_population, self.n_regions)
        return tuple(base + (1 if j < extra else 0) for j in range(self.n_regions))


def _daily_traceset(regions, n_users, day_regions: np.ndarray, start: date) -> TraceSet:
    """``day_regions`` has shape (days, users): region of each daily event."""
    n_days = day_regions.shape[0]
    t0 = _epoch(start)
    user = np.tile(np.arange(n_users), n_days)
    time = np.repeat(t0 + DAY * np.arange(n_days, dtype=np.int64), n_users)
    return TraceSet.from_indices(
        regions,
        _ids("u", n_users),
        user,
        time,
        day_regions.ravel(),
        span=(t0, t0 + n_days * DAY),
    )


def generate_two_metapop(config: TwoMetapopConfig) -> TraceSet:
    """Users ``0..N-1`` live in region 0, ``N..2N-1`` in region 1."""
    rng = np.random.default_rng(config.seed)
    n = config.population
    home = np.repeat(np.arange(2), n)
    traveler = rng.random(2 * n) < config.traveler_fraction
    choice = rng.integers(0, 2, size=(config.days, 2 * n))
    day_regions = np.where(traveler, choice, home)
    return _daily_traceset(_ids("r", 2), 2 * n, day_regions, config.start)


def traveler_mask(config: TwoMetapopConfig) -> np.ndarray:
    """Which users the generator made travelers (same draws, no traces)."""
    rng = np.random.default_rng(config.seed)
    return rng.random(2 * config.population) < config.traveler_fraction


def generate_heterogeneous(config: HeterogeneousConfig) -> TraceSet:
    rng = np.random.default_rng(config.seed)
    pops = config.region_populations()
    m = config.n_regions
    n = sum(pops)
    home = np.repeat(np.arange(m), pops)
    mobile = rng.random(n) < config.mobile_fraction
    if m > 1:
        # Uniform over the other regions.
        dest = rng.integers(0, m - 1, size=n)
        dest = dest + (dest >= home)
    else:
        dest = home.copy()
        mobile[:] = False
    away = rng.uniform(config.away_min, config.away_max, size=n)
    away = np.where(mobile, away, 0.0)
    go = rng.random((config.days, n)) < away
    day_regions = np.where(go, dest, home)
    return _daily_traceset(_ids("r", m), n, day_regions, config.start)


def homes(trace: TraceSet) -> np.ndarray:
    """Most frequent region of each user's events (ties: lowest index)."""
    counts = np.zeros((trace.n_users, trace.n_regions), dtype=np.int64)
    np.add.at(counts, (trace.user, trace.region), 1)
    return counts.argmax(axis=1)


def region_names(n: int) -> Sequence[str]:
    return _ids("r", n)
