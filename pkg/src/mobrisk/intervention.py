"""Quarantine policies: none, random and risk-ranked.

Quarantine pins an individual to the region it occupies when selected; it
never changes the individual's disease course. The daily number of people to
quarantine follows the adaptive rate ``beta * i(t)`` applied to the
not-yet-quarantined population, where ``i(t)`` is global prevalence.
Fractional quotas carry over to the next day.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .epidemic import Compartment, DiseaseParams, SimulationState
from .risk import RegionState, order_by_score, risk_scores
from .traces import ProfileSet

logger = logging.getLogger(__name__)

POLICY_KINDS = ("none", "random", "risk")
LOG_HEADER = ["day", "user_id", "region_id", "policy", "score"]

# Guards the floor against accumulated rounding, e.g. 0.4 * 5 summing to 1.9999...
_QUOTA_EPS = 1e-9


class QuarantineError(RuntimeError):
    pass


def daily_quota(state: SimulationState, params: DiseaseParams, carry: float = 0.0) -> tuple[int, float]:
    """Number of people to quarantine today and the carry for tomorrow."""
    prevalence = np.count_nonzero(state.comp == Compartment.I) / state.n
    n_free = state.n - state.n_quarantined
    return quota_from_rate(params.beta * prevalence, n_free, carry)


def quota_from_rate(rate: float, n_free: int, carry: float = 0.0) -> tuple[int, float]:
    raw = rate * n_free + carry
    count = int(np.floor(raw + _QUOTA_EPS))
    return count, max(raw - count, 0.0)


def select_random(eligible: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``min(count, len(eligible))`` indices without replacement."""
    eligible = np.asarray(eligible)
    count = min(max(count, 0), len(eligible))
    if count == 0:
        return eligible[:0]
    return rng.choice(eligible, size=count, replace=False)


def profile_rows(profiles: ProfileSet, n_users: int) -> np.ndarray:
    """Map user-registry index -> profile row (-1 for users without profile)."""
    rows = np.full(n_users, -1, dtype=np.int64)
    rows[profiles.users] = np.arange(len(profiles))
    return rows


def select_by_risk(
    eligible: np.ndarray,
    count: int,
    profiles: ProfileSet,
    state: RegionState,
    rows: np.ndarray | None = None,
    diagonal: bool = True,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Top-``count`` eligible users by risk score.

    ``eligible`` holds user-registry indices. Users without a profile are
    never selected. Returns ``(users, scores, n_unprofiled)``.
    """
    eligible = np.asarray(eligible, dtype=np.int64)
    if rows is None:
        size = max(int(eligible.max(initial=-1)), int(profiles.users.max(initial=-1))) + 1
        rows = profile_rows(profiles, size)
    r = rows[eligible]
    has = r >= 0
    n_unprofiled = int((~has).sum())
    users, r = eligible[has], r[has]
    scores = risk_scores(profiles.matrix[r], state.infected, state.susceptible, diagonal)
    order = order_by_score(scores, users)[: max(count, 0)]
    return users[order], scores[order], n_unprofiled


@dataclass
class QuarantineLog:
    day: list[int] = field(default_factory=list)
    user: list[int] = field(default_factory=list)
    region: list[int] = field(default_factory=list)
    policy: list[str] = field(default_factory=list)
    score: list[float | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.day)

    def to_csv(self, stream: IO[str], users=None, regions=None) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for d, u, r, p, s in zip(self.day, self.user, self.region, self.policy, self.score):
            w.writerow([
                d,
                users[u] if users is not None else u,
                regions[r] if regions is not None else r,
                p,
                "" if s is None else f"{s:.12g}",
            ])


def apply_quarantine(
    state: SimulationState,
    users: Iterable[int],
    kind: str = "risk",
    scores: Iterable[float] | None = None,
    log: QuarantineLog | None = None,
) -> SimulationState:
    """Pin each user to its current region from today on."""
    users = np.asarray(list(users) if not isinstance(users, np.ndarray) else users, dtype=np.int64)
    if len(users) == 0:
        return state
    if state.quarantined[users].any() or len(np.unique(users)) != len(users):
        raise QuarantineError("user selected for quarantine is already quarantined")
    state.quarantined[users] = True
    state.pin[users] = state.loc[users]
    state.quarantine_day[users] = state.day
    if log is not None:
        score_list = [None] * len(users) if scores is None else [float(s) for s in scores]
        order = np.argsort(users, kind="stable")
        for j in order:
            log.day.append(state.day)
            log.user.append(int(users[j]))
            log.region.append(int(state.loc[users[j]]))
            log.policy.append(kind)
            log.score.append(score_list[j])
    return state


class QuarantinePolicy:
    """Daily policy hook for :func:`mobrisk.epidemic.step_day`.

    ``kind="risk"`` needs ``profiles``; individuals are identified by their
    user-registry index, which must match the profiles' ``users`` indices.
    """

    def __init__(
        self, kind: str = "none", profiles: ProfileSet | None = None, diagonal: bool = True
    ):
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {kind!r}")
        if kind == "risk" and profiles is None:
            raise ValueError("risk policy needs profiles")
        self.kind = kind
        self.profiles = profiles
        self.diagonal = diagonal
        self.carry = 0.0
        self.log = QuarantineLog()
        self.quotas: list[tuple[int, int, int]] = []  # (day, quota, selected)
        self.unprofiled_skipped = 0
        self._rows: np.ndarray | None = None

    def __call__(self, state: SimulationState, params: DiseaseParams) -> None:
        if self.kind == "none":
            return
        quota, self.carry = daily_quota(state, params, self.carry)
        free = np.flatnonzero(~state.quarantined)
        if quota == 0:
            chosen, scores = free[:0], None
        elif self.kind == "random":
            chosen, scores = select_random(free, quota, state.rng), None
        else:
            if self._rows is None or len(self._rows) != state.n:
                self._rows = profile_rows(self.profiles, state.n)
            t = state.tallies()
            region_state = RegionState.from_counts(
                t[:, Compartment.I], t[:, Compartment.S], t.sum(axis=1), state.day
            )
            chosen, scores, skipped = select_by_risk(
                free, quota, self.profiles, region_state, self._rows, self.diagonal
            )
            self.unprofiled_skipped += skipped
        apply_quarantine(state, chosen, self.kind, scores, self.log)
        self.quotas.append((state.day, quota, len(chosen)))
        if len(chosen) < quota:
            logger.debug("day %d: quota %d, only %d eligible", state.day, quota, len(chosen))
