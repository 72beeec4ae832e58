"""Per-user contagion risk and deterministic risk rankings.

The score of a user with time allocation ``T`` over regions, given regional
infected fractions ``i`` and susceptible fractions ``s``, is

    sum over all ordered region pairs (l, m) of T[l] * T[m] * i[l] * s[m]

which factorises to ``(T . i) * (T . s)``. Constant factors (the transmission
rate and the symmetrisation factor) are dropped: they do not change rankings.

Passing ``diagonal=False`` restricts the sum to pairs of distinct regions,
``(T . i)(T . s) - sum_l T[l]^2 i[l] s[l]``, which scores only the coupling
between different regions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .traces import MobilityProfile, ProfileSet


class RegistryMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RegionState:
    """Infected and susceptible fraction of each region on a given day."""

    infected: np.ndarray
    susceptible: np.ndarray
    day: int = 0
    registry: tuple[str, ...] | None = None

    def __post_init__(self):
        i = np.asarray(self.infected, dtype=np.float64)
        s = np.asarray(self.susceptible, dtype=np.float64)
        if i.ndim != 1 or i.shape != s.shape:
            raise ValueError("infected and susceptible must be 1-D and of equal length")
        if (i < 0).any() or (s < 0).any():
            raise ValueError("fractions must be non-negative")
        if (i + s > 1 + 1e-12).any():
            raise ValueError("infected + susceptible exceeds 1 in some region")
        if self.registry is not None and len(self.registry) != len(i):
            raise ValueError("registry length differs from state length")
        object.__setattr__(self, "infected", i)
        object.__setattr__(self, "susceptible", s)

    @classmethod
    def from_counts(cls, infected, susceptible, occupancy, day: int = 0, registry=None):
        """Fractions from per-region counts; empty regions get zero fractions."""
        occupancy = np.asarray(occupancy, dtype=np.float64)
        safe = np.where(occupancy > 0, occupancy, 1.0)
        i = np.where(occupancy > 0, np.asarray(infected) / safe, 0.0)
        s = np.where(occupancy > 0, np.asarray(susceptible) / safe, 0.0)
        return cls(i, s, day, registry)

    def __len__(self) -> int:
        return len(self.infected)


@dataclass(frozen=True)
class RiskScore:
    user: str
    score: float
    day: int


@dataclass(frozen=True, eq=False)
class RiskRanking:
    """Users in descending score order; ties ordered by user-registry index."""

    users: tuple[str, ...]
    scores: np.ndarray
    day: int = 0

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self):
        return iter(zip(self.users, self.scores.tolist()))

    def top(self, k: int) -> tuple[str, ...]:
        return self.users[: max(0, k)]


def _check(profile: MobilityProfile, state: RegionState) -> None:
    if len(profile.allocation) != len(state):
        raise RegistryMismatchError(
            f"profile has {len(profile.allocation)} regions, state has {len(state)}"
        )
    if state.registry is not None and tuple(profile.registry) != tuple(state.registry):
        raise RegistryMismatchError("profile and state use different region registries")


def risk_scores(
    allocation: np.ndarray,
    infected: np.ndarray,
    susceptible: np.ndarray,
    diagonal: bool = True,
) -> np.ndarray:
    """Vectorised score for a (users x regions) allocation matrix."""
    allocation = np.asarray(allocation, dtype=np.float64)
    scores = (allocation @ infected) * (allocation @ susceptible)
    if not diagonal:
        scores = np.maximum(scores - (allocation * allocation) @ (infected * susceptible), 0.0)
    return scores


def risk_score(profile: MobilityProfile, state: RegionState, diagonal: bool = True) -> RiskScore:
    _check(profile, state)
    t = profile.allocation
    score = float(np.dot(t, state.infected) * np.dot(t, state.susceptible))
    if not diagonal:
        score = max(score - float(np.dot(t * t, state.infected * state.susceptible)), 0.0)
    return RiskScore(profile.user, score, state.day)


def risk_score_bruteforce(
    profile: MobilityProfile, state: RegionState, diagonal: bool = True
) -> RiskScore:
    """Literal double sum over ordered region pairs. Reference for tests."""
    _check(profile, state)
    t = profile.allocation.tolist()
    i = state.infected.tolist()
    s = state.susceptible.tolist()
    total = 0.0
    for a in range(len(t)):
        for b in range(len(t)):
            if a == b and not diagonal:
                continue
            total += t[a] * t[b] * i[a] * s[b]
    return RiskScore(profile.user, total, state.day)


def order_by_score(scores: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Permutation sorting by descending score, then ascending ``index``."""
    return np.lexsort((index, -np.asarray(scores)))


def rank_users(
    profiles: ProfileSet,
    state: RegionState,
    eligible: Iterable[str] | None = None,
    diagonal: bool = True,
) -> RiskRanking:
    """Rank ``eligible`` users (default: all profiled users) by risk score.

    Raises ``KeyError`` if an eligible user has no profile.
    """
    if profiles.matrix.shape[1] != len(state):
        raise RegistryMismatchError(
            f"profiles have {profiles.matrix.shape[1]} regions, state has {len(state)}"
        )
    if state.registry is not None and tuple(profiles.registry) != tuple(state.registry):
        raise RegistryMismatchError("profiles and state use different region registries")
    if eligible is None:
        rows = np.arange(len(profiles))
    else:
        eligible = list(eligible)
        missing = [u for u in eligible if u not in profiles]
        if missing:
            raise KeyError(f"eligible users without profile: {missing[:5]}")
        rows = np.array(sorted({profiles.row_of(u) for u in eligible}), dtype=np.int64)
    scores = risk_scores(profiles.matrix[rows], state.infected, state.susceptible, diagonal)
    # Profile rows follow the user registry, so row order is registry order.
    reg_index = profiles.users[rows]
    order = order_by_score(scores, reg_index)
    users = tuple(profiles.user_ids[r] for r in rows[order])
    return RiskRanking(users, scores[order], state.day)


def scores_table(ranking: RiskRanking) -> str:
    """Ranking as CSV ``rank,user_id,score`` with 12 significant digits."""
    lines = ["rank,user_id,score"]
    for k, (u, s) in enumerate(ranking, start=1):
        lines.append(f"{k},{u},{s:.12g}")
    return "\n".join(lines) + "\n"


def profiles_from_rows(
    rows: Sequence[tuple[str, str, float]], registry: Sequence[str] | None = None
) -> ProfileSet:
    """Build a ProfileSet from ``(user_id, region_id, fraction)`` triples."""
    users = sorted({u for u, _, _ in rows})
    if registry is None:
        registry = sorted({r for _, r, _ in rows})
    registry = tuple(registry)
    rlookup = {r: j for j, r in enumerate(registry)}
    ulookup = {u: j for j, u in enumerate(users)}
    matrix = np.zeros((len(users), len(registry)))
    for u, r, f in rows:
        if r not in rlookup:
            raise RegistryMismatchError(f"unknown region {r!r}")
        matrix[ulookup[u], rlookup[r]] += f
    return ProfileSet(
        user_ids=tuple(users),
        users=np.arange(len(users)),
        matrix=matrix,
        registry=registry,
        excluded=np.zeros(0, dtype=np.int64),
    )
