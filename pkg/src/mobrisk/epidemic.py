"""Stochastic SEIR metapopulation engine driven by individual daily locations.

Each simulated individual has a compartment, a current region and an optional
quarantine pin. A day consists of, in order:

1. movement: free individuals move to their region for the new day,
   quarantined individuals stay at their pin;
2. occupancy tally;
3. disease transitions, one Bernoulli draw per individual and sub-step with
   exponential discretisation (S->E at 1 - exp(-lambda dt), E->I at
   1 - exp(-k dt), I->R at 1 - exp(-gamma dt));
4. the policy hook;
5. recording of tallies.

A deterministic RK4 integrator of the mean-field equations is provided as an
oracle for the stochastic engine.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from enum import IntEnum
from typing import IO, Callable, Optional, Sequence

import numpy as np

#: Basic reproduction number as tabulated alongside the default parameters.
TABULATED_R0 = 2.53

#: Sub-steps per simulated day for the disease transitions. Movement and
#: policies still act once per day.
STEPS_PER_DAY = 2

SERIES_HEADER = ["day", "S", "E", "I", "R", "cum_infected", "quarantined"]
REGION_HEADER = ["day", "region_id", "S", "E", "I", "R"]


class Compartment(IntEnum):
    S = 0
    E = 1
    I = 2
    R = 3


class SeedingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DiseaseParams:
    """Per-day rates of the SEIR model.

    ``k`` is the incubation rate (inverse mean incubation period) and
    ``gamma`` the removal rate (inverse mean infectious period).
    """

    beta: float = 0.45
    k: float = 1 / 5.3
    gamma: float = 1 / 5.61

    def __post_init__(self):
        for name in ("beta", "k", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a positive finite rate, got {value}")

    @classmethod
    def from_durations(cls, beta=0.45, incubation_days=5.3, infectious_days=5.61):
        return cls(beta=beta, k=1.0 / incubation_days, gamma=1.0 / infectious_days)

    @property
    def r0(self) -> float:
        return self.beta / self.gamma

    @property
    def incubation_days(self) -> float:
        return 1.0 / self.k

    @property
    def infectious_days(self) -> float:
        return 1.0 / self.gamma


def force_of_infection(infected, occupancy, beta: float) -> np.ndarray:
    """Per-region rate beta * I_l / N_l, zero for empty regions."""
    infected = np.asarray(infected, dtype=np.float64)
    occupancy = np.asarray(occupancy, dtype=np.float64)
    out = np.zeros(np.broadcast(infected, occupancy).shape)
    np.divide(beta * infected, occupancy, out=out, where=occupancy > 0)
    return out


class SimulationState:
    """Mutable state of one simulation run.

    Per-individual arrays are indexed by user-registry index. Region tallies
    are always recomputed from the individual arrays, so they cannot drift.
    """

    def __init__(
        self,
        locations: np.ndarray,
        n_regions: int,
        rng: np.random.Generator | int | None = None,
        users: Sequence[str] | None = None,
        regions: Sequence[str] | None = None,
        day: int = 0,
    ):
        loc = np.array(locations, dtype=np.int64)
        if loc.ndim != 1:
            raise ValueError("locations must be 1-D")
        if (loc < 0).any() or (loc >= n_regions).any():
            raise ValueError("every individual needs a valid initial region")
        self.n_regions = int(n_regions)
        self.loc = loc
        self.comp = np.zeros(len(loc), dtype=np.int8)
        self.quarantined = np.zeros(len(loc), dtype=bool)
        self.pin = np.full(len(loc), -1, dtype=np.int64)
        self.quarantine_day = np.full(len(loc), -1, dtype=np.int32)
        self.day = day
        self.cum_infected = 0
        self.missing_locations = 0
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.users = tuple(users) if users is not None else None
        self.regions = tuple(regions) if regions is not None else None

    @property
    def n(self) -> int:
        return len(self.loc)

    def tallies(self) -> np.ndarray:
        """``(n_regions, 4)`` counts of S, E, I, R by current region."""
        flat = np.bincount(self.loc * 4 + self.comp, minlength=self.n_regions * 4)
        return flat.reshape(self.n_regions, 4)

    def totals(self) -> np.ndarray:
        return np.array([np.count_nonzero(self.comp == c) for c in range(4)], dtype=np.int64)

    def occupancy(self) -> np.ndarray:
        return np.bincount(self.loc, minlength=self.n_regions)

    @property
    def n_quarantined(self) -> int:
        return int(self.quarantined.sum())

    def region_index(self, region) -> int:
        if isinstance(region, (int, np.integer)):
            if not 0 <= region < self.n_regions:
                raise ValueError(f"region index {region} out of range")
            return int(region)
        if self.regions is None:
            raise ValueError("state has no region registry")
        return self.regions.index(region)

    def check(self) -> None:
        """Assert the structural invariants of the state."""
        tallies = self.tallies()
        assert tallies.sum() == self.n
        assert (self.comp >= 0).all() and (self.comp <= 3).all()
        q = self.quarantined
        assert (self.loc[q] == self.pin[q]).all(), "quarantined individual left its pin"
        totals = self.totals()
        assert self.cum_infected == totals[Compartment.I] + totals[Compartment.R]


def seed_outbreak(
    state: SimulationState,
    region,
    n_cases: int,
    rng: np.random.Generator | None = None,
) -> SimulationState:
    """Put ``n_cases`` random occupants of ``region`` into compartment I.

    Fewer occupants than requested clamps the count and emits a
    :class:`SeedingWarning`. Draws come from ``rng`` (default: the run's
    stream), which lets several runs share one seeding.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    r = state.region_index(region)
    occupants = np.flatnonzero((state.loc == r) & (state.comp == Compartment.S))
    if len(occupants) == 0:
        raise ValueError(f"region {region!r} has no occupants to seed")
    if len(occupants) < n_cases:
        warnings.warn(
            f"region {region!r} has only {len(occupants)} occupants; seeding {len(occupants)} "
            f"of {n_cases} cases",
            SeedingWarning,
            stacklevel=2,
        )
    count = min(n_cases, len(occupants))
    rng = state.rng if rng is None else rng
    chosen = rng.choice(occupants, size=count, replace=False)
    state.comp[chosen] = Compartment.I
    state.cum_infected += count
    return state


def _transitions(state: SimulationState, params: DiseaseParams, substeps: int) -> None:
    dt = 1.0 / substeps
    m = state.n_regions
    comp = state.comp
    occupancy = state.occupancy()
    base = state.loc * 4
    # prob[4 * region + compartment]; R never leaves.
    prob = np.zeros((m, 4))
    prob[:, Compartment.E] = -np.expm1(-params.k * dt)
    prob[:, Compartment.I] = -np.expm1(-params.gamma * dt)
    prob = prob.ravel()
    for _ in range(substeps):
        key = base + comp
        tallies = np.bincount(key, minlength=4 * m).reshape(m, 4)
        if not tallies[:, Compartment.E].any() and not tallies[:, Compartment.I].any():
            return
        lam = force_of_infection(tallies[:, Compartment.I], occupancy, params.beta)
        prob[Compartment.S :: 4] = -np.expm1(-lam * dt)
        # One uniform per individual, consumed in registry order.
        hit = np.flatnonzero(state.rng.random(len(comp)) < prob[key])
        comp[hit] += 1
        state.cum_infected += int(np.count_nonzero(comp[hit] == Compartment.I))


Policy = Callable[[SimulationState, DiseaseParams], None]


def step_day(
    state: SimulationState,
    locations: np.ndarray,
    params: DiseaseParams,
    policy: Optional[Policy] = None,
    substeps: int = STEPS_PER_DAY,
) -> SimulationState:
    """Advance ``state`` by one day; ``locations`` are the new day's regions.

    Negative entries in ``locations`` mean "unknown": the individual stays
    where it is and ``state.missing_locations`` is incremented.
    """
    locations = np.asarray(locations)
    if locations.shape != state.loc.shape:
        raise ValueError("locations must have one entry per individual")
    free = ~state.quarantined
    known = locations >= 0
    state.missing_locations += int((free & ~known).sum())
    move = free & known
    state.loc[move] = locations[move]
    state.day += 1
    _transitions(state, params, substeps)
    if policy is not None:
        policy(state, params)
    return state


@dataclass(eq=False)
class EpidemicSeries:
    """Daily global tallies (day 0 included) and optional per-region tallies."""

    S: np.ndarray
    E: np.ndarray
    I: np.ndarray
    R: np.ndarray
    cum_infected: np.ndarray
    quarantined: np.ndarray
    region_counts: np.ndarray | None = None
    regions: tuple[str, ...] | None = None
    first_day: int = 0

    def __len__(self) -> int:
        return len(self.S)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.first_day, self.first_day + len(self.S))

    @property
    def population(self) -> int:
        return int(self.S[0] + self.E[0] + self.I[0] + self.R[0])

    def to_csv(self, stream: IO[str]) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        cols = (self.days, self.S, self.E, self.I, self.R, self.cum_infected, self.quarantined)
        for row in zip(*(c.tolist() for c in cols)):
            w.writerow(row)

    def regions_to_csv(self, stream: IO[str]) -> None:
        if self.region_counts is None:
            raise ValueError("series has no per-region tallies")
        names = self.regions or tuple(str(j) for j in range(self.region_counts.shape[1]))
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(REGION_HEADER)
        for d, counts in zip(self.days.tolist(), self.region_counts.tolist()):
            for name, row in zip(names, counts):
                w.writerow([d, name, *row])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, stream: IO[str], regions_stream: IO[str] | None = None) -> "EpidemicSeries":
        reader = csv.reader(stream)
        header = next(reader)
        if header != SERIES_HEADER:
            raise ValueError(f"unexpected series header {header}")
        data = np.array([[int(x) for x in row] for row in reader], dtype=np.int64).reshape(-1, 7)
        region_counts = regions = None
        if regions_stream is not None:
            region_counts, regions = read_region_series(regions_stream)
        return cls(
            S=data[:, 1], E=data[:, 2], I=data[:, 3], R=data[:, 4],
            cum_infected=data[:, 5], quarantined=data[:, 6],
            region_counts=region_counts, regions=regions,
            first_day=int(data[0, 0]) if len(data) else 0,
        )


def read_region_series(stream: IO[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    reader = csv.reader(stream)
    header = next(reader)
    if header != REGION_HEADER:
        raise ValueError(f"unexpected region series header {header}")
    rows = list(reader)
    regions: list[str] = []
    for row in rows:
        if row[1] in regions:
            break
        regions.append(row[1])
    counts = np.array([[int(x) for x in row[2:]] for row in rows], dtype=np.int64)
    return counts.reshape(-1, len(regions), 4), tuple(regions)


def run(
    state: SimulationState,
    locations: np.ndarray,
    days: int,
    params: DiseaseParams,
    policy: Optional[Policy] = None,
    substeps: int = STEPS_PER_DAY,
    record_regions: bool = False,
    validate: bool = False,
) -> EpidemicSeries:
    """Apply :func:`step_day` ``days`` times.

    ``locations[d]`` holds every individual's region on simulation day ``d``;
    rows ``state.day + 1 .. state.day + days`` are consumed. With
    ``validate=True`` the state invariants are checked after every step.
    """
    if days < 0:
        raise ValueError("days must be >= 0")
    if state.day + days >= len(locations):
        raise ValueError(
            f"locations cover days up to {len(locations) - 1}, "
            f"run needs day {state.day + days}"
        )
    n_rec = days + 1
    totals = np.zeros((n_rec, 4), dtype=np.int64)
    cum = np.zeros(n_rec, dtype=np.int64)
    quarantined = np.zeros(n_rec, dtype=np.int64)
    region_counts = (
        np.zeros((n_rec, state.n_regions, 4), dtype=np.int64) if record_regions else None
    )
    first_day = state.day

    def record(j: int) -> None:
        totals[j] = state.totals()
        cum[j] = state.cum_infected
        quarantined[j] = state.n_quarantined
        if region_counts is not None:
            region_counts[j] = state.tallies()

    if validate:
        state.check()
    record(0)
    for j in range(1, n_rec):
        was_q = state.quarantined.copy() if validate else None
        pins = state.pin.copy() if validate else None
        step_day(state, locations[state.day + 1], params, policy, substeps)
        record(j)
        if validate:
            state.check()
            assert (state.loc[was_q] == pins[was_q]).all()
            assert cum[j] >= cum[j - 1] and totals[j, 3] >= totals[j - 1, 3]
            assert totals[j].sum() == state.n
    return EpidemicSeries(
        S=totals[:, 0], E=totals[:, 1], I=totals[:, 2], R=totals[:, 3],
        cum_infected=cum, quarantined=quarantined,
        region_counts=region_counts, regions=state.regions, first_day=first_day,
    )


# ---------------------------------------------------------------------------
# Mean-field oracle


@dataclass(frozen=True, eq=False)
class MeanFieldSolution:
    t: np.ndarray
    s: np.ndarray
    e: np.ndarray
    i: np.ndarray
    r: np.ndarray

    def daily(self) -> "MeanFieldSolution":
        """Sub-sample at integer days."""
        idx = np.flatnonzero(np.isclose(self.t, np.round(self.t), atol=1e-9))
        return MeanFieldSolution(self.t[idx], self.s[idx], self.e[idx], self.i[idx], self.r[idx])


def _seir_rhs(y: np.ndarray, params: DiseaseParams) -> np.ndarray:
    s, e, i, _ = y
    infection = params.beta * s * i
    return np.array(
        [-infection, infection - params.k * e, params.k * e - params.gamma * i, params.gamma * i]
    )


def integrate_ode(
    params: DiseaseParams,
    initial: Sequence[float],
    days: float,
    dt: float = 0.01,
) -> MeanFieldSolution:
    """Fixed-step RK4 solution of the SEIR equations in population fractions."""
    y = np.asarray(initial, dtype=np.float64)
    if y.shape != (4,) or (y < 0).any():
        raise ValueError("initial must be four non-negative fractions (s, e, i, r)")
    if abs(y.sum() - 1.0) > 1e-9:
        raise ValueError("initial fractions must sum to 1")
    if not 0 < dt <= 0.1:
        raise ValueError("dt must be in (0, 0.1]")
    n_steps = int(round(days / dt))
    if not np.isclose(n_steps * dt, days):
        raise ValueError("days must be a multiple of dt")
    out = np.empty((n_steps + 1, 4))
    out[0] = y
    for j in range(n_steps):
        k1 = _seir_rhs(y, params)
        k2 = _seir_rhs(y + 0.5 * dt * k1, params)
        k3 = _seir_rhs(y + 0.5 * dt * k2, params)
        k4 = _seir_rhs(y + dt * k3, params)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j + 1] = y
    t = np.arange(n_steps + 1) * dt
    return MeanFieldSolution(t, out[:, 0], out[:, 1], out[:, 2], out[:, 3])
