"""Experiment configuration, ensemble orchestration and summary metrics."""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .epidemic import (
    STEPS_PER_DAY,
    Compartment,
    DiseaseParams,
    EpidemicSeries,
    SimulationState,
    run,
    seed_outbreak,
)
from .intervention import POLICY_KINDS, QuarantinePolicy
from .synthetic import (
    HeterogeneousConfig,
    TwoMetapopConfig,
    generate_heterogeneous,
    generate_two_metapop,
)
from .traces import (
    DAY,
    ProfileSet,
    TraceSet,
    build_profiles,
    daily_locations,
    parse_traces,
    read_region_registry,
)

logger = logging.getLogger(__name__)

SEEDING_STREAM = 1000  # seed-sequence tag of the per-run outbreak seeding stream


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, policy: str, run_index: int, cause: BaseException):
        super().__init__(f"run {run_index} of policy {policy!r} failed: {cause!r}")
        self.policy = policy
        self.run_index = run_index


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; see README for the meaning of each key.

    An empty ``trace_file`` selects the synthetic generator named by
    ``synthetic``. The learning window covers the first ``learning_days``
    days of the traces and the simulation starts right after it.
    """

    trace_file: str = ""
    region_file: str = ""
    strict: bool = False
    synthetic: str = "heterogeneous"
    synth_population: int = 20000
    synth_traveler_fraction: float = 0.1
    synth_regions: int = 10
    synth_mobile_fraction: float = 0.05
    synth_away_min: float = 0.1
    synth_away_max: float = 0.9
    synth_seed: int = 0
    start_date: str = "2013-01-01"
    learning_days: int = 30
    sim_days: int = 30
    beta: float = 0.45
    incubation_days: float = 5.3
    infectious_days: float = 5.61
    steps_per_day: int = STEPS_PER_DAY
    seed_region: str = "random"
    seed_cases: int = 100
    policies: tuple[str, ...] = POLICY_KINDS
    risk_diagonal: bool = True
    runs: int = 50
    base_seed: int = 0
    output_dir: str = "out"
    sync_threshold: float = 0.1
    reduction_horizon: int = 30
    record_regions: bool = True
    workers: int = 1

    def __post_init__(self):
        self.policies = tuple(self.policies)

    def validate(self) -> "ExperimentConfig":
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.learning_days < 1 or self.sim_days < 0:
            raise ConfigError("learning_days must be >= 1 and sim_days >= 0")
        if not self.policies:
            raise ConfigError("policy list is empty")
        for p in self.policies:
            if p not in POLICY_KINDS:
                raise ConfigError(f"unknown policy {p!r}")
        if len(set(self.policies)) != len(self.policies):
            raise ConfigError("duplicate policy")
        if not self.trace_file and self.synthetic not in ("two_metapop", "heterogeneous"):
            raise ConfigError(f"unknown synthetic scenario {self.synthetic!r}")
        if not 0 < self.sync_threshold < 1:
            raise ConfigError("sync_threshold must be in (0, 1)")
        if self.seed_cases < 1 or self.steps_per_day < 1 or self.workers < 1:
            raise ConfigError("seed_cases, steps_per_day and workers must be >= 1")
        if self.reduction_horizon < 0:
            raise ConfigError("reduction_horizon must be >= 0")
        try:
            date.fromisoformat(self.start_date)
        except ValueError:
            raise ConfigError(f"invalid start_date {self.start_date!r}") from None
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def params(self) -> DiseaseParams:
        return DiseaseParams.from_durations(self.beta, self.incubation_days, self.infectious_days)

    @property
    def trace_days(self) -> int:
        """Days of traces the experiment consumes."""
        return self.learning_days + self.sim_days + 1

    # -- text format -------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, types[key], value, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_text(text)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(v)
            else:
                s = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"


def _parse_value(key: str, typ: str, value: str, lineno: int):
    try:
        if typ == "bool":
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ.startswith("tuple"):
            return tuple(p.strip() for p in value.split(",") if p.strip())
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Delay:
    days: int
    censored: bool


def first_crossing(cumulative: np.ndarray, level: float) -> int | None:
    hit = np.flatnonzero(np.asarray(cumulative) >= level)
    return int(hit[0]) if len(hit) else None


def compute_delay(
    cum_a: np.ndarray,
    cum_b: np.ndarray,
    threshold: float = 0.1,
    pop_a: float | None = None,
    pop_b: float | None = None,
) -> Delay:
    """Days between two regions reaching ``threshold`` cumulative incidence.

    ``cum_*`` are daily cumulative case counts (day 0 first) and ``pop_*``
    the region sizes. If either region never reaches the threshold, the
    horizon (number of simulated days) is returned, flagged as censored.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    cum_a, cum_b = np.asarray(cum_a), np.asarray(cum_b)
    horizon = min(len(cum_a), len(cum_b)) - 1
    da = first_crossing(cum_a[: horizon + 1], threshold * pop_a)
    db = first_crossing(cum_b[: horizon + 1], threshold * pop_b)
    if da is None or db is None:
        return Delay(horizon, True)
    return Delay(abs(da - db), False)


def regional_delay(series: EpidemicSeries, threshold: float, a: int = 0, b: int = 1) -> Delay:
    """Delay between regions ``a`` and ``b`` of a per-region series.

    Regional cumulative incidence is the number of ever-infectious people
    (I + R) present in the region; region size is its day-0 occupancy.
    """
    rc = series.region_counts
    if rc is None:
        raise ValueError("series has no per-region tallies")
    cum = rc[:, :, Compartment.I] + rc[:, :, Compartment.R]
    pop = rc[0].sum(axis=1)
    return compute_delay(cum[:, a], cum[:, b], threshold, pop[a], pop[b])


def compute_reduction(baseline: EpidemicSeries, treated: EpidemicSeries, horizon: int) -> float | None:
    """Percent fewer cumulative infections at ``horizon``; None if baseline is 0."""
    if horizon >= len(baseline) or horizon >= len(treated) or horizon < 0:
        raise ValueError(f"horizon {horizon} beyond series length")
    base = baseline.cum_infected[horizon]
    if base == 0:
        return None
    return 100.0 * (1.0 - treated.cum_infected[horizon] / base)


# ---------------------------------------------------------------------------
# Data preparation


@dataclass(eq=False)
class Scenario:
    trace: TraceSet
    profiles: ProfileSet
    locations: np.ndarray  # (sim_days + 1, n_users)
    stationary: np.ndarray  # users simulated at their first-observed region


def load_traces(config: ExperimentConfig) -> TraceSet:
    if config.trace_file:
        regions = read_region_registry(config.region_file) if config.region_file else None
        return parse_traces(config.trace_file, regions=regions, strict=config.strict)
    start = date.fromisoformat(config.start_date)
    if config.synthetic == "two_metapop":
        return generate_two_metapop(
            TwoMetapopConfig(
                population=config.synth_population,
                traveler_fraction=config.synth_traveler_fraction,
                days=config.trace_days,
                seed=config.synth_seed,
                start=start,
            )
        )
    return generate_heterogeneous(
        HeterogeneousConfig(
            n_regions=config.synth_regions,
            total_population=config.synth_population,
            mobile_fraction=config.synth_mobile_fraction,
            away_min=config.synth_away_min,
            away_max=config.synth_away_max,
            days=config.trace_days,
            seed=config.synth_seed,
            start=start,
        )
    )


def simulation_locations(trace: TraceSet, profiles: ProfileSet, first_day: int, n_days: int):
    """Daily regions for the simulation window.

    Users without a profile stay in the region of their first event.
    """
    locations = daily_locations(trace, first_day, n_days)
    stationary = profiles.excluded
    if len(stationary):
        first_region = trace.region[trace.offsets[stationary]]
        locations[:, stationary] = first_region
    return locations, stationary


def prepare(config: ExperimentConfig, trace: TraceSet | None = None) -> Scenario:
    trace = load_traces(config) if trace is None else trace
    if trace.n_users == 0:
        raise DataError("trace set has no users")
    if trace.n_days < config.trace_days:
        raise DataError(
            f"traces cover {trace.n_days} days; experiment needs {config.trace_days}"
        )
    profiles = build_profiles(trace, (trace.start, trace.day_start(config.learning_days)))
    locations, stationary = simulation_locations(
        trace, profiles, config.learning_days, config.sim_days + 1
    )
    if len(stationary):
        logger.info("%d users without learning-window events kept stationary", len(stationary))
    return Scenario(trace, profiles, locations, stationary)


# ---------------------------------------------------------------------------
# Runs


@dataclass(eq=False)
class RunResult:
    policy: str
    run_index: int
    series: EpidemicSeries
    policy_hook: QuarantinePolicy
    seed_region: str


def run_seed(base_seed: int, policy: str, run_index: int) -> np.random.SeedSequence:
    """Seed of the dynamics stream of one (policy, run) pair."""
    return np.random.SeedSequence([base_seed, POLICY_KINDS.index(policy), run_index])


def seeding_seed(base_seed: int, run_index: int) -> np.random.SeedSequence:
    """Seed of the outbreak-seeding stream shared by all policies of a run."""
    return np.random.SeedSequence([base_seed, SEEDING_STREAM, run_index])


def initial_state(config: ExperimentConfig, scenario: Scenario, run_index: int) -> tuple[np.ndarray, str]:
    """Seeded day-0 compartments for ``run_index`` and the seeded region."""
    trace = scenario.trace
    rng = np.random.default_rng(seeding_seed(config.base_seed, run_index))
    state = SimulationState(scenario.locations[0], trace.n_regions, rng, trace.users, trace.regions)
    if config.seed_region == "random":
        occupied = np.flatnonzero(state.occupancy() > 0)
        region = int(occupied[rng.integers(len(occupied))])
    else:
        try:
            region = trace.region_index(config.seed_region)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    seed_outbreak(state, region, config.seed_cases, rng)
    return state.comp.copy(), trace.regions[region]


def simulate_one(
    config: ExperimentConfig, scenario: Scenario, policy: str, run_index: int
) -> RunResult:
    """One (policy, run) simulation, reproducible in isolation."""
    comp, region = initial_state(config, scenario, run_index)
    trace = scenario.trace
    state = SimulationState(
        scenario.locations[0],
        trace.n_regions,
        np.random.default_rng(run_seed(config.base_seed, policy, run_index)),
        trace.users,
        trace.regions,
    )
    state.comp[:] = comp
    state.cum_infected = int(np.count_nonzero(comp >= Compartment.I))
    hook = QuarantinePolicy(policy, scenario.profiles, diagonal=config.risk_diagonal)
    series = run(
        state,
        scenario.locations,
        config.sim_days,
        config.params,
        hook,
        substeps=config.steps_per_day,
        record_regions=config.record_regions,
    )
    return RunResult(policy, run_index, series, hook, region)


_CONTEXT: tuple[ExperimentConfig, Scenario] | None = None


def _init_worker(config, scenario):
    global _CONTEXT
    _CONTEXT = (config, scenario)


def _worker(task):
    config, scenario = _CONTEXT
    policy, j = task
    try:
        return simulate_one(config, scenario, policy, j)
    except Exception as exc:  # noqa: BLE001 - re-raised with run identity
        raise ExperimentError(policy, j, exc) from exc


def run_file_stem(policy: str, run_index: int) -> str:
    return f"{policy}_run{run_index:04d}"


def _write_run(result: RunResult, runs_dir: Path, scenario: Scenario) -> None:
    stem = run_file_stem(result.policy, result.run_index)
    with open(runs_dir / f"{stem}_series.csv", "w", newline="") as fh:
        result.series.to_csv(fh)
    if result.series.region_counts is not None:
        with open(runs_dir / f"{stem}_regions.csv", "w", newline="") as fh:
            result.series.regions_to_csv(fh)
    with open(runs_dir / f"{stem}_quarantine.csv", "w", newline="") as fh:
        result.policy_hook.log.to_csv(fh, scenario.trace.users, scenario.trace.regions)


# ---------------------------------------------------------------------------
# Summary


@dataclass
class PolicySummary:
    runs: int
    cum_infected: list[int]
    mean_cum_infected: float
    std_cum_infected: float
    quarantined: list[int]
    mean_quarantined: float
    series_files: list[str] = field(default_factory=list)
    delays: list[int] | None = None
    delays_censored: list[bool] | None = None
    median_delay: float | None = None


@dataclass
class ExperimentSummary:
    horizon: int
    policies: dict[str, PolicySummary]
    reductions: dict[str, dict[str, Any]]
    sync_threshold: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSummary":
        raw = json.loads(text)
        raw["policies"] = {k: PolicySummary(**v) for k, v in raw["policies"].items()}
        return cls(**raw)


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(
    series: dict[str, list[EpidemicSeries]],
    horizon: int,
    sync_threshold: float = 0.1,
    files: dict[str, list[str]] | None = None,
) -> ExperimentSummary:
    """Aggregate per-run series (indexed by policy, then run index)."""
    policies = {}
    for p, runs in series.items():
        h = min(horizon, len(runs[0]) - 1)
        cum = [int(s.cum_infected[h]) for s in runs]
        quar = [int(s.quarantined[h]) for s in runs]
        summary = PolicySummary(
            runs=len(runs),
            cum_infected=cum,
            mean_cum_infected=float(np.mean(cum)),
            std_cum_infected=_std(cum),
            quarantined=quar,
            mean_quarantined=float(np.mean(quar)),
            series_files=list(files[p]) if files else [],
        )
        if runs[0].region_counts is not None and runs[0].region_counts.shape[1] == 2:
            delays = [regional_delay(s, sync_threshold) for s in runs]
            summary.delays = [d.days for d in delays]
            summary.delays_censored = [d.censored for d in delays]
            summary.median_delay = float(np.median(summary.delays))
        policies[p] = summary
    reductions: dict[str, dict[str, Any]] = {}
    names = list(series)
    for base in names:
        for treated in names:
            h = min(horizon, len(series[base][0]) - 1, len(series[treated][0]) - 1)
            values = [
                compute_reduction(b, t, h) for b, t in zip(series[base], series[treated])
            ]
            defined = [v for v in values if v is not None]
            reductions[f"{treated}_vs_{base}"] = {
                "values": values,
                "mean": float(np.mean(defined)) if defined else None,
                "not_applicable": len(values) - len(defined),
            }
    return ExperimentSummary(
        horizon=horizon, policies=policies, reductions=reductions, sync_threshold=sync_threshold
    )


def summarize_directory(out_dir: str | os.PathLike) -> ExperimentSummary:
    """Recompute the summary of a finished experiment from its CSV outputs."""
    out = Path(out_dir)
    config = ExperimentConfig.load(out / "config.txt")
    series: dict[str, list[EpidemicSeries]] = {}
    files: dict[str, list[str]] = {}
    for p in config.policies:
        series[p], files[p] = [], []
        for j in range(config.runs):
            stem = run_file_stem(p, j)
            path = out / "runs" / f"{stem}_series.csv"
            regions_path = out / "runs" / f"{stem}_regions.csv"
            with open(path) as fh:
                if regions_path.exists():
                    with open(regions_path) as rfh:
                        s = EpidemicSeries.from_csv(fh, rfh)
                else:
                    s = EpidemicSeries.from_csv(fh)
            series[p].append(s)
            files[p].append(str(path.relative_to(out)))
    return summarize(series, config.reduction_horizon, config.sync_threshold, files)


# ---------------------------------------------------------------------------
# Orchestration


@dataclass(eq=False)
class ExperimentResult:
    summary: ExperimentSummary
    runs: dict[str, list[RunResult]]
    scenario: Scenario
    output_dir: Path | None


def run_experiment(
    config: ExperimentConfig,
    output_dir: str | os.PathLike | None = None,
    trace: TraceSet | None = None,
    workers: int | None = None,
    write: bool = True,
) -> ExperimentResult:
    """Run every (policy, run) pair and write per-run CSVs plus ``summary.json``.

    Outputs are assembled in a temporary directory and moved into place only
    when every run succeeded. Results do not depend on ``workers``.
    """
    config.validate()
    scenario = prepare(config, trace)
    workers = config.workers if workers is None else workers
    tasks = [(p, j) for p in config.policies for j in range(config.runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(config, scenario)) as ex:
            results = list(ex.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        _init_worker(config, scenario)
        results = [_worker(t) for t in tasks]
    by_policy: dict[str, list[RunResult]] = {p: [] for p in config.policies}
    for r in results:
        by_policy[r.policy].append(r)
    files = {
        p: [f"runs/{run_file_stem(p, r.run_index)}_series.csv" for r in rs]
        for p, rs in by_policy.items()
    }
    summary = summarize(
        {p: [r.series for r in rs] for p, rs in by_policy.items()},
        config.reduction_horizon,
        config.sync_threshold,
        files if write else None,
    )
    out = None
    if write:
        out = Path(output_dir if output_dir is not None else config.output_dir)
        _write_outputs(out, config, scenario, by_policy, summary)
    return ExperimentResult(summary, by_policy, scenario, out)


def _write_outputs(out: Path, config, scenario, by_policy, summary) -> None:
    if out.exists() and any(out.iterdir()) and not (out / "summary.json").exists():
        raise ConfigError(f"output directory {out} is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        runs_dir = tmp / "runs"
        runs_dir.mkdir()
        for rs in by_policy.values():
            for r in rs:
                _write_run(r, runs_dir, scenario)
        (tmp / "config.txt").write_text(config.to_text(), encoding="utf-8")
        (tmp / "summary.json").write_text(summary.to_json(), encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def reduction_stats(values: Sequence[float | None]) -> tuple[float, float]:
    """Mean of defined values and the one-sided paired t-test p-value (mean > 0)."""
    from scipy import stats

    v = np.array([x for x in values if x is not None], dtype=float)
    if len(v) < 2:
        return (float(v.mean()) if len(v) else math.nan), math.nan
    return float(v.mean()), float(stats.ttest_1samp(v, 0.0, alternative="greater").pvalue)
