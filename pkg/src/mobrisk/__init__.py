"""Mobility-based contagion risk ranking and quarantine policy simulation."""

from .epidemic import (
    Compartment,
    DiseaseParams,
    EpidemicSeries,
    SimulationState,
    force_of_infection,
    integrate_ode,
    run,
    seed_outbreak,
    step_day,
)
from .harness import (
    ExperimentConfig,
    ExperimentSummary,
    compute_delay,
    compute_reduction,
    run_experiment,
)
from .intervention import (
    QuarantinePolicy,
    apply_quarantine,
    daily_quota,
    select_by_risk,
    select_random,
)
from .risk import RegionState, rank_users, risk_score, risk_score_bruteforce
from .synthetic import (
    HeterogeneousConfig,
    TwoMetapopConfig,
    generate_heterogeneous,
    generate_two_metapop,
)
from .traces import (
    TraceSet,
    build_presence,
    build_profile,
    build_profiles,
    daily_locations,
    modal_region,
    parse_traces,
    write_traces,
)

__version__ = "0.1.0"
