"""Permissioned ledger and reference-matching consensus for connected
vehicles, with a deterministic network simulator, attack harness, signal
control adapter and benchmark CLI."""

from .attacks import (
    AttackKind,
    AttackOutcome,
    AttackSpec,
    measure_response_time,
    offline_attacker,
    outcomes_csv,
    run_attack,
    run_multi_attack,
    spoof_broadcast,
    tamper_ledger,
)
from .bench import ExperimentSuite, SuiteResult, UnknownSuite, run_experiment_suite
from .config import ConfigError
from .consensus import (
    Blacklist,
    BroadcastRecord,
    ConsensusPolicy,
    Decision,
    ObserverKind,
    ReferenceObservation,
    ReferenceSet,
    ValidationVerdict,
    blacklist_add,
    blacklist_contains,
    process_broadcast,
    validate,
)
from .isig import (
    ArrivalTable,
    IntersectionGeometry,
    SignalParams,
    SignalPlan,
    build_arrival_table,
    congestion_attack_demo,
    plan_signals,
    simulate_intersection,
)
from .ledger import (
    GPS,
    ImmutableLedger,
    Ledger,
    LedgerEntry,
    Registry,
    Role,
    Trajectory,
    VehicleInfo,
    VehicleReport,
    append_record,
    attempt_modify,
    read_records,
    register_participant,
    verify_chain,
    verify_snapshot,
)
from .netsim import (
    PROFILES,
    NetworkProfile,
    Node,
    NodeKind,
    Simulation,
    Topology,
    build_topology,
    parse_scenario,
    replicas_agree,
    transmission_delay,
)

__version__ = "0.1.0"

__all__ = [
    "append_record",
    "ArrivalTable",
    "AttackKind",
    "AttackOutcome",
    "AttackSpec",
    "attempt_modify",
    "Blacklist",
    "blacklist_add",
    "blacklist_contains",
    "BroadcastRecord",
    "build_arrival_table",
    "build_topology",
    "ConfigError",
    "congestion_attack_demo",
    "ConsensusPolicy",
    "Decision",
    "ExperimentSuite",
    "GPS",
    "ImmutableLedger",
    "IntersectionGeometry",
    "Ledger",
    "LedgerEntry",
    "measure_response_time",
    "NetworkProfile",
    "Node",
    "NodeKind",
    "ObserverKind",
    "offline_attacker",
    "outcomes_csv",
    "parse_scenario",
    "plan_signals",
    "process_broadcast",
    "PROFILES",
    "read_records",
    "ReferenceObservation",
    "ReferenceSet",
    "register_participant",
    "Registry",
    "replicas_agree",
    "Role",
    "run_attack",
    "run_experiment_suite",
    "run_multi_attack",
    "SignalParams",
    "SignalPlan",
    "simulate_intersection",
    "Simulation",
    "spoof_broadcast",
    "SuiteResult",
    "tamper_ledger",
    "Topology",
    "Trajectory",
    "transmission_delay",
    "UnknownSuite",
    "validate",
    "ValidationVerdict",
    "VehicleInfo",
    "VehicleReport",
    "verify_chain",
    "verify_snapshot",
]
