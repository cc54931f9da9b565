"""Reference-matching consensus over broadcast vehicle records.

A broadcast is compared against observations from nearby RSUs and witness
vehicles. Blacklisted identities are rejected before any comparison; a
broadcast backed by enough references is accepted when a strict majority of
them match, otherwise it is a spoof and its VIN is blacklisted. Broadcasts
that cannot be checked (too few references) are rejected without
blacklisting unless the policy asks for the literal, strict behaviour.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

import yaml

from .geo import haversine_m
from .ledger import GPS, Ledger, LedgerEntry, Participant, VehicleReport


class ObserverKind(str, enum.Enum):
    RSU = "RSU"
    WITNESS = "WitnessVehicle"


class Decision(str, enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED_SPOOF = "RejectedSpoof"
    REJECTED_BLACKLISTED = "RejectedBlacklisted"
    REJECTED_UNVERIFIABLE = "RejectedUnverifiable"


class VinMismatch(ValueError):
    pass


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class BroadcastRecord:
    claimed: VehicleReport
    origin_node: str
    broadcast_time: float

    @property
    def vin(self) -> str:
        return self.claimed.vin


@dataclass(frozen=True)
class ReferenceObservation:
    observer: str
    observer_kind: ObserverKind
    observed_vin: str
    observed_gps: GPS
    observed_speed: float
    observed_acceleration: float
    observation_time: float


@dataclass(frozen=True)
class ReferenceSet:
    observations: tuple[ReferenceObservation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        vins = {o.observed_vin for o in self.observations}
        if len(vins) > 1:
            raise VinMismatch(f"reference set mixes VINs: {sorted(vins)}")

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)


@dataclass(frozen=True)
class BlacklistEntry:
    vin: str
    first_offense_time: float
    offense_count: int


class Blacklist:
    """Registry of attacker VINs. Permanent: entries never expire."""

    def __init__(self, entries: Iterable[BlacklistEntry] = ()):
        self._entries: dict[str, BlacklistEntry] = {e.vin: e for e in entries}
        self._lock = threading.Lock()

    def __contains__(self, vin: str) -> bool:
        return vin in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Blacklist) and self.entries() == other.entries()

    def get(self, vin: str) -> Optional[BlacklistEntry]:
        return self._entries.get(vin)

    def entries(self) -> list[BlacklistEntry]:
        return sorted(self._entries.values(), key=lambda e: e.vin)

    def add(self, vin: str, time: float) -> BlacklistEntry:
        with self._lock:
            prev = self._entries.get(vin)
            if prev is None:
                entry = BlacklistEntry(vin, time, 1)
            else:
                entry = BlacklistEntry(vin, prev.first_offense_time, prev.offense_count + 1)
            self._entries[vin] = entry
            return entry

    def copy(self) -> "Blacklist":
        return Blacklist(self._entries.values())


def blacklist_add(blacklist: Blacklist, vin: str, time: float) -> Blacklist:
    blacklist.add(vin, time)
    return blacklist


def blacklist_contains(blacklist: Blacklist, vin: str) -> bool:
    return vin in blacklist


POLICY_KEYS = (
    "gps_tolerance_m",
    "speed_tolerance_mps",
    "accel_tolerance_mps2",
    "min_rsu_refs",
    "min_witness_refs",
    "strict_unverifiable_blacklist",
)


@dataclass(frozen=True)
class ConsensusPolicy:
    gps_tolerance: float = 5.0
    speed_tolerance: float = 1.0
    acceleration_tolerance: float = 0.5
    min_rsu_refs: int = 1
    min_witness_refs: int = 1
    # literal pseudo-code: blacklist even when nothing could be compared
    strict_unverifiable_blacklist: bool = False

    def __post_init__(self):
        for name in ("gps_tolerance", "speed_tolerance", "acceleration_tolerance"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v >= 0:
                raise PolicyError(f"{name} must be a number >= 0, got {v!r}")
        for name in ("min_rsu_refs", "min_witness_refs"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise PolicyError(f"{name} must be an integer >= 0, got {v!r}")
        if self.min_rsu_refs == 0 and self.min_witness_refs == 0:
            raise PolicyError("min_rsu_refs and min_witness_refs cannot both be 0")
        if not isinstance(self.strict_unverifiable_blacklist, bool):
            raise PolicyError("strict_unverifiable_blacklist must be a boolean")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ConsensusPolicy":
        unknown = set(data) - set(POLICY_KEYS)
        if unknown:
            raise PolicyError(f"unknown policy keys: {', '.join(sorted(unknown))}")
        d = cls()
        return cls(
            gps_tolerance=data.get("gps_tolerance_m", d.gps_tolerance),
            speed_tolerance=data.get("speed_tolerance_mps", d.speed_tolerance),
            acceleration_tolerance=data.get("accel_tolerance_mps2", d.acceleration_tolerance),
            min_rsu_refs=data.get("min_rsu_refs", d.min_rsu_refs),
            min_witness_refs=data.get("min_witness_refs", d.min_witness_refs),
            strict_unverifiable_blacklist=data.get("strict_unverifiable_blacklist", d.strict_unverifiable_blacklist),
        )

    def to_mapping(self) -> dict:
        return dict(zip(POLICY_KEYS, (
            self.gps_tolerance, self.speed_tolerance, self.acceleration_tolerance,
            self.min_rsu_refs, self.min_witness_refs, self.strict_unverifiable_blacklist,
        )))


def load_policy(path: str | Path) -> ConsensusPolicy:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, Mapping):
        raise PolicyError(f"{path}: policy file must be a mapping")
    return ConsensusPolicy.from_mapping(data)


@dataclass(frozen=True)
class ValidationVerdict:
    decision: Decision
    matched_refs: int = 0
    mismatched_refs: int = 0
    # whether the VIN must be added to the blacklist as a consequence
    blacklist: bool = False

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPTED


def match_observation(source: BroadcastRecord, ref: ReferenceObservation, policy: ConsensusPolicy) -> bool:
    """True when the reference agrees with the broadcast within every tolerance."""
    if ref.observed_vin != source.claimed.vin:
        raise VinMismatch(f"reference for {ref.observed_vin!r} routed to broadcast from {source.claimed.vin!r}")
    claimed = source.claimed
    dist = haversine_m(claimed.gps.longitude, claimed.gps.latitude,
                       ref.observed_gps.longitude, ref.observed_gps.latitude)
    return (
        dist <= policy.gps_tolerance
        and abs(claimed.trajectory.speed - ref.observed_speed) <= policy.speed_tolerance
        and abs(claimed.trajectory.acceleration - ref.observed_acceleration) <= policy.acceleration_tolerance
    )


def validate(
    source: BroadcastRecord,
    refs: ReferenceSet | Iterable[ReferenceObservation],
    blacklist: Blacklist,
    policy: ConsensusPolicy,
) -> ValidationVerdict:
    """Decide one broadcast. Pure: neither the blacklist nor any ledger is touched.

    Observations made by the broadcasting node itself are ignored.
    """
    if source.claimed.vin in blacklist:
        return ValidationVerdict(Decision.REJECTED_BLACKLISTED)
    observations = [o for o in refs if o.observer != source.origin_node]
    rsu = sum(1 for o in observations if o.observer_kind is ObserverKind.RSU)
    witnesses = len(observations) - rsu
    matched = sum(1 for o in observations if match_observation(source, o, policy))
    mismatched = len(observations) - matched
    if rsu < policy.min_rsu_refs or witnesses < policy.min_witness_refs:
        if policy.strict_unverifiable_blacklist:
            return ValidationVerdict(Decision.REJECTED_SPOOF, matched, mismatched, blacklist=True)
        return ValidationVerdict(Decision.REJECTED_UNVERIFIABLE, matched, mismatched)
    # ties count as disagreement
    if 2 * matched > len(observations):
        return ValidationVerdict(Decision.ACCEPTED, matched, mismatched)
    return ValidationVerdict(Decision.REJECTED_SPOOF, matched, mismatched, blacklist=True)


@dataclass
class NodeState:
    """Local replicas held by one network node."""

    node_id: str
    participant: Participant
    ledger: Ledger
    blacklist: Blacklist = field(default_factory=Blacklist)
    policy: ConsensusPolicy = field(default_factory=ConsensusPolicy)


@dataclass(frozen=True)
class BroadcastOutcome:
    verdict: ValidationVerdict
    steps: int
    received_at: float
    decided_at: float
    entry: Optional[LedgerEntry] = None
    blacklisted: bool = False

    @property
    def duration(self) -> float:
        return self.decided_at - self.received_at


def process_broadcast(
    state: NodeState,
    broadcast: BroadcastRecord,
    gather_references: Callable[[BroadcastRecord], Iterable[ReferenceObservation]],
    now: float,
    processing_ms: float = 0.0,
) -> BroadcastOutcome:
    """Validate a received broadcast and apply its effect to ``state``.

    ``steps`` counts the work done: one blacklist lookup, then (only for
    non-blacklisted VINs) one reference gathering, one comparison per
    reference and one decision.
    """
    decided_at = now + processing_ms
    if broadcast.claimed.vin in state.blacklist:
        verdict = validate(broadcast, (), state.blacklist, state.policy)
        return BroadcastOutcome(verdict, 1, now, decided_at)
    refs = ReferenceSet(tuple(gather_references(broadcast)))
    verdict = validate(broadcast, refs, state.blacklist, state.policy)
    steps = 1 + 1 + len(refs) + 1
    entry = None
    if verdict.accepted:
        entry = state.ledger.append(broadcast.claimed, state.participant, decided_at)
    elif verdict.blacklist:
        state.blacklist.add(broadcast.claimed.vin, decided_at)
    return BroadcastOutcome(verdict, steps, now, decided_at, entry=entry, blacklisted=verdict.blacklist)
