"""Attack scenarios driven through the simulator, and response-time statistics."""

from __future__ import annotations

import csv
import enum
import io
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import config as cfgmod
from .config import Section
from .geo import destination
from .ledger import GPS, Trajectory, VehicleReport
from .netsim import NodeKind, Simulation, SimulationTrace

DEFAULT_REPETITIONS = 8
MULTI_ATTACK_REPETITIONS = 3
DEFAULT_INTERVAL_MS = 1000.0
FALSIFIABLE = ("gps", "speed", "acceleration")


class AttackKind(str, enum.Enum):
    SPOOF_BROADCAST = "SpoofBroadcast"
    MODIFY_RECORD = "ModifyRecord"
    MULTI_ATTACKER = "MultiAttacker"
    OFFLINE_ATTACKER = "OfflineAttacker"


class NoSamples(LookupError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    attacker_ids: tuple[str, ...]
    # offsets applied to the attacker's true state: gps in meters along
    # gps_bearing (degrees), speed in m/s, acceleration in m/s^2
    falsified_fields: dict = field(default_factory=dict)
    target_record_id: Optional[int] = None
    start_time: float = 0.0
    repetitions: int = DEFAULT_REPETITIONS
    interval_ms: float = DEFAULT_INTERVAL_MS
    gps_bearing: float = 0.0
    action: str = "modify"  # what each MultiAttacker participant does: modify | spoof

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "attacker_ids", tuple(self.attacker_ids))
        unknown = set(self.falsified_fields) - set(FALSIFIABLE)
        if unknown:
            raise ValueError(f"cannot falsify {sorted(unknown)}; choose from {FALSIFIABLE}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.action not in ("modify", "spoof"):
            raise ValueError("action must be 'modify' or 'spoof'")
        spoofs = self.kind is AttackKind.SPOOF_BROADCAST or (
            self.kind is AttackKind.MULTI_ATTACKER and self.action == "spoof")
        if spoofs and not self.falsified_fields:
            raise ValueError("a spoofing attack needs at least one falsified field")
        modifies = self.kind in (AttackKind.MODIFY_RECORD, AttackKind.OFFLINE_ATTACKER) or (
            self.kind is AttackKind.MULTI_ATTACKER and self.action == "modify")
        if modifies and self.target_record_id is None:
            raise ValueError(f"{self.kind.value} needs target_record_id")

    def falsify(self, report: VehicleReport) -> VehicleReport:
        gps = report.gps
        offset = self.falsified_fields.get("gps", 0.0)
        if offset:
            gps = GPS(*destination(gps.longitude, gps.latitude, offset, self.gps_bearing))
        traj = Trajectory(
            max(0.0, report.trajectory.speed + self.falsified_fields.get("speed", 0.0)),
            report.trajectory.acceleration + self.falsified_fields.get("acceleration", 0.0),
        )
        return VehicleReport(report.vin, gps, traj)


@dataclass(frozen=True)
class AttemptRecord:
    attacker: str
    round: int
    attempt: int
    node: str
    verdict: str
    response_ms: float


@dataclass(frozen=True)
class ResponseStats:
    mean: float
    min: float
    max: float
    count: int


@dataclass
class AttackOutcome:
    spec: Optional[AttackSpec]
    label: str = ""
    records: list[AttemptRecord] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def attempts(self) -> int:
        return len({(r.attacker, r.round, r.attempt) for r in self.records})

    def verdicts(self) -> Counter:
        return Counter(r.verdict for r in self.records)

    def for_node(self, node_id: str) -> list[AttemptRecord]:
        return [r for r in self.records if r.node == node_id]

    def stats(self, node_id: Optional[str] = None) -> ResponseStats:
        rows = self.records if node_id is None else self.for_node(node_id)
        return _stats([r.response_ms for r in rows])

    def summary(self) -> dict:
        out = {"label": self.label, "kind": self.spec.kind.value if self.spec else None,
               "attempts": self.attempts, "verdicts": dict(sorted(self.verdicts().items()))}
        if self.records:
            s = self.stats()
            out.update(mean_ms=s.mean, min_ms=s.min, max_ms=s.max, samples=s.count)
        out.update(self.notes)
        return out


def _stats(values: list[float]) -> ResponseStats:
    if not values:
        raise NoSamples("no response samples")
    return ResponseStats(statistics.fmean(values), min(values), max(values), len(values))


def measure_response_time(trace: SimulationTrace, node_id: str, label: Optional[str] = None) -> ResponseStats:
    """Mean/min/max receipt->verdict (or attempt->rejection) time at one node,
    over attack-related validations only."""
    values = [
        r.detail["response_ms"] for r in trace.records
        if r.kind == "ValidateDone" and r.node == node_id and r.detail.get("attack")
        and (label is None or r.detail["attack"].get("id") == label)
    ]
    if not values:
        raise NoSamples(f"node {node_id!r} has no attack response samples")
    return _stats(values)


# ---------------------------------------------------------------------------


def _label(sim: Simulation, kind: AttackKind) -> str:
    sim.attack_seq += 1
    return f"{kind.value}-{sim.attack_seq - 1}"


def _tag(label: str, attacker: str, rnd: int, attempt: int) -> dict:
    return {"id": label, "attacker": attacker, "round": rnd, "attempt": attempt}


def _collect(sim: Simulation, label: str, start: int) -> list[AttemptRecord]:
    rows = []
    for r in sim.trace.records[start:]:
        tag = r.detail.get("attack")
        if r.kind != "ValidateDone" or not tag or tag.get("id") != label:
            continue
        rows.append(AttemptRecord(tag["attacker"], tag["round"], tag["attempt"], r.node,
                                  r.detail["verdict"], r.detail["response_ms"]))
    return rows


def _check_attackers(sim: Simulation, spec: AttackSpec, vehicles_only: bool) -> None:
    for a in spec.attacker_ids:
        node = sim.node(a)
        if vehicles_only and node.kind is not NodeKind.VEHICLE:
            raise ValueError(f"spoofing attacker {a!r} must be a Vehicle, not {node.kind.value}")


def _schedule(sim: Simulation, spec: AttackSpec, label: str, attacker: str, rnd: int, attempt: int,
              at: float, action: str) -> None:
    tag = _tag(label, attacker, rnd, attempt)
    if action == "spoof":
        sim.schedule_attack(at, attacker, "spoof", falsify=spec.falsify, attack=tag)
    else:
        new_payload = spec.falsify(sim.node(attacker).report_at(at)) if sim.node(attacker).vin else None
        sim.schedule_attack(at, attacker, "modify", record_id=spec.target_record_id,
                            new_payload=new_payload, attack=tag)


def spoof_broadcast(sim: Simulation, spec: AttackSpec) -> AttackOutcome:
    """Each attacker broadcasts its true state shifted by the falsified offsets."""
    _check_attackers(sim, spec, vehicles_only=True)
    label = _label(sim, spec.kind)
    start_idx = len(sim.trace.records)
    t0 = max(spec.start_time, sim.clock)
    ledger_before = len(sim.agreed.ledger)
    for k in range(spec.repetitions):
        for a in spec.attacker_ids:
            _schedule(sim, spec, label, a, 1, k + 1, t0 + k * spec.interval_ms, "spoof")
    sim.run()
    out = AttackOutcome(spec, label, _collect(sim, label, start_idx))
    vins = [sim.node(a).vin for a in spec.attacker_ids]
    out.notes = {
        "blacklisted": [v for v in vins if v in sim.agreed.blacklist],
        "ledger_growth": len(sim.agreed.ledger) - ledger_before,
    }
    return out


def tamper_ledger(sim: Simulation, spec: AttackSpec) -> AttackOutcome:
    """Each attacker tries to modify ``target_record_id`` on its own replica."""
    if spec.target_record_id is None:
        raise ValueError("tamper_ledger needs target_record_id")
    _check_attackers(sim, spec, vehicles_only=False)
    label = _label(sim, spec.kind)
    start_idx = len(sim.trace.records)
    t0 = max(spec.start_time, sim.clock)
    for k in range(spec.repetitions):
        for a in spec.attacker_ids:
            _schedule(sim, spec, label, a, 1, k + 1, t0 + k * spec.interval_ms, "modify")
    sim.run()
    out = AttackOutcome(spec, label, _collect(sim, label, start_idx))
    out.notes = {"chains_ok": all(st.ledger.verify().ok for st in sim.states.values())}
    return out


def run_multi_attack(sim: Simulation, spec: AttackSpec) -> AttackOutcome:
    """Round r has the first r attackers fire at the same instant, ``repetitions`` times."""
    label = _label(sim, spec.kind)
    if not spec.attacker_ids:
        return AttackOutcome(spec, label)
    _check_attackers(sim, spec, vehicles_only=spec.action == "spoof")
    start_idx = len(sim.trace.records)
    t0 = max(spec.start_time, sim.clock)
    slot = 0
    for rnd in range(1, len(spec.attacker_ids) + 1):
        for k in range(spec.repetitions):
            at = t0 + slot * spec.interval_ms
            slot += 1
            for a in spec.attacker_ids[:rnd]:
                _schedule(sim, spec, label, a, rnd, k + 1, at, spec.action)
    sim.run()
    return AttackOutcome(spec, label, _collect(sim, label, start_idx))


def offline_attacker(sim: Simulation, spec: AttackSpec) -> AttackOutcome:
    """Take the attackers offline, let them tamper locally, then reconnect them."""
    label = _label(sim, spec.kind)
    start_idx = len(sim.trace.records)
    t0 = max(spec.start_time, sim.clock)
    sim.run(until=t0)
    for a in spec.attacker_ids:
        sim.set_node_online(a, False)
    for k in range(spec.repetitions):
        for a in spec.attacker_ids:
            _schedule(sim, spec, label, a, 1, k + 1, t0 + k * spec.interval_ms, "modify")
    sim.run()
    for a in spec.attacker_ids:
        sim.set_node_online(a, True)
    out = AttackOutcome(spec, label, _collect(sim, label, start_idx))
    agreed = sim.state_key(sim.topology.controller.id)
    out.notes = {"restored": all(sim.state_key(a) == agreed for a in spec.attacker_ids)}
    return out


RUNNERS = {
    AttackKind.SPOOF_BROADCAST: spoof_broadcast,
    AttackKind.MODIFY_RECORD: tamper_ledger,
    AttackKind.MULTI_ATTACKER: run_multi_attack,
    AttackKind.OFFLINE_ATTACKER: offline_attacker,
}


def run_attack(sim: Simulation, spec: AttackSpec) -> AttackOutcome:
    return RUNNERS[spec.kind](sim, spec)


_ATTACK_KEYS = {"kind", "attackers", "falsified", "gps_bearing_deg", "target_record_id", "start_time_ms",
                "repetitions", "interval_ms", "action"}


def parse_attacks(sections: Iterable[Section]) -> list[AttackSpec]:
    specs = []
    for sec in sections:
        sec.check_keys(_ATTACK_KEYS)
        kind = sec.get("kind", AttackKind)
        attackers = sec.get("attackers", list)
        falsified = sec.section("falsified")
        fields = {k: falsified.get(k, cfgmod.real) for k in falsified.data}
        default_reps = MULTI_ATTACK_REPETITIONS if kind is AttackKind.MULTI_ATTACKER else DEFAULT_REPETITIONS
        try:
            specs.append(AttackSpec(
                kind=kind,
                attacker_ids=[str(a) for a in attackers],
                falsified_fields=fields,
                target_record_id=sec.get("target_record_id", cfgmod.positive_int, None),
                start_time=sec.get("start_time_ms", cfgmod.non_negative_real, 0.0),
                repetitions=sec.get("repetitions", cfgmod.positive_int, default_reps),
                interval_ms=sec.get("interval_ms", cfgmod.non_negative_real, DEFAULT_INTERVAL_MS),
                gps_bearing=sec.get("gps_bearing_deg", cfgmod.real, 0.0),
                action=sec.get("action", cfgmod.string, "modify"),
            ))
        except ValueError as exc:
            raise sec.error(None, str(exc)) from None
    return specs


CSV_COLUMNS = ("attacker", "round", "attempt", "node", "verdict", "response_ms")


def outcomes_csv(outcomes: Iterable[AttackOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for o in outcomes:
        for r in o.records:
            w.writerow((r.attacker, r.round, r.attempt, r.node, r.verdict, repr(r.response_ms)))
    return buf.getvalue()
