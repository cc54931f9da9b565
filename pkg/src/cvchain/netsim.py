"""Deterministic discrete-event simulation of the vehicle/RSU/controller network.

Every node keeps its own ledger and blacklist replica. A broadcast is
delivered to every other online node, each of which validates it against
references gathered from RSUs and witness vehicles in sensing range. The
first verdict reached anywhere in the network is committed to the agreed
state and replicated to all nodes, so replicas converge to bit-identical
ledgers once no messages are in flight.

All times are simulated milliseconds. Events run in ``(due_time, ordinal)``
order, where the ordinal is assigned at scheduling time.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import config as cfgmod
from .config import ConfigError, Section
from .consensus import (
    Blacklist,
    BroadcastRecord,
    ConsensusPolicy,
    NodeState,
    ObserverKind,
    PolicyError,
    ReferenceObservation,
    process_broadcast,
    validate,
)
from .geo import destination, haversine_m
from .ledger import (
    GPS,
    ImmutableLedger,
    Ledger,
    LedgerEntry,
    Participant,
    Registry,
    ReplicationError,
    Role,
    Trajectory,
    VehicleReport,
    entry_to_json,
)

VIN_ALPHABET = "ABCDEFGHJKLMNPRSTUVWXYZ0123456789"
DEFAULT_CENTER = (-75.7530, 39.6780)
DEFAULT_SENSING_RANGE_M = 150.0
DEFAULT_BASE_COST_MS = 39.0

# measured mean response (ms) per CPU slowdown factor on the reference machine
CALIBRATED_TABLE: dict[float, float] = {1.0: 39.0, 4.0: 74.0, 6.0: 118.0}
THROTTLE_MODELS = ("calibrated", "linear")


class NodeKind(str, enum.Enum):
    VEHICLE = "Vehicle"
    RSU = "RSU"
    CONTROLLER = "Controller"

    @property
    def role(self) -> Role:
        return Role(self.value)


class EventKind(str, enum.Enum):
    BROADCAST = "Broadcast"
    DELIVER = "Deliver"
    VALIDATE_DONE = "ValidateDone"
    REPLICATE_ENTRY = "ReplicateEntry"
    REPLICATE_BLACKLIST = "ReplicateBlacklist"
    ATTACK_INJECT = "AttackInject"


class OriginOffline(RuntimeError):
    pass


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    bandwidth_bps: float
    latency_ms: float

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth must be > 0")
        if not self.latency_ms >= 0:
            raise ValueError("latency must be >= 0")


PROFILES: dict[str, NetworkProfile] = {
    "wifi": NetworkProfile("wifi", 60e6, 5.0),
    "fast-3g": NetworkProfile("fast-3g", 1.6e6, 75.0),
    "slow-3g": NetworkProfile("slow-3g", 0.4e6, 200.0),
    "ideal": NetworkProfile("ideal", math.inf, 0.0),
}


def transmission_delay(profile: NetworkProfile, message_size: int) -> float:
    """One-way latency plus serialization time, in ms."""
    if message_size <= 0:
        raise ValueError("message size must be > 0")
    return profile.latency_ms + message_size * 8 * 1000.0 / profile.bandwidth_bps


def processing_delay(
    base_cost: float,
    throttle: float,
    model: str = "linear",
    table: Mapping[float, float] = CALIBRATED_TABLE,
) -> float:
    """Time for one validation on a node slowed down by ``throttle``.

    ``linear`` scales the base cost by the factor. ``calibrated`` reads the
    measured response table (interpolated between points, last slope beyond
    the end), rescaled so that factor 1 costs ``base_cost``.
    """
    if not base_cost > 0:
        raise ValueError("base cost must be > 0")
    if not throttle >= 1:
        raise ValueError("throttle must be >= 1")
    if model == "linear":
        return base_cost * throttle
    if model != "calibrated":
        raise ValueError(f"unknown throttle model {model!r}")
    xs = sorted(table)
    ys = [table[x] for x in xs]
    scale = base_cost / _interp(xs, ys, 1.0)
    return _interp(xs, ys, throttle) * scale


def _interp(xs: list[float], ys: list[float], x: float) -> float:
    if len(xs) == 1:
        return ys[0] * x / xs[0]
    i = bisect.bisect_left(xs, x)
    if i < len(xs) and xs[i] == x:
        return ys[i]
    i = min(max(i, 1), len(xs) - 1)
    x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def report_size(report: VehicleReport) -> int:
    return len(json.dumps(
        [report.vin, report.gps.longitude, report.gps.latitude,
         report.trajectory.speed, report.trajectory.acceleration],
        separators=(",", ":"),
    ).encode())


@dataclass
class Node:
    id: str
    kind: NodeKind
    position: tuple[float, float]
    speed: float = 0.0
    acceleration: float = 0.0
    heading: float = 0.0  # direction of travel, degrees
    online: bool = True
    cpu_throttle: float = 1.0
    sensing_range: float = DEFAULT_SENSING_RANGE_M
    vin: Optional[str] = None

    def __post_init__(self):
        if not self.cpu_throttle >= 1:
            raise ValueError(f"{self.id}: cpu_throttle must be >= 1")
        if self.kind is not NodeKind.VEHICLE and (self.speed or self.acceleration):
            raise ValueError(f"{self.id}: {self.kind.value} nodes are static")

    def state_at(self, t_ms: float) -> tuple[float, float, float, float]:
        """(longitude, latitude, speed, acceleration) under straight-line motion."""
        if self.kind is not NodeKind.VEHICLE or t_ms <= 0:
            return (*self.position, self.speed, self.acceleration)
        t = t_ms / 1000.0
        v, a = self.speed, self.acceleration
        if a < 0:
            t_stop = -v / a
            if t >= t_stop:
                d = v * t_stop + 0.5 * a * t_stop * t_stop
                lon, lat = destination(*self.position, d, self.heading)
                return lon, lat, 0.0, 0.0
        d = v * t + 0.5 * a * t * t
        lon, lat = destination(*self.position, d, self.heading) if d else self.position
        return lon, lat, v + a * t, a

    def report_at(self, t_ms: float) -> VehicleReport:
        lon, lat, v, a = self.state_at(t_ms)
        return VehicleReport(self.vin, GPS(lon, lat), Trajectory(v, a))


@dataclass
class Topology:
    nodes: dict[str, Node]
    profile: NetworkProfile
    base_validation_cost: float = DEFAULT_BASE_COST_MS
    seed: int = 0
    throttle_model: str = "calibrated"
    throttle_table: dict[float, float] = field(default_factory=lambda: dict(CALIBRATED_TABLE))
    policy: ConsensusPolicy = field(default_factory=ConsensusPolicy)
    loss_rate: float = 0.0
    center: tuple[float, float] = DEFAULT_CENTER
    registry: Registry = field(default_factory=Registry)
    ledger: Optional[Ledger] = None  # seeded with the initial validated records
    default_node: str = ""

    def __post_init__(self):
        controllers = [n.id for n in self.nodes.values() if n.kind is NodeKind.CONTROLLER]
        if len(controllers) != 1:
            raise ValueError(f"topology needs exactly one Controller, found {len(controllers)}")
        if self.throttle_model not in THROTTLE_MODELS:
            raise ValueError(f"unknown throttle model {self.throttle_model!r}")
        for n in self.nodes.values():
            if n.id not in self.registry:
                self.registry.register(n.id, n.kind.role)
        if self.ledger is None:
            self.ledger = Ledger(self.registry)
        if not self.default_node:
            self.default_node = controllers[0]

    @property
    def controller(self) -> Node:
        return next(n for n in self.nodes.values() if n.kind is NodeKind.CONTROLLER)

    def participant(self, node_id: str) -> Participant:
        return self.registry.get(node_id)

    def processing_delay(self, node_id: str) -> float:
        return processing_delay(self.base_validation_cost, self.nodes[node_id].cpu_throttle,
                                self.throttle_model, self.throttle_table)

    def vehicles(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is NodeKind.VEHICLE]

    def by_vin(self, vin: str) -> Optional[Node]:
        return next((n for n in self.nodes.values() if n.vin == vin), None)


# ---------------------------------------------------------------------------
# scenario config
# ---------------------------------------------------------------------------


@dataclass
class NodeSpec:
    id: str
    kind: NodeKind
    position: tuple[float, float]
    speed: float = 0.0
    acceleration: float = 0.0
    heading: float = 0.0
    vin: Optional[str] = None
    sensing_range: Optional[float] = None


@dataclass
class ScenarioConfig:
    seed: int = 0
    center: tuple[float, float] = DEFAULT_CENTER
    vehicles: int = 20
    rsus: int = 4
    explicit_nodes: list[NodeSpec] = field(default_factory=list)
    profile: NetworkProfile = PROFILES["wifi"]
    loss_rate: float = 0.0
    base_validation_cost: float = DEFAULT_BASE_COST_MS
    throttle_model: str = "calibrated"
    throttle_table: dict[float, float] = field(default_factory=lambda: dict(CALIBRATED_TABLE))
    throttles: dict[str, float] = field(default_factory=dict)
    offline: list[str] = field(default_factory=list)
    sensing_range: float = DEFAULT_SENSING_RANGE_M
    initial_ledger_records: Optional[int] = None
    policy: ConsensusPolicy = field(default_factory=ConsensusPolicy)
    placement_distance: tuple[float, float] = (15.0, 140.0)
    placement_speed: tuple[float, float] = (5.0, 15.0)
    default_node: str = ""
    attacks: list[Section] = field(default_factory=list)
    source: Optional[Section] = None

    def _error(self, key_path: tuple, message: str) -> ConfigError:
        if self.source is None:
            return ConfigError(message, "<scenario>", None, ".".join(map(str, key_path)))
        sec = Section(self.source.data, self.source.source, key_path[:-1], self.source.lines)
        return sec.error(key_path[-1], message)


_SCENARIO_KEYS = {"seed", "center", "nodes", "network", "compute", "sensing_range_m",
                  "initial_ledger_records", "policy", "policy_file", "offline", "attacks",
                  "placement", "default_node", "intersection", "signal", "demo"}


def parse_scenario(cfg) -> ScenarioConfig:
    """Read a scenario from a YAML path, a mapping or a :class:`Section`."""
    root = cfgmod.as_section(cfg)
    root.check_keys(_SCENARIO_KEYS)
    out = ScenarioConfig(source=root)
    out.seed = root.get("seed", cfgmod.non_negative_int, 0)
    out.center = root.get("center", cfgmod.lonlat, DEFAULT_CENTER)

    nodes = root.section("nodes")
    nodes.check_keys({"vehicles", "rsus", "explicit"})
    out.vehicles = nodes.get("vehicles", cfgmod.non_negative_int, 20)
    out.rsus = nodes.get("rsus", cfgmod.non_negative_int, 4)
    for spec in nodes.sections("explicit"):
        spec.check_keys({"id", "kind", "position", "speed", "acceleration", "heading", "vin", "sensing_range_m"})
        kind = spec.get("kind", NodeKind)
        out.explicit_nodes.append(NodeSpec(
            id=spec.get("id", cfgmod.string),
            kind=kind,
            position=spec.get("position", cfgmod.lonlat),
            speed=spec.get("speed", cfgmod.non_negative_real, 0.0),
            acceleration=spec.get("acceleration", cfgmod.real, 0.0),
            heading=spec.get("heading", cfgmod.real, 0.0),
            vin=spec.get("vin", cfgmod.string, None),
            sensing_range=spec.get("sensing_range_m", cfgmod.non_negative_real, None),
        ))

    net = root.section("network")
    net.check_keys({"profile", "bandwidth_bps", "latency_ms", "loss_rate"})
    name = net.get("profile", cfgmod.string, "wifi")
    if name not in PROFILES and not ("bandwidth_bps" in net and "latency_ms" in net):
        raise net.error("profile", f"unknown profile {name!r} (known: {', '.join(PROFILES)})")
    base = PROFILES.get(name, PROFILES["wifi"])
    try:
        out.profile = NetworkProfile(
            name,
            net.get("bandwidth_bps", cfgmod.positive_real, base.bandwidth_bps),
            net.get("latency_ms", cfgmod.non_negative_real, base.latency_ms),
        )
    except ValueError as exc:
        raise net.error("profile", str(exc)) from None
    out.loss_rate = net.get("loss_rate", cfgmod.non_negative_real, 0.0)
    if out.loss_rate >= 1:
        raise net.error("loss_rate", "must be < 1")

    comp = root.section("compute")
    comp.check_keys({"base_validation_cost_ms", "throttle_model", "throttle_table", "throttles"})
    out.base_validation_cost = comp.get("base_validation_cost_ms", cfgmod.positive_real, DEFAULT_BASE_COST_MS)
    out.throttle_model = comp.get("throttle_model", cfgmod.string, "calibrated")
    if out.throttle_model not in THROTTLE_MODELS:
        raise comp.error("throttle_model", f"must be one of {', '.join(THROTTLE_MODELS)}")
    table = comp.section("throttle_table")
    if table.data:
        parsed = {}
        for k in table.data:
            factor = cfgmod.real(k) if not isinstance(k, str) else float(k)
            parsed[factor] = table.get(k, cfgmod.positive_real)
        if 1.0 not in parsed:
            raise comp.error("throttle_table", "must contain factor 1")
        ordered = [parsed[k] for k in sorted(parsed)]
        if any(b < a for a, b in zip(ordered, ordered[1:])):
            raise comp.error("throttle_table", "response times must not decrease with the factor")
        out.throttle_table = parsed
    throttles = comp.section("throttles")
    for node_id in throttles.data:
        value = throttles.get(node_id, cfgmod.real)
        if value < 1:
            raise throttles.error(node_id, "throttle must be >= 1")
        out.throttles[str(node_id)] = value

    out.sensing_range = root.get("sensing_range_m", cfgmod.non_negative_real, DEFAULT_SENSING_RANGE_M)
    out.initial_ledger_records = root.get("initial_ledger_records", cfgmod.non_negative_int, None)
    if "policy" in root and "policy_file" in root:
        raise root.error("policy_file", "give either policy or policy_file, not both")
    try:
        if "policy_file" in root:
            from .consensus import load_policy

            out.policy = load_policy(root.get("policy_file", cfgmod.string))
        else:
            out.policy = ConsensusPolicy.from_mapping(root.section("policy").data)
    except (PolicyError, OSError) as exc:
        raise root.error("policy_file" if "policy_file" in root else "policy", str(exc)) from None
    offline = root.get("offline", list, [])
    out.offline = [str(x) for x in offline]
    place = root.section("placement")
    place.check_keys({"distance_m", "speed_mps"})
    out.placement_distance = place.get("distance_m", _range_pair, out.placement_distance)
    out.placement_speed = place.get("speed_mps", _range_pair, out.placement_speed)
    out.default_node = root.get("default_node", cfgmod.string, "")
    out.attacks = root.sections("attacks")
    return out


def _range_pair(v) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError("expected [low, high]")
    lo, hi = cfgmod.non_negative_real(v[0]), cfgmod.non_negative_real(v[1])
    if hi < lo:
        raise ValueError("low must not exceed high")
    return lo, hi


def generate_vin(rng: random.Random) -> str:
    return "".join(rng.choice(VIN_ALPHABET) for _ in range(17))


APPROACH_BEARINGS = (0.0, 90.0, 180.0, 270.0)
LANE_WIDTH_M = 3.5


def build_topology(scenario) -> Topology:
    """Place nodes and seed the ledger with the configured validated records.

    Generated ids: ``veh-001``..., ``rsu-1``..., ``ctrl-1``. Vehicles are put
    on the right-hand lane of one of four approaches, driving toward the
    intersection center; RSUs sit 25 m from the center on the diagonals.
    """
    sc = scenario if isinstance(scenario, ScenarioConfig) else parse_scenario(scenario)
    rng = random.Random(sc.seed)
    nodes: dict[str, Node] = {}

    def add(node: Node, key_path: tuple):
        if node.id in nodes:
            raise sc._error(key_path, f"duplicate node id {node.id!r}")
        nodes[node.id] = node

    explicit_ids = {s.id for s in sc.explicit_nodes}
    generated: list[Node] = []
    for i in range(sc.vehicles):
        bearing = rng.choice(APPROACH_BEARINGS)
        dist = rng.uniform(*sc.placement_distance)
        lane = rng.randrange(2)
        lon, lat = destination(*sc.center, dist, bearing)
        lon, lat = destination(lon, lat, LANE_WIDTH_M * (lane + 0.5), (bearing - 90.0) % 360.0)
        generated.append(Node(
            id=f"veh-{i + 1:03d}", kind=NodeKind.VEHICLE, position=(lon, lat),
            speed=round(rng.uniform(*sc.placement_speed), 3), acceleration=round(rng.uniform(-0.5, 0.5), 3),
            heading=(bearing + 180.0) % 360.0, sensing_range=sc.sensing_range, vin=generate_vin(rng),
        ))
    for j in range(sc.rsus):
        bearing = (45.0 + 360.0 * j / max(sc.rsus, 1)) % 360.0
        generated.append(Node(id=f"rsu-{j + 1}", kind=NodeKind.RSU,
                              position=destination(*sc.center, 25.0, bearing), sensing_range=sc.sensing_range))
    if not any(s.kind is NodeKind.CONTROLLER for s in sc.explicit_nodes):
        generated.append(Node(id="ctrl-1", kind=NodeKind.CONTROLLER, position=sc.center,
                              sensing_range=sc.sensing_range))
    for node in generated:
        add(node, ("nodes", "explicit" if node.id in explicit_ids else "vehicles"))
    for i, spec in enumerate(sc.explicit_nodes):
        vin = spec.vin
        if spec.kind is NodeKind.VEHICLE and vin is None:
            vin = generate_vin(rng)
        try:
            node = Node(id=spec.id, kind=spec.kind, position=spec.position, speed=spec.speed,
                        acceleration=spec.acceleration, heading=spec.heading, vin=vin,
                        sensing_range=spec.sensing_range if spec.sensing_range is not None else sc.sensing_range)
        except ValueError as exc:
            raise sc._error(("nodes", "explicit", i), str(exc)) from None
        add(node, ("nodes", "explicit", i, "id"))

    vins = Counter(n.vin for n in nodes.values() if n.vin)
    dup = [v for v, c in vins.items() if c > 1]
    if dup:
        raise sc._error(("nodes", "explicit"), f"duplicate VIN {dup[0]!r}")
    controllers = [n.id for n in nodes.values() if n.kind is NodeKind.CONTROLLER]
    if len(controllers) != 1:
        raise sc._error(("nodes", "explicit"), f"exactly one Controller required, found {len(controllers)}")

    for node_id, factor in sc.throttles.items():
        if node_id not in nodes:
            raise sc._error(("compute", "throttles", node_id), f"unknown node {node_id!r}")
        nodes[node_id].cpu_throttle = factor
    for node_id in sc.offline:
        if node_id not in nodes:
            raise sc._error(("offline",), f"unknown node {node_id!r}")
        nodes[node_id].online = False
    if sc.default_node and sc.default_node not in nodes:
        raise sc._error(("default_node",), f"unknown node {sc.default_node!r}")

    topo = Topology(
        nodes=nodes, profile=sc.profile, base_validation_cost=sc.base_validation_cost, seed=sc.seed,
        throttle_model=sc.throttle_model, throttle_table=dict(sc.throttle_table), policy=sc.policy,
        loss_rate=sc.loss_rate, center=sc.center, default_node=sc.default_node,
    )
    vehicles = topo.vehicles()
    n_records = len(vehicles) if sc.initial_ledger_records is None else sc.initial_ledger_records
    if n_records and not vehicles:
        raise sc._error(("initial_ledger_records",), "records requested but the scenario has no vehicles")
    admin = topo.participant(topo.controller.id)
    for k in range(n_records):
        topo.ledger.append(vehicles[k % len(vehicles)].report_at(0.0), admin, 0.0)
    return topo


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    t: float
    node: str
    kind: str
    detail: dict

    def to_json(self) -> str:
        return '{"t":%s,"node":%s,"kind":%s,"detail":%s}' % (
            json.dumps(self.t), json.dumps(self.node), json.dumps(self.kind),
            json.dumps(self.detail, sort_keys=True, separators=(",", ":")),
        )


@dataclass
class SimulationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final_states: dict[str, dict] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, kind: str) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == kind]

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.records]
        end = self.records[-1].t if self.records else 0.0
        for node_id, state in self.final_states.items():
            lines.append(TraceRecord(end, node_id, "FinalState", state).to_json())
        return "".join(line + "\n" for line in lines)


@dataclass(order=True)
class Event:
    due_time: float
    ordinal: int
    kind: EventKind = field(compare=False)
    node: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class _Broadcast:
    bid: int
    record: BroadcastRecord
    attack: Optional[dict]
    refs: list[ReferenceObservation]
    committed: bool = False


class Simulation:
    def __init__(self, topology: Topology):
        self.topology = topology
        self.clock = 0.0
        self._queue: list[Event] = []
        self._ordinal = 0
        self._rng = random.Random(topology.seed)
        self._broadcasts: dict[int, _Broadcast] = {}
        self._pending: dict[str, dict[int, LedgerEntry]] = {nid: {} for nid in topology.nodes}
        self.trace = SimulationTrace()
        self.states: dict[str, NodeState] = {
            nid: NodeState(nid, topology.participant(nid), topology.ledger.copy(), Blacklist(), topology.policy)
            for nid in topology.nodes
        }
        ctrl = topology.controller.id
        self.agreed = NodeState(ctrl, topology.participant(ctrl), topology.ledger.copy(), Blacklist(),
                                topology.policy)
        self.stale: set[str] = {n.id for n in topology.nodes.values() if not n.online}
        self.attack_seq = 0  # labels successive attack runs

    # -- helpers -----------------------------------------------------------

    @property
    def now(self) -> float:
        return self.clock

    def node(self, node_id: str) -> Node:
        try:
            return self.topology.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def replica(self, node_id: str) -> NodeState:
        self.node(node_id)
        return self.states[node_id]

    def processing_delay(self, node_id: str) -> float:
        return self.topology.processing_delay(node_id)

    def _record(self, node: str, kind: str, **detail) -> None:
        self.trace.records.append(TraceRecord(self.clock, node, kind, detail))

    def schedule(self, at: float, kind: EventKind, node: str, payload: Optional[dict] = None) -> Event:
        ev = Event(max(at, self.clock), self._ordinal, kind, node, payload or {})
        self._ordinal += 1
        heapq.heappush(self._queue, ev)
        return ev

    def _lost(self) -> bool:
        return self.topology.loss_rate > 0 and self._rng.random() < self.topology.loss_rate

    def pending_events(self) -> int:
        return len(self._queue)

    # -- references ----------------------------------------------------------

    def references_for(self, record: BroadcastRecord) -> list[ReferenceObservation]:
        """Observations of the broadcaster's true state by in-range RSUs and vehicles."""
        origin = self.topology.nodes.get(record.origin_node)
        if origin is None or origin.kind is not NodeKind.VEHICLE:
            return []
        t = record.broadcast_time
        lon, lat, v, a = origin.state_at(t)
        refs = []
        for obs in self.topology.nodes.values():
            if obs.id == origin.id or not obs.online:
                continue
            if obs.kind is NodeKind.RSU:
                kind = ObserverKind.RSU
            elif obs.kind is NodeKind.VEHICLE:
                kind = ObserverKind.WITNESS
            else:
                continue
            olon, olat, _, _ = obs.state_at(t)
            if haversine_m(olon, olat, lon, lat) <= obs.sensing_range:
                refs.append(ReferenceObservation(obs.id, kind, origin.vin, GPS(lon, lat), v, a, t))
        return refs

    # -- operations ------------------------------------------------------------

    def broadcast(self, origin: str, report: Optional[VehicleReport] = None,
                  attack: Optional[dict] = None) -> int:
        """Broadcast ``report`` (default: the origin's true state) now."""
        node = self.node(origin)
        if not node.online:
            raise OriginOffline(origin)
        if report is None:
            report = node.report_at(self.clock)
        record = BroadcastRecord(report, origin, self.clock)
        bid = len(self._broadcasts)
        b = _Broadcast(bid, record, attack, self.references_for(record))
        self._broadcasts[bid] = b
        delay = transmission_delay(self.topology.profile, report_size(report))
        recipients = 0
        for nid, n in self.topology.nodes.items():
            if nid == origin:
                continue
            if not n.online:
                self.stale.add(nid)
                continue
            recipients += 1
            if self._lost():
                continue
            self.schedule(self.clock + delay, EventKind.DELIVER, nid, {"bid": bid})
        detail = {"bid": bid, "vin": report.vin, "recipients": recipients, "refs": len(b.refs)}
        if attack:
            detail["attack"] = attack
        self._record(origin, EventKind.BROADCAST.value, **detail)
        return bid

    def schedule_broadcast(self, at: float, origin: str, report: Optional[VehicleReport] = None,
                           attack: Optional[dict] = None) -> Event:
        self.node(origin)
        return self.schedule(at, EventKind.BROADCAST, origin, {"report": report, "attack": attack})

    def schedule_attack(self, at: float, node: str, action: str, **payload) -> Event:
        self.node(node)
        return self.schedule(at, EventKind.ATTACK_INJECT, node, {"action": action, **payload})

    def set_node_online(self, node_id: str, online: bool) -> None:
        node = self.node(node_id)
        if node.online == online:
            return
        node.online = online
        if not online:
            self.stale.add(node_id)
            self._record(node_id, "NodeOffline")
            return
        self._record(node_id, "NodeOnline")
        self._catch_up(node_id)

    def _catch_up(self, node_id: str) -> None:
        """Restore a reconnecting node's replicas to the state most peers hold."""
        peers = [nid for nid, n in self.topology.nodes.items() if n.online and nid != node_id]
        if peers:
            votes = Counter(self.state_key(nid) for nid in peers)
            best = max(votes.items(), key=lambda kv: (kv[1], kv[0]))[0]
            donor = next(self.states[nid] for nid in peers if self.state_key(nid) == best)
        else:
            donor = self.agreed
        local = self.states[node_id]
        local.ledger = donor.ledger.copy()
        local.blacklist = donor.blacklist.copy()
        self._pending[node_id].clear()
        self.stale.discard(node_id)
        self._record(node_id, "CatchUp", entries=len(local.ledger),
                     merkle_root=local.ledger.merkle_root.hex(), blacklist=len(local.blacklist))

    def state_key(self, node_id: str) -> tuple:
        st = self.states[node_id]
        return (len(st.ledger), st.ledger.merkle_root.hex(),
                tuple((e.vin, e.first_offense_time, e.offense_count) for e in st.blacklist.entries()))

    def run(self, until: Optional[float] = None) -> SimulationTrace:
        while self._queue:
            if until is not None and self._queue[0].due_time > until:
                break
            ev = heapq.heappop(self._queue)
            self.clock = ev.due_time
            self._dispatch(ev)
        if until is not None and until > self.clock:
            self.clock = until
        self.trace.final_states = self.final_states()
        return self.trace

    def final_states(self) -> dict[str, dict]:
        out = {}
        for nid, st in self.states.items():
            out[nid] = {
                "online": self.topology.nodes[nid].online,
                "entries": len(st.ledger),
                "merkle_root": st.ledger.merkle_root.hex(),
                "blacklist": [[e.vin, e.first_offense_time, e.offense_count] for e in st.blacklist.entries()],
            }
        return out

    # -- event handlers ----------------------------------------------------------

    def _dispatch(self, ev: Event) -> None:
        handler = {
            EventKind.BROADCAST: self._on_broadcast,
            EventKind.DELIVER: self._on_deliver,
            EventKind.VALIDATE_DONE: self._on_validate_done,
            EventKind.REPLICATE_ENTRY: self._on_replicate_entry,
            EventKind.REPLICATE_BLACKLIST: self._on_replicate_blacklist,
            EventKind.ATTACK_INJECT: self._on_attack,
        }[ev.kind]
        handler(ev)

    def _on_broadcast(self, ev: Event) -> None:
        if not self.topology.nodes[ev.node].online:
            self._record(ev.node, EventKind.BROADCAST.value, status="origin offline", recipients=0,
                         **({"attack": ev.payload["attack"]} if ev.payload.get("attack") else {}))
            return
        self.broadcast(ev.node, ev.payload.get("report"), ev.payload.get("attack"))

    def _on_deliver(self, ev: Event) -> None:
        if not self.topology.nodes[ev.node].online:
            self.stale.add(ev.node)
            return
        b = self._broadcasts[ev.payload["bid"]]
        self._record(ev.node, EventKind.DELIVER.value, bid=b.bid, origin=b.record.origin_node)
        pd = self.processing_delay(ev.node)
        self.schedule(self.clock + pd, EventKind.VALIDATE_DONE, ev.node,
                      {"bid": b.bid, "received_at": self.clock, "response_ms": pd})

    def _on_validate_done(self, ev: Event) -> None:
        if "tamper" in ev.payload:
            self._record(ev.node, EventKind.VALIDATE_DONE.value, **ev.payload["tamper"],
                         response_ms=ev.payload["response_ms"])
            return
        b = self._broadcasts[ev.payload["bid"]]
        state = self.states[ev.node]
        blacklisted = b.record.vin in state.blacklist
        verdict = validate(b.record, () if blacklisted else b.refs, state.blacklist, state.policy)
        steps = 1 if blacklisted else 3 + len(b.refs)
        detail = {"bid": b.bid, "verdict": verdict.decision.value, "matched": verdict.matched_refs,
                  "mismatched": verdict.mismatched_refs, "steps": steps, "response_ms": ev.payload["response_ms"],
                  "vin": b.record.vin}
        if b.attack:
            detail["attack"] = b.attack
        self._record(ev.node, EventKind.VALIDATE_DONE.value, **detail)
        if not b.committed:
            b.committed = True
            self._commit(ev.node, b)

    def _commit(self, node_id: str, b: _Broadcast) -> None:
        view = NodeState(node_id, self.topology.participant(node_id), self.agreed.ledger,
                         self.agreed.blacklist, self.agreed.policy)
        outcome = process_broadcast(view, b.record, lambda _record: b.refs, self.clock)
        if outcome.entry is not None:
            size = len(entry_to_json(outcome.entry).encode())
            self._fan_out(node_id, size, EventKind.REPLICATE_ENTRY, {"entry": outcome.entry})
        elif outcome.blacklisted:
            entry = self.agreed.blacklist.get(b.record.vin)
            size = len(json.dumps([entry.vin, entry.first_offense_time]).encode())
            self._fan_out(node_id, size, EventKind.REPLICATE_BLACKLIST,
                          {"vin": entry.vin, "time": self.clock})

    def _fan_out(self, origin: str, size: int, kind: EventKind, payload: dict) -> None:
        delay = transmission_delay(self.topology.profile, size)
        for nid, n in self.topology.nodes.items():
            if not n.online:
                self.stale.add(nid)
                continue
            if nid != origin and self._lost():
                continue
            self.schedule(self.clock if nid == origin else self.clock + delay, kind, nid, payload)

    def _on_replicate_entry(self, ev: Event) -> None:
        if not self.topology.nodes[ev.node].online:
            self.stale.add(ev.node)
            return
        entry: LedgerEntry = ev.payload["entry"]
        ledger = self.states[ev.node].ledger
        pending = self._pending[ev.node]
        pending[entry.record_id] = entry
        status = "buffered"
        try:
            while len(ledger) + 1 in pending:
                ledger.apply_replicated(pending.pop(len(ledger) + 1))
                status = "applied"
            for rid in [r for r in pending if r <= len(ledger)]:
                del pending[rid]
        except ReplicationError as exc:
            status = f"rejected: {exc}"
            self.stale.add(ev.node)
        self._record(ev.node, EventKind.REPLICATE_ENTRY.value, record_id=entry.record_id,
                     entry_hash=entry.entry_hash.hex(), status=status)

    def _on_replicate_blacklist(self, ev: Event) -> None:
        if not self.topology.nodes[ev.node].online:
            self.stale.add(ev.node)
            return
        e = self.states[ev.node].blacklist.add(ev.payload["vin"], ev.payload["time"])
        self._record(ev.node, EventKind.REPLICATE_BLACKLIST.value, vin=e.vin, offense_count=e.offense_count)

    def _on_attack(self, ev: Event) -> None:
        p = ev.payload
        attack = p.get("attack") or {}
        if p["action"] == "spoof":
            node = self.topology.nodes[ev.node]
            if not node.online:
                self._record(ev.node, EventKind.ATTACK_INJECT.value, action="spoof", status="origin offline",
                             attack=attack)
                return
            self._record(ev.node, EventKind.ATTACK_INJECT.value, action="spoof", attack=attack)
            report = p["falsify"](node.report_at(self.clock)) if p.get("falsify") else node.report_at(self.clock)
            self.broadcast(ev.node, report, attack)
        elif p["action"] == "modify":
            record_id = p["record_id"]
            self._record(ev.node, EventKind.ATTACK_INJECT.value, action="modify", record_id=record_id,
                         attack=attack)
            state = self.states[ev.node]
            try:
                state.ledger.attempt_modify(record_id, p.get("new_payload"), state.participant, self.clock)
            except ImmutableLedger as exc:
                warning = str(exc)
            else:  # pragma: no cover - attempt_modify always raises
                raise AssertionError("ledger accepted a modification")
            pd = self.processing_delay(ev.node)
            self.schedule(self.clock + pd, EventKind.VALIDATE_DONE, ev.node, {
                "tamper": {"verdict": "ImmutableLedger", "record_id": record_id, "attack": attack,
                           "received_at": self.clock, "warning": warning},
                "response_ms": pd,
            })
        else:
            raise ValueError(f"unknown attack action {p['action']!r}")


# functional API ------------------------------------------------------------


def broadcast(sim: Simulation, origin: str, message: Optional[VehicleReport] = None,
              attack: Optional[dict] = None) -> int:
    return sim.broadcast(origin, message, attack)


def run(sim: Simulation, until: Optional[float] = None) -> SimulationTrace:
    return sim.run(until)


def set_node_online(sim: Simulation, node_id: str, online: bool) -> None:
    sim.set_node_online(node_id, online)


def replicas_agree(sim: Simulation, include_offline: bool = False) -> bool:
    keys = {sim.state_key(nid) for nid, n in sim.topology.nodes.items() if include_offline or n.online}
    return len(keys) <= 1
