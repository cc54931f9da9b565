"""Signal-controller side: arrival table from the validated ledger, a
proportional-demand signal planner and a point-queue intersection model.

The planner is a deliberately simple stand-in for an adaptive controller: it
is enough to show that one poisoned arrival-table row shifts green time and
raises delay for real traffic, while a table built only from ledger records
is unaffected.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import config as cfgmod
from .config import Section
from .consensus import ConsensusPolicy
from .geo import angle_diff_deg, destination, haversine_m, initial_bearing_deg
from .ledger import GPS, Ledger, Trajectory, VehicleReport
from .netsim import (
    DEFAULT_CENTER,
    PROFILES,
    NetworkProfile,
    Node,
    NodeKind,
    Simulation,
    Topology,
    generate_vin,
    parse_scenario,
)

QUEUED = math.inf  # estimated arrival of a (nearly) stopped vehicle


@dataclass(frozen=True)
class Approach:
    name: str
    bearing: float  # compass bearing from the center out along this arm
    lanes: int = 2
    stopline_m: float = 10.0
    extent_m: float = 400.0


@dataclass(frozen=True)
class IntersectionGeometry:
    center: tuple[float, float]
    approaches: tuple[Approach, ...]
    sector_half_width: float = 30.0
    lane_width: float = 3.5

    def __post_init__(self):
        object.__setattr__(self, "approaches", tuple(self.approaches))
        if not 2 <= len(self.approaches) <= 8:
            raise ValueError("an intersection has 2 to 8 approaches")
        names = [a.name for a in self.approaches]
        if len(set(names)) != len(names):
            raise ValueError("approach names must be distinct")
        bearings = [round(a.bearing % 360.0, 9) for a in self.approaches]
        if len(set(bearings)) != len(bearings):
            raise ValueError("approach headings must be distinct")
        for a in self.approaches:
            if a.lanes < 1:
                raise ValueError(f"approach {a.name}: lanes must be >= 1")
            if not 0 <= a.stopline_m < a.extent_m:
                raise ValueError(f"approach {a.name}: need 0 <= stopline < extent")

    def approach(self, name: str) -> Approach:
        for a in self.approaches:
            if a.name == name:
                return a
        raise KeyError(name)

    def position(self, approach: str, lane: int, distance_to_stopline: float) -> tuple[float, float]:
        """Point in the middle of an inbound lane, ``distance_to_stopline`` upstream."""
        a = self.approach(approach)
        lon, lat = destination(*self.center, a.stopline_m + distance_to_stopline, a.bearing)
        return destination(lon, lat, self.lane_width * (lane + 0.5), (a.bearing - 90.0) % 360.0)


def four_way(center=DEFAULT_CENTER, lanes: int = 2, extent_m: float = 400.0) -> IntersectionGeometry:
    return IntersectionGeometry(center, tuple(
        Approach(name, bearing, lanes, 10.0, extent_m)
        for name, bearing in (("N", 0.0), ("E", 90.0), ("S", 180.0), ("W", 270.0))
    ))


@dataclass(frozen=True)
class ArrivalRecord:
    vin: str
    approach: str
    lane: int
    distance_to_stopline: float
    speed: float
    estimated_arrival: float  # seconds; QUEUED for stopped vehicles


@dataclass(frozen=True)
class ArrivalTable:
    records: tuple[ArrivalRecord, ...] = ()
    skipped: int = 0  # vehicles outside every approach

    def __len__(self) -> int:
        return len(self.records)

    def vins(self) -> list[str]:
        return [r.vin for r in self.records]


def locate(report: VehicleReport, geometry: IntersectionGeometry) -> Optional[tuple[str, int, float]]:
    """(approach, lane, distance to stop line) or None when on no approach."""
    lon, lat = report.gps.longitude, report.gps.latitude
    d = haversine_m(*geometry.center, lon, lat)
    if d == 0:
        return None
    bearing = initial_bearing_deg(*geometry.center, lon, lat)
    for a in geometry.approaches:
        diff = angle_diff_deg(bearing, a.bearing)
        if abs(diff) > geometry.sector_half_width:
            continue
        along = d * math.cos(math.radians(diff))
        lateral = -d * math.sin(math.radians(diff))
        if not a.stopline_m <= along <= a.extent_m:
            return None
        lane = min(a.lanes - 1, max(0, int(lateral // geometry.lane_width)))
        return a.name, lane, along - a.stopline_m
    return None


def _table(reports: Iterable[VehicleReport], geometry: IntersectionGeometry,
           stop_threshold: float) -> ArrivalTable:
    rows, skipped = [], 0
    for rep in reports:
        where = locate(rep, geometry)
        if where is None:
            skipped += 1
            continue
        approach, lane, dist = where
        speed = rep.trajectory.speed
        eta = dist / speed if speed >= stop_threshold else QUEUED
        rows.append(ArrivalRecord(rep.vin, approach, lane, dist, speed, eta))
    rows.sort(key=lambda r: (r.estimated_arrival, r.vin))
    return ArrivalTable(tuple(rows), skipped)


def build_arrival_table(
    ledger: Ledger,
    geometry: IntersectionGeometry,
    now: float,
    window: float = 60.0,
    stop_threshold: float = 0.5,
) -> ArrivalTable:
    """Arrival table from ledger entries no older than ``window`` seconds at
    simulated time ``now`` (ms). The newest entry per VIN wins."""
    latest: dict[str, VehicleReport] = {}
    for entry in ledger.entries:
        p = entry.payload
        if p.timestamp < now - window * 1000.0 or p.timestamp > now:
            continue
        latest[p.vin] = p.report
    return _table(latest.values(), geometry, stop_threshold)


def arrival_table_from_broadcasts(reports: Iterable[VehicleReport], geometry: IntersectionGeometry,
                                  stop_threshold: float = 0.5) -> ArrivalTable:
    """Unprotected path: raw broadcast data straight into the table."""
    latest = {r.vin: r for r in reports}
    return _table(latest.values(), geometry, stop_threshold)


# ---------------------------------------------------------------------------
# planner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalParams:
    phases: tuple[tuple[str, ...], ...]
    cycle_length: float = 60.0
    lost_time: float = 2.5  # per phase: yellow + all-red
    min_green: float = 5.0
    max_green: float = 50.0
    horizon: Optional[float] = None  # defaults to the cycle length

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(tuple(p) for p in self.phases))
        if not self.phases:
            raise ValueError("at least one phase is required")
        if not 0 <= self.min_green <= self.max_green:
            raise ValueError("need 0 <= min_green <= max_green")
        if self.cycle_length <= 0 or self.lost_time < 0:
            raise ValueError("cycle length must be > 0 and lost time >= 0")

    @property
    def green_budget(self) -> float:
        return self.cycle_length - self.lost_time * len(self.phases)


@dataclass(frozen=True)
class PhaseTiming:
    approaches: tuple[str, ...]
    green: float
    lost_time: float
    demand: int


@dataclass(frozen=True)
class SignalPlan:
    phases: tuple[PhaseTiming, ...]

    @property
    def cycle_length(self) -> float:
        return sum(p.green + p.lost_time for p in self.phases)

    @property
    def greens(self) -> tuple[float, ...]:
        return tuple(p.green for p in self.phases)


def _demand(table: ArrivalTable, approaches: Sequence[str], horizon: float) -> int:
    return sum(1 for r in table.records
               if r.approach in approaches and (r.estimated_arrival == QUEUED or r.estimated_arrival <= horizon))


def plan_signals(table: ArrivalTable, params: SignalParams) -> SignalPlan:
    """Split the green budget in proportion to predicted demand.

    Demand counts queued vehicles plus arrivals within the horizon. Phases
    without demand get ``min_green``; the budget is then shared among the
    others proportionally, clamping to ``[min_green, max_green]`` and
    redistributing what clamping frees or consumes. With no demand anywhere
    every phase runs at ``min_green``.
    """
    horizon = params.cycle_length if params.horizon is None else params.horizon
    demand = [_demand(table, ph, horizon) for ph in params.phases]
    n = len(demand)
    greens: list[Optional[float]] = [params.min_green if d == 0 else None for d in demand]
    if any(d > 0 for d in demand):
        while True:
            free = [i for i in range(n) if greens[i] is None]
            if not free:
                break
            remaining = params.green_budget - sum(g for g in greens if g is not None)
            weight = sum(demand[i] for i in free)
            share = {i: remaining * demand[i] / weight for i in free}
            over = [i for i in free if share[i] > params.max_green]
            under = [i for i in free if share[i] < params.min_green]
            if over:
                for i in over:
                    greens[i] = params.max_green
            elif under:
                for i in under:
                    greens[i] = params.min_green
            else:
                for i in free:
                    greens[i] = share[i]
    return SignalPlan(tuple(
        PhaseTiming(ph, g, params.lost_time, d) for ph, g, d in zip(params.phases, greens, demand)
    ))


# ---------------------------------------------------------------------------
# point-queue intersection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueArrival:
    vin: str
    approach: str
    lane: int
    arrival_time: float  # s, unimpeded arrival at the stop line


@dataclass(frozen=True)
class QueueParams:
    saturation_flow: float = 1800.0  # veh/h/lane

    @property
    def headway(self) -> float:
        return 3600.0 / self.saturation_flow


@dataclass(frozen=True)
class DelayMetrics:
    per_vehicle: dict = field(default_factory=dict)  # vin -> delay (s)
    max_queue: dict = field(default_factory=dict)  # approach -> vehicles

    @property
    def total_delay(self) -> float:
        return math.fsum(self.per_vehicle.values())

    def to_dict(self) -> dict:
        return {"total_delay_s": self.total_delay,
                "max_queue": dict(sorted(self.max_queue.items())),
                "vehicles": len(self.per_vehicle)}


def _green_windows(plan: SignalPlan) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    t = 0.0
    for ph in plan.phases:
        for a in ph.approaches:
            out.setdefault(a, []).append((t, t + ph.green))
        t += ph.green + ph.lost_time
    return out


def _next_green(t: float, windows: list[tuple[float, float]], cycle: float) -> float:
    k = math.floor(t / cycle)
    while True:
        base = k * cycle
        for start, end in windows:
            if end <= start:
                continue
            if base + end > t:
                return max(t, base + start)
        k += 1


def simulate_intersection(plan: SignalPlan, true_arrivals: Iterable[TrueArrival],
                          params: QueueParams = QueueParams()) -> DelayMetrics:
    """Vehicles join per-lane queues at their true arrival times and leave one
    saturation headway apart while their phase is green. Starts at the
    beginning of phase 0, repeating the plan cyclically."""
    windows = _green_windows(plan)
    cycle = plan.cycle_length
    lanes: dict[tuple[str, int], list[TrueArrival]] = {}
    for v in true_arrivals:
        if v.approach not in windows or not any(e > s for s, e in windows[v.approach]):
            raise ValueError(f"approach {v.approach!r} is never served by the plan")
        lanes.setdefault((v.approach, v.lane), []).append(v)
    delays: dict[str, float] = {}
    spans: dict[str, list[tuple[float, float]]] = {}
    for (approach, _lane), vehicles in sorted(lanes.items()):
        vehicles.sort(key=lambda v: (v.arrival_time, v.vin))
        last = -math.inf
        for v in vehicles:
            t = _next_green(max(v.arrival_time, last + params.headway), windows[approach], cycle)
            last = t
            delays[v.vin] = t - v.arrival_time
            spans.setdefault(approach, []).append((v.arrival_time, t))
    max_queue = {}
    for approach, iv in spans.items():
        max_queue[approach] = max((sum(1 for a, d in iv if a <= t < d) for t, _ in iv), default=0)
    for a in windows:
        max_queue.setdefault(a, 0)
    return DelayMetrics(dict(sorted(delays.items())), max_queue)


# ---------------------------------------------------------------------------
# congestion attack demo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemoVehicle:
    id: str
    approach: str
    lane: int
    distance: float  # to the stop line, m
    speed: float
    vin: Optional[str] = None


@dataclass(frozen=True)
class DemoAttacker:
    id: str
    position: tuple[float, float]  # (bearing deg, distance m) from the center: where it really is
    claimed: DemoVehicle  # what it broadcasts


@dataclass
class DemoScenario:
    geometry: IntersectionGeometry
    signal: SignalParams
    vehicles: list[DemoVehicle]
    attacker: Optional[DemoAttacker]
    rsu_positions: list[tuple[float, float]]  # (bearing deg, distance m) from the center
    queue: QueueParams = QueueParams()
    policy: ConsensusPolicy = ConsensusPolicy()
    profile: NetworkProfile = PROFILES["wifi"]
    sensing_range: float = 150.0
    stop_threshold: float = 0.5
    window: float = 60.0
    seed: int = 0


def canonical_demo_scenario(center=DEFAULT_CENTER) -> DemoScenario:
    """Busy north-south street, light east-west traffic, one parked attacker
    claiming to be a late arrival on the east approach."""
    geometry = four_way(center)
    V = DemoVehicle
    vehicles = [
        V("n1", "N", 0, 20.0, 10.0), V("n2", "N", 1, 60.0, 10.0), V("n3", "N", 0, 120.0, 10.0),
        V("n4", "N", 1, 160.0, 8.0), V("n5", "N", 0, 224.0, 8.0), V("n6", "N", 1, 280.0, 8.0),
        V("s1", "S", 0, 40.0, 10.0), V("s2", "S", 1, 150.0, 10.0),
        V("e1", "E", 0, 30.0, 10.0), V("e2", "E", 1, 100.0, 10.0),
        V("w1", "W", 0, 50.0, 10.0), V("w2", "W", 0, 150.0, 5.0),
    ]
    attacker = DemoAttacker("spoofer", (45.0, 40.0), V("spoofer", "E", 0, 250.0, 5.0))
    rsus = [(45.0, 25.0), (135.0, 25.0), (225.0, 25.0), (315.0, 25.0),
            (0.0, 200.0), (90.0, 200.0), (180.0, 200.0), (270.0, 200.0)]
    return DemoScenario(
        geometry=geometry,
        signal=SignalParams(phases=(("N", "S"), ("E", "W"))),
        vehicles=vehicles,
        attacker=attacker,
        rsu_positions=rsus,
        seed=7,
    )


@dataclass
class DemoReport:
    baseline: DelayMetrics
    unprotected: DelayMetrics
    protected: DelayMetrics
    plans: dict
    tables: dict
    attacker_verdict: Optional[str]
    attacker_blacklisted: bool
    vehicle_ids: dict

    @property
    def tables_equal(self) -> bool:
        return self.tables["protected"] == self.tables["baseline"]

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "unprotected": self.unprotected.to_dict(),
            "protected": self.protected.to_dict(),
            "greens": {k: list(p.greens) for k, p in self.plans.items()},
            "arrival_table_size": {k: len(t) for k, t in self.tables.items()},
            "protected_table_equals_baseline": self.tables_equal,
            "attacker": {"verdict": self.attacker_verdict, "blacklisted": self.attacker_blacklisted},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def delays_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("vehicle", "vin", "baseline_s", "unprotected_s", "protected_s"))
        for vin in self.baseline.per_vehicle:
            w.writerow((self.vehicle_ids.get(vin, ""), vin, repr(self.baseline.per_vehicle[vin]),
                        repr(self.unprotected.per_vehicle[vin]), repr(self.protected.per_vehicle[vin])))
        return buf.getvalue()


def _demo_topology(sc: DemoScenario, vins: dict[str, str]) -> Topology:
    g = sc.geometry
    nodes: dict[str, Node] = {}
    for v in sc.vehicles:
        a = g.approach(v.approach)
        nodes[v.id] = Node(v.id, NodeKind.VEHICLE, g.position(v.approach, v.lane, v.distance), speed=v.speed,
                           heading=(a.bearing + 180.0) % 360.0, sensing_range=sc.sensing_range, vin=vins[v.id])
    if sc.attacker is not None:
        bearing, dist = sc.attacker.position
        nodes[sc.attacker.id] = Node(sc.attacker.id, NodeKind.VEHICLE, destination(*g.center, dist, bearing),
                                     sensing_range=sc.sensing_range, vin=vins[sc.attacker.id])
    for j, (bearing, dist) in enumerate(sc.rsu_positions):
        nodes[f"rsu-{j + 1}"] = Node(f"rsu-{j + 1}", NodeKind.RSU, destination(*g.center, dist, bearing),
                                     sensing_range=sc.sensing_range)
    nodes["ctrl-1"] = Node("ctrl-1", NodeKind.CONTROLLER, g.center, sensing_range=sc.sensing_range)
    return Topology(nodes=nodes, profile=sc.profile, seed=sc.seed, policy=sc.policy, center=g.center)


def _assign_vins(sc: DemoScenario) -> dict[str, str]:
    import random

    rng = random.Random(sc.seed)
    out = {}
    people = list(sc.vehicles) + ([sc.attacker.claimed] if sc.attacker else [])
    for v in people:
        out[v.id] = v.vin or generate_vin(rng)
    if sc.attacker is not None:
        out[sc.attacker.id] = sc.attacker.claimed.vin or out[sc.attacker.claimed.id]
    return out


def congestion_attack_demo(sc: DemoScenario) -> DemoReport:
    """Baseline (attacker silent), unprotected (spoof goes straight into the
    table) and protected (everything passes consensus first) runs."""
    vins = _assign_vins(sc)
    g = sc.geometry

    truthful_reports = []
    topo = _demo_topology(sc, vins)
    for v in sc.vehicles:
        truthful_reports.append(topo.nodes[v.id].report_at(0.0))
    spoof_report = None
    if sc.attacker is not None:
        c = sc.attacker.claimed
        lon, lat = g.position(c.approach, c.lane, c.distance)
        spoof_report = VehicleReport(vins[sc.attacker.id], GPS(lon, lat), Trajectory(c.speed, 0.0))

    def protected_run(with_attack: bool):
        sim = Simulation(_demo_topology(sc, vins))
        for v in sc.vehicles:
            sim.broadcast(v.id)
        bid = None
        if with_attack and spoof_report is not None:
            bid = sim.broadcast(sc.attacker.id, spoof_report, {"id": "isig-spoof", "attacker": sc.attacker.id,
                                                              "round": 1, "attempt": 1})
        sim.run()
        table = build_arrival_table(sim.agreed.ledger, g, sim.clock, sc.window, sc.stop_threshold)
        verdict = None
        if bid is not None:
            verdicts = [r.detail["verdict"] for r in sim.trace.of_kind("ValidateDone") if r.detail.get("bid") == bid]
            verdict = verdicts[0] if verdicts else None
        return sim, table, verdict

    _, base_table, _ = protected_run(False)
    sim, prot_table, verdict = protected_run(True)
    raw = truthful_reports + ([spoof_report] if spoof_report is not None else [])
    unprot_table = arrival_table_from_broadcasts(raw, g, sc.stop_threshold)

    truth = _table(truthful_reports, g, sc.stop_threshold)
    arrivals = [TrueArrival(r.vin, r.approach, r.lane, 0.0 if r.estimated_arrival == QUEUED else r.estimated_arrival)
                for r in truth.records]
    tables = {"baseline": base_table, "unprotected": unprot_table, "protected": prot_table}
    plans = {k: plan_signals(t, sc.signal) for k, t in tables.items()}
    metrics = {k: simulate_intersection(p, arrivals, sc.queue) for k, p in plans.items()}
    attacker_vin = vins.get(sc.attacker.id) if sc.attacker else None
    return DemoReport(
        baseline=metrics["baseline"], unprotected=metrics["unprotected"], protected=metrics["protected"],
        plans=plans, tables=tables, attacker_verdict=verdict,
        attacker_blacklisted=bool(attacker_vin and attacker_vin in sim.agreed.blacklist),
        vehicle_ids={vin: vid for vid, vin in vins.items()},
    )


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _vehicle(sec: Section, geometry: IntersectionGeometry, default_id: Optional[str] = None) -> DemoVehicle:
    sec.check_keys({"id", "approach", "lane", "distance_m", "speed_mps", "vin"})
    approach = sec.get("approach", cfgmod.string)
    try:
        a = geometry.approach(approach)
    except KeyError:
        raise sec.error("approach", f"unknown approach {approach!r}") from None
    lane = sec.get("lane", cfgmod.non_negative_int, 0)
    if lane >= a.lanes:
        raise sec.error("lane", f"approach {approach} has {a.lanes} lanes")
    return DemoVehicle(
        id=sec.get("id", cfgmod.string, default_id),
        approach=approach, lane=lane,
        distance=sec.get("distance_m", cfgmod.non_negative_real),
        speed=sec.get("speed_mps", cfgmod.non_negative_real),
        vin=sec.get("vin", cfgmod.string, None),
    )


def _polar(v) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError("expected [bearing_deg, distance_m]")
    return cfgmod.real(v[0]), cfgmod.non_negative_real(v[1])


def parse_demo_scenario(cfg) -> DemoScenario:
    root = cfgmod.as_section(cfg)
    base = parse_scenario(root)
    inter = root.section("intersection")
    inter.check_keys({"approaches", "sector_half_width_deg", "lane_width_m"})
    approaches = []
    for sec in inter.sections("approaches"):
        sec.check_keys({"name", "bearing_deg", "lanes", "stopline_m", "extent_m"})
        approaches.append(Approach(
            sec.get("name", cfgmod.string), sec.get("bearing_deg", cfgmod.real),
            sec.get("lanes", cfgmod.positive_int, 2), sec.get("stopline_m", cfgmod.non_negative_real, 10.0),
            sec.get("extent_m", cfgmod.positive_real, 400.0),
        ))
    try:
        geometry = (IntersectionGeometry(base.center, tuple(approaches),
                                         inter.get("sector_half_width_deg", cfgmod.positive_real, 30.0),
                                         inter.get("lane_width_m", cfgmod.positive_real, 3.5))
                    if approaches else four_way(base.center))
    except ValueError as exc:
        raise inter.error("approaches", str(exc)) from None

    sig = root.section("signal")
    sig.check_keys({"phases", "cycle_s", "lost_time_s", "min_green_s", "max_green_s", "horizon_s",
                    "saturation_flow_vphpl", "stop_threshold_mps", "window_s"})
    phases = sig.get("phases", list, [["N", "S"], ["E", "W"]])
    names = {a.name for a in geometry.approaches}
    for ph in phases:
        if not isinstance(ph, list) or not ph or any(p not in names for p in ph):
            raise sig.error("phases", f"phase {ph!r} must list known approaches {sorted(names)}")
    try:
        signal = SignalParams(
            phases=tuple(tuple(p) for p in phases),
            cycle_length=sig.get("cycle_s", cfgmod.positive_real, 60.0),
            lost_time=sig.get("lost_time_s", cfgmod.non_negative_real, 2.5),
            min_green=sig.get("min_green_s", cfgmod.non_negative_real, 5.0),
            max_green=sig.get("max_green_s", cfgmod.positive_real, 50.0),
            horizon=sig.get("horizon_s", cfgmod.positive_real, None),
        )
    except ValueError as exc:
        raise sig.error(None, str(exc)) from None

    demo = root.section("demo", required=True)
    demo.check_keys({"vehicles", "attacker", "rsus"})
    vehicles = [_vehicle(s, geometry) for s in demo.sections("vehicles")]
    ids = [v.id for v in vehicles]
    if len(set(ids)) != len(ids):
        raise demo.error("vehicles", "duplicate vehicle id")
    attacker = None
    if "attacker" in demo:
        att = demo.section("attacker")
        att.check_keys({"id", "position", "claimed"})
        aid = att.get("id", cfgmod.string, "spoofer")
        if aid in ids:
            raise att.error("id", f"duplicate vehicle id {aid!r}")
        attacker = DemoAttacker(aid, att.get("position", _polar),
                                _vehicle(att.section("claimed", required=True), geometry, aid))
    rsus = demo.get("rsus", lambda v: [_polar(x) for x in v],
                    [(45.0, 25.0), (135.0, 25.0), (225.0, 25.0), (315.0, 25.0)])
    return DemoScenario(
        geometry=geometry, signal=signal, vehicles=vehicles, attacker=attacker, rsu_positions=rsus,
        queue=QueueParams(sig.get("saturation_flow_vphpl", cfgmod.positive_real, 1800.0)),
        policy=base.policy, profile=base.profile, sensing_range=base.sensing_range,
        stop_threshold=sig.get("stop_threshold_mps", cfgmod.non_negative_real, 0.5),
        window=sig.get("window_s", cfgmod.positive_real, 60.0), seed=base.seed,
    )
