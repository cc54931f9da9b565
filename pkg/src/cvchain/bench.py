"""Experiment suites: sweep one knob, attack, record response times, write CSVs.

Output files per suite ``<name>``:

``<name>.csv``
    ``sweep_value,attempt,response_ms``, one row per response sample at the
    measured node, ordered by sweep value then attempt.
``<name>_summary.csv``
    ``sweep_value,mean_response_ms,samples``.
``<name>_summary.json``
    suite parameters plus the same means.
``<name>.txt``
    plain-text bar chart of the means (only with ``chart=True``).

Everything is derived from (suite, seed, throttle model), so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .attacks import AttackKind, AttackOutcome, AttackSpec, run_attack
from .isig import canonical_demo_scenario, congestion_attack_demo
from .ledger import verify_chain
from .netsim import PROFILES, THROTTLE_MODELS, Simulation, build_topology, parse_scenario

SUITE_NAMES = ("participants", "network", "cpu", "multiattack", "tamper", "isig-demo")
ROWS_COLUMNS = ("sweep_value", "attempt", "response_ms")
SUMMARY_COLUMNS = ("sweep_value", "mean_response_ms", "samples")

SPOOF_OFFSET_M = 100.0


class UnknownSuite(ValueError):
    pass


@dataclass
class ExperimentSuite:
    name: str
    sweep_values: tuple = ()
    repetitions: int = 8
    out_dir: Optional[Path] = None
    seed: int = 0
    throttle_model: str = "calibrated"
    vehicles: int = 20

    def __post_init__(self):
        if self.name not in SUITE_NAMES:
            raise UnknownSuite(f"unknown suite {self.name!r} (known: {', '.join(SUITE_NAMES)})")
        if not self.sweep_values:
            self.sweep_values = DEFAULT_SWEEPS[self.name]
        self.sweep_values = tuple(self.sweep_values)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.throttle_model not in THROTTLE_MODELS:
            raise ValueError(f"throttle model must be one of {', '.join(THROTTLE_MODELS)}")
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)


DEFAULT_SWEEPS = {
    "participants": (20, 40, 80, 160, 320),
    "network": ("wifi", "fast-3g", "slow-3g"),
    "cpu": (1, 4, 6),
    "multiattack": (1, 2, 3, 4),
    "tamper": ("Vehicle", "RSU", "Controller"),
    "isig-demo": ("baseline", "unprotected", "protected"),
}


@dataclass
class SuiteResult:
    suite: ExperimentSuite
    rows: list[tuple] = field(default_factory=list)  # (sweep_value, attempt, response_ms)
    notes: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    def means(self) -> dict:
        groups: dict = {}
        for value, _, ms in self.rows:
            groups.setdefault(value, []).append(ms)
        return {v: statistics.fmean(groups[v]) for v in self.suite.sweep_values if v in groups}

    def counts(self) -> dict:
        out: dict = {}
        for value, _, _ in self.rows:
            out[value] = out.get(value, 0) + 1
        return out

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROWS_COLUMNS)
        for value, attempt, ms in self.rows:
            w.writerow((value, attempt, repr(ms)))
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        counts = self.counts()
        for value, mean in self.means().items():
            w.writerow((value, repr(mean), counts[value]))
        return buf.getvalue()

    def summary(self) -> dict:
        s = self.suite
        counts = self.counts()
        return {
            "suite": s.name,
            "seed": s.seed,
            "throttle_model": s.throttle_model,
            "repetitions": s.repetitions,
            "sweep": [{"sweep_value": v, "mean_response_ms": m, "samples": counts[v]}
                      for v, m in self.means().items()],
            "notes": self.notes,
        }

    def chart(self, width: int = 40) -> str:
        means = self.means()
        if not means:
            return f"{self.suite.name}: no samples\n"
        top = max(means.values()) or 1.0
        label_w = max(len(str(v)) for v in means)
        lines = [f"{self.suite.name} (mean response, ms)"]
        for v, m in means.items():
            lines.append(f"{str(v):>{label_w}} | {'#' * round(width * m / top):<{width}} {m:.3f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path, chart: bool = False) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        name = self.suite.name
        outputs = {
            f"{name}.csv": self.rows_csv(),
            f"{name}_summary.csv": self.summary_csv(),
            f"{name}_summary.json": json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
        }
        if chart:
            outputs[f"{name}.txt"] = self.chart()
        self.files = []
        for fname, text in outputs.items():
            path = out_dir / fname
            path.write_text(text, encoding="utf-8")
            self.files.append(path)
        return self.files


# ---------------------------------------------------------------------------


def _scenario(suite: ExperimentSuite, **overrides) -> dict:
    cfg = {
        "seed": suite.seed,
        "nodes": {"vehicles": suite.vehicles, "rsus": 4},
        "compute": {"throttle_model": suite.throttle_model},
    }
    cfg.update(overrides)
    return cfg


def _sim(cfg: dict) -> Simulation:
    return Simulation(build_topology(parse_scenario(cfg)))


def _append_rows(result: SuiteResult, value, outcome: AttackOutcome, node: str) -> None:
    samples = outcome.for_node(node)
    samples.sort(key=lambda r: (r.round, r.attempt, r.attacker))
    start = sum(1 for row in result.rows if row[0] == value)
    for i, r in enumerate(samples, start + 1):
        result.rows.append((value, i, r.response_ms))


def _spoofers(sim: Simulation, n: int) -> list[str]:
    vehicles = [v.id for v in sim.topology.vehicles()]
    if len(vehicles) < n:
        raise ValueError(f"need {n} vehicles, scenario has {len(vehicles)}")
    return vehicles[:n]


def _spoof_spec(attackers, repetitions: int = 1) -> AttackSpec:
    return AttackSpec(AttackKind.SPOOF_BROADCAST, attackers, {"gps": SPOOF_OFFSET_M}, repetitions=repetitions)


def _participants(suite: ExperimentSuite, result: SuiteResult) -> None:
    for records in suite.sweep_values:
        sim = _sim(_scenario(suite, initial_ledger_records=int(records)))
        node = sim.topology.default_node
        spec = AttackSpec(AttackKind.MODIFY_RECORD, [node], target_record_id=max(1, int(records) // 2),
                          repetitions=suite.repetitions)
        _append_rows(result, records, run_attack(sim, spec), node)


def _network(suite: ExperimentSuite, result: SuiteResult) -> None:
    for profile in suite.sweep_values:
        if profile not in PROFILES:
            raise ValueError(f"unknown network profile {profile!r}")
        sim = _sim(_scenario(suite, network={"profile": profile}))
        node = sim.topology.default_node
        out = run_attack(sim, _spoof_spec(_spoofers(sim, suite.repetitions)))
        result.notes.setdefault("verdicts", {})[profile] = dict(sorted(out.verdicts().items()))
        _append_rows(result, profile, out, node)


def _cpu(suite: ExperimentSuite, result: SuiteResult) -> None:
    for factor in suite.sweep_values:
        topo = build_topology(parse_scenario(_scenario(suite)))
        node = topo.default_node
        topo.nodes[node].cpu_throttle = float(factor)
        sim = Simulation(topo)
        _append_rows(result, factor, run_attack(sim, _spoof_spec(_spoofers(sim, suite.repetitions))), node)


def _multiattack(suite: ExperimentSuite, result: SuiteResult) -> None:
    n = max(int(v) for v in suite.sweep_values)
    sim = _sim(_scenario(suite))
    node = sim.topology.default_node
    spec = AttackSpec(AttackKind.MULTI_ATTACKER, _spoofers(sim, n), {"gps": SPOOF_OFFSET_M},
                      repetitions=suite.repetitions, action="spoof")
    out = run_attack(sim, spec)
    wanted = {int(v) for v in suite.sweep_values}
    for rnd in sorted(wanted):
        sub = AttackOutcome(spec, out.label, [r for r in out.records if r.round == rnd])
        _append_rows(result, rnd, sub, node)


def _tamper(suite: ExperimentSuite, result: SuiteResult) -> None:
    chains_ok = {}
    for role in suite.sweep_values:
        sim = _sim(_scenario(suite))
        actor = next((n.id for n in sim.topology.nodes.values() if n.kind.role.value == role), None)
        if actor is None:
            raise ValueError(f"no node with role {role!r}")
        spec = AttackSpec(AttackKind.MODIFY_RECORD, [actor], {"speed": 5.0}, target_record_id=1,
                          repetitions=suite.repetitions)
        out = run_attack(sim, spec)
        chains_ok[role] = all(verify_chain(st.ledger).ok for st in sim.states.values())
        _append_rows(result, role, out, actor)
    result.notes["chains_ok"] = chains_ok


def _isig(suite: ExperimentSuite, result: SuiteResult) -> None:
    sc = canonical_demo_scenario()
    sc.seed = suite.seed
    report = congestion_attack_demo(sc)
    result.notes["isig"] = report.to_dict()
    result.notes["delays_csv"] = report.delays_csv()


RUNNERS: dict[str, Callable[[ExperimentSuite, SuiteResult], None]] = {
    "participants": _participants,
    "network": _network,
    "cpu": _cpu,
    "multiattack": _multiattack,
    "tamper": _tamper,
    "isig-demo": _isig,
}


def run_experiment_suite(suite: ExperimentSuite | str, chart: bool = False, **kwargs) -> SuiteResult:
    """Run a suite and, when it has an ``out_dir``, write its files there."""
    if isinstance(suite, str):
        if suite not in SUITE_NAMES:
            raise UnknownSuite(f"unknown suite {suite!r} (known: {', '.join(SUITE_NAMES)})")
        if suite == "multiattack":
            kwargs.setdefault("repetitions", 3)
        suite = ExperimentSuite(suite, **kwargs)
    result = SuiteResult(suite)
    RUNNERS[suite.name](suite, result)
    if suite.out_dir is not None:
        if suite.name == "isig-demo":
            _write_isig(result, suite.out_dir)
        else:
            result.write(suite.out_dir, chart)
    return result


def _write_isig(result: SuiteResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = dict(result.notes["isig"])
    files = {"isig-demo_report.json": json.dumps(report, indent=2, sort_keys=True) + "\n",
             "isig-demo_delays.csv": result.notes["delays_csv"]}
    result.files = []
    for fname, text in files.items():
        path = out_dir / fname
        path.write_text(text, encoding="utf-8")
        result.files.append(path)
