"""``cvchain`` command-line driver.

Exit codes: 0 success, 2 config or parse error, 3 verification failure.

Environment variables (used when the matching argument is omitted):

``CVCHAIN_CONFIG``    scenario file for ``run`` and ``isig-demo``
``CVCHAIN_SNAPSHOT``  snapshot file for ``verify``; also ``run --snapshot``
``CVCHAIN_OUT``       output directory
``CVCHAIN_SEED``      seed override
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .attacks import AttackOutcome, outcomes_csv, parse_attacks, run_attack
from .bench import SUITE_NAMES, UnknownSuite, run_experiment_suite
from .config import ConfigError, Section, load_yaml
from .isig import congestion_attack_demo, parse_demo_scenario
from .ledger import SnapshotParseError, verify_snapshot
from .netsim import THROTTLE_MODELS, Simulation, build_topology, parse_scenario, replicas_agree

ENV_PREFIX = "CVCHAIN_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def _env(name: str) -> Optional[str]:
    value = os.environ.get(ENV_PREFIX + name)
    return value if value else None


def _seed_arg(value: str) -> int:
    seed = int(value)
    if seed < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return seed


def _resolve(args, attr: str, env: str, required: bool = True):
    value = getattr(args, attr, None)
    if value is None:
        value = _env(env)
    if value is None and required:
        raise ConfigError(f"missing {attr} (argument or {ENV_PREFIX}{env})", "<command line>")
    return value


def _seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    raw = _env("SEED")
    if raw is None:
        return None
    try:
        return _seed_arg(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"invalid seed {raw!r}", f"{ENV_PREFIX}SEED") from None


def _load(path: str, seed: Optional[int]) -> Section:
    root = load_yaml(path)
    if seed is not None:
        root = Section(dict(root.data, seed=seed), root.source, root.path, root.lines)
    return root


def _write(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")


# commands -------------------------------------------------------------------


def cmd_run(args) -> int:
    root = _load(_resolve(args, "config", "CONFIG"), _seed(args))
    scenario = parse_scenario(root)
    sim = Simulation(build_topology(scenario))
    specs = parse_attacks(scenario.attacks)
    if not specs:
        # no attacks configured: one truthful broadcast from every online vehicle
        for v in sim.topology.vehicles():
            if v.online:
                sim.broadcast(v.id)
        sim.run()
    outcomes: list[AttackOutcome] = []
    for i, spec in enumerate(specs):
        try:
            outcomes.append(run_attack(sim, spec))
        except (KeyError, ValueError) as exc:
            raise scenario._error(("attacks", i), str(exc).strip("'\"")) from None
    agreed = sim.agreed
    summary = {
        "seed": scenario.seed,
        "nodes": len(sim.topology.nodes),
        "profile": sim.topology.profile.name,
        "throttle_model": sim.topology.throttle_model,
        "ledger_entries": len(agreed.ledger),
        "merkle_root": agreed.ledger.merkle_root.hex(),
        "blacklist": [e.vin for e in agreed.blacklist.entries()],
        "replicas_agree": replicas_agree(sim),
        "attacks": [o.summary() for o in outcomes],
    }
    out_dir = Path(_resolve(args, "out", "OUT", required=False) or ".")
    _write(out_dir, {
        "trace.jsonl": sim.trace.to_jsonl(),
        "outcomes.csv": outcomes_csv(outcomes),
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
    })
    snapshot = args.snapshot or _env("SNAPSHOT")
    if snapshot:
        Path(snapshot).parent.mkdir(parents=True, exist_ok=True)
        Path(snapshot).write_text(agreed.ledger.to_snapshot(), encoding="utf-8")
    print(f"ok: {len(sim.trace)} trace records, {len(agreed.ledger)} ledger entries -> {out_dir}")
    return EXIT_OK


def cmd_suite(args) -> int:
    seed = _seed(args)
    out_dir = Path(_resolve(args, "out", "OUT", required=False) or ".")
    result = run_experiment_suite(args.name, chart=args.chart, seed=seed or 0, out_dir=out_dir,
                                  throttle_model=args.throttle_model)
    if args.name == "isig-demo":
        d = result.notes["isig"]
        for mode in ("baseline", "unprotected", "protected"):
            print(f"{mode:>11}: total delay {d[mode]['total_delay_s']:.3f} s")
    else:
        for value, mean in result.means().items():
            print(f"{value}: {mean:.3f} ms")
    print(f"wrote {', '.join(str(p) for p in result.files)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(_resolve(args, "snapshot", "SNAPSHOT"))
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError("no such file", str(path)) from None
    except OSError as exc:
        raise ConfigError(exc.strerror or str(exc), str(path)) from None
    status = verify_snapshot(data)
    if status.ok:
        print(status.reason)
        return EXIT_OK
    print(f"FAIL {path}: first bad index {status.first_bad_index} "
          f"(record_id {status.first_bad_index + 1}): {status.reason}")
    return EXIT_VERIFY


def cmd_isig_demo(args) -> int:
    root = _load(_resolve(args, "config", "CONFIG"), _seed(args))
    report = congestion_attack_demo(parse_demo_scenario(root))
    out_dir = Path(_resolve(args, "out", "OUT", required=False) or ".")
    _write(out_dir, {"isig_report.json": report.to_json(), "isig_delays.csv": report.delays_csv()})
    for mode in ("baseline", "unprotected", "protected"):
        print(f"{mode:>11}: total delay {getattr(report, mode).total_delay:.3f} s")
    print(f"attacker verdict: {report.attacker_verdict}, blacklisted: {report.attacker_blacklisted}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvchain", description="Connected-vehicle ledger simulator and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write trace.jsonl, outcomes.csv, summary.json")
    run.add_argument("config", nargs="?")
    run.add_argument("--out")
    run.add_argument("--seed", type=_seed_arg)
    run.add_argument("--snapshot", help="also write the agreed ledger snapshot here")
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="run an experiment suite")
    suite.add_argument("name", choices=SUITE_NAMES)
    suite.add_argument("--seed", type=_seed_arg)
    suite.add_argument("--out")
    suite.add_argument("--throttle-model", choices=THROTTLE_MODELS, default="calibrated")
    suite.add_argument("--chart", action="store_true", help="also write a text bar chart")
    suite.set_defaults(func=cmd_suite)

    ver = sub.add_parser("verify", help="verify a ledger snapshot")
    ver.add_argument("snapshot", nargs="?")
    ver.set_defaults(func=cmd_verify)

    demo = sub.add_parser("isig-demo", help="signal-control congestion attack comparison")
    demo.add_argument("config", nargs="?")
    demo.add_argument("--out")
    demo.add_argument("--seed", type=_seed_arg)
    demo.set_defaults(func=cmd_isig_demo)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SnapshotParseError, UnknownSuite) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG



