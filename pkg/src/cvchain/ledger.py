"""Append-only, hash-chained and Merkle-rooted ledger of arrival-vehicle records.

Every participant (vehicle, RSU, signal controller) may ADD or READ records.
No role, including the controller acting as administrator, can modify or
delete an entry: :func:`attempt_modify` exists only to model that attack
surface and always raises :class:`ImmutableLedger`.

Each entry hashes ``canonical_bytes(payload) || prev_hash`` with SHA-256; entry
0 links to a 32-byte all-zero genesis digest. The Merkle root over all entry
hashes is recomputed on every append (single leaf -> the leaf itself, odd
levels duplicate their last node).
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

HASH_ALGORITHM = "sha256"
DIGEST_SIZE = 32
GENESIS_HASH = bytes(DIGEST_SIZE)
SNAPSHOT_FORMAT = "cvchain-ledger/1"

# record_id, vin, longitude, latitude, speed, acceleration, timestamp
_CANONICAL = struct.Struct("<q17s5d")
_VIN_RE = re.compile(r"^[A-HJ-NPR-Z0-9]{17}$")


class LedgerError(Exception):
    pass


class UnregisteredActor(LedgerError):
    pass


class DuplicateId(LedgerError):
    pass


class MalformedRecord(LedgerError, ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ClockRegression(LedgerError, ValueError):
    pass


class ImmutableLedger(LedgerError):
    """Raised for every modification attempt. Carries the warning shown to the actor."""

    def __init__(self, actor_id: str, record_id: int):
        self.actor_id = actor_id
        self.record_id = record_id
        super().__init__(
            f"WARNING: participant {actor_id!r} attempted to modify record {record_id}; "
            "ledger records are immutable (ADD/READ only)"
        )


class EmptyInput(ValueError):
    pass


class ReplicationError(LedgerError):
    pass


class SnapshotParseError(LedgerError, ValueError):
    pass


class Role(str, enum.Enum):
    VEHICLE = "Vehicle"
    RSU = "RSU"
    CONTROLLER = "Controller"


class Permission(str, enum.Enum):
    ADD = "ADD"
    READ = "READ"


# Identical for every role; MODIFY/DELETE do not exist.
ROLE_PERMISSIONS: dict[Role, frozenset[Permission]] = {
    role: frozenset({Permission.ADD, Permission.READ}) for role in Role
}


@dataclass(frozen=True)
class Participant:
    participant_id: str
    role: Role
    is_admin: bool = False

    @property
    def permissions(self) -> frozenset[Permission]:
        return ROLE_PERMISSIONS[self.role]


class Registry:
    """ID registry through which participants connect to the network."""

    def __init__(self) -> None:
        self._participants: dict[str, Participant] = {}
        self._lock = threading.Lock()

    def __contains__(self, item) -> bool:
        if isinstance(item, Participant):
            return self._participants.get(item.participant_id) == item
        return item in self._participants

    def __len__(self) -> int:
        return len(self._participants)

    def get(self, participant_id: str) -> Optional[Participant]:
        return self._participants.get(participant_id)

    def participants(self) -> list[Participant]:
        return list(self._participants.values())

    def register(self, participant_id: str, role: Role | str) -> Participant:
        role = Role(role)
        with self._lock:
            if participant_id in self._participants:
                raise DuplicateId(f"participant id {participant_id!r} already registered")
            p = Participant(participant_id, role, is_admin=role is Role.CONTROLLER)
            self._participants[participant_id] = p
            return p


def register_participant(registry: Registry, participant_id: str, role: Role | str) -> Participant:
    return registry.register(participant_id, role)


@dataclass(frozen=True)
class GPS:
    longitude: float
    latitude: float


@dataclass(frozen=True)
class Trajectory:
    speed: float
    acceleration: float


@dataclass(frozen=True)
class VehicleReport:
    """Vehicle information as broadcast: no record id and no timestamp yet."""

    vin: str
    gps: GPS
    trajectory: Trajectory


@dataclass(frozen=True)
class VehicleInfo:
    record_id: int
    vin: str
    gps: GPS
    trajectory: Trajectory
    timestamp: float  # simulated ms, assigned by the ledger

    @property
    def report(self) -> VehicleReport:
        return VehicleReport(self.vin, self.gps, self.trajectory)


def is_valid_vin(vin) -> bool:
    return isinstance(vin, str) and bool(_VIN_RE.match(vin))


def check_report(report: VehicleReport) -> None:
    """Raise :class:`MalformedRecord` naming the first field that fails validation."""
    if not is_valid_vin(report.vin):
        raise MalformedRecord("vin", f"{report.vin!r} is not 17 characters of A-Z/0-9 excluding I, O, Q")
    lon, lat = report.gps.longitude, report.gps.latitude
    if not _finite(lon) or not -180.0 <= lon <= 180.0:
        raise MalformedRecord("gps.longitude", f"{lon!r} outside [-180, 180]")
    if not _finite(lat) or not -90.0 <= lat <= 90.0:
        raise MalformedRecord("gps.latitude", f"{lat!r} outside [-90, 90]")
    if not _finite(report.trajectory.speed) or report.trajectory.speed < 0:
        raise MalformedRecord("trajectory.speed", f"{report.trajectory.speed!r} must be >= 0")
    if not _finite(report.trajectory.acceleration):
        raise MalformedRecord("trajectory.acceleration", "must be finite")


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x == x and abs(x) != float("inf")


def canonical_bytes(info: VehicleInfo) -> bytes:
    return _CANONICAL.pack(
        info.record_id,
        info.vin.encode("ascii"),
        float(info.gps.longitude),
        float(info.gps.latitude),
        float(info.trajectory.speed),
        float(info.trajectory.acceleration),
        float(info.timestamp),
    )


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def entry_digest(info: VehicleInfo, prev_hash: bytes) -> bytes:
    return _h(canonical_bytes(info) + prev_hash)


@dataclass(frozen=True)
class LedgerEntry:
    payload: VehicleInfo
    prev_hash: bytes
    entry_hash: bytes

    @property
    def record_id(self) -> int:
        return self.payload.record_id


def compute_merkle_root(hashes: Sequence[bytes]) -> bytes:
    if not hashes:
        raise EmptyInput("merkle root of an empty sequence is undefined")
    level = list(hashes)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [_h(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class TamperAttempt:
    actor_id: str
    record_id: int
    clock: Optional[float]


@dataclass(frozen=True)
class ChainStatus:
    """Outcome of a chain verification. ``first_bad_index`` is 0-based; the
    value ``len(entries)`` means only the stored Merkle root disagrees."""

    ok: bool
    first_bad_index: Optional[int] = None
    reason: str = ""
    entries: int = 0

    def __bool__(self) -> bool:
        return self.ok


class Ledger:
    """One replica of the distributed ledger.

    Appends are serialized by an internal lock, so concurrent writers observe
    a total order matching record ids and readers always see a consistent
    prefix.
    """

    def __init__(self, registry: Registry):
        self.registry = registry
        self._entries: list[LedgerEntry] = []
        self._merkle_root: bytes = GENESIS_HASH
        self._lock = threading.RLock()
        self.tamper_log: list[TamperAttempt] = []
        self.listeners: list[Callable[[TamperAttempt], None]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    @property
    def merkle_root(self) -> bytes:
        return self._merkle_root

    @property
    def head_hash(self) -> bytes:
        with self._lock:
            return self._entries[-1].entry_hash if self._entries else GENESIS_HASH

    def copy(self) -> "Ledger":
        other = Ledger(self.registry)
        with self._lock:
            other._entries = list(self._entries)
            other._merkle_root = self._merkle_root
        return other

    def _require_actor(self, actor: Participant) -> None:
        if actor not in self.registry:
            raise UnregisteredActor(f"{getattr(actor, 'participant_id', actor)!r} is not registered")

    def _recompute_root(self) -> None:
        self._merkle_root = (
            compute_merkle_root([e.entry_hash for e in self._entries]) if self._entries else GENESIS_HASH
        )

    def append(self, report: VehicleReport, actor: Participant, now: float) -> LedgerEntry:
        self._require_actor(actor)
        check_report(report)
        with self._lock:
            if self._entries and now < self._entries[-1].payload.timestamp:
                raise ClockRegression(
                    f"clock {now} precedes last timestamp {self._entries[-1].payload.timestamp}"
                )
            info = VehicleInfo(
                record_id=len(self._entries) + 1,
                vin=report.vin,
                gps=GPS(float(report.gps.longitude), float(report.gps.latitude)),
                trajectory=Trajectory(float(report.trajectory.speed), float(report.trajectory.acceleration)),
                timestamp=float(now),
            )
            prev = self._entries[-1].entry_hash if self._entries else GENESIS_HASH
            entry = LedgerEntry(info, prev, entry_digest(info, prev))
            self._entries.append(entry)
            self._recompute_root()
            return entry

    def apply_replicated(self, entry: LedgerEntry) -> bool:
        """Append an entry produced by another replica.

        Returns False for an entry already present, raises
        :class:`ReplicationError` if it does not extend this chain.
        """
        with self._lock:
            n = len(self._entries)
            if entry.record_id <= n:
                if self._entries[entry.record_id - 1].entry_hash != entry.entry_hash:
                    raise ReplicationError(f"conflicting entry for record {entry.record_id}")
                return False
            if entry.record_id != n + 1:
                raise ReplicationError(f"gap: have {n} entries, got record {entry.record_id}")
            prev = self._entries[-1].entry_hash if self._entries else GENESIS_HASH
            if entry.prev_hash != prev or entry_digest(entry.payload, prev) != entry.entry_hash:
                raise ReplicationError(f"entry {entry.record_id} does not link to local head")
            self._entries.append(entry)
            self._recompute_root()
            return True

    def read(self, actor: Participant, where: Optional[Callable[[VehicleInfo], bool]] = None) -> list[LedgerEntry]:
        self._require_actor(actor)
        snapshot = self.entries
        if where is None:
            return list(snapshot)
        return [e for e in snapshot if where(e.payload)]

    def attempt_modify(
        self, record_id: int, new_payload, actor: Participant, clock: Optional[float] = None
    ) -> None:
        # Rejection is unconditional: no role or existence check happens first.
        event = TamperAttempt(getattr(actor, "participant_id", str(actor)), record_id, clock)
        self.tamper_log.append(event)
        for listener in self.listeners:
            listener(event)
        raise ImmutableLedger(event.actor_id, record_id)

    def verify(self) -> ChainStatus:
        with self._lock:
            entries = list(self._entries)
            stored_root = self._merkle_root
        return _verify_entries(entries, stored_root)

    def to_snapshot(self) -> str:
        with self._lock:
            entries = list(self._entries)
            root = self._merkle_root
        lines = [json.dumps({"format": SNAPSHOT_FORMAT, "hash": HASH_ALGORITHM, "entries": len(entries)},
                            separators=(",", ":"))]
        lines.extend(entry_to_json(e) for e in entries)
        lines.append(json.dumps({"merkle_root": root.hex()}, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot(cls, text: str, registry: Optional[Registry] = None) -> "Ledger":
        """Load a snapshot without judging its integrity (see :func:`verify_snapshot`)."""
        header, raw_entries, root = _split_snapshot(text)
        ledger = cls(registry if registry is not None else Registry())
        for i, line in enumerate(raw_entries):
            try:
                ledger._entries.append(entry_from_json(line))
            except SnapshotParseError as exc:
                raise SnapshotParseError(f"entry {i}: {exc}") from None
        if root is None:
            raise SnapshotParseError("missing merkle_root line")
        ledger._merkle_root = root
        return ledger


def _entry_ok(entry: LedgerEntry, index: int, prev: bytes, last_ts: float) -> bool:
    try:
        return (
            entry.payload.record_id == index + 1
            and entry.prev_hash == prev
            and entry_digest(entry.payload, prev) == entry.entry_hash
            and entry.payload.timestamp >= last_ts
        )
    except (UnicodeEncodeError, struct.error, AttributeError, TypeError):
        return False


def _verify_entries(entries: Sequence[LedgerEntry], stored_root: bytes) -> ChainStatus:
    prev = GENESIS_HASH
    last_ts = float("-inf")
    for i, entry in enumerate(entries):
        if not _entry_ok(entry, i, prev, last_ts):
            return ChainStatus(False, i, f"entry {i} (record_id {i + 1}) fails recomputation", len(entries))
        prev = entry.entry_hash
        last_ts = entry.payload.timestamp
    expected_root = compute_merkle_root([e.entry_hash for e in entries]) if entries else GENESIS_HASH
    if expected_root != stored_root:
        return ChainStatus(False, len(entries), "merkle root mismatch", len(entries))
    return ChainStatus(True, None, "ok", len(entries))


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------


def append_record(ledger: Ledger, info: VehicleReport, actor: Participant, clock: float) -> LedgerEntry:
    return ledger.append(info, actor, clock)


def read_records(
    ledger: Ledger, where: Optional[Callable[[VehicleInfo], bool]], actor: Participant
) -> list[LedgerEntry]:
    return ledger.read(actor, where)


def attempt_modify(ledger: Ledger, record_id: int, new_payload, actor: Participant, clock: Optional[float] = None):
    return ledger.attempt_modify(record_id, new_payload, actor, clock)


def verify_chain(ledger: Ledger) -> ChainStatus:
    return ledger.verify()


# ---------------------------------------------------------------------------
# snapshot (de)serialization
# ---------------------------------------------------------------------------


def entry_to_json(entry: LedgerEntry) -> str:
    p = entry.payload
    obj = {
        "record_id": p.record_id,
        "vin": p.vin,
        "gps": {"longitude": p.gps.longitude, "latitude": p.gps.latitude},
        "trajectory": {"speed": p.trajectory.speed, "acceleration": p.trajectory.acceleration},
        "timestamp": p.timestamp,
        "prev_hash": entry.prev_hash.hex(),
        "entry_hash": entry.entry_hash.hex(),
    }
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


_HEX64 = re.compile(r"^[0-9a-f]{64}$")


def _hexdigest(value) -> bytes:
    if not isinstance(value, str) or not _HEX64.match(value):
        raise SnapshotParseError(f"not a lowercase 256-bit hex digest: {value!r}")
    return bytes.fromhex(value)


def _real(value, name: str) -> float:
    if not isinstance(value, float):
        raise SnapshotParseError(f"{name} must be a real number")
    return value


def entry_from_json(line: str) -> LedgerEntry:
    """Strictly parse one canonical entry line. Any byte that differs from the
    canonical encoding of the parsed entry is a parse error."""
    try:
        obj = json.loads(line)
        payload = VehicleInfo(
            record_id=obj["record_id"],
            vin=obj["vin"],
            gps=GPS(_real(obj["gps"]["longitude"], "longitude"), _real(obj["gps"]["latitude"], "latitude")),
            trajectory=Trajectory(
                _real(obj["trajectory"]["speed"], "speed"),
                _real(obj["trajectory"]["acceleration"], "acceleration"),
            ),
            timestamp=_real(obj["timestamp"], "timestamp"),
        )
        if not isinstance(payload.record_id, int) or isinstance(payload.record_id, bool):
            raise SnapshotParseError("record_id must be an integer")
        if not isinstance(payload.vin, str):
            raise SnapshotParseError("vin must be a string")
        entry = LedgerEntry(payload, _hexdigest(obj["prev_hash"]), _hexdigest(obj["entry_hash"]))
    except SnapshotParseError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise SnapshotParseError(f"malformed entry: {exc}") from None
    try:
        canonical = entry_to_json(entry)
    except ValueError as exc:
        raise SnapshotParseError(str(exc)) from None
    if canonical != line:
        raise SnapshotParseError("entry is not in canonical form")
    return entry


def _split_snapshot(text: str) -> tuple[dict, list[str], Optional[bytes]]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SnapshotParseError("empty snapshot file")
    try:
        header = json.loads(lines[0])
        count = header["entries"]
        if header.get("hash") != HASH_ALGORITHM or not isinstance(count, int):
            raise ValueError("bad header fields")
    except (ValueError, KeyError, TypeError) as exc:
        raise SnapshotParseError(f"bad header line: {exc}") from None
    body = lines[1:]
    root = None
    if body:
        try:
            tail = json.loads(body[-1])
            if isinstance(tail, dict) and set(tail) == {"merkle_root"}:
                root = _hexdigest(tail["merkle_root"])
                body = body[:-1]
        except ValueError:
            pass
    return header, body, root


def verify_snapshot(text: str | bytes) -> ChainStatus:
    """Verify a snapshot's text, tolerating corruption.

    Lines are checked in order; the first entry line that does not parse
    canonically, does not match its recomputed digest, or breaks the chain is
    reported. A header that cannot be trusted is reported as index 0.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            line = text[:exc.start].count(b"\n")
            return ChainStatus(False, max(0, line - 1), f"line {line + 1}: not UTF-8 text")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SnapshotParseError("empty snapshot file")
    try:
        header = json.loads(lines[0])
        declared = header["entries"]
        header_ok = (
            json.dumps({"format": SNAPSHOT_FORMAT, "hash": HASH_ALGORITHM, "entries": declared},
                       separators=(",", ":")) == lines[0]
        )
    except (ValueError, KeyError, TypeError):
        header_ok, declared = False, None
    if not header_ok:
        return ChainStatus(False, 0, "header line corrupted", max(0, len(lines) - 2))
    entry_lines = lines[1:1 + declared]
    footer = lines[1 + declared:]
    entries: list[LedgerEntry] = []
    prev = GENESIS_HASH
    last_ts = float("-inf")
    for i, line in enumerate(entry_lines):
        try:
            entry = entry_from_json(line)
        except SnapshotParseError as exc:
            return ChainStatus(False, i, f"entry {i}: {exc}", declared)
        if not _entry_ok(entry, i, prev, last_ts):
            return ChainStatus(False, i, f"entry {i} (record_id {i + 1}) fails recomputation", declared)
        entries.append(entry)
        prev = entry.entry_hash
        last_ts = entry.payload.timestamp
    if len(entry_lines) < declared:
        return ChainStatus(False, len(entry_lines), "snapshot truncated", declared)
    expected_root = compute_merkle_root([e.entry_hash for e in entries]) if entries else GENESIS_HASH
    expected_footer = json.dumps({"merkle_root": expected_root.hex()}, separators=(",", ":"))
    if footer != [expected_footer]:
        return ChainStatus(False, declared, "merkle root line missing or mismatched", declared)
    return ChainStatus(True, None, "ok" if entries else "ok (empty)", declared)

