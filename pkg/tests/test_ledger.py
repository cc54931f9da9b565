import dataclasses
import hashlib
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvchain.ledger import (
    GENESIS_HASH,
    DuplicateId,
    EmptyInput,
    ImmutableLedger,
    Ledger,
    LedgerEntry,
    MalformedRecord,
    Permission,
    Role,
    SnapshotParseError,
    UnregisteredActor,
    ClockRegression,
    Participant,
    append_record,
    attempt_modify,
    compute_merkle_root,
    read_records,
    register_participant,
    verify_chain,
    verify_snapshot,
)

from conftest import VINS, filled_ledger, report


def sha(b):
    return hashlib.sha256(b).digest()


def digest_by_hand(record_id, vin, lon, lat, speed, accel, ts, prev):
    packed = (record_id.to_bytes(8, "little", signed=True) + vin.encode() + struct.pack("<d", lon)
              + struct.pack("<d", lat) + struct.pack("<d", speed) + struct.pack("<d", accel) + struct.pack("<d", ts))
    return sha(packed + prev)


def flip_payload_bit(ledger, index):
    """Mutate a stored entry behind the API's back."""
    e = ledger._entries[index]
    lon = struct.unpack("<d", (struct.unpack("<Q", struct.pack("<d", e.payload.gps.longitude))[0] ^ 1)
                        .to_bytes(8, "little"))[0]
    p = dataclasses.replace(e.payload, gps=dataclasses.replace(e.payload.gps, longitude=lon))
    ledger._entries[index] = dataclasses.replace(e, payload=p)


# -- append ------------------------------------------------------------------

def test_first_record_links_to_genesis(registry, admin):
    ledger = Ledger(registry)
    e = append_record(ledger, report("1FTWX32L2YEA47477"), admin, 0.0)
    assert e.record_id == 1
    assert e.prev_hash == bytes(32) == GENESIS_HASH
    assert e.entry_hash == digest_by_hand(1, "1FTWX32L2YEA47477", -75.7530, 39.6780, 10.0, 0.0, 0.0, bytes(32))


def test_record_21_after_20(ledger20, admin):
    assert ledger20.append(report(), admin, 5000.0).record_id == 21


def test_identical_payloads_distinct_hashes(registry, admin):
    ledger = Ledger(registry)
    a = ledger.append(report(), admin, 7.0)
    b = ledger.append(report(), admin, 7.0)
    assert a.entry_hash != b.entry_hash
    assert a.entry_hash == digest_by_hand(1, VINS[0], -75.7530, 39.6780, 10.0, 0.0, 7.0, bytes(32))
    assert b.entry_hash == digest_by_hand(2, VINS[0], -75.7530, 39.6780, 10.0, 0.0, 7.0, a.entry_hash)


def test_timestamp_comes_from_clock(registry, admin):
    ledger = Ledger(registry)
    assert ledger.append(report(), admin, 1234.5).payload.timestamp == 1234.5
    with pytest.raises(ClockRegression):
        ledger.append(report(), admin, 1000.0)


def test_unregistered_actor(registry):
    with pytest.raises(UnregisteredActor):
        Ledger(registry).append(report(), Participant("ghost", Role.VEHICLE, False), 0.0)


@pytest.mark.parametrize("bad,field", [
    (report(vin="1FTWX32L2YEA4747"), "vin"),
    (report(vin="1FTWX32L2YEA4747O"), "vin"),
    (report(lon=181.0), "gps.longitude"),
    (report(lat=-90.5), "gps.latitude"),
    (report(speed=-0.1), "trajectory.speed"),
    (report(accel=float("nan")), "trajectory.acceleration"),
])
def test_malformed_names_field(registry, admin, bad, field):
    ledger = Ledger(registry)
    with pytest.raises(MalformedRecord) as exc:
        ledger.append(bad, admin, 0.0)
    assert exc.value.field == field
    assert len(ledger) == 0


# -- read ---------------------------------------------------------------------

def test_read_all_in_order(ledger20, registry):
    rows = read_records(ledger20, None, registry.get("veh-001"))
    assert [e.record_id for e in rows] == list(range(1, 21))


def test_read_absent_vin(ledger20, admin):
    assert read_records(ledger20, lambda p: p.vin == "WBA00000000000000", admin) == []


def test_read_timestamp_suffix(ledger20, admin):
    # fixture appends at t = 0, 100, ..., 1900
    rows = read_records(ledger20, lambda p: p.timestamp >= 1500.0, admin)
    assert [e.record_id for e in rows] == [16, 17, 18, 19, 20]


def test_read_requires_registration(ledger20):
    with pytest.raises(UnregisteredActor):
        read_records(ledger20, None, Participant("ghost", Role.RSU, False))


# -- modify -------------------------------------------------------------------

@pytest.mark.parametrize("actor_id", ["ctrl-1", "rsu-1", "veh-001"])
def test_modify_always_rejected(ledger20, registry, actor_id):
    before = ledger20.to_snapshot()
    with pytest.raises(ImmutableLedger) as exc:
        attempt_modify(ledger20, 1, report(speed=99.0), registry.get(actor_id), 3.0)
    assert "immutable" in str(exc.value).lower() or "reject" in str(exc.value).lower()
    assert ledger20.to_snapshot() == before
    assert ledger20.tamper_log[-1].actor_id == actor_id


def test_modify_nonexistent_record(ledger20, admin):
    with pytest.raises(ImmutableLedger):
        attempt_modify(ledger20, 999, None, admin)


def test_eight_attempts_logged_chain_intact(ledger20, admin):
    seen = []
    ledger20.listeners.append(seen.append)
    for k in range(8):
        with pytest.raises(ImmutableLedger):
            ledger20.attempt_modify(1 + k, report(), admin, float(k))
    assert len(seen) == 8 == len(ledger20.tamper_log)
    assert [t.clock for t in seen] == [float(k) for k in range(8)]
    assert verify_chain(ledger20).ok


# -- verify -------------------------------------------------------------------

def test_untouched_chain_ok(ledger20):
    status = verify_chain(ledger20)
    assert status.ok and status.first_bad_index is None


def test_flip_bit_entry_5(ledger20):
    flip_payload_bit(ledger20, 5)
    status = verify_chain(ledger20)
    assert not status.ok and status.first_bad_index == 5


def test_truncated_last_hash(ledger20):
    e = ledger20._entries[-1]
    ledger20._entries[-1] = dataclasses.replace(e, entry_hash=e.entry_hash[:-1])
    assert verify_chain(ledger20).first_bad_index == 19


def test_stale_merkle_root_reported_past_end(ledger20):
    ledger20._merkle_root = sha(b"x")
    assert verify_chain(ledger20).first_bad_index == 20


def test_empty_ledger_verifies(registry):
    assert verify_chain(Ledger(registry)).ok


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.data())
def test_any_single_bit_mutation_detected(n, data):
    from cvchain.ledger import Registry
    reg = Registry()
    reg.register("ctrl-1", Role.CONTROLLER)
    ledger = filled_ledger(reg, n)
    index = data.draw(st.integers(0, n - 1))
    target = data.draw(st.sampled_from(["payload", "prev_hash", "entry_hash"]))
    bit = data.draw(st.integers(0, 255))
    e = ledger._entries[index]
    if target == "payload":
        flip_payload_bit(ledger, index)
    else:
        raw = bytearray(getattr(e, target))
        raw[bit // 8] ^= 1 << (bit % 8)
        ledger._entries[index] = dataclasses.replace(e, **{target: bytes(raw)})
    status = verify_chain(ledger)
    assert not status.ok and status.first_bad_index <= index


# -- merkle -------------------------------------------------------------------

def test_merkle_single_leaf():
    h = sha(b"a")
    assert compute_merkle_root([h]) == h


def test_merkle_two_leaves():
    a, b = sha(b"a"), sha(b"b")
    assert compute_merkle_root([a, b]) == sha(a + b)


def test_merkle_four_leaves_by_hand():
    a, b, c, d = (sha(x) for x in (b"a", b"b", b"c", b"d"))
    assert compute_merkle_root([a, b, c, d]) == sha(sha(a + b) + sha(c + d))


def test_merkle_three_leaves_duplicates_last():
    a, b, c = (sha(x) for x in (b"a", b"b", b"c"))
    assert compute_merkle_root([a, b, c]) == sha(sha(a + b) + sha(c + c))


def test_merkle_empty():
    with pytest.raises(EmptyInput):
        compute_merkle_root([])


def test_ledger_root_tracks_entries(ledger20):
    assert ledger20.merkle_root == compute_merkle_root([e.entry_hash for e in ledger20.entries])


# -- registry -----------------------------------------------------------------

def test_controller_is_admin():
    from cvchain.ledger import Registry
    reg = Registry()
    assert register_participant(reg, "ctrl-1", Role.CONTROLLER).is_admin
    assert not register_participant(reg, "rsu-1", "RSU").is_admin


def test_duplicate_id(registry):
    with pytest.raises(DuplicateId):
        register_participant(registry, "rsu-1", Role.RSU)


@pytest.mark.parametrize("role", list(Role))
def test_permissions_exactly_add_read(registry, role):
    p = registry.get({Role.CONTROLLER: "ctrl-1", Role.RSU: "rsu-1", Role.VEHICLE: "veh-001"}[role])
    assert p.permissions == frozenset({Permission.ADD, Permission.READ})
    assert {m.name for m in Permission} == {"ADD", "READ"}


# -- properties ---------------------------------------------------------------

ops = st.lists(st.one_of(
    st.tuples(st.just("append"), st.integers(0, len(VINS) - 1), st.floats(0, 40)),
    st.tuples(st.just("modify"), st.integers(-5, 50), st.sampled_from(["ctrl-1", "rsu-1", "veh-001"])),
    st.tuples(st.just("read"), st.integers(0, 5), st.just(None)),
), max_size=40)


@settings(max_examples=80, deadline=None)
@given(ops)
def test_append_only_prefix_extension(sequence):
    from cvchain.ledger import Registry
    reg = Registry()
    for pid, role in (("ctrl-1", Role.CONTROLLER), ("rsu-1", Role.RSU), ("veh-001", Role.VEHICLE)):
        reg.register(pid, role)
    ledger = Ledger(reg)
    clock = 0.0
    for op, a, b in sequence:
        before = ledger.entries
        if op == "append":
            clock += 1.0
            ledger.append(report(VINS[a], speed=b), reg.get("veh-001"), clock)
        elif op == "modify":
            with pytest.raises(ImmutableLedger):
                ledger.attempt_modify(a, report(), reg.get(b), clock)
        else:
            ledger.read(reg.get("rsu-1"))
        after = ledger.entries
        assert after[:len(before)] == before
    ids = [e.record_id for e in ledger.entries]
    assert ids == list(range(1, len(ids) + 1))
    stamps = [e.payload.timestamp for e in ledger.entries]
    assert stamps == sorted(stamps)
    assert verify_chain(ledger).ok


def test_hash_determinism(registry):
    a = filled_ledger(registry, 12)
    b = filled_ledger(registry, 12)
    assert [e.entry_hash for e in a.entries] == [e.entry_hash for e in b.entries]
    assert a.merkle_root == b.merkle_root


def test_concurrent_appends_linearizable(registry, admin):
    ledger = Ledger(registry)

    def worker(k):
        for i in range(50):
            ledger.append(report(VINS[k]), admin, 0.0)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert [e.record_id for e in ledger.entries] == list(range(1, 201))
    assert verify_chain(ledger).ok


# -- snapshots ----------------------------------------------------------------

def test_snapshot_round_trip(ledger20):
    text = ledger20.to_snapshot()
    again = Ledger.from_snapshot(text)
    assert again.to_snapshot() == text
    assert again.entries == ledger20.entries
    assert verify_snapshot(text).ok


def test_snapshot_layout(ledger20):
    import json
    lines = ledger20.to_snapshot().splitlines()
    header = json.loads(lines[0])
    assert header["hash"] == "sha256" and header["entries"] == 20
    first = json.loads(lines[1])
    assert list(first) == ["record_id", "vin", "gps", "trajectory", "timestamp", "prev_hash", "entry_hash"]
    assert first["prev_hash"] == "0" * 64
    assert json.loads(lines[-1]) == {"merkle_root": ledger20.merkle_root.hex()}


def test_empty_snapshot(registry):
    status = verify_snapshot(Ledger(registry).to_snapshot())
    assert status.ok and status.reason == "ok (empty)"


def test_edited_snapshot_record(ledger20):
    lines = ledger20.to_snapshot().split("\n")
    lines[1 + 5] = lines[1 + 5].replace('"speed":', '"speed":1', 1)
    status = verify_snapshot("\n".join(lines))
    assert not status.ok and status.first_bad_index == 5


def test_blank_file_is_parse_error():
    with pytest.raises(SnapshotParseError):
        verify_snapshot("")


def test_invalid_utf8_located(ledger20):
    data = bytearray(ledger20.to_snapshot().encode())
    start = data.index(b"\n") + 1
    for _ in range(3):
        start = data.index(b"\n", start) + 1
    data[start + 10] = 0xFF  # inside entry line 3
    status = verify_snapshot(bytes(data))
    assert not status.ok and status.first_bad_index == 3


def test_entry_is_frozen(ledger20):
    with pytest.raises(dataclasses.FrozenInstanceError):
        ledger20.entries[0].entry_hash = b""
    assert isinstance(ledger20.entries[0], LedgerEntry)
