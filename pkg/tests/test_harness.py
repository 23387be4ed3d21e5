import os
from dataclasses import dataclass

from hypothesis import given, settings
from hypothesis import strategies as st

from splitls.client import ClientConnection
from splitls.events import CHAIN, EventKind, EventLog
from splitls.harness import (Action, ManglerPolicy, build_stack, check_agreement, format_tsv, run_agreement,
                             run_codec_fuzz, run_confinement, run_handshake, run_pfs_battery, run_replay_battery,
                             scan_secret_confinement, snapshot_memory)


def _clean_log(identity, n):
    log = EventLog()
    with build_stack("cs_cert_dhe_r", None, identity=identity, event_log=log) as stack:
        for _ in range(n):
            run_handshake(ClientConnection(identity.cert_chain[0], event_log=log), stack.engine.session())
    return log


def test_clean_handshakes_accepted(identity):
    v = check_agreement(_clean_log(identity, 100))
    assert v.ok and v.checked == 100


def test_duplicate_client_finished_names_pair(identity):
    log = _clean_log(identity, 3)
    cf = [e for e in log.events if e.kind is EventKind.C_CLIENT_FINISHED][1]
    dup = log.append(cf)
    v = check_agreement(log)
    assert not v.ok
    assert v.pair == (cf.index, dup.index)
    assert f"#{cf.index}" in v.violation and f"#{dup.index}" in v.violation


def test_missing_signature_event_rejected(identity):
    log = _clean_log(identity, 2)
    events = [e for e in log.events if not (e.kind is EventKind.CS_SENT_CV and e.index > 5)]
    v = check_agreement(events)
    assert not v.ok and "CS_sent_CV" in v.violation


def test_client_finished_before_chain_rejected(identity):
    log = _clean_log(identity, 1)
    events = log.events
    reordered = EventLog()
    for ev in [events[-1]] + events[:-1]:
        reordered.append(ev)
    assert not check_agreement(reordered).ok


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_interleavings_accepted(data):
    # any interleaving that keeps each session's chain in order is accepted
    n = data.draw(st.integers(1, 6))
    keys = [(os.urandom(32), os.urandom(32), os.urandom(32)) for _ in range(n)]
    pos = [0] * n
    log = EventLog()
    while any(p < len(CHAIN) for p in pos):
        i = data.draw(st.sampled_from([k for k in range(n) if pos[k] < len(CHAIN)]))
        log.emit(CHAIN[pos[i]], f"s{i}", *keys[i])
        pos[i] += 1
    v = check_agreement(log)
    assert v.ok and v.checked == n


def test_mangler_is_deterministic():
    a, b = ManglerPolicy(7), ManglerPolicy(7)
    assert [a.choose() for _ in range(200)] == [b.choose() for _ in range(200)]
    assert a.flip(bytes(64)) == b.flip(bytes(64))
    assert bin(int.from_bytes(a.flip(bytes(16)), "big")).count("1") == 1


def test_agreement_under_mangling(identity):
    r = run_agreement(40, seed=3, identity=identity)
    assert r.ok and r.verdict.checked == r.completed
    assert r.actions[Action.PASS] > 0 and "verdict\taccept" in r.to_tsv()


def test_all_aborted_run_accepted(identity):
    r = run_agreement(10, policy=ManglerPolicy(1, {Action.BITFLIP: 1.0}), identity=identity)
    assert r.completed == 0 and r.aborted == 10
    assert r.ok and r.verdict.checked == 0


def test_leaked_key_detected(identity):
    r = run_agreement(30, seed=0, leak_key=True, identity=identity)
    assert not r.ok and r.verdict.violation


def test_replay_battery_small(identity):
    r = run_replay_battery(60, identity=identity)
    assert r.ok and r.total_attempts == 60 and r.total_acceptances == 0
    assert r.freshness_mismatch_attempts > 0
    assert r.freshness_mismatch_violations == r.freshness_mismatch_attempts
    assert r.idempotent_replays > 0 and r.idempotent_mismatches == 0


def test_pfs_small(identity):
    r = run_pfs_battery(50, identity=identity)
    assert r.ok and r.distinct_ke_s == 50


def test_confinement(identity):
    assert run_confinement(handshakes=1, identity=identity).ok


def test_confinement_leaky_control(identity):
    r = run_confinement([("cs_cert_dhe_r", "cs_psk_dhe_r")], leaky=True, handshakes=1, identity=identity)
    assert not r.ok
    assert all(where == "logs" and what.startswith("cs_v") for where, what in r.hits)


def test_codec_fuzz_small():
    r = run_codec_fuzz(3000, seed=5)
    assert r.ok and r.cases == 3000
    assert sum(r.structured_errors.values()) > 0


@dataclass
class _Node:
    payload: bytes
    child: object = None


def test_snapshot_memory_walks_objects():
    secret = os.urandom(16)
    root = _Node(b"a", {"k": [(_Node(bytearray(secret)),)]})
    assert secret in snapshot_memory(root)


def test_scan_hex_in_text():
    s = os.urandom(16)
    hits = scan_secret_confinement({"log": f"x {s.hex()} y", "wire": b"nothing", "raw": b"..." + s},
                                   {"k": s, "empty": b""})
    assert sorted(hits) == [("log", "k"), ("raw", "k")]


def test_format_tsv():
    assert format_tsv(("a", "b"), [(1, "x"), (2, "y")]) == "a\tb\n1\tx\n2\ty\n"


def test_format_tsv_empty():
    assert format_tsv(("a",), []) == "a\n"
