"""Acceptance suite: each test exercises one headline guarantee at its stated
tolerance and prints a single PASS/FAIL line."""

import random

import pytest

from nvlog.cli import _bench_one, _run_kv
from nvlog.harness import (audit_roundtrips, checksum_vulnerability_demo,
                           run_crash_suite)
from nvlog.logalg import ALGORITHMS
from nvlog.logalg.base import HEADER_BYTES
from nvlog.logalg.fvb import write_cacheline
from nvlog.pmem import SimMemory
from nvlog.stps import PersistentHashMap


_capture = None


@pytest.fixture(autouse=True)
def _verdict_output(capsys):
    global _capture
    _capture = capsys
    yield
    _capture = None


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    line = (f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
            + (f" ({detail})" if detail else ""))
    # Emit outside pytest's capture so every criterion shows one line in the
    # live run output, pass or fail.
    with _capture.disabled():
        print(line, flush=True)
    assert ok, f"{name}: {detail}"


SUITE_ALGOS = ("cso-vb", "cso-random", "cso-fvb", "tornbit", "crc64",
               "two-rounds", "atlas")

THREE_APPENDS = "crash exhaustive\n" + "".join(
    f"append {bytes([i] * 24).hex()}\n" for i in (0x11, 0x22, 0x33))


def test_crash_consistency_exhaustive_suite():
    """Every enumerated crash state of a 3-append script recovers to an
    in-order prefix with zero mixed-content entries, for all seven logs."""
    bad = []
    total = 0
    for algo in SUITE_ALGOS:
        report = run_crash_suite(THREE_APPENDS, algo=algo)
        total += report.distinct_states
        if report.violations:
            bad.append((algo, len(report.violations)))
    _verdict("crash-consistency-exhaustive", not bad,
             f"{total} states over {len(SUITE_ALGOS)} algorithms"
             + (f"; violations {bad}" if bad else ""))


def test_roundtrip_accounting():
    """Fenced round trips per append match the published per-algorithm costs:
    1.0 for the single-trip family, 2.0 for the two-round baseline, 1.5
    amortized for the linked 32-byte entries, and 1.0 critical-path plus
    about one background init flush per entry for the random-fill scheme."""
    checks = []
    for algo in ("cso-vb", "cso-fvb", "tornbit", "crc32", "crc64"):
        checks.append((algo, audit_roundtrips(algo, 256, 24)
                       .roundtrips_per_append == 1.0))
    checks.append(("two-rounds", audit_roundtrips("two-rounds", 256, 24)
                   .roundtrips_per_append == 2.0))
    checks.append(("atlas", audit_roundtrips("atlas", 256, 24)
                   .roundtrips_per_append == 1.5))
    rnd = audit_roundtrips("cso-random", 256, 56)
    checks.append(("cso-random", rnd.roundtrips_per_append == 1.0
                   and abs(rnd.init_flushes_per_entry - 1.0) <= 0.01))
    bad = [name for name, ok in checks if not ok]
    _verdict("table1-roundtrip-accounting", not bad, ", ".join(
        name for name, _ in checks) + (f"; off: {bad}" if bad else ""))


def _interrupted_append_states(node_lines, old_kv, new_kv):
    region = 8 * node_lines * 64
    mem = SimMemory(region)
    m = PersistentHashMap(mem, 0, region, node_lines=node_lines, nbuckets=16)
    m.append_entry(0, old_kv[0], old_kv[1], 1, 1)
    mem.checkpoint()
    m.append_entry(0, new_kv[0], new_kv[1], 2, 1)
    outcomes = []
    for st in mem.enumerate_crash_states():
        clone = mem.apply_crash(st)
        r = PersistentHashMap(clone, 0, region, node_lines=node_lines,
                              nbuckets=16, create=False)
        outcomes.append((st.cuts, r.parse_entry(0)))
    return outcomes


def test_interrupted_append_never_mixes():
    """A slot overwrite interrupted at any enumerable point reads back as the
    old entry, the new entry, or invalid.  The key/version pair is atomic:
    value bytes may only be torn under the old pair on multi-line nodes."""
    old = (b"K1AA", b"V" * 16)
    new = (b"K2BB", b"W" * 16)
    bad = []
    n_states = 0
    for cuts, e in _interrupted_append_states(1, old, new):
        n_states += 1
        if e is not None and (e.key, e.value, e.version) not in (
                (old[0], old[1], 1), (new[0], new[1], 2)):
            bad.append((1, cuts))
    old4 = (b"key-one-16-bytes", b"v" * 180)
    new4 = (b"key-two-16-bytes", b"w" * 180)
    for cuts, e in _interrupted_append_states(4, old4, new4):
        n_states += 1
        if e is None:
            continue
        if (e.key, e.version) == (old4[0], 1):
            continue  # old pair: value tearing on later lines is allowed
        if (e.key, e.value, e.version) == (new4[0], new4[1], 2):
            continue
        bad.append((4, cuts))
    _verdict("interrupted-append-two-state", not bad,
             f"{n_states} states on 1-line and 4-line nodes"
             + (f"; mixtures {bad[:3]}" if bad else ""))


def test_transaction_atomicity():
    """A crash anywhere inside a 3-element transaction recovers to all three
    elements or none of them."""
    region = 16 * 64
    mem = SimMemory(region)
    m = PersistentHashMap(mem, 0, region, nbuckets=16)
    mem.checkpoint()
    m.txn_update([(b"a", b"1"), (b"b", b"2"), (b"c", b"3")])
    want_all = {b"a": b"1", b"b": b"2", b"c": b"3"}
    bad = []
    states = mem.enumerate_crash_states()
    for st in states:
        clone = mem.apply_crash(st)
        r = PersistentHashMap(clone, 0, region, nbuckets=16, create=False)
        r.recover()
        if r.items() not in ({}, want_all):
            bad.append((st.cuts, r.items()))
    _verdict("transaction-atomicity", not bad,
             f"{len(states)} states" + (f"; partial {bad[:3]}" if bad else ""))


def test_latency_trend_two_rounds_vs_single_trip():
    """Modeled throughput ratio two-rounds : single-trip grows monotonically
    with media latency and reaches at least 1.4x at 800 ns."""
    ratios = []
    for latency in range(0, 801, 100):
        vb = _bench_one("cso-vb", 24, latency, 512, 0, 200, 100)[4]
        tr = _bench_one("two-rounds", 24, latency, 512, 0, 200, 100)[4]
        ratios.append(vb / tr)
    monotone = all(a < b for a, b in zip(ratios, ratios[1:]))
    _verdict("latency-trend-two-rounds", monotone and ratios[-1] >= 1.4,
             f"ratios {[round(r, 3) for r in ratios]}")


def test_kv_workload_direction():
    """Mixed 50/50 read/update workload: the single-trip map beats the
    two-round baseline at every latency and the gap widens with latency."""
    ratios = []
    for latency in range(0, 801, 200):
        stps = _run_kv(False, 128, 2000, latency, 1, 1, 200, 100)[3]
        base = _run_kv(True, 128, 2000, latency, 1, 1, 200, 100)[3]
        ratios.append(stps / base)
    ahead = all(r > 1.0 for r in ratios)
    widening = all(a < b for a, b in zip(ratios, ratios[1:]))
    _verdict("kv-workload-direction", ahead and widening,
             f"ratios {[round(r, 3) for r in ratios]}")


def test_flexible_bit_oracle_equivalence():
    """The incremental line writer picks the same certifying (offset, bit) as
    an independent whole-line reference on 100000 random pairs, and never
    stores a word above the last differing one."""
    rng = random.Random(2024)
    mem = SimMemory(64)
    mismatches = 0
    overshoots = 0
    for _ in range(100_000):
        old = rng.randbytes(64)
        new = bytearray(old)
        for _ in range(rng.randint(1, 8)):
            new[rng.randrange(64)] ^= 1 << rng.randrange(8)
        new = bytes(new)
        mem.store(0, old)
        mark = len(mem.write_log)
        off, bit = write_cacheline(mem, 0, new)
        diff = int.from_bytes(old, "little") ^ int.from_bytes(new, "little")
        if not diff:
            if len(mem.write_log) != mark:
                overshoots += 1
            continue
        word = (diff.bit_length() - 1) // 64
        wdiff = (diff >> (word * 64)) & ((1 << 64) - 1)
        ref = word * 64 + (wdiff & -wdiff).bit_length() - 1
        want_bit = (int.from_bytes(new[ref // 8: ref // 8 + 1], "little")
                    >> (ref % 8)) & 1
        if (off, bit) != (ref, want_bit):
            mismatches += 1
        if any(e.offset_in_line // 8 > word for e in mem.write_log[mark:]):
            overshoots += 1
    _verdict("flexible-bit-oracle", mismatches == 0 and overshoots == 0,
             f"mismatches {mismatches}, overshoots {overshoots}")


def test_crc32_weakness_demonstration():
    """One crafted torn state passes 32-bit checksum validation; the same
    construction under the 64-bit checksum and the validity-bit scheme shows
    zero false valids across a million sampled crash states."""
    planted = checksum_vulnerability_demo("crc32")
    clean = {algo: checksum_vulnerability_demo(algo, samples=1_000_000)
             for algo in ("crc64", "cso-vb")}
    ok = planted.false_valids == 1 and all(
        d.false_valids == 0 for d in clean.values())
    _verdict("crc32-weakness", ok,
             f"crc32 planted {planted.false_valids}; "
             + "; ".join(f"{a} {d.false_valids} over {d.samples_drawn} samples"
                         f" ({d.states_checked} distinct)"
                         for a, d in clean.items()))


def test_snapshot_round_trip_equivalence():
    """Save/load/recover equals in-memory recover, byte-exact, for 100
    randomized workloads across all algorithms."""
    rng = random.Random(99)
    algos = sorted(ALGORITHMS)
    bad = 0
    for i in range(100):
        algo = algos[i % len(algos)]
        cls = ALGORITHMS[algo]
        probe = cls.__new__(cls)
        probe._check_payload_len(24)
        region = HEADER_BYTES + 8 * probe._slot_size(24)
        mem = SimMemory(region)
        log = cls(mem, 0, region, 24)
        handles = []
        for _ in range(rng.randint(0, 12)):
            if log.used + 2 > log.nslots and handles:
                log.trim(handles[-1])
                handles.clear()
            handles.append(log.append(rng.randbytes(24)))
        if mem.pending_flushes:
            mem.sfence()
        import tempfile, os
        fd, path = tempfile.mkstemp()
        os.close(fd)
        try:
            mem.snapshot_save(path)
            loaded = SimMemory.snapshot_load(path)
        finally:
            os.unlink(path)
        a = [e.payload for e in cls.attach(mem, 0, region, 24).recover()]
        b = [e.payload for e in cls.attach(loaded, 0, region, 24).recover()]
        if a != b or loaded.load(0, region) != mem.persisted_image():
            bad += 1
    _verdict("snapshot-round-trip", bad == 0, f"{bad}/100 mismatched")
