"""Worker registry: lifecycle, priority formula, deterministic selection."""

import random

import pytest

from locproof.errors import (
    DuplicateWorker,
    NoEligibleLA,
    NoEligibleWitness,
    UnknownWorker,
)
from locproof.messages import GeoPoint
from locproof.registry import MIN_DISTANCE_M, Registry, WorkerRole


def fresh(range_limit=100.0, ping_timeout=60_000):
    return Registry(ping_timeout_ms=ping_timeout, range_limit_m=range_limit)


def test_register_starts_with_zero_uptime():
    reg = fresh()
    rec = reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 500)
    assert rec.uptime_ms == 0
    assert rec.requests_entertained == 1


def test_duplicate_registration_rejected():
    reg = fresh()
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    with pytest.raises(DuplicateWorker):
        reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 10)


def test_reregistration_after_eviction_resets_first_seen():
    reg = fresh()
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    assert reg.evict_stale(61_000) == ["w1"]
    rec = reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 61_500)
    assert rec.first_seen == 61_500
    assert rec.uptime_ms == 0


def test_authorities_survive_staleness():
    reg = fresh()
    reg.register_entity("la", WorkerRole.AUTHORITY, GeoPoint(0, 0), 0)
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    evicted = reg.evict_stale(500_000)
    assert evicted == ["w1"]
    assert "la" in reg


def test_ping_updates_uptime_and_location():
    reg = fresh()
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    rec = reg.record_ping("w1", GeoPoint(5, 5), 30_000)
    assert rec.uptime_ms == 30_000
    assert rec.loc == GeoPoint(5, 5)


def test_ping_unknown_or_evicted_id():
    reg = fresh()
    with pytest.raises(UnknownWorker):
        reg.record_ping("ghost", GeoPoint(0, 0), 0)
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    reg.evict_stale(120_000)
    with pytest.raises(UnknownWorker):
        reg.record_ping("w1", GeoPoint(0, 0), 130_000)


def test_evict_nothing_when_fresh():
    reg = fresh()
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    reg.record_ping("w1", GeoPoint(0, 0), 50_000)
    assert reg.evict_stale(60_000) == []


def test_priority_formula_direct_case():
    # 2 requests, 100 s uptime, 10 m away -> 2 * 100 / 10 = 20
    reg = fresh()
    rec = reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(10, 0), 0)
    reg.record_ping("w1", GeoPoint(10, 0), 100_000)
    rec.requests_entertained = 2
    assert reg.priority_score(rec, GeoPoint(0, 0), 100_000) == pytest.approx(20.0)


def test_priority_clamps_zero_distance():
    reg = fresh()
    rec = reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    reg.record_ping("w1", GeoPoint(0, 0), 50_000)
    at_zero = reg.priority_score(rec, GeoPoint(0, 0), 50_000)
    at_clamp = reg.priority_score(rec, GeoPoint(MIN_DISTANCE_M, 0), 50_000)
    assert at_zero == pytest.approx(at_clamp)
    assert at_zero == pytest.approx(1 * 50.0 / MIN_DISTANCE_M)


def test_priority_scales_inversely_with_distance():
    reg = fresh()
    near = reg.register_entity("near", WorkerRole.MOBILE, GeoPoint(5, 0), 0)
    far = reg.register_entity("far", WorkerRole.MOBILE, GeoPoint(50, 0), 0)
    reg.record_ping("near", GeoPoint(5, 0), 30_000)
    reg.record_ping("far", GeoPoint(50, 0), 30_000)
    origin = GeoPoint(0, 0)
    assert reg.priority_score(near, origin, 30_000) == pytest.approx(
        10 * reg.priority_score(far, origin, 30_000)
    )


def test_out_of_range_worker_is_ineligible():
    reg = fresh(range_limit=100.0)
    rec = reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(101, 0), 0)
    reg.record_ping("w1", GeoPoint(101, 0), 30_000)
    assert reg.priority_score(rec, GeoPoint(0, 0), 30_000) is None


def test_rotation_pressure_follows_printed_formula():
    # With equal uptime and distance, more past participation means a
    # higher score (the formula as printed, not the stated intent).
    reg = fresh()
    a = reg.register_entity("a", WorkerRole.MOBILE, GeoPoint(10, 0), 0)
    b = reg.register_entity("b", WorkerRole.MOBILE, GeoPoint(0, 10), 0)
    reg.record_ping("a", GeoPoint(10, 0), 40_000)
    reg.record_ping("b", GeoPoint(0, 10), 40_000)
    a.requests_entertained = 5
    b.requests_entertained = 2
    origin = GeoPoint(0, 0)
    assert reg.priority_score(a, origin, 40_000) > reg.priority_score(b, origin, 40_000)


def test_select_single_candidates():
    reg = fresh()
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(3, 4), 0)
    reg.register_entity("la", WorkerRole.AUTHORITY, GeoPoint(8, 0), 0)
    reg.register_entity("p", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    for wid in ("w1", "la", "p"):
        reg.record_ping(wid, reg.get(wid).loc, 30_000)
    assert reg.select_participants("p", GeoPoint(0, 0), 30_000) == ("w1", "la")


def test_prover_alone_in_range_has_no_witness():
    reg = fresh()
    reg.register_entity("p", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    reg.register_entity("la", WorkerRole.AUTHORITY, GeoPoint(8, 0), 0)
    reg.register_entity("w-far", WorkerRole.MOBILE, GeoPoint(500, 500), 0)
    for wid in ("p", "la", "w-far"):
        reg.record_ping(wid, reg.get(wid).loc, 30_000)
    with pytest.raises(NoEligibleWitness):
        reg.select_participants("p", GeoPoint(0, 0), 30_000)


def test_no_authority_in_range():
    reg = fresh()
    reg.register_entity("p", WorkerRole.MOBILE, GeoPoint(0, 0), 0)
    reg.register_entity("w1", WorkerRole.MOBILE, GeoPoint(3, 3), 0)
    for wid in ("p", "w1"):
        reg.record_ping(wid, reg.get(wid).loc, 30_000)
    with pytest.raises(NoEligibleLA):
        reg.select_participants("p", GeoPoint(0, 0), 30_000)


def brute_force_selection(reg: Registry, prover, prover_loc, now):
    """Independent argmax over all workers with the same tie-break."""
    def best(records):
        scored = []
        for rec in records:
            if not reg.is_active(rec, now):
                continue
            score = reg.priority_score(rec, prover_loc, now)
            if score is not None:
                scored.append((-score, rec.id))
        if not scored:
            return None
        return min(scored)[1]

    witnesses = [r for r in reg.workers() if r.role is WorkerRole.MOBILE and r.id != prover]
    authorities = [r for r in reg.workers() if r.role is WorkerRole.AUTHORITY]
    return best(witnesses), best(authorities)


def random_registry(rng: random.Random) -> tuple[Registry, str, GeoPoint, int]:
    reg = fresh(range_limit=rng.choice([50.0, 100.0]))
    n = rng.randint(4, 20)
    now = rng.randint(50_000, 200_000)
    for i in range(n):
        role = WorkerRole.AUTHORITY if rng.random() < 0.3 else WorkerRole.MOBILE
        loc = GeoPoint(rng.uniform(-80, 80), rng.uniform(-80, 80))
        first = rng.randint(0, 40_000)
        rec = reg.register_entity(f"w{i:02d}", role, loc, first)
        rec.last_ping = rng.randint(first, now)
        rec.requests_entertained = rng.randint(1, 9)
    prover_loc = GeoPoint(rng.uniform(-40, 40), rng.uniform(-40, 40))
    return reg, "w00", prover_loc, now


def test_selection_matches_brute_force_over_500_registries():
    rng = random.Random(2024)
    checked = 0
    for _ in range(500):
        reg, prover, loc, now = random_registry(rng)
        expect_w, expect_la = brute_force_selection(reg, prover, loc, now)
        if expect_w is None or expect_la is None:
            with pytest.raises((NoEligibleWitness, NoEligibleLA)):
                reg.select_participants(prover, loc, now)
            continue
        assert reg.select_participants(prover, loc, now) == (expect_w, expect_la)
        checked += 1
    assert checked > 300  # the generator must mostly produce solvable cases


def test_replicas_with_identical_history_agree():
    ops = []
    rng = random.Random(5)
    for i in range(30):
        loc = GeoPoint(rng.uniform(-60, 60), rng.uniform(-60, 60))
        role = WorkerRole.AUTHORITY if i % 5 == 0 else WorkerRole.MOBILE
        ops.append(("reg", f"w{i}", role, loc, i * 100))
        ops.append(("ping", f"w{i}", loc, 20_000 + i * 37))
    replicas = [fresh(), fresh()]
    for reg in replicas:
        for op in ops:
            if op[0] == "reg":
                reg.register_entity(op[1], op[2], op[3], op[4])
            else:
                reg.record_ping(op[1], op[2], op[3])
    sel = [r.select_participants("w1", GeoPoint(0, 0), 30_000) for r in replicas]
    assert sel[0] == sel[1]
