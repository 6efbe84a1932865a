"""Quorum mechanics: intake, evaluation, accumulation, sealing, validation."""

import itertools
import random
from dataclasses import replace

import pytest

from conftest import make_bed, seeded_keys, signed_request
from locproof import codec
from locproof.consensus import (
    BlockReject,
    ConsensusConfig,
    PendingConsensus,
    PendingState,
    SupervisorNode,
)
from locproof.crypto import KeyDirectory, digest, generate_keypair, sign
from locproof.errors import (
    DuplicateAck,
    InvalidSignature,
    MismatchedRequest,
    StaleRequest,
    UnknownProver,
)
from locproof.ledger import LedgerPolicy
from locproof.messages import (
    DecisionAck,
    GeoPoint,
    Signature,
    canonical_encode,
    request_key,
    signing_payload,
)
from locproof.registry import Registry, WorkerRole


def test_threshold_arithmetic():
    assert ConsensusConfig(15).threshold == 8
    assert ConsensusConfig(1).threshold == 1
    assert ConsensusConfig(5).threshold == 3
    assert ConsensusConfig(15, k=5).threshold == 12
    with pytest.raises(ValueError):
        ConsensusConfig(3, k=3)  # threshold would exceed the node count
    with pytest.raises(ValueError):
        ConsensusConfig(5, k=0)


def test_receive_embeds_request_byte_identically(bed):
    preq = signed_request(bed.prover_keys, 20_000, GeoPoint(0, 0))
    breq = bed.node.receive_proof_request(preq, 20_020)
    assert canonical_encode(breq.preq) == canonical_encode(preq)
    assert breq.rrsn == bed.node.id


def test_receive_rejects_tampered_signature(bed):
    preq = signed_request(bed.prover_keys, 20_000, GeoPoint(0, 0))
    bad = replace(preq, sig=replace(preq.sig, data=b"\x01" * 56))
    with pytest.raises(InvalidSignature):
        bed.node.receive_proof_request(bad, 20_020)


def test_receive_rejects_unknown_prover(bed):
    outsider = seeded_keys("outsider")
    preq = signed_request(outsider, 20_000, GeoPoint(0, 0))
    with pytest.raises(UnknownProver):
        bed.node.receive_proof_request(preq, 20_020)


def test_evaluate_returns_registry_choice(bed):
    preq = signed_request(bed.prover_keys, 20_000, GeoPoint(0, 0))
    breq = bed.node.receive_proof_request(preq, 20_020)
    ack = bed.node.evaluate_request(breq, 20_040)
    expected = bed.node.registry.select_participants(bed.prover, GeoPoint(0, 0), 20_040)
    assert (ack.witness_choice, ack.la_choice) == expected
    assert ack.sn == bed.node.id


def test_evaluate_rejects_stale_relay(bed):
    preq = signed_request(bed.prover_keys, 20_000, GeoPoint(0, 0))
    breq = bed.node.receive_proof_request(preq, 20_020)
    with pytest.raises(StaleRequest):
        bed.node.evaluate_request(breq, 20_020 + 30_001)


def test_evaluate_declines_without_eligible_workers(bed):
    far = GeoPoint(5_000.0, 5_000.0)
    preq = signed_request(bed.prover_keys, 20_000, far)
    breq = bed.node.receive_proof_request(preq, 20_020)
    assert bed.node.evaluate_request(breq, 20_040) is None


def _node_group(n: int, k: int = 1):
    """n supervisor nodes sharing a directory and synchronized registries."""
    directory = KeyDirectory()
    keys = [seeded_keys(f"sn-{i}") for i in range(n)]
    for kp in keys:
        directory.register(kp.fingerprint, kp.public_der, supervisor=True)
    prover = seeded_keys("prover")
    witness = seeded_keys("witness")
    authority = seeded_keys("authority")
    for kp in (prover, witness, authority):
        directory.register(kp.fingerprint, kp.public_der)
    nodes = []
    for kp in keys:
        reg = Registry()
        for wk, role, loc in (
            (prover, WorkerRole.MOBILE, GeoPoint(0, 0)),
            (witness, WorkerRole.MOBILE, GeoPoint(3, 4)),
            (authority, WorkerRole.AUTHORITY, GeoPoint(8, 0)),
        ):
            reg.register_entity(wk.fingerprint, role, loc, 0)
            reg.record_ping(wk.fingerprint, loc, 10_000)
        nodes.append(
            SupervisorNode(
                kp.fingerprint, kp, ConsensusConfig(n, k), directory, reg, LedgerPolicy()
            )
        )
    return nodes, prover


def test_identical_registries_give_identical_choices():
    nodes, prover = _node_group(15)
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = nodes[0].receive_proof_request(preq, 20_020)
    choices = set()
    for node in nodes:
        ack = node.evaluate_request(breq, 20_040)
        choices.add((ack.witness_choice, ack.la_choice))
    assert len(choices) == 1


def test_accumulate_reaches_threshold_at_eighth_matching_ack():
    nodes, _ = _node_group(15)
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, 20_020)
    pending = rrsn.pending[request_key(breq)]
    acks = [node.evaluate_request(breq, 20_040) for node in nodes]
    for i, ack in enumerate(acks):
        ready = rrsn.accumulate_ack(pending, ack)
        if i < 7:
            assert ready is None
        if i == 7:
            assert ready is not None
            assert len(ready.acks) == 8
            break
    assert pending.state is PendingState.FINALIZED


def test_single_node_quorum():
    nodes, _ = _node_group(1)
    node = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = node.receive_proof_request(preq, 20_020)
    pending = node.pending[request_key(breq)]
    ack = node.evaluate_request(breq, 20_040)
    ready = node.accumulate_ack(pending, ack)
    assert ready is not None and len(ready.acks) == 1


def test_duplicate_and_mismatched_acks_rejected():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, 20_020)
    pending = rrsn.pending[request_key(breq)]
    ack = nodes[1].evaluate_request(breq, 20_040)
    assert rrsn.accumulate_ack(pending, ack) is None
    with pytest.raises(DuplicateAck):
        rrsn.accumulate_ack(pending, ack)
    other_preq = signed_request(seeded_keys("prover"), 21_000, GeoPoint(0, 0))
    other_breq = rrsn.receive_proof_request(other_preq, 21_020)
    stray = nodes[2].evaluate_request(other_breq, 21_040)
    with pytest.raises(MismatchedRequest):
        rrsn.accumulate_ack(pending, stray)


def test_accumulate_rejects_bad_ack_signature():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, 20_020)
    pending = rrsn.pending[request_key(breq)]
    ack = nodes[1].evaluate_request(breq, 20_040)
    forged = replace(ack, sig=replace(ack.sig, data=b"\x00" * 56))
    with pytest.raises(InvalidSignature):
        rrsn.accumulate_ack(pending, forged)


# ---------------------------------------------------------------------------
# Threshold soundness oracle: exhaustive / sampled arrival interleavings
# ---------------------------------------------------------------------------

def _synthetic_acks(nodes, breq, pair_assignment):
    """One signed ack per node, each voting for pair 'A' or 'B'."""
    pair_ids = {
        "A": ("witness-A", "authority-A"),
        "B": ("witness-B", "authority-B"),
    }
    acks = []
    for node, vote in zip(nodes, pair_assignment):
        w, la = pair_ids[vote]
        draft = DecisionAck(
            sn=node.id, t=20_040, witness_choice=w, la_choice=la,
            req=breq, sig=Signature(b"", node.id),
        )
        acks.append(
            replace(draft, sig=Signature(sign(node.keypair, signing_payload(draft)), node.id))
        )
    return acks


def _finalization_check(n: int, assignment, order, rrsn_cls_nodes):
    """Run one arrival order through a fresh pending; compare against the
    counting oracle: a block forms iff some pair reaches floor(n/2)+1."""
    nodes, _ = rrsn_cls_nodes
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, 20_020)
    pending = rrsn.pending[request_key(breq)]
    acks = _synthetic_acks(nodes, breq, assignment)
    threshold = n // 2 + 1
    finalized = None
    for idx in order:
        result = rrsn.accumulate_ack(pending, acks[idx])
        if pending.state is PendingState.FINALIZED and finalized is None:
            finalized = result
    possible = max(
        sum(1 for v in assignment if v == "A"),
        sum(1 for v in assignment if v == "B"),
    )
    if possible >= threshold:
        assert finalized is not None, (assignment, order)
        winner = {"witness-A": "A", "witness-B": "B"}[finalized.witness]
        assert len(finalized.acks) == threshold
        assert all(
            (a.witness_choice, a.la_choice)
            == ((f"witness-{winner}"), (f"authority-{winner}"))
            for a in finalized.acks
        )
    else:
        assert finalized is None, (assignment, order)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_threshold_soundness_exhaustive(n):
    rrsn_nodes = _node_group(n)
    for assignment in itertools.product("AB", repeat=n):
        for order in itertools.permutations(range(n)):
            _finalization_check(n, assignment, order, rrsn_nodes)


def test_threshold_soundness_sampled_n7():
    n = 7
    rrsn_nodes = _node_group(n)
    rng = random.Random(7)
    for _ in range(10_000 // n):
        assignment = tuple(rng.choice("AB") for _ in range(n))
        order = list(range(n))
        rng.shuffle(order)
        _finalization_check(n, assignment, order, rrsn_nodes)


# ---------------------------------------------------------------------------
# Sealing and validation
# ---------------------------------------------------------------------------

def _sealed_block(nodes, t0=20_000):
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), t0, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, t0 + 20)
    pending = rrsn.pending[request_key(breq)]
    ready = None
    for node in nodes:
        ack = node.evaluate_request(breq, t0 + 40)
        if ready is None:
            ready = rrsn.accumulate_ack(pending, ack)
    return rrsn.finalize_block(ready, t0 + 60)


def test_first_block_chains_from_genesis():
    nodes, _ = _node_group(5)
    block, approval = _sealed_block(nodes)
    from locproof.messages import chain_bytes

    assert block.id == digest(digest(b"") + chain_bytes(block))
    assert approval.block_id == block.id


def test_second_block_chains_over_first():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    block1, _ = _sealed_block(nodes, t0=20_000)
    for node in nodes:
        assert node.validate_decision_block(block1) is None
        node.commit_block(block1)
    block2, _ = _sealed_block(nodes, t0=21_000)
    from locproof.messages import chain_bytes

    assert block2.id == digest(digest(chain_bytes(block1)) + chain_bytes(block2))


def test_back_to_back_sealing_chains_optimistically():
    # A busy receiving node seals two blocks before either commit lands.
    nodes, _ = _node_group(5)
    block1, _ = _sealed_block(nodes, t0=20_000)
    block2, _ = _sealed_block(nodes, t0=21_000)
    from locproof.messages import chain_bytes

    assert block2.id == digest(digest(chain_bytes(block1)) + chain_bytes(block2))
    for node in nodes:
        node.commit_block(block1)
        node.commit_block(block2)
        assert node.decisions.audit() is None


def test_all_nodes_accept_honest_block():
    nodes, _ = _node_group(15)
    block, _ = _sealed_block(nodes)
    assert all(node.validate_decision_block(block) is None for node in nodes)


def test_substituted_pair_without_quorum_is_rejected():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    block, _ = _sealed_block(nodes)
    hijacked = replace(block, witness="crony-witness", la="crony-authority")
    hijacked = replace(
        hijacked,
        sig=Signature(sign(rrsn.keypair, signing_payload(hijacked)), rrsn.id),
        id=block.id,
    )
    for node in nodes[1:]:
        assert node.validate_decision_block(hijacked) is BlockReject.THRESHOLD_NOT_MET


def test_perturbed_ack_signature_is_rejected():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    block, _ = _sealed_block(nodes)
    bad_ack = replace(
        block.acks[1], sig=replace(block.acks[1].sig, data=b"\x00" * 56)
    )
    acks = (block.acks[0], bad_ack) + block.acks[2:]
    doctored = replace(block, acks=acks)
    doctored = replace(
        doctored, sig=Signature(sign(rrsn.keypair, signing_payload(doctored)), rrsn.id)
    )
    for node in nodes[1:]:
        assert node.validate_decision_block(doctored) is BlockReject.INVALID_ACK_SIGNATURE


def test_unseen_request_is_rejected():
    nodes, _ = _node_group(5)
    block, _ = _sealed_block(nodes)
    bystander_keys = seeded_keys("sn-99")
    nodes[0].directory.register(bystander_keys.fingerprint, bystander_keys.public_der,
                                supervisor=True)
    bystander = SupervisorNode(
        bystander_keys.fingerprint,
        bystander_keys,
        ConsensusConfig(5),
        nodes[0].directory,
        Registry(),
        LedgerPolicy(),
    )
    assert bystander.validate_decision_block(block) is BlockReject.UNSEEN_REQUEST


def test_own_ack_substitution_detected():
    nodes, _ = _node_group(5)
    rrsn = nodes[0]
    preq = signed_request(seeded_keys("prover"), 20_000, GeoPoint(0, 0))
    breq = rrsn.receive_proof_request(preq, 20_020)
    pending = rrsn.pending[request_key(breq)]
    ready = None
    acks = []
    for node in nodes:
        ack = node.evaluate_request(breq, 20_040)
        acks.append(ack)
        if ready is None:
            ready = rrsn.accumulate_ack(pending, ack)
    block, _ = rrsn.finalize_block(ready, 20_060)
    # forge a different timestamp into node 1's embedded ack, re-signed by
    # the rrsn so the outer envelope still verifies
    victim = nodes[1]
    resigned = replace(acks[1], t=acks[1].t + 5)
    resigned = replace(
        resigned, sig=Signature(sign(victim.keypair, signing_payload(resigned)), victim.id)
    )
    doctored = replace(block, acks=(block.acks[0], resigned) + block.acks[2:])
    doctored = replace(
        doctored, sig=Signature(sign(rrsn.keypair, signing_payload(doctored)), rrsn.id)
    )
    assert victim.validate_decision_block(doctored) is BlockReject.OWN_ACK_MISMATCH
