"""Shared fixtures: a small admin layer plus hand-driven protocol runs.

The bundle fixture walks the whole exchange through the library APIs (no
simulator) with explicit timestamps, so ledger and protocol tests can pick
apart any intermediate artifact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

import pytest

from locproof import protocol
from locproof.consensus import ConsensusConfig, SupervisorNode
from locproof.crypto import KeyDirectory, KeyPair, generate_keypair
from locproof.ledger import LedgerPolicy
from locproof.messages import (
    ApprovalMessage,
    DecisionBlock,
    FinalizedProof,
    GeoPoint,
    ProofRequest,
    Signature,
)
from locproof.protocol import LocalizationCheck
from locproof.registry import Registry, WorkerRole
from locproof.crypto import sign
from locproof.messages import signing_payload


def seeded_keys(tag: str, level: int = 224) -> KeyPair:
    seed = random.Random(tag).getrandbits(62)
    return generate_keypair(seed, level)


def signed_request(keys: KeyPair, t: int, loc: GeoPoint) -> ProofRequest:
    draft = ProofRequest(prover=keys.fingerprint, t=t, loc=loc,
                         sig=Signature(b"", keys.fingerprint))
    return replace(
        draft, sig=Signature(sign(keys, signing_payload(draft)), keys.fingerprint)
    )


@dataclass
class Bed:
    """One supervisor node with a populated registry and key directory."""

    directory: KeyDirectory
    node: SupervisorNode
    sn_keys: KeyPair
    prover_keys: KeyPair
    witness_keys: KeyPair
    la_keys: KeyPair
    policy: LedgerPolicy

    @property
    def prover(self) -> str:
        return self.prover_keys.fingerprint

    @property
    def witness(self) -> str:
        return self.witness_keys.fingerprint

    @property
    def la(self) -> str:
        return self.la_keys.fingerprint


def make_bed(n_supervisors: int = 1, k: int = 1) -> Bed:
    directory = KeyDirectory()
    sn_keys = seeded_keys("sn-0")
    directory.register(sn_keys.fingerprint, sn_keys.public_der, supervisor=True)
    for i in range(1, n_supervisors):
        extra = seeded_keys(f"sn-{i}")
        directory.register(extra.fingerprint, extra.public_der, supervisor=True)
    prover_keys = seeded_keys("prover")
    witness_keys = seeded_keys("witness")
    la_keys = seeded_keys("authority")
    policy = LedgerPolicy(assertion_window_ms=5_000, skew_ms=10_000)
    registry = Registry(ping_timeout_ms=60_000, range_limit_m=100.0)
    node = SupervisorNode(
        sn_keys.fingerprint,
        sn_keys,
        ConsensusConfig(n_supervisors=n_supervisors, k=k),
        directory,
        registry,
        policy,
    )
    for keys, role, loc in (
        (prover_keys, WorkerRole.MOBILE, GeoPoint(0.0, 0.0)),
        (witness_keys, WorkerRole.MOBILE, GeoPoint(3.0, 4.0)),
        (la_keys, WorkerRole.AUTHORITY, GeoPoint(8.0, 0.0)),
    ):
        directory.register(keys.fingerprint, keys.public_der)
        registry.register_entity(keys.fingerprint, role, loc, 0)
        registry.record_ping(keys.fingerprint, loc, 10_000)
    return Bed(
        directory=directory,
        node=node,
        sn_keys=sn_keys,
        prover_keys=prover_keys,
        witness_keys=witness_keys,
        la_keys=la_keys,
        policy=policy,
    )


@dataclass
class Bundle:
    """A complete honest run's artifacts, produced without the simulator."""

    bed: Bed
    block: DecisionBlock
    approval: ApprovalMessage
    final: FinalizedProof


def make_bundle(bed: Bed | None = None, t0: int = 20_000,
                witness_extra_ms: int = 0) -> Bundle:
    """Walk one full honest exchange; ``witness_extra_ms`` shifts the
    witness's clock to fabricate late assertions."""
    bed = bed or make_bed()
    node = bed.node
    preq = signed_request(bed.prover_keys, t0, GeoPoint(0.0, 0.0))
    breq = node.receive_proof_request(preq, t0 + 20)
    ack = node.evaluate_request(breq, t0 + 40)
    from locproof.messages import request_key

    pending = node.pending[request_key(breq)]
    ready = node.accumulate_ack(pending, ack)
    assert ready is not None
    block, approval = node.finalize_block(ready, t0 + 60)
    assert node.validate_decision_block(block) is None
    node.commit_block(block)

    here = GeoPoint(0.0, 0.0)
    check = LocalizationCheck(claimed=here, observed=here, range_m=100.0)
    sreq = protocol.prover_start(bed.prover, bed.prover_keys, bed.directory,
                                 approval, t0 + 80)
    ereq = protocol.la_issue_proof(bed.la, bed.la_keys, bed.directory,
                                   approval, sreq, check, t0 + 240)
    alp = protocol.witness_assert(bed.witness, bed.witness_keys, bed.directory,
                                  approval, ereq, check,
                                  t0 + 400 + witness_extra_ms)
    alp = protocol.la_forward_alp(bed.la, bed.directory, bed.witness, alp, t0 + 420)
    vreq = protocol.prover_verify(alp, t0 + 440)
    from locproof.crypto import digest
    from locproof.messages import canonical_encode

    vr = protocol.witness_answer(bed.witness, bed.witness_keys, vreq,
                                 digest(canonical_encode(alp)),
                                 t0 + 460 + witness_extra_ms)
    ack_signed = protocol.prover_ack(bed.prover, bed.prover_keys, bed.directory,
                                     alp, vr, bed.witness,
                                     t0 + 480 + witness_extra_ms)
    final = protocol.la_finalize(bed.la, bed.la_keys, bed.directory,
                                 ack_signed, bed.prover,
                                 t0 + 500 + witness_extra_ms)
    return Bundle(bed=bed, block=block, approval=approval, final=final)


@pytest.fixture
def bed() -> Bed:
    return make_bed()


@pytest.fixture
def bundle() -> Bundle:
    return make_bundle()
