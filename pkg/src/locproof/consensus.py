"""Supervisor-node logic for decentralized participant selection.

A proof request reaches one supervisor node (the receiving node for that
request), which relays it to the whole admin layer.  Every node evaluates
the request against its own worker-registry replica and returns a signed
acknowledgement naming its chosen witness and location authority.  The
receiving node collects acknowledgements until some (witness, authority)
pair is backed by ``floor(N/2) + K`` distinct nodes, then seals them into
a decision block, chains it, and issues the approval that lets the proof
generation phase start.

Validation of a propagated block is purely structural: enough distinct,
correctly signed acknowledgements for the pair the block names, over a
request this node actually saw.  A node that disagrees with the outcome
but finds the threshold genuinely met still accepts - that is what makes
the admin layer converge, and also exactly why compromising a threshold's
worth of nodes is the documented breaking point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from . import codec
from .crypto import KeyDirectory, KeyPair, sign
from .errors import (
    DuplicateAck,
    InvalidSignature,
    MismatchedRequest,
    NoEligibleLA,
    NoEligibleWitness,
    StaleRequest,
    UnknownProver,
)
from .ledger import DecisionChain, LedgerPolicy, ProvenanceChain
from .messages import (
    ApprovalMessage,
    BroadcastRequest,
    DecisionAck,
    DecisionBlock,
    EntityId,
    FinalizedProof,
    ProofRequest,
    Signature,
    Timestamp,
    block_chain_id,
    chain_bytes,
    request_key,
    signing_payload,
)
from .registry import Registry


@dataclass(frozen=True)
class ConsensusConfig:
    n_supervisors: int
    k: int = 1
    freshness_window_ms: int = 30_000
    consensus_timeout_ms: int = 10_000

    def __post_init__(self):
        if self.n_supervisors < 1:
            raise ValueError("need at least one supervisor node")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.threshold > self.n_supervisors:
            raise ValueError(
                f"threshold {self.threshold} exceeds supervisor count {self.n_supervisors}"
            )

    @property
    def threshold(self) -> int:
        return self.n_supervisors // 2 + self.k


class PendingState(enum.Enum):
    COLLECTING = "collecting"
    FINALIZED = "finalized"
    FAILED = "failed"


@dataclass
class PendingConsensus:
    """Acknowledgements gathered so far for one relayed request."""

    request: BroadcastRequest
    key: bytes
    created: Timestamp
    deadline: Timestamp
    acks: dict[EntityId, DecisionAck] = field(default_factory=dict)
    state: PendingState = PendingState.COLLECTING


class ReadyDecision(NamedTuple):
    witness: EntityId
    la: EntityId
    acks: tuple[DecisionAck, ...]


class BlockReject(str, enum.Enum):
    """Structural reasons a propagated decision block is discarded."""

    INVALID_ISSUER_SIGNATURE = "invalid_issuer_signature"
    INVALID_ACK_SIGNATURE = "invalid_ack_signature"
    DUPLICATE_ACK_SIGNER = "duplicate_ack_signer"
    MIXED_REQUESTS = "mixed_requests"
    THRESHOLD_NOT_MET = "threshold_not_met"
    OWN_ACK_MISMATCH = "own_ack_mismatch"
    UNSEEN_REQUEST = "unseen_request"


class SupervisorNode:
    """One admin-layer peer: registry replica, both ledgers, quorum state."""

    def __init__(
        self,
        node_id: EntityId,
        keypair: KeyPair,
        config: ConsensusConfig,
        directory: KeyDirectory,
        registry: Registry,
        policy: LedgerPolicy | None = None,
    ):
        self.id = node_id
        self.keypair = keypair
        self.config = config
        self.directory = directory
        self.registry = registry
        self.policy = policy or LedgerPolicy()
        self.decisions = DecisionChain()
        self.provenance = ProvenanceChain()
        self.pending: dict[bytes, PendingConsensus] = {}
        self._seen_requests: set[bytes] = set()
        self._sent_acks: dict[bytes, DecisionAck] = {}
        # Blocks this node finalized but has not yet seen committed; lets a
        # busy receiving node chain several blocks back to back.
        self._optimistic_tip: DecisionBlock | None = None
        self._outstanding = 0

    @property
    def threshold(self) -> int:
        return self.config.threshold

    # -- request intake (receiving-node role) --------------------------------

    def receive_proof_request(self, preq: ProofRequest, now: Timestamp) -> BroadcastRequest:
        """Validate a prover's request and wrap it for admin-layer relay."""
        if not self.directory.knows(preq.prover):
            raise UnknownProver(preq.prover)
        if preq.sig.signer != preq.prover or not self.directory.check(
            preq.prover, signing_payload(preq), preq.sig.data
        ):
            raise InvalidSignature("proof request signature does not verify")
        draft = BroadcastRequest(preq, now, Signature(b"", self.id), self.id)
        breq = replace(
            draft,
            sig_t=Signature(sign(self.keypair, signing_payload(draft)), self.id),
        )
        key = request_key(breq)
        self.pending[key] = PendingConsensus(
            request=breq,
            key=key,
            created=now,
            deadline=now + self.config.consensus_timeout_ms,
        )
        return breq

    # -- evaluation (every node) ----------------------------------------------

    def evaluate_request(self, breq: BroadcastRequest, now: Timestamp) -> DecisionAck | None:
        """Pick participants for a relayed request and sign the choice.

        Returns None when no eligible witness or authority is in range: the
        node simply stays silent and the receiving node's consensus deadline
        handles the rest.
        """
        if now - breq.t_rrsn > self.config.freshness_window_ms:
            raise StaleRequest(f"relay stamp {breq.t_rrsn} too old at {now}")
        if breq.sig_t.signer != breq.rrsn or not self.directory.is_supervisor(breq.rrsn):
            raise InvalidSignature("relay stamp not from a supervisor node")
        if not self.directory.check(
            breq.rrsn, codec.encode_fields(breq, ("t_rrsn",)), breq.sig_t.data
        ):
            raise InvalidSignature("relay stamp signature does not verify")
        preq = breq.preq
        if preq.sig.signer != preq.prover or not self.directory.check(
            preq.prover, signing_payload(preq), preq.sig.data
        ):
            raise InvalidSignature("embedded proof request does not verify")
        key = request_key(breq)
        self._seen_requests.add(key)
        try:
            witness, la = self.registry.select_participants(preq.prover, preq.loc, now)
        except (NoEligibleWitness, NoEligibleLA):
            return None
        ack = DecisionAck(
            sn=self.id,
            t=now,
            witness_choice=witness,
            la_choice=la,
            req=breq,
            sig=Signature(b"", self.id),
        )
        ack = replace(ack, sig=Signature(sign(self.keypair, signing_payload(ack)), self.id))
        self._sent_acks[key] = ack
        return ack

    # -- accumulation and sealing (receiving-node role) -------------------------

    def accumulate_ack(self, pending: PendingConsensus, ack: DecisionAck) -> ReadyDecision | None:
        """Record one acknowledgement; returns the decision once the
        threshold is met, in which case ``pending`` flips to FINALIZED.

        The acks belonging to the winning pair are returned in arrival
        order, which fixes their order inside the block for everyone.
        """
        if pending.state is not PendingState.COLLECTING:
            return None
        if request_key(ack.req) != pending.key:
            raise MismatchedRequest("ack references a different request")
        if ack.sn in pending.acks:
            raise DuplicateAck(ack.sn)
        if (
            ack.sig.signer != ack.sn
            or not self.directory.is_supervisor(ack.sn)
            or not self.directory.check(ack.sn, signing_payload(ack), ack.sig.data)
        ):
            raise InvalidSignature(f"ack from {ack.sn} does not verify")
        pending.acks[ack.sn] = ack
        pair = (ack.witness_choice, ack.la_choice)
        matching = [
            a for a in pending.acks.values() if (a.witness_choice, a.la_choice) == pair
        ]
        if len(matching) >= self.config.threshold:
            pending.state = PendingState.FINALIZED
            return ReadyDecision(witness=pair[0], la=pair[1], acks=tuple(matching))
        return None

    def finalize_block(
        self, ready: ReadyDecision, now: Timestamp
    ) -> tuple[DecisionBlock, ApprovalMessage]:
        """Seal a reached decision into a signed, chained block plus the
        approval message for the prover and the chosen workers.

        The block chains against this node's latest tip, counting blocks it
        has finalized but not yet seen committed, so back-to-back decisions
        from one receiving node line up.  Delivery order across the admin
        layer is the transport's concern.
        """
        draft = DecisionBlock(
            acks=ready.acks,
            witness=ready.witness,
            la=ready.la,
            rrsn=self.id,
            t=now,
            sig=Signature(b"", self.id),
            id=b"\x00" * 32,
        )
        signed = replace(
            draft, sig=Signature(sign(self.keypair, signing_payload(draft)), self.id)
        )
        tip = self._optimistic_tip if self._optimistic_tip is not None else self.decisions.head
        block = replace(signed, id=block_chain_id(tip, chain_bytes(signed)))
        self._optimistic_tip = block
        self._outstanding += 1
        preq = ready.acks[0].req.preq
        approval = ApprovalMessage(
            preq=preq,
            block_id=block.id,
            witness=ready.witness,
            la=ready.la,
            t=now,
            sig=Signature(b"", self.id),
        )
        approval = replace(
            approval, sig=Signature(sign(self.keypair, signing_payload(approval)), self.id)
        )
        return block, approval

    # -- validation and commit (every node) ---------------------------------------

    def validate_decision_block(self, block: DecisionBlock) -> BlockReject | None:
        """Accept (None) or name the reason this block must be discarded."""
        if (
            block.sig.signer != block.rrsn
            or not self.directory.is_supervisor(block.rrsn)
            or not self.directory.check(block.rrsn, signing_payload(block), block.sig.data)
        ):
            return BlockReject.INVALID_ISSUER_SIGNATURE
        if not block.acks:
            return BlockReject.THRESHOLD_NOT_MET
        seen_sns: set[EntityId] = set()
        request_keys = set()
        for ack in block.acks:
            if ack.sn in seen_sns:
                return BlockReject.DUPLICATE_ACK_SIGNER
            seen_sns.add(ack.sn)
            if (
                ack.sig.signer != ack.sn
                or not self.directory.is_supervisor(ack.sn)
                or not self.directory.check(ack.sn, signing_payload(ack), ack.sig.data)
            ):
                return BlockReject.INVALID_ACK_SIGNATURE
            request_keys.add(request_key(ack.req))
        if len(request_keys) != 1:
            return BlockReject.MIXED_REQUESTS
        matching = sum(
            1
            for ack in block.acks
            if (ack.witness_choice, ack.la_choice) == (block.witness, block.la)
        )
        if matching < self.config.threshold:
            return BlockReject.THRESHOLD_NOT_MET
        key = next(iter(request_keys))
        own = self._sent_acks.get(key)
        if own is not None:
            for ack in block.acks:
                if ack.sn == self.id and codec.encode(ack) != codec.encode(own):
                    return BlockReject.OWN_ACK_MISMATCH
        if key not in self._seen_requests:
            return BlockReject.UNSEEN_REQUEST
        return None

    def commit_block(self, block: DecisionBlock) -> None:
        """Append an accepted block to the local decision chain."""
        self.decisions.append(block)
        if block.rrsn == self.id and self._outstanding > 0:
            self._outstanding -= 1
            if self._outstanding == 0:
                self._optimistic_tip = None
        elif self._outstanding == 0:
            self._optimistic_tip = None

    def commit_proof(self, final: FinalizedProof, now: Timestamp) -> None:
        """Admit a finalized proof to the provenance chain and credit the
        workers that served it."""
        entry = self.provenance.append(
            final, self.decisions, self.directory, self.policy, now
        )
        block = self.decisions.by_id(entry.block_id)
        self.registry.record_served(block.witness)
        self.registry.record_served(block.la)

    # -- bookkeeping -----------------------------------------------------------------

    def note_request_seen(self, breq: BroadcastRequest) -> None:
        self._seen_requests.add(request_key(breq))

    def fail_pending(self, pending: PendingConsensus) -> None:
        if pending.state is PendingState.COLLECTING:
            pending.state = PendingState.FAILED
