"""Collusion-resistant location proofs: quorum participant selection,
witness-endorsed proof generation, dual hash-chained ledgers, and a
deterministic discrete-event simulator with an adversary framework."""

from .crypto import KeyDirectory, KeyPair, digest, generate_keypair, sign, verify
from .errors import (
    AbortReason,
    ConsensusFailure,
    ProtocolError,
    RejectReason,
)
from .ledger import (
    DecisionChain,
    LedgerPolicy,
    ProvenanceChain,
    Verdict,
    verify_third_party,
)
from .messages import (
    ApprovalMessage,
    AssertedLocationProof,
    BroadcastRequest,
    DecisionAck,
    DecisionBlock,
    EntityId,
    FinalizedProof,
    GeoPoint,
    ProofRequest,
    Signature,
    Timestamp,
    canonical_encode,
)
from .registry import Registry, WorkerRecord, WorkerRole

__version__ = "0.1.0"
