"""Every protocol message as an immutable typed record.

Two families:

* Admin phase (request intake, participant-selection quorum): signed
  envelopes are flattened, with the signature field covering the canonical
  encoding of the remaining fields in declaration order.
* Service phase (proof generation between prover, location authority and
  witness): one record per exchange step, each embedding its predecessor
  structurally.  Nothing is flattened, so a committed proof carries the
  byte-identical request the witness fingerprinted.

``signing_payload`` returns exactly the bytes each record's signature must
cover; ``chain_bytes`` is the encoding a decision block contributes to the
ledger hash chain (everything except its own chain id).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import hypot, isfinite

from . import codec
from .crypto import DIGEST_SIZE, digest

EntityId = str        # opaque crypto-id pseudonym
Timestamp = int       # milliseconds since scenario epoch

YES = "Yes"
NO = "No"


@dataclass(frozen=True)
class GeoPoint:
    """Planar position in meters; distances are Euclidean."""

    x: float
    y: float

    def __post_init__(self):
        if not (isfinite(self.x) and isfinite(self.y)):
            raise ValueError("coordinates must be finite")

    def distance_to(self, other: "GeoPoint") -> float:
        return hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Signature:
    data: bytes
    signer: EntityId


# ---------------------------------------------------------------------------
# Admin phase
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProofRequest:
    """A prover's signed claim of being at ``loc`` at time ``t``."""

    prover: EntityId
    t: Timestamp
    loc: GeoPoint
    sig: Signature


@dataclass(frozen=True)
class BroadcastRequest:
    """The receiving supervisor's freshness-stamped relay of a proof request.

    The timestamp signature covers only ``t_rrsn``: it authenticates the
    relaying supervisor and bounds replay, but does not bind the embedded
    request (a known weakness of the exchange, kept as specified).
    """

    preq: ProofRequest
    t_rrsn: Timestamp
    sig_t: Signature
    rrsn: EntityId


@dataclass(frozen=True)
class DecisionAck:
    """One supervisor's signed choice of witness and location authority."""

    sn: EntityId
    t: Timestamp
    witness_choice: EntityId
    la_choice: EntityId
    req: BroadcastRequest
    sig: Signature


@dataclass(frozen=True)
class DecisionBlock:
    """Quorum artifact bundling the acknowledgements behind one selection.

    ``id`` chains the block into the decision ledger:
    ``digest(digest(previous block's chain_bytes) + this block's chain_bytes)``,
    with ``digest(b"")`` standing in for the predecessor of the first block.
    """

    acks: tuple[DecisionAck, ...]
    witness: EntityId
    la: EntityId
    rrsn: EntityId
    t: Timestamp
    sig: Signature
    id: bytes


@dataclass(frozen=True)
class ApprovalMessage:
    """Post-quorum authorization naming the block, witness and authority."""

    preq: ProofRequest
    block_id: bytes
    witness: EntityId
    la: EntityId
    t: Timestamp
    sig: Signature


# ---------------------------------------------------------------------------
# Service phase (proof generation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceRequest:
    """Prover -> authority: begin proof generation under this approval."""

    approval: ApprovalMessage
    t: Timestamp


@dataclass(frozen=True)
class LocationStatement:
    """Authority's statement that the prover's request checks out locally."""

    la: EntityId
    request: ServiceRequest
    t: Timestamp


@dataclass(frozen=True)
class EndorsementRequest:
    """Authority -> witness: signed statement awaiting endorsement."""

    statement: LocationStatement
    sig: Signature


@dataclass(frozen=True)
class EndorsementStatement:
    """Witness's assertion content: the parties, the block, and a fingerprint
    of the exact request endorsed."""

    block_id: bytes
    prover: EntityId
    la: EntityId
    witness: EntityId
    h_request: bytes
    t: Timestamp


@dataclass(frozen=True)
class EndorsementResponse:
    statement: EndorsementStatement
    sig: Signature


@dataclass(frozen=True)
class AssertedLocationProof:
    """The witness-endorsed proof: request and endorsement side by side."""

    request: EndorsementRequest
    endorsement: EndorsementResponse
    t: Timestamp


@dataclass(frozen=True)
class VerificationRequest:
    """Prover -> witness: is this really the proof you endorsed?"""

    proof: AssertedLocationProof
    t: Timestamp


@dataclass(frozen=True)
class VerificationVerdict:
    answer: str          # YES or NO
    h_proof: bytes
    t: Timestamp


@dataclass(frozen=True)
class VerificationResponse:
    verdict: VerificationVerdict
    sig: Signature


@dataclass(frozen=True)
class ProofReceipt:
    """Prover's closing acknowledgement of the verified proof."""

    proof: AssertedLocationProof
    vr: VerificationResponse
    block_id: bytes
    t: Timestamp


@dataclass(frozen=True)
class SignedProofReceipt:
    receipt: ProofReceipt
    sig: Signature


@dataclass(frozen=True)
class FinalizedProof:
    """Authority-countersigned receipt; the provenance ledger entry."""

    ack: SignedProofReceipt
    sig: Signature


#: All encodable records, in a stable order (used by round-trip tests and
#: the persistence layer).
MESSAGE_TYPES = (
    GeoPoint,
    Signature,
    ProofRequest,
    BroadcastRequest,
    DecisionAck,
    DecisionBlock,
    ApprovalMessage,
    ServiceRequest,
    LocationStatement,
    EndorsementRequest,
    EndorsementStatement,
    EndorsementResponse,
    AssertedLocationProof,
    VerificationRequest,
    VerificationVerdict,
    VerificationResponse,
    ProofReceipt,
    SignedProofReceipt,
    FinalizedProof,
)


# Signature scope per signed record: the fields whose canonical encoding the
# signature covers, in order.
_SIGNED_FIELDS: dict[type, tuple[str, ...]] = {
    ProofRequest: ("prover", "t", "loc"),
    BroadcastRequest: ("t_rrsn",),
    DecisionAck: ("sn", "t", "witness_choice", "la_choice", "req"),
    DecisionBlock: ("acks", "witness", "la", "rrsn", "t"),
    ApprovalMessage: ("preq", "block_id", "witness", "la", "t"),
    EndorsementRequest: ("statement",),
    EndorsementResponse: ("statement",),
    VerificationResponse: ("verdict",),
    SignedProofReceipt: ("receipt",),
    FinalizedProof: ("ack",),
}

#: Chain encoding of a decision block: every field except the chain id.
_BLOCK_CHAIN_FIELDS = ("acks", "witness", "la", "rrsn", "t", "sig")


def canonical_encode(message) -> bytes:
    """Deterministic canonical bytes of any protocol record."""
    return codec.encode(message)


def signing_payload(message) -> bytes:
    """The exact bytes ``message.sig`` (or ``sig_t``) must cover.

    Envelope records of the shape ``[inner, sig(inner)]`` sign the inner
    record's canonical encoding directly; flattened records sign the
    canonical encoding of their covered fields in order.
    """
    fields = _SIGNED_FIELDS.get(type(message))
    if fields is None:
        raise TypeError(f"{type(message).__name__} is not a signed record")
    if len(fields) == 1:
        value = getattr(message, fields[0])
        if not isinstance(value, (int, float, str, bytes)):
            return codec.encode(value)
    return codec.encode_fields(message, fields)


def chain_bytes(block: DecisionBlock) -> bytes:
    """Encoding of the signed block as hashed into the decision chain."""
    return codec.encode_fields(block, _BLOCK_CHAIN_FIELDS)


def block_chain_id(prev: DecisionBlock | None, chain_encoding: bytes) -> bytes:
    """Chain id for a block whose signed encoding is ``chain_encoding``."""
    prev_digest = digest(chain_bytes(prev)) if prev is not None else digest(b"")
    return digest(prev_digest + chain_encoding)


def request_key(breq: BroadcastRequest) -> bytes:
    """Stable identity of one in-flight request (digest of its encoding)."""
    return digest(codec.encode(breq))


def is_digest(value: bytes) -> bool:
    return isinstance(value, bytes) and len(value) == DIGEST_SIZE
