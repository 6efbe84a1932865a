"""The two append-only hash-chained stores and third-party verification.

Decision chain
    Holds the participant-selection blocks.  Each block's ``id`` equals
    ``digest(digest(previous block's signed encoding) + this block's
    signed encoding)``; the first block hashes against ``digest(b"")``.

Provenance chain
    Holds finalized proofs in commit order.  Entry digests follow the same
    two-level rule over the proof encodings.  A per-prover index enforces
    that a prover's proofs only ever move forward in time, and each
    decision block backs at most one committed proof, which is what makes
    replaying an old approval pointless.

Admission of a proof re-validates everything the distributed run already
checked, because the ledger is the last honest line when the service-layer
participants colluded: the cited block must exist, every party named in
the proof must match the block, all seven nested signatures and both hash
bindings must verify, and the timestamps must sit inside the configured
windows.  The check order is fixed so a given attack class surfaces a
stable rejection reason.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from . import codec
from .crypto import KeyDirectory, digest
from .errors import (
    AssertionTimeOutOfRange,
    BrokenChain,
    ChainFileCorrupt,
    ChronologyViolation,
    DuplicateBlock,
    InvalidNestedSignature,
    LedgerReject,
    MalformedProof,
    MissingDecisionBlock,
    ParticipantMismatch,
    RejectReason,
    TimestampSkew,
)
from .messages import (
    YES,
    ApprovalMessage,
    AssertedLocationProof,
    DecisionBlock,
    EndorsementRequest,
    EndorsementResponse,
    EndorsementStatement,
    EntityId,
    FinalizedProof,
    LocationStatement,
    ProofReceipt,
    ProofRequest,
    ServiceRequest,
    SignedProofReceipt,
    Timestamp,
    VerificationResponse,
    canonical_encode,
    chain_bytes,
    signing_payload,
)

GENESIS_DIGEST_INPUT = b""


@dataclass(frozen=True)
class LedgerPolicy:
    """Temporal windows applied when a proof is admitted or queried.

    ``assertion_window_ms`` bounds how far the witness's assertion time may
    sit from the prover's original request time; ``skew_ms`` bounds the gap
    between the decision block's creation and the asserted proof's creation.
    Both are scenario-configurable because simulated latencies set the
    honest baseline.
    """

    assertion_window_ms: int = 2_000
    skew_ms: int = 10_000


@dataclass(frozen=True)
class ProofParts:
    """Every constituent of a finalized proof, unpacked once."""

    final: FinalizedProof
    ack: SignedProofReceipt
    receipt: ProofReceipt
    proof: AssertedLocationProof
    vr: VerificationResponse
    ereq: EndorsementRequest
    statement: LocationStatement
    sreq: ServiceRequest
    approval: ApprovalMessage
    preq: ProofRequest
    endorsement: EndorsementResponse
    estat: EndorsementStatement


def dissect(final: FinalizedProof) -> ProofParts:
    ack = final.ack
    receipt = ack.receipt
    proof = receipt.proof
    ereq = proof.request
    statement = ereq.statement
    sreq = statement.request
    return ProofParts(
        final=final,
        ack=ack,
        receipt=receipt,
        proof=proof,
        vr=receipt.vr,
        ereq=ereq,
        statement=statement,
        sreq=sreq,
        approval=sreq.approval,
        preq=sreq.approval.preq,
        endorsement=proof.endorsement,
        estat=proof.endorsement.statement,
    )


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: RejectReason | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.valid


class DecisionChain:
    """Append-only chain of decision blocks with an id index."""

    def __init__(self) -> None:
        self.blocks: list[DecisionBlock] = []
        self._index: dict[bytes, int] = {}
        self._head_digest: bytes = digest(GENESIS_DIGEST_INPUT)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> DecisionBlock | None:
        return self.blocks[-1] if self.blocks else None

    def position(self, block_id: bytes) -> int | None:
        return self._index.get(block_id)

    def by_id(self, block_id: bytes) -> DecisionBlock | None:
        pos = self._index.get(block_id)
        return self.blocks[pos] if pos is not None else None

    def append(self, block: DecisionBlock) -> None:
        if block.id in self._index:
            raise DuplicateBlock(block.id.hex())
        expected = digest(self._head_digest + chain_bytes(block))
        if block.id != expected:
            raise BrokenChain(
                f"block id {block.id.hex()[:16]} does not chain onto local head"
            )
        self._index[block.id] = len(self.blocks)
        self.blocks.append(block)
        self._head_digest = digest(chain_bytes(block))

    def audit(self) -> int | None:
        """Recompute every link; position of the first broken one, else None."""
        prev = digest(GENESIS_DIGEST_INPUT)
        for i, block in enumerate(self.blocks):
            enc = chain_bytes(block)
            if block.id != digest(prev + enc):
                return i
            prev = digest(enc)
        return None

    @classmethod
    def from_blocks_unchecked(cls, blocks: list[DecisionBlock]) -> "DecisionChain":
        """Rebuild a chain as stored, without verifying links (for audits)."""
        chain = cls()
        for block in blocks:
            chain._index.setdefault(block.id, len(chain.blocks))
            chain.blocks.append(block)
        if blocks:
            chain._head_digest = digest(chain_bytes(blocks[-1]))
        return chain


@dataclass(frozen=True)
class ProvenanceEntry:
    final: FinalizedProof
    entry_digest: bytes
    block_id: bytes
    prover: EntityId
    t_alp: Timestamp


class ProvenanceChain:
    """Append-only chain of finalized proofs with per-prover ordering."""

    def __init__(self) -> None:
        self.entries: list[ProvenanceEntry] = []
        self._by_block: dict[bytes, int] = {}
        self._latest_by_prover: dict[EntityId, Timestamp] = {}
        self._head_digest: bytes = digest(GENESIS_DIGEST_INPUT)

    def __len__(self) -> int:
        return len(self.entries)

    def entry_for_block(self, block_id: bytes) -> ProvenanceEntry | None:
        pos = self._by_block.get(block_id)
        return self.entries[pos] if pos is not None else None

    def entries_for_prover(self, prover: EntityId) -> list[ProvenanceEntry]:
        return [e for e in self.entries if e.prover == prover]

    def append(
        self,
        final: FinalizedProof,
        decisions: DecisionChain,
        directory: KeyDirectory,
        policy: LedgerPolicy,
        now: Timestamp | None = None,
    ) -> ProvenanceEntry:
        """Admit a finalized proof after full re-validation.

        Raises the LedgerReject subclass matching the first failed check.
        """
        parts = dissect(final)
        validate_finalized(parts, decisions, directory, policy)
        block_id = parts.estat.block_id
        if block_id in self._by_block:
            raise ChronologyViolation(
                "decision block already backs a committed proof (replay)"
            )
        prover = parts.preq.prover
        latest = self._latest_by_prover.get(prover)
        if latest is not None and parts.proof.t < latest:
            raise ChronologyViolation(
                f"proof at {parts.proof.t} predates prover's latest entry {latest}"
            )
        enc = canonical_encode(final)
        entry = ProvenanceEntry(
            final=final,
            entry_digest=digest(self._head_digest + enc),
            block_id=block_id,
            prover=prover,
            t_alp=parts.proof.t,
        )
        self._by_block[block_id] = len(self.entries)
        self._latest_by_prover[prover] = parts.proof.t
        self.entries.append(entry)
        self._head_digest = digest(enc)
        return entry

    def audit(self) -> int | None:
        prev = digest(GENESIS_DIGEST_INPUT)
        for i, entry in enumerate(self.entries):
            enc = canonical_encode(entry.final)
            if entry.entry_digest != digest(prev + enc):
                return i
            prev = digest(enc)
        return None

    @classmethod
    def from_entries_unchecked(
        cls, pairs: list[tuple[FinalizedProof, bytes]]
    ) -> "ProvenanceChain":
        chain = cls()
        for final, entry_digest in pairs:
            parts = dissect(final)
            entry = ProvenanceEntry(
                final=final,
                entry_digest=entry_digest,
                block_id=parts.estat.block_id,
                prover=parts.preq.prover,
                t_alp=parts.proof.t,
            )
            chain._by_block.setdefault(entry.block_id, len(chain.entries))
            chain.entries.append(entry)
            chain._latest_by_prover[entry.prover] = max(
                chain._latest_by_prover.get(entry.prover, 0), entry.t_alp
            )
        if chain.entries:
            chain._head_digest = digest(canonical_encode(chain.entries[-1].final))
        return chain


# ---------------------------------------------------------------------------
# Proof validation
# ---------------------------------------------------------------------------

def validate_finalized(
    parts: ProofParts,
    decisions: DecisionChain,
    directory: KeyDirectory,
    policy: LedgerPolicy,
) -> DecisionBlock:
    """Run the full admission stack; returns the backing decision block.

    Check order is part of the contract: block existence, participant
    consistency, nested signatures and hash bindings, temporal windows.
    """
    block = decisions.by_id(parts.estat.block_id)
    if block is None:
        raise MissingDecisionBlock(
            "no decision block for id " + parts.estat.block_id.hex()[:16]
        )
    _check_participants(parts, block)
    _check_signatures(parts, directory)
    _check_temporal(parts, block, policy)
    return block


def _check_participants(parts: ProofParts, block: DecisionBlock) -> None:
    estat = parts.estat
    approval = parts.approval
    if approval.block_id != estat.block_id or parts.receipt.block_id != estat.block_id:
        raise ParticipantMismatch("proof cites inconsistent decision block ids")
    if estat.witness != block.witness or approval.witness != block.witness:
        raise ParticipantMismatch(
            f"witness {estat.witness[:16]} is not the block's chosen witness"
        )
    if (
        estat.la != block.la
        or approval.la != block.la
        or parts.statement.la != block.la
    ):
        raise ParticipantMismatch(
            f"authority {estat.la[:16]} is not the block's chosen authority"
        )
    if estat.prover != parts.preq.prover:
        raise ParticipantMismatch("asserted prover differs from requesting prover")
    if canonical_encode(parts.preq) != canonical_encode(block.acks[0].req.preq):
        raise ParticipantMismatch("embedded proof request differs from the block's")
    if approval.sig.signer != block.rrsn:
        raise ParticipantMismatch("approval not issued by the block's creator")
    signer_expectations = (
        (parts.ereq.sig.signer, block.la, "endorsement request"),
        (parts.endorsement.sig.signer, block.witness, "endorsement"),
        (parts.vr.sig.signer, block.witness, "verification response"),
        (parts.ack.sig.signer, parts.preq.prover, "receipt"),
        (parts.final.sig.signer, block.la, "finalization"),
    )
    for actual, expected, what in signer_expectations:
        if actual != expected:
            raise ParticipantMismatch(f"{what} signed by {actual[:16]}, expected {expected[:16]}")


def _check_signatures(parts: ProofParts, directory: KeyDirectory) -> None:
    checks = (
        (parts.preq, "proof request"),
        (parts.approval, "approval"),
        (parts.ereq, "endorsement request"),
        (parts.endorsement, "endorsement"),
        (parts.vr, "verification response"),
        (parts.ack, "receipt"),
        (parts.final, "finalization"),
    )
    for msg, what in checks:
        sig = msg.sig
        if not directory.check(sig.signer, signing_payload(msg), sig.data):
            raise InvalidNestedSignature(f"{what} signature does not verify")
    if not directory.is_supervisor(parts.approval.sig.signer):
        raise InvalidNestedSignature("approval signer is not a supervisor node")
    if parts.estat.h_request != digest(canonical_encode(parts.ereq)):
        raise InvalidNestedSignature("endorsement fingerprint does not match request")
    if parts.vr.verdict.h_proof != digest(canonical_encode(parts.proof)):
        raise InvalidNestedSignature("verification verdict covers a different proof")
    if parts.vr.verdict.answer != YES:
        raise MalformedProof("committed proof carries a negative verification verdict")


def _check_temporal(parts: ProofParts, block: DecisionBlock, policy: LedgerPolicy) -> None:
    t_request = parts.preq.t
    t_assert = parts.estat.t
    delta = t_assert - t_request
    if delta < 0 or delta > policy.assertion_window_ms:
        raise AssertionTimeOutOfRange(
            f"assertion at {t_assert} sits {delta} ms from request {t_request}"
        )
    if abs(parts.proof.t - block.t) > policy.skew_ms:
        raise TimestampSkew(
            f"proof creation {parts.proof.t} vs block creation {block.t} exceeds skew bound"
        )
    ordered = (t_request, parts.statement.t, t_assert, parts.proof.t, parts.receipt.t)
    if any(a > b for a, b in zip(ordered, ordered[1:])):
        raise TimestampSkew(f"timestamps out of order: {ordered}")


def verify_third_party(
    presented: AssertedLocationProof | FinalizedProof,
    decisions: DecisionChain,
    provenance: ProvenanceChain,
    directory: KeyDirectory,
    policy: LedgerPolicy,
    accept_counts: dict[bytes, int] | None = None,
    n_supervisors: int | None = None,
) -> Verdict:
    """Judge a proof presented by a third party against this node's ledgers.

    ``accept_counts`` (block id -> number of supervisor nodes that accepted
    the block) enables the majority rule: a proof whose block was discarded
    by most of the admin layer is fake regardless of its signatures.  When
    the census is not supplied, presence on this node's own chain stands in.
    """
    if isinstance(presented, FinalizedProof):
        final = presented
        block_id = dissect(final).estat.block_id
    else:
        block_id = presented.endorsement.statement.block_id
        entry = provenance.entry_for_block(block_id)
        if entry is None:
            if decisions.by_id(block_id) is None:
                return Verdict(False, RejectReason.MISSING_BLOCK, "unknown decision block")
            return Verdict(False, RejectReason.NOT_ON_CHAIN, "proof not on provenance chain")
        # Graft the presented copy into the stored envelope: any tampering of
        # the copy breaks a signature or binding during validation below.
        stored = entry.final
        receipt = replace(stored.ack.receipt, proof=presented)
        final = replace(stored, ack=replace(stored.ack, receipt=receipt))

    parts = dissect(final)
    if decisions.by_id(block_id) is None:
        return Verdict(False, RejectReason.MISSING_BLOCK, "unknown decision block")
    if provenance.entry_for_block(block_id) is None:
        return Verdict(False, RejectReason.NOT_ON_CHAIN, "proof not on provenance chain")
    if accept_counts is not None and n_supervisors is not None:
        majority = n_supervisors // 2 + 1
        if accept_counts.get(block_id, 0) < majority:
            return Verdict(
                False,
                RejectReason.NOT_MAJORITY_ACCEPTED,
                "decision block was discarded by most supervisor nodes",
            )
    try:
        validate_finalized(parts, decisions, directory, policy)
    except LedgerReject as exc:
        return Verdict(False, exc.reason, str(exc))
    return Verdict(True)


# ---------------------------------------------------------------------------
# Persistence: one hex entry per line, headed by chain type and hash name
# ---------------------------------------------------------------------------

_DECISION_HEADER = "locproof-chain decision sha-256"
_PROVENANCE_HEADER = "locproof-chain provenance sha-256"


def save_decision_chain(chain: DecisionChain, path: str | Path) -> None:
    lines = [_DECISION_HEADER]
    lines += [canonical_encode(b).hex() for b in chain.blocks]
    Path(path).write_text("\n".join(lines) + "\n")


def load_decision_chain(path: str | Path) -> DecisionChain:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _DECISION_HEADER:
        raise ChainFileCorrupt(0, "missing or wrong decision chain header")
    blocks = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            blocks.append(codec.decode(DecisionBlock, bytes.fromhex(line.strip())))
        except (ValueError, codec.DecodeError) as e:
            raise ChainFileCorrupt(i, str(e)) from None
    return DecisionChain.from_blocks_unchecked(blocks)


def save_provenance_chain(chain: ProvenanceChain, path: str | Path) -> None:
    lines = [_PROVENANCE_HEADER]
    lines += [
        canonical_encode(e.final).hex() + " " + e.entry_digest.hex()
        for e in chain.entries
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_provenance_chain(path: str | Path) -> ProvenanceChain:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _PROVENANCE_HEADER:
        raise ChainFileCorrupt(0, "missing or wrong provenance chain header")
    pairs = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            enc_hex, digest_hex = line.split()
            final = codec.decode(FinalizedProof, bytes.fromhex(enc_hex))
            pairs.append((final, bytes.fromhex(digest_hex)))
        except (ValueError, codec.DecodeError) as e:
            raise ChainFileCorrupt(i, str(e)) from None
    return ProvenanceChain.from_entries_unchecked(pairs)
