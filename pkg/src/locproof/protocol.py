"""Proof-generation steps for prover, location authority, and witness.

Each function is one step of the exchange and is pure: it validates its
input against the approval the admin layer issued, performs the step's
checks (including the geometric localization stand-in), and returns the
next message.  Session state that must survive between steps - the
authority's pending statement, the witness's fingerprint of the proof it
produced - lives in the small session dataclasses here; the simulator owns
delivery, timing and timeouts.

Localization is checked twice per run, once by the authority and once by
the witness, and both must pass before anything reaches the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .crypto import KeyDirectory, KeyPair, digest, sign
from .errors import (
    ApprovalNotForMe,
    InvalidApproval,
    InvalidEndorsementRequest,
    InvalidSignature,
    LocalizationFailed,
    NotDesignatedLA,
    NotDesignatedWitness,
    WitnessSaidNo,
    WrongWitnessSignature,
)
from .messages import (
    NO,
    YES,
    ApprovalMessage,
    AssertedLocationProof,
    EndorsementRequest,
    EndorsementResponse,
    EndorsementStatement,
    EntityId,
    FinalizedProof,
    GeoPoint,
    LocationStatement,
    ProofReceipt,
    ServiceRequest,
    Signature,
    SignedProofReceipt,
    Timestamp,
    VerificationRequest,
    VerificationResponse,
    VerificationVerdict,
    canonical_encode,
    signing_payload,
)


@dataclass(frozen=True)
class LocalizationCheck:
    """Geometric stand-in for short-range secure localization."""

    claimed: GeoPoint
    observed: GeoPoint
    range_m: float

    def passes(self) -> bool:
        return self.claimed.distance_to(self.observed) <= self.range_m


def check_approval(approval: ApprovalMessage, directory: KeyDirectory) -> None:
    """Shared validity check: the approval must be supervisor-signed."""
    if not directory.is_supervisor(approval.sig.signer):
        raise InvalidSignature("approval not signed by a supervisor node")
    if not directory.check(
        approval.sig.signer, signing_payload(approval), approval.sig.data
    ):
        raise InvalidSignature("approval signature does not verify")


# ---------------------------------------------------------------------------
# Prover
# ---------------------------------------------------------------------------

def prover_start(
    prover_id: EntityId,
    keys: KeyPair,
    directory: KeyDirectory,
    approval: ApprovalMessage,
    now: Timestamp,
) -> ServiceRequest:
    """Step 1: hand the approval to the designated authority."""
    check_approval(approval, directory)
    if approval.preq.prover != prover_id:
        raise ApprovalNotForMe(f"approval names {approval.preq.prover[:16]}")
    return ServiceRequest(approval=approval, t=now)


def prover_verify(alp: AssertedLocationProof, now: Timestamp) -> VerificationRequest:
    """Step 5: the prover does not trust the authority, so it asks the
    witness whether this is really the proof it endorsed."""
    return VerificationRequest(proof=alp, t=now)


def prover_ack(
    prover_id: EntityId,
    keys: KeyPair,
    directory: KeyDirectory,
    alp: AssertedLocationProof,
    vr: VerificationResponse,
    expected_witness: EntityId,
    now: Timestamp,
) -> SignedProofReceipt:
    """Step 7: close the exchange with a signed receipt, given a Yes."""
    if vr.sig.signer != expected_witness or not directory.check(
        expected_witness, signing_payload(vr), vr.sig.data
    ):
        raise InvalidSignature("verification response does not verify")
    if vr.verdict.answer != YES:
        raise WitnessSaidNo()
    if vr.verdict.h_proof != digest(canonical_encode(alp)):
        raise WitnessSaidNo("verdict covers a different proof")
    receipt = ProofReceipt(
        proof=alp,
        vr=vr,
        block_id=alp.endorsement.statement.block_id,
        t=now,
    )
    draft = SignedProofReceipt(receipt=receipt, sig=Signature(b"", prover_id))
    return replace(
        draft, sig=Signature(sign(keys, signing_payload(draft)), prover_id)
    )


# ---------------------------------------------------------------------------
# Location authority
# ---------------------------------------------------------------------------

@dataclass
class AuthoritySession:
    """What the authority remembers about one in-flight proof."""

    approval: ApprovalMessage
    statement: LocationStatement | None = None


def la_issue_proof(
    la_id: EntityId,
    keys: KeyPair,
    directory: KeyDirectory,
    own_approval: ApprovalMessage,
    sreq: ServiceRequest,
    localization: LocalizationCheck,
    now: Timestamp,
) -> EndorsementRequest:
    """Step 2-3: localize the prover, then sign a statement for endorsement."""
    approval = sreq.approval
    check_approval(approval, directory)
    if approval.la != la_id:
        raise NotDesignatedLA(f"approval designates {approval.la[:16]}")
    if canonical_encode(approval) != canonical_encode(own_approval):
        raise InvalidApproval("prover's approval differs from the one received")
    if not localization.passes():
        raise LocalizationFailed(
            f"prover claims {localization.claimed}, observed {localization.observed}"
        )
    statement = LocationStatement(la=la_id, request=sreq, t=now)
    draft = EndorsementRequest(statement=statement, sig=Signature(b"", la_id))
    return replace(draft, sig=Signature(sign(keys, signing_payload(draft)), la_id))


def la_forward_alp(
    la_id: EntityId,
    directory: KeyDirectory,
    expected_witness: EntityId,
    alp: AssertedLocationProof,
    now: Timestamp,
) -> AssertedLocationProof:
    """Step 4: pass the asserted proof on, once the witness signature holds."""
    endorsement = alp.endorsement
    if endorsement.sig.signer != expected_witness:
        raise WrongWitnessSignature(
            f"endorsed by {endorsement.sig.signer[:16]}, expected {expected_witness[:16]}"
        )
    if not directory.check(
        expected_witness, signing_payload(endorsement), endorsement.sig.data
    ):
        raise WrongWitnessSignature("endorsement signature does not verify")
    return alp


def la_finalize(
    la_id: EntityId,
    keys: KeyPair,
    directory: KeyDirectory,
    ack: SignedProofReceipt,
    expected_prover: EntityId,
    now: Timestamp,
) -> FinalizedProof:
    """Step 8: countersign the prover's receipt for the admin layer."""
    if ack.sig.signer != expected_prover or not directory.check(
        expected_prover, signing_payload(ack), ack.sig.data
    ):
        raise InvalidSignature("receipt signature does not verify")
    draft = FinalizedProof(ack=ack, sig=Signature(b"", la_id))
    return replace(draft, sig=Signature(sign(keys, signing_payload(draft)), la_id))


# ---------------------------------------------------------------------------
# Witness
# ---------------------------------------------------------------------------

@dataclass
class WitnessSession:
    """What the witness retains: the fingerprint of the proof it made."""

    approval: ApprovalMessage
    produced_digest: bytes | None = None


def witness_assert(
    witness_id: EntityId,
    keys: KeyPair,
    directory: KeyDirectory,
    own_approval: ApprovalMessage,
    ereq: EndorsementRequest,
    localization: LocalizationCheck,
    now: Timestamp,
) -> AssertedLocationProof:
    """Step 4: validate the request against the approval, localize the
    prover independently, and assemble the asserted proof."""
    statement = ereq.statement
    approval = statement.request.approval
    if own_approval.witness != witness_id:
        raise NotDesignatedWitness(f"approval designates {own_approval.witness[:16]}")
    if canonical_encode(approval) != canonical_encode(own_approval):
        raise InvalidEndorsementRequest(
            "endorsement request cites an approval this witness never received"
        )
    if statement.la != approval.la:
        raise InvalidEndorsementRequest("statement issuer is not the designated authority")
    if ereq.sig.signer != statement.la or not directory.check(
        statement.la, signing_payload(ereq), ereq.sig.data
    ):
        raise InvalidEndorsementRequest("statement signature does not verify")
    if not localization.passes():
        raise LocalizationFailed(
            f"prover claims {localization.claimed}, observed {localization.observed}"
        )
    estat = EndorsementStatement(
        block_id=approval.block_id,
        prover=approval.preq.prover,
        la=approval.la,
        witness=witness_id,
        h_request=digest(canonical_encode(ereq)),
        t=now,
    )
    draft = EndorsementResponse(statement=estat, sig=Signature(b"", witness_id))
    endorsement = replace(
        draft, sig=Signature(sign(keys, signing_payload(draft)), witness_id)
    )
    return AssertedLocationProof(request=ereq, endorsement=endorsement, t=now)


def witness_answer(
    witness_id: EntityId,
    keys: KeyPair,
    vreq: VerificationRequest,
    produced_digest: bytes | None,
    now: Timestamp,
) -> VerificationResponse:
    """Step 6: Yes iff the presented proof is byte-identical to the one
    this witness produced; a No is an answer, not an error."""
    presented = digest(canonical_encode(vreq.proof))
    answer = YES if produced_digest is not None and presented == produced_digest else NO
    verdict = VerificationVerdict(answer=answer, h_proof=presented, t=now)
    draft = VerificationResponse(verdict=verdict, sig=Signature(b"", witness_id))
    return replace(draft, sig=Signature(sign(keys, signing_payload(draft)), witness_id))
