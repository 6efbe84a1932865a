"""Exception taxonomy and the reason labels attached to verdicts."""

from __future__ import annotations

import enum


class ProtocolError(Exception):
    """Base for every protocol-level failure."""


# --- request intake / quorum ------------------------------------------------

class InvalidSignature(ProtocolError):
    pass


class UnknownProver(ProtocolError):
    pass


class StaleRequest(ProtocolError):
    pass


class DuplicateAck(ProtocolError):
    pass


class MismatchedRequest(ProtocolError):
    pass


class NoEligibleWitness(ProtocolError):
    pass


class NoEligibleLA(ProtocolError):
    pass


# --- worker registry ----------------------------------------------------------

class DuplicateWorker(ProtocolError):
    pass


class UnknownWorker(ProtocolError):
    pass


# --- ledgers ------------------------------------------------------------------

class BrokenChain(ProtocolError):
    pass


class DuplicateBlock(ProtocolError):
    pass


class ChainFileCorrupt(ProtocolError):
    def __init__(self, position: int, detail: str = ""):
        super().__init__(f"corrupt chain entry at position {position}: {detail}")
        self.position = position


class LedgerReject(ProtocolError):
    """A proof failed admission; ``reason`` names the rejection class."""

    reason: "RejectReason"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.reason.value)


class MissingDecisionBlock(LedgerReject):
    pass


class ParticipantMismatch(LedgerReject):
    pass


class InvalidNestedSignature(LedgerReject):
    pass


class ChronologyViolation(LedgerReject):
    pass


class AssertionTimeOutOfRange(LedgerReject):
    pass


class TimestampSkew(LedgerReject):
    pass


class MalformedProof(LedgerReject):
    pass


# --- service protocol -----------------------------------------------------------

class ServiceAbort(ProtocolError):
    """A proof-generation step refused to proceed."""


class ApprovalNotForMe(ServiceAbort):
    pass


class InvalidApproval(ServiceAbort):
    pass


class NotDesignatedLA(ServiceAbort):
    pass


class NotDesignatedWitness(ServiceAbort):
    pass


class LocalizationFailed(ServiceAbort):
    pass


class InvalidEndorsementRequest(ServiceAbort):
    pass


class WrongWitnessSignature(ServiceAbort):
    pass


class WitnessSaidNo(ServiceAbort):
    pass


# --- simulation -------------------------------------------------------------------

class InvalidConfig(ProtocolError):
    pass


class InconsistentBehavior(ProtocolError):
    pass


class ForkDetected(ProtocolError):
    pass


class NonTermination(ProtocolError):
    pass


class RejectReason(str, enum.Enum):
    """Why a proof was refused at the ledger or judged invalid on query."""

    MISSING_BLOCK = "missing_decision_block"
    NOT_ON_CHAIN = "not_on_provenance_chain"
    PARTICIPANT_MISMATCH = "participant_mismatch"
    INVALID_SIGNATURE = "invalid_nested_signature"
    TIME_RANGE = "assertion_time_out_of_range"
    TIMESTAMP_SKEW = "timestamp_skew"
    CHRONOLOGY = "chronology_violation"
    NOT_MAJORITY_ACCEPTED = "block_not_majority_accepted"
    MALFORMED = "malformed_proof"


MissingDecisionBlock.reason = RejectReason.MISSING_BLOCK
ParticipantMismatch.reason = RejectReason.PARTICIPANT_MISMATCH
InvalidNestedSignature.reason = RejectReason.INVALID_SIGNATURE
ChronologyViolation.reason = RejectReason.CHRONOLOGY
AssertionTimeOutOfRange.reason = RejectReason.TIME_RANGE
TimestampSkew.reason = RejectReason.TIMESTAMP_SKEW
MalformedProof.reason = RejectReason.MALFORMED


class AbortReason(str, enum.Enum):
    """Terminal labels for protocol instances that never reached the ledger."""

    APPROVAL_NOT_FOR_ME = "approval_not_for_me"
    INVALID_APPROVAL = "invalid_approval"
    NOT_DESIGNATED_LA = "not_designated_la"
    NOT_DESIGNATED_WITNESS = "not_designated_witness"
    LOCALIZATION_FAILED = "localization_failed"
    INVALID_ENDORSEMENT_REQUEST = "invalid_endorsement_request"
    WRONG_WITNESS_SIGNATURE = "wrong_witness_signature"
    WITNESS_SAID_NO = "witness_said_no"
    STEP_TIMEOUT = "step_timeout"
    INVALID_SIGNATURE = "invalid_signature"


class ConsensusFailure(str, enum.Enum):
    TIMEOUT = "consensus_timeout"
    STALE_REQUEST = "stale_request"
    INVALID_REQUEST = "invalid_request"
    UNKNOWN_PROVER = "unknown_prover"


SERVICE_ABORT_REASONS: dict[type, AbortReason] = {
    ApprovalNotForMe: AbortReason.APPROVAL_NOT_FOR_ME,
    InvalidApproval: AbortReason.INVALID_APPROVAL,
    NotDesignatedLA: AbortReason.NOT_DESIGNATED_LA,
    NotDesignatedWitness: AbortReason.NOT_DESIGNATED_WITNESS,
    LocalizationFailed: AbortReason.LOCALIZATION_FAILED,
    InvalidEndorsementRequest: AbortReason.INVALID_ENDORSEMENT_REQUEST,
    WrongWitnessSignature: AbortReason.WRONG_WITNESS_SIGNATURE,
    WitnessSaidNo: AbortReason.WITNESS_SAID_NO,
    InvalidSignature: AbortReason.INVALID_SIGNATURE,
}


def abort_reason_for(exc: ServiceAbort | InvalidSignature) -> AbortReason:
    return SERVICE_ABORT_REASONS[type(exc)]
