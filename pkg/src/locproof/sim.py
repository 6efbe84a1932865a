"""Deterministic discrete-event world for protocol runs.

Model
-----
* One virtual clock (float milliseconds).  Every random draw comes from the
  scenario seed, so a (config, seed) pair replays bit for bit.
* Point-to-point messages take a uniform latency draw.  Admin-layer
  broadcasts go through a sequencer that delivers each broadcast to every
  supervisor node at one globally ordered instant, which keeps replicas'
  ledgers and registries identical.
* Each node or participant is a single logical executor: handling an event
  occupies it for the event's modeled processing cost, so bursts of
  concurrent requests at one receiving node queue up and decision time
  degrades under load.
* Wall-clock timestamps are captured alongside virtual ones for timing
  comparisons but never enter the event trace or default exports, keeping
  runs byte-reproducible.

Attacks are behavior deviations wired into the actor handlers; honest
paths call straight into the library modules.
"""

from __future__ import annotations

import heapq
import json
import random
import time
from dataclasses import dataclass, replace

from . import protocol
from .consensus import ConsensusConfig, PendingState, SupervisorNode
from .crypto import KeyDirectory, digest, generate_keypair, sign
from .errors import (
    AbortReason,
    BrokenChain,
    ConsensusFailure,
    DuplicateBlock,
    ForkDetected,
    InvalidConfig,
    InvalidSignature,
    LedgerReject,
    LocalizationFailed,
    NonTermination,
    ProtocolError,
    ServiceAbort,
    StaleRequest,
    UnknownProver,
    abort_reason_for,
)
from .ledger import LedgerPolicy, Verdict, verify_third_party
from .messages import (
    ApprovalMessage,
    AssertedLocationProof,
    BroadcastRequest,
    DecisionAck,
    DecisionBlock,
    EndorsementRequest,
    EndorsementResponse,
    EndorsementStatement,
    EntityId,
    FinalizedProof,
    GeoPoint,
    LocationStatement,
    ProofReceipt,
    ProofRequest,
    ServiceRequest,
    Signature,
    SignedProofReceipt,
    VerificationResponse,
    VerificationVerdict,
    YES,
    canonical_encode,
    request_key,
    signing_payload,
)
from .protocol import LocalizationCheck
from .registry import Registry, WorkerRole
from .scenario import AdversaryBehavior, RequestSpec, ScenarioConfig


class OutcomeKind:
    COMMITTED = "committed"
    REJECTED = "rejected_at_ledger"
    ABORTED = "aborted_in_protocol"
    CONSENSUS_FAILED = "consensus_failed"


@dataclass
class ProtocolOutcome:
    """Per-instance record of how one proof request ended."""

    instance: str
    prover: EntityId
    verdict: str
    reason: str | None = None
    ddt_ms: float | None = None
    pgt_ms: float | None = None
    proof_bytes: int | None = None
    block_bytes: int | None = None
    attack: str = ""
    attack_detected: bool = False
    ddt_wall_ms: float | None = None
    pgt_wall_ms: float | None = None

    def row(self, wall: bool = False) -> dict:
        out = {
            "instance": self.instance,
            "prover": self.prover,
            "verdict": self.verdict,
            "reason": self.reason,
            "ddt_ms": _r(self.ddt_ms),
            "pgt_ms": _r(self.pgt_ms),
            "proof_bytes": self.proof_bytes,
            "block_bytes": self.block_bytes,
            "attack": self.attack,
            "attack_detected": self.attack_detected,
        }
        if wall:
            out["ddt_wall_ms"] = _r(self.ddt_wall_ms)
            out["pgt_wall_ms"] = _r(self.pgt_wall_ms)
        return out


def _r(v: float | None) -> float | None:
    return None if v is None else round(v, 3)


@dataclass
class _Tracker:
    """Mutable per-instance measurement and artifact state."""

    instance: str
    prover: EntityId
    attack: str
    created: float
    created_wall: float
    rrsn: EntityId
    claimed: GeoPoint
    rogue_witness: EntityId | None = None
    rogue_la: EntityId | None = None
    arrival: float | None = None
    arrival_wall: float | None = None
    ddt: float | None = None
    ddt_wall: float | None = None
    pgt: float | None = None
    pgt_wall: float | None = None
    approval: ApprovalMessage | None = None
    alp: AssertedLocationProof | None = None
    final: FinalizedProof | None = None
    block: DecisionBlock | None = None
    stage: str = "requested"
    done: bool = False
    outcome: ProtocolOutcome | None = None


class _Executor:
    """Busy-time bookkeeping shared by supervisor and participant actors."""

    def __init__(self, world: "World", entity_id: EntityId):
        self.world = world
        self.id = entity_id
        self.busy_until = 0.0
        self.now = 0.0

    def begin(self) -> None:
        self.now = max(self.world.clock, self.busy_until)

    def finish(self) -> None:
        self.busy_until = self.now

    def charge(self, ms: float) -> None:
        self.now += ms

    def charge_ops(self, signs: int = 0, verifies: int = 0, scan: int = 0) -> None:
        c = self.world.costs
        k = self.world.config.key_size
        self.now += (
            c.base_handle_ms
            + signs * c.sign_ms[k]
            + verifies * c.verify_ms[k]
            + scan * c.scan_per_worker_ms
        )


class World:
    """Everything one scenario run owns.  Build with :func:`build_world`."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.costs = config.costs
        self.rng = random.Random(config.seed)
        self.clock = 0.0
        self._queue: list = []
        self._seq = 0
        self._bcast_tail = 0.0
        self._events_processed = 0
        self.trace: list[dict] = []
        self.directory = KeyDirectory()
        self.policy = LedgerPolicy(
            assertion_window_ms=int(config.timings.derived_assertion_window(config.latency)),
            skew_ms=int(config.timings.skew_ms),
        )
        self.behavior: AdversaryBehavior = config.resolved_behavior()
        self.supervisors: list[SupervisorActor] = []
        self.participants: dict[EntityId, ParticipantActor] = {}
        self.roster: dict[str, EntityId] = {}
        self.truth: dict[EntityId, GeoPoint] = {}
        self.trackers: dict[str, _Tracker] = {}
        self.outcomes: list[ProtocolOutcome] = []
        self.block_accepts: dict[bytes, set[EntityId]] = {}
        self.block_rejects: dict[bytes, set[EntityId]] = {}
        self.forks: list[str] = []
        self.horizon = 0.0
        self._instance_count = 0

    # -- scheduling ---------------------------------------------------------

    def post(self, at: float, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, fn, args))

    def p2p_latency(self) -> float:
        lat = self.config.latency
        return self.rng.uniform(lat.p2p_min_ms, lat.p2p_max_ms)

    def send(self, to_actor, handler: str, payload, at: float, extra_ms: float = 0.0) -> None:
        arrive = at + self.p2p_latency() + extra_ms
        self.post(arrive, self._deliver, to_actor, handler, payload)

    def admin_broadcast(self, at: float, handler: str, payload) -> None:
        """Totally ordered delivery to every supervisor node."""
        lat = self.config.latency
        arrive = at + self.rng.uniform(lat.broadcast_min_ms, lat.broadcast_max_ms)
        arrive = max(arrive, self._bcast_tail + 1e-6)
        self._bcast_tail = arrive
        for sup in self.supervisors:
            self.post(arrive, self._deliver, sup, handler, payload)

    @staticmethod
    def _deliver(actor, handler: str, payload) -> None:
        getattr(actor, handler)(payload)

    def log(self, kind: str, **info) -> None:
        self.trace.append({"t": round(self.clock, 3), "event": kind, **info})

    # -- lookups -------------------------------------------------------------

    def supervisor_actor(self, entity_id: EntityId) -> "SupervisorActor":
        for sup in self.supervisors:
            if sup.id == entity_id:
                return sup
        raise KeyError(entity_id)

    def roster_id(self, name: str | None) -> EntityId:
        if name is None:
            raise InvalidConfig("collusion flow needs a named participant")
        return self.roster.get(name, name)

    # -- instance bookkeeping ---------------------------------------------------

    def new_instance(
        self, prover: EntityId, spec_req: RequestSpec, rrsn: EntityId, claimed: GeoPoint
    ) -> _Tracker:
        self._instance_count += 1
        tracker = _Tracker(
            instance=f"i{self._instance_count:04d}",
            prover=prover,
            attack=spec_req.attack,
            created=self.clock,
            created_wall=time.perf_counter() * 1000.0,
            rrsn=rrsn,
            claimed=claimed,
        )
        self.trackers[tracker.instance] = tracker
        return tracker

    def settle(self, tracker: _Tracker, verdict: str, reason: str | None = None) -> None:
        """Record an instance's terminal outcome (first settlement wins)."""
        if tracker.done:
            return
        tracker.done = True
        outcome = ProtocolOutcome(
            instance=tracker.instance,
            prover=tracker.prover,
            verdict=verdict,
            reason=reason,
            ddt_ms=tracker.ddt,
            pgt_ms=tracker.pgt,
            proof_bytes=len(canonical_encode(tracker.final)) if tracker.final else None,
            block_bytes=len(canonical_encode(tracker.block)) if tracker.block else None,
            attack=tracker.attack,
            attack_detected=bool(tracker.attack) and verdict != OutcomeKind.COMMITTED,
            ddt_wall_ms=tracker.ddt_wall,
            pgt_wall_ms=tracker.pgt_wall,
        )
        tracker.outcome = outcome
        self.outcomes.append(outcome)
        self.log("outcome", instance=tracker.instance, verdict=verdict, reason=reason)

    # -- queries -----------------------------------------------------------------

    def accept_counts(self) -> dict[bytes, int]:
        return {bid: len(nodes) for bid, nodes in self.block_accepts.items()}

    def verify(self, presented, node_index: int = 0) -> Verdict:
        """Third-party verification against one node's ledgers plus the
        acceptance census."""
        node = self.supervisors[node_index].node
        return verify_third_party(
            presented,
            node.decisions,
            node.provenance,
            self.directory,
            self.policy,
            accept_counts=self.accept_counts(),
            n_supervisors=self.config.n_supervisors,
        )

    def trace_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True, default=str) for e in self.trace)


# ---------------------------------------------------------------------------
# Supervisor actor
# ---------------------------------------------------------------------------

class SupervisorActor(_Executor):
    def __init__(self, world: World, node: SupervisorNode, compromised: bool):
        super().__init__(world, node.id)
        self.node = node
        self.compromised = compromised

    # Registry maintenance is bus-applied and kept cost-free; the selection
    # scan carries the per-worker cost instead.
    def apply_register(self, entity_id, role, loc, at) -> None:
        if entity_id not in self.node.registry:
            self.node.registry.register_entity(entity_id, role, loc, int(at))

    def apply_ping(self, entity_id, loc, at) -> None:
        if entity_id in self.node.registry:
            self.node.registry.record_ping(entity_id, loc, int(at))
        self.node.registry.evict_stale(int(at))

    def on_proof_request(self, payload) -> None:
        preq, tracker = payload
        tracker.arrival = self.world.clock
        tracker.arrival_wall = time.perf_counter() * 1000.0
        self.begin()
        w = self.world
        self.charge_ops(signs=1, verifies=1)
        try:
            breq = self.node.receive_proof_request(preq, int(self.now))
        except ProtocolError as e:
            w.settle(tracker, OutcomeKind.CONSENSUS_FAILED, _failure_label(e))
            self.finish()
            return
        w.log("relay", instance=tracker.instance, rrsn=self.id[:8])
        w.admin_broadcast(self.now, "on_broadcast_request", (breq, tracker))
        deadline = self.now + w.config.timings.consensus_timeout_ms
        w.post(deadline, self._consensus_deadline, breq, tracker)
        self.finish()

    def _consensus_deadline(self, breq: BroadcastRequest, tracker: _Tracker) -> None:
        pending = self.node.pending.get(request_key(breq))
        if pending is not None and pending.state is PendingState.COLLECTING:
            self.node.fail_pending(pending)
            self.world.settle(
                tracker, OutcomeKind.CONSENSUS_FAILED, ConsensusFailure.TIMEOUT.value
            )

    def on_broadcast_request(self, payload) -> None:
        breq, tracker = payload
        self.begin()
        w = self.world
        self.charge_ops(signs=1, verifies=2, scan=len(self.node.registry))
        if self.compromised and w.behavior.supervisor_collude:
            ack = self._colluding_ack(breq)
        else:
            try:
                ack = self.node.evaluate_request(breq, int(self.now))
            except ProtocolError:
                ack = None
        if ack is not None:
            rrsn_actor = w.supervisor_actor(breq.rrsn)
            w.send(rrsn_actor, "on_decision_ack", (ack, tracker), self.now)
        self.finish()

    def _colluding_ack(self, breq: BroadcastRequest) -> DecisionAck | None:
        """A compromised node echoes the colluding prover's desired pair.

        It signs with its own key; nothing forges another node's signature.
        """
        w = self.world
        self.node.note_request_seen(breq)
        prover_actor = w.participants.get(breq.preq.prover)
        spec = getattr(prover_actor, "spec", None)
        if spec is None or spec.desired_witness is None or spec.desired_la is None:
            try:
                return self.node.evaluate_request(breq, int(self.now))
            except ProtocolError:
                return None
        draft = DecisionAck(
            sn=self.id,
            t=int(self.now),
            witness_choice=w.roster_id(spec.desired_witness),
            la_choice=w.roster_id(spec.desired_la),
            req=breq,
            sig=Signature(b"", self.id),
        )
        ack = replace(
            draft, sig=Signature(sign(self.node.keypair, signing_payload(draft)), self.id)
        )
        self.node._sent_acks[request_key(breq)] = ack
        return ack

    def on_decision_ack(self, payload) -> None:
        ack, tracker = payload
        self.begin()
        w = self.world
        self.charge_ops(verifies=1)
        pending = self.node.pending.get(request_key(ack.req))
        if pending is None or pending.state is not PendingState.COLLECTING:
            self.finish()
            return
        try:
            ready = self.node.accumulate_ack(pending, ack)
        except ProtocolError:
            self.finish()
            return
        if ready is None:
            self.finish()
            return
        self.charge_ops(signs=2)
        block, approval = self.node.finalize_block(ready, int(self.now))
        tracker.block = block
        w.log(
            "decision",
            instance=tracker.instance,
            witness=ready.witness[:8],
            la=ready.la[:8],
            acks=len(ready.acks),
        )
        w.admin_broadcast(self.now, "on_decision_block", block)
        for target in (tracker.prover, approval.la, approval.witness):
            actor = w.participants.get(target)
            if actor is not None:
                w.send(actor, "on_approval", (approval, tracker), self.now)
        self.finish()

    def on_decision_block(self, block: DecisionBlock) -> None:
        self.begin()
        w = self.world
        self.charge_ops(verifies=1 + len(block.acks))
        reject = self.node.validate_decision_block(block)
        if reject is not None:
            w.block_rejects.setdefault(block.id, set()).add(self.id)
            w.log("block_rejected", node=self.id[:8], reason=reject.value)
            self.finish()
            return
        try:
            self.node.commit_block(block)
        except (BrokenChain, DuplicateBlock) as e:
            w.forks.append(f"{self.id[:8]}: {e}")
            self.finish()
            return
        w.block_accepts.setdefault(block.id, set()).add(self.id)
        self.finish()

    def on_finalized_proof(self, payload) -> None:
        final, tracker = payload
        self.begin()
        w = self.world
        self.charge_ops(verifies=7)
        tracker.final = final
        try:
            self.node.commit_proof(final, int(self.now))
        except LedgerReject as e:
            w.log("proof_rejected", instance=tracker.instance, reason=e.reason.value)
            w.settle(tracker, OutcomeKind.REJECTED, e.reason.value)
            self.finish()
            return
        tracker.stage = "committed"
        w.admin_broadcast(self.now, "on_proof_broadcast", (final, tracker, self.id))
        w.settle(tracker, OutcomeKind.COMMITTED)
        self.finish()

    def on_proof_broadcast(self, payload) -> None:
        final, tracker, issuer = payload
        if issuer == self.id:
            return
        self.begin()
        self.charge_ops(verifies=7)
        try:
            self.node.commit_proof(final, int(self.now))
        except LedgerReject as e:
            self.world.log(
                "proof_rejected",
                instance=tracker.instance,
                node=self.id[:8],
                reason=e.reason.value,
            )
        self.finish()


# ---------------------------------------------------------------------------
# Participant actor (prover / authority / witness roles)
# ---------------------------------------------------------------------------

class ParticipantActor(_Executor):
    def __init__(
        self,
        world: World,
        entity_id: EntityId,
        keypair,
        spec=None,
        role: WorkerRole | None = None,
        honest: bool = True,
    ):
        super().__init__(world, entity_id)
        self.keypair = keypair
        self.spec = spec
        self.role = role
        self.honest = honest
        self.approvals: dict[bytes, ApprovalMessage] = {}    # by block id
        self.witness_digests: dict[bytes, bytes] = {}        # block id -> alp digest
        self.last_approval: ApprovalMessage | None = None
        self._deferrals: dict[tuple, int] = {}

    # -- shared helpers -----------------------------------------------------

    @property
    def behavior(self) -> AdversaryBehavior:
        return self.world.behavior

    def _malicious(self) -> bool:
        return not self.honest

    def _defer(self, handler: str, payload, tracker: _Tracker) -> bool:
        """Requeue a message that outran its prerequisite; True if requeued."""
        key = (handler, tracker.instance)
        tries = self._deferrals.get(key, 0)
        if tries >= 40 or tracker.done:
            return False
        self._deferrals[key] = tries + 1
        self.world.post(self.now + 25.0, World._deliver, self, handler, payload)
        return True

    def _relay_ms(self, tracker: _Tracker | None) -> float:
        if tracker is not None and self._malicious() and tracker.attack == "wormhole":
            return self.behavior.prover_wormhole_relay_ms
        return 0.0

    def _observed(self, prover: EntityId, tracker: _Tracker | None) -> GeoPoint:
        """Ground truth as a localizer sees it; a wormhole relay makes the
        on-site accomplice's position the observable one."""
        if tracker is not None and tracker.attack == "wormhole":
            return tracker.claimed
        return self.world.truth[prover]

    def _signed(self, draft, cls_field: str = "sig"):
        sig = Signature(sign(self.keypair, signing_payload(draft)), self.id)
        return replace(draft, **{cls_field: sig})

    # -- prover side ------------------------------------------------------------

    def start_request(self, payload) -> None:
        spec_req, rrsn_actor = payload
        w = self.world
        self.begin()
        claimed = GeoPoint(
            spec_req.claimed_x if spec_req.claimed_x is not None else w.truth[self.id].x,
            spec_req.claimed_y if spec_req.claimed_y is not None else w.truth[self.id].y,
        )
        if spec_req.true_x is not None:
            w.truth[self.id] = GeoPoint(spec_req.true_x, spec_req.true_y)
        tracker = w.new_instance(self.id, spec_req, rrsn_actor.id, claimed)
        if self.spec is not None:
            if self.spec.desired_witness:
                tracker.rogue_witness = w.roster_id(self.spec.desired_witness)
            if self.spec.desired_la:
                tracker.rogue_la = w.roster_id(self.spec.desired_la)
        w.log("request", instance=tracker.instance, prover=self.id[:8], attack=spec_req.attack)
        if spec_req.attack == "fabricate":
            self._start_fabricated(tracker)
        elif spec_req.attack == "replay":
            self._start_replay(tracker)
        elif spec_req.attack in ("implicate_fabricate", "implicate_replay"):
            # The implication runs without the victim: the rogue authority
            # drives it end to end.
            la_actor = w.participants[tracker.rogue_la]
            w.send(la_actor, "run_implication", tracker, self.now)
        else:
            self.charge_ops(signs=1)
            preq = self._signed(
                ProofRequest(prover=self.id, t=int(self.now), loc=claimed,
                             sig=Signature(b"", self.id))
            )
            w.send(rrsn_actor, "on_proof_request", (preq, tracker), self.now,
                   extra_ms=self._relay_ms(tracker))
        self.finish()

    def _start_fabricated(self, tracker: _Tracker) -> None:
        """Three-way collusion without a quorum: forge the approval outright."""
        w = self.world
        self.charge_ops(signs=3)
        preq = self._signed(
            ProofRequest(prover=self.id, t=int(self.now), loc=tracker.claimed,
                         sig=Signature(b"", self.id))
        )
        draft = ApprovalMessage(
            preq=preq,
            block_id=digest(b"forged-decision" + self.id.encode()),
            witness=tracker.rogue_witness,
            la=tracker.rogue_la,
            t=int(self.now),
            # Signed with the prover's own key while naming a real
            # supervisor: the best a forger can do without stolen keys.
            sig=Signature(b"", tracker.rrsn),
        )
        approval = replace(
            draft, sig=Signature(sign(self.keypair, signing_payload(draft)), tracker.rrsn)
        )
        self._proceed_with_approval(approval, tracker)

    def _start_replay(self, tracker: _Tracker) -> None:
        """Reuse the approval of an earlier, genuinely earned proof."""
        if self.last_approval is None:
            self.world.settle(tracker, OutcomeKind.ABORTED, AbortReason.INVALID_APPROVAL.value)
            return
        self._proceed_with_approval(self.last_approval, tracker)

    def _proceed_with_approval(self, approval: ApprovalMessage, tracker: _Tracker) -> None:
        w = self.world
        tracker.approval = approval
        tracker.stage = "approved"
        sreq = ServiceRequest(approval=approval, t=int(self.now))
        la_actor = w.participants.get(approval.la)
        if la_actor is None:
            w.settle(tracker, OutcomeKind.ABORTED, AbortReason.INVALID_APPROVAL.value)
            return
        w.send(la_actor, "on_service_request", (sreq, tracker), self.now,
               extra_ms=self._relay_ms(tracker))
        w.post(self.now + 2 * w.config.timings.step_timeout_ms, self._alp_deadline, tracker)

    def on_approval(self, payload) -> None:
        approval, tracker = payload
        w = self.world
        self.begin()
        self.approvals[approval.block_id] = approval
        if approval.preq.prover != self.id or tracker.done:
            # workers just file their copy for later validation
            self.finish()
            return
        if tracker.ddt is None and tracker.arrival is not None:
            tracker.ddt = w.clock - tracker.arrival
            tracker.ddt_wall = time.perf_counter() * 1000.0 - tracker.arrival_wall
        self.last_approval = approval
        self.charge_ops(verifies=1)
        try:
            sreq = protocol.prover_start(self.id, self.keypair, w.directory,
                                         approval, int(self.now))
        except (ServiceAbort, InvalidSignature) as e:
            w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
            self.finish()
            return
        tracker.approval = approval
        tracker.stage = "approved"
        w.send(w.participants[approval.la], "on_service_request", (sreq, tracker),
               self.now, extra_ms=self._relay_ms(tracker))
        w.post(self.now + 2 * w.config.timings.step_timeout_ms, self._alp_deadline, tracker)
        self.finish()

    def _alp_deadline(self, tracker: _Tracker) -> None:
        if not tracker.done and tracker.stage in ("requested", "approved"):
            self.world.settle(tracker, OutcomeKind.ABORTED, AbortReason.STEP_TIMEOUT.value)

    def on_asserted_proof(self, payload) -> None:
        alp, tracker = payload
        w = self.world
        self.begin()
        if tracker.done:
            self.finish()
            return
        tracker.alp = alp
        tracker.stage = "asserted"
        if tracker.pgt is None:
            tracker.pgt = w.clock - tracker.created
            tracker.pgt_wall = time.perf_counter() * 1000.0 - tracker.created_wall
        vreq = protocol.prover_verify(alp, int(self.now))
        witness_actor = w.participants.get(alp.endorsement.statement.witness)
        if witness_actor is None:
            w.settle(tracker, OutcomeKind.ABORTED, AbortReason.WRONG_WITNESS_SIGNATURE.value)
            self.finish()
            return
        w.send(witness_actor, "on_verification_request", (vreq, tracker), self.now,
               extra_ms=self._relay_ms(tracker))
        w.post(self.now + w.config.timings.step_timeout_ms, self._vr_deadline, tracker)
        self.finish()

    def _vr_deadline(self, tracker: _Tracker) -> None:
        if not tracker.done and tracker.stage == "asserted":
            self.world.settle(tracker, OutcomeKind.ABORTED, AbortReason.STEP_TIMEOUT.value)

    def on_puppet_proof(self, payload) -> None:
        """Colluding flow: the asserted proof arrives with the puppet's
        verification response attached; the rogue prover signs regardless."""
        alp, vr, tracker = payload
        w = self.world
        self.begin()
        if tracker.done:
            self.finish()
            return
        tracker.alp = alp
        tracker.stage = "verified"
        if tracker.pgt is None:
            tracker.pgt = w.clock - tracker.created
            tracker.pgt_wall = time.perf_counter() * 1000.0 - tracker.created_wall
        self.charge_ops(signs=1)
        receipt = ProofReceipt(
            proof=alp, vr=vr, block_id=alp.endorsement.statement.block_id, t=int(self.now)
        )
        ack = self._signed(SignedProofReceipt(receipt=receipt, sig=Signature(b"", self.id)))
        la = tracker.approval.la if tracker.approval else alp.endorsement.statement.la
        w.send(w.participants[la], "on_receipt", (ack, tracker), self.now)
        w.post(self.now + 2 * w.config.timings.step_timeout_ms, self._commit_deadline, tracker)
        self.finish()

    def on_verification_response(self, payload) -> None:
        vr, tracker = payload
        w = self.world
        self.begin()
        if tracker.done or tracker.alp is None:
            self.finish()
            return
        tracker.stage = "verified"
        self.charge_ops(verifies=1, signs=1)
        witness = tracker.alp.endorsement.statement.witness
        try:
            ack = protocol.prover_ack(self.id, self.keypair, w.directory,
                                      tracker.alp, vr, witness, int(self.now))
        except (ServiceAbort, InvalidSignature) as e:
            w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
            self.finish()
            return
        la = tracker.approval.la if tracker.approval else None
        la_actor = w.participants.get(la) if la else None
        if la_actor is None:
            w.settle(tracker, OutcomeKind.ABORTED, AbortReason.INVALID_APPROVAL.value)
            self.finish()
            return
        w.send(la_actor, "on_receipt", (ack, tracker), self.now,
               extra_ms=self._relay_ms(tracker))
        w.post(self.now + 2 * w.config.timings.step_timeout_ms, self._commit_deadline, tracker)
        self.finish()

    def _commit_deadline(self, tracker: _Tracker) -> None:
        if not tracker.done:
            self.world.settle(tracker, OutcomeKind.ABORTED, AbortReason.STEP_TIMEOUT.value)

    # -- authority side -------------------------------------------------------------

    def on_service_request(self, payload) -> None:
        sreq, tracker = payload
        w = self.world
        self.begin()
        b = self.behavior
        if self._malicious() and b.la_deny_service:
            tracker.attack = tracker.attack or "deny_service"
            w.log("deny_service", instance=tracker.instance, la=self.id[:8])
            self.finish()
            return
        approval = sreq.approval
        prover = approval.preq.prover
        self.charge_ops(verifies=1, signs=1)
        self.charge(w.config.timings.localization_ms)
        if self._malicious() and b.la_skip_checks:
            if self._observed(prover, tracker).distance_to(approval.preq.loc) > w.config.range_limit_m:
                tracker.attack = tracker.attack or "false_assertion"
            statement = LocationStatement(la=self.id, request=sreq, t=int(self.now))
            ereq = self._signed(EndorsementRequest(statement=statement, sig=Signature(b"", self.id)))
        else:
            own = self.approvals.get(approval.block_id)
            if own is None:
                # The prover's request can arrive ahead of this node's own
                # approval copy; hold the request briefly instead of failing.
                if self._defer("on_service_request", payload, tracker):
                    self.finish()
                    return
                w.settle(tracker, OutcomeKind.ABORTED, AbortReason.INVALID_APPROVAL.value)
                self.finish()
                return
            check = LocalizationCheck(
                claimed=approval.preq.loc,
                observed=self._observed(prover, tracker),
                range_m=w.config.range_limit_m,
            )
            try:
                ereq = protocol.la_issue_proof(
                    self.id, self.keypair, w.directory, own, sreq, check, int(self.now)
                )
            except (ServiceAbort, InvalidSignature) as e:
                if isinstance(e, LocalizationFailed):
                    tracker.attack = tracker.attack or "false_presence"
                w.log("la_refused", instance=tracker.instance, reason=type(e).__name__)
                w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
                self.finish()
                return
        if self._malicious() and b.la_puppet_relay:
            self._relay_to_puppet(ereq, tracker)
            self.finish()
            return
        witness_actor = w.participants.get(approval.witness)
        if witness_actor is None:
            w.settle(tracker, OutcomeKind.ABORTED, AbortReason.NOT_DESIGNATED_WITNESS.value)
            self.finish()
            return
        w.send(witness_actor, "on_endorsement_request", (ereq, tracker), self.now)
        self.finish()

    def _relay_to_puppet(self, ereq: EndorsementRequest, tracker: _Tracker) -> None:
        """Hand the endorsement to an unregistered accomplice far away.

        The puppet is not an actor: just a keypair the rogue authority talks
        to off the record.  Its endorsement and verification response come
        back after two extra hops.
        """
        w = self.world
        approval = ereq.statement.request.approval
        puppet_keys = generate_keypair(
            int.from_bytes(digest(b"puppet" + self.id.encode())[:8], "big"),
            w.config.key_size,
        )
        impersonate = tracker.attack == "puppet_impersonate"
        puppet_id = approval.witness if impersonate else digest(puppet_keys.public_der).hex()
        estat = EndorsementStatement(
            block_id=approval.block_id,
            prover=approval.preq.prover,
            la=approval.la,
            witness=puppet_id,
            h_request=digest(canonical_encode(ereq),),
            t=int(self.now),
        )
        edraft = EndorsementResponse(statement=estat, sig=Signature(b"", puppet_id))
        endorsement = replace(
            edraft, sig=Signature(sign(puppet_keys, signing_payload(edraft)), puppet_id)
        )
        alp = AssertedLocationProof(request=ereq, endorsement=endorsement, t=int(self.now))
        verdict = VerificationVerdict(
            answer=YES, h_proof=digest(canonical_encode(alp)), t=int(self.now)
        )
        vdraft = VerificationResponse(verdict=verdict, sig=Signature(b"", puppet_id))
        vr = replace(
            vdraft, sig=Signature(sign(puppet_keys, signing_payload(vdraft)), puppet_id)
        )
        prover_actor = w.participants[approval.preq.prover]
        w.send(prover_actor, "on_puppet_proof", (alp, vr, tracker), self.now,
               extra_ms=2 * w.p2p_latency())

    def on_asserted_from_witness(self, payload) -> None:
        alp, tracker = payload
        w = self.world
        self.begin()
        self.charge_ops(verifies=1)
        if not (self._malicious() and self.behavior.la_skip_checks):
            own = self.approvals.get(alp.endorsement.statement.block_id)
            expected = own.witness if own is not None else alp.endorsement.statement.witness
            try:
                alp = protocol.la_forward_alp(self.id, w.directory, expected, alp, int(self.now))
            except (ServiceAbort, InvalidSignature) as e:
                w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
                self.finish()
                return
        prover_actor = w.participants.get(
            alp.request.statement.request.approval.preq.prover
        )
        if prover_actor is not None:
            w.send(prover_actor, "on_asserted_proof", (alp, tracker), self.now)
        self.finish()

    def on_receipt(self, payload) -> None:
        ack, tracker = payload
        w = self.world
        self.begin()
        self.charge_ops(verifies=1, signs=1)
        prover = ack.receipt.proof.request.statement.request.approval.preq.prover
        if self._malicious() and self.behavior.la_skip_checks:
            final = self._signed(FinalizedProof(ack=ack, sig=Signature(b"", self.id)))
        else:
            try:
                final = protocol.la_finalize(self.id, self.keypair, w.directory,
                                             ack, prover, int(self.now))
            except (ServiceAbort, InvalidSignature) as e:
                w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
                self.finish()
                return
        try:
            rrsn_actor = w.supervisor_actor(tracker.rrsn)
        except KeyError:
            rrsn_actor = w.supervisors[0]
        w.send(rrsn_actor, "on_finalized_proof", (final, tracker), self.now)
        self.finish()

    def run_implication(self, tracker: _Tracker) -> None:
        """Authority and witness fabricate a visit for an absent victim.

        With a fabricated approval no decision block exists; with a replayed
        approval the forged victim receipt cannot verify.  Either way the
        admin layer refuses it.
        """
        w = self.world
        self.begin()
        victim = tracker.prover
        witness_actor = w.participants[tracker.rogue_witness]
        base_approval = self.last_stored_approval()
        if tracker.attack == "implicate_fabricate" or base_approval is None:
            vdraft = ProofRequest(prover=victim, t=int(self.now), loc=tracker.claimed,
                                  sig=Signature(b"", victim))
            fake_preq = replace(
                vdraft, sig=Signature(sign(self.keypair, signing_payload(vdraft)), victim)
            )
            adraft = ApprovalMessage(
                preq=fake_preq,
                block_id=digest(b"implication" + self.id.encode()),
                witness=witness_actor.id,
                la=self.id,
                t=int(self.now),
                sig=Signature(b"", tracker.rrsn),
            )
            approval = replace(
                adraft, sig=Signature(sign(self.keypair, signing_payload(adraft)), tracker.rrsn)
            )
        else:
            approval = base_approval
        tracker.approval = approval
        sreq = ServiceRequest(approval=approval, t=int(self.now))
        statement = LocationStatement(la=self.id, request=sreq, t=int(self.now))
        ereq = self._signed(EndorsementRequest(statement=statement, sig=Signature(b"", self.id)))
        estat = EndorsementStatement(
            block_id=approval.block_id,
            prover=victim,
            la=self.id,
            witness=witness_actor.id,
            h_request=digest(canonical_encode(ereq)),
            t=int(self.now),
        )
        adraft2 = EndorsementResponse(statement=estat, sig=Signature(b"", witness_actor.id))
        endorsement = replace(
            adraft2,
            sig=Signature(sign(witness_actor.keypair, signing_payload(adraft2)), witness_actor.id),
        )
        alp = AssertedLocationProof(request=ereq, endorsement=endorsement, t=int(self.now))
        verdict = VerificationVerdict(
            answer=YES, h_proof=digest(canonical_encode(alp)), t=int(self.now)
        )
        vdraft2 = VerificationResponse(verdict=verdict, sig=Signature(b"", witness_actor.id))
        vr = replace(
            vdraft2,
            sig=Signature(sign(witness_actor.keypair, signing_payload(vdraft2)), witness_actor.id),
        )
        receipt = ProofReceipt(proof=alp, vr=vr, block_id=approval.block_id, t=int(self.now))
        # The victim never signed anything: forge unverifiable receipt bytes.
        forged = SignedProofReceipt(receipt=receipt, sig=Signature(b"\x00" * 16, victim))
        final = self._signed(FinalizedProof(ack=forged, sig=Signature(b"", self.id)))
        tracker.alp = alp
        try:
            rrsn_actor = w.supervisor_actor(tracker.rrsn)
        except KeyError:
            rrsn_actor = w.supervisors[0]
        w.send(rrsn_actor, "on_finalized_proof", (final, tracker), self.now)
        self.finish()

    def last_stored_approval(self) -> ApprovalMessage | None:
        if not self.approvals:
            return None
        return list(self.approvals.values())[-1]

    # -- witness side ------------------------------------------------------------------

    def on_endorsement_request(self, payload) -> None:
        ereq, tracker = payload
        w = self.world
        self.begin()
        b = self.behavior
        approval = ereq.statement.request.approval
        prover = approval.preq.prover
        offset = b.witness_false_time_offset_ms if self._malicious() else 0
        skip_checks = self._malicious() and b.witness_skip_checks
        skip_loc = self._malicious() and (b.witness_false_endorsement or skip_checks)
        self.charge_ops(verifies=2, signs=1)
        self.charge(w.config.timings.localization_ms)
        now = int(self.now) + offset
        if offset:
            tracker.attack = tracker.attack or "false_time"
        if skip_checks or skip_loc:
            if self._observed(prover, tracker).distance_to(approval.preq.loc) > w.config.range_limit_m:
                tracker.attack = tracker.attack or "false_endorsement"
            estat = EndorsementStatement(
                block_id=approval.block_id,
                prover=prover,
                la=approval.la,
                witness=self.id,
                h_request=digest(canonical_encode(ereq)),
                t=now,
            )
            draft = EndorsementResponse(statement=estat, sig=Signature(b"", self.id))
            endorsement = self._signed(draft)
            alp = AssertedLocationProof(request=ereq, endorsement=endorsement, t=now)
        else:
            own = self.approvals.get(approval.block_id)
            if own is None:
                if self._defer("on_endorsement_request", payload, tracker):
                    self.finish()
                    return
                w.settle(tracker, OutcomeKind.ABORTED,
                         AbortReason.INVALID_ENDORSEMENT_REQUEST.value)
                self.finish()
                return
            check = LocalizationCheck(
                claimed=approval.preq.loc,
                observed=self._observed(prover, tracker),
                range_m=w.config.range_limit_m,
            )
            try:
                alp = protocol.witness_assert(
                    self.id, self.keypair, w.directory, own, ereq, check, now
                )
            except (ServiceAbort, InvalidSignature) as e:
                if isinstance(e, LocalizationFailed):
                    tracker.attack = tracker.attack or "false_presence"
                w.log("witness_refused", instance=tracker.instance, reason=type(e).__name__)
                w.settle(tracker, OutcomeKind.ABORTED, abort_reason_for(e).value)
                self.finish()
                return
            if offset:
                estat = replace(alp.endorsement.statement, t=now)
                endorsement = self._signed(
                    EndorsementResponse(statement=estat, sig=Signature(b"", self.id))
                )
                alp = AssertedLocationProof(request=ereq, endorsement=endorsement, t=now)
        self.witness_digests[approval.block_id] = digest(canonical_encode(alp))
        la_actor = w.participants.get(approval.la)
        if la_actor is not None:
            w.send(la_actor, "on_asserted_from_witness", (alp, tracker), self.now)
        self.finish()

    def on_verification_request(self, payload) -> None:
        vreq, tracker = payload
        w = self.world
        self.begin()
        self.charge_ops(signs=1)
        block_id = vreq.proof.endorsement.statement.block_id
        offset = self.behavior.witness_false_time_offset_ms if self._malicious() else 0
        vr = protocol.witness_answer(
            self.id, self.keypair, vreq, self.witness_digests.get(block_id),
            int(self.now) + offset,
        )
        prover_actor = w.participants.get(tracker.prover)
        if prover_actor is not None:
            w.send(prover_actor, "on_verification_response", (vr, tracker), self.now)
        self.finish()


# ---------------------------------------------------------------------------
# World construction and the run loop
# ---------------------------------------------------------------------------

def _stable_seed(tag: str, index) -> int:
    if not isinstance(index, int):
        index = int.from_bytes(digest(str(index).encode())[:4], "big")
    return int.from_bytes(digest(f"{tag}:{index}".encode())[:8], "big")


def build_world(config: ScenarioConfig) -> World:
    """Materialize a scenario: keys, nodes, actors, and the event schedule."""
    world = World(config)
    n = config.n_supervisors
    consensus_cfg = ConsensusConfig(
        n_supervisors=n,
        k=config.k,
        freshness_window_ms=int(config.timings.freshness_window_ms),
        consensus_timeout_ms=int(config.timings.consensus_timeout_ms),
    )
    for i in range(n):
        keys = generate_keypair(_stable_seed("supervisor", i), config.key_size)
        node_id = keys.fingerprint
        world.directory.register(node_id, keys.public_der, supervisor=True)
        node = SupervisorNode(
            node_id,
            keys,
            consensus_cfg,
            world.directory,
            Registry(config.ping_timeout_ms, config.range_limit_m),
            world.policy,
        )
        world.supervisors.append(
            SupervisorActor(world, node, compromised=i < config.n_compromised)
        )

    # Worker roster: explicit specs plus any generated crowd.
    roster: list[tuple] = []  # (spec_id, role, x, y, honest, key_seed)
    for idx, spec in enumerate(config.workers):
        roster.append(
            (spec.id, spec.role, spec.x, spec.y, spec.honest,
             _stable_seed("worker", spec.id or idx))
        )
    if config.generate_workers is not None:
        g = config.generate_workers
        for i in range(g.authorities):
            x = world.rng.uniform(-g.spread_m, g.spread_m)
            y = world.rng.uniform(-g.spread_m, g.spread_m)
            roster.append((None, "la", x, y, True, _stable_seed("gen-la", i)))
        for i in range(g.mobiles):
            x = world.rng.uniform(-g.spread_m, g.spread_m)
            y = world.rng.uniform(-g.spread_m, g.spread_m)
            roster.append((None, "mobile", x, y, True, _stable_seed("gen-w", i)))

    last_request = 0.0
    for p in config.provers:
        for r in p.requests:
            last_request = max(last_request, r.at_ms)
    world.horizon = (
        last_request
        + config.timings.consensus_timeout_ms
        + 8 * config.timings.step_timeout_ms
        + 5_000.0
    )

    reg_ramp = 5_000.0
    mobile_ids: list[tuple[EntityId, float]] = []
    for spec_id, role_name, x, y, honest, key_seed in roster:
        keys = generate_keypair(key_seed, config.key_size)
        entity_id = keys.fingerprint
        if spec_id:
            world.roster[spec_id] = entity_id
        role = WorkerRole.AUTHORITY if role_name in ("la", "authority") else WorkerRole.MOBILE
        world.directory.register(entity_id, keys.public_der)
        loc = GeoPoint(x, y)
        world.truth[entity_id] = loc
        reg_at = world.rng.uniform(0.0, reg_ramp)
        world.post(reg_at, _apply_registration, world, entity_id, role, loc, reg_at)
        if role is WorkerRole.MOBILE:
            mobile_ids.append((entity_id, reg_at))
        world.participants[entity_id] = ParticipantActor(
            world, entity_id, keys, role=role, honest=honest
        )

    for idx, spec in enumerate(config.provers):
        keys = generate_keypair(_stable_seed("prover", spec.id or idx), config.key_size)
        entity_id = keys.fingerprint
        if spec.id:
            world.roster[spec.id] = entity_id
        world.directory.register(entity_id, keys.public_der)
        loc = GeoPoint(spec.x, spec.y)
        world.truth[entity_id] = loc
        reg_at = world.rng.uniform(0.0, reg_ramp)
        world.post(reg_at, _apply_registration, world, entity_id, WorkerRole.MOBILE, loc, reg_at)
        mobile_ids.append((entity_id, reg_at))
        actor = ParticipantActor(world, entity_id, keys, spec=spec, honest=spec.honest)
        world.participants[entity_id] = actor
        for r in spec.requests:
            rrsn_actor = world.supervisors[r.rrsn_index % n]
            world.post(r.at_ms, World._deliver, actor, "start_request", (r, rrsn_actor))

    # Periodic pings with per-ping jitter keep worker uptimes distinct.
    for entity_id, reg_at in mobile_ids:
        t = reg_at
        while True:
            t += config.ping_interval_ms + world.rng.uniform(0.0, 2_000.0)
            if t > world.horizon:
                break
            world.post(t, _apply_ping, world, entity_id, t)

    return world


def _apply_registration(world: World, entity_id, role, loc, at) -> None:
    for sup in world.supervisors:
        sup.apply_register(entity_id, role, loc, at)


def _apply_ping(world: World, entity_id, at) -> None:
    loc = world.truth.get(entity_id)
    if loc is None:
        return
    for sup in world.supervisors:
        sup.apply_ping(entity_id, loc, at)


def inject_attack(world: World, behavior: AdversaryBehavior) -> World:
    """Swap the adversary deviations wired into this world's actors."""
    behavior.check_consistent(world.config.attack_case)
    world.behavior = behavior
    return world


def run(world: World) -> list[ProtocolOutcome]:
    """Drain the event queue to quiescence and return per-instance outcomes.

    Raises NonTermination if the event budget runs out, and ForkDetected if
    two accepted blocks ever contended for the same predecessor.
    """
    budget = world.config.event_budget
    q = world._queue
    while q:
        if world._events_processed >= budget:
            raise NonTermination(
                f"event budget {budget} exhausted with {len(q)} events pending"
            )
        at, _, fn, args = heapq.heappop(q)
        world.clock = at
        world._events_processed += 1
        fn(*args)
    if world.forks:
        raise ForkDetected("; ".join(world.forks[:3]))
    for tracker in world.trackers.values():
        if not tracker.done:
            world.settle(tracker, OutcomeKind.ABORTED, AbortReason.STEP_TIMEOUT.value)
    _post_run_presentations(world)
    return sorted(world.outcomes, key=lambda o: o.instance)


def simulate(config: ScenarioConfig) -> tuple[World, list[ProtocolOutcome]]:
    world = build_world(config)
    return world, run(world)


def _post_run_presentations(world: World) -> None:
    """Proof tampering happens after commit: doctor the stored copy and
    present it for third-party verification."""
    if not world.behavior.prover_tamper_proof:
        return
    for tracker in world.trackers.values():
        if tracker.attack or tracker.final is None or tracker.outcome is None:
            continue
        actor = world.participants.get(tracker.prover)
        if actor is None or actor.honest:
            continue
        final = tracker.final
        estat = final.ack.receipt.proof.endorsement.statement
        doctored = replace(
            final,
            ack=replace(
                final.ack,
                receipt=replace(
                    final.ack.receipt,
                    proof=replace(
                        final.ack.receipt.proof,
                        endorsement=replace(
                            final.ack.receipt.proof.endorsement,
                            statement=replace(estat, t=estat.t + 3_600_000),
                        ),
                    ),
                ),
            ),
        )
        verdict = world.verify(doctored)
        tracker.outcome.attack = "tamper"
        tracker.outcome.attack_detected = not verdict.valid
        world.log(
            "tamper_presentation",
            instance=tracker.instance,
            valid=verdict.valid,
            reason=verdict.reason.value if verdict.reason else None,
        )


def _failure_label(e: ProtocolError) -> str:
    if isinstance(e, StaleRequest):
        return ConsensusFailure.STALE_REQUEST.value
    if isinstance(e, UnknownProver):
        return ConsensusFailure.UNKNOWN_PROVER.value
    return ConsensusFailure.INVALID_REQUEST.value
