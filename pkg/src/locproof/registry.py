"""Registry of available workers and the priority rule that picks them.

Every supervisor node holds a replica of this registry, kept identical
across replicas by applying the same ordered event stream (registrations,
pings, proof commits).  Selection must therefore be a pure function of the
registry contents, which is why ties are broken by entity id rather than
by anything stateful.

Priority of a worker for a given prover:

    requests_entertained * uptime_seconds / max(distance_meters, 1.0)

Uptime is the span between a worker's first registration and its latest
ping.  Workers farther than the short-range communication limit are not
scored at all: they are ineligible.  The count of entertained requests
only moves when a committed proof naming the worker lands on the
provenance chain, so a single dishonest supervisor cannot inflate it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .errors import DuplicateWorker, NoEligibleLA, NoEligibleWitness, UnknownWorker
from .messages import EntityId, GeoPoint, Timestamp

#: Distance clamp (meters) so co-located workers do not divide by zero.
MIN_DISTANCE_M = 1.0

DEFAULT_PING_TIMEOUT_MS = 60_000
DEFAULT_RANGE_LIMIT_M = 100.0


class WorkerRole(str, enum.Enum):
    MOBILE = "mobile"              # witness-capable mobile entity
    AUTHORITY = "location_authority"


@dataclass
class WorkerRecord:
    id: EntityId
    role: WorkerRole
    loc: GeoPoint
    first_seen: Timestamp
    last_ping: Timestamp
    requests_entertained: int = 1

    @property
    def uptime_ms(self) -> int:
        return self.last_ping - self.first_seen


class Registry:
    """One supervisor node's view of the available workers."""

    def __init__(
        self,
        ping_timeout_ms: int = DEFAULT_PING_TIMEOUT_MS,
        range_limit_m: float = DEFAULT_RANGE_LIMIT_M,
    ):
        self.ping_timeout_ms = ping_timeout_ms
        self.range_limit_m = range_limit_m
        self._workers: dict[EntityId, WorkerRecord] = {}

    def __contains__(self, worker_id: EntityId) -> bool:
        return worker_id in self._workers

    def __len__(self) -> int:
        return len(self._workers)

    def get(self, worker_id: EntityId) -> WorkerRecord | None:
        return self._workers.get(worker_id)

    def workers(self) -> list[WorkerRecord]:
        return list(self._workers.values())

    def register_entity(
        self, worker_id: EntityId, role: WorkerRole, loc: GeoPoint, now: Timestamp
    ) -> WorkerRecord:
        """Add a worker; re-registration after eviction starts a fresh record."""
        if worker_id in self._workers:
            raise DuplicateWorker(worker_id)
        record = WorkerRecord(
            id=worker_id, role=role, loc=loc, first_seen=now, last_ping=now
        )
        self._workers[worker_id] = record
        return record

    def record_ping(self, worker_id: EntityId, loc: GeoPoint, now: Timestamp) -> WorkerRecord:
        record = self._workers.get(worker_id)
        if record is None:
            raise UnknownWorker(worker_id)
        record.last_ping = now
        record.loc = loc
        return record

    def record_served(self, worker_id: EntityId) -> None:
        """Bump the entertained-request count after a proof commits."""
        record = self._workers.get(worker_id)
        if record is not None:
            record.requests_entertained += 1

    def evict_stale(self, now: Timestamp) -> list[EntityId]:
        """Drop mobile entities whose last ping is too old.

        Location authorities are permanent site fixtures and are never
        evicted, however stale their ping.
        """
        evicted = [
            wid
            for wid, rec in self._workers.items()
            if rec.role is WorkerRole.MOBILE and now - rec.last_ping > self.ping_timeout_ms
        ]
        for wid in evicted:
            del self._workers[wid]
        return evicted

    def is_active(self, record: WorkerRecord, now: Timestamp) -> bool:
        if record.role is WorkerRole.AUTHORITY:
            return True
        return now - record.last_ping <= self.ping_timeout_ms

    def priority_score(
        self, record: WorkerRecord, prover_loc: GeoPoint, now: Timestamp
    ) -> float | None:
        """Score a worker for a prover at ``prover_loc``; None if out of range."""
        dist = record.loc.distance_to(prover_loc)
        if dist > self.range_limit_m:
            return None
        uptime_s = record.uptime_ms / 1000.0
        return record.requests_entertained * uptime_s / max(dist, MIN_DISTANCE_M)

    def select_participants(
        self, prover_id: EntityId, prover_loc: GeoPoint, now: Timestamp
    ) -> tuple[EntityId, EntityId]:
        """Pick the highest-priority witness and authority for this prover.

        The prover itself is never a candidate.  Ties break toward the
        lexicographically smallest id so every replica resolves them the
        same way.
        """
        best_witness: tuple[float, EntityId] | None = None
        best_la: tuple[float, EntityId] | None = None
        for wid, record in self._workers.items():
            if not self.is_active(record, now):
                continue
            score = self.priority_score(record, prover_loc, now)
            if score is None:
                continue
            if record.role is WorkerRole.AUTHORITY:
                if best_la is None or _beats(score, wid, best_la):
                    best_la = (score, wid)
            else:
                if wid == prover_id:
                    continue
                if best_witness is None or _beats(score, wid, best_witness):
                    best_witness = (score, wid)
        if best_witness is None:
            raise NoEligibleWitness(f"no witness in range for {prover_id}")
        if best_la is None:
            raise NoEligibleLA(f"no location authority in range for {prover_id}")
        return best_witness[1], best_la[1]

    def dump_jsonl(self) -> str:
        """Diagnostic dump, one JSON object per worker."""
        lines = []
        for rec in self._workers.values():
            lines.append(
                json.dumps(
                    {
                        "id": rec.id,
                        "role": rec.role.value,
                        "x": rec.loc.x,
                        "y": rec.loc.y,
                        "first_seen": rec.first_seen,
                        "last_ping": rec.last_ping,
                        "requests_entertained": rec.requests_entertained,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines)


def _beats(score: float, wid: EntityId, incumbent: tuple[float, EntityId]) -> bool:
    inc_score, inc_id = incumbent
    if score != inc_score:
        return score > inc_score
    return wid < inc_id
