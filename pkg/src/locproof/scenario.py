"""Declarative scenario descriptions and the canned attack rosters.

A scenario fully determines a run: the admin layer size and quorum margin,
the worker population with positions and honesty, the provers with their
request schedules, the latency and processing-cost models, and which of
the eight collusion cases (if any) is being exercised.  The seed pins
every random draw, so (scenario, seed) is reproducible bit for bit.

Scenario files are YAML whose keys mirror the config field names; see
``scenarios/`` in the repository root for commented examples.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import yaml

from .crypto import KEY_SIZES
from .errors import InconsistentBehavior, InvalidConfig


@dataclass(frozen=True)
class LatencyModel:
    """Uniform virtual-latency ranges (ms) for messaging."""

    p2p_min_ms: float = 5.0
    p2p_max_ms: float = 30.0
    broadcast_min_ms: float = 5.0
    broadcast_max_ms: float = 30.0


@dataclass(frozen=True)
class CostModel:
    """Virtual per-operation processing costs charged to a node's executor.

    These shape contention: a node working through a burst of concurrent
    requests serializes these costs, which is what degrades decision time
    under load.  Crypto costs scale with signature key size.
    """

    sign_ms: dict = field(
        default_factory=lambda: {224: 0.25, 256: 0.20, 384: 0.60, 521: 1.00}
    )
    verify_ms: dict = field(
        default_factory=lambda: {224: 0.30, 256: 0.30, 384: 0.80, 521: 1.50}
    )
    scan_per_worker_ms: float = 0.01
    base_handle_ms: float = 0.05


@dataclass(frozen=True)
class ServiceTimings:
    localization_ms: float = 150.0
    step_timeout_ms: float = 5_000.0
    consensus_timeout_ms: float = 10_000.0
    freshness_window_ms: float = 30_000.0
    #: None derives 2 * (2*localization + 8*p2p_max + 2*broadcast_max).
    assertion_window_ms: float | None = None
    skew_ms: float = 10_000.0

    def derived_assertion_window(self, latency: LatencyModel) -> float:
        if self.assertion_window_ms is not None:
            return self.assertion_window_ms
        return 2.0 * (
            2.0 * self.localization_ms
            + 8.0 * latency.p2p_max_ms
            + 2.0 * latency.broadcast_max_ms
        )


@dataclass(frozen=True)
class WorkerSpec:
    id: str | None            # None: derive a crypto-id from the roster index
    role: str                 # "mobile" or "la"
    x: float
    y: float
    honest: bool = True


@dataclass(frozen=True)
class RequestSpec:
    at_ms: float
    claimed_x: float | None = None    # None: the prover's true position
    claimed_y: float | None = None
    true_x: float | None = None       # None: the prover's spec position
    true_y: float | None = None
    rrsn_index: int = 0
    attack: str = ""                  # "", or an attack flow name


@dataclass(frozen=True)
class ProverSpec:
    id: str | None
    x: float
    y: float
    honest: bool = True
    requests: tuple[RequestSpec, ...] = ()
    desired_witness: str | None = None   # collusion target ids (roster ids)
    desired_la: str | None = None


@dataclass(frozen=True)
class GeneratedWorkers:
    """Roster generator: ``mobiles`` + ``authorities`` spread around the site."""

    mobiles: int
    authorities: int
    spread_m: float = 80.0


@dataclass(frozen=True)
class AdversaryBehavior:
    """What the dishonest participants actually do, one flag per deviation."""

    prover_tamper_proof: bool = False
    prover_replay_approval: bool = False
    prover_fabricate_approval: bool = False
    prover_wormhole_relay_ms: float = 0.0
    witness_false_endorsement: bool = False
    witness_false_time_offset_ms: int = 0
    witness_skip_checks: bool = False
    la_deny_service: bool = False
    la_implicate_prover: bool = False
    la_puppet_relay: bool = False
    la_skip_checks: bool = False
    supervisor_collude: bool = False

    def any_active(self) -> bool:
        return self != AdversaryBehavior()

    def check_consistent(self, attack_case: int) -> None:
        if attack_case == 1 and self.any_active():
            raise InconsistentBehavior("case 1 is the all-honest baseline")
        if self.prover_fabricate_approval and self.prover_replay_approval:
            raise InconsistentBehavior("fabricate and replay are alternative flows")
        if self.prover_wormhole_relay_ms < 0:
            raise InconsistentBehavior("relay delay cannot be negative")

    @classmethod
    def for_case(cls, case: int) -> "AdversaryBehavior":
        """Default deviation set for each collusion-matrix case."""
        presets = {
            1: cls(),
            2: cls(witness_false_time_offset_ms=60_000),
            3: cls(la_deny_service=True),
            4: cls(la_implicate_prover=True, witness_skip_checks=True, la_skip_checks=True),
            5: cls(),  # malicious prover: deviation picked per request flow
            6: cls(witness_false_endorsement=True, witness_skip_checks=True),
            7: cls(la_puppet_relay=True, la_skip_checks=True),
            8: cls(
                prover_fabricate_approval=True,
                la_skip_checks=True,
                witness_skip_checks=True,
                witness_false_endorsement=True,
            ),
        }
        if case not in presets:
            raise InvalidConfig(f"attack case must be 1..8, got {case}")
        return presets[case]


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_supervisors: int = 5
    k: int = 1
    key_size: int = 224
    range_limit_m: float = 100.0
    ping_interval_ms: int = 20_000
    ping_timeout_ms: int = 60_000
    latency: LatencyModel = LatencyModel()
    costs: CostModel = CostModel()
    timings: ServiceTimings = ServiceTimings()
    workers: tuple[WorkerSpec, ...] = ()
    generate_workers: GeneratedWorkers | None = None
    provers: tuple[ProverSpec, ...] = ()
    attack_case: int = 1
    behavior: AdversaryBehavior | None = None
    compromised_supervisor_fraction: float = 0.0
    allow_majority_compromise: bool = False
    event_budget: int = 500_000

    def validate(self) -> None:
        if self.n_supervisors < 1:
            raise InvalidConfig("need at least one supervisor node")
        if self.k < 1 or self.n_supervisors // 2 + self.k > self.n_supervisors:
            raise InvalidConfig("quorum margin k out of range for this admin layer")
        if self.key_size not in KEY_SIZES:
            raise InvalidConfig(f"key size must be one of {KEY_SIZES}")
        if not self.workers and self.generate_workers is None:
            raise InvalidConfig("scenario has no workers")
        if not (0.0 <= self.compromised_supervisor_fraction <= 1.0):
            raise InvalidConfig("compromised fraction must be within [0, 1]")
        if (
            self.compromised_supervisor_fraction >= 0.51
            and not self.allow_majority_compromise
        ):
            raise InvalidConfig(
                "majority compromise violates the trust assumption; "
                "set allow_majority_compromise to test the boundary"
            )
        if self.event_budget < 1:
            raise InvalidConfig("event budget must be positive")
        if self.attack_case not in range(1, 9):
            raise InvalidConfig("attack case must be 1..8")
        resolved = self.resolved_behavior()
        resolved.check_consistent(self.attack_case)

    def resolved_behavior(self) -> AdversaryBehavior:
        if self.behavior is not None:
            return self.behavior
        if self.attack_case == 1:
            return AdversaryBehavior()
        return AdversaryBehavior.for_case(self.attack_case)

    @property
    def threshold(self) -> int:
        return self.n_supervisors // 2 + self.k

    @property
    def n_compromised(self) -> int:
        return round(self.compromised_supervisor_fraction * self.n_supervisors)

    def config_digest(self) -> str:
        """Stable fingerprint of everything but the seed."""
        payload = asdict(replace(self, seed=0))
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# YAML round trip
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    data = dict(raw)
    try:
        if "latency" in data and data["latency"] is not None:
            data["latency"] = LatencyModel(**data["latency"])
        if "costs" in data and data["costs"] is not None:
            data["costs"] = CostModel(**data["costs"])
        if "timings" in data and data["timings"] is not None:
            data["timings"] = ServiceTimings(**data["timings"])
        if data.get("generate_workers") is not None:
            data["generate_workers"] = GeneratedWorkers(**data["generate_workers"])
        if "workers" in data:
            data["workers"] = tuple(WorkerSpec(**w) for w in data["workers"])
        if "provers" in data:
            provers = []
            for p in data["provers"]:
                p = dict(p)
                p["requests"] = tuple(RequestSpec(**r) for r in p.get("requests", ()))
                provers.append(ProverSpec(**p))
            data["provers"] = tuple(provers)
        if data.get("behavior") is not None:
            data["behavior"] = AdversaryBehavior(**data["behavior"])
        cfg = ScenarioConfig(**data)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"bad scenario structure: {e}") from None
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: expected a mapping at top level")
    return scenario_from_dict(raw)


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(cfg), f, sort_keys=False)


# ---------------------------------------------------------------------------
# Canned scenario builders
# ---------------------------------------------------------------------------

#: Requests start after a couple of ping cycles so uptimes are established.
REQUEST_EPOCH_MS = 45_000.0


def baseline_scenario(
    seed: int = 0,
    n_supervisors: int = 15,
    k: int = 1,
    key_size: int = 224,
    n_workers: int = 400,
    n_authorities: int = 8,
    n_requests: int = 3,
    request_spacing_ms: float = 400.0,
    assertion_window_ms: float | None = None,
) -> ScenarioConfig:
    """The all-honest reference rig: one site, one prover, a worker crowd."""
    requests = tuple(
        RequestSpec(at_ms=REQUEST_EPOCH_MS + i * request_spacing_ms)
        for i in range(n_requests)
    )
    return ScenarioConfig(
        seed=seed,
        n_supervisors=n_supervisors,
        k=k,
        key_size=key_size,
        generate_workers=GeneratedWorkers(
            mobiles=max(n_workers - n_authorities, 1), authorities=n_authorities
        ),
        provers=(ProverSpec(id=None, x=0.0, y=0.0, requests=requests),),
        timings=ServiceTimings(assertion_window_ms=assertion_window_ms),
        attack_case=1,
    )


def concurrency_scenario(
    seed: int,
    n_concurrent: int,
    n_supervisors: int = 15,
    k: int = 1,
    key_size: int = 224,
    n_workers: int = 40,
) -> ScenarioConfig:
    """``n_concurrent`` provers hitting the same receiving node inside a
    short interval (about 9 ms of spread per request, mirroring bursts of
    5 requests in ~28 ms up to 100 in ~920 ms)."""
    interval = 9.2 * n_concurrent
    provers = []
    for i in range(n_concurrent):
        at = REQUEST_EPOCH_MS + (i * interval) / max(n_concurrent, 1)
        provers.append(
            ProverSpec(
                id=None,
                x=float(i % 7) - 3.0,
                y=float(i % 5) - 2.0,
                requests=(RequestSpec(at_ms=at, rrsn_index=0),),
            )
        )
    return ScenarioConfig(
        seed=seed,
        n_supervisors=n_supervisors,
        k=k,
        key_size=key_size,
        generate_workers=GeneratedWorkers(mobiles=n_workers - 4, authorities=4),
        provers=tuple(provers),
        timings=ServiceTimings(assertion_window_ms=60_000.0),
        attack_case=1,
    )


REMOTE = (12_000.0, 12_000.0)


def attack_scenario(case: int, seed: int, n_supervisors: int = 5) -> ScenarioConfig:
    """One collusion-matrix case with a roster that forces the intended
    participant selection, plus the attack flow for this seed.

    Cases with several canonical flows rotate them by seed so a batch of
    seeds covers every variant.
    """
    if case not in range(1, 9):
        raise InvalidConfig("attack case must be 1..8")

    la_honest = WorkerSpec(id="la-main", role="la", x=8.0, y=0.0)
    la_far = WorkerSpec(id="la-spare", role="la", x=55.0, y=10.0)
    la_bad = WorkerSpec(id="la-rogue", role="la", x=6.0, y=0.0, honest=False)
    w_near = WorkerSpec(id="w-near", role="mobile", x=4.0, y=3.0)
    w_far = WorkerSpec(id="w-far", role="mobile", x=70.0, y=60.0)
    w_bad = WorkerSpec(id="w-rogue", role="mobile", x=3.0, y=3.0, honest=False)
    w_bad_far = WorkerSpec(id="w-rogue-far", role="mobile", x=65.0, y=55.0, honest=False)
    la_bad_far = WorkerSpec(id="la-rogue-far", role="la", x=60.0, y=5.0, honest=False)

    at = REQUEST_EPOCH_MS
    here = dict(claimed_x=0.0, claimed_y=0.0)
    gone = dict(true_x=REMOTE[0], true_y=REMOTE[1], claimed_x=0.0, claimed_y=0.0)

    def cfg(workers, prover, behavior=None, **kw):
        c = ScenarioConfig(
            seed=seed,
            n_supervisors=n_supervisors,
            workers=tuple(workers),
            provers=(prover,),
            attack_case=case,
            behavior=behavior,
            **kw,
        )
        c.validate()
        return c

    if case == 1:
        prover = ProverSpec(id="prover", x=0.0, y=0.0, requests=(RequestSpec(at_ms=at),))
        return cfg([la_honest, la_far, w_near, w_far], prover)

    if case == 2:
        # Honest, present prover; the nearby witness lies about time.
        prover = ProverSpec(id="prover", x=0.0, y=0.0, requests=(RequestSpec(at_ms=at),))
        return cfg([la_honest, w_bad, w_far], prover)

    if case == 3:
        # Sole in-range authority refuses service.
        prover = ProverSpec(id="prover", x=0.0, y=0.0, requests=(RequestSpec(at_ms=at),))
        return cfg([la_bad, w_near, w_far], prover)

    if case == 4:
        # Colluding authority+witness first serve the victim honestly, then
        # fabricate or replay an implication against it.
        variant = "implicate_fabricate" if seed % 2 == 0 else "implicate_replay"
        requests = (
            RequestSpec(at_ms=at, **here),
            RequestSpec(at_ms=at + 60_000.0, attack=variant, **here),
        )
        prover = ProverSpec(
            id="victim", x=0.0, y=0.0, requests=requests,
            desired_witness="w-rogue", desired_la="la-rogue",
        )
        return cfg([la_bad, w_bad, w_far], prover)

    if case == 5:
        variant = ("false_presence", "tamper", "wormhole")[seed % 3]
        behavior = AdversaryBehavior(
            prover_tamper_proof=(variant == "tamper"),
            prover_wormhole_relay_ms=800.0 if variant == "wormhole" else 0.0,
        )
        if variant == "false_presence":
            req = RequestSpec(at_ms=at, **gone)
        elif variant == "tamper":
            req = RequestSpec(at_ms=at, **here)
        else:
            req = RequestSpec(at_ms=at, attack="wormhole", **gone)
        prover = ProverSpec(id="prover", x=0.0, y=0.0, honest=False, requests=(req,))
        return cfg([la_honest, la_far, w_near, w_far], prover, behavior)

    if case == 6:
        # Absent prover, colluding witness; the honest authority localizes.
        prover = ProverSpec(
            id="prover", x=0.0, y=0.0, honest=False, requests=(RequestSpec(at_ms=at, **gone),)
        )
        return cfg([la_honest, w_bad, w_far], prover)

    if case == 7:
        # Colluding authority relays endorsement to an unregistered puppet;
        # the admin-chosen witness is honest.
        variant = "puppet_own_id" if seed % 2 == 0 else "puppet_impersonate"
        prover = ProverSpec(
            id="prover",
            x=0.0,
            y=0.0,
            honest=False,
            requests=(RequestSpec(at_ms=at, attack=variant, **gone),),
        )
        return cfg([la_bad, w_near, w_far], prover)

    # case 8: full three-way collusion.
    if seed % 2 == 0:
        # Fabricated approval naming the rogue pair (who are not the
        # admin layer's choice).
        prover = ProverSpec(
            id="prover",
            x=0.0,
            y=0.0,
            honest=False,
            requests=(RequestSpec(at_ms=at, attack="fabricate", **gone),),
            desired_witness="w-rogue-far",
            desired_la="la-rogue-far",
        )
        return cfg([la_honest, w_near, w_bad_far, la_bad_far], prover)
    # Replay: the trio first earns a genuine proof while the prover really
    # is on site, then reuses that approval after the prover left.
    behavior = replace(
        AdversaryBehavior.for_case(8),
        prover_fabricate_approval=False,
        prover_replay_approval=True,
    )
    requests = (
        RequestSpec(at_ms=at, **here),
        RequestSpec(at_ms=at + 60_000.0, attack="replay", **gone),
    )
    prover = ProverSpec(
        id="prover", x=0.0, y=0.0, honest=False, requests=requests,
        desired_witness="w-rogue", desired_la="la-rogue",
    )
    return cfg([la_bad, w_bad, w_far], prover, behavior)


def boundary_scenario(seed: int, compromised_fraction: float) -> ScenarioConfig:
    """The documented breaking point: a compromised-supervisor share with a
    colluding authority and witness, all conspiring for one absent prover."""
    n = 15
    prover = ProverSpec(
        id="prover",
        x=0.0,
        y=0.0,
        honest=False,
        requests=(
            RequestSpec(
                at_ms=REQUEST_EPOCH_MS,
                true_x=REMOTE[0],
                true_y=REMOTE[1],
                claimed_x=0.0,
                claimed_y=0.0,
                rrsn_index=0,
                attack="collude_selection",
            ),
        ),
        desired_witness="w-rogue",
        desired_la="la-rogue",
    )
    workers = (
        WorkerSpec(id="la-main", role="la", x=8.0, y=0.0),
        WorkerSpec(id="la-rogue", role="la", x=30.0, y=0.0, honest=False),
        WorkerSpec(id="w-near", role="mobile", x=4.0, y=3.0),
        WorkerSpec(id="w-rogue", role="mobile", x=25.0, y=20.0, honest=False),
        WorkerSpec(id="w-far", role="mobile", x=70.0, y=60.0),
    )
    behavior = AdversaryBehavior(
        supervisor_collude=True,
        la_skip_checks=True,
        witness_skip_checks=True,
        witness_false_endorsement=True,
    )
    cfg = ScenarioConfig(
        seed=seed,
        n_supervisors=n,
        workers=workers,
        provers=(prover,),
        attack_case=8,
        behavior=behavior,
        compromised_supervisor_fraction=compromised_fraction,
        allow_majority_compromise=True,
    )
    cfg.validate()
    return cfg


def randomized_scenario(seed: int) -> ScenarioConfig:
    """Small mixed-honesty world with randomized latencies and schedules;
    used for the termination sweep.  All requests route through one
    receiving node so block commits serialize."""
    import random

    rng = random.Random(seed)
    n = rng.choice([3, 5])
    case = rng.randint(1, 8)
    latency = LatencyModel(
        p2p_min_ms=rng.uniform(1, 8),
        p2p_max_ms=rng.uniform(10, 60),
        broadcast_min_ms=rng.uniform(1, 8),
        broadcast_max_ms=rng.uniform(10, 60),
    )
    cfg = attack_scenario(case, seed, n_supervisors=n)
    return replace(cfg, latency=latency, seed=seed)
