"""Parameter sweeps and metric export.

A sweep varies one knob (worker count, quorum margin, key size, or
concurrent request load) over a list of values, runs each point several
times with derived seeds, and aggregates decision time, proof generation
time, and artifact sizes into one row per point.  Rows embed the base seed
and a config digest so any number can be re-derived.

Wall-clock columns are filled only when asked for: they depend on the host
and would break byte-identical re-runs of the virtual-time metrics.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields, replace

import yaml

from .crypto import digest
from .errors import InvalidConfig
from .scenario import (
    GeneratedWorkers,
    ScenarioConfig,
    concurrency_scenario,
    scenario_from_dict,
)
from .sim import OutcomeKind, ProtocolOutcome, simulate

SWEEP_VARIABLES = ("worker_count", "consensus_k", "key_size", "concurrent_requests")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    repetitions: int
    base: ScenarioConfig

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise InvalidConfig(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise InvalidConfig("sweep needs at least one value")
        if self.repetitions < 1:
            raise InvalidConfig("repetitions must be at least 1")


@dataclass
class MetricRow:
    variable: str
    value: float
    seed: int
    config_digest: str
    runs: int
    committed: int
    rejected: int
    aborted: int
    ddt_mean_ms: float | None
    ddt_min_ms: float | None
    ddt_max_ms: float | None
    ddt_wall_mean_ms: float | None
    ddt_wall_min_ms: float | None
    ddt_wall_max_ms: float | None
    pgt_mean_ms: float | None
    pgt_wall_mean_ms: float | None
    proof_bytes: int | None
    block_bytes: int | None
    request_interval_ms: float | None
    error: str = ""


FIELD_ORDER = [f.name for f in fields(MetricRow)]


def _derived_seed(base_seed: int, value, rep: int) -> int:
    material = f"{base_seed}:{value}:{rep}".encode()
    return int.from_bytes(digest(material)[:6], "big")


def _apply_value(spec: SweepSpec, value, seed: int) -> ScenarioConfig:
    base = spec.base
    if spec.variable == "worker_count":
        gen = base.generate_workers or GeneratedWorkers(mobiles=1, authorities=1)
        mobiles = max(int(value) - gen.authorities, 1)
        return replace(
            base, seed=seed, generate_workers=replace(gen, mobiles=mobiles)
        )
    if spec.variable == "consensus_k":
        return replace(base, seed=seed, k=int(value))
    if spec.variable == "key_size":
        return replace(base, seed=seed, key_size=int(value))
    # concurrent_requests: rebuild the prover schedule for the burst size.
    return concurrency_scenario(
        seed=seed,
        n_concurrent=int(value),
        n_supervisors=base.n_supervisors,
        k=base.k,
        key_size=base.key_size,
    )


def _stats(values: list[float]) -> tuple[float, float, float] | tuple[None, None, None]:
    if not values:
        return (None, None, None)
    return (
        round(sum(values) / len(values), 3),
        round(min(values), 3),
        round(max(values), 3),
    )


def run_point(
    spec: SweepSpec, value, wall_time: bool = False
) -> MetricRow:
    """Run all repetitions for one sweep value and aggregate them."""
    outcomes: list[ProtocolOutcome] = []
    interval = None
    error = ""
    for rep in range(spec.repetitions):
        seed = _derived_seed(spec.base.seed, value, rep)
        cfg = _apply_value(spec, value, seed)
        if spec.variable == "concurrent_requests":
            interval = round(9.2 * int(value), 3)
        try:
            _, result = simulate(cfg)
            outcomes.extend(result)
        except Exception as e:  # a broken point must not poison the sweep
            error = f"{type(e).__name__}: {e}"
    ddt = [o.ddt_ms for o in outcomes if o.ddt_ms is not None]
    pgt = [o.pgt_ms for o in outcomes if o.pgt_ms is not None]
    ddt_wall = [o.ddt_wall_ms for o in outcomes if o.ddt_wall_ms is not None]
    pgt_wall = [o.pgt_wall_ms for o in outcomes if o.pgt_wall_ms is not None]
    proof_sizes = [o.proof_bytes for o in outcomes if o.proof_bytes and o.verdict == OutcomeKind.COMMITTED]
    block_sizes = [o.block_bytes for o in outcomes if o.block_bytes and o.verdict == OutcomeKind.COMMITTED]
    committed = sum(1 for o in outcomes if o.verdict == OutcomeKind.COMMITTED)
    rejected = sum(1 for o in outcomes if o.verdict == OutcomeKind.REJECTED)
    ddt_stats = _stats(ddt)
    wall_stats = _stats(ddt_wall) if wall_time else (None, None, None)
    return MetricRow(
        variable=spec.variable,
        value=value,
        seed=spec.base.seed,
        config_digest=spec.base.config_digest(),
        runs=len(outcomes),
        committed=committed,
        rejected=rejected,
        aborted=len(outcomes) - committed - rejected,
        ddt_mean_ms=ddt_stats[0],
        ddt_min_ms=ddt_stats[1],
        ddt_max_ms=ddt_stats[2],
        ddt_wall_mean_ms=wall_stats[0],
        ddt_wall_min_ms=wall_stats[1],
        ddt_wall_max_ms=wall_stats[2],
        pgt_mean_ms=_stats(pgt)[0],
        pgt_wall_mean_ms=_stats(pgt_wall)[0] if wall_time else None,
        proof_bytes=max(proof_sizes) if proof_sizes else None,
        block_bytes=max(block_sizes) if block_sizes else None,
        request_interval_ms=interval,
        error=error,
    )


def run_sweep(spec: SweepSpec, wall_time: bool = False) -> list[MetricRow]:
    """One aggregated row per sweep value; per-point failures stay local."""
    return [run_point(spec, value, wall_time) for value in spec.values]


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _row_dict(row: MetricRow) -> dict:
    return {name: getattr(row, name) for name in FIELD_ORDER}


def export_csv(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=FIELD_ORDER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_row_dict(row))
    return buf.getvalue()


def export_jsonl(rows: list[MetricRow]) -> str:
    return "\n".join(json.dumps(_row_dict(r), sort_keys=False) for r in rows) + "\n"


def export(rows: list[MetricRow], fmt: str, path) -> None:
    if not rows:
        raise InvalidConfig("nothing to export")
    if fmt == "csv":
        text = export_csv(rows)
    elif fmt in ("jsonl", "json-lines"):
        text = export_jsonl(rows)
    else:
        raise InvalidConfig(f"unknown export format {fmt!r}")
    with open(path, "w") as f:
        f.write(text)


def import_rows(path) -> list[MetricRow]:
    """Inverse of :func:`export`; format inferred from the content."""
    with open(path) as f:
        text = f.read()
    rows = []
    first = text.splitlines()[0] if text else ""
    if first.startswith("{"):
        for line in text.splitlines():
            if line.strip():
                rows.append(_coerce(json.loads(line)))
    else:
        for record in csv.DictReader(io.StringIO(text)):
            rows.append(_coerce(record))
    return rows


_INT_FIELDS = {"seed", "runs", "committed", "rejected", "aborted", "proof_bytes", "block_bytes"}
_STR_FIELDS = {"variable", "config_digest", "error"}


def _coerce(record: dict) -> MetricRow:
    clean = {}
    for name in FIELD_ORDER:
        raw = record.get(name)
        if raw in (None, ""):
            clean[name] = "" if name in _STR_FIELDS else None
        elif name in _STR_FIELDS:
            clean[name] = str(raw)
        elif name in _INT_FIELDS:
            clean[name] = int(float(raw))
        else:
            clean[name] = float(raw)
    return MetricRow(**clean)


# ---------------------------------------------------------------------------
# Sweep files
# ---------------------------------------------------------------------------

def load_sweep(path) -> SweepSpec:
    """Sweep file: YAML with variable / values / repetitions and either an
    inline ``base`` scenario mapping or a ``base_scenario`` file path."""
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: expected a mapping at top level")
    if "base" in raw and raw["base"] is not None:
        base = scenario_from_dict(raw["base"])
    elif "base_scenario" in raw:
        from .scenario import load_scenario

        base = load_scenario(raw["base_scenario"])
    else:
        raise InvalidConfig("sweep file needs 'base' or 'base_scenario'")
    try:
        return SweepSpec(
            variable=raw["variable"],
            values=tuple(raw["values"]),
            repetitions=int(raw.get("repetitions", 3)),
            base=base,
        )
    except KeyError as e:
        raise InvalidConfig(f"sweep file missing {e}") from None
