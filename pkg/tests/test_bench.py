"""Sweeps and metric export."""

import pytest

from locproof.bench import (
    MetricRow,
    SweepSpec,
    export,
    export_csv,
    export_jsonl,
    import_rows,
    load_sweep,
    run_sweep,
)
from locproof.errors import InvalidConfig
from locproof.scenario import baseline_scenario


def small_base(**kw):
    return baseline_scenario(
        seed=13, n_supervisors=5, n_workers=24, n_authorities=4,
        n_requests=2, request_spacing_ms=700.0, **kw
    )


def test_sweep_spec_validation():
    base = small_base()
    with pytest.raises(InvalidConfig):
        SweepSpec(variable="nonsense", values=(1,), repetitions=1, base=base)
    with pytest.raises(InvalidConfig):
        SweepSpec(variable="key_size", values=(), repetitions=1, base=base)
    with pytest.raises(InvalidConfig):
        SweepSpec(variable="key_size", values=(224,), repetitions=0, base=base)


def test_worker_sweep_sizes_constant():
    spec = SweepSpec(variable="worker_count", values=(20, 60), repetitions=2,
                     base=small_base())
    rows = run_sweep(spec)
    assert len(rows) == 2
    assert rows[0].proof_bytes == rows[1].proof_bytes
    assert rows[0].block_bytes == rows[1].block_bytes
    assert all(r.committed == r.runs for r in rows)


def test_k_sweep_grows_block_only():
    spec = SweepSpec(variable="consensus_k", values=(1, 2), repetitions=2,
                     base=small_base())
    rows = run_sweep(spec)
    assert rows[0].proof_bytes == rows[1].proof_bytes
    assert rows[1].block_bytes > rows[0].block_bytes


def test_key_size_sweep_grows_proof():
    spec = SweepSpec(variable="key_size", values=(224, 256), repetitions=1,
                     base=small_base())
    rows = run_sweep(spec)
    assert rows[1].proof_bytes > rows[0].proof_bytes
    assert rows[1].block_bytes > rows[0].block_bytes


def test_rows_are_seed_stamped():
    spec = SweepSpec(variable="worker_count", values=(20,), repetitions=1,
                     base=small_base())
    row = run_sweep(spec)[0]
    assert row.seed == 13
    assert row.config_digest == small_base().config_digest()
    assert row.runs == row.committed + row.rejected + row.aborted


def test_wall_columns_gated():
    spec = SweepSpec(variable="worker_count", values=(20,), repetitions=1,
                     base=small_base())
    cold = run_sweep(spec)[0]
    assert cold.ddt_wall_mean_ms is None
    warm = run_sweep(spec, wall_time=True)[0]
    assert warm.ddt_wall_mean_ms is not None


def test_export_csv_shape(tmp_path):
    spec = SweepSpec(variable="worker_count", values=(20, 30, 40), repetitions=1,
                     base=small_base())
    rows = run_sweep(spec)
    path = tmp_path / "rows.csv"
    export(rows, "csv", path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4  # header + 3 rows
    assert lines[0].startswith("variable,value,seed,config_digest,runs,")


def test_export_round_trip_byte_identical(tmp_path):
    spec = SweepSpec(variable="consensus_k", values=(1, 2), repetitions=1,
                     base=small_base())
    rows = run_sweep(spec)
    for fmt, name in (("csv", "a.csv"), ("jsonl", "a.jsonl")):
        first = tmp_path / name
        second = tmp_path / ("re-" + name)
        export(rows, fmt, first)
        reloaded = import_rows(first)
        export(reloaded, fmt, second)
        assert first.read_bytes() == second.read_bytes()


def test_jsonl_round_trips_to_identical_rows(tmp_path):
    spec = SweepSpec(variable="worker_count", values=(20,), repetitions=1,
                     base=small_base())
    rows = run_sweep(spec)
    path = tmp_path / "rows.jsonl"
    export(rows, "jsonl", path)
    assert import_rows(path) == rows


def test_export_empty_rejected(tmp_path):
    with pytest.raises(InvalidConfig):
        export([], "csv", tmp_path / "empty.csv")


def test_sweep_file_loading(tmp_path):
    sweep_file = tmp_path / "s.yaml"
    sweep_file.write_text(
        """
variable: consensus_k
values: [1, 2]
repetitions: 2
base:
  seed: 3
  n_supervisors: 5
  generate_workers: {mobiles: 16, authorities: 4}
  provers:
    - id: p
      x: 0.0
      y: 0.0
      requests:
        - {at_ms: 45000.0}
"""
    )
    spec = load_sweep(sweep_file)
    assert spec.variable == "consensus_k"
    assert spec.values == (1, 2)
    assert spec.base.n_supervisors == 5


def test_point_failure_is_isolated():
    # an impossible point (k too large for n) must not poison the sweep
    spec = SweepSpec(variable="consensus_k", values=(1, 99), repetitions=1,
                     base=small_base())
    rows = run_sweep(spec)
    assert rows[0].error == "" and rows[0].committed > 0
    assert rows[1].error != "" and rows[1].runs == 0
