"""Command-line entry point.

Subcommands:

* ``run <scenario.yaml>``: run one scenario, print per-instance outcome
  rows; ``--dump-dir`` persists the ledgers, key directory, committed
  proofs, and the event trace for later verification or auditing.
* ``sweep <sweep.yaml>``: run a parameter sweep, emit metric rows.
* ``verify <proof-file> <chain-dir>``: third-party check of a stored proof
  against persisted ledgers (exit 2 when invalid).
* ``audit <chain-file>``: recompute a persisted chain's hash links (exit 2
  when broken).

Exit codes: 0 success, 1 scenario error, 2 verification/audit failure,
64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import bench, ledger
from .codec import DecodeError, decode
from .crypto import KeyDirectory
from .errors import ChainFileCorrupt, ProtocolError
from .messages import FinalizedProof
from .scenario import load_scenario
from .sim import OutcomeKind, build_world, run as run_world

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="locproof", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario", help="scenario YAML file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="write rows here instead of stdout")
    p_run.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    p_run.add_argument("--wall-time", action="store_true",
                       help="include host wall-clock timing columns")
    p_run.add_argument("--dump-dir", default=None,
                       help="persist chains, key directory, proofs, and trace")

    p_sweep = sub.add_parser("sweep", help="run a sweep file")
    p_sweep.add_argument("sweep", help="sweep YAML file")
    p_sweep.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_sweep.add_argument("--wall-time", action="store_true")

    p_verify = sub.add_parser("verify", help="verify a stored proof against chains")
    p_verify.add_argument("proof", help="hex proof file")
    p_verify.add_argument("chain_dir", help="directory with persisted chains")

    p_audit = sub.add_parser("audit", help="audit a persisted chain file")
    p_audit.add_argument("chain", help="chain file")
    return parser


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _outcome_text(outcomes, fmt: str, wall: bool) -> str:
    rows = [o.row(wall=wall) for o in outcomes]
    if fmt == "jsonl":
        return "\n".join(json.dumps(r, sort_keys=False) for r in rows) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()) if rows else [],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _dump_world(world, outcomes, dump_dir: Path, fmt: str, wall: bool) -> None:
    dump_dir.mkdir(parents=True, exist_ok=True)
    node = world.supervisors[0].node
    ledger.save_decision_chain(node.decisions, dump_dir / "decisions.chain")
    ledger.save_provenance_chain(node.provenance, dump_dir / "provenance.chain")
    lines = []
    for entity in sorted(world.directory._keys):
        role = "supervisor" if world.directory.is_supervisor(entity) else "worker"
        lines.append(f"{entity} {world.directory.public_der(entity).hex()} {role}")
    (dump_dir / "directory.txt").write_text("\n".join(lines) + "\n")
    (dump_dir / "policy.json").write_text(
        json.dumps(
            {
                "assertion_window_ms": world.policy.assertion_window_ms,
                "skew_ms": world.policy.skew_ms,
                "n_supervisors": world.config.n_supervisors,
            },
            indent=2,
        )
        + "\n"
    )
    proof_dir = dump_dir / "proofs"
    proof_dir.mkdir(exist_ok=True)
    for tracker in world.trackers.values():
        if tracker.final is not None and tracker.outcome is not None \
                and tracker.outcome.verdict == OutcomeKind.COMMITTED:
            from .messages import canonical_encode

            (proof_dir / f"{tracker.instance}.proof").write_text(
                canonical_encode(tracker.final).hex() + "\n"
            )
    (dump_dir / "trace.jsonl").write_text(world.trace_jsonl() + "\n")
    (dump_dir / f"outcomes.{fmt}").write_text(_outcome_text(outcomes, fmt, wall))


def _cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.scenario)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
        world = build_world(cfg)
        outcomes = run_world(world)
    except (ProtocolError, OSError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    text = _outcome_text(outcomes, args.format, args.wall_time)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.dump_dir:
        _dump_world(world, outcomes, Path(args.dump_dir), args.format, args.wall_time)
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _cmd_sweep(args) -> int:
    try:
        spec = bench.load_sweep(args.sweep)
        if args.seed is not None:
            from dataclasses import replace

            spec = replace(spec, base=replace(spec.base, seed=args.seed))
        rows = bench.run_sweep(spec, wall_time=args.wall_time)
    except (ProtocolError, OSError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    fmt = "jsonl" if args.format == "jsonl" else "csv"
    text = bench.export_jsonl(rows) if fmt == "jsonl" else bench.export_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# verify / audit
# ---------------------------------------------------------------------------

def _load_directory(path: Path) -> KeyDirectory:
    directory = KeyDirectory()
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        entity, der_hex, role = line.split()
        directory.register(entity, bytes.fromhex(der_hex), supervisor=role == "supervisor")
    return directory


def _cmd_verify(args) -> int:
    chain_dir = Path(args.chain_dir)
    try:
        raw = bytes.fromhex(Path(args.proof).read_text().strip())
        final = decode(FinalizedProof, raw)
    except (OSError, ValueError, DecodeError) as e:
        print(f"verification failed: unreadable proof ({e})", file=sys.stderr)
        return 2
    try:
        decisions = ledger.load_decision_chain(chain_dir / "decisions.chain")
        provenance = ledger.load_provenance_chain(chain_dir / "provenance.chain")
        directory = _load_directory(chain_dir / "directory.txt")
        meta = json.loads((chain_dir / "policy.json").read_text())
    except (OSError, ValueError, ChainFileCorrupt) as e:
        print(f"scenario error: cannot load chains ({e})", file=sys.stderr)
        return 1
    policy = ledger.LedgerPolicy(
        assertion_window_ms=meta["assertion_window_ms"], skew_ms=meta["skew_ms"]
    )
    verdict = ledger.verify_third_party(final, decisions, provenance, directory, policy)
    if verdict.valid:
        print("valid")
        return 0
    print(f"invalid: {verdict.reason.value} ({verdict.detail})")
    return 2


def _cmd_audit(args) -> int:
    path = Path(args.chain)
    try:
        header = path.read_text().splitlines()[0] if path.read_text() else ""
    except OSError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    try:
        if "provenance" in header:
            chain = ledger.load_provenance_chain(path)
            kind = "provenance"
        else:
            chain = ledger.load_decision_chain(path)
            kind = "decision"
    except ChainFileCorrupt as e:
        print(f"audit failed: undecodable entry at position {e.position}")
        return 2
    broken = chain.audit()
    if broken is None:
        print(f"audit pass ({kind} chain, {len(chain)} entries)")
        return 0
    print(f"audit failed: first broken link at position {broken}")
    return 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "verify": _cmd_verify,
        "audit": _cmd_audit,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
