"""``besteffort-bench``: run the graph-coloring benchmark and write records.

Single-process runs need no flags. A multi-process run is one OS process
per rank, all given the same ``--manifest`` and ``--procs``, each with its
own ``--rank`` (or ``BESTEFFORT_RANK`` in the environment).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .bench import BenchConfig, benchmark_run, emit_records, summarize
from .errors import BestEffortError, ConfigurationError, LoadError, UsageError
from .transport import RANK_ENV, ProcessComm, SocketTransport

log = logging.getLogger("besteffort.cli")


@dataclass(frozen=True)
class RunRole:
    rank: int = 0
    manifest: Path | None = None
    out: str | None = None
    fmt: str = "csv"

    @property
    def is_coordinator(self) -> bool:
        return self.rank == 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message)


def _parser() -> _Parser:
    p = _Parser(prog="besteffort-bench", description=__doc__.splitlines()[0])
    p.add_argument("--mode", type=int, choices=range(5), default=0, metavar="{0..4}")
    p.add_argument("--procs", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--nodes-per-cpu", type=int, default=2048)
    p.add_argument("--duration-s", type=float, default=5.0)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--colors", type=int, default=3)
    p.add_argument("--b", type=float, default=0.1)
    p.add_argument("--chunk-ms", type=float, default=10.0)
    p.add_argument("--epoch-s", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--out", default=None, help="output file; stdout if omitted")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--skew-epochs", action="store_true")
    p.add_argument("--inject-delay-ms", type=float, default=0.0)
    p.add_argument("--start-delay-s", type=float, default=1.0)
    p.add_argument("--barrier-timeout-s", type=float, default=30.0)
    p.add_argument("--quiet", action="store_true", help="skip the summary on stderr")
    return p


def parse_config(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None) -> tuple[BenchConfig, RunRole]:
    """Turn flags (plus ``BESTEFFORT_RANK``) into a config and this process's role.

    Raises:
        UsageError: unknown flags, out-of-range values, or an inconsistent
            rank/manifest/procs combination.
    """
    env = os.environ if env is None else env
    args = _parser().parse_args(argv)
    rank = args.rank
    if rank is None and env.get(RANK_ENV):
        try:
            rank = int(env[RANK_ENV])
        except ValueError:
            raise UsageError(f"{RANK_ENV}={env[RANK_ENV]!r} is not an integer") from None
    if args.manifest is None:
        if rank is not None and args.rank is not None:
            raise UsageError("--rank needs --manifest")
        if args.procs > 1:
            raise UsageError("--procs > 1 needs --manifest")
        rank = 0
    elif rank is None:
        raise UsageError("--manifest needs --rank or " + RANK_ENV)
    if not 0 <= rank < args.procs:
        raise UsageError(f"rank {rank} outside [0, {args.procs})")
    try:
        config = BenchConfig(
            mode=args.mode,
            num_procs=args.procs,
            threads_per_proc=args.threads,
            nodes_per_cpu=args.nodes_per_cpu,
            duration_s=args.duration_s,
            replicates=args.replicates,
            colors=args.colors,
            b=args.b,
            chunk_ms=args.chunk_ms,
            epoch_s=args.epoch_s,
            seed=args.seed,
            skew_epochs=args.skew_epochs,
            inject_delay_ms=args.inject_delay_ms,
            start_delay_s=args.start_delay_s,
            barrier_timeout_s=args.barrier_timeout_s,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    role = RunRole(rank, args.manifest, args.out, args.format)
    return config, role


def _print_summary(records, stream) -> None:
    for mode, entry in summarize(records).items():
        for metric, ci in entry.items():
            print(
                f"mode {mode} {metric}: mean {ci.mean:.4g} 95% CI [{ci.lower:.4g}, {ci.upper:.4g}] (n={ci.n})",
                file=stream,
            )


def main(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None) -> int:
    """Returns 0 iff every replicate completed unaborted; 2 on usage errors."""
    try:
        config, role = parse_config(argv, env)
    except UsageError as exc:
        print(f"besteffort-bench: error: {exc}", file=sys.stderr)
        return 2
    quiet = "--quiet" in (argv if argv is not None else sys.argv[1:])
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    transport = comm = None
    try:
        if role.manifest is not None:
            transport = SocketTransport.from_manifest(role.rank, role.manifest)
            if len(transport.addresses) != config.num_procs:
                raise ConfigurationError(
                    f"manifest lists {len(transport.addresses)} ranks, --procs is {config.num_procs}"
                )
            transport.listen()
            transport.connect(timeout=config.barrier_timeout_s)
            comm = ProcessComm(transport)
        records = benchmark_run(config, comm)
    except (LoadError, ConfigurationError, OSError, BestEffortError) as exc:
        print(f"besteffort-bench: rank {role.rank}: {exc}", file=sys.stderr)
        if transport is not None:
            transport.close(linger=0)
        return 1
    if transport is not None:
        transport.close()

    if not role.is_coordinator:
        return 1 if any(r.aborted for r in records) else 0
    try:
        emit_records(records, role.out, role.fmt)
    except OSError as exc:
        print(f"besteffort-bench: cannot write records: {exc}", file=sys.stderr)
        return 1
    if not quiet:
        _print_summary(records, sys.stderr)
    expected = config.cpus * config.replicates
    if len(records) != expected or any(r.aborted for r in records):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
