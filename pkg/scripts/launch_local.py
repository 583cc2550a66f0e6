"""Start one benchmark process per rank on this machine.

Writes a manifest with free localhost ports, launches ``--procs`` copies of
the CLI (rank 0 writes the records), and exits with the worst exit code.
Extra arguments are passed through to every rank.

Example:
    python3 scripts/launch_local.py --procs 2 -- --threads 2 --mode 3 --out records.csv
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from besteffort.transport import RANK_ENV, local_addresses, write_manifest


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--procs", type=int, default=2)
    ap.add_argument("rest", nargs=argparse.REMAINDER, help="arguments for every rank (after --)")
    args = ap.parse_args()
    rest = args.rest[1:] if args.rest[:1] == ["--"] else args.rest

    with tempfile.TemporaryDirectory() as tmp:
        manifest = Path(tmp) / "ranks.txt"
        write_manifest(manifest, local_addresses(args.procs))
        procs = []
        for rank in range(args.procs):
            env = dict(os.environ, **{RANK_ENV: str(rank)})
            own = rest if rank == 0 else _strip_out(rest)
            cmd = [sys.executable, "-m", "besteffort", "--procs", str(args.procs), "--manifest", str(manifest), *own]
            procs.append(subprocess.Popen(cmd, env=env))
        codes = [p.wait() for p in procs]
    for rank, code in enumerate(codes):
        if code:
            print(f"rank {rank} exited with {code}", file=sys.stderr)
    return max(codes)


def _strip_out(argv: list[str]) -> list[str]:
    # only rank 0 writes records
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


if __name__ == "__main__":
    sys.exit(main())
