"""Update rate per asynchronicity mode under injected worker stalls.

Runs the benchmark CLI once per mode and prints the bootstrapped 95% CI
of the per-replicate mean update rate, plus each mode's speedup over mode 0.

Example:
    python3 scripts/sync_cost.py --modes 0 1 2 3 4 --threads 4 --delay-ms 5
"""

from __future__ import annotations

import argparse
import statistics
import subprocess
import sys
import tempfile
from pathlib import Path

from besteffort.bench import read_records
from besteffort.stats import bootstrap_ci


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", nargs="+", type=int, default=[0, 3])
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--delay-ms", type=float, default=5.0)
    ap.add_argument("--nodes-per-cpu", type=int, default=16)
    ap.add_argument("--duration-s", type=float, default=5.0)
    ap.add_argument("--replicates", type=int, default=5)
    args = ap.parse_args()

    means = {}
    with tempfile.TemporaryDirectory() as tmp:
        for mode in args.modes:
            out = Path(tmp) / f"mode{mode}.json"
            cmd = [
                sys.executable, "-m", "besteffort", "--mode", str(mode), "--threads", str(args.threads),
                "--inject-delay-ms", str(args.delay_ms), "--nodes-per-cpu", str(args.nodes_per_cpu),
                "--duration-s", str(args.duration_s), "--replicates", str(args.replicates),
                "--format", "json", "--out", str(out), "--quiet",
            ]
            subprocess.run(cmd, check=True)
            recs = read_records(out, "json")
            per_rep = [
                statistics.fmean(r.update_rate for r in recs if r.replicate == k)
                for k in range(args.replicates)
            ]
            ci = bootstrap_ci(per_rep, metric="update_rate")
            means[mode] = ci.mean
            speedup = f"{ci.mean / means[args.modes[0]]:.2f}x" if args.modes else ""
            print(f"mode {mode}: {ci.mean:8.1f} updates/s  95% CI [{ci.lower:.1f}, {ci.upper:.1f}]  {speedup}")


if __name__ == "__main__":
    main()
