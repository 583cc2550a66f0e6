"""Standalone reference simulation of decentralized torus coloring.

Independent of the package: plain lists and ``random.Random``. Used to
decide whether a single-cpu, barrier-every-update run can be expected to
reach zero conflicts within a given number of sweeps.

Variants:
    full     penalize the conflicting color by b, redistribute its mass
             proportionally, redraw from the whole updated vector
    exclude  same update, but the redraw excludes the current color
    lockin   classic learning-automaton update (conflicting color scaled
             by 1 - b, b/(C-1) added to the others) and, on a conflict-free
             update, the node locks onto its current color

Example:
    python3 scripts/reference_convergence.py --sweeps 3000 --seeds 5
"""

from __future__ import annotations

import argparse
import random
import time


def torus(w: int, h: int) -> list[list[int]]:
    return [
        sorted({y * w + (x + 1) % w, y * w + (x - 1) % w, ((y + 1) % h) * w + x, ((y - 1) % h) * w + x})
        for y in range(h)
        for x in range(w)
    ]


def conflicts(nb: list[list[int]], col: list[int]) -> int:
    return sum(col[i] == col[j] for i in range(len(nb)) for j in nb[i] if i < j)


def penalize(p: list[float], c: int, b: float) -> list[float]:
    pc = p[c]
    if pc >= 1 - 1e-12:
        return [1 / len(p)] * len(p)
    f = (1 - b * pc) / (1 - pc)
    return [b * pc if k == c else p[k] * f for k in range(len(p))]


def draw(rng: random.Random, weights: list[float]) -> int:
    u = rng.random() * sum(weights)
    acc = 0.0
    for k, w in enumerate(weights):
        acc += w
        if u < acc:
            return k
    return len(weights) - 1


def simulate(seed: int, variant: str, w: int, h: int, colors: int, b: float, sweeps: int) -> tuple[int | None, int]:
    """Returns (sweep at which conflicts hit 0 or None, final conflict count)."""
    rng = random.Random(seed)
    nb = torus(w, h)
    n = w * h
    col = [rng.randrange(colors) for _ in range(n)]
    prob = [[1 / colors] * colors for _ in range(n)]
    for sweep in range(sweeps):
        c = conflicts(nb, col)
        if c == 0:
            return sweep, 0
        for i in range(n):
            ci = col[i]
            if any(col[j] == ci for j in nb[i]):
                if variant == "lockin":
                    prob[i] = [(1 - b) * p + (0 if k == ci else b / (colors - 1)) for k, p in enumerate(prob[i])]
                    col[i] = draw(rng, prob[i])
                else:
                    prob[i] = penalize(prob[i], ci, b)
                    weights = [0.0 if variant == "exclude" and k == ci else p for k, p in enumerate(prob[i])]
                    col[i] = draw(rng, weights)
            elif variant == "lockin":
                prob[i] = [1.0 if k == ci else 0.0 for k in range(colors)]
    c = conflicts(nb, col)
    return (sweeps if c == 0 else None), c


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", nargs="+", default=["full", "exclude", "lockin"])
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--height", type=int, default=16)
    ap.add_argument("--colors", type=int, default=3)
    ap.add_argument("--b", type=float, default=0.1)
    ap.add_argument("--sweeps", type=int, default=3000)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    for v in args.variants:
        t0 = time.perf_counter()
        results = [simulate(s, v, args.width, args.height, args.colors, args.b, args.sweeps) for s in range(args.seeds)]
        solved = sum(r[0] is not None for r in results)
        print(f"{v:8s} solved {solved}/{args.seeds}  (sweep, final conflicts): {results}  [{time.perf_counter() - t0:.0f} s]")


if __name__ == "__main__":
    main()
