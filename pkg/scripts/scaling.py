"""Wall time of cross-validated fitting as the number of subjects grows."""

import argparse
import time

from debias.selection import SelectionConfig, cross_validate
from debias.simulate import preset, simulate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="250,500,1000,2000,4000")
    ap.add_argument("--q", type=int, default=20)
    ap.add_argument("--m", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    sizes = [int(v) for v in args.sizes.split(",")]
    base = None
    print(f"{'n':>6}{'seconds':>10}{'ratio':>8}")
    for n in sizes:
        ds, _ = simulate(preset("tads-like", seed=0, n_subjects=n, q_items=args.q, m_timepoints=args.m))
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            cross_validate(ds, SelectionConfig(mode="closest-below"))
            best = min(best, time.perf_counter() - t0)
        base = base or best
        print(f"{n:>6}{best:>10.2f}{best / base:>8.2f}")


if __name__ == "__main__":
    main()
