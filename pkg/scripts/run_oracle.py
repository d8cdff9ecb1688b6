"""Compare the simulated crash rate with the analytic binomial tail.

    python scripts/run_oracle.py [--trials N] [--seed S] [--workers W]
"""

import argparse

from iscap.sca import ScaParams, max_drive_frames
from iscap.sim import SimConfig, check_necessity, sampling_sigma, simulate
from iscap.stats import binomial_tail


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2022)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--p", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    args = ap.parse_args()

    n_max = max_drive_frames(ScaParams())
    print(f"{'p':>5s} {'crash rate':>11s} {'3 sigma':>9s} {'tail':>10s} {'MP drives':>10s} ok")
    for p in args.p:
        cfg = SimConfig(p_fna=p, trials=args.trials, seed=args.seed)
        r = simulate(cfg, workers=args.workers)
        tail = binomial_tail(n_max, r.n_crash, p)
        s3 = 3 * sampling_sigma(r.crash_rate, r.trials)
        ok = r.crash_rate <= tail + s3
        print(f"{p:5.2f} {r.crash_rate:11.5f} {s3:9.5f} {tail:10.4g} "
              f"{r.mp_satisfied_count:10d} {'yes' if ok else 'NO'}")
        nec = check_necessity(cfg, workers=args.workers)
        print(f"      necessity: {len(nec.counterexamples)} counterexamples, "
              f"fewest FNAs in a crash = {nec.min_fna_in_crash}")


if __name__ == "__main__":
    main()
