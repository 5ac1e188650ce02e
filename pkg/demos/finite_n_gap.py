"""How good is the pair approximation, really? Simulation vs fixed point.

The pair fixed point is a deterministic prediction for the n -> infinity
system. Unlike classic mean-field limits it is not asymptotically exact:
simulations converge, as n grows, to a point slightly *above* the pair
mean. This script makes that visible at one load by sweeping the system
size and printing the simulated mean against the pair prediction.

At small n the gap is large and obvious (three-way and longer correlation
loops matter). By n=1000 it has shrunk to well under one percent but it
does not cross zero. At the default demo settings the n=1000 gap is about
half a CI half-width, i.e. visible but not yet resolved; rerun with
--horizon 1e5 --reps 16 (roughly 25 minutes) to separate it from noise.
The acceptance suite pins the same comparison down with 48 replications.

    python3 demos/finite_n_gap.py [--lam 0.9] [--sizes 50,200,1000]
                                  [--horizon 3e4] [--reps 4]
"""

import argparse
import time

from redq import ModelParams, SimConfig, pair_ps_fixed_point, run_replications


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lam", type=float, default=0.9)
    ap.add_argument("--sizes", default="50,200,1000")
    ap.add_argument("--horizon", type=float, default=3e4)
    ap.add_argument("--reps", type=int, default=4)
    ap.add_argument("--xmax", type=int, default=40)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    sizes = [int(tok) for tok in args.sizes.split(",")]

    p = ModelParams(lam=args.lam, d=2, discipline="ps", xmax=args.xmax)
    t0 = time.time()
    pair = pair_ps_fixed_point(p)
    print(f"pair-PS fixed point at lam={args.lam}: mean = {pair.mean:.5f} "
          f"({time.time() - t0:.0f}s)")
    print()
    print(f"{'n':>6} {'sim mean':>10} {'ci':>8} {'gap':>9} {'gap/ci':>7}")

    for n in sizes:
        cfg = SimConfig(params=p, n=n, horizon=args.horizon,
                        warmup_fraction=0.3, seed=args.seed,
                        replications=args.reps)
        st = run_replications(cfg)
        gap = st.mean - pair.mean
        ratio = gap / st.ci_halfwidth if st.ci_halfwidth > 0 else float("inf")
        print(f"{n:>6} {st.mean:>10.5f} {st.ci_halfwidth:>8.5f} "
              f"{gap:>+9.5f} {ratio:>7.1f}")

    print()
    print("the gap decays with n but settles on a small positive residue:")
    print("the pair closure is accurate yet slightly optimistic, and no")
    print("amount of servers makes the simulated mean fall to the fixed")
    print("point. That residue is the price of truncating the correlation")
    print("structure at pairs; the triplet model moves it closer to zero.")


if __name__ == "__main__":
    main()
