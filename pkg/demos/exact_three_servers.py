"""Does the service discipline matter? The three-server answer.

A common intuition for redundancy systems with exponential i.i.d. replicas
is that the queue-length law should not depend on how each server orders
its work: every replica carries a memoryless size, so "who is served
first" looks like it should wash out. The smallest system that breaks this
intuition is n=3 servers with d=2 replicas per job.

This script computes the exact stationary queue-length law of that system
under PS and under FCFS by solving the two continuous-time Markov chains,
prints both rows side by side, and then cross-checks each against a short
discrete-event simulation of the same three servers. The distributions
agree to about two decimal places and differ reliably in the third: close,
but provably not equal.

Runs in well under a minute.

    python3 demos/exact_three_servers.py [--lam 0.5] [--horizon 200000]
"""

import argparse
import time

from redq import (
    ModelParams,
    SimConfig,
    fcfs_n3_stationary,
    ps_n3_stationary,
    run_replications,
)


def simulate_three(lam, discipline, horizon, seed):
    p = ModelParams(lam=lam, d=2, discipline=discipline)
    cfg = SimConfig(params=p, n=3, horizon=horizon, warmup_fraction=0.3,
                    seed=seed, replications=3)
    return run_replications(cfg)


def row(label, mean, q, upto=7):
    cells = " ".join(f"{q[x]:.5f}" for x in range(1, upto + 1))
    print(f"{label:<22} {mean:.5f}   {cells}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lam", type=float, default=0.5)
    ap.add_argument("--horizon", type=float, default=2e5)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    print(f"three servers, d=2, lam={args.lam}; exact chains vs simulation")
    print()
    header = " ".join(f"q({x})".rjust(7) for x in range(1, 8))
    print(f"{'':<22} {'mean':>7}   {header}")

    t0 = time.time()
    ps = ps_n3_stationary(args.lam, 20)
    fcfs = fcfs_n3_stationary(args.lam)
    row("PS (chain)", ps.mean, ps.q)
    row("FCFS (chain)", fcfs.mean, fcfs.q)
    print(f"  [chains solved in {time.time() - t0:.1f}s]")
    print()

    t0 = time.time()
    ps_sim = simulate_three(args.lam, "ps", args.horizon, args.seed)
    fcfs_sim = simulate_three(args.lam, "fcfs", args.horizon, args.seed + 1)
    row("PS (simulated)", ps_sim.mean, ps_sim.qdist.q)
    row("FCFS (simulated)", fcfs_sim.mean, fcfs_sim.qdist.q)
    print(f"  [simulated in {time.time() - t0:.1f}s, "
          f"ci = {ps_sim.ci_halfwidth:.5f} / {fcfs_sim.ci_halfwidth:.5f}]")
    print()

    gap = ps.mean - fcfs.mean
    print(f"exact mean gap PS - FCFS = {gap:+.5f}")
    print("the two laws agree at the first two decimals and separate at the")
    print("third: discipline does matter, even with exponential replicas.")


if __name__ == "__main__":
    main()
