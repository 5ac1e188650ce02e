"""Why the mean-field model is not enough: buddy correlation curves.

Every job keeps replicas in two queues. When one replica finishes, the
other is cancelled, so from one server's point of view jobs also vanish
"for free" at a rate set by the state of the buddy's queue. The mean-field
model treats that rate as a constant; the pair models let it depend on
where the job sits.

This script solves the pair fixed points at one load and prints the
cancellation-rate curves:

* PS: the rate h(x) at which a buddy in a length-x queue disappears.
  h(1) = 0 (a lone job is being served here, its buddy finishing first is
  what h measures for the *other* queue) and h grows with x: the longer
  the local queue, the more likely the buddy wins the race.
* FCFS/LPS/LCFS: the probability that a job's buddy is currently in
  service, split by the job's position in its queue and by queue length.
  Under FCFS a job deep in the queue almost surely has its buddy already
  in service at the other server; under LCFS it is the opposite.

The curves are exactly the structure the mean-field closure throws away.
Writes the full table to buddy.csv next to the printed preview.

    python3 demos/buddy_correlation.py [--lam 0.9] [--xmax 24] [--out buddy.csv]
"""

import argparse
import time

from redq import buddy_curves, write_buddy_csv


def pick(records, label, kind):
    return [(r["index"], r["rate"]) for r in records
            if r["discipline"] == label and r["index_kind"] == kind]


def show(title, curve, upto=10):
    print(title)
    idx = "  ".join(f"{i:>7d}" for i, _ in curve[:upto])
    val = "  ".join(f"{v:7.4f}" for _, v in curve[:upto])
    print(f"  x    {idx}")
    print(f"  rate {val}")
    print()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lam", type=float, default=0.9)
    ap.add_argument("--xmax", type=int, default=24)
    ap.add_argument("--K", type=int, default=2)
    ap.add_argument("--out", default="buddy.csv")
    args = ap.parse_args()

    t0 = time.time()
    records = buddy_curves(args.lam, disciplines=("ps", "fcfs", "lcfs"),
                           K=args.K, xmax=args.xmax)
    print(f"pair fixed points at lam={args.lam}, xmax={args.xmax} "
          f"solved in {time.time() - t0:.0f}s")
    print()

    show("PS: buddy-disappearance rate h(x) by local queue length",
         pick(records, "ps", "queue_length"))
    show("FCFS: P(buddy in service) by the job's position",
         pick(records, "fcfs", "position"))
    show("FCFS: P(buddy in service) by the job's queue length",
         pick(records, "fcfs", "queue_length"))
    show("LCFS: P(buddy in service) by the job's position",
         pick(records, "lcfs", "position"))

    h = pick(records, "ps", "queue_length")
    print(f"PS h(1) = {h[0][1]:.4f} (a lone local job contributes nothing)")
    print(f"PS h({h[-1][0]}) = {h[-1][1]:.4f} near the truncation edge")
    print("a constant-rate closure cannot carry this x-dependence, which is")
    print("why the mean-field means sit below the pair means at high load.")

    write_buddy_csv(records, args.out)
    print(f"full table written to {args.out}")


if __name__ == "__main__":
    main()
