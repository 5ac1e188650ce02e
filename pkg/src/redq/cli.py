"""Command-line front door: solvers, simulations and comparisons.

One subcommand per model plus simulate, exact3, compare and buddy. Every
run prints a one-line JSON summary {command, mean, converged, wall_time,
...} to stdout and, with --out, writes a CSV or JSON artifact; human
diagnostics go to stderr. Exit codes: 0 success, 2 bad options, 3 solver
non-convergence (artifacts are still written, marked converged false).

Options can also come from a JSON config file (--config): keys are the
long flag names with dashes turned into underscores ("lambda", "xmax",
"with_sim", ...); explicit flags win over file values. All commands are
deterministic given their options and seed, so artifact files reproduce
byte for byte.
"""

import argparse
import csv
import json
import math
import os
import sys
import time

from .analysis import (
    buddy_curves,
    compare_disciplines,
    write_buddy_csv,
    write_compare_csv,
    write_dist_csv,
)
from .exact3 import fcfs_asymptotic_mean, fcfs_n3_stationary, ps_n3_stationary
from .meanfield import mf_fixed_point
from .model import DISCIPLINES, ModelParams
from .ode import DivergenceError, IntegratorConfig
from .pair_ps import pair_ps_fixed_point
from .positional import positional_fixed_point
from .simulate import SimConfig, run_replications
from .triplet_ps import triplet_fixed_point

PAIR_COMMANDS = {"pair-fcfs": "fcfs", "pair-lps": "lps", "pair-lcfs": "lcfs"}

_CONFIG_ALIASES = {"lambda": "lam", "format": "fmt"}


class Opts:
    """Flag values with config-file fallback. A flag left at its argparse
    default (None) falls back to the config file, then to the caller's
    default; 0 and False are honest values, only None falls through."""

    def __init__(self, args, config):
        self.args = vars(args)
        self.config = config

    def get(self, name, default=None, cast=None):
        v = self.args.get(name)
        if v is None:
            v = self.config.get(name)
        if v is None:
            return default
        return cast(v) if cast is not None else v


def _load_config(path):
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    out = {}
    for k, v in raw.items():
        k = k.replace("-", "_")
        out[_CONFIG_ALIASES.get(k, k)] = v
    return out


def _require_lam(opts):
    lam = opts.get("lam", cast=float)
    if lam is None:
        raise ValueError("--lambda is required (flag or config file)")
    return lam


def _integrator_cfg(opts, default_dt):
    """None (model picks its own stable defaults) unless the user set any
    of --dt/--tol/--tmax; a partial override fills the gaps with default_dt
    and the package-wide tol/tmax defaults."""
    dt = opts.get("dt", cast=float)
    tol = opts.get("tol", cast=float)
    tmax = opts.get("tmax", cast=float)
    if dt is None and tol is None and tmax is None:
        return None
    kw = {}
    if dt is not None:
        kw["dt"] = dt
    elif default_dt is not None:
        kw["dt"] = default_dt
    if tol is not None:
        kw["tol"] = tol
    if tmax is not None:
        kw["t_max"] = tmax
    return IntegratorConfig(**kw)


def _pick_fmt(opts, out, default="json"):
    fmt = opts.get("fmt")
    if fmt is not None:
        return fmt
    if out:
        if out.endswith(".json"):
            return "json"
        if out.endswith(".csv"):
            return "csv"
    return default


def _write_dist(dist, out, fmt):
    """QueueDist or SimStats to a file; a non-converged CSV gets a leading
    comment marker since the x,q schema has no column for the flag."""
    if fmt == "json":
        dist.to_json(out)
        return
    text = dist.to_csv()
    converged = dist.qdist.converged if hasattr(dist, "qdist") \
        else dist.converged
    if not converged:
        text = "# converged: false\n" + text
    with open(out, "w", newline="") as f:
        f.write(text)


def _cmd_solver(cmd, opts):
    lam = _require_lam(opts)
    d = opts.get("d", 2, int)
    xmax = opts.get("xmax", 0, int)
    if cmd == "mf":
        p = ModelParams(lam=lam, d=d, xmax=xmax)
        dist = mf_fixed_point(p)
    elif cmd == "pair-ps":
        p = ModelParams(lam=lam, d=d, xmax=xmax)
        dist = pair_ps_fixed_point(
            p, _integrator_cfg(opts, 0.05 if d == 2 else 0.005))
    elif cmd == "triplet-ps":
        # own truncation default: the triplet state is xmax^3 and the
        # package-wide 50 is far past its practical range
        p = ModelParams(lam=lam, d=d, xmax=xmax if xmax else 30)
        bound = 6.0 * lam + 3.0 + 3.0 * (p.xmax - 1.0)
        dist = triplet_fixed_point(
            p, _integrator_cfg(opts, min(0.05, 1.6 / bound)))
    else:
        disc = PAIR_COMMANDS[cmd]
        K = opts.get("K", 2, int) if disc == "lps" else 1
        p = ModelParams(lam=lam, d=d, discipline=disc, K=K, xmax=xmax)
        bound = 4.0 * lam + 2.0 + 2.0 * p.xmax
        dist = positional_fixed_point(
            p, _integrator_cfg(opts, min(0.05, 1.6 / bound)))
    out = opts.get("out")
    if out:
        _write_dist(dist, out, _pick_fmt(opts, out, default="csv"))
    extras = {"lambda": lam, "xmax": p.xmax}
    if out:
        extras["out"] = out
    return float(dist.mean), bool(dist.converged), extras, \
        0 if dist.converged else 3


def _cmd_simulate(cmd, opts):
    lam = _require_lam(opts)
    disc = opts.get("discipline", "ps")
    if disc not in DISCIPLINES:
        raise ValueError(f"unknown discipline {disc!r}")
    p = ModelParams(lam=lam, d=opts.get("d", 2, int), discipline=disc,
                    K=opts.get("K", 2, int) if disc == "lps" else 1)
    cfg = SimConfig(params=p,
                    n=opts.get("n", 1000, int),
                    horizon=opts.get("horizon", 1e5, float),
                    warmup_fraction=opts.get("warmup", 0.3, float),
                    seed=opts.get("seed", 0, int),
                    replications=opts.get("reps", 1, int))
    st = run_replications(cfg, threads=opts.get("threads", 1, int))
    out = opts.get("out")
    if out:
        _write_dist(st, out, _pick_fmt(opts, out, default="csv"))
    extras = {"lambda": lam, "discipline": disc, "n": cfg.n,
              "replications": cfg.replications,
              "ci_halfwidth": st.ci_halfwidth}
    if out:
        extras["out"] = out
    return float(st.mean), True, extras, 0


def _cmd_exact3(cmd, opts):
    lam = _require_lam(opts)
    ps = ps_n3_stationary(lam)
    fcfs = fcfs_n3_stationary(lam)
    blob = {
        "lambda": lam,
        "ps_mean": ps.mean,
        "fcfs_mean": fcfs.mean,
        "fcfs_asymptotic_mean": fcfs_asymptotic_mean(lam),
        "ps_q": [float(v) for v in ps.q],
        "fcfs_q": [float(v) for v in fcfs.q],
    }
    out = opts.get("out")
    if out:
        if _pick_fmt(opts, out) == "json":
            with open(out, "w") as f:
                json.dump(blob, f, indent=1)
                f.write("\n")
        else:
            with open(out, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["discipline", "x", "q"])
                for label, dist in (("ps", ps), ("fcfs", fcfs)):
                    for x, v in enumerate(dist.q):
                        w.writerow([label, x, repr(float(v))])
    extras = {"lambda": lam, "ps_mean": ps.mean, "fcfs_mean": fcfs.mean,
              "fcfs_asymptotic_mean": blob["fcfs_asymptotic_mean"]}
    if out:
        extras["out"] = out
    return ps.mean, True, extras, 0


def _parse_lambdas(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _json_safe(d):
    """NaN (a failed cell's mean) has no strict-JSON spelling; use null."""
    return {k: (v if v is None or math.isfinite(v) else None)
            for k, v in d.items()}


def _cmd_compare(cmd, opts):
    lams = _parse_lambdas(opts.get("lambdas", "0.5,0.7,0.9"))
    K = opts.get("K", 2, int)
    sim = None
    if opts.get("with_sim", False, bool):
        sim = dict(n=opts.get("n", 1000, int),
                   horizon=opts.get("horizon", 1e5, float),
                   warmup_fraction=opts.get("warmup", 0.3, float),
                   seed=opts.get("seed", 0, int),
                   replications=opts.get("reps", 1, int))
    rows = compare_disciplines(
        lams, K_list=(K,),
        # positional models cost ~xmax^5 per solve, so the comparison
        # front end trims the shared default to keep a full sweep in
        # minutes; --xmax restores any truncation
        xmax=opts.get("xmax", 30, int),
        triplet_xmax=opts.get("triplet_xmax", 20, int),
        sim=sim, cfg=_integrator_cfg(opts, None),
        threads=opts.get("threads", 1, int))
    out = opts.get("out")
    if out:
        if out.endswith(".json"):
            blob = [{
                "lambda": r.lam,
                "fcfs_asymptotic": r.fcfs_asymptotic,
                "means": _json_safe(r.means()),
                "ratios_to_fcfs": _json_safe(r.ratios_to_fcfs()),
                "converged": r.converged(),
            } for r in rows]
            with open(out, "w") as f:
                json.dump(blob, f, indent=1)
                f.write("\n")
        else:
            os.makedirs(out, exist_ok=True)
            write_compare_csv(rows, os.path.join(out, "compare.csv"))
            write_dist_csv(rows, os.path.join(out, "dist.csv"))
    converged = all(all(r.converged().values()) for r in rows)
    extras = {"lambdas": lams,
              "means": {f"{r.lam:g}": _json_safe(r.means()) for r in rows}}
    if out:
        extras["out"] = out
    return None, converged, extras, 0 if converged else 3


def _cmd_buddy(cmd, opts):
    lam = _require_lam(opts)
    discs = opts.get("disciplines", "ps,fcfs,lcfs")
    if isinstance(discs, str):
        discs = tuple(s.strip() for s in discs.split(",") if s.strip())
    records = buddy_curves(
        lam, disciplines=discs, K=opts.get("K", 2, int),
        xmax=opts.get("xmax", 30, int), cfg=_integrator_cfg(opts, None))
    out = opts.get("out")
    if out:
        if _pick_fmt(opts, out, default="csv") == "json":
            with open(out, "w") as f:
                json.dump(records, f, indent=1)
                f.write("\n")
        else:
            write_buddy_csv(records, out)
    converged = all(r["converged"] for r in records)
    extras = {"lambda": lam, "disciplines": list(discs)}
    if out:
        extras["out"] = out
    return None, converged, extras, 0 if converged else 3


COMMANDS = {
    "mf": _cmd_solver,
    "pair-ps": _cmd_solver,
    "triplet-ps": _cmd_solver,
    "pair-fcfs": _cmd_solver,
    "pair-lps": _cmd_solver,
    "pair-lcfs": _cmd_solver,
    "simulate": _cmd_simulate,
    "exact3": _cmd_exact3,
    "compare": _cmd_compare,
    "buddy": _cmd_buddy,
}


def _add_shared(sp):
    sp.add_argument("--lambda", dest="lam", type=float,
                    help="arrival rate per server, in (0, 1)")
    sp.add_argument("--d", type=int, help="replication factor (default 2)")
    sp.add_argument("--K", type=int,
                    help="LPS service window (default 2 where it applies)")
    sp.add_argument("--xmax", type=int,
                    help="queue-length truncation (default: per model)")
    sp.add_argument("--dt", type=float,
                    help="Euler step (default: per-model stability bound)")
    sp.add_argument("--tol", type=float,
                    help="fixed-point residual tolerance (default 1e-10)")
    sp.add_argument("--tmax", type=float,
                    help="integration horizon before giving up "
                         "(default 1e4)")
    sp.add_argument("--out", help="artifact path; compare treats a "
                                  "non-.json value as a directory")
    sp.add_argument("--format", dest="fmt", choices=("csv", "json"),
                    help="artifact format (default: from --out suffix)")
    sp.add_argument("--threads", type=int,
                    help="worker threads for simulate/compare (default 1)")
    sp.add_argument("--config",
                    help="JSON file of option defaults; keys are flag "
                         "names with '_' for '-' (lambda, xmax, with_sim, "
                         "...); explicit flags override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="redq",
        description="Queue-length laws for redundancy-d systems: ODE "
                    "approximations, exact small systems, event simulation "
                    "and cross-discipline comparisons.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "mf": "mean-field fixed point (PS, any d)",
        "pair-ps": "PS pair approximation fixed point",
        "triplet-ps": "PS triplet approximation fixed point (d=2)",
        "pair-fcfs": "FCFS positional pair approximation (d=2)",
        "pair-lps": "LPS(K) positional pair approximation (d=2)",
        "pair-lcfs": "LCFS positional pair approximation (d=2)",
        "simulate": "event-driven simulation of the finite system",
        "exact3": "exact three-server stationary laws (PS and FCFS)",
        "compare": "all approximations (and optional simulation) per load",
        "buddy": "twin-replica disappearance-rate curves",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        _add_shared(sp)
        if name == "simulate":
            sp.add_argument("--discipline", choices=DISCIPLINES,
                            help="service discipline (default ps)")
        if name in ("simulate", "compare"):
            sp.add_argument("--n", type=int,
                            help="number of servers (default 1000)")
            sp.add_argument("--horizon", type=float,
                            help="simulated time span (default 1e5)")
            sp.add_argument("--warmup", type=float,
                            help="fraction of the horizon discarded "
                                 "(default 0.3)")
            sp.add_argument("--seed", type=int,
                            help="master RNG seed (default 0)")
            sp.add_argument("--reps", type=int,
                            help="independent replications (default 1)")
        if name == "compare":
            sp.add_argument("--lambdas",
                            help="comma-separated loads "
                                 "(default 0.5,0.7,0.9)")
            sp.add_argument("--with-sim", dest="with_sim",
                            action="store_true", default=None,
                            help="add simulation columns (uses --n, "
                                 "--horizon, --seed, --reps)")
            sp.add_argument("--triplet-xmax", dest="triplet_xmax", type=int,
                            help="triplet truncation (default 20)")
        if name == "buddy":
            sp.add_argument("--disciplines",
                            help="comma-separated subset of ps,fcfs,lcfs,"
                                 "lps (default ps,fcfs,lcfs)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        config = _load_config(args.config) if args.config else {}
        opts = Opts(args, config)
        mean, converged, extras, code = COMMANDS[args.command](args.command,
                                                               opts)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"solver diverged: {e}", file=sys.stderr)
        return 3
    summary = {"command": args.command,
               "mean": None if mean is None else float(mean),
               "converged": bool(converged),
               "wall_time": round(time.perf_counter() - t0, 3)}
    summary.update(extras)
    print(json.dumps(summary))
    if not converged:
        print("warning: not converged within tmax; artifacts carry "
              "converged=false", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
