"""Cross-discipline comparison tables and buddy-disappearance-rate curves.

One ComparisonRow per load collects every approximation's queue-length law
(mean field, pair PS, triplet PS, the three positional pair models) plus
the FCFS heavy-load closed form and optional simulation estimates, and
reports each discipline's mean as a ratio to the pair-FCFS mean. The buddy
curves tabulate the rate at which a tagged replica's twin disappears,
either h(x) from the PS pair closure or, for the positional models, the
probability that the twin currently sits in service position 1, indexed by
the tagged replica's own position or queue length.

Everything lands in three tidy CSV schemas meant for external plotting:
compare.csv (lambda, discipline, K, mean, ratio_to_fcfs), dist.csv
(lambda, discipline, x, q) and buddy.csv (discipline, index_kind, index,
rate).
"""

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exact3 import fcfs_asymptotic_mean
from .meanfield import mf_fixed_point
from .model import ModelParams, safe_ratio, validate_params
from .ode import DivergenceError
from .pair_ps import buddy_rates, pair_ps_fixed_point
from .positional import POSITIONAL_DISCIPLINES, positional_fixed_point
from .simulate import SimConfig, run_replications
from .triplet_ps import triplet_fixed_point

_LPS_LABEL = re.compile(r"^(.*-lps)\((\d+)\)$")


def split_label(label):
    """'pair-lps(2)' -> ('pair-lps', 2); plain labels carry K=None."""
    m = _LPS_LABEL.match(label)
    if m:
        return m.group(1), int(m.group(2))
    return label, None


@dataclass
class ComparisonRow:
    """All solver outputs for one load, keyed by model label.

    Cells hold QueueDist (ODE models) or SimStats (sim-* labels); a cell
    that diverged outright is None. fcfs_asymptotic is the heavy-load
    closed-form mean, kept outside cells since it has no distribution."""

    lam: float
    cells: dict = field(default_factory=dict)
    fcfs_asymptotic: float = float("nan")

    def mean(self, label):
        cell = self.cells.get(label)
        return float("nan") if cell is None else float(cell.mean)

    def means(self):
        return {label: self.mean(label) for label in self.cells}

    def converged(self):
        out = {}
        for label, cell in self.cells.items():
            if cell is None:
                out[label] = False
            elif hasattr(cell, "qdist"):
                out[label] = bool(cell.qdist.converged)
            else:
                out[label] = bool(cell.converged)
        return out

    def ratios_to_fcfs(self):
        """Pair-family means over the pair-FCFS mean; FCFS itself is 1.0
        by construction, not by division."""
        base = self.mean("pair-fcfs")
        out = {}
        for label in self.cells:
            if not label.startswith("pair-"):
                continue
            if label == "pair-fcfs":
                out[label] = 1.0
            else:
                out[label] = float(safe_ratio(self.mean(label), base))
        return out


def _guarded(fn):
    # a cell that diverges or produces an invalid law (e.g. mean field at
    # a truncation too coarse to hold its tail) is recorded as None, it
    # does not kill the row
    try:
        return fn()
    except (DivergenceError, ValueError):
        return None


def _solve_cells(tasks, threads):
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            futs = {label: pool.submit(_guarded, fn)
                    for label, fn in tasks.items()}
            return {label: fut.result() for label, fut in futs.items()}
    return {label: _guarded(fn) for label, fn in tasks.items()}


def compare_disciplines(lambdas, K_list=(2,), xmax=0, triplet_xmax=20,
                        with_triplet=True, sim=None, cfg=None, threads=1):
    """One ComparisonRow per load in lambdas.

    K_list picks the LPS window sizes; xmax=0 leaves each model on its own
    default. The triplet solver gets its own (smaller) truncation because
    its cost grows like xmax^3 per step. sim, when given, is a dict of
    SimConfig keyword arguments (n, horizon, seed, replications, ...)
    applied to every discipline at every load; sim-lps runs once per K.
    Cells that fail to converge keep converged=False in their QueueDist;
    a solver that diverges outright leaves a None cell. Solver calls for
    one row fan out across threads, rows are assembled in order.
    """
    rows = []
    for lam in lambdas:
        validate_params(ModelParams(lam=lam))
        base = ModelParams(lam=lam, d=2, discipline="ps", xmax=xmax)
        tasks = {
            "mf": lambda p=base: mf_fixed_point(p),
            "pair-ps": lambda p=base: pair_ps_fixed_point(p, cfg),
        }
        if with_triplet:
            pt = base.with_(xmax=triplet_xmax)
            tasks["triplet-ps"] = lambda p=pt: triplet_fixed_point(p, cfg)
        tasks["pair-fcfs"] = (
            lambda p=base.with_(discipline="fcfs"):
            positional_fixed_point(p, cfg))
        for K in K_list:
            pk = base.with_(discipline="lps", K=K)
            tasks[f"pair-lps({K})"] = (
                lambda p=pk: positional_fixed_point(p, cfg))
        tasks["pair-lcfs"] = (
            lambda p=base.with_(discipline="lcfs"):
            positional_fixed_point(p, cfg))
        if sim is not None:
            sim_cells = [("sim-ps", base), ("sim-fcfs",
                                            base.with_(discipline="fcfs"))]
            sim_cells += [(f"sim-lps({K})", base.with_(discipline="lps", K=K))
                          for K in K_list]
            sim_cells.append(("sim-lcfs", base.with_(discipline="lcfs")))
            for label, p in sim_cells:
                scfg = SimConfig(params=p, **sim)
                tasks[label] = lambda c=scfg: run_replications(c)
        cells = _solve_cells(tasks, threads)
        rows.append(ComparisonRow(
            lam=lam,
            cells={label: cells[label] for label in tasks},
            fcfs_asymptotic=fcfs_asymptotic_mean(lam)))
    return rows


def buddy_rate_curve_ps(s):
    """x -> h(x) for x = 1..xmax from a PS pair state (index 0 is x=1).
    h(1) = 0: a lone job has no neighbours whose buddies could cancel."""
    return buddy_rates(s)


def buddy_rate_curves_positional(s):
    """Two curves from a positional pair state: the probability the
    tagged replica's twin sits in service position 1 of its own queue,
    indexed by the tagged replica's position (first) and by its queue
    length (second). Both are probabilities in [0, 1]; empty slices give
    0. For FCFS and LCFS position 1 serves at unit rate, so these are
    exactly the twin's disappearance rates."""
    m = s.marginals()
    twin_in_service = m.m3[:, 0, :]
    by_position = safe_ratio(twin_in_service.sum(axis=1), m.pos)
    by_queue_length = safe_ratio(twin_in_service.sum(axis=0), m.ql)
    return by_position, by_queue_length


def buddy_curves(lam, disciplines=("ps", "fcfs", "lcfs"), K=2, xmax=0,
                 cfg=None):
    """Solve each discipline's pair fixed point at one load and tabulate
    its disappearance-rate curves as rows for buddy.csv. PS contributes
    one queue_length curve (h); positional disciplines contribute a
    position curve and a queue_length curve."""
    records = []

    def emit(label, kind, values, converged):
        for i, v in enumerate(values):
            records.append({"discipline": label, "index_kind": kind,
                            "index": i + 1, "rate": float(v),
                            "converged": bool(converged)})

    for disc in disciplines:
        if disc == "ps":
            p = ModelParams(lam=lam, d=2, discipline="ps", xmax=xmax)
            qd, state = pair_ps_fixed_point(p, cfg, return_state=True)
            emit("ps", "queue_length", buddy_rate_curve_ps(state),
                 qd.converged)
        elif disc in POSITIONAL_DISCIPLINES:
            p = ModelParams(lam=lam, d=2, discipline=disc,
                            K=K if disc == "lps" else 1, xmax=xmax)
            qd, state = positional_fixed_point(p, cfg, return_state=True)
            label = f"lps({K})" if disc == "lps" else disc
            by_pos, by_ql = buddy_rate_curves_positional(state)
            emit(label, "position", by_pos, qd.converged)
            emit(label, "queue_length", by_ql, qd.converged)
        else:
            raise ValueError(f"no buddy curve for discipline {disc!r}")
    return records


def _finish(buf, path):
    if path is None:
        return buf.getvalue()
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def write_compare_csv(rows, path=None):
    """compare.csv: lambda, discipline, K, mean, ratio_to_fcfs. The ratio
    column is filled for pair-family rows only; fcfs-asymptotic gets a
    mean-only row."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["lambda", "discipline", "K", "mean", "ratio_to_fcfs"])
    for row in rows:
        ratios = row.ratios_to_fcfs()
        for label in row.cells:
            disc, K = split_label(label)
            ratio = ratios.get(label)
            w.writerow([row.lam, disc, "" if K is None else K,
                        repr(row.mean(label)),
                        "" if ratio is None else repr(ratio)])
        w.writerow([row.lam, "fcfs-asymptotic", "",
                    repr(float(row.fcfs_asymptotic)), ""])
    return _finish(buf, path)


def write_dist_csv(rows, path=None):
    """dist.csv: lambda, discipline, x, q for every cell that carries a
    distribution (simulation cells contribute their averaged law)."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["lambda", "discipline", "x", "q"])
    for row in rows:
        for label, cell in row.cells.items():
            if cell is None:
                continue
            q = cell.qdist.q if hasattr(cell, "qdist") else cell.q
            for x, v in enumerate(q):
                w.writerow([row.lam, label, x, repr(float(v))])
    return _finish(buf, path)


def write_buddy_csv(records, path=None):
    """buddy.csv: discipline, index_kind, index, rate."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["discipline", "index_kind", "index", "rate"])
    for r in records:
        w.writerow([r["discipline"], r["index_kind"], r["index"],
                    repr(float(r["rate"]))])
    return _finish(buf, path)
