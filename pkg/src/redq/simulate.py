"""Event-driven simulation of the n-server redundancy-d system.

Exact simulation of the finite system: jobs arrive at rate n*lam, get d
replicas on d distinct servers, and leave when the first replica finishes
(cancel-on-complete). With unit-mean exponential sizes every busy server
completes work at rate 1 under any of the disciplines here, so instead of
per-replica timers one global race suffices: after Exp(n*lam + B) time the
next event is an arrival w.p. n*lam/(n*lam + B), else a completion at a
uniformly random busy server. Which replica completes is a discipline
question only:

    FCFS     the head of the queue
    LCFS     the most recent arrival (preempt-resume; with exponential
             sizes resume and restart are distributionally identical)
    PS       uniform over the whole queue
    LPS(K)   uniform over the first min(K, len) in arrival order

The replica-selection draw consumes one uniform in every discipline, so
runs with the same seed are event-for-event identical whenever the selected
replicas coincide; LPS(1) therefore reproduces FCFS traces exactly and
LPS(K >= every observed queue length) reproduces PS traces exactly.

The queue-length histogram is accumulated time-weighted per server over the
post-warmup window; replications run on independent derived seeds and the
confidence interval is Student-t across replication means.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from .model import ModelParams, QueueDist, validate_params

# Hard cap on a single server's queue; at the loads this package targets
# (lam <= 0.95) lengths beyond a few dozen are astronomically rare, and the
# kernel raises rather than silently truncating.
QUEUE_CAP = 192

DISC_CODE = {"ps": 0, "fcfs": 1, "lcfs": 2, "lps": 3}


@dataclass(frozen=True)
class SimConfig:
    """One simulation setup: system parameters plus measurement window.

    horizon is simulated time; the histogram starts counting after
    warmup_fraction of it. debug turns on the end-of-run conservation
    audit (every live job has d replicas, one per distinct server)."""

    params: ModelParams
    n: int = 1000
    horizon: float = 1e5
    warmup_fraction: float = 0.3
    seed: int = 0
    replications: int = 1
    debug: bool = False


def validate_simconfig(cfg):
    validate_params(cfg.params)
    if int(cfg.n) != cfg.n or cfg.n < cfg.params.d:
        raise ValueError(
            f"n must be an integer >= d = {cfg.params.d}: {cfg.n}")
    if not cfg.horizon > 0:
        raise ValueError(f"horizon must be positive: {cfg.horizon}")
    if not 0.0 <= cfg.warmup_fraction < 1.0:
        raise ValueError(
            f"warmup_fraction must be in [0, 1): {cfg.warmup_fraction}")
    if int(cfg.replications) != cfg.replications or cfg.replications < 1:
        raise ValueError(f"replications must be >= 1: {cfg.replications}")


@dataclass
class SimStats:
    """Aggregated simulation output: the time-weighted distribution plus
    the across-replication spread. Serializes like QueueDist with
    ci_halfwidth / replications riding along in the JSON."""

    qdist: QueueDist
    rep_means: np.ndarray
    ci_halfwidth: float
    replications: int

    @property
    def mean(self):
        return self.qdist.mean

    def json_dict(self):
        return self.qdist.json_dict()

    def to_json(self, path=None):
        return self.qdist.to_json(path)

    def to_csv(self, path=None):
        return self.qdist.to_csv(path)


@njit(cache=True, nogil=True)
def _sim_kernel(n, d, lam, K, disc, horizon, t_warm, seed, hist, debug):
    np.random.seed(seed)
    cap = 8 * n + 1024  # job slots; ~5x headroom over the stationary count
    job_srv = np.empty((cap, d), np.int64)
    live = np.zeros(cap, np.uint8)
    free = np.empty(cap, np.int64)
    for i in range(cap):
        free[i] = cap - 1 - i
    free_top = cap
    queue = np.zeros((n, QUEUE_CAP), np.int64)
    qlen = np.zeros(n, np.int64)
    busy = np.empty(n, np.int64)
    busy_pos = np.full(n, -1, np.int64)
    nbusy = 0
    last_t = np.zeros(n)
    chosen = np.empty(d, np.int64)
    arr_rate = n * lam
    t = 0.0
    warmed = t_warm <= 0.0
    while True:
        rate = arr_rate + nbusy
        t += np.random.exponential() / rate
        if t >= horizon:
            break
        if not warmed and t >= t_warm:
            warmed = True
            hist[:] = 0.0
            for s in range(n):
                last_t[s] = t_warm
        if np.random.random() * rate < arr_rate:
            # arrival: a fresh job lands on d distinct servers
            if free_top == 0:
                raise RuntimeError("job table full; the system is unstable "
                                   "or the capacity heuristic is too tight")
            free_top -= 1
            j = free[free_top]
            live[j] = 1
            for k in range(d):
                while True:
                    sk = np.int64(np.random.random() * n)
                    fresh = True
                    for m in range(k):
                        if chosen[m] == sk:
                            fresh = False
                            break
                    if fresh:
                        break
                chosen[k] = sk
                job_srv[j, k] = sk
            for k in range(d):
                sk = chosen[k]
                L = qlen[sk]
                if L + 1 >= QUEUE_CAP:
                    raise RuntimeError("per-server queue exceeded QUEUE_CAP")
                hist[L] += t - last_t[sk]
                last_t[sk] = t
                queue[sk, L] = j
                qlen[sk] = L + 1
                if L == 0:
                    busy[nbusy] = sk
                    busy_pos[sk] = nbusy
                    nbusy += 1
        else:
            # completion at a uniformly random busy server
            s = busy[np.int64(np.random.random() * nbusy)]
            L = qlen[s]
            u = np.random.random()  # consumed in every discipline
            if disc == 0:
                idx = np.int64(u * L)
            elif disc == 1:
                idx = 0
            elif disc == 2:
                idx = L - 1
            else:
                w = K if K < L else L
                idx = np.int64(u * w)
            j = queue[s, idx]
            live[j] = 0
            for k in range(d):
                sk = job_srv[j, k]
                Lk = qlen[sk]
                pos = 0
                while queue[sk, pos] != j:
                    pos += 1
                hist[Lk] += t - last_t[sk]
                last_t[sk] = t
                for m in range(pos, Lk - 1):
                    queue[sk, m] = queue[sk, m + 1]
                qlen[sk] = Lk - 1
                if Lk == 1:
                    bp = busy_pos[sk]
                    nbusy -= 1
                    moved = busy[nbusy]
                    busy[bp] = moved
                    busy_pos[moved] = bp
                    busy_pos[sk] = -1
            free[free_top] = j
            free_top += 1
    if not warmed:
        hist[:] = 0.0
        for s in range(n):
            last_t[s] = t_warm
    for s in range(n):
        hist[qlen[s]] += horizon - last_t[s]
    if debug:
        total = np.int64(0)
        nlive = np.int64(0)
        for j in range(cap):
            if live[j] == 1:
                nlive += 1
                for k in range(d):
                    sk = job_srv[j, k]
                    hits = 0
                    for m in range(qlen[sk]):
                        if queue[sk, m] == j:
                            hits += 1
                    if hits != 1:
                        raise RuntimeError("conservation audit failed: a "
                                           "live job is not on its server "
                                           "exactly once")
                    for kk in range(k):
                        if job_srv[j, kk] == sk:
                            raise RuntimeError("conservation audit failed: "
                                               "replica servers not distinct")
        for s in range(n):
            total += qlen[s]
        if total != nlive * d:
            raise RuntimeError("conservation audit failed: replica count "
                               "is not d x live jobs")


def _derived_seeds(seed, replications):
    """Deterministic independent per-replication seeds."""
    return np.random.SeedSequence(seed).generate_state(
        replications, dtype=np.uint32)


def _single_run(cfg, rep_seed):
    p = cfg.params
    hist = np.zeros(QUEUE_CAP + 1)
    _sim_kernel(int(cfg.n), int(p.d), float(p.lam),
                int(p.K if p.discipline == "lps" else 1),
                DISC_CODE[p.discipline], float(cfg.horizon),
                float(cfg.horizon) * float(cfg.warmup_fraction),
                int(rep_seed), hist, cfg.debug)
    return hist


def _stats_from_hists(hists, cfg, seeds):
    hists = np.asarray(hists, dtype=float)
    qs = hists / hists.sum(axis=1, keepdims=True)
    q = qs.mean(axis=0)
    top = max(1, int(np.max(np.nonzero(q)[0])) if q.any() else 1)
    q = q[:top + 1]
    rep_means = qs @ np.arange(qs.shape[1], dtype=float)
    reps = len(rep_means)
    if reps > 1:
        ci = float(stats.t.ppf(0.975, reps - 1)
                   * rep_means.std(ddof=1) / np.sqrt(reps))
    else:
        ci = 0.0
    extra = {
        "n": int(cfg.n),
        "horizon": float(cfg.horizon),
        "warmup_fraction": float(cfg.warmup_fraction),
        "seed": int(cfg.seed),
        "replications": reps,
        "rep_seeds": [int(s) for s in seeds],
        "rep_means": [float(m) for m in rep_means],
        "ci_halfwidth": ci,
    }
    dist = QueueDist(q, params=cfg.params, converged=True, extra=extra)
    return SimStats(qdist=dist, rep_means=rep_means, ci_halfwidth=ci,
                    replications=reps)


def run_simulation(cfg, rep_seed):
    """One replication with an explicit kernel seed."""
    validate_simconfig(cfg)
    hist = _single_run(cfg, rep_seed)
    return _stats_from_hists([hist], cfg, [rep_seed])


def run_replications(cfg, threads=1):
    """All replications on seeds derived from cfg.seed, aggregated."""
    validate_simconfig(cfg)
    seeds = _derived_seeds(cfg.seed, cfg.replications)
    if threads > 1 and cfg.replications > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            hists = list(pool.map(lambda s: _single_run(cfg, s), seeds))
    else:
        hists = [_single_run(cfg, s) for s in seeds]
    return _stats_from_hists(hists, cfg, seeds)
