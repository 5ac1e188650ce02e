"""Exact stationary queue lengths for three servers with paired replicas.

With three servers and d=2 there are exactly three server pairs, so jobs
fall into three classes (class i is replicated on servers i and (i+1) mod 3,
each class arriving at rate lam). Two small chains give ground truth:

* processor sharing: the per-class replica counts (s0, s1, s2) are Markov.
  Server j holds s_{j-1} + s_j replicas and splits capacity equally, and a
  class-i job finishes when either of its two replicas does, so the class-i
  departure rate is s_i/(s_{i-1}+s_i) + s_i/(s_i+s_{i+1}).

* FCFS: replica counts are not enough, the chain needs the arrival order.
  State is the central queue of class labels (oldest first); each server
  works on the earliest job it holds a replica of, so scanning the queue
  while retiring free servers yields each job's service rate (0, 1 or 2).

Both chains are truncated (per-class cap, total-jobs cap) and the
stationary vector comes from a sparse direct solve of pi Q = 0 with the
normalization replacing one balance equation. A dense solve is out of the
question for FCFS: at the default cap of 11 jobs the chain has 265720
states. The truncation caps are high enough that the reported digits are
converged (blocking mass < 1e-9 at the loads of interest).
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix, diags, vstack
from scipy.sparse.linalg import spsolve

from .model import ModelParams, QueueDist

N_SERVERS = 3


def stationary_from_transitions(rows, cols, rates, n):
    """Stationary distribution of the CTMC with off-diagonal rates given in
    COO form. Solves G^T x = 0 with the last balance equation swapped for
    sum(x) = 1."""
    out_rate = np.bincount(rows, weights=rates, minlength=n)
    gt = csr_matrix((rates, (cols, rows)), shape=(n, n)) - diags(out_rate)
    a = vstack([gt[:-1, :], csr_matrix(np.ones((1, n)))], format="csc")
    b = np.zeros(n)
    b[-1] = 1.0
    pi = spsolve(a, b)
    # direct solve can leave harmless negative dust
    np.clip(pi, 0.0, None, out=pi)
    return pi / pi.sum()


def stationary_power(rows, cols, rates, n, x0=None, tol=1e-12,
                     max_iter=50000):
    """Stationary distribution by uniformized power iteration,
    x <- x + (G^T x)/Lam. Direct LU on the FCFS chain suffers enormous
    fill-in (minutes and gigabytes at 265720 states), while the chain mixes
    in a few hundred uniformized steps, each one a sparse mat-vec."""
    out_rate = np.bincount(rows, weights=rates, minlength=n)
    gt = csr_matrix((rates, (cols, rows)), shape=(n, n)) - diags(out_rate)
    lam_u = float(out_rate.max()) * 1.000001
    x = np.full(n, 1.0 / n) if x0 is None else x0 / x0.sum()
    for it in range(max_iter):
        dx = gt.dot(x)
        dx /= lam_u
        x += dx
        if float(np.abs(dx).sum()) < tol:
            np.clip(x, 0.0, None, out=x)
            return x / x.sum(), it + 1
    raise RuntimeError(f"power iteration did not reach {tol} in {max_iter} steps")


# ---------------------------------------------------------------------------
# processor sharing, state (s0, s1, s2)

def _ps_class_counts(Kcap):
    k1 = Kcap + 1
    s0, s1, s2 = np.meshgrid(np.arange(k1), np.arange(k1), np.arange(k1),
                             indexing="ij")
    return [s0.ravel(), s1.ravel(), s2.ravel()]


def _ps_transitions(lam, Kcap):
    """COO transition rates of the (Kcap+1)^3 replica-count chain."""
    k1 = Kcap + 1
    s = _ps_class_counts(Kcap)
    idx = (s[0] * k1 + s[1]) * k1 + s[2]
    stride = [k1 * k1, k1, 1]

    rows, cols, rates = [], [], []
    for i in range(3):
        up = s[i] < Kcap
        rows.append(idx[up])
        cols.append(idx[up] + stride[i])
        rates.append(np.full(int(up.sum()), lam))
        # server i holds classes i-1 and i; class i also sits on server i+1
        load_a = s[(i - 1) % 3] + s[i]
        load_b = s[i] + s[(i + 1) % 3]
        r = np.where(s[i] > 0,
                     s[i] / np.where(load_a > 0, load_a, 1)
                     + s[i] / np.where(load_b > 0, load_b, 1),
                     0.0)
        down = s[i] > 0
        rows.append(idx[down])
        cols.append(idx[down] - stride[i])
        rates.append(r[down])
    return (np.concatenate(rows), np.concatenate(cols),
            np.concatenate(rates), k1 ** 3)


def ps_n3_stationary(lam, Kcap=20):
    """Exact per-server queue-length distribution, three PS servers, d=2.

    Kcap bounds each class count; further arrivals to a full class are
    dropped. Returns a QueueDist over server lengths 0..2*Kcap.
    """
    rows, cols, rates, n = _ps_transitions(lam, Kcap)
    pi = stationary_from_transitions(rows, cols, rates, n)

    s = _ps_class_counts(Kcap)
    q = np.zeros(2 * Kcap + 1)
    for j in range(3):
        length = s[(j - 1) % 3] + s[j]
        q += np.bincount(length, weights=pi, minlength=2 * Kcap + 1)
    q /= 3.0

    mean_jobs = float(np.dot(pi, s[0] + s[1] + s[2]))
    params = ModelParams(lam=lam, d=2, discipline="ps", xmax=2 * Kcap)
    return QueueDist(q, params=params,
                     extra={"n_states": n, "mean_jobs": mean_jobs})


# ---------------------------------------------------------------------------
# FCFS, state = central queue of class labels, oldest first

@njit(cache=True)
def _fcfs_transitions(mcap, lam):
    offs = np.zeros(mcap + 2, np.int64)
    for m in range(mcap + 1):
        offs[m + 1] = offs[m] + 3 ** m
    n = offs[mcap + 1]
    cap = 0
    for m in range(mcap + 1):
        cap += 3 ** m * (3 + m)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    rates = np.empty(cap, np.float64)
    k = 0
    for m in range(mcap + 1):
        p3m = 3 ** m
        for code in range(p3m):
            i = offs[m] + code
            if m < mcap:
                for a in range(3):
                    rows[k] = i
                    cols[k] = offs[m + 1] + code + a * p3m
                    rates[k] = lam
                    k += 1
            # walk the queue from the head handing out free servers
            free = 7
            pw = 1
            rest = code
            for _pos in range(m):
                c = rest % 3
                rest //= 3
                served = ((1 << c) | (1 << ((c + 1) % 3))) & free
                r = (served & 1) + ((served >> 1) & 1) + ((served >> 2) & 1)
                if r > 0:
                    rows[k] = i
                    cols[k] = offs[m - 1] + code % pw + (code // (pw * 3)) * pw
                    rates[k] = float(r)
                    k += 1
                    free &= ~served
                    if free == 0:
                        break
                pw *= 3
    return rows[:k], cols[:k], rates[:k], n


@njit(cache=True)
def _fcfs_product_guess(mcap, lam):
    """Initial vector from the order-independent-queue product form,
    pi(c_1..c_m) proportional to prod_i lam / mu(c_1..c_i), where mu is the
    number of busy servers after scanning the first i jobs. Exact for the
    untruncated chain, so the power iteration only has to repair the
    blocking boundary."""
    n = (3 ** (mcap + 1) - 1) // 2
    guess = np.empty(n)
    base = 0
    for m in range(mcap + 1):
        p3m = 3 ** m
        for code in range(p3m):
            w = 1.0
            free = 7
            busy = 0
            rest = code
            for _pos in range(m):
                c = rest % 3
                rest //= 3
                served = ((1 << c) | (1 << ((c + 1) % 3))) & free
                busy += (served & 1) + ((served >> 1) & 1) + ((served >> 2) & 1)
                free &= ~served
                w *= lam / busy
            guess[base + code] = w
        base += p3m
    return guess


@njit(cache=True)
def _fcfs_histogram(mcap, pi):
    """Per-server length distribution and mean job count under pi; a job of
    class c counts toward servers c and (c+1) mod 3."""
    hist = np.zeros(mcap + 1)
    mean_jobs = 0.0
    base = 0
    for m in range(mcap + 1):
        p3m = 3 ** m
        for code in range(p3m):
            w = pi[base + code]
            lens = np.zeros(3, np.int64)
            rest = code
            for _pos in range(m):
                c = rest % 3
                rest //= 3
                lens[c] += 1
                lens[(c + 1) % 3] += 1
            for srv in range(3):
                hist[lens[srv]] += w
            mean_jobs += w * m
        base += p3m
    return hist / 3.0, mean_jobs


def fcfs_n3_chain(lam, Mcap=11):
    """Stationary law of the truncated central-queue CTMC (arrivals blocked
    once Mcap jobs are present). Kept as the dynamics-level cross-check for
    fcfs_n3_stationary: its stationary vector is the product form restricted
    to m <= Mcap, so it undershoots the exact mean by the blocked geometric
    tail (about 3e-3 at lam=0.5, Mcap=11).

    Small chains go through the direct solve; the default size (265720
    states at Mcap=11) uses power iteration started from the product-form
    guess.
    """
    if Mcap > 12:
        raise ValueError(f"Mcap={Mcap} enumerates 3^Mcap sequences; cap is 12")
    rows, cols, rates, n = _fcfs_transitions(Mcap, lam)
    extra = {"n_states": int(n)}
    if n <= 30000:
        pi = stationary_from_transitions(rows, cols, rates, n)
    else:
        pi, iters = stationary_power(rows, cols, rates, n,
                                     x0=_fcfs_product_guess(Mcap, lam))
        extra["power_iterations"] = iters
    q, mean_jobs = _fcfs_histogram(Mcap, pi)
    extra["mean_jobs"] = float(mean_jobs)
    params = ModelParams(lam=lam, d=2, discipline="fcfs", xmax=Mcap)
    return QueueDist(q, params=params, extra=extra)


def fcfs_n3_stationary(lam, Mcap=11, tail_tol=1e-16):
    """Exact per-server queue-length distribution, three FCFS servers, d=2.

    Works on the untruncated central queue via its product form: a queue
    state (c_1..c_m) has weight prod_i lam/mu(c_1..c_i), and mu depends only
    on which classes appear among the first i jobs (2 busy servers when one
    class is present, 3 for two or more). Per-server lengths depend only on
    the class counts (m0, m1, m2), whose aggregate weight N obeys

        N(M) = sum_c N(M - e_c) / mu(M),  N(empty) = 1,

    evaluated level by level until the remaining geometric tail is below
    tail_tol. Mcap only floors the number of levels and the output support;
    the answer is Mcap-insensitive by construction.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda out of range (0, 1): {lam}")
    if Mcap < 8:
        raise ValueError(f"Mcap must be >= 8, got {Mcap}")
    hist = np.zeros(2 * Mcap + 1)
    hist[0] = 3.0  # empty system: all three servers at length 0
    z = 1.0
    mean_jobs = 0.0
    prev = np.ones((1, 1))  # level m-1 array over (m0, m1); zero off-simplex
    w = lam  # lam^m
    quiet = 0
    m = 1
    while True:
        if 2 * m + 1 > len(hist):
            hist = np.concatenate([hist, np.zeros(2 * m + 1 - len(hist))])
        m0 = np.arange(m + 1)[:, None]
        m1 = np.arange(m + 1)[None, :]
        m2 = m - m0 - m1
        feas = m2 >= 0
        num = np.zeros((m + 1, m + 1))
        num[1:, :m] += prev   # last removal was a class-0 job
        num[:m, 1:] += prev   # class-1
        num[:m, :m] += prev   # class-2 (prev is zero wherever m2 would go <0)
        supp = ((m0 > 0).astype(np.int64) + (m1 > 0).astype(np.int64)
                + (feas & (m2 > 0)).astype(np.int64))
        mu = np.where(supp <= 1, 2.0, 3.0)
        cur = np.where(feas, num / mu, 0.0)
        level_mass = w * cur.sum()
        z += level_mass
        mean_jobs += m * level_mass
        # server j hosts classes j-1 and j
        for lens in (m2 + m0, m0 + m1, m1 + m2):
            np.add.at(hist, lens[feas].ravel(), w * cur[feas].ravel())
        if level_mass < tail_tol * z and m >= Mcap:
            quiet += 1
            if quiet >= 3:
                break
        else:
            quiet = 0
        if m > 5000:
            raise RuntimeError(f"product-form levels did not close by m={m}")
        prev = cur
        w *= lam
        m += 1
    q = hist / (3.0 * z)
    keep = max(Mcap, int(np.max(np.nonzero(q > 1e-15)[0]))) + 1
    params = ModelParams(lam=lam, d=2, discipline="fcfs", xmax=keep - 1)
    return QueueDist(q[:keep], params=params,
                     extra={"levels_used": m, "mean_jobs": mean_jobs / z})


def fcfs_asymptotic_mean(lam):
    """Closed-form large-system mean queue length per server under FCFS
    pairing (d=2): 2*(log(1/(1-lam)) - lam)/lam."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda out of range (0, 1): {lam}")
    return 2.0 * (np.log(1.0 / (1.0 - lam)) - lam) / lam
