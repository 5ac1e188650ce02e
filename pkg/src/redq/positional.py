"""Pair approximations that track replica positions: FCFS, LPS(K), LCFS.

Under PS the queue length alone fixes every replica's service rate, so the
pair state pi(x, y) closes the dynamics. Under FCFS, LPS(K) and LCFS it
matters where a replica sits: only replicas in service can complete, and a
replica's progress depends on how fast the jobs ahead of it (behind it, for
LCFS) disappear. The state is a four-index count v(x1, y1, x2, y2): jobs
with one replica at position x1 of a length-x2 queue and the other replica
at position y1 of a length-y2 queue, counted symmetrically like the PS pair
state (total mass = qbar/2).

Position conventions:

* FCFS:   position 1 is the head of the queue (the replica in service),
          so x1 <= x2.
* LCFS:   position 1 is the back of the queue, which is the replica in
          service; still x1 <= x2.
* LPS(K): the K oldest replicas share the server. x1 == 1 means "in
          service" (any of the first K slots); x1 = j > 1 means the replica
          waits in slot K + j - 1, so x1 <= max(1, x2 - K + 1).

The closure: the rate at which a neighbouring job's buddy completes is
estimated from the type counts alone. The chance that the buddy of a
replica in slot x' of a length-x2 queue is itself in service is read off
the population marginals, v(x', 1, x2)/v(x', x2); summing these over the
slots ahead of the tagged replica gives the cancellation pressure it feels
(kappa for FCFS/LCFS; for LPS each in-service buddy works at PS speed
1/min(K, y'), giving the r/psi tables). All three disciplines then share
one gather engine over (creation, arrival shifts, service shifts,
buddy-cancellation shifts); they differ only in the creation slot, whether
arrivals shift positions (LCFS only), and the rate tables.

Note on LCFS arrivals: both arrival in-flow terms carry rate 2*lam. Each
of the job's two servers sees outside arrivals at rate 2*lam, and any
other coefficient breaks the mean balance dqbar/dt = 2*lam - 2*(1 - q(0))
and with it the fixed-point anchor q(0) = 1 - lam (a bare "2" on the first
of the two terms is a typo-level variant; see the README notes on
reference-value deviations).
"""

from __future__ import annotations

import csv
import io

import numpy as np
from numba import njit

from .model import EPS_DIV, qdist_from_tail, safe_ratio, validate_params
from .ode import IntegratorConfig, OdeSystem, solve_fixed_point

POSITIONAL_DISCIPLINES = ("fcfs", "lps", "lcfs")


def _position_top(xmax, discipline, K):
    """Largest feasible x1 per queue length x2 = 1..xmax (1-based values)."""
    x2 = np.arange(1, xmax + 1)
    if discipline == "lps":
        return np.maximum(1, x2 - K + 1)
    return x2


def _creation_slot(xmax, discipline, K):
    """Position index (0-based) where a newly created job lands, per x2."""
    if discipline == "lcfs":
        return np.zeros(xmax, dtype=np.int64)
    if discipline == "lps":
        # 1 + [x2 - K]^+ in 1-based terms: the back of the queue, which is
        # slot 1 while the queue still has free service slots
        return np.maximum(0, np.arange(1, xmax + 1) - K).astype(np.int64)
    return np.arange(xmax, dtype=np.int64)  # fcfs: the back is position x2


class PositionalState:
    """Four-index type counts v[x1-1, y1-1, x2-1, y2-1] (stored 0-based).

    Dense over the rectangle; entries outside the discipline's feasibility
    mask are identically zero (the engine never writes there)."""

    def __init__(self, v, discipline, K=1):
        self.v = np.asarray(v, dtype=float)
        if self.v.ndim != 4 or len(set(self.v.shape)) != 1:
            raise ValueError(f"state tensor must be (X,X,X,X), got {self.v.shape}")
        if discipline not in POSITIONAL_DISCIPLINES:
            raise ValueError(
                f"discipline must be one of {POSITIONAL_DISCIPLINES}: {discipline!r}")
        if int(K) != K or K < 1:
            raise ValueError(f"K must be an integer >= 1: {K}")
        self.discipline = discipline
        self.K = int(K)

    @classmethod
    def empty(cls, xmax, discipline, K=1):
        return cls(np.zeros((xmax,) * 4), discipline, K)

    @property
    def xmax(self):
        return self.v.shape[0]

    @property
    def max_swap_asymmetry(self):
        """Largest violation of v(x1,y1,x2,y2) = v(y1,x1,y2,x2)."""
        return float(np.max(np.abs(self.v - self.v.transpose(1, 0, 3, 2))))

    def swapped(self):
        """The same state with the two replicas relabelled."""
        return PositionalState(self.v.transpose(1, 0, 3, 2).copy(),
                               self.discipline, self.K)

    def position_top(self):
        """Largest feasible position per queue length (1-based)."""
        return _position_top(self.xmax, self.discipline, self.K)

    def mask(self):
        """Boolean feasibility mask; product of the two per-side masks."""
        ub = self.position_top()[None, :]  # 1-based top per x2
        pos = np.arange(1, self.xmax + 1)[:, None]
        side = pos <= ub
        return side[:, None, :, None] & side[None, :, None, :]

    def off_mask_mass(self):
        m = self.mask()
        if m.all():
            return 0.0
        return float(np.max(np.abs(self.v[~m])))

    def marginals(self):
        return PositionalMarginals(self.v)

    def q_tail(self):
        return self.marginals().q_tail()

    def q_full(self):
        t = self.q_tail()
        return np.concatenate([[1.0 - t.sum()], t])

    @property
    def qbar(self):
        return 2.0 * float(self.v.sum())

    def to_csv(self, path=None, min_value=0.0):
        """Rows x1,y1,x2,y2,value for entries with |value| > min_value."""
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["x1", "y1", "x2", "y2", "value"])
        for i1, j1, i2, j2 in np.argwhere(np.abs(self.v) > min_value):
            w.writerow([i1 + 1, j1 + 1, i2 + 1, j2 + 1,
                        repr(float(self.v[i1, j1, i2, j2]))])
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="") as f:
            f.write(buf.getvalue())


class PositionalMarginals:
    """Marginals of the 4-index state used by the closures and reporting.

    m3(x1, y1, x2) drops the buddy's queue length; m2(x1, x2) is one
    replica's own view; pos(x1) and ql(x2) are its 1-index collapses. The
    queue-length law is q(x) = 2*ql(x)/x (a length-x server carries x
    replica slots and each slot is one end of some pair, counted with
    weight 1/2). For FCFS/LCFS every queue fills positions 1..x2 exactly
    once, so the same law is the position-count difference
    q(x) = 2*(pos(x) - pos(x+1)); LPS lumps the K service slots into
    position 1, and there the difference form instead returns q(K + x - 1)
    for x >= 2."""

    def __init__(self, v):
        v = np.asarray(v, dtype=float)
        self.m3 = v.sum(axis=3)
        self.m2 = self.m3.sum(axis=1)
        self.pos = self.m2.sum(axis=1)
        self.ql = self.m2.sum(axis=0)

    @property
    def xmax(self):
        return len(self.pos)

    def q_tail(self):
        return 2.0 * self.ql / np.arange(1, self.xmax + 1)

    def q_tail_from_pos(self):
        return 2.0 * (self.pos - np.append(self.pos[1:], 0.0))

    def q_full(self):
        t = self.q_tail()
        return np.concatenate([[1.0 - t.sum()], t])


def kappa(s, x_a, x_b):
    """Cancellation pressure on a replica in a length-x_b queue from the
    x_a positions at or ahead of it (behind it, for LCFS): the summed
    chance, slot by slot, that the slot's buddy is in service. Slots with
    no jobs counted contribute 0 (0/0 -> 0). kappa(0, x_b) = 0."""
    if x_a <= 0:
        return 0.0
    m = s.marginals()
    num = m.m3[:x_a, 0, x_b - 1]  # buddy at position 1 of its own queue
    den = m.m2[:x_a, x_b - 1]
    return float(np.sum(safe_ratio(num, den)))


def lps_p1(K, x):
    """Chance that a service completion in a length-x LPS(K) queue is not a
    given in-service job: (m-1)/m with m = min(K, x) jobs sharing."""
    return min((x - 1.0) / x, (K - 1.0) / K)


def lps_rates(s, K, x_p, x_2):
    """Buddy completion rate r^K for a slot-x_p job in a length-x_2 queue:
    the chance its buddy serves in a length-y' queue times the PS speed
    1/min(K, y') there, summed over y'."""
    num = s.v[x_p - 1, 0, x_2 - 1, :]
    den = float(s.v[x_p - 1, :, x_2 - 1, :].sum())
    if den < EPS_DIV:
        return 0.0
    w = 1.0 / np.minimum(K, np.arange(1, s.xmax + 1))
    return float(num @ w) / den


def lps_psi(s, K, x_a, x_b):
    """Cumulative buddy rate psi^K over the slots ahead: all min(K, x_b)
    service slots when x_a = 1; the K service slots plus waiting slots
    2..x_a otherwise."""
    if x_a <= 0:
        return 0.0
    r1 = lps_rates(s, K, 1, x_b)
    if x_a == 1:
        return min(K, x_b) * r1
    return K * r1 + sum(lps_rates(s, K, xp, x_b) for xp in range(2, x_a + 1))


# ---------------------------------------------------------------------------
# shared gather engine
#
# Every display reduces, per side, to three coefficient grids indexed by the
# target (x1, x2):
#   R[x1, x2]  out-rate (own service + buddy pressure on the whole queue)
#   A[x1, x2]  in-flow weight for the source (x1+1, x2+1): the replica moved
#              up one slot because a job ahead of it finished or vanished
#   B[x1, x2]  in-flow weight for the source (x1, x2+1): the queue shrank
#              behind the replica (or, LPS, around its service slot)
# plus the creation slot, and the arrival shift (length-only for FCFS/LPS,
# position+length for LCFS).


def _kappa_tables(num1, m2):
    """Coefficient grids for the FCFS/LCFS kernels from the slot marginals.

    num1(x1, x2) is the mass whose buddy is at position 1; m2 the full slot
    mass. Every term is a partial sum of the per-slot service chances."""
    X = m2.shape[0]
    ratio = safe_ratio(num1, m2)
    kap = np.cumsum(ratio, axis=0)
    diag = np.ascontiguousarray(np.diagonal(kap))
    R = 1.0 + diag[None, :] - ratio
    A = np.zeros((X, X))
    B = np.zeros((X, X))
    A[:, :-1] = 1.0 + kap[:, 1:]
    B[:, :-1] = diag[None, 1:] - kap[:, 1:]
    return R, A, B


def _lps_tables(num_w, m2, K):
    """Coefficient grids for the LPS(K) kernel.

    num_w(x1, x2) is the buddy-in-service mass already weighted by the PS
    speed 1/min(K, y') of the buddy's queue, so r = num_w/m2. psi[a, b]
    accumulates r over the service slots (row 0) and the waiting slots
    2..a+1; a completion can also be the tagged job itself, hence the p1
    correction on the in-service row of B."""
    X = m2.shape[0]
    r = safe_ratio(num_w, m2)
    x2 = np.arange(1, X + 1)
    psi = np.empty((X, X))
    psi[0] = np.minimum(K, x2) * r[0]
    if X > 1:
        psi[1:] = K * r[0][None, :] + np.cumsum(r[1:], axis=0)
    p1 = np.minimum((x2 - 1.0) / x2, (K - 1.0) / K)
    served = np.maximum(0, x2 - K)  # 0-based psi row for 1 + [x2 - K]^+
    cols = np.arange(X)
    R = 1.0 + psi[served, cols][None, :] - r
    A = np.zeros((X, X))
    B = np.zeros((X, X))
    A[:, :-1] = 1.0 + psi[:, 1:]
    shifted = np.maximum(0, x2[:-1] + 1 - K)  # row for 1 + [(x2+1) - K]^+
    top = psi[shifted, cols[1:]]
    B[:, :-1] = top[None, :] - psi[:, 1:]
    B[0, :-1] = p1[1:] + top - r[0, 1:]
    return R, A, B


def _engine_tables(v, p):
    """Per-side coefficient grids and creation-law vectors for the current
    tensor. The y side uses its own marginals (for swap-symmetric states
    they coincide with the x side; keeping both makes the kernel commute
    with the replica swap exactly)."""
    X = v.shape[0]
    m2x = v.sum(axis=(1, 3))
    m2y = v.sum(axis=(0, 2))
    vx1 = v[:, 0, :, :]  # x-side slots whose buddy is in service
    vy1 = v[0, :, :, :]
    x = np.arange(1, X + 1)
    qtx = 2.0 * m2x.sum(axis=0) / x
    qty = 2.0 * m2y.sum(axis=0) / x
    qcx = np.concatenate([[1.0 - qtx.sum()], qtx[:-1]])  # q(x2 - 1)
    qcy = np.concatenate([[1.0 - qty.sum()], qty[:-1]])
    if p.discipline == "lps":
        w = 1.0 / np.minimum(p.K, x)
        Rx, Ax, Bx = _lps_tables(vx1 @ w, m2x, p.K)
        Ry, Ay, By = _lps_tables(np.tensordot(vy1, w, axes=(1, 0)), m2y, p.K)
    else:
        Rx, Ax, Bx = _kappa_tables(vx1.sum(axis=2), m2x)
        Ry, Ay, By = _kappa_tables(vy1.sum(axis=1), m2y)
    return qcx, qcy, Rx, Ax, Bx, Ry, Ay, By


@njit(cache=True)
def _gather_rhs(v, out, lam, qcx, qcy, cx, cy, ubx, uby, shift_pos,
                Rx, Ax, Bx, Ry, Ay, By):
    """Assemble the derivative entry by entry from the coefficient grids.

    Pull formulation: each in-mask target reads its sources at shifted
    indices (off-mask sources hold exact zeros, so no masking of reads is
    needed); off-mask targets are written as zero so the state never leaks
    outside the feasible set."""
    X = v.shape[0]
    lam2 = 2.0 * lam
    lam4 = 4.0 * lam
    for i1 in range(X):
        for j1 in range(X):
            for i2 in range(X):
                row = out[i1, j1, i2]
                if i1 > ubx[i2]:
                    for j2 in range(X):
                        row[j2] = 0.0
                    continue
                rx = lam4 + Rx[i1, i2]
                ax = Ax[i1, i2]
                bx = Bx[i1, i2]
                born_x = cx[i2] == i1
                for j2 in range(X):
                    if j1 > uby[j2]:
                        row[j2] = 0.0
                        continue
                    acc = -v[i1, j1, i2, j2] * (rx + Ry[j1, j2])
                    if born_x and cy[j2] == j1:
                        acc += lam * qcx[i2] * qcy[j2]
                    if shift_pos:
                        if i1 > 0 and i2 > 0:
                            acc += lam2 * v[i1 - 1, j1, i2 - 1, j2]
                        if j1 > 0 and j2 > 0:
                            acc += lam2 * v[i1, j1 - 1, i2, j2 - 1]
                    else:
                        if i2 > 0:
                            acc += lam2 * v[i1, j1, i2 - 1, j2]
                        if j2 > 0:
                            acc += lam2 * v[i1, j1, i2, j2 - 1]
                    if i2 + 1 < X:
                        if i1 + 1 < X:
                            acc += v[i1 + 1, j1, i2 + 1, j2] * ax
                        acc += v[i1, j1, i2 + 1, j2] * bx
                    if j2 + 1 < X:
                        if j1 + 1 < X:
                            acc += v[i1, j1 + 1, i2, j2 + 1] * Ay[j1, j2]
                        acc += v[i1, j1, i2, j2 + 1] * By[j1, j2]
                    row[j2] = acc
    return out


def _check_state_params(s, p):
    if p.discipline != s.discipline:
        raise ValueError(
            f"state is {s.discipline!r} but params say {p.discipline!r}")
    if p.discipline == "lps" and p.K != s.K:
        raise ValueError(f"state has K={s.K} but params say K={p.K}")
    if p.xmax != s.xmax:
        raise ValueError(f"state has xmax={s.xmax} but params say {p.xmax}")


def positional_rhs(s, p):
    """Time derivative tensor of the positional pair state.

    Dispatches on the discipline's rate tables; the shift structure is
    shared. Entries outside the feasibility mask are exactly zero."""
    _check_state_params(s, p)
    X = s.xmax
    cx = _creation_slot(X, p.discipline, p.K)
    ub = (_position_top(X, p.discipline, p.K) - 1).astype(np.int64)
    qcx, qcy, Rx, Ax, Bx, Ry, Ay, By = _engine_tables(s.v, p)
    out = np.empty((X,) * 4)
    _gather_rhs(s.v, out, p.lam, qcx, qcy, cx, cx, ub, ub,
                p.discipline == "lcfs", Rx, Ax, Bx, Ry, Ay, By)
    return out


def positional_ode_system(p):
    X = p.xmax
    cx = _creation_slot(X, p.discipline, p.K)
    ub = (_position_top(X, p.discipline, p.K) - 1).astype(np.int64)
    shift = p.discipline == "lcfs"
    buf = np.empty((X,) * 4)

    def rhs(flat):
        v = flat.reshape((X,) * 4)
        qcx, qcy, Rx, Ax, Bx, Ry, Ay, By = _engine_tables(v, p)
        _gather_rhs(v, buf, p.lam, qcx, qcy, cx, cx, ub, ub, shift,
                    Rx, Ax, Bx, Ry, Ay, By)
        return buf.ravel()

    def label(i):
        j2 = i % X
        i2 = (i // X) % X
        j1 = (i // X ** 2) % X
        i1 = i // X ** 3
        return f"v({i1 + 1},{j1 + 1},{i2 + 1},{j2 + 1})"

    return OdeSystem(X ** 4, rhs, labels=label)


def positional_fixed_point(p, cfg=None, return_state=False):
    """Euler-integrate the positional system from empty to its fixed point.

    Returns the queue-length law q(x) = 2*ql(x)/x with q(0) = 1 - sum."""
    validate_params(p)
    if p.discipline not in POSITIONAL_DISCIPLINES:
        raise ValueError(
            f"positional approximation needs one of {POSITIONAL_DISCIPLINES}: "
            f"{p.discipline!r}")
    if p.d != 2:
        raise ValueError("positional pair approximations track d = 2 replicas")
    if cfg is None:
        # worst-case per-entry outflow: 4*lam arrivals plus, per side, one
        # unit of service and a buddy-pressure sum of at most xmax unit
        # terms; forward Euler needs dt safely below 2 over that
        bound = 4.0 * p.lam + 2.0 + 2.0 * p.xmax
        cfg = IntegratorConfig(dt=min(0.05, 1.6 / bound))
    sys = positional_ode_system(p)
    res = solve_fixed_point(sys, np.zeros(sys.dim), cfg)
    state = PositionalState(res.state.reshape((p.xmax,) * 4),
                            p.discipline, p.K)
    dist = qdist_from_tail(state.q_tail(), p, converged=res.converged,
                           extra={"t_used": res.t_used, "sup_rhs": res.sup_rhs})
    return (dist, state) if return_state else dist
