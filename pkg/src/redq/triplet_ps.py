"""Triplet approximation for PS servers (d=2 only).

One step past the pair approximation: track chains of three servers where
the outer two each share a job with the middle one. The state is c(x, y, z),
the scaled count of such chains with queue lengths (x, y, z), defined for
middle length y >= 2, plus the scalar pi11 counting pairs of length-1
queues (a length-1 queue cannot be the middle of a chain).

Everything else is derived: a chain (x, y, z) contains y-1 copies of the
pair (x, y), so pi(x, y) = sum_z c(x, y, z)/(y-1), and a length-y server
sits in the middle of y(y-1)/2 chains, so q(y) = 2 sum_{x,z} c/(y(y-1)).

The closure now conditions a neighbour's degree on two queue lengths
instead of one. For a helper of the end node (own length x, far end y) the
degree law is c(v|y,x) proportional to c(y,x,v). For a helper of the middle
node both ends are known and the degree law c(v|x,y,z) pools the chains
(x,y,v) and (v,y,z); the middle node's conditioning is the one modelling
choice in this construction (it ignores which side the helper hangs off).
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams, QueueDist, qdist_from_tail, safe_ratio, validate_params
from .ode import IntegratorConfig, OdeSystem, solve_fixed_point

COND_EPS = 1e-14


class TripletState:
    """Tensor c[x-1, y-2, z-1] on 1<=x,z<=xmax, 2<=y<=xmax, plus pi11."""

    def __init__(self, c, pi11):
        self.c = np.asarray(c, dtype=float)
        self.pi11 = float(pi11)

    @classmethod
    def empty(cls, xmax):
        return cls(np.zeros((xmax, xmax - 1, xmax)), 0.0)

    @classmethod
    def from_flat(cls, v, xmax):
        return cls(v[:-1].reshape(xmax, xmax - 1, xmax), v[-1])

    def flat(self):
        return np.concatenate([self.c.ravel(), [self.pi11]])

    @property
    def xmax(self):
        return self.c.shape[0]

    @property
    def max_end_asymmetry(self):
        return float(np.max(np.abs(self.c - self.c.transpose(2, 1, 0))))

    def pi_xy(self):
        """pi(x, y) for y >= 2, shape (xmax, xmax-1)."""
        ys = np.arange(2, self.xmax + 1)
        return self.c.sum(axis=2) / (ys - 1.0)

    def pair_marginal(self):
        """Full symmetric pi(x, y) matrix, 1 <= x, y <= xmax."""
        xx = self.xmax
        pxy = self.pi_xy()
        full = np.zeros((xx, xx))
        full[:, 1:] = pxy
        full[1:, 0] = pxy[0, :]  # pi(x, 1) = pi(1, x)
        full[0, 0] = self.pi11
        return full

    def q_tail(self):
        xx = self.xmax
        ys = np.arange(2, xx + 1)
        q = np.empty(xx)
        cm1 = self.c[0].sum(axis=1)  # sum_z c(1, y, z) over middle y = 2..xmax
        q[0] = 2.0 * self.pi11 + 2.0 * (cm1 / (ys - 1.0)).sum()
        q[1:] = 2.0 * self.c.sum(axis=(0, 2)) / (ys * (ys - 1.0))
        return q

    def q_full(self):
        tail = self.q_tail()
        return np.concatenate([[1.0 - tail.sum()], tail])


def _end_middle_tables(c):
    """cm(e, m) = sum_v c(e, m, v) and S(e, m) = sum_v c(e, m, v)/v, both
    indexed end e = 1..xmax (axis 0), middle m = 2..xmax (axis 1)."""
    vs = np.arange(1, c.shape[0] + 1)
    return c.sum(axis=2), c @ (1.0 / vs)


def cond_degree_table(s):
    """Matrix C[v-1, u-1] = c(v|u): degree law of a random neighbour of a
    random degree-u node."""
    xx = s.xmax
    cm, _ = _end_middle_tables(s.c)
    tab = np.zeros((xx, xx))
    tab[:, 1:] = safe_ratio(cm, cm.sum(axis=0, keepdims=True), COND_EPS)
    # u = 1: a degree-1 node neighbours the middle of c(1, v, .) chains
    ys = np.arange(2, xx + 1)
    q1 = 2.0 * s.pi11 + 2.0 * (cm[0] / (ys - 1.0)).sum()
    if q1 >= COND_EPS:
        tab[0, 0] = 2.0 * s.pi11 / q1
        tab[1:, 0] = 2.0 * cm[0] / ((ys - 1.0) * q1)
    return tab


def cond_degree(s, x, y):
    """c(x|y), zero when no degree-y mass exists."""
    return float(cond_degree_table(s)[x - 1, y - 1])


def cond_degree_triplet(s, v, x, y, z):
    """c(v|x,y,z): degree law of a middle-node helper, pooling chains
    (x,y,v) and (v,y,z)."""
    if y < 2:
        raise ValueError("middle node of a chain has length >= 2")
    c = s.c
    num = c[x - 1, y - 2, v - 1] + c[v - 1, y - 2, z - 1]
    den = c[x - 1, y - 2, :].sum() + c[:, y - 2, z - 1].sum()
    if den < COND_EPS:
        return 0.0
    return float(num / den)


def helper_rate_end(s, y, x):
    """k(y,x): rate at which helpers of an end node (own length x, far end
    y) complete elsewhere, = (x-1) sum_v c(v|y,x)/v."""
    if x < 2:
        return 0.0
    cm, sv = _end_middle_tables(s.c)
    return float((x - 1) * safe_ratio(sv[y - 1, x - 2], cm[y - 1, x - 2], COND_EPS))


def helper_rate_middle(s, x, y):
    """m(x,y): the middle-node analogue averaged over the far end,
    sum_z c(x,y,z) M(x,y,z) / pi(x,y), with m(x,2)=0 (no middle helpers)."""
    if y == 2:
        return 0.0
    c = s.c
    cm, sv = _end_middle_tables(c)
    mnum = sv[x - 1, y - 2] + sv[:, y - 2]
    mden = cm[x - 1, y - 2] + cm[:, y - 2]
    m_xyz = safe_ratio(mnum, mden, COND_EPS)
    pi_xy = c[x - 1, y - 2, :].sum() / (y - 1.0)
    return float(safe_ratio((c[x - 1, y - 2, :] * m_xyz).sum(), pi_xy, COND_EPS))


def triplet_rhs(s, p):
    """Time derivative (dc tensor, dpi11 scalar)."""
    lam = p.lam
    c = s.c
    xx = s.xmax
    xs = np.arange(1, xx + 1)
    ys = np.arange(2, xx + 1)

    q = s.q_full()
    cond = cond_degree_table(s)
    cm, sv = _end_middle_tables(c)
    # (x-1)-weighted helper rate of an end node, grid (x, y): k(y, x)
    t_em = safe_ratio(sv, cm, COND_EPS)
    k_xy = np.zeros((xx, xx - 1))
    k_xy[1:, :] = (xs[1:, None] - 1.0) * t_em[1:, :].T
    # middle-node helper rate times (y-2), grid (x, y, z)
    m_xyz = safe_ratio(sv[:, :, None] + sv.T[None, :, :],
                       cm[:, :, None] + cm.T[None, :, :], COND_EPS)
    wm = (ys - 2.0)[None, :, None] * m_xyz

    # creation: an arrival pairs a length-(x-1) server with a length-(y-1)
    # server already chained to a length-z neighbour, and the mirror image
    qc = q[:xx]                      # q(u-1) for u = 1..xmax
    qym = q[1:xx] * (ys - 1.0)       # q(y-1)(y-1) for y = 2..xmax
    born = lam * qc[:, None, None] * qym[None, :, None] * cond[:, :xx - 1].T[None, :, :]
    out = born + born.transpose(2, 1, 0)

    # outside arrivals on any of the three servers
    out[1:, :, :] += 2.0 * lam * c[:-1, :, :]
    out[:, 1:, :] += 2.0 * lam * c[:, :-1, :]
    out[:, :, 1:] += 2.0 * lam * c[:, :, :-1]
    out -= 6.0 * lam * c

    # own service: an end node loses a non-shared job with prob (x-1)/x,
    # the middle one with prob (y-2)/y; the chain dies otherwise
    out -= 3.0 * c
    w_end = (xs - 1.0) / xs          # coefficient at target length x, from x+1
    out[:-1, :, :] += c[1:, :, :] * w_end[1:, None, None]
    out[:, :, :-1] += c[:, :, 1:] * w_end[None, None, 1:]
    w_mid = (ys - 1.0) / (ys + 1.0)  # (y-1)/(y+1) at target y, from y+1
    out[:, :-1, :] += c[:, 1:, :] * w_mid[:-1, None]

    # helper completions elsewhere shorten one of the three queues
    out -= c * (k_xy[:, :, None] + k_xy.T[None, :, :] + wm)
    out[:-1, :, :] += c[1:, :, :] * k_xy[1:, :, None]
    out[:, :, :-1] += c[:, :, 1:] * k_xy.T[None, :, 1:]
    out[:, :-1, :] += c[:, 1:, :] * wm[:, 1:, :]

    # pairs of length-1 queues: created by double-idle arrivals and by
    # (1,2,x) chains whose middle loses its other job; killed by any
    # arrival or completion on either server
    zs = xs
    d11 = (lam * q[0] ** 2 - (2.0 + 4.0 * lam) * s.pi11
           + 2.0 * (c[0, 0, :] * (0.5 + 1.0 / zs)).sum())
    return out, d11


def triplet_ode_system(p):
    xx = p.xmax
    dim = xx * (xx - 1) * xx + 1

    def rhs(flat):
        st = TripletState.from_flat(flat, xx)
        dc, d11 = triplet_rhs(st, p)
        return np.concatenate([dc.ravel(), [d11]])

    def label(i):
        if i == dim - 1:
            return "pi(1,1)"
        x, y, z = np.unravel_index(i, (xx, xx - 1, xx))
        return f"c({x + 1},{y + 2},{z + 1})"

    return OdeSystem(dim, rhs, labels=label)


def triplet_fixed_point(p, cfg=None, return_state=False):
    """Euler-integrate from the empty state; q via the derived formulas."""
    validate_params(p)
    if p.d != 2:
        raise ValueError("triplet approximation is only defined for d=2")
    if cfg is None:
        # same stiffness consideration as the pair tensor: the worst-case
        # per-entry outflow is 6*lam + 3 own-service + ~3*xmax helper rate,
        # and forward Euler needs dt below 2 over that
        bound = 6.0 * p.lam + 3.0 + 3.0 * (p.xmax - 1.0)
        cfg = IntegratorConfig(dt=min(0.05, 1.6 / bound))
    sys = triplet_ode_system(p)
    res = solve_fixed_point(sys, np.zeros(sys.dim), cfg)
    state = TripletState.from_flat(res.state, p.xmax)
    dist = qdist_from_tail(state.q_tail(), p, converged=res.converged,
                           extra={"t_used": res.t_used, "sup_rhs": res.sup_rhs,
                                  "pi11": state.pi11})
    return (dist, state) if return_state else dist
