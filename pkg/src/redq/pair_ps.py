"""Pair approximation for PS servers.

The mean-field model assumes a job's d queue lengths are independent. Under
PS that is off at high load: a long queue finishes replicas slowly, so jobs
with one replica in a long queue tend to have buddies in long queues too.
The pair approximation keeps the joint law of the two ends of a replica
pair: pi(x, y) is the (per-server scaled) number of jobs whose replicas sit
in queues of lengths x and y, counted symmetrically. A server of length x
carries x replica-ends, so the queue-length law is q(x) = 2*pi(x)/x with
pi(x) = sum_y pi(x, y).

The only closure is the buddy rate: a tagged job at a length-x server has
x-1 neighbours there, each assumed to have its own buddy in a queue of
length y' ~ pi(y'|x), completing at PS speed 1/y':

    h(x) = (x-1) * sum_y' pi(y'|x) / y'.

The d >= 3 generalization keeps the full d-way joint tensor with
q(x) = d*pi(x)/x and h(x) = (x-1)(d-1) * E[1/Y' | x].
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .model import ModelParams, QueueDist, qdist_from_tail, safe_ratio, validate_params
from .ode import IntegratorConfig, OdeSystem, solve_fixed_point

COND_EPS = 1e-14  # denominators below this mean "no such jobs": rate 0


class PairState:
    """Symmetric matrix pi(x, y), 1 <= x, y <= xmax (stored 0-based)."""

    def __init__(self, pi):
        self.pi = np.asarray(pi, dtype=float)

    @classmethod
    def empty(cls, xmax):
        return cls(np.zeros((xmax, xmax)))

    @property
    def xmax(self):
        return self.pi.shape[0]

    @property
    def max_asymmetry(self):
        return float(np.max(np.abs(self.pi - self.pi.T)))

    def marginal(self):
        return self.pi.sum(axis=1)

    def q_tail(self):
        x = np.arange(1, self.xmax + 1)
        return 2.0 * self.marginal() / x

    def q_full(self):
        tail = self.q_tail()
        return np.concatenate([[1.0 - tail.sum()], tail])

    @property
    def qbar(self):
        return 2.0 * float(self.pi.sum())

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["x", "y", "pi"])
        for i in range(self.xmax):
            for j in range(self.xmax):
                w.writerow([i + 1, j + 1, repr(float(self.pi[i, j]))])
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="") as f:
            f.write(buf.getvalue())


def _as_matrix(s):
    return s.pi if isinstance(s, PairState) else np.asarray(s, dtype=float)


def buddy_rates(pi):
    """Vector h(1..xmax): cancellation pressure on a length-x queue from the
    buddies of its other x-1 jobs."""
    pi = _as_matrix(pi)
    xs = np.arange(1, pi.shape[0] + 1)
    recip = pi @ (1.0 / xs)  # sum_y pi(x, y)/y
    return (xs - 1) * safe_ratio(recip, pi.sum(axis=1), COND_EPS)


def ps_buddy_rate(s, x):
    """h(x) for a single queue length (h(1) = 0: a lone job has no
    neighbours whose buddies could cancel)."""
    return float(buddy_rates(s)[x - 1])


def pair_ps_rhs(s, p):
    """Time derivative of pi for d=2. Creation draws both ends from q
    independently; each end also sees outside arrivals at rate 2*lam and
    loses non-tagged jobs at local PS rate plus the buddy rate."""
    pi = _as_matrix(s)
    lam = p.lam
    xx = pi.shape[0]
    xs = np.arange(1, xx + 1)
    q_tail = 2.0 * pi.sum(axis=1) / xs
    q0 = 1.0 - q_tail.sum()
    qs = np.concatenate([[q0], q_tail[:-1]])  # q(x-1) for x = 1..xmax
    h = buddy_rates(pi)

    out = lam * np.outer(qs, qs)
    out[1:, :] += 2.0 * lam * pi[:-1, :]
    out[:, 1:] += 2.0 * lam * pi[:, :-1]
    out -= 4.0 * lam * pi
    # a non-tagged job leaves a length-u queue at rate (u-1)/u + h(u)
    w = h + (xs - 1.0) / xs
    out[:-1, :] += pi[1:, :] * w[1:, None]
    out[:, :-1] += pi[:, 1:] * w[None, 1:]
    out -= pi * (2.0 + h[:, None] + h[None, :])
    return out


def pair_ps_ode_system(p):
    xx = p.xmax

    def rhs(flat):
        return pair_ps_rhs(flat.reshape(xx, xx), p).ravel()

    return OdeSystem(xx * xx, rhs,
                     labels=lambda i: f"pi({i // xx + 1},{i % xx + 1})")


# ---------------------------------------------------------------------------
# d >= 3: same construction on the full d-way tensor

class PairStateD:
    """Symmetric order-d tensor pi(x_1..x_d) on {1..xmax}^d."""

    def __init__(self, pi, d):
        self.pi = np.asarray(pi, dtype=float)
        self.d = d

    @classmethod
    def empty(cls, xmax, d):
        return cls(np.zeros((xmax,) * d), d)

    @property
    def xmax(self):
        return self.pi.shape[0]

    def marginal(self):
        return self.pi.sum(axis=tuple(range(1, self.d)))

    def q_tail(self):
        x = np.arange(1, self.xmax + 1)
        return self.d * self.marginal() / x

    def q_full(self):
        tail = self.q_tail()
        return np.concatenate([[1.0 - tail.sum()], tail])


def _axis_shape(d, axis, n):
    shape = [1] * d
    shape[axis] = n
    return shape


def buddy_rates_d(pi, d):
    """h(x) = (x-1)(d-1) E[1/Y'|x] from the 2-way marginal."""
    xs = np.arange(1, pi.shape[0] + 1)
    pi2 = pi if d == 2 else pi.sum(axis=tuple(range(2, d)))
    recip = pi2 @ (1.0 / xs)
    marg = pi2.sum(axis=1)
    return (xs - 1) * (d - 1) * safe_ratio(recip, marg, COND_EPS)


def pair_ps_rhs_d(s, p):
    """Time derivative of the d-way tensor; p.d axes are fully symmetric.
    Reduces exactly to pair_ps_rhs when d=2."""
    d = p.d
    pi = s.pi if isinstance(s, PairStateD) else np.asarray(s, dtype=float)
    lam = p.lam
    xx = pi.shape[0]
    xs = np.arange(1, xx + 1)
    q_tail = d * pi.sum(axis=tuple(range(1, d))) / xs
    q0 = 1.0 - q_tail.sum()
    qs = np.concatenate([[q0], q_tail[:-1]])
    h = buddy_rates_d(pi, d)
    w = h + (xs - 1.0) / xs

    out = np.full((xx,) * d, lam)
    for i in range(d):
        out = out * qs.reshape(_axis_shape(d, i, xx))

    full = (slice(None),) * d
    for i in range(d):
        lo = full[:i] + (slice(1, None),) + full[i + 1:]
        hi = full[:i] + (slice(None, -1),) + full[i + 1:]
        out[lo] += d * lam * pi[hi]
        out[hi] += pi[lo] * w[1:].reshape(_axis_shape(d, i, xx - 1))
        out -= pi * h.reshape(_axis_shape(d, i, xx))
    out -= (d * d * lam + d) * pi
    return out


def pair_ps_ode_system_d(p):
    xx, d = p.xmax, p.d
    shape = (xx,) * d

    def rhs(flat):
        return pair_ps_rhs_d(flat.reshape(shape), p).ravel()

    def label(i):
        return "pi" + str(tuple(int(k) + 1 for k in np.unravel_index(i, shape)))

    return OdeSystem(xx ** d, rhs, labels=label)


def pair_ps_fixed_point(p, cfg=None, return_state=False):
    """Euler-integrate the pair system from empty to its fixed point.
    Dispatches on p.d: matrix form for d=2, tensor form above."""
    validate_params(p)
    if p.d < 2:
        raise ValueError("pair approximation needs d >= 2 (no pairs for d=1)")
    if cfg is None:
        if p.d == 2:
            cfg = IntegratorConfig()
        else:
            # the per-entry outflow rate grows like d*(d-1)*xmax through the
            # buddy terms; forward Euler needs dt below 2 over that or the
            # stiff entries oscillate against the nonnegativity clamp and the
            # clamp pumps phantom mass into the state
            cfg = IntegratorConfig(dt=0.005)
    if p.d == 2:
        sys = pair_ps_ode_system(p)
        res = solve_fixed_point(sys, np.zeros(sys.dim), cfg)
        state = PairState(res.state.reshape(p.xmax, p.xmax))
    else:
        sys = pair_ps_ode_system_d(p)
        res = solve_fixed_point(sys, np.zeros(sys.dim), cfg)
        state = PairStateD(res.state.reshape((p.xmax,) * p.d), p.d)
    dist = qdist_from_tail(state.q_tail(), p, converged=res.converged,
                           extra={"t_used": res.t_used, "sup_rhs": res.sup_rhs})
    return (dist, state) if return_state else dist
