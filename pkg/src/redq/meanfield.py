"""Mean-field approximation: independent queue lengths for a job's replicas.

The transient model tracks q_t(x), the fraction of servers holding x
replicas. Arrivals add d replicas to random servers; a server completes work
at rate 1; and a replica's d-1 buddies disappear at a rate proportional to
how many replicas its siblings' servers hold, estimated under independence
as (1 - q(0)) / qbar per unit of sibling queue length:

    dq(x)/dt = d*lam*[q(x-1) - q(x)] + q(x+1) - q(x)
               + (1-q(0))*(d-1)/qbar * [(x+1)*q(x+1) - x*q(x)]

for x >= 1, with q(0) = 1 - sum_{x>=1} q(x) by definition.

The fixed point is available in closed form: q(x) is a ratio-recursion
q(x)/q(x-1) = d*lam / (1 + lam*(d-1)*x/qbar), where qbar solves a scalar
series equation with a strictly increasing right-hand side (solved here by
bisection). The series also has a lower-incomplete-gamma closed form, kept
as an independent cross-check.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammainc, gammaln

from .model import ModelParams, QueueDist, validate_params
from .ode import IntegratorConfig, OdeSystem, solve_fixed_point

SERIES_TINY = 1e-16


class MeanFieldState:
    """Full queue-length vector q(0..xmax); only x>=1 are free coordinates,
    q(0) is the mass deficit."""

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    @classmethod
    def empty(cls, xmax):
        q = np.zeros(xmax + 1)
        q[0] = 1.0
        return cls(q)

    @classmethod
    def from_tail(cls, q_tail):
        q_tail = np.asarray(q_tail, dtype=float)
        q = np.empty(len(q_tail) + 1)
        q[0] = 1.0 - q_tail.sum()
        q[1:] = q_tail
        return cls(q)

    @property
    def qbar(self):
        return float(np.dot(np.arange(len(self.q)), self.q))


def mf_rhs(state, p):
    """Derivative of q(1..xmax). Accepts a MeanFieldState or a full q vector."""
    q = state.q if isinstance(state, MeanFieldState) else np.asarray(state, dtype=float)
    lam, d = p.lam, p.d
    x = np.arange(1, len(q))
    qx = q[1:]
    q_up = np.append(q[2:], 0.0)        # q(x+1)
    q_dn = q[:-1]                       # q(x-1)
    dq = d * lam * (q_dn - qx) + q_up - qx
    qbar = float(np.dot(np.arange(len(q)), q))
    if d > 1 and qbar > 0.0:
        rate = (1.0 - q[0]) * (d - 1) / qbar
        dq += rate * ((x + 1) * q_up - x * qx)
    return dq


def mf_ode_system(p):
    """OdeSystem over the tail q(1..xmax) with q(0) kept consistent."""
    xmax = p.xmax

    def rhs(tail):
        q = np.empty(xmax + 1)
        q[0] = 1.0 - tail.sum()
        q[1:] = tail
        return mf_rhs(q, p)

    return OdeSystem(xmax, rhs, labels=lambda i: f"q({i + 1})")


def truncated_series(a, b, cap, tiny=SERIES_TINY):
    """sum_{x>=1} a^x / prod_{l=1..x} (1+b*l), summed until terms < tiny.

    Raises if the cap is reached while terms are still above the threshold
    (the ratio of consecutive terms is a/(1+b*(x+1)), eventually < 1, so a
    generous cap only trips on pathological arguments).
    """
    term = 1.0
    total = 0.0
    for x in range(1, cap + 1):
        term *= a / (1.0 + b * x)
        total += term
        if term < tiny:
            return total
    raise RuntimeError(
        f"series did not converge within {cap} terms (a={a}, b={b})")


def gamma_series_identity(a, b, cap=100000):
    """Both sides of  sum_{x>=1} a^x/prod(1+b*l) =
    (a/b)^(-1/b) * e^(a/b) * gamma_lower(1 + 1/b, a/b),  computed
    independently (truncated series vs incomplete gamma). Caller asserts
    agreement; evaluated in log space to dodge overflow."""
    series = truncated_series(a, b, cap) if a > 0 else 0.0
    if a <= 0:
        return series, 0.0
    s = 1.0 + 1.0 / b
    x = a / b
    with np.errstate(divide="ignore"):
        log_reg = np.log(gammainc(s, x))     # regularized lower gamma
    log_val = x - np.log(x) / b + log_reg + gammaln(s)
    return series, float(np.exp(log_val))


def _qbar_residual(qbar, lam, d, cap):
    b = lam * (d - 1) / qbar
    return truncated_series(d * lam, b, cap) - lam / (1.0 - lam)


def solve_qbar(lam, d, cap, tol=1e-12):
    """Bisection for qbar in the fixed-point series equation. The residual
    is strictly increasing in qbar, so bracketing is safe."""
    lo = 1e-9
    hi = 1.0
    for _ in range(200):
        if _qbar_residual(hi, lam, d, cap) >= 0.0:
            break
        hi *= 2.0
    else:
        raise RuntimeError(f"no bisection bracket for qbar (lam={lam}, d={d})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _qbar_residual(mid, lam, d, cap) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def mf_fixed_point(p):
    """Closed-form fixed point, truncated to xmax and NOT renormalized:
    q(0) is exactly 1-lam, the tail beyond xmax is simply dropped (it is
    far below 1e-9 for the supported parameter range)."""
    validate_params(p)
    lam, d, xmax = p.lam, p.d, p.xmax
    q = np.empty(xmax + 1)
    q[0] = 1.0 - lam
    if d == 1:
        # no buddies: every server is an independent M/M/1
        q[1:] = (1.0 - lam) * lam ** np.arange(1, xmax + 1)
        qbar = lam / (1.0 - lam)
    else:
        qbar = solve_qbar(lam, d, cap=4 * xmax)
        for x in range(1, xmax + 1):
            q[x] = q[x - 1] * d * lam / (1.0 + lam * (d - 1) * x / qbar)
    dist = QueueDist(q, params=p, extra={"qbar_solved": qbar})
    dist.validate()
    return dist


def mf_fixed_point_by_integration(p, cfg=None):
    """Euler fixed point of mf_rhs from the empty state; cross-check oracle
    for mf_fixed_point."""
    validate_params(p)
    cfg = cfg or IntegratorConfig()
    sys = mf_ode_system(p)
    res = solve_fixed_point(sys, np.zeros(p.xmax), cfg)
    q = np.empty(p.xmax + 1)
    q[0] = 1.0 - res.state.sum()
    q[1:] = res.state
    return QueueDist(q, params=p, converged=res.converged,
                     extra={"t_used": res.t_used, "sup_rhs": res.sup_rhs})
