"""Forward-Euler integration and fixed-point detection over flat state vectors.

Every approximation module reduces to an autonomous system ds/dt = rhs(s) on
a flat nonnegative vector; fixed points are found by plain Euler iteration
from the empty state, stopping when the sup-norm of the derivative falls
below a tolerance. Euler is deliberate: fixed points are independent of the
step size, and all per-coordinate outflow rates in these models are bounded,
so dt=0.05 sits well inside the stability region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class IntegratorConfig:
    dt: float = 0.05
    tol: float = 1e-10          # sup-norm of rhs at a fixed point
    t_max: float = 1e4

    def validate(self):
        if not (self.dt > 0 and self.tol > 0 and self.t_max > 0):
            raise ValueError(f"integrator config out of range: {self}")


class OdeSystem:
    """A pure derivative function over a flat vector.

    rhs(s) must be deterministic and must not retain references to s.
    labels(i), when given, maps a flat index to a human-readable coordinate
    name for diagnostics. clamp_negative requests that tiny Euler
    undershoots below zero be clamped back to zero after every step (all
    model states in this package are probabilities/intensities, so negatives
    are rounding noise).
    """

    def __init__(self, dim, rhs, labels=None, clamp_negative=True):
        self.dim = int(dim)
        self.rhs = rhs
        self.labels = labels
        self.clamp_negative = clamp_negative

    def describe(self, i):
        return self.labels(i) if self.labels is not None else f"coordinate {i}"


class DivergenceError(RuntimeError):
    pass


@njit(cache=True)
def _fused_step(s, ds, dt, clamp):
    """In-place s += dt*ds with clamping; returns (sup|ds|, first_bad_index).

    A single pass keeps the per-step overhead flat for multi-megabyte
    states. first_bad_index is -1 unless a non-finite derivative entry was
    seen.
    """
    sup = 0.0
    bad = -1
    for i in range(s.size):
        d = ds[i]
        if not np.isfinite(d):
            if bad < 0:
                bad = i
            continue
        a = abs(d)
        if a > sup:
            sup = a
        v = s[i] + dt * d
        if clamp and v < 0.0:
            v = 0.0
        s[i] = v
    return sup, bad


def _sup_and_bad(ds):
    finite = np.isfinite(ds)
    if not finite.all():
        return np.inf, int(np.argmin(finite))
    return float(np.max(np.abs(ds))) if ds.size else 0.0, -1


def _raise_divergence(sys, bad, t):
    raise DivergenceError(
        f"non-finite derivative at t={t:.6g} in {sys.describe(bad)}")


def euler_integrate(sys, s0, cfg, t_end):
    """Advance s0 by steps s <- s + dt*rhs(s) until accumulated time t_end.

    The final partial step is scaled to land exactly on t_end. Returns the
    final state (s0 is not modified).
    """
    cfg.validate()
    if t_end > cfg.t_max:
        raise ValueError(f"t_end {t_end} exceeds t_max {cfg.t_max}")
    s = np.array(s0, dtype=float, copy=True)
    if s.size != sys.dim:
        raise ValueError(f"state has dimension {s.size}, expected {sys.dim}")
    nfull, rem = divmod(t_end, cfg.dt)
    for k in range(int(round(nfull))):
        ds = sys.rhs(s)
        sup, bad = _fused_step(s, ds, cfg.dt, sys.clamp_negative)
        if bad >= 0:
            _raise_divergence(sys, bad, k * cfg.dt)
    if rem > 1e-12 * max(1.0, t_end):
        ds = sys.rhs(s)
        sup, bad = _fused_step(s, ds, rem, sys.clamp_negative)
        if bad >= 0:
            _raise_divergence(sys, bad, t_end)
    return s


@dataclass
class FixedPointResult:
    state: np.ndarray
    converged: bool
    t_used: float
    sup_rhs: float
    steps: int


def solve_fixed_point(sys, s0, cfg):
    """Integrate until sup-norm of rhs(s) < cfg.tol or t_max is hit.

    Non-convergence is not an error; it is reported in the result flag and
    the final state is returned either way.
    """
    cfg.validate()
    s = np.array(s0, dtype=float, copy=True)
    if s.size != sys.dim:
        raise ValueError(f"state has dimension {s.size}, expected {sys.dim}")
    t = 0.0
    steps = 0
    while True:
        ds = sys.rhs(s)
        if t + cfg.dt > cfg.t_max:
            # out of budget: report the current residual without stepping
            sup, bad = _sup_and_bad(ds)
            if bad >= 0:
                _raise_divergence(sys, bad, t)
            return FixedPointResult(s, sup < cfg.tol, t, sup, steps)
        sup, bad = _fused_step(s, ds, cfg.dt, sys.clamp_negative)
        if bad >= 0:
            _raise_divergence(sys, bad, t)
        t += cfg.dt
        steps += 1
        if sup < cfg.tol:
            return FixedPointResult(s, True, t, sup, steps)
