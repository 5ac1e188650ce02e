"""Shared parameter and distribution types for the redundancy-d queueing models.

Every solver in this package produces a queue-length distribution: the
fraction of servers holding x replicas, for x = 0..xmax. This module holds
the parameter record, the distribution type with its serialization, and the
small numeric guards shared by all approximation modules.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

DISCIPLINES = ("ps", "fcfs", "lcfs", "lps")

# Denominator threshold below which conditional probabilities are treated as
# 0/0 = 0 (an empty class contributes no flow, so its rate is irrelevant).
EPS_DIV = 1e-14

# Negative values beyond this magnitude after an Euler step indicate a real
# problem; within it they are rounding noise and get clamped to zero.
EULER_NOISE = -1e-12


def default_xmax(d):
    """Truncation bound: 50 keeps the tail far below 1e-8 for d=2 at loads
    up to 0.9; tensors for d=3 use 30 to stay tractable."""
    return 50 if d <= 2 else 30


@dataclass(frozen=True)
class ModelParams:
    """System parameters.

    lam        arrival rate per server (stability requires 0 < lam < 1)
    d          replication factor, each job is copied to d distinct servers
    discipline one of "ps", "fcfs", "lcfs", "lps"
    K          number of service slots, only meaningful for LPS
    xmax       queue-length truncation bound for the ODE state spaces
    """

    lam: float
    d: int = 2
    discipline: str = "ps"
    K: int = 1
    xmax: int = 0  # 0 means "use default_xmax(d)"

    def __post_init__(self):
        if self.xmax == 0:
            object.__setattr__(self, "xmax", default_xmax(self.d))

    def with_(self, **kw):
        return replace(self, **kw)


def validate_params(p):
    """Raise ValueError naming the offending field, or return None."""
    if not (0.0 < p.lam < 1.0):
        raise ValueError(f"lambda out of range (0, 1): {p.lam}")
    if int(p.d) != p.d or p.d < 1:
        raise ValueError(f"d must be an integer >= 1: {p.d}")
    if p.discipline not in DISCIPLINES:
        raise ValueError(f"discipline must be one of {DISCIPLINES}: {p.discipline!r}")
    if p.discipline == "lps" and (int(p.K) != p.K or p.K < 1):
        raise ValueError(f"K must be an integer >= 1: {p.K}")
    if int(p.xmax) != p.xmax or p.xmax < 2:
        raise ValueError(f"xmax must be an integer >= 2: {p.xmax}")


class QueueDist:
    """Queue-length distribution q(0..xmax) plus provenance.

    q is dense and indexed by queue length; entries are nonnegative and sum
    to one (the solvers define q(0) as one minus the rest, so normalization
    is structural). tail_mass is the probability near the truncation
    boundary; solvers set tail_warning when it exceeds 1e-8, meaning xmax
    was arguably too small for the requested load.
    """

    def __init__(self, q, params=None, converged=True, extra=None):
        self.q = np.asarray(q, dtype=float)
        self.params = params
        self.converged = bool(converged)
        self.extra = dict(extra or {})

    @property
    def xmax(self):
        return len(self.q) - 1

    @property
    def mean(self):
        return float(np.dot(np.arange(len(self.q)), self.q))

    @property
    def tail_mass(self):
        return float(self.q[max(0, len(self.q) - 6):].sum())

    @property
    def tail_warning(self):
        return self.tail_mass > 1e-8

    def validate(self):
        if np.any(self.q < EULER_NOISE):
            bad = int(np.argmin(self.q))
            raise ValueError(f"negative probability q({bad}) = {self.q[bad]}")
        s = float(self.q.sum())
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"distribution not normalized: sum = {s!r}")
        if not math.isfinite(self.mean):
            raise ValueError("distribution mean is not finite")

    def json_dict(self):
        p = self.params
        out = {
            "lambda": p.lam if p else None,
            "d": p.d if p else None,
            "discipline": p.discipline if p else None,
            "K": p.K if (p and p.discipline == "lps") else None,
            "mean": self.mean,
            "converged": self.converged,
            "tail_mass": self.tail_mass,
            "q": [float(v) for v in self.q],
        }
        out.update(self.extra)
        return out

    def to_json(self, path=None):
        text = json.dumps(self.json_dict(), indent=1) + "\n"
        if path is None:
            return text
        with open(path, "w") as f:
            f.write(text)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["x", "q"])
        for x, v in enumerate(self.q):
            w.writerow([x, repr(float(v))])
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="") as f:
            f.write(buf.getvalue())

    def __repr__(self):
        return (f"QueueDist(mean={self.mean:.5f}, xmax={self.xmax}, "
                f"converged={self.converged})")


def dist_mean(dist):
    """Mean queue length sum_x x*q(x) of a QueueDist or plain vector."""
    if isinstance(dist, QueueDist):
        return dist.mean
    q = np.asarray(dist, dtype=float)
    return float(np.dot(np.arange(len(q)), q))


def qdist_from_tail(q_pos, params, converged=True, extra=None):
    """Build a QueueDist from q(1..xmax), defining q(0) = 1 - sum."""
    q_pos = np.asarray(q_pos, dtype=float)
    q = np.empty(len(q_pos) + 1)
    q[0] = 1.0 - q_pos.sum()
    q[1:] = q_pos
    return QueueDist(q, params=params, converged=converged, extra=extra)


def safe_ratio(num, den, eps=EPS_DIV):
    """Elementwise num/den with 0/0 -> 0 below the denominator threshold."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=np.abs(den) >= eps)
    return out
