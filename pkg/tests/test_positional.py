import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redq.meanfield import mf_rhs
from redq.model import ModelParams
from redq.ode import IntegratorConfig, euler_integrate
from redq.pair_ps import pair_ps_fixed_point, pair_ps_rhs
from redq.positional import (
    PositionalState,
    kappa,
    lps_p1,
    lps_psi,
    lps_rates,
    positional_fixed_point,
    positional_ode_system,
    positional_rhs,
)


def params(lam, discipline, K=1, xmax=8):
    return ModelParams(lam=lam, d=2, discipline=discipline, K=K, xmax=xmax)


def random_state(rng, X, discipline, K=1, scale=0.05, symmetric=True):
    decay = np.exp(-0.3 * np.arange(X))
    v = rng.random((X,) * 4)
    v *= decay[:, None, None, None] * decay[None, :, None, None]
    v *= decay[None, None, :, None] * decay[None, None, None, :]
    if symmetric:
        v = v + v.transpose(1, 0, 3, 2)
    s = PositionalState(scale * v, discipline, K)
    s.v[~s.mask()] = 0.0
    return s


def product_state(q_tail, discipline, K=1):
    """Independent replicas with positions spread the way the discipline
    fills its slots (uniform over 1..x2; LPS lumps min(K, x2) jobs into the
    service slot). Plugging a product law into any of the kernels must
    reproduce the queue-length mean-field dynamics."""
    X = len(q_tail)
    a = np.zeros((X, X))
    for i2 in range(X):
        x2 = i2 + 1
        if discipline == "lps":
            a[0, i2] = min(K, x2) * q_tail[i2] / 2.0
            a[1:max(1, x2 - K + 1), i2] = q_tail[i2] / 2.0
        else:
            a[:x2, i2] = q_tail[i2] / 2.0
    v = 2.0 * np.einsum("ab,cd->acbd", a, a) / (2.0 * a.sum())
    return PositionalState(v, discipline, K)


def direct_rhs(s, p):
    """Entry-by-entry transcription of the three kernels using the scalar
    helpers; the vectorised gather engine must agree everywhere."""
    X = s.xmax
    lam, K = p.lam, p.K
    v = s.v
    sy = s.swapped()
    qx = s.q_full()
    qy = sy.q_full()

    def g(a, b, c, e):
        if min(a, b, c, e) < 1 or max(a, b, c, e) > X:
            return 0.0
        return v[a - 1, b - 1, c - 1, e - 1]

    def slot1(x2):
        # position a fresh arrival lands on in a queue now of length x2
        if p.discipline == "lcfs":
            return 1
        if p.discipline == "lps":
            return 1 + max(0, x2 - K)
        return x2

    out = np.zeros((X,) * 4)
    for x1 in range(1, X + 1):
        for y1 in range(1, X + 1):
            for x2 in range(1, X + 1):
                for y2 in range(1, X + 1):
                    cur = g(x1, y1, x2, y2)
                    acc = -4.0 * lam * cur
                    if x1 == slot1(x2) and y1 == slot1(y2):
                        acc += lam * qx[x2 - 1] * qy[y2 - 1]
                    if p.discipline == "lcfs":
                        acc += 2.0 * lam * g(x1 - 1, y1, x2 - 1, y2)
                        acc += 2.0 * lam * g(x1, y1 - 1, x2, y2 - 1)
                    else:
                        acc += 2.0 * lam * g(x1, y1, x2 - 1, y2)
                        acc += 2.0 * lam * g(x1, y1, x2, y2 - 1)
                    for st_, pos, ln, src in (
                        (s, x1, x2, lambda a, c: g(a, y1, c, y2)),
                        (sy, y1, y2, lambda a, c: g(x1, a, x2, c)),
                    ):
                        if p.discipline in ("fcfs", "lcfs"):
                            own = kappa(st_, pos, ln) - kappa(st_, pos - 1, ln)
                            acc -= cur * (1.0 + kappa(st_, ln, ln) - own)
                            if ln < X:
                                acc += src(pos + 1, ln + 1) * (
                                    1.0 + kappa(st_, pos, ln + 1))
                                acc += src(pos, ln + 1) * (
                                    kappa(st_, ln + 1, ln + 1)
                                    - kappa(st_, pos, ln + 1))
                        else:
                            served = 1 + max(0, ln - K)
                            acc -= cur * (1.0 + lps_psi(st_, K, served, ln)
                                          - lps_rates(st_, K, pos, ln))
                            if ln < X:
                                acc += src(pos + 1, ln + 1) * (
                                    1.0 + lps_psi(st_, K, pos, ln + 1))
                                if pos == 1:
                                    acc += src(1, ln + 1) * (
                                        lps_p1(K, ln + 1)
                                        + lps_psi(st_, K,
                                                  1 + max(0, ln + 1 - K),
                                                  ln + 1)
                                        - lps_rates(st_, K, 1, ln + 1))
                                else:
                                    acc += src(pos, ln + 1) * (
                                        lps_psi(st_, K, ln - K + 2, ln + 1)
                                        - lps_psi(st_, K, pos, ln + 1))
                    out[x1 - 1, y1 - 1, x2 - 1, y2 - 1] = acc
    return out


# --------------------------------------------------------------------------
# kernel structure


@pytest.mark.parametrize("disc,K", [("fcfs", 1), ("lps", 2), ("lcfs", 1)])
def test_empty_state_rhs_is_pure_creation(disc, K):
    X = 6
    p = params(0.9, disc, K=K, xmax=X)
    r = positional_rhs(PositionalState.empty(X, disc, K), p)
    # fresh jobs land in two empty queues, both replicas at position 1
    assert r[0, 0, 0, 0] == pytest.approx(p.lam, rel=1e-14)
    r[0, 0, 0, 0] = 0.0
    assert np.abs(r).max() == 0.0


@pytest.mark.parametrize("disc,K,seed,symmetric", [
    ("fcfs", 1, 0, True), ("fcfs", 1, 1, False),
    ("lcfs", 1, 2, True), ("lcfs", 1, 3, False),
    ("lps", 2, 4, True), ("lps", 2, 5, False), ("lps", 3, 6, True),
])
def test_rhs_matches_direct_sums(disc, K, seed, symmetric):
    X = 6
    rng = np.random.default_rng(seed)
    s = random_state(rng, X, disc, K=K, symmetric=symmetric)
    p = params(0.8, disc, K=K, xmax=X)
    assert np.abs(positional_rhs(s, p) - direct_rhs(s, p)).max() < 1e-12


def test_lps_window_one_kernel_is_fcfs():
    X = 8
    rng = np.random.default_rng(5)
    pf = params(0.85, "fcfs", xmax=X)
    pl = params(0.85, "lps", K=1, xmax=X)
    for _ in range(10):
        sf = random_state(rng, X, "fcfs", symmetric=False)
        sl = PositionalState(sf.v.copy(), "lps", 1)
        gap = np.abs(positional_rhs(sf, pf) - positional_rhs(sl, pl)).max()
        assert gap < 1e-12


def test_lps_full_window_kernel_is_pair_ps():
    # window as wide as the state space: nothing ever waits, the in-service
    # slab (1, 1, :, :) must evolve exactly like the PS pair matrix
    X = 10
    rng = np.random.default_rng(3)
    m = rng.random((X, X))
    m = 0.03 * (m + m.T)
    v = np.zeros((X,) * 4)
    v[0, 0] = m
    s = PositionalState(v, "lps", X)
    r = positional_rhs(s, params(0.7, "lps", K=X, xmax=X))
    dpi = pair_ps_rhs(m, params(0.7, "ps", xmax=X))
    slab = r[0, 0].copy()
    r[0, 0] = 0.0
    assert np.abs(slab - dpi).max() < 1e-13
    assert np.abs(r).max() == 0.0


@pytest.mark.parametrize("disc,K", [("fcfs", 1), ("lps", 2), ("lcfs", 1)])
def test_swap_equivariance(disc, K):
    X = 7
    rng = np.random.default_rng(11)
    p = params(0.8, disc, K=K, xmax=X)
    for _ in range(5):
        s = random_state(rng, X, disc, K=K, symmetric=False)
        r = positional_rhs(s, p)
        r_sw = positional_rhs(s.swapped(), p)
        assert np.abs(r_sw - r.transpose(1, 0, 3, 2)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lam=st.floats(0.2, 0.95),
       disc=st.sampled_from(["fcfs", "lps", "lcfs"]), K=st.integers(1, 4))
def test_mass_balance_any_state(seed, lam, disc, K):
    # total-mass account: creation against completed jobs (a replica in a
    # service slot finishes at its PS share) and arrival shifts off the
    # truncation edge; must close for arbitrary states, not just consistent
    # ones
    X = 7
    rng = np.random.default_rng(seed)
    s = random_state(rng, X, disc, K=K, symmetric=False)
    p = params(lam, disc, K=K, xmax=X)
    r = positional_rhs(s, p)
    w = 1.0 / np.minimum(K if disc == "lps" else 1, np.arange(1, X + 1))
    death = float(s.v[0].sum(axis=(0, 2)) @ w)
    death += float(s.v[:, 0].sum(axis=(0, 1)) @ w)
    creation = lam * (1.0 - s.q_tail()[-1]) * (1.0 - s.swapped().q_tail()[-1])
    leak = 2.0 * lam * (s.v[:, :, X - 1, :].sum() + s.v[:, :, :, X - 1].sum())
    assert float(r.sum()) == pytest.approx(creation - death - leak, abs=1e-10)


@pytest.mark.parametrize("disc,K", [("fcfs", 1), ("lcfs", 1), ("lps", 3)])
def test_product_state_collapses_to_meanfield(disc, K):
    X, lam = 12, 0.7
    qt = np.zeros(X)
    qt[:X - 2] = 0.4 * 0.55 ** np.arange(X - 2)
    s = product_state(qt, disc, K)
    assert s.off_mask_mass() == 0.0
    r = positional_rhs(s, params(lam, disc, K=K, xmax=X))
    dq = 2.0 * r.sum(axis=(0, 1, 3)) / np.arange(1, X + 1)
    dq_mf = mf_rhs(s.q_full(), params(lam, "ps", xmax=X))
    assert np.abs(dq - dq_mf)[:X - 2].max() < 1e-12


# --------------------------------------------------------------------------
# scalar closure helpers


def test_kappa_trivial_cases():
    s = PositionalState.empty(5, "fcfs")
    assert kappa(s, 0, 3) == 0.0
    assert kappa(s, 3, 3) == 0.0  # empty slots contribute 0, not 0/0


def test_kappa_counts_certain_buddies():
    # every slot of a length-4 queue holds a job whose buddy is in service:
    # each slot contributes exactly 1
    X = 5
    s = PositionalState.empty(X, "fcfs")
    for xp in range(1, 5):
        s.v[xp - 1, 0, 3, 2] = 0.1
    for a in range(5):
        assert kappa(s, a, 4) == pytest.approx(float(a), rel=1e-14)


def test_kappa_on_product_state_is_linear():
    X = 10
    qt = np.zeros(X)
    qt[:X - 2] = 0.3 * 0.6 ** np.arange(X - 2)
    s = product_state(qt, "fcfs")
    q0 = 1.0 - qt.sum()
    per_slot = (1.0 - q0) / s.qbar
    for xb in range(1, X - 2):
        for xa in range(xb + 1):
            assert kappa(s, xa, xb) == pytest.approx(xa * per_slot, rel=1e-12)


def test_lps_p1_values():
    assert lps_p1(1, 5) == 0.0
    assert lps_p1(2, 5) == 0.5
    assert lps_p1(3, 2) == 0.5  # only 2 jobs present, window of 3
    assert lps_p1(4, 10) == 0.75


def test_lps_rates_ps_share():
    # buddy sits in service of a length-3 queue under LPS(2): it completes
    # at the shared rate 1/2
    X = 4
    s = PositionalState.empty(X, "lps", K=2)
    s.v[0, 0, 2, 2] = 0.3
    assert lps_rates(s, 2, 1, 3) == pytest.approx(0.5, rel=1e-14)
    # half the buddies waiting instead: the average rate drops to 1/4
    s.v[0, 1, 2, 2] = 0.3
    assert lps_rates(s, 2, 1, 3) == pytest.approx(0.25, rel=1e-14)


def test_lps_psi_window_one_is_kappa():
    X = 7
    rng = np.random.default_rng(9)
    s = random_state(rng, X, "lps", K=1)
    for xb in range(1, X + 1):
        for xa in range(X + 1):
            assert lps_psi(s, 1, xa, xb) == pytest.approx(
                kappa(s, xa, xb), abs=1e-12)


# --------------------------------------------------------------------------
# fixed points


_heavy_cache = {}


def heavy_solution(disc):
    # one xmax=30 solve per discipline, shared across the checks below
    if disc not in _heavy_cache:
        p = ModelParams(lam=0.9, d=2, discipline=disc,
                        K=2 if disc == "lps" else 1, xmax=30)
        dist, state = positional_fixed_point(p, return_state=True)
        _heavy_cache[disc] = (p, dist, state)
    return _heavy_cache[disc]


HEAVY_ROWS = {
    "fcfs": dict(mean=3.0965, q1=0.14921, q10=3.0484e-3),
    "lps": dict(mean=3.2166, q1=0.14484),
    "lcfs": dict(mean=3.6966, q1=0.13135),
}


@pytest.mark.slow
@pytest.mark.parametrize("disc", ["fcfs", "lps", "lcfs"])
def test_heavy_load_fixed_point_rows(disc):
    p, dist, state = heavy_solution(disc)
    row = HEAVY_ROWS[disc]
    assert dist.converged
    assert dist.extra["sup_rhs"] <= 1e-10
    assert dist.mean == pytest.approx(row["mean"], abs=1.5e-3)
    assert dist.q[1] == pytest.approx(row["q1"], abs=1e-4)
    if "q10" in row:
        assert dist.q[10] == pytest.approx(row["q10"], rel=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("disc", ["fcfs", "lps", "lcfs"])
def test_heavy_load_state_invariants(disc):
    p, dist, state = heavy_solution(disc)
    assert dist.q[0] == pytest.approx(1.0 - p.lam, abs=1e-5)
    assert state.off_mask_mass() == 0.0
    assert state.max_swap_asymmetry < 1e-11
    m = state.marginals()
    qt = m.q_tail()
    qtp = m.q_tail_from_pos()
    if disc == "lps":
        # service slots are lumped: the position-count difference recovers
        # the law shifted past the window instead
        qf = state.q_full()
        for x in range(2, p.xmax - p.K + 2):
            assert qtp[x - 1] == pytest.approx(qf[p.K + x - 1], abs=1e-9)
    else:
        assert np.abs(qt - qtp).max() < 1e-9


@pytest.mark.slow
def test_heavy_load_discipline_ordering():
    means = {d: heavy_solution(d)[1].mean for d in ("fcfs", "lps", "lcfs")}
    assert means["fcfs"] < means["lps"] < means["lcfs"]


LOW_ROWS = [
    ("fcfs", 0.5, 0.77233), ("fcfs", 0.7, 1.4379),
    ("lps", 0.5, 0.77895), ("lps", 0.7, 1.4656),
    ("lcfs", 0.5, 0.78945), ("lcfs", 0.7, 1.5259),
]


@pytest.mark.parametrize("disc,lam,expect", LOW_ROWS)
def test_low_load_fixed_point_means(disc, lam, expect):
    p = ModelParams(lam=lam, d=2, discipline=disc,
                    K=2 if disc == "lps" else 1, xmax=20)
    dist = positional_fixed_point(p)
    assert dist.converged
    assert dist.mean == pytest.approx(expect, abs=1.5e-3)
    assert dist.q[0] == pytest.approx(1.0 - lam, abs=1e-5)


def test_lps_window_one_fixed_point_matches_fcfs():
    X = 12
    df = positional_fixed_point(params(0.7, "fcfs", xmax=X))
    dl = positional_fixed_point(params(0.7, "lps", K=1, xmax=X))
    assert np.abs(df.q - dl.q).max() < 1e-8


def test_lps_full_window_fixed_point_is_pair_ps():
    X = 15
    dl, sl = positional_fixed_point(params(0.7, "lps", K=X, xmax=X),
                                    return_state=True)
    dp = pair_ps_fixed_point(params(0.7, "ps", xmax=X))
    assert np.abs(dl.q - dp.q).max() < 1e-6
    v = sl.v.copy()
    v[0, 0] = 0.0
    assert np.abs(v).max() == 0.0


@pytest.mark.parametrize("disc,K", [("fcfs", 1), ("lps", 2), ("lcfs", 1)])
def test_transient_from_empty_stays_consistent(disc, K):
    # along the trajectory the per-slot occupancy bookkeeping must agree
    # with the queue-length law: completed-job flux = busy fraction, and
    # the service slot holds min(K, x2) jobs per length-x2 queue (clamp
    # noise from forward Euler keeps this approximate)
    X, lam = 10, 0.7
    p = ModelParams(lam=lam, d=2, discipline=disc, K=K, xmax=X)
    sys = positional_ode_system(p)
    flat = euler_integrate(sys, np.zeros(sys.dim),
                           IntegratorConfig(dt=0.02, t_max=10.0), 3.0)
    s = PositionalState(flat.reshape((X,) * 4), disc, K)
    assert s.off_mask_mass() == 0.0
    assert s.max_swap_asymmetry < 1e-12
    keff = K if disc == "lps" else 1
    w = 1.0 / np.minimum(keff, np.arange(1, X + 1))
    death = float(s.v[0].sum(axis=(0, 2)) @ w)
    death += float(s.v[:, 0].sum(axis=(0, 1)) @ w)
    q = s.q_full()
    assert death == pytest.approx(1.0 - q[0], abs=5e-6)
    lump = float(np.minimum(keff, np.arange(1, X + 1)) @ q[1:]) / 2.0
    assert s.marginals().pos[0] == pytest.approx(lump, abs=5e-6)


# --------------------------------------------------------------------------
# plumbing


def test_state_to_csv_round_trip(tmp_path):
    s = PositionalState.empty(3, "fcfs")
    s.v[0, 0, 0, 0] = 0.123456789
    s.v[1, 0, 1, 0] = 1e-9
    text = s.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["x1", "y1", "x2", "y2", "value"]
    got = {tuple(map(int, r[:4])): float(r[4]) for r in rows[1:]}
    assert got == {(1, 1, 1, 1): 0.123456789, (2, 1, 2, 1): 1e-9}
    path = tmp_path / "v.csv"
    s.to_csv(path)
    with open(path, newline="") as f:
        assert f.read() == text


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        PositionalState(np.zeros((3, 3, 3)), "fcfs")
    with pytest.raises(ValueError):
        PositionalState(np.zeros((3, 3, 3, 2)), "fcfs")
    with pytest.raises(ValueError):
        PositionalState.empty(3, "ps")
    with pytest.raises(ValueError):
        PositionalState.empty(3, "lps", K=0)
    with pytest.raises(ValueError):
        positional_fixed_point(ModelParams(lam=0.5, d=2, discipline="ps",
                                           xmax=5))
    with pytest.raises(ValueError):
        positional_fixed_point(ModelParams(lam=0.5, d=3, discipline="fcfs",
                                           xmax=5))
    s = PositionalState.empty(5, "fcfs")
    with pytest.raises(ValueError):
        positional_rhs(s, ModelParams(lam=0.5, d=2, discipline="lcfs",
                                      xmax=5))
    with pytest.raises(ValueError):
        positional_rhs(s, ModelParams(lam=0.5, d=2, discipline="fcfs",
                                      xmax=6))
    sl = PositionalState.empty(5, "lps", K=2)
    with pytest.raises(ValueError):
        positional_rhs(sl, ModelParams(lam=0.5, d=2, discipline="lps", K=3,
                                       xmax=5))
