import numpy as np
import pytest

from redq.model import ModelParams
from redq.pair_ps import PairState, ps_buddy_rate
from redq.triplet_ps import (
    TripletState,
    cond_degree,
    cond_degree_triplet,
    helper_rate_end,
    helper_rate_middle,
    triplet_fixed_point,
    triplet_rhs,
)


def params(lam, xmax=30):
    return ModelParams(lam=lam, d=2, discipline="ps", xmax=xmax)


def reference_graph_state():
    # hand-checkable configuration: 10 servers, 5 jobs, degrees
    # q(1)=0.5, q(2)=0.2, q(3)=0.1; chain counts written out per definition
    X = 4
    c = np.zeros((X, X - 1, X))

    def setc(x, y, z, v):
        c[x - 1, y - 2, z - 1] = v
        c[z - 1, y - 2, x - 1] = v

    setc(1, 2, 2, 1 / 20)
    setc(1, 3, 2, 1 / 10)
    setc(1, 3, 1, 1 / 10)
    setc(3, 2, 2, 1 / 20)
    return TripletState(c, 1 / 10)


def random_end_symmetric(rng, X, scale=0.1):
    c = rng.random((X, X - 1, X))
    c *= np.exp(-0.25 * (np.arange(X)[:, None, None] + np.arange(X - 1)[None, :, None]
                         + np.arange(X)[None, None, :]))
    c = scale * (c + c.transpose(2, 1, 0)) / c.sum()
    return TripletState(c, scale * rng.random() * 0.1)


def pa_state(rng, X):
    # chain law factorized through the middle: c(x,y,z) = (y-1) pi(x,y) pi(y,z) / pi(y)
    m = rng.random((X, X)) + 0.05
    pi = 0.2 * (m + m.T) / m.sum()
    pi_col = pi.sum(axis=0)
    ys = np.arange(2, X + 1)
    c = (ys - 1.0)[None, :, None] * pi[:, 1:, None] * pi.T[None, 1:, :] / pi_col[None, 1:, None]
    return TripletState(c, pi[0, 0]), pi


def test_empty_state_rhs():
    p = params(0.9, xmax=10)
    dc, d11 = triplet_rhs(TripletState.empty(10), p)
    assert d11 == pytest.approx(p.lam, rel=1e-14)
    assert np.abs(dc).max() == 0.0


def test_reference_graph_degrees():
    st = reference_graph_state()
    q = st.q_full()
    assert q[1] == pytest.approx(0.5)
    assert q[2] == pytest.approx(0.2)
    assert q[3] == pytest.approx(0.1)


def test_reference_graph_conditionals():
    st = reference_graph_state()
    assert cond_degree(st, 2, 1) == pytest.approx(1 / 5)
    assert cond_degree(st, 1, 2) == pytest.approx(1 / 4)


def test_cond_degree_empty_state_is_zero():
    st = TripletState.empty(6)
    for x in range(1, 7):
        for y in range(1, 7):
            assert cond_degree(st, x, y) == 0.0


def test_cond_degree_triplet_single_chain():
    X = 4
    c = np.zeros((X, X - 1, X))
    c[0, 0, 2] = c[2, 0, 0] = 0.3
    st = TripletState(c, 0.0)
    assert cond_degree_triplet(st, 3, 1, 2, 3) == pytest.approx(0.5)


def test_cond_degree_triplet_normalizes_and_is_end_symmetric():
    rng = np.random.default_rng(2)
    st = random_end_symmetric(rng, 8)
    for (x, y, z) in [(1, 2, 3), (4, 5, 2), (8, 8, 8), (2, 3, 2)]:
        total = sum(cond_degree_triplet(st, v, x, y, z) for v in range(1, 9))
        assert total == pytest.approx(1.0, abs=1e-12)
        for v in (1, 3, 7):
            assert cond_degree_triplet(st, v, x, y, z) == \
                pytest.approx(cond_degree_triplet(st, v, z, y, x), abs=1e-15)


def test_cond_degree_triplet_rejects_end_middle():
    st = TripletState.empty(4)
    with pytest.raises(ValueError):
        cond_degree_triplet(st, 1, 1, 1, 2)


FIXED_POINTS = {
    # lam -> (mean, q(1)); X=30 and X=50 agree to all shown digits
    0.9: (3.3894, 0.14020),
    0.7: (1.4845, 0.28279),
    0.5: (0.78149, 0.30358),
}


@pytest.mark.parametrize("lam", sorted(FIXED_POINTS))
def test_fixed_point(lam):
    mean, q1 = FIXED_POINTS[lam]
    dist = triplet_fixed_point(params(lam))
    assert dist.converged
    assert dist.mean == pytest.approx(mean, abs=1e-4)
    assert dist.q[1] == pytest.approx(q1, rel=5e-4)
    # unlike the pair system, the chain closure does not conserve jobs
    # exactly, so q(0) carries a small structural bias at the fixed point
    # (see README notes on reference-value deviations)
    assert abs(dist.q[0] - (1.0 - lam)) < 5e-5


def test_fixed_point_tail_probability():
    dist = triplet_fixed_point(params(0.9))
    assert dist.q[10] == pytest.approx(7.8059e-3, rel=5e-4)


@pytest.mark.slow
def test_fixed_point_full_truncation_matches():
    a = triplet_fixed_point(params(0.9))
    b = triplet_fixed_point(params(0.9, xmax=50))
    assert abs(a.mean - b.mean) < 1e-4
    assert abs(a.q[1] - b.q[1]) < 1e-6


def test_fixed_point_is_stationary_and_end_symmetric():
    p = params(0.7)
    dist, st = triplet_fixed_point(p, return_state=True)
    assert dist.extra["sup_rhs"] < 1e-9
    assert st.max_end_asymmetry < 1e-12
    dc, d11 = triplet_rhs(st, p)
    assert max(np.abs(dc).max(), abs(d11)) < 1e-9


def test_rhs_matches_scalar_brute_force():
    # rebuild the per-entry derivative from the scalar conditional-degree
    # operations; guards the vectorized index gymnastics
    rng = np.random.default_rng(17)
    X = 6
    p = params(0.8, xmax=X)
    st = random_end_symmetric(rng, X)
    c, pi11 = st.c, st.pi11
    q = st.q_full()

    def C(x, y, z):
        if x < 1 or y < 2 or z < 1 or x > X or y > X or z > X:
            return 0.0
        return c[x - 1, y - 2, z - 1]

    def K(y, x):
        return helper_rate_end(st, y, x) if 2 <= x <= X else 0.0

    def L(x, y, z):
        if not (2 <= y <= X):
            return 0.0
        return (y - 2) * sum(cond_degree_triplet(st, v, x, y, z) / v
                             for v in range(1, X + 1))

    want = np.zeros_like(c)
    for x in range(1, X + 1):
        for y in range(2, X + 1):
            for z in range(1, X + 1):
                v = p.lam * q[x - 1] * q[y - 1] * cond_degree(st, z, y - 1) * (y - 1)
                v += p.lam * q[y - 1] * q[z - 1] * cond_degree(st, x, y - 1) * (y - 1)
                v += -6 * p.lam * C(x, y, z) + 2 * p.lam * (
                    C(x - 1, y, z) + C(x, y - 1, z) + C(x, y, z - 1))
                v += -3 * C(x, y, z) + C(x + 1, y, z) * x / (x + 1) \
                    + C(x, y + 1, z) * (y - 1) / (y + 1) + C(x, y, z + 1) * z / (z + 1)
                v -= C(x, y, z) * (K(y, x) + K(y, z) + L(x, y, z))
                v += C(x + 1, y, z) * K(y, x + 1) + C(x, y, z + 1) * K(y, z + 1)
                v += C(x, y + 1, z) * L(x, y + 1, z)
                want[x - 1, y - 2, z - 1] = v
    want11 = p.lam * q[0] ** 2 - (2 + 4 * p.lam) * pi11 \
        + 2 * sum(C(1, 2, x) * (0.5 + 1.0 / x) for x in range(1, X + 1))

    dc, d11 = triplet_rhs(st, p)
    np.testing.assert_allclose(dc, want, rtol=0, atol=1e-14)
    assert d11 == pytest.approx(want11, abs=1e-14)


def test_rhs_preserves_end_symmetry():
    rng = np.random.default_rng(5)
    p = params(0.85, xmax=8)
    for _ in range(10):
        st = random_end_symmetric(rng, 8)
        dc, _ = triplet_rhs(st, p)
        assert np.abs(dc - dc.transpose(2, 1, 0)).max() < 1e-15


def test_rejects_wrong_d():
    with pytest.raises(ValueError):
        triplet_fixed_point(ModelParams(lam=0.5, d=3, discipline="ps"))


def test_pa_state_recovers_pair_marginal():
    rng = np.random.default_rng(7)
    st, pi = pa_state(rng, 9)
    np.testing.assert_allclose(st.pair_marginal(), pi, rtol=1e-12, atol=1e-15)


def test_pa_state_helper_rates_collapse_to_buddy_rate():
    # factorized chains carry no extra information: both helper rates reduce
    # to the pair buddy rate of the node they act on
    rng = np.random.default_rng(7)
    X = 9
    st, pi = pa_state(rng, X)
    pair = PairState(pi)
    for y in range(2, X):
        h = ps_buddy_rate(pair, y)
        for x in (1, 2, 5, X - 1):
            assert helper_rate_end(st, x, y) == pytest.approx(h, abs=1e-10)
            if y >= 3:
                assert helper_rate_middle(st, x, y) == pytest.approx(h, abs=1e-10)
            else:
                assert helper_rate_middle(st, x, y) == 0.0


def test_fixed_point_marginal_feeds_buddy_rate():
    dist, st = triplet_fixed_point(params(0.5), return_state=True)
    pair = PairState(st.pair_marginal())
    for x in range(1, 31):
        h = ps_buddy_rate(pair, x)
        assert np.isfinite(h)
        assert h >= 0.0
