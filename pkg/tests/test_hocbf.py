import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from payload_nmpc.errors import DegenerateDistance
from payload_nmpc.hocbf import (HocbfParams, Obstacle, barrier, barrier_values, barrier_values_and_grad,
                                invariance_monitor, psi1, psi2, psi2_closed_form)
from payload_nmpc.scenario import load_scenario, resolve_scenario
from payload_nmpc.spatial import finite_difference_jacobian

P = HocbfParams(0.5, 0.4, 0.04)
ORIGIN = Obstacle(np.zeros(2), 1)


def _body_at(x, y):
    s = np.zeros(12)
    s[0:2] = [x, y]
    return s


def _global_with_body(body, xy):
    x = np.zeros(36)
    x[[0, 1, 12, 13, 24, 25]] = 50.0
    x[12 * body:12 * body + 2] = xy
    return x


def test_params_validation():
    for bad in ((0.0, 0.4, 0.04), (0.5, 1.0, 0.04), (0.5, 0.4, 0.0), (0.5, -0.1, 0.5)):
        with pytest.raises(ValueError):
            HocbfParams(*bad)
    with pytest.raises(ValueError):
        Obstacle(np.array([np.nan, 0.0]))


def test_barrier_values():
    assert barrier(_body_at(1, 0), ORIGIN, P) == pytest.approx(0.5)
    assert barrier(_body_at(0.3, 0.4), ORIGIN, P) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DegenerateDistance):
        barrier(_body_at(0, 0), ORIGIN, P)


def test_barrier_selects_body():
    for b in range(3):
        assert barrier(_global_with_body(b, [2.0, 0.0]), ORIGIN, P, body=b) == pytest.approx(1.5)


def test_d_th_from_bundled_scenarios():
    assert load_scenario(resolve_scenario("experiment1_nominal")).d_th_m == 0.5
    assert load_scenario(resolve_scenario("experiment2_mass")).d_th_m == 0.6
    assert load_scenario(resolve_scenario("experiment3_push")).d_th_m == 0.6


def test_psi1_examples():
    x = _body_at(2.5, 0)
    assert psi1(x, x, 0, ORIGIN, P) == pytest.approx(0.8)
    # h decaying at exactly rate alpha1: h1 = 0.6 h0
    assert psi1(_body_at(2.5, 0), _body_at(0.5 + 0.6 * 2.0, 0), 0, ORIGIN, P) == pytest.approx(0.0, abs=1e-14)


def test_psi_term_by_term(rng):
    for _ in range(100):
        xs = [rng.uniform(-3, 3, 36) for _ in range(3)]
        o = Obstacle(rng.uniform(-1, 1, 2))
        b = int(rng.integers(3))
        h = [np.linalg.norm(x[12 * b:12 * b + 2] - o.position) - P.d_th for x in xs]
        p0 = (h[1] - h[0]) + P.alpha1_gain * h[0]
        p1 = (h[2] - h[1]) + P.alpha1_gain * h[1]
        assert psi1(xs[0], xs[1], b, o, P) == pytest.approx(p0, abs=1e-12)
        assert psi2(*xs, b, o, P) == pytest.approx((p1 - p0) + P.alpha2_gain * p0, abs=1e-12)


def test_psi2_static():
    x = _body_at(2.5, 0)
    assert psi2(x, x, x, 0, ORIGIN, P) == pytest.approx(0.032)


@given(st.floats(-0.49, 5), st.floats(-0.49, 5), st.floats(-0.49, 5), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_psi2_closed_form(h0, h1, h2, a1, a2):
    p = HocbfParams(0.5, a1, a2)
    xs = [_body_at(h + 0.5 + 10.0, 0) for h in (h0, h1, h2)]
    o = Obstacle(np.array([10.0, 0.0]))
    assert abs(psi2(*xs, 0, o, p) - psi2_closed_form(h0, h1, h2, p)) < 1e-12


@given(st.floats(0.01, 5.0), st.floats(0.001, 0.039))
def test_psi2_positive_for_slow_geometric_decay(h0, a):
    h = [h0 * (1 - a) ** k for k in range(3)]
    assert psi2_closed_form(*h, P) > 0


def test_psi2_boundary_scan():
    # 1-D double integrator moving towards an obstacle at the origin
    dt, p0, v0 = 0.1, 2.0, -1.5
    o = Obstacle(np.array([0.0, 0.0]))

    def states(u):
        p1 = p0 + dt * v0
        p2 = p1 + dt * (v0 + dt * u)
        return [_body_at(p, 0.0) for p in (p0, p1, p2)]

    h0, h1 = p0 - P.d_th, p0 + dt * v0 - P.d_th
    # psi2 = h2 - c1 h1 + c0 h0 = 0 with h2 = p0 + 2 dt v0 + dt^2 u - d_th
    c1, c0 = 2 - P.alpha1_gain - P.alpha2_gain, (1 - P.alpha1_gain) * (1 - P.alpha2_gain)
    u_star = (c1 * h1 - c0 * h0 - (p0 + 2 * dt * v0 - P.d_th)) / dt ** 2
    assert abs(psi2(*states(u_star), 0, o, P)) < 1e-12
    grid = np.linspace(u_star - 5, u_star + 5, 1001)
    vals = np.array([psi2(*states(u), 0, o, P) for u in grid])
    crossing = grid[np.nonzero(np.diff(np.sign(vals)))[0]]
    assert len(crossing) == 1 and abs(crossing[0] - u_star) <= grid[1] - grid[0]
    assert vals[0] < 0 < vals[-1]


def test_barrier_gradient_fd(rng):
    for _ in range(100):
        x = rng.uniform(-3, 3, 36)
        obs = rng.uniform(-1, 1, (4, 2))
        h, dh = barrier_values_and_grad(x[None], obs, 0.5)
        assert np.allclose(h, barrier_values(x[None], obs, 0.5))
        fd = finite_difference_jacobian(lambda z: barrier_values(z[None], obs, 0.5).ravel(), x)
        an = np.zeros((12, 36))
        for b, cols in enumerate(((0, 1), (12, 13), (24, 25))):
            for l in range(4):
                an[b * 4 + l, list(cols)] = dh[0, b, l]
        assert np.abs(an - fd).max() < 1e-5


def test_monitor_static_far():
    t = np.arange(50) / 60
    x = np.tile(_global_with_body(0, [40.0, 0.0]), (50, 1))
    rep = invariance_monitor(t, x, [ORIGIN], P)
    assert rep.violations == [] and rep.psi1_violations == [] and rep.classification() == "none"
    assert set(rep.min_psi0) == {"1,1", "2,1", "L,1"}


def test_monitor_transient_dip():
    t = np.arange(60) / 60
    r = np.full(60, 2.0)
    r[20:23] = 0.48
    x = np.zeros((60, 36))
    x[:, [0, 12, 24]] = 50.0
    x[:, 0] = r
    rep = invariance_monitor(t, x, [ORIGIN], P)
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert v.body == "1" and v.obstacle == 1 and v.recovered and v.min_value == pytest.approx(-0.02)
    assert v.is_transient(0.5) and rep.classification() == "transient"


def test_monitor_persistent_when_not_recovered():
    t = np.arange(60) / 60
    x = np.zeros((60, 36))
    x[:, [12, 24]] = 50.0
    x[:, 0] = np.linspace(2.0, 0.3, 60)
    rep = invariance_monitor(t, x, [ORIGIN], P)
    assert rep.classification() == "persistent" and rep.n_persistent == 1
