import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from relaxcycle.model import Params, vf_slow
from relaxcycle.compactify import (ChartId, ChartPoint, EquatorError, ChartDomainError, F,
                                   to_sphere, from_sphere, affine_to_phi1, phi1_to_affine,
                                   affine_to_phi3, phi3_to_affine, phi3_to_phi1, phi1_to_phi3,
                                   change_chart, to_sphere_chart, chart_vf, time_rescaling,
                                   pushforward, ChartPolicy, chart_switch_policy,
                                   equator_equilibria, l_infinity_sphere, phi1_vf, phi3_vf)

coord = st.floats(-50, 50, allow_nan=False)


def test_origin_to_north_pole():
    np.testing.assert_array_equal(to_sphere((0, 0, 0)), [0, 0, 0, 1])


def test_sphere_round_trip():
    rng = np.random.default_rng(0)
    pts = rng.normal(scale=10, size=(1000, 3))
    worst = max(np.max(np.abs(from_sphere(to_sphere(s)) - s)) / max(1, np.max(np.abs(s))) for s in pts)
    assert worst < 1e-12
    q = to_sphere(pts[0])
    assert abs(np.dot(q, q) - 1) < 1e-12 and q[3] > 0


def test_equator_has_no_affine_image():
    with pytest.raises(EquatorError):
        from_sphere((1.0, 0.0, 0.0, 0.0))


def test_points_along_L_converge_to_L_infinity():
    p = Params(0.8, 0.5)
    ratio = 0.3
    target = l_infinity_sphere(p, ratio)
    d = [np.linalg.norm(to_sphere(((-1 - p.alpha) * z, ratio * z, z)) - target)
         for z in (10.0, 100.0, 1e3, 1e4)]
    assert all(b < a for a, b in zip(d, d[1:]))
    assert d[-1] < 1e-3


def test_phi3_example():
    np.testing.assert_allclose(affine_to_phi3((1, 2, 4)), [0.25, 0.5, 0.25])


def test_chart_domains():
    with pytest.raises(ChartDomainError):
        affine_to_phi1((1.0, -1.0, 0.0))
    with pytest.raises(ChartDomainError):
        affine_to_phi3((1.0, 1.0, 0.0))


@given(coord, st.floats(0.01, 50), st.floats(0.01, 50))
def test_chart_round_trips(x, y, z):
    s = np.array([x, y, z])
    scale = max(1.0, np.max(np.abs(s)))
    assert np.max(np.abs(phi1_to_affine(affine_to_phi1(s)) - s)) < 1e-12 * scale
    assert np.max(np.abs(phi3_to_affine(affine_to_phi3(s)) - s)) < 1e-12 * scale
    back = phi3_to_affine(phi1_to_phi3(affine_to_phi1(s)))
    assert np.max(np.abs(back - s)) < 1e-12 * scale
    u3 = affine_to_phi3(s)
    u1 = phi3_to_phi1(u3)
    np.testing.assert_allclose(u1, [u3[0] / u3[1], 1 / u3[1], u3[2] / u3[1]], rtol=1e-14)
    np.testing.assert_allclose(change_chart(ChartId.PHI3, ChartId.PHI1, u3), u1, rtol=1e-14)


def test_sphere_from_charts_matches_affine_route():
    s = np.array([-3.0, 2.0, 5.0])
    for c in (ChartId.PHI1, ChartId.PHI3):
        u = change_chart(ChartId.AFFINE, c, s)
        np.testing.assert_allclose(to_sphere_chart(c, u), to_sphere(s), atol=1e-15)


def test_F_series_branch_is_accurate():
    for s in (1e-6, -3e-6, 1e-9, 2e-5):
        assert F(s) == pytest.approx(-math.expm1(-s), rel=1e-14)


def test_equator_equilibria_charts_and_C_infinity():
    p = Params(0.8, 0.5)
    eq = dict(equator_equilibria(p))
    assert set(eq) == {"Q1", "Q3", "Q7", "Q6"}
    q6 = eq["Q6"]
    np.testing.assert_allclose([q6[0] / q6[1], q6[2] / q6[1], q6[3] / q6[1]], [-0.5, 0, 0], atol=1e-15)
    q1 = eq["Q1"]
    np.testing.assert_allclose([q1[0] / q1[2], q1[1] / q1[2], q1[3] / q1[2]], [-1, 0, 0], atol=1e-15)
    for name, q in eq.items():
        assert abs(np.dot(q, q) - 1) < 1e-12
        assert q[3] == 0
        assert abs(q[0] + p.xi * q[1] + q[2]) < 1e-15
    assert eq["Q3"][2] / eq["Q3"][1] == pytest.approx(p.xi / p.alpha)
    assert eq["Q7"][2] / eq["Q7"][1] == pytest.approx(-p.xi)


def test_equator_equilibria_are_fixed_points():
    p = Params(0.8, 0.5, 0.0)
    eq = dict(equator_equilibria(p))
    q6, q1 = eq["Q6"], eq["Q1"]
    u6 = np.array([q6[0], q6[2], q6[3]]) / q6[1]
    u1 = np.array([q1[0], q1[1], q1[3]]) / q1[2]
    assert np.max(np.abs(phi1_vf(u6, p))) < 1e-10
    assert np.max(np.abs(phi3_vf(u1, p))) < 1e-10
    # reduced flow in (z1, w1) at w1 = 0: for z1 > 0 divide by e^z, for z1 < 0 by w1
    z3 = eq["Q3"][2] / eq["Q3"][1]
    z7 = eq["Q7"][2] / eq["Q7"][1]
    assert abs(p.alpha * z3 - p.xi) < 1e-10
    assert abs(p.xi + z7) < 1e-10


def test_policy():
    pol = ChartPolicy()
    assert chart_switch_policy((0, 0, 0)) == ChartId.AFFINE
    assert chart_switch_policy((-30, 2, 20)) == ChartId.PHI3
    assert chart_switch_policy((-30, 40, 20)) == ChartId.PHI1
    # hysteresis: just past R_switch stays affine when already affine
    assert pol.choose((0, 26, 1), ChartId.AFFINE) == ChartId.AFFINE
    assert pol.choose((0, 26, 1), ChartId.PHI1) == ChartId.PHI1
    assert pol.choose((0, 20, 1), ChartId.PHI1) == ChartId.AFFINE
    cp = ChartPoint(ChartId.PHI3, (-1.0, 0.1, 0.01))
    assert chart_switch_policy(cp) == ChartId.PHI3


@pytest.mark.parametrize("chart", [ChartId.PHI1, ChartId.PHI3])
def test_pushforward_collinearity(chart):
    p = Params(0.8, 0.5, 0.01)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        s = rng.uniform([-40, 0.5, 0.5], [40, 30, 30])
        u = change_chart(ChartId.AFFINE, chart, s)
        push = pushforward(chart, s, vf_slow(s, p))
        field = chart_vf(chart, u, p)
        assert np.dot(push, field) > 0
        rel = np.max(np.abs(field - time_rescaling(chart, u, p) * push)) / np.max(np.abs(field))
        worst = max(worst, rel)
    assert worst < 1e-8


def test_pushforward_matches_finite_difference():
    s = np.array([1.5, 2.0, 3.0])
    v = np.array([0.3, -0.2, 0.7])
    for chart in (ChartId.PHI1, ChartId.PHI3):
        h = 1e-6
        fd = (change_chart(ChartId.AFFINE, chart, s + h * v)
              - change_chart(ChartId.AFFINE, chart, s - h * v)) / (2 * h)
        np.testing.assert_allclose(pushforward(chart, s, v), fd, rtol=1e-7, atol=1e-12)
