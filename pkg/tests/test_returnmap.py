import json

import numpy as np
import pytest

from relaxcycle.model import Params, m_tilde
from relaxcycle.integrate import SectionWindowError
from relaxcycle.returnmap import (SectionSpec, DEFAULT_HALF_WIDTH, q0_asymptotic, manifold_anchors,
                                  section_specs, pi0, pi1, pi, pi0_reduced, find_limit_cycle,
                                  image_diameter)
from relaxcycle.experiments import Orbit
from relaxcycle.singular import DEFAULT_DELTA, RegimeError, wcu_q6

from conftest import limit_cycle, specs

A, XI = 0.8, 0.5


def test_section_spec_helpers():
    s = SectionSpec("S", 1, 0.5, -1, (1.0, -2.0))
    assert s.level == 2.0 and s.free == (0, 2)
    np.testing.assert_array_equal(s.lift([3.0, 4.0]), [3.0, 2.0, 4.0])
    np.testing.assert_array_equal(s.reduce([3.0, 2.0, 4.0]), [3.0, 4.0])
    assert s.contains([1.4, -2.4]) and not s.contains([1.6, -2.0])
    assert s.grid(3).shape == (9, 2)
    with pytest.raises(ValueError):
        SectionSpec("S", 1, 0.0, -1, (0.0, 0.0))


def test_anchors_lie_on_sections_and_near_asymptotics():
    p = Params(A, XI)
    q0, q1 = manifold_anchors(p)
    assert q0[1] == 1 / DEFAULT_DELTA and q1[2] == 1 / DEFAULT_DELTA
    assert abs(q0[0] + XI * q0[1] + q0[2]) < 1e-12
    # the two-term seed is only accurate far out on the section
    curve = wcu_q6(p)
    errs = [abs(curve.z_at_y(1 / d) - q0_asymptotic(p, d)[2]) for d in (0.5, 0.05, 0.01)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.05
    with pytest.raises(RegimeError):
        manifold_anchors(Params(0.4, XI))


def test_pi0_close_to_reduced_map():
    p = Params(A, XI, 1e-4)
    sp = specs(A, XI)
    for v in [sp[0].center, np.array(sp[0].center) + [0.2, 0.3]]:
        hit = pi0(v, p, sp)
        ref = pi0_reduced(v[0], Params(A, XI))
        assert np.linalg.norm(hit.point - ref) < 0.05


def test_pi0_from_critical_manifold():
    p = Params(A, XI, 1e-4)
    sp = specs(A, XI)
    x = sp[0].center[0]
    z = float(m_tilde(x, sp[0].level, p))
    hit = pi0([x, z], p, sp)
    assert np.linalg.norm(hit.point - pi0_reduced(x, Params(A, XI))) < 0.01


def test_pi0_contracts():
    p = Params(A, XI, 1e-2)
    sp = specs(A, XI)
    a = np.array(sp[0].center)
    b = a + [0.0, 0.3]
    da = np.linalg.norm(pi0(a, p, sp).coords - pi0(b, p, sp).coords)
    assert da / 0.3 < 1.0


def test_pi0_reduced_properties():
    p = Params(A, XI)
    q0, q1 = manifold_anchors(p)
    out = pi0_reduced(q0[0], p)
    assert out[2] == 1 / DEFAULT_DELTA
    assert np.linalg.norm(out - q1) < 1e-6
    # depends only on x: the z input is not an argument, and z is recovered on C
    assert np.array_equal(pi0_reduced(q0[0] + 0.1, p), pi0_reduced(q0[0] + 0.1, p))


def test_pi_raises_outside_window():
    p = Params(A, XI, 1e-2)
    sp = specs(A, XI)
    with pytest.raises(SectionWindowError):
        pi0(np.array(sp[0].center) + [2.0, 0.0], p, sp)
    with pytest.raises(ValueError):
        pi0(sp[0].center, Params(A, XI), sp)


def test_pi1_image_shrinks_and_centres_on_q0():
    sp = specs(A, XI)
    q0 = np.array(sp[0].center)
    diam, dist = [], []
    for eps in (1e-2, 1e-3, 1e-4):
        p = Params(A, XI, eps)
        diam.append(image_diameter(p, sp))
        c = pi1(sp[1].center, p, sp, check_window=False).coords
        dist.append(np.linalg.norm(c - q0))
    assert diam[0] > diam[1] > diam[2]
    assert dist[0] > dist[1] > dist[2]


def test_limit_cycle_at_reference_parameters():
    lc = limit_cycle(A, XI, 1e-2)
    assert lc.converged and lc.stable
    assert lc.closure < 1e-8
    assert lc.min_z < -1.0
    x = lc.orbit_affine()
    assert x[:, 2].max() >= 1 / DEFAULT_DELTA - 1e-9
    assert x[:, 1].max() >= 1 / DEFAULT_DELTA - 1e-9


def test_probe_pairs_contract():
    p = Params(A, XI, 1e-2)
    sp = specs(A, XI)
    c = np.array(sp[0].center)
    for d in ([0.2, 0.0], [0.0, 0.2], [-0.15, 0.1]):
        u1, u2 = c, c + np.array(d)
        r1 = pi(u1, p, sp)[1].coords
        r2 = pi(u2, p, sp)[1].coords
        assert np.linalg.norm(r1 - r2) < np.linalg.norm(u1 - u2)


def test_fixed_point_independent_of_start():
    p = Params(A, XI, 1e-2)
    sp = specs(A, XI)
    ref = limit_cycle(A, XI, 1e-2).fixed_point
    other = find_limit_cycle(p, specs=sp, start=np.array(sp[0].center) + [-0.15, 0.1])
    assert np.linalg.norm(other.fixed_point - ref) < 1e-6


def test_period_grows_as_eps_decreases():
    assert limit_cycle(A, XI, 1e-3).period > limit_cycle(A, XI, 1e-2).period


def test_regime_guard():
    with pytest.raises(RegimeError):
        find_limit_cycle(Params(0.4, XI, 1e-2))


def test_exports_round_trip():
    lc = limit_cycle(A, XI, 1e-2)
    d = json.loads(lc.to_json())
    assert d["converged"] and d["period"] == lc.period
    orb = Orbit.from_csv(lc.to_csv())
    np.testing.assert_array_equal(orb.affine, lc.orbit_affine())
