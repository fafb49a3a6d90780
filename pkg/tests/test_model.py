import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from relaxcycle.model import (Params, ExpRangeError, vf_slow, vf_fast, jacobian_slow,
                              jacobian_fast, m, m_tilde, on_critical_manifold, layer_eigenvalue,
                              vf_reduced, jacobian_reduced, hamiltonian, grad_hamiltonian,
                              poisson_matrix, hamiltonian_vf, dH_dt, hopf_trace, locate_hopf)

finite = st.floats(-3, 3, allow_nan=False)
positive = st.floats(0.05, 3.0)


def fd_jac(f, u, h=1e-6):
    u = np.asarray(u, float)
    cols = []
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h * (1 + abs(u[i]))
        cols.append((f(u + e) - f(u - e)) / (2 * e[i]))
    return np.column_stack(cols)


def test_params_validation_and_regimes():
    with pytest.raises(ValueError):
        Params(-1.0, 0.5)
    with pytest.raises(ValueError):
        Params(0.8, 0.0)
    with pytest.raises(ValueError):
        Params(0.8, 0.5, -1e-3)
    p = Params(0.8, 0.5)
    assert p.is_oscillatory and not p.is_hamiltonian and not p.is_supercritical_amplitude
    assert Params(0.5, 0.5).is_hamiltonian
    assert Params(1.2, 0.5).is_supercritical_amplitude


def test_origin_is_equilibrium():
    for p in (Params(0.8, 0.5, 0.01), Params(0.3, 1.7, 1e-4)):
        assert np.all(vf_slow((0, 0, 0), p) == 0)


def test_hand_evaluated_field():
    out = vf_slow((1.0, 1.0, 0.0), Params(0.8, 0.5, 0.01))
    np.testing.assert_allclose(out, [-1.0, 0.0, -300.0], rtol=1e-14)


@given(finite, finite, positive)
def test_z_dot_vanishes_on_C(y, z, xi):
    p = Params(0.8, xi, 0.01)
    x = m(y, z, p)
    assert abs(vf_slow((x, y, z), p)[2]) <= 1e-12 * math.exp(-z) * (1 + abs(y) + abs(x) / xi)
    assert np.all(np.abs(vf_fast((x, y, z), Params(0.8, xi, 0.0))) <= 1e-12 * math.exp(abs(z)) * 10)


def test_layer_problem():
    p = Params(0.8, 0.5, 0.0)
    s = (0.3, -0.2, 0.7)
    out = vf_fast(s, p)
    assert out[0] == 0 and out[1] == 0
    assert out[2] == pytest.approx(-math.exp(-0.7) * (-0.2 + (0.3 + 0.7) / 0.5))
    with pytest.raises(ValueError):
        vf_slow(s, p)


@given(finite, finite, finite, st.floats(1e-5, 1.0))
def test_fast_is_eps_times_slow(x, y, z, eps):
    p = Params(0.8, 0.5, eps)
    np.testing.assert_allclose(vf_fast((x, y, z), p), eps * vf_slow((x, y, z), p), rtol=1e-13, atol=1e-300)


def test_graphs():
    p = Params(0.8, 0.5)
    assert m(1, 2, p) == -2.5
    assert m(0, 0, p) == 0
    for y, z in [(1.0, 2.0), (-3.0, 0.5), (10.0, -4.0)]:
        assert m_tilde(m(y, z, p), y, p) == pytest.approx(z, abs=1e-14)
        assert on_critical_manifold((m(y, z, p), y, z), p) == pytest.approx(0.0, abs=1e-14)


def test_layer_eigenvalue():
    p = Params(0.8, 0.5)
    assert layer_eigenvalue(0.0, p) == -2.0
    zs = np.linspace(-3, 3, 13)
    lam = np.abs(layer_eigenvalue(zs, p))
    assert np.all(np.diff(lam) < 0)
    y, z = 0.4, -0.6
    s = np.array([m(y, z, p), y, z])
    J = fd_jac(lambda u: vf_fast(u, p), s)
    assert J[2, 2] == pytest.approx(layer_eigenvalue(z, p), rel=1e-7)
    ev = np.linalg.eigvals(J)
    nz = ev[np.argmax(np.abs(ev))]
    assert nz.real == pytest.approx(layer_eigenvalue(z, p), rel=1e-7)


def test_overflow_raises_range_error():
    with pytest.raises(ExpRangeError):
        vf_slow((0.0, 0.0, 800.0), Params(0.8, 0.5, 0.01))
    with pytest.raises(ExpRangeError):
        vf_reduced((0.0, 800.0), Params(0.8, 0.5))


def test_reduced_field():
    p = Params(0.8, 0.5)
    assert np.all(vf_reduced((0.0, 0.0), p) == 0)
    np.testing.assert_allclose(jacobian_reduced((0.0, 0.0), p), [[0, 1], [-0.5, 0.3]], atol=1e-15)


def test_reduced_is_projection_of_slow_field():
    p = Params(0.8, 0.5, 0.01)
    rng = np.random.default_rng(1)
    for y, z in rng.uniform(-2, 2, (50, 2)):
        s = np.array([m(y, z, p), y, z])
        f = vf_slow(s, p)
        r = vf_reduced((y, z), p)
        assert f[1] == pytest.approx(r[0], rel=1e-14, abs=1e-15)
        # on C, z = m_tilde(x, y) so dz/dt = -xi y' - x'
        assert -p.xi * f[1] - f[0] == pytest.approx(r[1], rel=1e-12, abs=1e-12)


def test_wcs_asymptotic_line_is_asymptotically_invariant():
    # the field's component normal to the line, relative to its size, vanishes as y grows
    p = Params(0.8, 0.5)
    k = p.xi / p.alpha
    res = []
    for y in (10.0, 20.0, 40.0):
        z = k * y + (1 + p.alpha) * p.xi / p.alpha ** 2
        f = vf_reduced((y, z), p)
        res.append(abs(f[1] - k * f[0]) / np.linalg.norm(f))
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-10


def test_hamiltonian_basics():
    p = Params(0.5, 0.5)
    assert hamiltonian((0.0, 0.0), p) == 0.0
    rng = np.random.default_rng(2)
    for y, z in rng.uniform(-2, 2, (20, 2)):
        assert dH_dt((y, z), p) == 0.0


def test_sign_of_dH_dt():
    # H increases along orbits for alpha > xi and decreases for alpha < xi
    ys, zs = np.meshgrid(np.linspace(-2, 5, 30), np.linspace(-5, 2, 31))
    zs = zs[np.abs(zs) > 1e-9]
    ys = ys.ravel()[:len(zs)]
    for a in (0.3, 0.8):
        p = Params(a, 0.5)
        d = dH_dt((ys, zs), p)
        assert np.all(np.sign(d) == np.sign(a - 0.5))


def test_grad_and_poisson():
    p = Params(0.5, 0.5)
    rng = np.random.default_rng(3)
    for r in rng.uniform(-2, 2, (30, 2)):
        g = grad_hamiltonian(r, p)
        np.testing.assert_allclose(g, fd_jac(lambda u: np.atleast_1d(hamiltonian(u, p)), r)[0],
                                   rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(poisson_matrix(r, p) @ g, hamiltonian_vf(r, p), rtol=1e-13)


def test_J_grad_H_equals_reduced_field_on_grid():
    p = Params(0.5, 0.5)
    Y, Z = np.meshgrid(np.linspace(-2, 5, 50), np.linspace(-5, 2, 50))
    worst = 0.0
    for y, z in zip(Y.ravel(), Z.ravel()):
        a, b = hamiltonian_vf((y, z), p), vf_reduced((y, z), p)
        worst = max(worst, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
    assert worst < 1e-10


def test_chain_rule_for_dH_dt():
    p = Params(0.8, 0.5)
    sol = solve_ivp(lambda t, u: vf_reduced(u, p), (0, 5), [0.5, 0.2], rtol=1e-12, atol=1e-12,
                    dense_output=True)
    for t in np.linspace(0.5, 4.5, 9):
        h = 1e-4
        num = (hamiltonian(sol.sol(t + h), p) - hamiltonian(sol.sol(t - h), p)) / (2 * h)
        assert num == pytest.approx(dH_dt(sol.sol(t), p), rel=1e-6, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), positive, positive,
       st.floats(1e-4, 1.0))
def test_jacobians_match_finite_differences(x, y, z, a, xi, eps):
    p = Params(a, xi, eps)
    s = np.array([x, y, z])
    for f, J in ((vf_slow, jacobian_slow), (vf_fast, jacobian_fast)):
        A = J(s, p)
        B = fd_jac(lambda u: f(u, p), s)
        assert np.max(np.abs(A - B)) <= 1e-6 * max(1.0, np.max(np.abs(A)))
    r = s[1:]
    A = jacobian_reduced(r, p)
    B = fd_jac(lambda u: vf_reduced(u, p), r)
    assert np.max(np.abs(A - B)) <= 1e-6 * max(1.0, np.max(np.abs(A)))


def test_hopf_trace_and_location():
    for a in (0.2, 0.5, 0.9):
        assert hopf_trace(Params(a, 0.5)) == pytest.approx(a - 0.5, abs=1e-12)
    assert abs(locate_hopf(0.5, 0.1, 1.0) - 0.5) < 1e-10
