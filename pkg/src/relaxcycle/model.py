"""Ruina spring-block model written as a slow-fast system.

State variables are ``(x, y, z)``: the friction state, the spring deformation
and the log-velocity ``z = log v``.  In slow time ``t``::

    x' = -e^z (x + (1 + alpha) z)
    y' = e^z - 1
    eps z' = -e^{-z} (y + (x + z) / xi)

Setting ``eps = 0`` in the fast-time form gives the layer problem whose set
of equilibria is the plane ``C: y + (x + z)/xi = 0``.  Restricted to ``C`` the
slow flow in ``(y, z)`` is Hamiltonian when ``alpha == xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: exponentials larger than this are reported instead of returning inf
EXP_CAP = 1e300
_LOG_CAP = math.log(EXP_CAP)


class ExpRangeError(ArithmeticError):
    """An exponential left the representable range.

    Raised instead of returning ``inf``.  Integrators treat it as a signal to
    shrink the step or change chart.  ``state`` holds the offending point
    when it is known.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)


def _num(v):
    """Scalars stay Python floats, everything else becomes a float array."""
    return np.asarray(v, dtype=float) if np.ndim(v) else float(v)


def safe_exp(a, state=None):
    """``exp(a)`` that raises :class:`ExpRangeError` above ``EXP_CAP``.

    Works for scalars and arrays.
    """
    if isinstance(a, (float, int, np.floating)):
        if a > _LOG_CAP:
            raise ExpRangeError(f"exp({float(a):.6g}) exceeds {EXP_CAP:g}", state)
        return math.exp(a)
    a = np.asarray(a, dtype=float)
    if np.any(a > _LOG_CAP):
        raise ExpRangeError(f"exp({a.max():.6g}) exceeds {EXP_CAP:g}", state)
    return np.exp(a)


@dataclass(frozen=True)
class Params:
    """Model parameters ``alpha > 0``, ``xi > 0`` and ``eps >= 0``."""

    alpha: float
    xi: float
    eps: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "xi", "eps"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.xi <= 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")

    @property
    def is_oscillatory(self) -> bool:
        return self.alpha > self.xi and not self.is_hamiltonian

    @property
    def is_hamiltonian(self) -> bool:
        return abs(self.alpha - self.xi) <= 1e-12 * max(self.alpha, self.xi)

    @property
    def is_supercritical_amplitude(self) -> bool:
        return self.alpha > 1.0

    def with_eps(self, eps: float) -> "Params":
        return Params(self.alpha, self.xi, eps)

    def with_alpha(self, alpha: float) -> "Params":
        return Params(alpha, self.xi, self.eps)


# ---------------------------------------------------------------------------
# full system


def vf_slow(s, p: Params) -> np.ndarray:
    """Slow-time vector field at ``s = (x, y, z)``; requires ``eps > 0``."""
    if p.eps <= 0:
        raise ValueError("vf_slow needs eps > 0; use vf_fast for the layer problem")
    x, y, z = float(s[0]), float(s[1]), float(s[2])
    if abs(z) > _LOG_CAP:
        raise ExpRangeError(f"exp(+-{z:.6g}) exceeds {EXP_CAP:g}", s)
    ez = math.exp(z)
    return np.array([
        -ez * (x + (1.0 + p.alpha) * z),
        ez - 1.0,
        -(y + (x + z) / p.xi) / (ez * p.eps),
    ])


def vf_fast(s, p: Params) -> np.ndarray:
    """Fast-time vector field, ``eps * vf_slow``; defined at ``eps = 0``."""
    x, y, z = (float(v) for v in s)
    ez = safe_exp(z, s)
    emz = safe_exp(-z, s)
    return np.array([
        -p.eps * ez * (x + (1.0 + p.alpha) * z),
        p.eps * (ez - 1.0),
        -emz * (y + (x + z) / p.xi),
    ])


def jacobian_slow(s, p: Params) -> np.ndarray:
    """Analytic Jacobian of :func:`vf_slow`."""
    if p.eps <= 0:
        raise ValueError("jacobian_slow needs eps > 0")
    x, y, z = float(s[0]), float(s[1]), float(s[2])
    if abs(z) > _LOG_CAP:
        raise ExpRangeError(f"exp(+-{z:.6g}) exceeds {EXP_CAP:g}", s)
    a1 = 1.0 + p.alpha
    ez = math.exp(z)
    g = y + (x + z) / p.xi
    c = 1.0 / (ez * p.eps)
    return np.array([
        [-ez, 0.0, -ez * (x + a1 * z + a1)],
        [0.0, 0.0, ez],
        [-c / p.xi, -c, c * (g - 1.0 / p.xi)],
    ])


def jacobian_fast(s, p: Params) -> np.ndarray:
    """Analytic Jacobian of :func:`vf_fast`."""
    x, y, z = (float(v) for v in s)
    a1 = 1.0 + p.alpha
    ez = safe_exp(z, s)
    emz = safe_exp(-z, s)
    g = y + (x + z) / p.xi
    return np.array([
        [-p.eps * ez, 0.0, -p.eps * ez * (x + a1 * z + a1)],
        [0.0, 0.0, p.eps * ez],
        [-emz / p.xi, -emz, emz * (g - 1.0 / p.xi)],
    ])


# ---------------------------------------------------------------------------
# critical manifold


def m(y, z, p: Params):
    """``x`` on the critical manifold as a graph over ``(y, z)``."""
    return -p.xi * y - z


def m_tilde(x, y, p: Params):
    """``z`` on the critical manifold as a graph over ``(x, y)``."""
    return -p.xi * y - x


def on_critical_manifold(s, p: Params):
    """Residual ``y + (x + z)/xi``; zero exactly on ``C``."""
    x, y, z = s
    return y + (x + z) / p.xi


def layer_eigenvalue(z, p: Params):
    """Nonzero eigenvalue ``-e^{-z}/xi`` of the layer problem at height ``z``."""
    return -safe_exp(-_num(z)) / p.xi


# ---------------------------------------------------------------------------
# reduced problem on C


def vf_reduced(r, p: Params) -> np.ndarray:
    """Reduced flow on ``C`` in ``(y, z)``.  Accepts arrays of shape ``(2, ...)``."""
    y, z = _num(r[0]), _num(r[1])
    ez = safe_exp(z)
    return np.array([ez - 1.0, p.xi + ez * (p.alpha * z - p.xi * y - p.xi)])


def jacobian_reduced(r, p: Params) -> np.ndarray:
    """Analytic Jacobian of :func:`vf_reduced`."""
    y, z = float(r[0]), float(r[1])
    ez = safe_exp(z, r)
    return np.array([
        [0.0, ez],
        [-p.xi * ez, ez * (p.alpha * z - p.xi * y - p.xi + p.alpha)],
    ])


def hamiltonian(r, p: Params):
    """``H(y, z)``; conserved by the reduced flow when ``alpha == xi``."""
    y, z = r[0], r[1]
    y, z = _num(y), _num(z)
    exy = safe_exp(-p.xi * y)
    emz = safe_exp(-z)
    return -p.xi * exy * (y - z + 1.0 - emz) + 1.0 - exy


def grad_hamiltonian(r, p: Params) -> np.ndarray:
    y, z = r[0], r[1]
    y, z = _num(y), _num(z)
    exy = safe_exp(-p.xi * y)
    emz = safe_exp(-z)
    hy = p.xi ** 2 * exy * (y - z + 1.0 - emz)
    hz = -p.xi * exy * (-1.0 + emz)
    return np.array([hy, hz])


def poisson_matrix(r, p: Params) -> np.ndarray:
    """Structure matrix ``J(y, z)`` with ``vf_reduced = J grad H`` at ``alpha == xi``."""
    y, z = float(r[0]), float(r[1])
    c = safe_exp(p.xi * y + z, r) / p.xi
    return np.array([[0.0, c], [-c, 0.0]])


def hamiltonian_vf(r, p: Params) -> np.ndarray:
    """``J grad H`` evaluated without forming ``J`` (vectorised)."""
    y, z = r[0], r[1]
    hy, hz = grad_hamiltonian(r, p)
    c = safe_exp(p.xi * _num(y) + _num(z)) / p.xi
    return np.array([c * hz, -c * hy])


def dH_dt(r, p: Params):
    """Rate of change of ``H`` along the reduced flow, ``grad H . vf_reduced``.

    Equals ``xi e^{-xi y} (e^z - 1) z (alpha - xi)``, so ``H`` increases
    along every nontrivial orbit when ``alpha > xi``.
    """
    y, z = r[0], r[1]
    y, z = _num(y), _num(z)
    exy = safe_exp(-p.xi * y)
    ez = safe_exp(z)
    return p.xi * exy * (ez - 1.0) * z * (p.alpha - p.xi)


def hopf_trace(p: Params) -> float:
    """Trace of the reduced Jacobian at the origin."""
    return float(np.trace(jacobian_reduced((0.0, 0.0), p)))


def locate_hopf(xi: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Bisect on ``alpha`` for the sign change of :func:`hopf_trace`."""
    f_lo = hopf_trace(Params(lo, xi))
    if f_lo * hopf_trace(Params(hi, xi)) > 0:
        raise ValueError("trace does not change sign on the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = hopf_trace(Params(mid, xi))
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
