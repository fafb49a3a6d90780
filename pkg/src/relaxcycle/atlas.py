"""Blowup atlas near the degenerate parts of infinity.

Two extended systems are blown up.  On the ``PHI3`` side the chart is extended
by the flat variable ``q = e^{-2/w}`` and the state is ``(x, y, w, q, eps)``.
On the ``PHI1`` side the corner ``w1 = z1 = 0`` is first blown up by
``(w, z) = theta (wb, zb)``; the chart ``zb = 1`` carries
``(x, theta1, w1, q, eps)`` with ``q = e^{-2/w1}``, the chart ``wb = 1``
carries ``(x, theta2, z2, eps)`` and the chart ``zb = -1`` carries
``(x, theta3, w3, q, eps)`` with ``q = e^{-1/w3}/w3``.

Every directional chart of the subsequent blowups is registered in
``CHARTS`` with its coordinate names, its blowdown map, its desingularized
vector field and the product of coordinates that was divided out.  The field
in each chart satisfies ``D(blowdown) . X_chart = X_base / factor``, which
``verify_atlas`` checks numerically together with all coordinate changes.
"""
from __future__ import annotations

import contextlib
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .model import Params
from .compactify import F, F_inv, flat_exp

# ---------------------------------------------------------------------------
# states and leaves


class ExtState3(NamedTuple):
    x: float
    y: float
    w: float
    q: float
    eps: float


class ExtState1(NamedTuple):
    x: float
    theta1: float
    w1: float
    q: float
    eps: float


class AtlasDomainError(ValueError):
    """Point outside the overlap domain of a coordinate change."""


def q_leaf(w):
    """Physical value ``e^{-2/w}`` of the flat variable (zero for ``w <= 0``)."""
    return flat_exp(2.0, w)


def q_leaf_m1(w3):
    """Physical value ``e^{-1/w3}/w3`` used in the chart ``zb = -1``."""
    if w3 <= 0:
        return 0.0
    return flat_exp(1.0, w3) / w3


# ---------------------------------------------------------------------------
# base systems


def ext_vf_phi3(s, p: Params) -> np.ndarray:
    """Extended ``PHI3`` field on ``(x, y, w, q, eps)``."""
    x, y, w, q, e = s
    xi = p.xi
    g = y + (x + 1.0) / xi
    return np.array([
        -e * w * (x + 1.0 + p.alpha) + x * w * q * g,
        e * w * w * F_inv(w) + y * w * q * g,
        w * w * q * g,
        2.0 * q * q * g,
        0.0,
    ])


def ext_vf_phi1(s, p: Params) -> np.ndarray:
    """Extended field of the chart ``zb = 1`` on ``(x, theta1, w1, q, eps)``."""
    x, th, w1, q, e = s
    g = 1.0 + (x + th) / p.xi
    f = F_inv(w1)
    return np.array([
        -e * th * w1 * (th * w1 * x * f + x + (1.0 + p.alpha) * th),
        -th * w1 * (e * th * th * w1 * f + q * g),
        w1 * w1 * q * g,
        2.0 * q * q * g,
        0.0,
    ])


def base_vf_w1(s, p: Params) -> np.ndarray:
    """Field of the chart ``wb = 1`` on ``(x, theta2, z2, eps)``."""
    x, th, z2, e = s
    g = 1.0 + (x + th * z2) / p.xi
    f = F(z2)
    return np.array([
        -e * th * (th * x * f + x + (1.0 + p.alpha) * th * z2),
        -e * th ** 3 * f,
        -math.exp(-2.0 * z2) * g,
        0.0,
    ])


def base_vf_zm1(s, p: Params) -> np.ndarray:
    """Field of the chart ``zb = -1`` on ``(x, theta3, w3, q, eps)``."""
    x, th, w3, q, e = s
    g = 1.0 + (x - th) / p.xi
    fq = 1.0 - w3 * q
    return np.array([
        e * th * w3 * w3 * q * (th * w3 * x * fq - w3 * q * (x - (1.0 + p.alpha) * th)),
        th * w3 * (e * th * th * w3 * w3 * q * fq + g),
        -w3 * w3 * g,
        -q * (1.0 - w3) * g,
        0.0,
    ])


def ext3_to_phi3(s) -> np.ndarray:
    """``(x, y, w, q, eps)`` to ``PHI3`` coordinates ``(x3, y3, w3, eps)``."""
    return np.array([s[0], s[1], s[2], s[4]])


def ext1_to_phi1(s) -> np.ndarray:
    """``(x, theta1, w1, q, eps)`` to ``PHI1`` coordinates ``(x1, z1, w1, eps)``."""
    x, th, w1, _, e = s
    return np.array([x, th, th * w1, e])


def w1base_to_phi1(s) -> np.ndarray:
    x, th, z2, e = s
    return np.array([x, th * z2, th, e])


def zm1base_to_phi1(s) -> np.ndarray:
    x, th, w3, _, e = s
    return np.array([x, -th, th * w3, e])


def phi1_ext_vf(u, p: Params) -> np.ndarray:
    """``PHI1`` field on ``(x1, z1, w1, eps)`` with ``eps`` as a state."""
    x1, z1, w1, e = u
    g = 1.0 + (x1 + z1) / p.xi
    f = F(z1 / w1)
    e2 = math.exp(-2.0 * z1 / w1) * g
    return np.array([
        -e * (w1 * x1 * f + x1 + (1.0 + p.alpha) * z1),
        -e * w1 * z1 * f - e2,
        -e * w1 * w1 * f,
        0.0,
    ])


class BaseSystem(NamedTuple):
    name: str
    coords: tuple
    vf: Callable
    to_chart: Callable
    leaf: Callable | None


BASES = {
    "EXT3": BaseSystem("EXT3", ("x", "y", "w", "q", "eps"), ext_vf_phi3, ext3_to_phi3,
                       lambda s: q_leaf(s[2])),
    "EXT1": BaseSystem("EXT1", ("x", "theta1", "w1", "q", "eps"), ext_vf_phi1, ext1_to_phi1,
                       lambda s: q_leaf(s[2])),
    "W1": BaseSystem("W1", ("x", "theta2", "z2", "eps"), base_vf_w1, w1base_to_phi1, None),
    "ZM1": BaseSystem("ZM1", ("x", "theta3", "w3", "q", "eps"), base_vf_zm1, zm1base_to_phi1,
                      lambda s: q_leaf_m1(s[2])),
}


# ---------------------------------------------------------------------------
# chart fields


def _vf_b1_q(u, p):
    x, y, w, r1, e1 = u
    xi = p.xi
    g = y + (x + 1.0) / xi
    return np.array([
        w * (-e1 * (x + 1.0 + p.alpha) + x * g),
        w * (e1 * w * F_inv(w) + y * g),
        w * w * g,
        2.0 * r1 * g,
        -2.0 * e1 * g,
    ])


def _vf_b1_eps(u, p):
    x, y, w, q2, r2 = u
    g = y + (x + 1.0) / p.xi
    return np.array([
        w * (-(x + 1.0 + p.alpha) + x * q2 * g),
        w * (w * F_inv(w) + y * q2 * g),
        w * w * q2 * g,
        2.0 * q2 * q2 * g,
        0.0,
    ])


def _vf_b11(u, p):
    y, r1, rho1, x1, e11 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho1)
    return np.array([
        rho1 * (e11 * rho1 * f + y * x1 / xi),
        2.0 * r1 * x1 / xi,
        rho1 * rho1 * x1 / xi,
        -x1 / xi - e11 * (rho1 * x1 - xi * y + al) + rho1 * e11 * xi * f,
        -e11 * x1 / xi * (2.0 + rho1),
    ])


def _vf_b12(u, p):
    y, r1, rho2, x2, w2 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho2 * w2)
    return np.array([
        rho2 * w2 * (rho2 * w2 * f + y * x2 / xi),
        2.0 * r1 * x2 / xi,
        -2.0 * rho2 * x2 / xi,
        (2.0 * x2 * x2 / xi - w2 * (al - xi * y + rho2 * x2)
         + w2 * x2 / xi * (rho2 * x2 - 1.0) + xi * rho2 * w2 * w2 * f),
        w2 * x2 / xi * (2.0 + rho2 * w2),
    ])


def _vf_b122(u, p):
    y, r1, rho2, vr2, x22 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho2 * vr2 * vr2)
    return np.array([
        rho2 * vr2 * vr2 * (rho2 * vr2 * f + y * x22 / xi),
        2.0 * r1 * x22 / xi,
        -2.0 * rho2 * x22 / xi,
        0.5 * vr2 * x22 / xi * (2.0 + rho2 * vr2 * vr2),
        (x22 * x22 / xi - (al - xi * y + rho2 * vr2 * x22)
         + vr2 * x22 / xi * (0.5 * rho2 * vr2 * x22 - 1.0) + xi * rho2 * vr2 * vr2 * f),
    ])


def _vf_b211(u, p):
    y, r2, s1, pi1, w11 = u
    xi, al = p.xi, p.alpha
    f = F_inv(s1 * s1 * pi1 * w11)
    g = al - s1 - xi * y - pi1 * s1 * (s1 + 1.0) / xi - xi * s1 * s1 * pi1 * w11 * f
    return np.array([
        s1 * s1 * pi1 * w11 * (-y / xi + s1 * w11 * f),
        0.0,
        s1 * w11 * g,
        -2.0 * pi1 / xi,
        w11 * (2.0 / xi - w11 * (2.0 * g + s1 * s1 * pi1 / xi)),
    ])


def _vf_b21(u, p):
    x, y, r2, mu1, q21 = u
    g = y + (x + 1.0) / p.xi
    return np.array([
        -(x + 1.0 + p.alpha) + x * mu1 * q21 * g,
        mu1 * F_inv(mu1) + y * mu1 * q21 * g,
        0.0,
        mu1 * mu1 * q21 * g,
        q21 * q21 * g * (2.0 - mu1),
    ])


def _vf_b22(u, p):
    x, y, r2, mu2, w2 = u
    g = y + (x + 1.0) / p.xi
    return np.array([
        w2 * (-(x + 1.0 + p.alpha) + x * mu2 * g),
        mu2 * w2 * (w2 * F_inv(mu2 * w2) + y * g),
        0.0,
        2.0 * mu2 * g,
        -w2 * g * (2.0 - mu2 * w2),
    ])


def _vf_k111(u, p):
    r1, th, rho1, w11, e11 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho1 * w11)
    g = (-th / xi - e11 * th * (-xi + rho1 + al * th)
         + e11 * th * th * rho1 * w11 * f * (xi - rho1))
    return np.array([
        2.0 * r1 / xi,
        rho1 * w11 * th * (-1.0 / xi - e11 * th * th * rho1 * w11 * f),
        rho1 * w11 * g,
        -w11 * w11 * g + rho1 * w11 * w11 / xi,
        e11 * (-2.0 / xi - g * w11),
    ])


def _vf_k112(u, p):
    r1, th, rho2, x2, e12 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho2)
    return np.array([
        2.0 * r1 * x2 / xi,
        -rho2 * th * (rho2 * th * th * e12 * f + x2 / xi),
        rho2 * rho2 * x2 / xi,
        (rho2 * e12 * th * th * f * (xi - rho2 * x2) - th * e12 * (-xi + rho2 * x2 + al * th)
         - x2 * (th + rho2 * x2) / xi),
        -e12 * x2 / xi * (2.0 + rho2),
    ])


def _vf_k1121(u, p):
    r1, rho2, vr1, x21, e121 = u
    xi, al = p.xi, p.alpha
    f = F_inv(rho2)
    return np.array([
        2.0 * r1 * x21 / xi,
        rho2 * rho2 * x21 / xi,
        -vr1 * (rho2 * x21 / xi + vr1 * vr1 * rho2 * rho2 * e121 * f),
        rho2 * vr1 * e121 * xi * f - e121 * (-xi + rho2 * vr1 * x21 + al * vr1) - x21 / xi,
        -e121 * (2.0 * x21 / xi - e121 * rho2 * rho2 * vr1 * vr1 * f),
    ])


def _vf_k21(u, p):
    z2, s1, x1, e1 = u
    xi, al = p.xi, p.alpha
    f = F(z2)
    e2 = math.exp(-2.0 * z2)
    return np.array([
        -e2 * x1 / xi,
        -e1 * s1 ** 3 * f,
        s1 * e1 * xi * f - e1 * (-xi + s1 * x1 + al * s1 * z2) - e2 * x1 / xi,
        e1 * e1 * s1 * s1 * f,
    ])


def _vf_k311(u, p):
    x11, pi1, mu1, q, e11 = u
    xi, al = p.xi, p.alpha
    fq = 1.0 - mu1 * q
    return np.array([
        -x11 / xi + e11 * mu1 * mu1 * q * (-xi * pi1 * fq - q * (-xi + pi1 * mu1 * x11 - al * pi1)),
        pi1 * mu1 * (pi1 * pi1 * e11 * mu1 * mu1 * q * fq + x11 / xi),
        -mu1 * mu1 * x11 / xi,
        -q * x11 * (1.0 - mu1) / xi,
        -pi1 * pi1 * mu1 ** 3 * q * e11 * e11 * fq,
    ])


# ---------------------------------------------------------------------------
# blowdowns (plain arithmetic so that complex-step differentiation works)


def _bd_b1_q(u, xi):
    x, y, w, r1, e1 = u
    return np.array([x, y, w, r1, r1 * e1])


def _bd_b1_eps(u, xi):
    x, y, w, q2, r2 = u
    return np.array([x, y, w, r2 * q2, r2])


def _bd_b11(u, xi):
    y, r1, rho1, x1, e11 = u
    return np.array([-1.0 - xi * y + rho1 * x1, y, rho1, r1, r1 * rho1 * e11])


def _bd_b12(u, xi):
    y, r1, rho2, x2, w2 = u
    return np.array([-1.0 - xi * y + rho2 * x2, y, rho2 * w2, r1, r1 * rho2])


def _bd_b122(u, xi):
    y, r1, rho2, vr2, x22 = u
    return np.array([-1.0 - xi * y + rho2 * vr2 * x22, y, rho2 * vr2 * vr2, r1, r1 * rho2])


def _bd_b211(u, xi):
    y, r2, s1, pi1, w11 = u
    return np.array([-1.0 - xi * y - s1, y, s1 * s1 * pi1 * w11, r2 * pi1, r2])


def _bd_b21(u, xi):
    x, y, r2, mu1, q21 = u
    return np.array([x, y, mu1, r2 * mu1 * q21, r2])


def _bd_b22(u, xi):
    x, y, r2, mu2, w2 = u
    return np.array([x, y, mu2 * w2, r2 * mu2, r2])


def _bd_k111(u, xi):
    r1, th, rho1, w11, e11 = u
    return np.array([-xi - th + rho1, th, rho1 * w11, r1, r1 * rho1 * e11])


def _bd_k112(u, xi):
    r1, th, rho2, x2, e12 = u
    return np.array([-xi - th + rho2 * x2, th, rho2, r1, r1 * rho2 * e12])


def _bd_k1121(u, xi):
    r1, rho2, vr1, x21, e121 = u
    return np.array([-xi - vr1 + rho2 * vr1 * x21, vr1, rho2, r1, r1 * rho2 * vr1 * e121])


def _bd_k21(u, xi):
    z2, s1, x1, e1 = u
    return np.array([-xi - s1 * z2 + s1 * x1, s1, z2, s1 * e1])


def _bd_k311(u, xi):
    x11, pi1, mu1, q, e11 = u
    return np.array([-xi + pi1 + pi1 * mu1 * x11, pi1, mu1, q, pi1 * mu1 * e11])


# ---------------------------------------------------------------------------
# registry


class BlowupChartId(str, enum.Enum):
    B1_Q = "B1_Q"
    B1_EPS = "B1_EPS"
    B11 = "B11"
    B12 = "B12"
    B122 = "B122"
    B211 = "B211"
    B21 = "B21"
    B22 = "B22"
    K111 = "K111"
    K112 = "K112"
    K1121 = "K1121"
    K21 = "K21"
    K311 = "K311"


def _box(*ranges):
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    return lo, hi


@dataclass(frozen=True)
class ChartSpec:
    id: BlowupChartId
    coords: tuple
    base: str
    blowdown: Callable
    vf: Callable
    factor: tuple
    cone: tuple
    sample_box: tuple = field(repr=False)
    description: str = ""

    @property
    def arity(self) -> int:
        return len(self.coords)

    def factor_value(self, u) -> float:
        idx = {c: i for i, c in enumerate(self.coords)}
        out = 1.0
        for name in self.factor:
            out *= u[idx[name]]
        return float(out)

    def sample(self, rng, n) -> np.ndarray:
        lo, hi = self.sample_box
        return lo + (hi - lo) * rng.random((n, len(lo)))


_C = BlowupChartId
CHARTS = {
    _C.B1_Q: ChartSpec(_C.B1_Q, ("x", "y", "w", "r1", "eps1"), "EXT3", _bd_b1_q, _vf_b1_q,
                       ("r1",), ("w", "r1", "eps1"),
                       _box((-3, 1), (-1, 2), (0.1, 2), (0.05, 1), (0.05, 2)),
                       "qb = 1 of the (q, eps) blowup"),
    _C.B1_EPS: ChartSpec(_C.B1_EPS, ("x", "y", "w", "q2", "r2"), "EXT3", _bd_b1_eps, _vf_b1_eps,
                         ("r2",), ("w", "q2", "r2"),
                         _box((-3, 1), (-1, 2), (0.1, 2), (0.05, 2), (0.05, 1)),
                         "epsb = 1 of the (q, eps) blowup"),
    _C.B11: ChartSpec(_C.B11, ("y", "r1", "rho1", "x1", "eps11"), "EXT3", _bd_b11, _vf_b11,
                      ("r1", "rho1"), ("r1", "rho1", "eps11"),
                      _box((-1, 2), (0.05, 1), (0.1, 2), (-2, 2), (0.05, 2)),
                      "qb = 1, wb = 1: blowup of the line C_inf"),
    _C.B12: ChartSpec(_C.B12, ("y", "r1", "rho2", "x2", "w2"), "EXT3", _bd_b12, _vf_b12,
                      ("r1", "rho2"), ("r1", "rho2", "w2"),
                      _box((-1, 2), (0.05, 1), (0.1, 2), (-2, 2), (0.1, 2)),
                      "qb = 1, epsbb = 1: blowup of the line C_inf"),
    _C.B122: ChartSpec(_C.B122, ("y", "r1", "rho2", "varrho2", "x22"), "EXT3", _bd_b122, _vf_b122,
                       ("r1", "rho2", "varrho2"), ("r1", "rho2", "varrho2"),
                       _box((-1, 2), (0.05, 1), (0.1, 2), (0.1, 2), (-2, 2)),
                       "third blowup, directional chart wbb = 1"),
    _C.B211: ChartSpec(_C.B211, ("y", "r2", "sigma1", "pi1", "w11"), "EXT3", _bd_b211, _vf_b211,
                       ("r2", "pi1", "sigma1"), ("r2", "sigma1", "pi1", "w11"),
                       _box((-1, 2), (0.05, 1), (0.1, 2), (0.1, 2), (0.1, 2)),
                       "fourth blowup, epsb = 1, xt = -1, qbt = 1"),
    _C.B21: ChartSpec(_C.B21, ("x", "y", "r2", "mu1", "q21"), "EXT3", _bd_b21, _vf_b21,
                      ("r2", "mu1"), ("r2", "mu1", "q21"),
                      _box((-3, 1), (-1, 2), (0.05, 1), (0.1, 2), (0.05, 2)),
                      "fifth blowup, epsb = 1, wt = 1"),
    _C.B22: ChartSpec(_C.B22, ("x", "y", "r2", "mu2", "w2"), "EXT3", _bd_b22, _vf_b22,
                      ("r2", "mu2"), ("r2", "mu2", "w2"),
                      _box((-3, 1), (-1, 2), (0.05, 1), (0.05, 2), (0.1, 2)),
                      "fifth blowup, epsb = 1, qbt = 1"),
    _C.K111: ChartSpec(_C.K111, ("r1", "theta1", "rho1", "w11", "eps11"), "EXT1", _bd_k111, _vf_k111,
                       ("r1", "rho1"), ("r1", "theta1", "rho1", "w11", "eps11"),
                       _box((0.05, 1), (0.05, 2), (0.1, 2), (0.1, 2), (0.05, 2)),
                       "zb = 1, qb = 1, xb = 1"),
    _C.K112: ChartSpec(_C.K112, ("r1", "theta1", "rho2", "x2", "eps12"), "EXT1", _bd_k112, _vf_k112,
                       ("r1", "rho2"), ("r1", "theta1", "rho2", "eps12"),
                       _box((0.05, 1), (0.05, 2), (0.1, 2), (-2, 2), (0.05, 2)),
                       "zb = 1, qb = 1, wb1 = 1"),
    _C.K1121: ChartSpec(_C.K1121, ("r1", "rho2", "varrho1", "x21", "eps121"), "EXT1", _bd_k1121,
                        _vf_k1121, ("r1", "rho2", "varrho1"), ("r1", "rho2", "varrho1", "eps121"),
                        _box((0.05, 1), (0.1, 2), (0.05, 2), (-2, 2), (0.05, 2)),
                        "zb = 1, qb = 1, wb1 = 1, thetab1 = 1"),
    _C.K21: ChartSpec(_C.K21, ("z2", "sigma1", "x1", "eps1"), "W1", _bd_k21, _vf_k21,
                      ("sigma1",), ("sigma1", "eps1"),
                      _box((-2, 2), (0.05, 2), (-2, 2), (0.05, 2)),
                      "wb = 1, thetab2 = 1"),
    _C.K311: ChartSpec(_C.K311, ("x11", "pi1", "mu1", "q", "eps11"), "ZM1", _bd_k311, _vf_k311,
                       ("pi1", "mu1"), ("pi1", "mu1", "q", "eps11"),
                       _box((-2, 2), (0.05, 2), (0.1, 2), (0.05, 2), (0.05, 2)),
                       "zb = -1, thetab3 = 1, wb3 = 1"),
}


def _spec(cid) -> ChartSpec:
    return CHARTS[BlowupChartId(cid)]


def blowdown(cid, local, p: Params | float, named: bool = False):
    """Map chart coordinates to the state of the chart's base system.

    ``PHI3``-side charts land in ``(x, y, w, q, eps)``; ``K111``, ``K112`` and
    ``K1121`` land in ``(x, theta1, w1, q, eps)``; ``K21`` lands in
    ``(x, theta2, z2, eps)`` and ``K311`` in ``(x, theta3, w3, q, eps)``.
    """
    spec = _spec(cid)
    xi = p.xi if isinstance(p, Params) else float(p)
    u = np.asarray(local)
    if u.shape != (spec.arity,):
        raise ValueError(f"{spec.id.value} expects {spec.arity} coordinates, got shape {u.shape}")
    out = spec.blowdown(u, xi)
    if named and spec.base == "EXT3":
        return ExtState3(*map(float, out))
    if named and spec.base == "EXT1":
        return ExtState1(*map(float, out))
    return out


def to_phi1(cid, local, p: Params | float) -> np.ndarray:
    """``PHI1`` coordinates ``(x1, z1, w1, eps)`` of a ``PHI1``-side chart point."""
    spec = _spec(cid)
    if spec.base == "EXT3":
        raise ValueError(f"{spec.id.value} is not a PHI1-side chart")
    return BASES[spec.base].to_chart(blowdown(cid, local, p))


def chart_vf(cid, local, p: Params) -> np.ndarray:
    """Desingularized field in the chart (``eps`` in ``p`` is not used)."""
    return _spec(cid).vf(np.asarray(local, dtype=float), p)


def base_vf(cid, s, p: Params) -> np.ndarray:
    return BASES[_spec(cid).base].vf(s, p)


# ---------------------------------------------------------------------------
# coordinate changes


def _cc_firstcc(u, xi):
    x, y, w, r1, e1 = u
    _need(e1 > 0, "eps1 > 0")
    return np.array([x, y, w, 1.0 / e1, r1 * e1])


def _cc_firstcc_inv(u, xi):
    x, y, w, q2, r2 = u
    _need(q2 > 0, "q2 > 0")
    return np.array([x, y, w, r2 * q2, 1.0 / q2])


def _cc_b1q_b11(u, xi):
    x, y, w, r1, e1 = u
    _need(w > 0, "w > 0")
    return np.array([y, r1, w, (x + 1.0 + xi * y) / w, e1 / w])


def _cc_b11_b12(u, xi):
    y, r1, rho1, x1, e11 = u
    _need(e11 > 0, "eps11 > 0")
    return np.array([y, r1, rho1 * e11, x1 / e11, 1.0 / e11])


def _cc_b12_b11(u, xi):
    y, r1, rho2, x2, w2 = u
    _need(w2 > 0, "w2 > 0")
    return np.array([y, r1, rho2 * w2, x2 / w2, 1.0 / w2])


def _cc_b12_b122(u, xi):
    y, r1, rho2, x2, w2 = u
    _need(w2 > 0, "w2 > 0")
    s = math.sqrt(w2)
    return np.array([y, r1, rho2, s, x2 / s])


def _cc_b122_b211(u, xi):
    y, r1, rho2, vr2, x22 = u
    _need(rho2 > 0 and x22 < 0, "rho2 > 0 and x22 < 0")
    return np.array([y, r1 * rho2, -rho2 * vr2 * x22, 1.0 / rho2, 1.0 / (x22 * x22)])


def _cc_b211_b21(u, xi):
    y, r2, s1, pi1, w11 = u
    _need(s1 > 0 and w11 > 0, "sigma1 > 0 and w11 > 0")
    return np.array([-1.0 - xi * y - s1, y, r2, s1 * s1 * pi1 * w11, 1.0 / (s1 * s1 * w11)])


def _cc_b21_b22(u, xi):
    x, y, r2, mu1, q21 = u
    _need(q21 > 0, "q21 > 0")
    return np.array([x, y, r2, mu1 * q21, 1.0 / q21])


def _cc_b22_b21(u, xi):
    x, y, r2, mu2, w2 = u
    _need(w2 > 0, "w2 > 0")
    return np.array([x, y, r2, mu2 * w2, 1.0 / w2])


def _cc_b1eps_b22(u, xi):
    x, y, w, q2, r2 = u
    _need(q2 > 0, "q2 > 0")
    return np.array([x, y, r2, q2, w / q2])


def _cc_k112_k111(u, xi):
    r1, th, rho2, x2, e12 = u
    _need(x2 > 0, "x2 > 0")
    return np.array([r1, th, rho2 * x2, 1.0 / x2, e12 / x2])


def _cc_k1121_k112(u, xi):
    r1, rho2, vr1, x21, e121 = u
    return np.array([r1, vr1, rho2, vr1 * x21, vr1 * e121])


def _cc_k1121_k21(u, xi):
    r1, rho2, vr1, x21, e121 = u
    _need(rho2 > 0, "rho2 > 0")
    return np.array([1.0 / rho2, vr1 * rho2, x21, flat_exp(2.0, rho2) * e121])


def _cc_k21_k311(u, xi):
    z2, s1, x1, e1 = u
    _need(z2 < 0, "z2 < 0")
    mu1 = -1.0 / z2
    return np.array([x1, -s1 * z2, mu1, q_leaf_m1(mu1), e1])


def _need(ok, what):
    if not ok:
        raise AtlasDomainError(f"outside overlap domain: requires {what}")


@dataclass(frozen=True)
class ChartChange:
    src: BlowupChartId
    dst: BlowupChartId
    fn: Callable
    domain: str
    on_leaf: bool = False


CHANGES = {
    (c.src, c.dst): c for c in [
        ChartChange(_C.B1_Q, _C.B1_EPS, _cc_firstcc, "eps1 > 0"),
        ChartChange(_C.B1_EPS, _C.B1_Q, _cc_firstcc_inv, "q2 > 0"),
        ChartChange(_C.B1_Q, _C.B11, _cc_b1q_b11, "w > 0"),
        ChartChange(_C.B11, _C.B12, _cc_b11_b12, "eps11 > 0"),
        ChartChange(_C.B12, _C.B11, _cc_b12_b11, "w2 > 0"),
        ChartChange(_C.B12, _C.B122, _cc_b12_b122, "w2 > 0"),
        ChartChange(_C.B122, _C.B211, _cc_b122_b211, "rho2 > 0, x22 < 0"),
        ChartChange(_C.B211, _C.B21, _cc_b211_b21, "sigma1 > 0, w11 > 0"),
        ChartChange(_C.B21, _C.B22, _cc_b21_b22, "q21 > 0"),
        ChartChange(_C.B22, _C.B21, _cc_b22_b21, "w2 > 0"),
        ChartChange(_C.B1_EPS, _C.B22, _cc_b1eps_b22, "q2 > 0"),
        ChartChange(_C.K112, _C.K111, _cc_k112_k111, "x2 > 0"),
        ChartChange(_C.K1121, _C.K112, _cc_k1121_k112, "none"),
        ChartChange(_C.K1121, _C.K21, _cc_k1121_k21, "rho2 > 0, r1 = exp(-2/rho2)", on_leaf=True),
        ChartChange(_C.K21, _C.K311, _cc_k21_k311, "z2 < 0", on_leaf=True),
    ]
}

_MUTATIONS: dict = {}


@contextlib.contextmanager
def mutated(src, dst, rel: float = 1e-6):
    """Temporarily scale the output of one coordinate change by ``1 + rel``.

    Exists so that the verification suite can be shown to detect a wrong
    coordinate change.
    """
    key = (BlowupChartId(src), BlowupChartId(dst))
    if key not in CHANGES:
        raise KeyError(f"no coordinate change {key[0].value} -> {key[1].value}")
    _MUTATIONS[key] = rel
    try:
        yield
    finally:
        _MUTATIONS.pop(key, None)


def change_chart(src, dst, local, p: Params | float) -> np.ndarray:
    """Coordinates in chart ``dst`` of a point given in chart ``src``.

    Direct changes are listed in ``CHANGES``; longer paths are composed along
    the shortest chain of direct changes.
    """
    src, dst = BlowupChartId(src), BlowupChartId(dst)
    xi = p.xi if isinstance(p, Params) else float(p)
    u = np.asarray(local, dtype=float)
    if src == dst:
        return u.copy()
    path = _path(src, dst)
    if path is None:
        raise AtlasDomainError(f"no coordinate change from {src.value} to {dst.value}")
    for a, b in zip(path[:-1], path[1:]):
        u = CHANGES[(a, b)].fn(u, xi)
        rel = _MUTATIONS.get((a, b))
        if rel is not None:
            u = u * (1.0 + rel)
    return u


def _path(src, dst):
    frontier, seen = [[src]], {src}
    while frontier:
        nxt = []
        for path in frontier:
            for (a, b) in CHANGES:
                if a == path[-1] and b not in seen:
                    if b == dst:
                        return path + [b]
                    seen.add(b)
                    nxt.append(path + [b])
        frontier = nxt
    return None


# ---------------------------------------------------------------------------
# chi and the map M


def chi(p):
    """Negative root ``x`` of ``x^2 + x^4 p^2 = 1`` (``chi(0) = -1``).

    Equal to ``-sqrt(sqrt(4p^2 + 1) - 1) / (sqrt(2) |p|)``, rewritten as
    ``-sqrt(2 / (1 + sqrt(1 + 4p^2)))`` to avoid cancellation near ``p = 0``.
    """
    p = float(p)
    return -math.sqrt(2.0 / (1.0 + math.sqrt(1.0 + 4.0 * p * p)))


def psi13(u, xi) -> np.ndarray:
    """Polar third blowup: ``(y, r, rho, varrho, xbb, wbb)`` to ``(x, y, w, q, eps)``."""
    y, r, rho, vr, xb, wb = u
    d = math.sqrt(1.0 + vr * vr * xb * xb + vr ** 4 * wb * wb)
    s = math.sqrt(1.0 + rho * rho / (d * d))
    return np.array([-1.0 - xi * y + rho * vr * xb / d, y, rho * vr * vr * wb / d,
                     r / s, r * rho / d / s])


def psi14(v, xi) -> np.ndarray:
    """Fourth blowup: ``(y, r, sigma, pi, wtt, qbt)`` to ``(x, y, w, q, eps)``."""
    y, r, sg, pi, wt, qt = v
    c = chi(pi * wt)
    s = math.sqrt(1.0 + pi * pi * qt * qt)
    return np.array([-1.0 - xi * y + sg * c, y, sg * sg * c * c * pi * wt, r * pi * qt / s, r / s])


def _in_u3(u):
    y, r, rho, vr, xb, wb = u
    return rho > 0 and vr > 0 and xb < 0 and wb > 0 and abs(xb * xb + wb * wb - 1.0) < 1e-9


def m_map(u) -> np.ndarray:
    """Map ``U3 -> P4b`` with ``psi13 = psi14 o m_map`` on ``U3``."""
    if not _in_u3(u):
        raise AtlasDomainError("m_map requires rho > 0, varrho > 0, xbb < 0, wbb > 0 on S^1")
    y, r, rho, vr, xb, wb = u
    d = math.sqrt(1.0 + vr * vr * xb * xb + vr ** 4 * wb * wb)
    a = d / rho                       # pi * qbt
    b = d * wb / (rho * xb * xb)      # pi * wtt
    pi = math.hypot(a, b)
    sg = rho * vr * xb / d / chi(b)
    return np.array([y, r, sg, pi, b / pi, a / pi])


def m_map_inverse(v) -> np.ndarray:
    y, r, sg, pi, wt, qt = v
    if not (sg > 0 and pi > 0 and wt > 0 and qt > 0):
        raise AtlasDomainError("m_map_inverse requires sigma, pi, wtt, qbt > 0")
    a, b = pi * qt, pi * wt
    ratio = b / a
    xb = chi(ratio)
    wb = ratio * xb * xb
    vr = sg * chi(b) * a / xb
    d = math.sqrt(1.0 + vr * vr * xb * xb + vr ** 4 * wb * wb)
    return np.array([y, r, d / a, vr, xb, wb])


def sample_u3(rng, n) -> np.ndarray:
    ang = rng.uniform(0.05, 0.5 * math.pi - 0.05, n)
    return np.column_stack([
        rng.uniform(-1, 2, n), rng.uniform(0.05, 1, n), rng.uniform(0.05, 3, n),
        rng.uniform(0.05, 3, n), -np.cos(ang), np.sin(ang),
    ])


# ---------------------------------------------------------------------------
# verification


def jvp(fn, u, v, h=1e-30) -> np.ndarray:
    """Directional derivative ``D fn(u) . v`` by complex step."""
    u = np.asarray(u, dtype=complex)
    return np.imag(fn(u + 1j * h * np.asarray(v))) / h


def angle(a, b) -> float:
    """Angle between two vectors; ``pi`` when one of them vanishes."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return math.pi
    ua, ub = a / na, b / nb
    return 2.0 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub))


def collinearity(cid, local, p: Params):
    """Return ``(angle, ratio)`` between the pushed-forward chart field and the base field.

    ``ratio`` is ``|base| / |pushforward|``, which should equal the
    desingularization factor of the chart.
    """
    spec = _spec(cid)
    xi = p.xi
    u = np.asarray(local, dtype=float)
    push = jvp(lambda z: spec.blowdown(z, xi), u, spec.vf(u, p))
    base = BASES[spec.base].vf(spec.blowdown(u, xi), p)
    nb, npush = np.linalg.norm(base), np.linalg.norm(push)
    return angle(push, base), (nb / npush if npush > 0 else math.inf)


def _rel_diff(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def _common_point(cid, u, xi):
    """Point used to compare charts: base state, or ``PHI1`` coordinates."""
    spec = _spec(cid)
    if spec.base == "EXT3":
        return blowdown(cid, u, xi)
    return to_phi1(cid, u, xi)


def _sample_change(change, rng, xi):
    spec = _spec(change.src)
    u = spec.sample(rng, 1)[0]
    if change.src == _C.B122:
        u[4] = -abs(u[4]) - 0.05
    elif change.src == _C.K112:
        u[3] = abs(u[3]) + 0.05
    elif change.src == _C.K21:
        u[0] = -abs(u[0]) - 0.05
    if change.src == _C.K1121 and change.on_leaf:
        u[0] = q_leaf(u[1])
    return u


def check_change(change: ChartChange, p: Params, rng, n=200) -> float:
    worst = 0.0
    for _ in range(n):
        u = _sample_change(change, rng, p.xi)
        v = change_chart(change.src, change.dst, u, p)
        a = _common_point(change.src, u, p.xi)
        b = _common_point(change.dst, v, p.xi)
        worst = max(worst, _rel_diff(a, b))
        if _spec(change.dst).base in ("EXT3", "EXT1", "ZM1") and change.on_leaf:
            s = blowdown(change.dst, v, p.xi)
            leaf = BASES[_spec(change.dst).base].leaf(s)
            worst = max(worst, abs(s[3] - leaf) / max(leaf, 1e-300))
    return worst


_X3 = lambda s, xi: s[0] + 1.0 + xi * s[1]
_X1 = lambda s, xi: s[0] + xi + s[1]
_XC = lambda s, xi: s[0] + xi
_I = lambda i: (lambda s, xi: s[i])

#: radial coordinate and the blown-down deviations with their weights
HOMOGENEITY = {
    _C.B11: ("rho1", [(_X3, 1), (_I(2), 1), (_I(4), 1)]),
    _C.B12: ("rho2", [(_X3, 1), (_I(2), 1), (_I(4), 1)]),
    _C.B122: ("varrho2", [(_X3, 1), (_I(2), 2)]),
    _C.B211: ("sigma1", [(_X3, 1), (_I(2), 2)]),
    _C.K111: ("rho1", [(_X1, 1), (_I(2), 1), (_I(4), 1)]),
    _C.K112: ("rho2", [(_X1, 1), (_I(2), 1), (_I(4), 1)]),
    _C.K1121: ("varrho1", [(_XC, 1), (_I(1), 1), (_I(4), 1)]),
    _C.K21: ("sigma1", [(_XC, 1), (_I(1), 1), (_I(3), 1)]),
    _C.K311: ("pi1", [(_XC, 1), (_I(1), 1), (_I(4), 1)]),
}


def check_homogeneity(cid, p: Params, rng, n=50) -> float:
    """Worst relative error of ``dev(s * radial) = s**k dev(radial)``."""
    spec = _spec(cid)
    radial, devs = HOMOGENEITY[BlowupChartId(cid)]
    i = spec.coords.index(radial)
    worst = 0.0
    for u in spec.sample(rng, n):
        for s in (0.1, 0.5, 3.0):
            v = u.copy()
            v[i] *= s
            a, b = spec.blowdown(u, p.xi), spec.blowdown(v, p.xi)
            for dev, k in devs:
                worst = max(worst, _rel_diff(dev(b, p.xi), s ** k * dev(a, p.xi)))
    return worst


def leaf_drift(base: str, s0, p: Params, t_end=1.0) -> float:
    """Largest relative deviation ``|q - leaf| / leaf`` along a trajectory."""
    from scipy.integrate import solve_ivp

    sys = BASES[base]
    sol = solve_ivp(lambda t, s: sys.vf(s, p), (0.0, t_end), np.asarray(s0, float),
                    method="DOP853", rtol=1e-13, atol=1e-15, dense_output=False,
                    t_eval=np.linspace(0.0, t_end, 41))
    if not sol.success:
        return math.inf
    worst = 0.0
    for s in sol.y.T:
        leaf = sys.leaf(s)
        worst = max(worst, abs(s[3] - leaf) / leaf)
    return worst


def numerical_jacobian(fn, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = len(u)
    return np.column_stack([jvp(fn, u, np.eye(n)[i]) for i in range(n)])


def verify_atlas(p: Params | None = None, seed: int = 0, n_points: int = 200,
                 n_diagram: int = 1000) -> dict:
    """Run every atlas check and return a report with worst errors.

    ``report["passed"]`` is true when every check meets its tolerance.
    """
    p = p or Params(alpha=0.8, xi=0.5)
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, worst, tol, **extra):
        checks.append(dict(name=name, worst=float(worst), tol=tol, passed=bool(worst < tol), **extra))

    for cid, spec in CHARTS.items():
        pts = spec.sample(rng, n_points)
        worst, ratios = 0.0, []
        for u in pts:
            ang, ratio = collinearity(cid, u, p)
            worst = max(worst, ang)
            ratios.append(ratio / spec.factor_value(u))
        ratios = np.array(ratios)
        add(f"collinearity:{cid.value}", worst, 1e-8,
            factor="*".join(spec.factor),
            factor_ratio_min=float(ratios.min()), factor_ratio_max=float(ratios.max()))

    for key, change in CHANGES.items():
        add(f"change:{key[0].value}->{key[1].value}", check_change(change, p, rng, n_points), 1e-10)

    worst_diag = worst_inv = 0.0
    for u in sample_u3(rng, n_diagram):
        v = m_map(u)
        worst_diag = max(worst_diag, _rel_diff(psi13(u, p.xi), psi14(v, p.xi)))
        worst_inv = max(worst_inv, _rel_diff(m_map_inverse(v), u))
    add("m_map:diagram", worst_diag, 1e-10)
    add("m_map:inverse", worst_inv, 1e-10)

    for cid in HOMOGENEITY:
        add(f"homogeneity:{cid.value}", check_homogeneity(cid, p, rng), 1e-12)

    grid = np.concatenate([[0.0], np.logspace(-12, 6, 400)])
    add("chi:identity", max(abs(chi(s) ** 2 + chi(s) ** 4 * s * s - 1.0) for s in grid), 1e-12)

    worst = 0.0
    for w0 in (0.3, 0.5, 1.0):
        s0 = [-1.2, 0.4, w0, q_leaf(w0), 0.05]
        worst = max(worst, leaf_drift("EXT3", s0, p))
        s1 = [-0.4, 0.3, w0, q_leaf(w0), 0.05]
        worst = max(worst, leaf_drift("EXT1", s1, p))
        s2 = [-0.4, 0.3, w0, q_leaf_m1(w0), 0.05]
        worst = max(worst, leaf_drift("ZM1", s2, p))
    add("leaf:invariance", worst, 1e-9)

    worst = 0.0
    for _ in range(n_points):
        w1 = rng.uniform(0.2, 2.0)
        th = rng.uniform(0.05, 2.0)
        s = np.array([rng.uniform(-2, 1), th, w1, q_leaf(w1), rng.uniform(0.01, 1)])
        worst = max(worst, _base_angle(ext_vf_phi1, ext1_to_phi1, s, p))
        s = np.array([rng.uniform(-2, 1), rng.uniform(0.05, 2), rng.uniform(-2, 2), rng.uniform(0.01, 1)])
        worst = max(worst, _base_angle(base_vf_w1, w1base_to_phi1, s, p))
        w3 = rng.uniform(0.2, 2.0)
        s = np.array([rng.uniform(-2, 1), rng.uniform(0.05, 2), w3, q_leaf_m1(w3), rng.uniform(0.01, 1)])
        worst = max(worst, _base_angle(base_vf_zm1, zm1base_to_phi1, s, p))
    add("collinearity:phi1-bases", worst, 1e-8)

    worst = 0.0
    for _ in range(20):
        w = rng.uniform(0.2, 2.0)
        y = rng.uniform(-1, 1)
        s = np.array([-1.0 - p.xi * y, y, w, q_leaf(w), 0.0])
        worst = max(worst, np.max(np.abs(ext_vf_phi3(s, p))))
        ev = np.linalg.eigvals(numerical_jacobian(lambda z: _ext3_complex(z, p), s))
        ev = ev[np.argsort(-np.abs(ev))]
        lam = -w * s[3] / p.xi
        worst = max(worst, abs(ev[0] - lam) / abs(lam), np.max(np.abs(ev[1:])) / abs(lam))
    add("critical-set:eigenvalue", worst, 1e-8)

    checks_ok = all(c["passed"] for c in checks)
    return dict(params=dict(alpha=p.alpha, xi=p.xi), seed=seed, passed=checks_ok, checks=checks)


def _ext3_complex(s, p):
    x, y, w, q, e = s
    g = y + (x + 1.0) / p.xi
    return np.array([
        -e * w * (x + 1.0 + p.alpha) + x * w * q * g,
        e * w * w * (1.0 - np.exp(-1.0 / w)) + y * w * q * g,
        w * w * q * g,
        2.0 * q * q * g,
        0.0 * e,
    ])


def _base_angle(vf, to_phi1_fn, s, p):
    push = jvp(to_phi1_fn, s, vf(s, p))
    return angle(push, phi1_ext_vf(to_phi1_fn(s), p))


def manifest() -> dict:
    """Machine-readable description of charts and coordinate changes."""
    return dict(
        bases={k: list(b.coords) for k, b in BASES.items()},
        charts=[dict(id=s.id.value, coords=list(s.coords), arity=s.arity, base=s.base,
                     desingularization="*".join(s.factor), positive=list(s.cone),
                     description=s.description) for s in CHARTS.values()],
        changes=[dict(src=c.src.value, dst=c.dst.value, domain=c.domain, on_leaf=c.on_leaf)
                 for c in CHANGES.values()],
    )


def manifest_json(indent=2) -> str:
    return json.dumps(manifest(), indent=indent)
