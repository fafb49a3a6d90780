"""Poincare compactification of ``(x, y, z)`` space.

Points of R^3 are sent to the upper hemisphere of S^3 by central projection,
``(x, y, z) -> (x, y, z, 1)/|(x, y, z, 1)|``.  Infinity becomes the equator
``wb = 0``.  Two directional charts cover the parts of the equator that the
relaxation cycle visits:

* ``PHI1`` (``yb > 0``): ``x1 = x/y``, ``z1 = z/y``, ``w1 = 1/y``
* ``PHI3`` (``zb > 0``): ``x3 = x/z``, ``y3 = y/z``, ``w3 = 1/z``

Both chart vector fields are the pushforward of the slow field multiplied by
``eps * e^{-z}``.  This keeps them bounded as ``w -> 0``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import Params, ExpRangeError, vf_slow, _LOG_CAP


class ChartId(str, enum.Enum):
    AFFINE = "AFFINE"
    PHI1 = "PHI1"
    PHI3 = "PHI3"


class ChartDomainError(ValueError):
    """A point is outside the domain of the requested chart."""


class EquatorError(ChartDomainError):
    """A point on the equator has no affine representative."""


@dataclass(frozen=True)
class ChartPoint:
    chart: ChartId
    coords: tuple

    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)


# ---------------------------------------------------------------------------
# flat helpers


def F(s):
    """``1 - e^{-s}`` with a series branch for ``|s| < 1e-5``."""
    if np.ndim(s) == 0:
        s = float(s)
        if abs(s) < 1e-5:
            return s * (1.0 - s * (0.5 - s / 6.0))
        if -s > _LOG_CAP:
            raise ExpRangeError(f"F({s:.6g}) overflows")
        return -math.expm1(-s)
    s = np.asarray(s, dtype=float)
    if np.any(-s > _LOG_CAP):
        raise ExpRangeError("F overflows")
    small = np.abs(s) < 1e-5
    out = -np.expm1(-s)
    out[small] = s[small] * (1.0 - s[small] * (0.5 - s[small] / 6.0))
    return out


#: below this w the flat factor e^{-k/w} is taken to be exactly zero
W_FLAT = 1e-3 / _LOG_CAP


def flat_exp(k, w):
    """``e^{-k/w}`` for ``k > 0``, equal to zero for ``w <= W_FLAT``."""
    if w <= W_FLAT:
        return 0.0
    return math.exp(-k / w)


def F_inv(w):
    """``F(1/w) = 1 - e^{-1/w}`` with the flat limit ``1`` at ``w <= 0``."""
    return 1.0 - flat_exp(1.0, w)


# ---------------------------------------------------------------------------
# sphere


def to_sphere(s) -> np.ndarray:
    v = np.array([s[0], s[1], s[2], 1.0], dtype=float)
    return v / np.linalg.norm(v)


def from_sphere(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[3] <= 0:
        raise EquatorError("point on the equator (wb = 0) has no affine image")
    return q[:3] / q[3]


def sphere_from_phi1(u) -> np.ndarray:
    """Sphere point of ``(x1, z1, w1)``; valid including ``w1 = 0``."""
    x1, z1, w1 = u
    v = np.array([x1, 1.0, z1, w1], dtype=float)
    return v / np.linalg.norm(v)


def sphere_from_phi3(u) -> np.ndarray:
    """Sphere point of ``(x3, y3, w3)``; valid including ``w3 = 0``."""
    x3, y3, w3 = u
    v = np.array([x3, y3, 1.0, w3], dtype=float)
    return v / np.linalg.norm(v)


def chordal_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


# ---------------------------------------------------------------------------
# charts


def affine_to_phi1(s) -> np.ndarray:
    x, y, z = s
    if y <= 0:
        raise ChartDomainError(f"PHI1 needs y > 0, got y={y}")
    return np.array([x / y, z / y, 1.0 / y])


def phi1_to_affine(u) -> np.ndarray:
    x1, z1, w1 = u
    if w1 <= 0:
        raise EquatorError("PHI1 point with w1 <= 0 is at infinity")
    return np.array([x1 / w1, 1.0 / w1, z1 / w1])


def affine_to_phi3(s) -> np.ndarray:
    x, y, z = s
    if z <= 0:
        raise ChartDomainError(f"PHI3 needs z > 0, got z={z}")
    return np.array([x / z, y / z, 1.0 / z])


def phi3_to_affine(u) -> np.ndarray:
    x3, y3, w3 = u
    if w3 <= 0:
        raise EquatorError("PHI3 point with w3 <= 0 is at infinity")
    return np.array([x3 / w3, y3 / w3, 1.0 / w3])


def phi3_to_phi1(u) -> np.ndarray:
    x3, y3, w3 = u
    if y3 <= 0:
        raise ChartDomainError(f"PHI3 -> PHI1 needs y3 > 0, got {y3}")
    return np.array([x3 / y3, 1.0 / y3, w3 / y3])


def phi1_to_phi3(u) -> np.ndarray:
    x1, z1, w1 = u
    if z1 <= 0:
        raise ChartDomainError(f"PHI1 -> PHI3 needs z1 > 0, got {z1}")
    return np.array([x1 / z1, 1.0 / z1, w1 / z1])


_TO_AFFINE = {ChartId.AFFINE: np.asarray, ChartId.PHI1: phi1_to_affine,
              ChartId.PHI3: phi3_to_affine}
_FROM_AFFINE = {ChartId.AFFINE: lambda s: np.asarray(s, dtype=float),
                ChartId.PHI1: affine_to_phi1, ChartId.PHI3: affine_to_phi3}


def to_affine(chart: ChartId, u) -> np.ndarray:
    return np.asarray(_TO_AFFINE[ChartId(chart)](u), dtype=float)


def change_chart(src: ChartId, dst: ChartId, u) -> np.ndarray:
    """Map local coordinates from ``src`` to ``dst``."""
    src, dst = ChartId(src), ChartId(dst)
    if src == dst:
        return np.array(u, dtype=float)
    if src == ChartId.PHI3 and dst == ChartId.PHI1:
        return phi3_to_phi1(u)
    if src == ChartId.PHI1 and dst == ChartId.PHI3:
        return phi1_to_phi3(u)
    return _FROM_AFFINE[dst](to_affine(src, u))


def to_sphere_chart(chart: ChartId, u) -> np.ndarray:
    chart = ChartId(chart)
    if chart == ChartId.PHI1:
        return sphere_from_phi1(u)
    if chart == ChartId.PHI3:
        return sphere_from_phi3(u)
    return to_sphere(u)


# ---------------------------------------------------------------------------
# chart vector fields


def phi3_vf(u, p: Params) -> np.ndarray:
    """Vector field in ``(x3, y3, w3)`` after multiplication by ``eps e^{-z}``."""
    x3, y3, w3 = (float(v) for v in u)
    g = y3 + (x3 + 1.0) / p.xi
    q = flat_exp(2.0, w3)
    return np.array([
        -p.eps * (x3 + 1.0 + p.alpha) + x3 * q * g,
        p.eps * w3 * F_inv(w3) + y3 * q * g,
        w3 * q * g,
    ])


def _e2(z1, w1, g):
    """``e^{-2 z1/w1}`` times ``g``, with the flat and zero-residual limits."""
    if g == 0.0:
        return 0.0
    if w1 <= W_FLAT:
        if z1 > 0:
            return 0.0
        if z1 == 0:
            return g
        raise ExpRangeError("e^{-2 z1/w1} overflows near the equator")
    a = -2.0 * z1 / w1
    if a > _LOG_CAP:
        raise ExpRangeError(f"exp({a:.6g}) overflows in PHI1")
    return math.exp(a) * g


def phi1_vf(u, p: Params) -> np.ndarray:
    """Vector field in ``(x1, z1, w1)`` after multiplication by ``eps e^{-z}``.

    Components are returned in the chart's coordinate order
    ``(x1, z1, w1)``.
    """
    x1, z1, w1 = (float(v) for v in u)
    g = 1.0 + (x1 + z1) / p.xi
    if p.eps == 0.0:
        return np.array([0.0, -_e2(z1, w1, g), 0.0])
    f = F(z1 / w1) if w1 > 0 else 1.0
    return np.array([
        -p.eps * (w1 * x1 * f + x1 + (1.0 + p.alpha) * z1),
        -p.eps * w1 * z1 * f - _e2(z1, w1, g),
        -p.eps * w1 * w1 * f,
    ])


def time_rescaling(chart: ChartId, u, p: Params) -> float:
    """``dt/ds``: slow time per unit of the chart's own time."""
    chart = ChartId(chart)
    if chart == ChartId.AFFINE:
        return 1.0
    if chart == ChartId.PHI3:
        return p.eps * flat_exp(1.0, u[2])
    z = u[1] / u[2]
    if -z > _LOG_CAP:
        raise ExpRangeError("time rescaling overflows in PHI1")
    return p.eps * math.exp(-z)


def chart_vf(chart: ChartId, u, p: Params) -> np.ndarray:
    chart = ChartId(chart)
    if chart == ChartId.AFFINE:
        return vf_slow(u, p)
    if chart == ChartId.PHI1:
        return phi1_vf(u, p)
    return phi3_vf(u, p)


def pushforward(chart: ChartId, s, v) -> np.ndarray:
    """Derivative of the affine-to-chart map at ``s`` applied to ``v``."""
    x, y, z = s
    vx, vy, vz = v
    chart = ChartId(chart)
    if chart == ChartId.PHI1:
        return np.array([(vx * y - x * vy) / y ** 2, (vz * y - z * vy) / y ** 2, -vy / y ** 2])
    if chart == ChartId.PHI3:
        return np.array([(vx * z - x * vz) / z ** 2, (vy * z - y * vz) / z ** 2, -vz / z ** 2])
    return np.asarray(v, dtype=float)


# ---------------------------------------------------------------------------
# policy and equator


@dataclass(frozen=True)
class ChartPolicy:
    """Chart selection with a hysteresis band around ``r_switch``."""

    r_switch: float = 25.0
    hysteresis: float = 0.1

    def choose(self, s, current: ChartId | None = None) -> ChartId:
        x, y, z = s
        size = max(abs(x), abs(y), abs(z))
        if current is None:
            leave, back = self.r_switch, self.r_switch
        else:
            leave = self.r_switch * (1.0 + self.hysteresis)
            back = self.r_switch * (1.0 - self.hysteresis)
        current = None if current is None else ChartId(current)
        if current in (None, ChartId.AFFINE):
            if size < leave:
                return ChartId.AFFINE
        elif size < back:
            return ChartId.AFFINE
        # outside the affine ball: pick the dominant positive direction
        if y <= 0 and z <= 0:
            return ChartId.AFFINE
        if current == ChartId.PHI3 and z > 0 and z * (1.0 + self.hysteresis) >= y:
            return ChartId.PHI3
        if current == ChartId.PHI1 and y > 0 and y * (1.0 + self.hysteresis) >= z:
            return ChartId.PHI1
        return ChartId.PHI3 if z >= y else ChartId.PHI1


def chart_switch_policy(s_or_cp, current: ChartId | None = None,
                        policy: ChartPolicy | None = None) -> ChartId:
    """Chart to use at an affine state or :class:`ChartPoint`."""
    policy = policy or ChartPolicy()
    if isinstance(s_or_cp, ChartPoint):
        try:
            s = to_affine(s_or_cp.chart, s_or_cp.coords)
        except EquatorError:
            return s_or_cp.chart
        if current is None:
            current = s_or_cp.chart
    else:
        s = s_or_cp
    return policy.choose(s, current)


def equator_equilibria(p: Params) -> list:
    """Named equilibria on the equator, on S^3.

    ``Q1`` and ``Q6`` come from the two charts.  ``Q3`` and ``Q7`` lie on
    ``C_inf`` at ``z1 = xi/alpha`` and ``z1 = -xi``.  Their ``x1`` component
    is fixed by ``x1 + z1 = -xi``.
    """
    xi, al = p.xi, p.alpha
    pts = [
        ("Q1", sphere_from_phi3((-1.0, 0.0, 0.0))),
        ("Q3", sphere_from_phi1((-xi - xi / al, xi / al, 0.0))),
        ("Q7", sphere_from_phi1((0.0, -xi, 0.0))),
        ("Q6", sphere_from_phi1((-xi, 0.0, 0.0))),
    ]
    return pts


def l_infinity_sphere(p: Params, y3: float) -> np.ndarray:
    """Point ``x3 = -1 - alpha``, ``w3 = 0`` of ``L_inf`` on S^3."""
    return sphere_from_phi3((-1.0 - p.alpha, y3, 0.0))
