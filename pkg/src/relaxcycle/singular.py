"""Singular cycle and the invariant manifolds of the reduced problem.

The singular cycle is a closed curve on the Poincare sphere made of four
closed-form pieces at infinity and the center-unstable manifold ``W^cu(Q6)``
of the reduced flow on the critical manifold.  ``W^cu(Q6)`` and the
center-stable manifold ``W^cs(Q3)`` are computed by seeding with their
two-term asymptotics at large ``y``.

Orbits of the reduced flow are traced under the orbit-equivalent field
``X / (1 + e^z)``, which stays bounded for large ``|z|`` of either sign.
Physical time is carried as an extra component.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.special import expit

from .model import Params, m
from .compactify import (ChartId, to_sphere, sphere_from_phi1, sphere_from_phi3, phi3_to_phi1)

DEFAULT_DELTA = 0.5


class RegimeError(ValueError):
    """The singular cycle is only defined for ``alpha > xi``."""


class ManifoldEscapeError(RuntimeError):
    """A manifold left the region of interest before reaching a section."""

    def __init__(self, msg, state=None, direction=None):
        super().__init__(msg)
        self.state = state
        self.direction = direction


# ---------------------------------------------------------------------------
# reduced orbits


def _orbit_field(p: Params, direction: int):
    al, xi = p.alpha, p.xi

    def f(s, u):
        y, z = u[0], u[1]
        sp, sm = expit(z), expit(-z)
        return [direction * math.tanh(0.5 * z),
                direction * (xi * sm + (al * z - xi * y - xi) * sp),
                direction * sm]
    return f


def _phi3_orbit_field(p: Params):
    """Forward reduced flow in ``(y3, w3)`` with ``y = y3/w3``, ``z = 1/w3``."""
    al, xi = p.alpha, p.xi

    def f(s, u):
        y3, w3, t = u
        sp = expit(1.0 / w3)
        sm = expit(-1.0 / w3)
        gy = math.tanh(0.5 / w3)
        wgz = xi * w3 * sm + (al - xi * y3 - xi * w3) * sp
        return [w3 * gy - y3 * wgz, -w3 * wgz, w3 * sm]
    return f


@dataclass
class ManifoldCurve:
    """Samples of an orbit on the critical manifold.

    ``t`` is physical slow time measured from the seed (negative for
    backward orbits).  ``status`` says why the integration stopped.
    """

    name: str
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    t: np.ndarray
    status: str
    direction: int
    tail_phi3: np.ndarray | None = None
    dense: object = field(default=None, repr=False)
    s: np.ndarray | None = field(default=None, repr=False)

    def affine(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.z])

    def z_at_y(self, y0: float, branch: str = "first") -> float:
        """``z`` where the curve crosses ``y = y0`` (first or last crossing)."""
        d = self.y - y0
        idx = np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]
        if len(idx) == 0:
            raise ManifoldEscapeError(f"{self.name} never crosses y={y0}")
        i = idx[0] if branch == "first" else idx[-1]
        if self.dense is None:
            a = d[i] / (d[i] - d[i + 1])
            return float(self.z[i] + a * (self.z[i + 1] - self.z[i]))
        s = brentq(lambda v: self.dense(v)[0] - y0, self.s[i], self.s[i + 1], xtol=1e-14)
        return float(self.dense(s)[1])


def _trace(p, y0, z0, direction, n_samples, s_max, events, name, origin_tol=1e-5):
    f = _orbit_field(p, direction)
    evs = list(events)

    def origin(s, u):
        return math.hypot(u[0], u[1]) - origin_tol
    origin.terminal = True
    origin.direction = -1
    evs.append(origin)
    sol = solve_ivp(f, (0.0, s_max), [y0, z0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12,
                    events=evs, dense_output=True)
    if sol.status < 0:
        raise ManifoldEscapeError(f"{name}: {sol.message}", sol.y[:, -1], direction)
    s_end = sol.t[-1]
    status = "s_max"
    for k, te in enumerate(sol.t_events):
        if len(te) and te[-1] == s_end:
            status = getattr(evs[k], "label", "origin")
    ss = np.linspace(0.0, s_end, n_samples)
    u = sol.sol(ss)
    y, z, t = u[0], u[1], u[2] * direction
    return ManifoldCurve(name, y, z, m(y, z, p), t, status, direction, dense=sol.sol, s=ss)


def wcu_q6(p: Params, y_max: float = 1e3, n_samples: int = 800, z_stop: float | None = None,
           delta: float = DEFAULT_DELTA, s_max: float = 2e4, to_infinity: bool = False) -> ManifoldCurve:
    """Center-unstable manifold of ``Q6`` traced forward from ``y = y_max``.

    Stops when ``z`` reaches ``z_stop`` (default ``1.2/delta``), on
    convergence to the origin, or at ``s_max``.  With ``to_infinity`` the
    orbit is continued in ``PHI3`` after ``z_stop`` until it is within
    ``1e-10`` of ``Q1``; the tail is stored in ``tail_phi3`` as
    ``(x3, y3, w3)`` rows.
    """
    z_stop = 1.2 / delta if z_stop is None else z_stop
    z0 = -math.log(y_max) * (1.0 + p.alpha / (p.xi * y_max))

    def top(s, u):
        return u[1] - z_stop
    top.terminal = True
    top.direction = 1
    top.label = "z_stop"

    def escape(s, u):
        return abs(u[0]) - 1e3 * y_max
    escape.terminal = True
    escape.label = "escape"
    curve = _trace(p, y_max, z0, +1, n_samples, s_max, [top, escape], "Wcu_Q6")
    if to_infinity and curve.status == "z_stop":
        curve.tail_phi3 = _approach_q1(p, curve.y[-1], curve.z[-1], n_samples // 4)
    return curve


def _approach_q1(p, y, z, n):
    f = _phi3_orbit_field(p)

    def done(s, u):
        return math.hypot(u[0], u[1]) - 1e-11
    done.terminal = True
    sol = solve_ivp(f, (0.0, 1e4), [y / z, 1.0 / z, 0.0], method="DOP853", rtol=1e-12,
                    atol=1e-14, events=[done], dense_output=True)
    ss = np.linspace(0.0, sol.t[-1], max(n, 2))
    y3, w3 = sol.sol(ss)[:2]
    return np.column_stack([-1.0 - p.xi * y3 - w3, y3, w3])


def wcs_q3(p: Params, y_max: float = 1e3, n_samples: int = 800, s_max: float = 2e4,
           z_floor: float = -60.0) -> ManifoldCurve:
    """Center-stable manifold of ``Q3`` traced backward from ``y = y_max``."""
    z0 = p.xi / p.alpha * y_max + (1.0 + p.alpha) * p.xi / p.alpha ** 2

    def low(s, u):
        return u[1] - z_floor
    low.terminal = True
    low.label = "escape"

    def far(s, u):
        return abs(u[0]) - 10.0 * y_max
    far.terminal = True
    far.label = "escape"
    return _trace(p, y_max, z0, -1, n_samples, s_max, [low, far], "Wcs_Q3")


def _first_fold(p, y0, z0, direction):
    """First crossing of ``z = 0`` (where ``y`` turns) along an orbit."""
    f = _orbit_field(p, direction)

    def fold(s, u):
        return u[1]
    fold.terminal = True
    fold.direction = direction
    sol = solve_ivp(f, (0.0, 2e4), [y0, z0, 0.0], method="DOP853", rtol=1e-13, atol=1e-13,
                    events=[fold])
    if not len(sol.t_events[0]):
        raise ManifoldEscapeError("orbit never reaches z = 0", sol.y[:, -1], direction)
    return float(sol.y_events[0][0][0])


def separation_function(p: Params, y_max: float = 1e3) -> float:
    """Signed distance between ``W^cs(Q3)`` and ``W^cu(Q6)`` on the fold ``z = 0``.

    Both manifolds cross ``z = 0`` transversally (``z' = -xi y``) at negative
    ``y``.  The value is ``y_cs - y_cu``: zero when the manifolds coincide
    and positive for ``alpha > xi``.
    """
    z_cu = -math.log(y_max) * (1.0 + p.alpha / (p.xi * y_max))
    z_cs = p.xi / p.alpha * y_max + (1.0 + p.alpha) * p.xi / p.alpha ** 2
    y_cu = _first_fold(p, y_max, z_cu, +1)
    y_cs = _first_fold(p, y_max, z_cs, -1)
    return y_cs - y_cu


def classify(p: Params, z_stop: float = 30.0) -> str:
    """Fate of ``W^cu(Q6)``: ``"Q1"``, ``"origin"`` or ``"undetermined"``."""
    c = wcu_q6(p, z_stop=z_stop, n_samples=200)
    if c.status == "z_stop" and c.y[-1] / c.z[-1] < 0.05:
        return "Q1"
    if c.status == "origin":
        return "origin"
    return "undetermined"


# ---------------------------------------------------------------------------
# the set L


def L_set(p: Params, z_range=(1.0, 10.0), ratio: float = 0.0, n: int = 50) -> np.ndarray:
    """Points ``(x, y, z)`` of ``L``: ``x = -(1 + alpha) z`` with ``y = ratio * z``."""
    z = np.linspace(z_range[0], z_range[1], n)
    return np.column_stack([-(1.0 + p.alpha) * z, ratio * z, z])


def heuristic_L_vf(s, p: Params) -> np.ndarray:
    """Approximate field when ``e^{-2z} >> eps``: ``x' = -(x + (1+alpha) z)``, ``y' = 1``, ``z' = 0``."""
    x, y, z = s
    return np.array([-(x + (1.0 + p.alpha) * z), 1.0, 0.0])


def L_valid(z, eps: float):
    """Whether ``e^{-2z} > eps``, i.e. ``z < log(1/eps) / 2``."""
    return np.asarray(z) < 0.5 * math.log(1.0 / eps)


# ---------------------------------------------------------------------------
# singular cycle


@dataclass
class Segment:
    """One piece of the singular cycle.

    ``pieces`` is a list of ``(chart, coords)`` with ``coords`` an ``(n, 3)``
    array in that chart, ordered along the cycle's orientation.
    ``formula`` describes closed-form pieces.
    """

    name: str
    pieces: list
    formula: dict | None = None

    @property
    def chart(self) -> ChartId:
        return self.pieces[0][0]

    def start(self):
        return self.pieces[0][0], self.pieces[0][1][0]

    def end(self):
        return self.pieces[-1][0], self.pieces[-1][1][-1]

    def sphere(self) -> np.ndarray:
        rows = []
        for chart, pts in self.pieces:
            rows.extend(_to_sphere(chart, u) for u in pts)
        return np.array(rows)


def _to_sphere(chart, u):
    if chart == ChartId.PHI1:
        return sphere_from_phi1(u)
    if chart == ChartId.PHI3:
        return sphere_from_phi3(u)
    return to_sphere(u)


@dataclass
class SingularCycle:
    params: Params
    segments: list
    anchors: dict
    wcu: ManifoldCurve | None = field(default=None, repr=False)

    def names(self) -> list:
        return [s.name for s in self.segments]

    def segment(self, name) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def sphere_samples(self) -> np.ndarray:
        return np.vstack([s.sphere() for s in self.segments])

    def junction_errors(self) -> list:
        """Distance between consecutive segment endpoints in a shared chart."""
        out = []
        segs = self.segments
        for a, b in zip(segs, segs[1:] + segs[:1]):
            ca, ua = a.end()
            cb, ub = b.start()
            out.append((a.name, b.name, _chart_distance(ca, ua, cb, ub)))
        return out

    def to_dict(self) -> dict:
        return dict(
            params=dict(alpha=self.params.alpha, xi=self.params.xi),
            anchors={k: dict(chart=c.value, coords=list(map(float, u)))
                     for k, (c, u) in self.anchors.items()},
            segments=[dict(name=s.name, formula=s.formula,
                           pieces=[dict(chart=c.value, coords=np.asarray(u).tolist())
                                   for c, u in s.pieces]) for s in self.segments],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _chart_distance(ca, ua, cb, ub) -> float:
    ua, ub = np.asarray(ua, float), np.asarray(ub, float)
    if ca == cb:
        return float(np.max(np.abs(ua - ub)))
    # PHI3 -> PHI1 is available where y3 > 0; otherwise compare on the sphere
    if ca == ChartId.PHI3 and cb == ChartId.PHI1 and ua[1] > 0:
        return float(np.max(np.abs(phi3_to_phi1(ua) - ub)))
    if ca == ChartId.PHI1 and cb == ChartId.PHI3 and ub[1] > 0:
        return float(np.max(np.abs(ua - phi3_to_phi1(ub))))
    return float(np.linalg.norm(_to_sphere(ca, ua) - _to_sphere(cb, ub)))


def _require_regime(p: Params):
    if not p.alpha > p.xi:
        raise RegimeError(f"singular cycle needs alpha > xi, got alpha={p.alpha}, xi={p.xi}")


def anchor_points(p: Params) -> dict:
    """``Q1``-``Q6`` (without ``Q3``) in their defining charts."""
    _require_regime(p)
    a, xi = p.alpha, p.xi
    return {
        "Q1": (ChartId.PHI3, np.array([-1.0, 0.0, 0.0])),
        "Q2": (ChartId.PHI3, np.array([-1.0 - a, 0.0, 0.0])),
        "Q4": (ChartId.PHI3, np.array([-1.0 - a, 2.0 * a / xi, 0.0])),
        "Q5": (ChartId.PHI1, np.array([-xi / (2 * a) * (1 + a), xi / (2 * a) * (1 - a), 0.0])),
        "Q6": (ChartId.PHI1, np.array([-xi, 0.0, 0.0])),
    }


def gamma9_interval(p: Params):
    """``z1`` interval of the piece on ``C_inf``, or ``None`` when empty (``alpha = 1``)."""
    z5 = p.xi / (2 * p.alpha) * (1 - p.alpha)
    if p.alpha == 1.0:
        return None
    return (0.0, z5) if p.alpha < 1.0 else (z5, 0.0)


def min_z_line(y, p: Params):
    """Line ``z = xi (1 - alpha) / (2 alpha) * y`` near which the cycle attains min z for ``alpha > 1``.

    It is the direction of the ``C_inf`` piece of the singular cycle seen
    from the affine chart.
    """
    return p.xi * (1.0 - p.alpha) / (2.0 * p.alpha) * np.asarray(y)


def build_gamma0(p: Params, n: int = 200, y_max: float = 1e3, delta: float = DEFAULT_DELTA,
                 z_stop: float = 20.0) -> SingularCycle:
    """Assemble the singular cycle, oriented ``Q1 -> Q2 -> Q4 -> Q5 -> Q6 -> Q1``."""
    _require_regime(p)
    a, xi = p.alpha, p.xi
    Q = anchor_points(p)
    lin = np.linspace(0.0, 1.0, n)
    segs = []

    x3 = -1.0 - a * lin
    segs.append(Segment("gamma3", [(ChartId.PHI3, np.column_stack([x3, 0 * lin, 0 * lin]))],
                        dict(chart="PHI3", x3=[-1 - a, -1], y3=0, w3=0)))
    y3 = 2 * a / xi * lin
    segs.append(Segment("gamma4", [(ChartId.PHI3, np.column_stack([-1 - a + 0 * lin, y3, 0 * lin]))],
                        dict(chart="PHI3", x3=-1 - a, y3=[0, 2 * a / xi], w3=0)))
    z_hi, z_lo = xi / (2 * a), xi / (2 * a) * (1 - a)
    z1 = z_hi + (z_lo - z_hi) * lin
    segs.append(Segment("gamma7", [(ChartId.PHI1, np.column_stack(
        [-xi / (2 * a) * (1 + a) + 0 * lin, z1, 0 * lin]))],
        dict(chart="PHI1", x1=-xi / (2 * a) * (1 + a), z1=[z_lo, z_hi], w1=0)))
    iv = gamma9_interval(p)
    if iv is not None:
        z1 = z_lo * (1.0 - lin)
        segs.append(Segment("gamma9", [(ChartId.PHI1, np.column_stack([-xi - z1, z1, 0 * lin]))],
                            dict(chart="PHI1", x1="-xi - z1", z1=list(iv), w1=0)))

    curve = wcu_q6(p, y_max=y_max, n_samples=4 * n, z_stop=z_stop, delta=delta, to_infinity=True)
    if curve.status != "z_stop":
        raise ManifoldEscapeError(f"Wcu_Q6 did not reach z={z_stop} ({curve.status})")
    w1 = np.linspace(0.0, 1.0 / y_max, n)
    zz1 = w1 * np.log(np.where(w1 > 0, w1, 1.0)) * (1.0 + a * w1 / xi)
    head = np.column_stack([-xi - zz1, zz1, w1])
    pieces = [(ChartId.PHI1, head), (ChartId.AFFINE, curve.affine())]
    if curve.tail_phi3 is not None:
        pieces.append((ChartId.PHI3, curve.tail_phi3))
    segs.append(Segment("Wcu_Q6", pieces, dict(seed_y=y_max, z_stop=z_stop)))
    return SingularCycle(p, segs, Q, curve)


# ---------------------------------------------------------------------------
# Hausdorff distance on the sphere


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets (Euclidean/chordal)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))


def densify(points, factor: int = 2) -> np.ndarray:
    """Insert ``factor - 1`` chordal midpoints between consecutive sphere points."""
    pts = np.asarray(points, float)
    if factor <= 1 or len(pts) < 2:
        return pts
    w = np.arange(factor)[:, None, None] / factor
    seg = pts[:-1][None] * (1 - w) + pts[1:][None] * w
    out = np.vstack([seg.transpose(1, 0, 2).reshape(-1, pts.shape[1]), pts[-1:]])
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _cycle_sphere(cycle) -> np.ndarray:
    if hasattr(cycle, "sphere_samples"):
        return cycle.sphere_samples()
    pts = np.asarray(cycle, float)
    if pts.shape[1] == 3:
        return np.array([to_sphere(u) for u in pts])
    return pts


def hausdorff_to_cycle(cycle, gamma0: SingularCycle, rel_tol: float = 0.01,
                       max_rounds: int = 6) -> float:
    """Hausdorff distance on S^3 between a limit cycle and the singular cycle.

    ``cycle`` is a ``LimitCycle`` or an array of affine ``(x, y, z)`` or
    sphere points.  Both sample sets are densified until the distance
    changes by less than ``rel_tol``.
    """
    a = _cycle_sphere(cycle)
    b = gamma0.sphere_samples()
    d = hausdorff(a, b)
    for _ in range(max_rounds):
        a, b = densify(a, 2), densify(b, 2)
        d_new = hausdorff(a, b)
        if abs(d_new - d) <= rel_tol * max(d_new, 1e-300):
            return d_new
        d = d_new
    return d
