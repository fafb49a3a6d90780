"""Sections, section-to-section maps and limit-cycle extraction.

Two sections cut the relaxation cycle:

* ``Sigma0``: ``y = 1/delta`` crossed with ``y`` decreasing, near the
  critical manifold on the attracting side.  In-section coordinates
  ``(x, z)``.
* ``Sigma1``: ``z = 1/delta`` crossed with ``z`` increasing.  In-section
  coordinates ``(x, y)``.

``pi0`` follows the slow passage from ``Sigma0`` to ``Sigma1`` and ``pi1``
the global excursion back.  The limit cycle is the fixed point of
``pi1 o pi0``, found by plain Picard iteration because the composite map is
strongly contracting.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import Params, m, m_tilde, vf_reduced
from .compactify import ChartId, ChartPolicy, to_affine, to_sphere_chart
from .integrate import (IntegratorConfig, Section, Trajectory, NoCrossingError,
                        SectionWindowError, IntegrationError, integrate_multichart)
from .singular import DEFAULT_DELTA, RegimeError, wcu_q6

DEFAULT_HALF_WIDTH = 0.5
EPS_RANGE = (1e-5, 5e-2)


class ConvergenceError(IntegrationError):
    """Picard iteration did not converge within ``max_iter``."""


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class SectionSpec:
    """A section ``coords[index] == 1/delta`` with a box window.

    ``center`` and ``half_width`` are given in the two in-section
    coordinates, ordered as in the affine state with ``index`` removed.
    """

    name: str
    index: int
    delta: float
    direction: int
    center: tuple
    half_width: tuple = (DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if min(self.half_width) <= 0:
            raise ValueError("window half-widths must be positive")

    @property
    def level(self) -> float:
        return 1.0 / self.delta

    @property
    def free(self) -> tuple:
        return tuple(i for i in range(3) if i != self.index)

    @property
    def window(self) -> tuple:
        return tuple((i, (c - h, c + h)) for i, c, h in zip(self.free, self.center, self.half_width))

    def section(self, terminal: bool = True) -> Section:
        return Section(self.index, self.level, self.direction, ChartId.AFFINE, self.window,
                       self.name, terminal)

    def lift(self, v) -> np.ndarray:
        """Affine state of in-section coordinates ``v``."""
        out = np.empty(3)
        out[self.index] = self.level
        out[list(self.free)] = np.asarray(v, dtype=float)[:2]
        return out

    def reduce(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float)[list(self.free)]

    def contains(self, v) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(np.abs(v - np.asarray(self.center)) <= np.asarray(self.half_width)))

    def grid(self, n: int, scale: float = 1.0) -> np.ndarray:
        """``n x n`` grid over the window (shrunk by ``scale``), shape ``(n*n, 2)``."""
        a = [np.linspace(c - scale * h, c + scale * h, n)
             for c, h in zip(self.center, self.half_width)]
        A, B = np.meshgrid(*a, indexing="ij")
        return np.column_stack([A.ravel(), B.ravel()])


def q0_asymptotic(p: Params, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Two-term estimate of ``W^cu(Q6)`` on ``Sigma0`` as an affine point."""
    y = 1.0 / delta
    z = -math.log(y) * (1.0 + p.alpha * delta / p.xi)
    return np.array([m(y, z, p), y, z])


def manifold_anchors(p: Params, delta: float = DEFAULT_DELTA, y_max: float = 1e3):
    """``q0 = W^cu(Q6) ∩ Sigma0`` and ``q1 = W^cu(Q6) ∩ Sigma1`` (affine points on ``C``)."""
    if not p.alpha > p.xi:
        raise RegimeError(f"anchors need alpha > xi, got alpha={p.alpha}, xi={p.xi}")
    q = p if p.eps == 0 else Params(p.alpha, p.xi)
    curve = wcu_q6(q, y_max=y_max, delta=delta)
    if curve.status != "z_stop":
        raise RegimeError(f"W^cu(Q6) does not reach z={1.2 / delta} ({curve.status})")
    y0 = 1.0 / delta
    z0 = curve.z_at_y(y0, "first")
    d = curve.z - y0
    idx = np.nonzero((d[:-1] < 0) & (d[1:] >= 0))[0]
    if len(idx) == 0:
        raise RegimeError(f"W^cu(Q6) never crosses z={y0}")
    i = idx[0]
    sc = brentq(lambda v: curve.dense(v)[1] - y0, curve.s[i], curve.s[i + 1], xtol=1e-14)
    y1 = float(curve.dense(sc)[0])
    return np.array([m(y0, z0, p), y0, z0]), np.array([m(y1, y0, p), y1, y0])


def section_specs(p: Params, delta: float = DEFAULT_DELTA,
                  half_width: float = DEFAULT_HALF_WIDTH):
    """``(Sigma0, Sigma1)`` with windows centred on the manifold anchors."""
    q0, q1 = manifold_anchors(p, delta)
    hw = (half_width, half_width)
    s0 = SectionSpec("Sigma0", 1, delta, -1, (float(q0[0]), float(q0[2])), hw)
    s1 = SectionSpec("Sigma1", 2, delta, +1, (float(q1[0]), float(q1[1])), hw)
    return s0, s1


# ---------------------------------------------------------------------------
# maps


@dataclass
class SectionHit:
    """Result of a section-to-section map."""

    point: np.ndarray      # affine state on the target section
    coords: np.ndarray     # in-section coordinates
    t: float               # elapsed slow time
    traj: Trajectory | None = field(default=None, repr=False)


def _flow(p, v, src: SectionSpec, dst: SectionSpec, cfg, policy, t_max, check_window):
    if p.eps <= 0:
        raise ValueError("section maps need eps > 0; use pi0_reduced for eps = 0")
    v = np.asarray(v, dtype=float)
    if check_window and not src.contains(v):
        raise SectionWindowError(f"start {v} outside the {src.name} window", src.lift(v))
    traj = integrate_multichart(src.lift(v), (0.0, t_max), p, cfg, policy,
                                sections=(dst.section(),))
    hits = [e for e in traj.events if e.name == dst.name]
    if not hits:
        raise NoCrossingError(f"no crossing of {dst.name} before t={t_max}",
                              traj.final, traj.chart[-1])
    ev = hits[-1]
    point = to_affine(ev.chart, ev.state[:3])
    point[dst.index] = dst.level
    coords = dst.reduce(point)
    if check_window and not dst.contains(coords):
        raise SectionWindowError(f"crossing {coords} outside the {dst.name} window", point,
                                 ev.chart)
    return SectionHit(point, coords, float(ev.t), traj)


def pi0(v, p: Params, specs, cfg: IntegratorConfig | None = None,
        policy: ChartPolicy | None = None, t_max: float = 1e3,
        check_window: bool = True) -> SectionHit:
    """Map ``(x, z)`` on ``Sigma0`` to its first forward crossing of ``Sigma1``."""
    return _flow(p, v, specs[0], specs[1], cfg, policy, t_max, check_window)


def pi1(v, p: Params, specs, cfg: IntegratorConfig | None = None,
        policy: ChartPolicy | None = None, t_max: float = 1e3,
        check_window: bool = True) -> SectionHit:
    """Map ``(x, y)`` on ``Sigma1`` through the excursion back to ``Sigma0``."""
    return _flow(p, v, specs[1], specs[0], cfg, policy, t_max, check_window)


def pi(v, p: Params, specs, cfg=None, policy=None, t_max: float = 1e3,
       check_window: bool = True):
    """Composite return map on ``Sigma0``; returns ``(hit0, hit1)``."""
    h0 = pi0(v, p, specs, cfg, policy, t_max, check_window)
    h1 = pi1(h0.coords, p, specs, cfg, policy, t_max, check_window)
    return h0, h1


def pi0_reduced(x, p: Params, delta: float = DEFAULT_DELTA, t_max: float = 1e3) -> np.ndarray:
    """The ``eps = 0`` limit of ``pi0``.

    Projects ``(x, 1/delta, .)`` onto the critical manifold along the fast
    fiber and follows the reduced flow to ``z = 1/delta``.  Returns the
    affine landing point.
    """
    y0 = 1.0 / delta
    z0 = float(m_tilde(float(x), y0, p))

    def top(t, u):
        return u[1] - y0
    top.terminal = True
    top.direction = 1
    sol = solve_ivp(lambda t, u: vf_reduced(u, p), (0.0, t_max), [y0, z0], method="LSODA",
                    rtol=1e-12, atol=1e-12, events=top)
    if not len(sol.t_events[0]):
        raise NoCrossingError(f"reduced flow from x={x} does not reach z={y0}")
    y1 = float(sol.y_events[0][0][0])
    return np.array([m(y1, y0, p), y1, y0])


# ---------------------------------------------------------------------------
# limit cycle


@dataclass
class LimitCycle:
    """Attracting periodic orbit located on ``Sigma0``."""

    params: Params
    specs: tuple
    fixed_point: np.ndarray        # in-section (x, z) on Sigma0
    period: float
    min_z: float
    min_point: np.ndarray          # affine state of minimal z
    contraction: float             # spectral norm of the finite-difference DPi
    jacobian: np.ndarray
    closure: float                 # |Pi(v) - v| at the returned fixed point
    iterations: int
    history: list
    converged: bool
    orbit: list = field(repr=False, default_factory=list)

    @property
    def stable(self) -> bool:
        return self.contraction < 1.0

    @property
    def state(self) -> np.ndarray:
        return self.specs[0].lift(self.fixed_point)

    def knots(self):
        """``(t, chart, local)`` over the closed orbit, one row per knot."""
        ts, cs, us = [], [], []
        offset = 0.0
        for tr in self.orbit:
            ts.append(tr.t + offset)
            cs.extend(tr.chart)
            us.append(tr.y[:, :3])
            offset += float(tr.t[-1])
        return np.concatenate(ts), cs, np.concatenate(us)

    def orbit_affine(self) -> np.ndarray:
        return np.concatenate([tr.affine() for tr in self.orbit])

    def sphere_samples(self) -> np.ndarray:
        _, cs, us = self.knots()
        return np.array([to_sphere_chart(c, u) for c, u in zip(cs, us)])

    def to_dict(self, samples: bool = True) -> dict:
        d = {
            "alpha": self.params.alpha, "xi": self.params.xi, "eps": self.params.eps,
            "delta": self.specs[0].delta,
            "fixed_point": self.fixed_point.tolist(),
            "fixed_point_state": self.state.tolist(),
            "period": self.period, "min_z": self.min_z, "min_point": self.min_point.tolist(),
            "contraction": self.contraction, "jacobian": self.jacobian.tolist(),
            "closure": self.closure, "iterations": self.iterations,
            "history": list(self.history), "converged": self.converged,
        }
        if samples:
            t, cs, us = self.knots()
            pieces = []
            start = 0
            for k in range(1, len(cs) + 1):
                if k == len(cs) or cs[k] != cs[start]:
                    pieces.append({"chart": ChartId(cs[start]).value,
                                   "t": t[start:k].tolist(), "coords": us[start:k].tolist()})
                    start = k
            d["orbit"] = pieces
        return d

    def to_json(self, samples: bool = True) -> str:
        return json.dumps(self.to_dict(samples))

    def to_csv(self) -> str:
        """Orbit dump with columns ``t,chart,c1,c2,c3,x,y,z``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "chart", "c1", "c2", "c3", "x", "y", "z"])
        t, cs, us = self.knots()
        for ti, c, u in zip(t, cs, us):
            a = to_affine(c, u)
            w.writerow([repr(float(ti)), ChartId(c).value] + [repr(float(v)) for v in u]
                       + [repr(float(v)) for v in a])
        return buf.getvalue()


def _min_z(trajs):
    """Minimal ``z`` over the orbit, refined on the dense output near the best knot."""
    best = (math.inf, None)
    for tr in trajs:
        a = tr.affine()
        k = int(np.argmin(a[:, 2]))
        if a[k, 2] < best[0]:
            best = (a[k, 2], (tr, k))
    z, (tr, k) = best
    point = tr.affine()[k]
    lo, hi = max(k - 1, 0), min(k + 1, len(tr.s) - 1)
    for s in np.linspace(tr.s[lo], tr.s[hi], 41):
        i = tr._interval(s)
        a = to_affine(tr.chart[i], tr(s)[:3])
        if a[2] < z:
            z, point = float(a[2]), a
    return float(z), np.asarray(point, dtype=float)


def find_limit_cycle(p: Params, cfg: IntegratorConfig | None = None, specs=None,
                     delta: float = DEFAULT_DELTA, half_width: float = DEFAULT_HALF_WIDTH,
                     start=None, tol: float = 1e-8, max_iter: int = 30,
                     fd_step: float = 1e-4, policy: ChartPolicy | None = None,
                     t_max: float = 1e3) -> LimitCycle:
    """Fixed point of ``pi1 o pi0`` by Picard iteration.

    Starts from ``W^cu(Q6) ∩ Sigma0`` unless ``start`` is given and stops
    when successive ``Sigma0`` points differ by less than ``tol``.  The
    contraction estimate is the spectral norm of a forward-difference
    ``DPi`` with step ``fd_step`` times the window width.
    """
    if not p.alpha > p.xi:
        raise RegimeError(f"limit cycle search needs alpha > xi, got alpha={p.alpha}, xi={p.xi}")
    if p.eps <= 0:
        raise ValueError("find_limit_cycle needs eps > 0")
    cfg = cfg or IntegratorConfig()
    specs = specs or section_specs(p, delta, half_width)
    v = np.array(specs[0].center if start is None else start, dtype=float)
    history = []
    converged = False
    for it in range(1, max_iter + 1):
        h0, h1 = pi(v, p, specs, cfg, policy, t_max)
        diff = float(np.linalg.norm(h1.coords - v))
        history.append(diff)
        if diff < tol:
            converged = True
            break
        v = h1.coords
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (last step {diff:.3g})",
                               specs[0].lift(v))
    base = h1.coords
    J = np.empty((2, 2))
    for j in range(2):
        step = fd_step * 2.0 * specs[0].half_width[j]
        vp = v.copy()
        vp[j] += step
        _, hp = pi(vp, p, specs, cfg, policy, t_max)
        J[:, j] = (hp.coords - base) / step
    rho = float(np.linalg.norm(J, 2))
    z_min, point = _min_z([h0.traj, h1.traj])
    return LimitCycle(p, tuple(specs), v.copy(), h0.t + h1.t, z_min, point, rho, J, diff, it,
                      history, converged, [h0.traj, h1.traj])


def image_diameter(p: Params, specs, n: int = 3, cfg=None, policy=None) -> float:
    """Diameter of ``pi1`` applied to an ``n x n`` grid over the ``Sigma1`` window."""
    pts = np.array([pi1(v, p, specs, cfg, policy, check_window=False).coords
                    for v in specs[1].grid(n)])
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())
