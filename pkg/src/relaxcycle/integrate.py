"""Linearly implicit integrator for stiff autonomous systems.

The stepper is the second order, L-stable Rosenbrock (W-method) pair used by
``ode23s``: one LU factorisation of ``I - h d J`` per step, three stage
solves and an embedded third order error estimate.  Dense output is cubic
Hermite through the knot values and slopes.

Events are :class:`Section` objects.  A crossing is bracketed on the dense
output, bisected, then polished with three Newton steps.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ExpRangeError, Params, jacobian_slow, vf_slow
from .compactify import (ChartId, ChartPolicy, chart_vf, change_chart, time_rescaling,
                         to_affine)

_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)


class IntegrationError(RuntimeError):
    """Base class for integrator failures; ``state`` is the last good state."""

    def __init__(self, message, state=None, chart=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)
        self.chart = chart


class StiffnessError(IntegrationError):
    pass


class MaxStepsError(IntegrationError):
    pass


class NoCrossingError(IntegrationError):
    pass


class TransversalityError(IntegrationError):
    pass


class SectionWindowError(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    h_init: float = 1e-6
    h_min: float = 1e-14
    h_max: float = math.inf
    max_steps: int = 2_000_000
    newton_tol: float = 1e-12
    newton_max_iter: int = 3

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def tightened(self, tol: float) -> "IntegratorConfig":
        return replace(self, abs_tol=tol, rel_tol=tol)


@dataclass(frozen=True)
class Section:
    """The hyperplane ``coords[index] == level`` in ``chart``.

    ``direction`` is ``+1`` (coordinate increasing), ``-1`` or ``0`` (any).
    ``window`` maps other coordinate indices to closed intervals.
    """

    index: int
    level: float
    direction: int = 0
    chart: ChartId = ChartId.AFFINE
    window: tuple = ()
    name: str = "section"
    terminal: bool = True

    def value(self, chart, u) -> float:
        if chart is not None and ChartId(chart) != ChartId(self.chart):
            u = change_chart(chart, self.chart, u[:3])
        return float(u[self.index]) - self.level

    def in_window(self, u) -> bool:
        return all(lo <= u[i] <= hi for i, (lo, hi) in self.window)

    def reduced(self, u) -> np.ndarray:
        """The in-section coordinates (all indices except ``index``)."""
        return np.array([u[i] for i in range(3) if i != self.index])

    def lift(self, v) -> np.ndarray:
        v = list(v)
        v.insert(self.index, self.level)
        return np.array(v, dtype=float)


@dataclass
class EventRecord:
    name: str
    s: float
    t: float
    state: np.ndarray
    chart: ChartId


@dataclass
class Trajectory:
    """Knots of an integration with Hermite dense output.

    ``s`` is the integration variable and ``t`` the physical slow time.  They
    coincide except inside compactification charts.  ``y`` holds local
    chart coordinates.  At a chart switch the same ``t`` appears twice, once
    per chart.
    """

    s: np.ndarray
    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    chart: list
    events: list = field(default_factory=list)
    step_log: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return sum(1 for e in self.step_log if e[3])

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]

    def _interval(self, s):
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.s) - 2)
        while i > 0 and self.s[i + 1] == self.s[i]:
            i -= 1
        return i

    def __call__(self, s) -> np.ndarray:
        """Dense output at integration variable ``s``."""
        if len(self.s) == 1:
            return self.y[0].copy()
        i = self._interval(s)
        return hermite(self.s[i], self.s[i + 1], self.y[i], self.y[i + 1],
                       self.f[i], self.f[i + 1], s)

    def affine(self) -> np.ndarray:
        """Knot states mapped to affine ``(x, y, z)``."""
        out = np.empty((len(self.s), 3))
        for k, (c, u) in enumerate(zip(self.chart, self.y)):
            out[k] = to_affine(c, u[:3])
        return out

    # -- export -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "s": self.s.tolist(),
            "t": self.t.tolist(),
            "y": self.y.tolist(),
            "f": self.f.tolist(),
            "chart": [ChartId(c).value for c in self.chart],
            "events": [{"name": e.name, "s": e.s, "t": e.t, "state": e.state.tolist(),
                        "chart": ChartId(e.chart).value} for e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        dim = len(d["y"][0]) if d["y"] else 0
        return cls(
            s=np.array(d["s"], dtype=float),
            t=np.array(d["t"], dtype=float),
            y=np.array(d["y"], dtype=float).reshape(-1, dim),
            f=np.array(d["f"], dtype=float).reshape(-1, dim),
            chart=[ChartId(c) for c in d["chart"]],
            events=[EventRecord(e["name"], e["s"], e["t"], np.array(e["state"]),
                                ChartId(e["chart"])) for e in d.get("events", [])],
        )

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "chart", "c1", "c2", "c3"])
        for t, c, u in zip(self.t, self.chart, self.y):
            w.writerow([repr(float(t)), ChartId(c).value] + [repr(float(v)) for v in u[:3]])
        return buf.getvalue()


def read_trajectory_csv(text: str):
    """Parse :meth:`Trajectory.to_csv` output into ``(t, charts, coords)``."""
    rows = list(csv.reader(io.StringIO(text)))
    body = rows[1:]
    t = np.array([float(r[0]) for r in body])
    charts = [ChartId(r[1]) for r in body]
    coords = np.array([[float(v) for v in r[2:5]] for r in body])
    return t, charts, coords


def hermite(s0, s1, y0, y1, f0, f1, s):
    h = s1 - s0
    if h == 0:
        return np.array(y1, dtype=float)
    th = (s - s0) / h
    h00 = (1 + 2 * th) * (1 - th) ** 2
    h10 = th * (1 - th) ** 2
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def hermite_derivative(s0, s1, y0, y1, f0, f1, s):
    h = s1 - s0
    th = (s - s0) / h
    d00 = 6 * th * (th - 1) / h
    d10 = (1 - th) * (1 - 3 * th)
    d01 = -d00
    d11 = th * (3 * th - 2)
    return d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1


def fd_jacobian(vf, u, f0=None):
    """Forward-difference Jacobian with step ``1e-7 (1 + |u_i|)``."""
    u = np.asarray(u, dtype=float)
    if f0 is None:
        f0 = vf(u)
    n = len(u)
    J = np.empty((len(f0), n))
    for i in range(n):
        h = 1e-7 * (1.0 + abs(u[i]))
        up = u.copy()
        up[i] += h
        J[:, i] = (vf(up) - f0) / h
    return J


_EYES = {}


def _eye(n):
    e = _EYES.get(n)
    if e is None:
        e = _EYES[n] = np.eye(n)
    return e


def ros_step(vf, J, u, F0, h):
    """One ode23s step.  Returns ``(u_new, F_new, err)``."""
    W = _eye(len(u)) - (h * _D) * J
    Wi = np.linalg.inv(W)
    k1 = Wi @ F0
    F1 = vf(u + 0.5 * h * k1)
    k2 = Wi @ (F1 - k1) + k1
    un = u + h * k2
    F2 = vf(un)
    k3 = Wi @ (F2 - _E32 * (k2 - F1) - 2.0 * (k1 - F0))
    err = (h / 6.0) * (k1 - 2.0 * k2 + k3)
    return un, F2, err


# ---------------------------------------------------------------------------
# core loop


class _Stop(Exception):
    pass


def _run(vf, jac, u0, s0, s_end, cfg, sections=(), chart=ChartId.AFFINE,
         t_index=None, t_end=None, stop_check=None, traj=None, h0=None):
    """Integrate from ``s0`` until ``s_end``, a terminal event or ``stop_check``.

    Appends to ``traj`` (created if ``None``) and returns
    ``(traj, reason, h_last)`` where ``reason`` is ``"end"``, ``"event"`` or
    ``"switch"``.
    """
    u = np.array(u0, dtype=float)
    try:
        F = vf(u)
    except ExpRangeError as exc:
        raise IntegrationError(f"vector field out of range at start: {exc}", u, chart) from exc
    tval = (lambda v, s: float(v[t_index])) if t_index is not None else (lambda v, s: s)
    if traj is None:
        traj = Trajectory(np.array([s0]), np.array([tval(u, s0)]), u[None, :].copy(),
                          F[None, :].copy(), [chart])
        S, T, Y, Fs, C = [s0], [tval(u, s0)], [u.copy()], [F.copy()], [chart]
    else:
        S, T, Y, Fs, C = (list(traj.s), list(traj.t), list(traj.y), list(traj.f),
                          list(traj.chart))
        S.append(s0)
        T.append(tval(u, s0))
        Y.append(u.copy())
        Fs.append(F.copy())
        C.append(chart)

    # event arming: a section the start point lies on is ignored until left
    g_prev = []
    armed = []
    for sec in sections:
        g = sec.value(chart, u)
        g_prev.append(g)
        armed.append(abs(g) > 1e-9 * (1.0 + abs(sec.level)))
    tg_prev = (tval(u, s0) - t_end) if t_end is not None else None

    s = s0
    h = min(cfg.h_init if h0 is None else h0, cfg.h_max)
    direction = 1.0 if s_end >= s0 else -1.0
    atol, rtol = cfg.abs_tol, cfg.rel_tol
    n_acc = 0
    reason = "end"
    log = traj.step_log
    while True:
        if direction * (s_end - s) <= 0:
            break
        if n_acc >= cfg.max_steps:
            raise MaxStepsError(f"max_steps={cfg.max_steps} exceeded at s={s}", u, chart)
        h = min(h, abs(s_end - s))
        try:
            J = jac(u) if jac is not None else fd_jacobian(vf, u, F)
            un, Fn, err = ros_step(vf, J, u, F, direction * h)
            sc = atol + rtol * np.maximum(np.abs(u), np.abs(un))
            r = float(np.max(np.abs(err) / sc))
            if not math.isfinite(r):
                r = math.inf
        except (ExpRangeError, np.linalg.LinAlgError, FloatingPointError):
            r = math.inf
        if r <= 1.0:
            s_new = s + direction * h if abs(s_end - s - direction * h) > 1e-15 * max(1.0, abs(s)) else s_end
            log.append((s, direction * h, r, True))
            n_acc += 1
            # events
            hit = None
            for k, sec in enumerate(sections):
                g = sec.value(chart, un)
                if not armed[k]:
                    if abs(g) > 1e-9 * (1.0 + abs(sec.level)):
                        armed[k] = True
                    g_prev[k] = g
                    continue
                crossed = (g_prev[k] < 0 <= g) or (g_prev[k] > 0 >= g)
                if crossed and g != g_prev[k]:
                    up = g > g_prev[k]
                    if sec.direction == 0 or (sec.direction > 0) == up:
                        sc_ = _locate(sec, chart, s, s_new, u, un, F, Fn)
                        if hit is None or direction * (sc_ - hit[0]) < 0:
                            hit = (sc_, k)
                g_prev[k] = g
            if tg_prev is not None:
                tg = float(un[t_index]) - t_end
                if tg_prev < 0 <= tg:
                    st = _locate_fn(lambda v: float(v[t_index]) - t_end, s, s_new, u, un, F, Fn)
                    if hit is None or direction * (st - hit[0]) < 0:
                        hit = (st, -1)
                tg_prev = tg
            if hit is not None:
                sh, k = hit
                uh = hermite(s, s_new, u, un, F, Fn, sh)
                if k >= 0:
                    sec = sections[k]
                    if sec.chart == chart:
                        uh[sec.index] = sec.level
                    _check_transversal(sec, chart, s, s_new, u, un, F, Fn, sh, vf, uh, t_index)
                    traj.events.append(EventRecord(sec.name, sh, tval(uh, sh), uh.copy(), chart))
                try:
                    Fh = vf(uh)
                except ExpRangeError:
                    Fh = hermite_derivative(s, s_new, u, un, F, Fn, sh)
                S.append(sh)
                T.append(tval(uh, sh))
                Y.append(uh)
                Fs.append(Fh)
                C.append(chart)
                if k < 0 or sections[k].terminal:
                    reason = "event"
                    u = uh
                    break
            s, u, F = s_new, un, Fn
            S.append(s)
            T.append(tval(u, s))
            Y.append(u.copy())
            Fs.append(F.copy())
            C.append(chart)
            if stop_check is not None and stop_check(u):
                reason = "switch"
                break
            fac = 5.0 if r == 0 else min(5.0, max(0.2, 0.8 * r ** (-1.0 / 3.0)))
            h = min(h * fac, cfg.h_max)
        else:
            log.append((s, direction * h, r, False))
            h *= 0.2 if not math.isfinite(r) else max(0.2, 0.8 * r ** (-1.0 / 3.0))
            if h < cfg.h_min:
                raise StiffnessError(f"step size {h:.3g} below h_min at s={s}", u, chart)
    traj.s = np.array(S)
    traj.t = np.array(T)
    traj.y = np.array(Y)
    traj.f = np.array(Fs)
    traj.chart = C
    return traj, reason, h


def _locate_fn(g, s0, s1, u0, u1, f0, f1):
    """Root of ``g`` on the Hermite interpolant between two knots."""
    a, b = s0, s1
    ga = g(u0)
    for _ in range(60):
        mid = 0.5 * (a + b)
        gm = g(hermite(s0, s1, u0, u1, f0, f1, mid))
        if (gm < 0) == (ga < 0) and gm != 0:
            a, ga = mid, gm
        else:
            b = mid
        if abs(b - a) <= 1e-6 * abs(s1 - s0):
            break
    x = 0.5 * (a + b)
    for _ in range(3):
        gx = g(hermite(s0, s1, u0, u1, f0, f1, x))
        dx = 1e-7 * abs(s1 - s0)
        gp = (g(hermite(s0, s1, u0, u1, f0, f1, x + dx)) - g(hermite(s0, s1, u0, u1, f0, f1, x - dx))) / (2 * dx)
        if gp == 0:
            break
        xn = x - gx / gp
        if not (min(s0, s1) <= xn <= max(s0, s1)):
            break
        x = xn
    return x


def _locate(sec, chart, s0, s1, u0, u1, f0, f1):
    if ChartId(sec.chart) == ChartId(chart):
        i, c = sec.index, sec.level
        a, b = s0, s1
        ga = u0[i] - c
        for _ in range(60):
            mid = 0.5 * (a + b)
            gm = hermite(s0, s1, u0[i], u1[i], f0[i], f1[i], mid) - c
            if (gm < 0) == (ga < 0) and gm != 0:
                a, ga = mid, gm
            else:
                b = mid
            if abs(b - a) <= 1e-6 * abs(s1 - s0):
                break
        x = 0.5 * (a + b)
        for _ in range(3):
            gx = hermite(s0, s1, u0[i], u1[i], f0[i], f1[i], x) - c
            gp = hermite_derivative(s0, s1, u0[i], u1[i], f0[i], f1[i], x)
            if gp == 0:
                break
            xn = x - gx / gp
            if not (min(s0, s1) <= xn <= max(s0, s1)):
                break
            x = xn
        return x
    return _locate_fn(lambda v: sec.value(chart, v), s0, s1, u0, u1, f0, f1)


def _check_transversal(sec, chart, s0, s1, u0, u1, f0, f1, sh, vf, uh, t_index):
    if ChartId(sec.chart) == ChartId(chart):
        try:
            d = vf(uh)
            rate = d[sec.index]
            if t_index is not None and d[t_index] > 0:
                rate = rate / d[t_index]
        except ExpRangeError:
            rate = hermite_derivative(s0, s1, u0[sec.index], u1[sec.index],
                                      f0[sec.index], f1[sec.index], sh)
    else:
        dx = 1e-7 * abs(s1 - s0)
        rate = (sec.value(chart, hermite(s0, s1, u0, u1, f0, f1, sh + dx))
                - sec.value(chart, hermite(s0, s1, u0, u1, f0, f1, sh - dx))) / (2 * dx)
    if abs(rate) < 1e-8:
        raise TransversalityError(f"tangential crossing of {sec.name} (rate {rate:.3g})", uh, chart)


# ---------------------------------------------------------------------------
# public entry points


def integrate(vf, jac, s0, t_span, cfg: IntegratorConfig | None = None, events=(),
              chart=ChartId.AFFINE) -> Trajectory:
    """Integrate ``u' = vf(u)`` over ``t_span``.

    ``jac`` may be ``None``, in which case a forward-difference Jacobian is
    used.  Terminal events stop the integration early; non-terminal ones are
    recorded in :attr:`Trajectory.events`.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = (float(v) for v in t_span)
    traj, _, _ = _run(vf, jac, s0, t0, t1, cfg, tuple(events), chart)
    return traj


def integrate_to_section(vf, jac, s0, section: Section, cfg: IntegratorConfig | None = None,
                         t_max: float = 1e4, check_window: bool = True, chart=ChartId.AFFINE):
    """Flow ``s0`` to the first crossing of ``section``.

    Returns ``(state, elapsed, trajectory)``.  The state's section coordinate
    equals the section level exactly.
    """
    cfg = cfg or IntegratorConfig()
    sec = replace(section, terminal=True)
    traj, reason, _ = _run(vf, jac, s0, 0.0, t_max, cfg, (sec,), chart)
    if reason != "event":
        raise NoCrossingError(f"no crossing of {section.name} before t={t_max}", traj.final, chart)
    ev = traj.events[-1]
    if check_window and not section.in_window(ev.state):
        raise SectionWindowError(f"crossing of {section.name} outside its window", ev.state, chart)
    return ev.state.copy(), ev.t, traj


def _slow_aug(p: Params):
    def f(v):
        out = np.empty(4)
        out[:3] = vf_slow(v[:3], p)
        out[3] = 1.0
        return out

    def j(v):
        J = np.zeros((4, 4))
        J[:3, :3] = jacobian_slow(v[:3], p)
        return J
    return f, j


def _chart_aug(chart: ChartId, p: Params):
    def f(v):
        out = np.empty(4)
        out[:3] = chart_vf(chart, v[:3], p)
        out[3] = time_rescaling(chart, v[:3], p)
        return out
    return f, None


def integrate_multichart(s0, t_span, p: Params, cfg: IntegratorConfig | None = None,
                         policy: ChartPolicy | None = None, sections=(),
                         chart: ChartId | None = None, max_switches: int = 1000) -> Trajectory:
    """Integrate the slow system across AFFINE, PHI1 and PHI3 charts.

    ``s0`` is given in ``chart`` (affine by default).  Each segment's state
    carries physical slow time as a fourth component, so chart time
    rescalings compose into one slow-time axis.  ``t_span`` is in slow time.
    """
    cfg = cfg or IntegratorConfig()
    policy = policy or ChartPolicy()
    t0, t1 = (float(v) for v in t_span)
    chart = ChartId(chart) if chart is not None else ChartId.AFFINE
    u = np.append(np.asarray(s0, dtype=float)[:3], t0)
    want = policy.choose(to_affine(chart, u[:3]), None)
    if want != chart:
        u[:3] = change_chart(chart, want, u[:3])
        chart = want
    traj = None
    s = t0
    h = None
    for _ in range(max_switches):
        if chart == ChartId.AFFINE:
            f, j = _slow_aug(p)
            s_end, t_index, t_end = s + (t1 - u[3]), 3, None
        else:
            f, j = _chart_aug(chart, p)
            s_end, t_index, t_end = math.inf, 3, t1

        current = chart

        def stop(v, current=current):
            try:
                a = to_affine(current, v[:3])
            except Exception:
                return False
            return policy.choose(a, current) != current

        traj, reason, h = _run(f, j, u, s, s_end, cfg, tuple(sections), chart,
                               t_index=t_index, t_end=t_end, stop_check=stop, traj=traj, h0=h)
        u = traj.y[-1].copy()
        s = traj.s[-1]
        if reason != "switch":
            return traj
        new = policy.choose(to_affine(chart, u[:3]), chart)
        u[:3] = change_chart(chart, new, u[:3])
        chart = new
        h = None
    raise IntegrationError("too many chart switches", u, chart)
