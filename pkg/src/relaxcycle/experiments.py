"""Experiment drivers behind the command-line interface.

Each driver is deterministic given its arguments and returns plain data;
file output and plotting live in :mod:`relaxcycle.cli`.
"""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
from scipy.integrate import solve_ivp

from .model import Params, m, vf_reduced, locate_hopf
from .compactify import ChartId
from .integrate import IntegratorConfig, IntegrationError, integrate_multichart
from .singular import DEFAULT_DELTA, RegimeError, build_gamma0, hausdorff_to_cycle
from .returnmap import find_limit_cycle, section_specs

THREADS_ENV = "RELAXCYCLE_THREADS"
ORBIT_COLUMNS = ["t", "chart", "c1", "c2", "c3", "x", "y", "z"]


def worker_count() -> int:
    """Worker processes allowed by ``RELAXCYCLE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1").strip() or "1"
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _map(fn, items, workers=None):
    workers = worker_count() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class Orbit:
    """Time samples in chart coordinates with their affine images."""

    t: np.ndarray
    chart: list
    coords: np.ndarray
    affine: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ORBIT_COLUMNS)
        for t, c, u, a in zip(self.t, self.chart, self.coords, self.affine):
            w.writerow([repr(float(t)), ChartId(c).value] + [repr(float(v)) for v in u]
                       + [repr(float(v)) for v in a])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Orbit":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ORBIT_COLUMNS:
            raise ValueError(f"unexpected header {rows[0]}")
        body = rows[1:]
        num = np.array([[float(r[0])] + [float(v) for v in r[2:]] for r in body]).reshape(-1, 7)
        return cls(num[:, 0], [ChartId(r[1]) for r in body], num[:, 1:4], num[:, 4:7])


def simulate(p: Params, x0=(0.1, 0.1, 0.1), t_end: float = 100.0,
             cfg: IntegratorConfig | None = None) -> Orbit:
    """Integrate the slow system (or the reduced flow when ``eps == 0``).

    For ``eps == 0`` only ``(y, z)`` of ``x0`` are used and ``x = m(y, z)``.
    """
    x0 = np.asarray(x0, dtype=float)
    if p.eps == 0:
        tol = (cfg or IntegratorConfig()).rel_tol
        sol = solve_ivp(lambda t, u: vf_reduced(u, p), (0.0, t_end), x0[1:3], method="LSODA",
                        rtol=max(tol, 1e-13), atol=max(tol, 1e-13), dense_output=True)
        if sol.status < 0:
            raise IntegrationError(sol.message, sol.y[:, -1])
        y, z = sol.y
        aff = np.column_stack([m(y, z, p), y, z])
        return Orbit(sol.t, [ChartId.AFFINE] * len(sol.t), aff.copy(), aff)
    tr = integrate_multichart(x0, (0.0, t_end), p, cfg)
    return Orbit(tr.t.copy(), list(tr.chart), tr.y[:, :3].copy(), tr.affine())


# ---------------------------------------------------------------------------
# bifurcation sweep


@dataclass
class SweepRecord:
    """Outcome at one ``(alpha, xi, eps)`` grid point.

    ``status`` is ``"cycle"`` (return-map fixed point), ``"oscillation"``
    (persistent oscillation found by direct simulation), ``"equilibrium"``
    (decay to the origin) or ``"failed"``.
    """

    alpha: float
    xi: float
    eps: float
    status: str
    method: str
    min_z: float
    period: float
    contraction: float
    converged: bool
    wall_time: float
    error: str = ""

    @property
    def has_cycle(self) -> bool:
        return self.status in ("cycle", "oscillation")


SWEEP_COLUMNS = ["alpha", "xi", "eps", "status", "method", "min_z", "period", "contraction",
                 "converged", "error"]


def classify_by_simulation(p: Params, t_end: float = 400.0, amp_tol: float = 1e-3,
                           decay: float = 0.9, cfg: IntegratorConfig | None = None,
                           x0=(-0.05, 0.1, -0.05)):
    """Long run from near the origin; returns ``(status, min_z_late, amplitude)``.

    The run counts as decaying when the amplitude over the last quarter is
    below ``amp_tol`` or below ``decay`` times the amplitude over the
    second quarter.
    """
    orb = simulate(p, x0, t_end, cfg)
    mid = orb.affine[(orb.t >= 0.25 * t_end) & (orb.t < 0.5 * t_end)]
    late = orb.affine[orb.t >= 0.75 * t_end]
    amp = float(np.abs(late).max())
    amp_mid = float(np.abs(mid).max())
    decaying = amp < amp_tol or amp < decay * amp_mid
    return ("equilibrium" if decaying else "oscillation"), float(late[:, 2].min()), amp


def sweep_alpha(xi: float, eps: float, alphas, delta: float = DEFAULT_DELTA,
                cfg: IntegratorConfig | None = None, t_sim: float = 400.0) -> list:
    """Limit cycles along an ``alpha`` grid with warm-started fixed points.

    Points with ``alpha <= xi``, or where the return map fails, are
    classified by direct simulation.  Failures become records.
    """
    out = []
    prev = None
    for a in sorted(float(v) for v in alphas):
        p = Params(a, xi, eps)
        t0 = time.perf_counter()
        rec = None
        err = ""
        if a > xi:
            try:
                specs = section_specs(p, delta)
                start = prev if prev is not None and specs[0].contains(prev) else None
                lc = find_limit_cycle(p, cfg, specs=specs, start=start)
                prev = lc.fixed_point
                rec = SweepRecord(a, xi, eps, "cycle", "return-map", lc.min_z, lc.period,
                                  lc.contraction, lc.converged, 0.0)
            except (IntegrationError, RegimeError, ValueError) as exc:
                err = f"{type(exc).__name__}: {exc}"
        if rec is None:
            try:
                status, zmin, _ = classify_by_simulation(p, t_sim, cfg=cfg)
                rec = SweepRecord(a, xi, eps, status, "simulation",
                                  zmin if status == "oscillation" else 0.0, math.nan, math.nan,
                                  False, 0.0, err)
            except (IntegrationError, ValueError) as exc:
                err = (err + "; " if err else "") + f"{type(exc).__name__}: {exc}"
                rec = SweepRecord(a, xi, eps, "failed", "none", math.nan, math.nan, math.nan,
                                  False, 0.0, err)
        rec.wall_time = time.perf_counter() - t0
        out.append(rec)
    return out


def _sweep_job(args):
    return sweep_alpha(*args)


def bifurcation(xi: float, eps_list, alphas, delta: float = DEFAULT_DELTA,
                cfg: IntegratorConfig | None = None, workers=None) -> dict:
    """Sweep ``alpha`` for every ``eps``; ``eps`` values run in parallel.

    Returns ``{"records", "hopf_alpha", "onset"}`` where ``onset[eps]`` is
    the smallest grid ``alpha`` with a cycle or persistent oscillation.
    """
    alphas = sorted(float(a) for a in alphas)
    if not alphas or not list(eps_list):
        raise ValueError("alpha grid and eps list must be nonempty")
    jobs = [(xi, float(e), alphas, delta, cfg) for e in eps_list]
    per_eps = _map(_sweep_job, jobs, workers)
    records = [r for rs in per_eps for r in rs]
    lo, hi = min(alphas[0], 0.5 * xi), max(alphas[-1], 2.0 * xi)
    hopf = locate_hopf(xi, lo, hi)
    onset = {}
    for e, rs in zip(eps_list, per_eps):
        hits = [r.alpha for r in rs if r.has_cycle]
        onset[float(e)] = min(hits) if hits else None
    return {"records": records, "hopf_alpha": hopf, "onset": onset}


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in records:
        d = asdict(r)
        w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in SWEEP_COLUMNS])
    return buf.getvalue()


def slope(alphas, values, lo: float, hi: float) -> float:
    """Least-squares slope of ``values`` against ``alphas`` on ``[lo, hi]``."""
    a = np.asarray(alphas, float)
    v = np.asarray(values, float)
    k = (a >= lo) & (a <= hi) & np.isfinite(v)
    if k.sum() < 2:
        raise ValueError(f"need two finite points in [{lo}, {hi}]")
    return float(np.polyfit(a[k], v[k], 1)[0])


# ---------------------------------------------------------------------------
# Hausdorff convergence


def _convergence_job(args):
    p, delta, cfg = args
    t0 = time.perf_counter()
    gamma0 = build_gamma0(Params(p.alpha, p.xi), delta=delta)
    lc = find_limit_cycle(p, cfg, delta=delta)
    d = hausdorff_to_cycle(lc, gamma0)
    return dict(eps=p.eps, hausdorff=d, min_z=lc.min_z, period=lc.period,
                contraction=lc.contraction, wall_time=time.perf_counter() - t0)


def convergence(alpha: float, xi: float, eps_list, delta: float = DEFAULT_DELTA,
                cfg: IntegratorConfig | None = None, workers=None) -> dict:
    """Hausdorff distance between each limit cycle and the singular cycle."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps list must be nonempty")
    rows = _map(_convergence_job, [(Params(alpha, xi, e), delta, cfg) for e in eps_list],
                workers)
    order = np.argsort([-e for e in eps_list])
    d = [rows[i]["hausdorff"] for i in order]
    decreasing = bool(all(b < a for a, b in zip(d, d[1:])))
    return {"alpha": alpha, "xi": xi, "rows": rows, "strictly_decreasing": decreasing}
