"""Acceptance criteria 1 to 10.

Each test records one ``criterion N: PASS|FAIL`` line, printed in the
terminal summary, and then asserts the criterion.
"""
import math
import time

import numpy as np
import pytest

from relaxcycle.model import (Params, jacobian_reduced, vf_reduced, vf_slow, jacobian_slow,
                              hamiltonian, grad_hamiltonian, poisson_matrix, locate_hopf)
from relaxcycle.integrate import IntegratorConfig, Section, integrate, integrate_to_section
from relaxcycle.singular import wcu_q6, separation_function, min_z_line
from relaxcycle.atlas import verify_atlas
from relaxcycle.returnmap import image_diameter
from relaxcycle.experiments import bifurcation, convergence, slope

from conftest import ACCEPTANCE, TIMINGS, hamiltonian_run, limit_cycle, specs

A, XI = 0.8, 0.5


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def test_criterion_01_limit_cycle_existence_and_stability():
    parts, ok = [], True
    for eps in (1e-2, 1e-3):
        lc = limit_cycle(A, XI, eps)
        dt = TIMINGS.get((A, XI, eps), 0.0)
        good = lc.converged and lc.contraction < 1 and dt < 60
        ok &= good
        parts.append(f"eps={eps:g} rho={lc.contraction:.3g} T={lc.period:.3f} {dt:.1f}s")
    record(1, ok, "; ".join(parts))


def test_criterion_02_amplitude_scaling():
    eps = np.array([1e-2, 1e-3, 1e-4])
    L = np.log(1 / eps)
    mz = np.array([limit_cycle(A, XI, e).min_z for e in eps])
    slope_, a = np.polyfit(L, mz, 1)
    b = -slope_
    pred = a + slope_ * L
    r2 = 1 - np.sum((mz - pred) ** 2) / np.sum((mz - mz.mean()) ** 2)
    record(2, b > 0 and r2 > 0.9, f"min_z={np.round(mz, 4).tolist()} b={b:.4f} R2={r2:.4f}")


def test_criterion_03_hopf_location():
    worst = max(abs(np.trace(jacobian_reduced((0.0, 0.0), Params(a, XI))) - (a - XI))
                for a in np.linspace(0.1, 2.0, 39))
    h = locate_hopf(XI, 0.2, 1.5)
    res = bifurcation(XI, [1e-3], [0.4, 0.45, 0.5, 0.53, 0.56, 0.6], workers=1)
    onset = res["onset"][1e-3]
    status = {r.alpha: r.status for r in res["records"]}
    ok = worst < 1e-12 and abs(h - XI) < 1e-10 and onset is not None and abs(onset - XI) <= 0.05
    record(3, ok, f"trace err={worst:.1e} hopf={h:.12f} onset={onset} status={status}")


def test_criterion_04_hamiltonian_regime():
    p = Params(0.5, 0.5)
    tr = hamiltonian_run()
    h0 = hamiltonian((1.0, 1.0), p)
    drift = abs(hamiltonian(tr.final, p) - h0) / abs(h0)
    worst = 0.0
    for y in np.linspace(-2, 5, 50):
        for z in np.linspace(-5, 2, 50):
            f = vf_reduced((y, z), p)
            g = poisson_matrix((y, z), p) @ grad_hamiltonian((y, z), p)
            worst = max(worst, np.linalg.norm(g - f) / max(np.linalg.norm(f), 1e-300))
    record(4, drift < 1e-8 and worst < 1e-10, f"H drift={drift:.2e} JgradH err={worst:.1e}")


def test_criterion_05_manifold_classification():
    c = wcu_q6(Params(0.8, XI), z_stop=30.0)
    q1 = c.status == "z_stop" and c.z[-1] > 25 and c.y[-1] / c.z[-1] < 0.05
    o = wcu_q6(Params(0.3, XI))
    r = math.hypot(o.y[-1], o.z[-1])
    sep0 = separation_function(Params(XI, XI))
    lo, hi = separation_function(Params(XI - 0.05, XI)), separation_function(Params(XI + 0.05, XI))
    ok = q1 and o.status == "origin" and r < 1e-4 and abs(sep0) < 1e-6 and lo * hi < 0
    record(5, ok, f"alpha=0.8 end y/z={c.y[-1] / c.z[-1]:.3g}; alpha=0.3 |end|={r:.1e}; "
                  f"sep(xi)={sep0:.1e}, sep(xi-0.05)={lo:.3f}, sep(xi+0.05)={hi:.3f}")


def test_criterion_06_atlas_verification():
    t0 = time.perf_counter()
    rep = verify_atlas(Params(A, XI))
    dt = time.perf_counter() - t0
    failed = [c["name"] for c in rep["checks"] if not c["passed"]]
    worst = {c["name"].split(":")[0]: 0.0 for c in rep["checks"]}
    for c in rep["checks"]:
        k = c["name"].split(":")[0]
        worst[k] = max(worst[k], c["worst"])
    record(6, rep["passed"] and dt < 10, f"{len(rep['checks'])} checks, failed={failed}, "
           f"{dt:.1f}s, worst={{{', '.join(f'{k}: {v:.1e}' for k, v in worst.items())}}}")


def test_criterion_07_hausdorff_convergence():
    res = convergence(A, XI, [1e-2, 1e-3, 1e-4], workers=1)
    d = [r["hausdorff"] for r in sorted(res["rows"], key=lambda r: -r["eps"])]
    record(7, res["strictly_decreasing"], f"d={np.round(d, 4).tolist()}")


def test_criterion_08_return_map_near_constancy():
    sp = specs(A, XI)
    eps = [1e-2, 1e-3, 1e-4]
    diam = [image_diameter(Params(A, XI, e), sp) for e in eps]
    decreasing = diam[0] > diam[1] > diam[2]
    ratio = diam[0] / diam[2]
    pred = math.log(1e4) / math.log(1e2)
    within = pred / 2 <= ratio <= 2 * pred
    record(8, decreasing and within, f"diam={[f'{v:.3g}' for v in diam]} ratio={ratio:.3g} "
                                     f"predicted={pred:.3g}")


def test_criterion_09_amplitude_transition():
    lo_a = [0.6, 0.7, 0.8, 0.9]
    hi_a = [1.2, 1.4, 1.6, 1.8, 2.0]
    res = bifurcation(XI, [1e-3], lo_a + hi_a, workers=1)
    recs = {r.alpha: r for r in res["records"]}
    alphas = sorted(recs)
    mz = [recs[a].min_z if recs[a].status == "cycle" else math.nan for a in alphas]
    s_lo = slope(alphas, mz, 0.6, 0.9)
    s_hi = slope(alphas, mz, 1.2, 2.0)
    lc = limit_cycle(1.5, XI, 1e-3)
    _, y, z = lc.min_point
    line = float(min_z_line(y, Params(1.5, XI)))
    rel = abs(z - line) / abs(z)
    rel_flipped = abs(z + line) / abs(z)
    ok = abs(s_hi) > abs(s_lo) and rel < 0.2
    record(9, ok, f"slope[0.6,0.9]={s_lo:.3f} slope[1.2,2.0]={s_hi:.3f}; alpha=1.5 min-z point "
                  f"(y={y:.3f}, z={z:.3f}) line z={line:.3f} rel={rel:.3f} "
                  f"(opposite sign: {rel_flipped:.3f})")


def test_criterion_10_integrator_contracts():
    t0 = time.perf_counter()
    lam = -1e6
    tr = integrate(lambda u: lam * u, lambda u: np.array([[lam]]), [1.0], (0.0, 1.0),
                   IntegratorConfig(1e-6, 1e-6))
    stiff_err = abs(tr.final[0] - math.exp(lam))
    rng = np.random.default_rng(0)
    p = Params(A, XI, 1e-2)
    worst = 0.0
    for _ in range(100):
        u = rng.uniform([-3, -3, -3], [3, 3, 3])
        J = jacobian_slow(u, p)
        Jn = np.empty((3, 3))
        for k in range(3):
            h = 1e-6 * max(1.0, abs(u[k]))
            e = np.zeros(3)
            e[k] = h
            Jn[:, k] = (vf_slow(u + e, p) - vf_slow(u - e, p)) / (2 * h)
        worst = max(worst, np.linalg.norm(J - Jn) / np.linalg.norm(J))
    circle = lambda u: np.array([-u[1], u[0]])
    cfg = IntegratorConfig(1e-12, 1e-12)
    sec = Section(0, 0.0, -1, name="y0")
    s1, t1, _ = integrate_to_section(circle, None, [1.0, 0.0], sec, cfg)
    _, t2, _ = integrate_to_section(circle, None, s1, sec, cfg)
    idem = abs(t2 - 2 * math.pi) < 1e-7 and abs(t1 - math.pi / 2) < 1e-8
    dt = time.perf_counter() - t0
    ok = stiff_err <= 1e-6 and tr.n_steps < 500 and worst < 1e-6 and idem and dt < 5
    record(10, ok, f"stiff err={stiff_err:.1e} steps={tr.n_steps}; jac rel err={worst:.1e}; "
                   f"event t1={t1:.10f} t2={t2:.10f}; {dt:.2f}s")
