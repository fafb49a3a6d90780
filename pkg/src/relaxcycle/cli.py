"""Command-line interface: ``relaxcycle <subcommand> [options]``.

Exit codes: 0 on success, 1 on a numeric failure (integration, missing
crossing, failed verification), 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .model import Params
from .integrate import IntegratorConfig, IntegrationError
from .singular import DEFAULT_DELTA, RegimeError, ManifoldEscapeError, build_gamma0, L_set
from . import experiments as ex

log = logging.getLogger("relaxcycle")

COMMANDS = ("simulate", "limit-cycle", "bifurcation", "verify-atlas", "convergence")


class ConfigError(ValueError):
    """Invalid command-line or configuration-file input."""


def _floats(text: str) -> list:
    """Parse ``"a,b,c"`` or ``"start:stop:n"`` into a list of floats."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, n = text.split(":")
            vals = np.linspace(float(a), float(b), int(n)).tolist()
        else:
            vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty number list")
    return vals


FORMATS = ("csv", "json", "svg")


def _formats(text) -> frozenset:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    out = frozenset(t.strip() for t in items if t.strip())
    bad = out - set(FORMATS)
    if not out or bad:
        raise argparse.ArgumentTypeError(f"formats must be a nonempty subset of {FORMATS}")
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults (keys as option names)")
    common.add_argument("--alpha", type=float, default=0.8)
    common.add_argument("--xi", type=float, default=0.5)
    common.add_argument("--eps", type=float, default=1e-2)
    common.add_argument("--delta", type=float, default=DEFAULT_DELTA,
                        help="sections at y = 1/delta and z = 1/delta")
    common.add_argument("--tol", type=float, default=1e-10, help="integrator abs/rel tolerance")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", type=_formats, default=_formats("csv,json,svg"),
                        help="comma-separated subset of csv,json,svg")
    common.add_argument("--no-plot", action="store_true", help="skip the SVG figure")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="relaxcycle",
                                 description="Relaxation cycles of a spring-block model "
                                             "with rate-and-state friction.")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.commands = sub.choices

    s = sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    s.add_argument("--t-end", type=float, default=100.0)
    s.add_argument("--x0", type=float, nargs=3, default=[0.1, 0.1, 0.1], metavar=("X", "Y", "Z"))

    sub.add_parser("limit-cycle", parents=[common], help="fixed point of the return map")

    b = sub.add_parser("bifurcation", parents=[common], help="min z along an alpha grid")
    b.add_argument("--alpha-grid", type=_floats, default=_floats("0.4:0.9:11"),
                   help="comma list or start:stop:n")
    b.add_argument("--eps-list", type=_floats, default=[1e-2, 1e-3])

    v = sub.add_parser("verify-atlas", parents=[common], help="run the blowup atlas checks")
    v.add_argument("--points", type=int, default=200, help="random samples per check")
    v.add_argument("--diagram-points", type=int, default=1000)

    c = sub.add_parser("convergence", parents=[common], help="Hausdorff distance to the singular cycle")
    c.add_argument("--eps-list", type=_floats, default=[1e-2, 1e-3, 1e-4])
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` act as defaults that flags override."""
    ap = _parser()
    args = ap.parse_args(argv)
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(conf, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = ap.commands[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for k, val in conf.items():
            key = k.replace("-", "_")
            if key not in known or key in ("config", "help"):
                raise ConfigError(f"unknown config key {k!r} for {args.command}")
            try:
                if key in ("alpha_grid", "eps_list") and not isinstance(val, list):
                    val = _floats(val)
                if key == "format":
                    val = _formats(val)
            except argparse.ArgumentTypeError as exc:
                raise ConfigError(f"config key {k!r}: {exc}") from exc
            defaults[key] = val
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    _validate(args)
    return args


def _validate(a):
    if not (a.alpha > 0 and a.xi > 0):
        raise ConfigError("alpha and xi must be positive")
    if a.eps < 0:
        raise ConfigError("eps must be nonnegative")
    if not a.delta > 0:
        raise ConfigError("delta must be positive")
    if not a.tol > 0:
        raise ConfigError("tol must be positive")
    for name in ("eps_list", "alpha_grid"):
        vals = getattr(a, name, None)
        if vals is not None:
            if not vals:
                raise ConfigError(f"{name} must be nonempty")
            if name == "eps_list" and min(vals) <= 0:
                raise ConfigError("eps values must be positive")
            if name == "alpha_grid" and min(vals) <= 0:
                raise ConfigError("alpha values must be positive")
    if a.command in ("limit-cycle",) and a.eps <= 0:
        raise ConfigError("limit-cycle needs eps > 0")
    if a.command in ("limit-cycle", "convergence") and not a.alpha > a.xi:
        raise ConfigError(f"{a.command} needs alpha > xi")


def _outdir(a) -> Path:
    out = Path(a.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _svg(fig, path: Path):
    import matplotlib
    matplotlib.rcParams["svg.hashsalt"] = "relaxcycle"
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    log.info("wrote %s", path)


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _cfg(a) -> IntegratorConfig:
    return IntegratorConfig().tightened(a.tol)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(a) -> int:
    out = _outdir(a)
    p = Params(a.alpha, a.xi, a.eps)
    orb = ex.simulate(p, a.x0, a.t_end, _cfg(a))
    if "csv" in a.format:
        _write(out / "simulate.csv", orb.to_csv())
    if "json" in a.format:
        _write(out / "simulate.json", _json(dict(
            alpha=p.alpha, xi=p.xi, eps=p.eps, x0=list(a.x0), t_end=a.t_end,
            t=orb.t.tolist(), chart=[c.value for c in orb.chart], coords=orb.coords.tolist(),
            affine=orb.affine.tolist())))
    if "svg" in a.format and not a.no_plot:
        plt = _plt()
        fig, axs = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
        for k, name in enumerate("xyz"):
            axs[k].plot(orb.t, orb.affine[:, k], lw=0.8)
            axs[k].set_ylabel(name)
        axs[-1].set_xlabel("t")
        axs[0].set_title(f"alpha={p.alpha}, xi={p.xi}, eps={p.eps:g}")
        _svg(fig, out / "simulate.svg")
    return 0


def cmd_limit_cycle(a) -> int:
    from .returnmap import find_limit_cycle
    out = _outdir(a)
    p = Params(a.alpha, a.xi, a.eps)
    lc = find_limit_cycle(p, _cfg(a), delta=a.delta)
    log.info("fixed point %s, period %.6g, min z %.6g, contraction %.3g",
             lc.fixed_point, lc.period, lc.min_z, lc.contraction)
    if "csv" in a.format:
        _write(out / "limit_cycle.csv", lc.to_csv())
    if "json" in a.format:
        _write(out / "limit_cycle.json", _json(lc.to_dict()))
    if "svg" in a.format and not a.no_plot:
        plt = _plt()
        pts = lc.orbit_affine()
        fig = plt.figure(figsize=(7, 6))
        ax = fig.add_subplot(projection="3d")
        ax.plot(pts[:, 0], pts[:, 1], pts[:, 2], color="red", lw=1.0, label="limit cycle")
        try:
            g0 = build_gamma0(Params(p.alpha, p.xi), delta=a.delta)
            w = g0.wcu.affine()
            keep = np.abs(w).max(axis=1) < 2 * np.abs(pts).max()
            ax.plot(w[keep, 0], w[keep, 1], w[keep, 2], color="blue", lw=1.0, label="W^cu(Q6)")
        except (RegimeError, ManifoldEscapeError) as exc:
            log.warning("no W^cu(Q6) overlay: %s", exc)
        yy, zz = np.meshgrid(np.linspace(pts[:, 1].min(), pts[:, 1].max(), 12),
                             np.linspace(pts[:, 2].min(), pts[:, 2].max(), 12))
        ax.plot_wireframe(-p.xi * yy - zz, yy, zz, color="gray", lw=0.3, label="C")
        L = L_set(p, (max(1.0, 0.3 * pts[:, 2].max()), pts[:, 2].max()), ratio=0.0)
        ax.plot(L[:, 0], L[:, 1], L[:, 2], color="green", lw=1.5, label="L")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_zlabel("z")
        ax.legend(loc="upper left")
        _svg(fig, out / "limit_cycle.svg")
    return 0 if lc.stable else 1


def cmd_bifurcation(a) -> int:
    out = _outdir(a)
    res = ex.bifurcation(a.xi, a.eps_list, a.alpha_grid, a.delta, _cfg(a))
    recs = res["records"]
    if "csv" in a.format:
        _write(out / "bifurcation.csv", ex.records_csv(recs))
    if "json" in a.format:
        rows = [{k: getattr(r, k) for k in ex.SWEEP_COLUMNS} for r in recs]
        _write(out / "bifurcation.json", _json(dict(
            xi=a.xi, hopf_alpha=res["hopf_alpha"],
            onset={repr(k): v for k, v in res["onset"].items()}, records=rows)))
    for r in recs:
        log.info("alpha=%.4g eps=%.3g %s min_z=%.5g (%.1fs)", r.alpha, r.eps, r.status,
                 r.min_z, r.wall_time)
    if "svg" in a.format and not a.no_plot:
        plt = _plt()
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for e in a.eps_list:
            rs = [r for r in recs if r.eps == e]
            ax.plot([r.alpha for r in rs], [r.min_z for r in rs], "o-", ms=3, label=f"eps={e:g}")
        ax.axvline(res["hopf_alpha"], color="k", ls="--", lw=0.8, label="Hopf")
        ax.set_xlabel("alpha")
        ax.set_ylabel("min z")
        ax.legend()
        _svg(fig, out / "bifurcation.svg")
    return 1 if any(r.status == "failed" for r in recs) else 0


def cmd_verify_atlas(a) -> int:
    from .atlas import verify_atlas
    out = _outdir(a)
    rep = verify_atlas(Params(a.alpha, a.xi), seed=a.seed, n_points=a.points,
                       n_diagram=a.diagram_points)
    _write(out / "verify_atlas.json", _json(rep))
    for c in rep["checks"]:
        log.info("%-4s %-40s worst=%.3g tol=%.1g", "ok" if c["passed"] else "FAIL",
                 c["name"], c["worst"], c["tol"])
    return 0 if rep["passed"] else 1


def cmd_convergence(a) -> int:
    out = _outdir(a)
    res = ex.convergence(a.alpha, a.xi, a.eps_list, a.delta, _cfg(a))
    cols = ["eps", "hausdorff", "min_z", "period", "contraction"]
    if "csv" in a.format:
        lines = [",".join(cols)] + [",".join(repr(float(r[k])) for k in cols) for r in res["rows"]]
        _write(out / "convergence.csv", "\n".join(lines) + "\n")
    if "json" in a.format:
        _write(out / "convergence.json", _json(dict(
            alpha=a.alpha, xi=a.xi, strictly_decreasing=res["strictly_decreasing"],
            rows=[{k: r[k] for k in cols} for r in res["rows"]])))
    for r in res["rows"]:
        log.info("eps=%.3g hausdorff=%.6g (%.1fs)", r["eps"], r["hausdorff"], r["wall_time"])
    log.info("strictly decreasing: %s", res["strictly_decreasing"])
    if "svg" in a.format and not a.no_plot:
        plt = _plt()
        fig, ax = plt.subplots(figsize=(6, 4))
        e = [r["eps"] for r in res["rows"]]
        ax.semilogx(e, [r["hausdorff"] for r in res["rows"]], "o-")
        ax.set_xlabel("eps")
        ax.set_ylabel("Hausdorff distance on the sphere")
        _svg(fig, out / "convergence.svg")
    return 0


DISPATCH = {"simulate": cmd_simulate, "limit-cycle": cmd_limit_cycle,
            "bifurcation": cmd_bifurcation, "verify-atlas": cmd_verify_atlas,
            "convergence": cmd_convergence}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        ex.worker_count()
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ValueError) as exc:
        print(f"relaxcycle: configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"relaxcycle: configuration error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, RegimeError, ManifoldEscapeError, ArithmeticError) as exc:
        print(f"relaxcycle: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
