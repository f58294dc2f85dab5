"""Command-line runner: simulations, disturbance sweeps, certification and
plots driven by a versioned JSON configuration.

Exit codes: 0 ok/certified, 1 a check found violations, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .hybrid_core import DisturbanceGenerator, ModelError, validate_model
from .pendulum import (P_DEFAULT, PendulumParams, default_sample_spec, lambda_const,
                       make_pendulum, pendulum_controller, pendulum_rclf)
from .rclf import GridSpec, certify_rclf
from .report import dumps
from .safety_margin import (barrier_candidate_check, linear_safety_problem, near_boundary_starts,
                            simulate_perturbed, strict_decrease_boundary, uniform_margin)
from .simulator import (SimLimits, arc_to_dict, convergence_time, lyapunov_trace, read_arc_csv,
                        simulate, write_arc_csv)

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

CONVERGENCE_RADIUS = 0.05

DEFAULTS = {
    "schema_version": 1,
    "model": "pendulum",
    "params": {},
    "rclf": {"gamma_fraction": 1.0, "v_zero_tol": 1e-12, "u_sat": None, "P": [list(r) for r in P_DEFAULT]},
    "controller": "closed_form",
    "sim": {"x0": [1.5707, 0.0], "dt": 1e-3, "t_max": 30.0, "j_max": 1000, "event_tol": 1e-8,
            "zeno_guard": 1000, "input_hold": "stage"},
    "disturbance": {"kind": "constant", "w_c": [0.0, 0.0], "w_d": [0.0], "rate": 0.0, "seed": 0,
                    "stress": False},
    "sweep": {"w_c_values": [0, 0.01, 0.05, 0.1, 0.3, 0.5, 1], "w_d_values": [0.0],
              "design_bound": "match", "stress": "auto", "workers": 1,
              "convergence_radius": CONVERGENCE_RADIUS},
    "verify": {"bounds": [[-math.pi / 2, math.pi / 2], [-3.0, 3.0]], "counts": [201, 201],
               "tol": 1e-9, "n_samples": 2000, "epsilon": None, "starts": 50, "T": 20.0, "dt": 1e-2},
    "plot": {"view": "planar", "inputs": [], "name": "plot.svg"},
    "output": {"dir": "out", "format": "csv"},
}

PENDULUM_KEYS = {"a", "b", "e0", "e1", "rho_tilde", "rho_slope", "wbar1", "wbar2", "wd_max", "wc_symmetric"}
SAFETY_KEYS = {"c_o", "c_u", "boundary_tol"}


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    text = resources.files("hybrid_rclf").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path: Optional[str], seed: Optional[int] = None) -> dict:
    """Parse, validate and merge a config file with the defaults."""
    raw = {"schema_version": 1}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {loc}: {exc.message}") from exc
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    allowed = PENDULUM_KEYS if cfg["model"] == "pendulum" else SAFETY_KEYS
    extra = set(cfg["params"]) - allowed
    if extra:
        raise ConfigError(f"params not used by model {cfg['model']!r}: {sorted(extra)}")
    if seed is not None:
        cfg["disturbance"]["seed"] = int(seed)
    return cfg


# ---------------------------------------------------------------------------
# builders


def pendulum_params(cfg: dict) -> PendulumParams:
    try:
        return PendulumParams(**cfg["params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pendulum params: {exc}") from exc


def _build_rclf(cfg: dict, params: PendulumParams):
    r = cfg["rclf"]
    try:
        return pendulum_rclf(params, P=r["P"], gamma_fraction=r["gamma_fraction"],
                             v_zero_tol=r["v_zero_tol"], u_sat=r["u_sat"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rclf options: {exc}") from exc


def _build_controller(cfg: dict, params: PendulumParams, rclf):
    ctrl = pendulum_controller(params, cfg["controller"], rclf)
    sat = cfg["rclf"]["u_sat"]
    if sat is not None and cfg["controller"] == "closed_form":
        law = ctrl.flow_law

        def clipped(x, _law=law):
            u = np.array(_law(x), dtype=float)
            norm = float(np.linalg.norm(u))
            return u * (sat / norm) if norm > sat else u

        ctrl = dataclasses.replace(ctrl, flow_law=clipped)
    return ctrl


def _limits(cfg: dict) -> SimLimits:
    s = cfg["sim"]
    try:
        return SimLimits(t_max=s["t_max"], j_max=s["j_max"], dt=s["dt"], event_tol=s["event_tol"],
                         zeno_guard=s["zeno_guard"], input_hold=s["input_hold"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _generator(cfg: dict, rclf, w_c=None, w_d=None, stress=None) -> DisturbanceGenerator:
    d = cfg["disturbance"]
    try:
        return DisturbanceGenerator(
            kind=d["kind"],
            w_c=tuple(d["w_c"] if w_c is None else w_c),
            w_d=tuple(d["w_d"] if w_d is None else w_d),
            rate=d["rate"], seed=d["seed"],
            stress=bool(d["stress"] if stress is None else stress),
            objective=rclf if d["kind"] == "adversarial" else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require_pendulum(cfg: dict, what: str):
    if cfg["model"] != "pendulum":
        raise ConfigError(f"{what} needs model 'pendulum'")


# ---------------------------------------------------------------------------
# runs


def _single_run(cfg: dict, params: PendulumParams, w_c, w_d, stress: bool, fmt: str):
    """One closed-loop run; returns (arc text, summary dict)."""
    rclf = _build_rclf(cfg, params)
    model = make_pendulum(params)
    ctrl = _build_controller(cfg, params, rclf)
    gen = _generator(cfg, rclf, w_c, w_d, stress)
    try:
        arc, status = simulate(model, ctrl, gen, cfg["sim"]["x0"], _limits(cfg))
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    trace = lyapunov_trace(arc, rclf.V)
    radius = cfg["sweep"]["convergence_radius"]
    last = arc.samples[-1] if arc.samples else None
    summary = {
        "status": status.reason,
        "message": status.message,
        "final_time": {"t": status.time.t, "j": status.time.j},
        "final_state": None if last is None else last.x.tolist(),
        "jump_count": arc.jump_count,
        "V_monotone": trace.monotone,
        "flow_V_violations": len(trace.flow_violations),
        "jump_V_violations": len(trace.jump_violations),
        "convergence_time": convergence_time(arc, radius),
        "convergence_radius": radius,
        "w_c": list(gen.w_c), "w_d": list(gen.w_d), "stress": gen.stress,
        "design_bound": [params.wbar1, params.wbar2],
        "samples": len(arc.samples),
    }
    if fmt == "json":
        text = dumps(arc_to_dict(arc, rclf.V))
    else:
        text = write_arc_csv(arc, rclf.V)
    return text, summary


def _sweep_job(args):
    cfg, params, w_c, w_d, stress, fmt = args
    return _single_run(cfg, params, w_c, w_d, stress, fmt)


def run_simulate(cfg: dict, out_dir: Path, fmt: str) -> int:
    _require_pendulum(cfg, "simulate")
    params = pendulum_params(cfg)
    text, summary = _single_run(cfg, params, None, None, None, fmt)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"arc.{fmt}").write_text(text)
    (out_dir / "summary.json").write_text(dumps(summary))
    return EXIT_OK


def sweep_runs(cfg: dict):
    """(w_c, w_d, stress, params) per run in configured order."""
    sw = cfg["sweep"]
    if not sw["w_c_values"] or not sw["w_d_values"]:
        raise ConfigError("sweep needs non-empty w_c_values and w_d_values")
    base = pendulum_params(cfg)
    runs = []
    for wd in sw["w_d_values"]:
        for wc in sw["w_c_values"]:
            params = base.with_design_bound(wc) if sw["design_bound"] == "match" else base
            if sw["stress"] == "auto":
                stress = not (0.0 <= wd <= params.wd_max)
            else:
                stress = sw["stress"] == "on"
            runs.append(((float(wc), float(wc)), (float(wd),), stress, params))
    return runs


def _trend(times):
    """Soft check: convergence times non-decreasing in run order, with runs
    that never converge ranked last."""
    key = [math.inf if t is None else t for t in times]
    return all(a <= b for a, b in zip(key, key[1:]))


def run_sweep(cfg: dict, out_dir: Path, fmt: str) -> int:
    _require_pendulum(cfg, "sweep")
    runs = sweep_runs(cfg)
    jobs = [(cfg, p, wc, wd, st, fmt) for wc, wd, st, p in runs]
    workers = cfg["sweep"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    out_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for k, (text, summary) in enumerate(results):
        name = f"run_{k:03d}.{fmt}"
        (out_dir / name).write_text(text)
        table.append(dict(summary, file=name))
    times = [r["convergence_time"] for r in table]
    summary = {
        "runs": table,
        "convergence_radius": cfg["sweep"]["convergence_radius"],
        "convergence_threshold_note": "first sample time with |x| <= convergence_radius",
        "design_bound": cfg["sweep"]["design_bound"],
        "convergence_trend_nondecreasing": _trend(times),
        "all_V_monotone": all(r["V_monotone"] for r in table),
    }
    (out_dir / "sweep_summary.json").write_text(dumps(summary))
    return EXIT_OK


def run_verify_rclf(cfg: dict, out_dir: Path) -> int:
    _require_pendulum(cfg, "verify-rclf")
    params = pendulum_params(cfg)
    rclf = _build_rclf(cfg, params)
    model = make_pendulum(params)
    v = cfg["verify"]
    grid = GridSpec(tuple(map(tuple, v["bounds"])), tuple(v["counts"]), tol=v["tol"])
    report = certify_rclf(model, rclf, grid)
    model_report = validate_model(model, default_sample_spec(params))
    lam = lambda_const(params)
    out = {"rclf": report.to_dict(), "model": model_report.to_dict(),
           "lambda": {"value": lam.value, "degenerate": lam.degenerate},
           "certified": report.passed and model_report.passed}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "verify_rclf.json").write_text(dumps(out))
    return EXIT_OK if out["certified"] else EXIT_VIOLATION


def run_verify_safety(cfg: dict, out_dir: Path) -> int:
    if cfg["model"] != "linear_safety":
        raise ConfigError("verify-safety needs model 'linear_safety'")
    try:
        problem = linear_safety_problem(seed=cfg["disturbance"]["seed"], **cfg["params"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    v = cfg["verify"]
    n = v["n_samples"]
    cand = barrier_candidate_check(problem, n)
    dec = strict_decrease_boundary(problem, n)
    eps_sampled = uniform_margin(problem, n)
    eps = eps_sampled if v["epsilon"] is None else float(v["epsilon"])
    starts = near_boundary_starts(problem, v["starts"])
    cont = simulate_perturbed(problem, eps, starts, v["T"], v["dt"])
    ok = cand.passed and dec.passed and eps_sampled > 0 and cont.passed
    out = {"barrier_candidate": cand.to_dict(), "strict_decrease": dec.to_dict(),
           "uniform_margin": eps_sampled, "epsilon_used": eps,
           "containment": cont.to_dict(), "certified": ok}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "verify_safety.json").write_text(dumps(out))
    return EXIT_OK if ok else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# plots


def emit_plot(arc_texts, view: str, labels=None) -> str:
    """SVG text with one line per flow interval of every arc and markers at
    each interval's ends, so jumps show as gaps between segments."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    arcs = [read_arc_csv(t) for t in arc_texts]
    colors = plt.get_cmap("tab10").colors
    with plt.rc_context({"svg.hashsalt": "hybrid-rclf", "svg.fonttype": "path"}):
        if view == "time":
            fig, axes = plt.subplots(2, 1, figsize=(6.4, 5.6), sharex=True)
        else:
            fig, ax = plt.subplots(figsize=(6.4, 5.6))
            axes = [ax]
        for k, arc in enumerate(arcs):
            col = colors[k % len(colors)]
            lab = labels[k] if labels else f"run {k}"
            segs = {}
            for s in arc.samples:
                segs.setdefault(s.j, []).append(s)
            for idx, (j, seg) in enumerate(sorted(segs.items())):
                t = np.array([s.t for s in seg])
                xs = np.array([s.x for s in seg])
                kw = {"color": col, "linewidth": 1.0, "label": lab if idx == 0 else None}
                if view == "time":
                    for i, ax in enumerate(axes):
                        ax.plot(t, xs[:, i], **kw)
                        ax.plot(t[[0, -1]], xs[[0, -1], i], "*", color=col, markersize=5)
                else:
                    axes[0].plot(xs[:, 0], xs[:, 1], **kw)
                    axes[0].plot(xs[[0, -1], 0], xs[[0, -1], 1], "*", color=col, markersize=5)
        if view == "time":
            axes[0].set_ylabel("x1")
            axes[1].set_ylabel("x2")
            axes[1].set_xlabel("t")
        else:
            axes[0].set_xlabel("x1")
            axes[0].set_ylabel("x2")
        if arcs and any(a.samples for a in arcs):
            axes[0].legend(loc="best", fontsize=7)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def run_plot(cfg: dict, out_dir: Path, inputs) -> int:
    paths = list(inputs) if inputs else list(cfg["plot"]["inputs"])
    if not paths:
        raise ConfigError("plot needs at least one arc file")
    texts = []
    for p in paths:
        try:
            text = Path(p).read_text()
            read_arc_csv(text)
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            raise ConfigError(f"unreadable arc {p}: {exc}") from exc
        texts.append(text)
    svg = emit_plot(texts, cfg["plot"]["view"], [Path(p).stem for p in paths])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / cfg["plot"]["name"]).write_text(svg)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-rclf", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "verify-rclf", "verify-safety", "plot"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out-dir", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--format", choices=("csv", "json"), help="arc file format")
        if name == "plot":
            p.add_argument("arcs", nargs="*", help="arc CSV files (override plot.inputs)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config, args.seed)
        out_dir = Path(args.out_dir or cfg["output"]["dir"])
        fmt = args.format or cfg["output"]["format"]
        if args.command == "simulate":
            return run_simulate(cfg, out_dir, fmt)
        if args.command == "sweep":
            return run_sweep(cfg, out_dir, fmt)
        if args.command == "verify-rclf":
            return run_verify_rclf(cfg, out_dir)
        if args.command == "verify-safety":
            return run_verify_safety(cfg, out_dir)
        if fmt != "csv":
            raise ConfigError("plot reads CSV arcs only")
        return run_plot(cfg, out_dir, args.arcs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
