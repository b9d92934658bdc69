"""Command-line interface.

Results go to standard output as comma-separated ``name,value`` lines; files
are written only to the paths or directories given on the command line (or
to ``$WAVEPINN_OUTPUT_DIR`` where a subcommand needs an output directory and
none was given).  Exit status: 0 success, 1 configuration error, 2 runtime or
numeric failure.
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

from . import wave_theory as wt
from .autodiff import NumericError
from .constraints import ConstraintPretrainingError, FrozenStateError
from .fileio import (Grid, RunConfig, export_field_table, extract_buoys, extract_snapshots,
                     load_field, load_run_config, read_observations, save_field, synth,
                     write_observations)
from .metrics import GridField, error_summary
from .physics import ConfigError, Domain
from .trainer import (GroundTruth, TrainingAborted, load_checkpoint, predicted_fields,
                      read_training_log, run_assimilation, run_prediction, save_checkpoint)

OUTPUT_ENV = "WAVEPINN_OUTPUT_DIR"
log = logging.getLogger("wavepinn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _emit(rows, out=None):
    out = out or sys.stdout
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.6g}"
        out.write(f"{k},{v}\n")


def _out_dir(arg) -> Path:
    d = Path(arg or os.environ.get(OUTPUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


# --------------------------------------------------------------------------- wave theory

def cmd_dispersion(a):
    if (a.omega is None) == (a.period is None):
        raise ConfigError("give exactly one of --omega or --period")
    omega = a.omega if a.omega is not None else 2 * math.pi / a.period
    k = wt.solve_dispersion(omega, a.depth, a.gravity)
    _emit([("omega", omega), ("k", k), ("L", 2 * math.pi / k), ("c", omega / k),
           ("cg", wt.group_velocity(omega, a.depth, a.gravity))])


def cmd_spectrum(a):
    kw = {"hs": a.hs} if a.hs is not None else {"steepness": a.steepness}
    if a.hs is None and a.steepness is None:
        kw = {"hs": 1.0}
    spec = wt.JonswapSpec(a.tp, a.gamma, depth=a.depth, gravity=a.gravity, **kw)
    lo, hi = wt.spectral_cutoffs(spec, a.fraction)
    k_hi = wt.solve_dispersion(hi, spec.depth, spec.gravity)
    _emit([("omega_p", spec.omega_p), ("k_p", spec.k_p), ("L_p", spec.wavelength_p), ("hs", spec.hs),
           ("omega_low", lo), ("omega_high", hi), ("L_high", 2 * math.pi / k_hi)])
    if a.out:
        d = _out_dir(a.out)
        w = np.linspace(0.2 * spec.omega_p, 3.0 * spec.omega_p, 400)
        s = wt.jonswap_density(spec, w)
        np.savetxt(d / "spectrum.csv", np.column_stack([w, s]), delimiter=",", header="omega,S",
                   comments="", fmt="%.10g")
        from .plotting import plot_spectrum
        plot_spectrum(w, s, d / "spectrum.png", (lo, hi))


def cmd_region(a):
    spec = wt.JonswapSpec(a.tp, a.gamma, hs=1.0, depth=a.depth, gravity=a.gravity)
    t_max = max(a.t) if a.t else 1.0
    region = wt.PredictionRegion.from_spectrum(spec, a.fraction, a.x_offset, a.x_extent, max(t_max, 1e-9))
    rows = [("cg_high", region.cg_high), ("cg_low", region.cg_low)]
    for t in a.t or ():
        x0, x1 = wt.prediction_region_bounds(region, t)
        rows += [(f"x_min(t={t:g})", x0), (f"x_max(t={t:g})", x1)]
    _emit(rows)


# --------------------------------------------------------------------------- data

def cmd_synth(a):
    if a.config:
        cfg = load_run_config(a.config)
        spec = cfg.sea.build()
        grid = Grid(cfg.domain.x[0], cfg.domain.x[1], cfg.evaluation.dx,
                    cfg.domain.t[0], cfg.domain.t[1], cfg.evaluation.dt)
    else:
        rows = a.reference_rows if a.reference_rows is not None else [0, 1, 2]
        spec = wt.reference_sea(rows, a.depth)
        if a.scale != 1.0:
            spec = spec.scaled(a.scale)
        grid = Grid(a.x[0], a.x[1], a.dx, a.t[0], a.t[1], a.dt)
    fields = synth(spec, grid, a.z or (), a.surface_potential)
    d = _out_dir(a.out)
    rows = []
    for name, f in fields.items():
        path = d / f"{name}.field"
        save_field(path, f, provenance="linear wave theory")
        rows.append((name, str(path)))
        if a.table:
            export_field_table(d / f"{name}.csv", f)
    if not fields["elevation"].meta.get("nyquist_ok", True):
        rows.append(("warning", "grid coarser than half the shortest wavelength or period"))
    _emit(rows)


def cmd_buoys(a):
    obs = extract_buoys(load_field(a.field), a.positions)
    write_observations(a.out, obs)
    _emit([("n_points", obs.n), ("positions", " ".join(f"{p:g}" for p in obs.positions)), ("path", a.out)])


def cmd_snapshots(a):
    obs = extract_snapshots(load_field(a.field), a.times, a.x_range)
    write_observations(a.out, obs)
    _emit([("n_points", obs.n), ("times", " ".join(f"{p:g}" for p in obs.times)), ("path", a.out)])


# --------------------------------------------------------------------------- training

def _observations(cfg: RunConfig, path_override, spec):
    oc = cfg.observations
    path = path_override or oc.file
    if path:
        return read_observations(path, oc.kind)
    x0, x1 = cfg.domain.x
    t0, t1 = cfg.domain.t
    grid = Grid(min(x0, *(oc.positions or [x0])), max(x1, *(oc.positions or [x1])), oc.dx, t0, t1, oc.dt)
    field = synth(spec, grid)["elevation"]
    if oc.kind == "buoys":
        return extract_buoys(field, oc.positions)
    if oc.kind == "snapshots":
        return extract_snapshots(field, oc.times, oc.x_range)
    raise ConfigError("scattered observations must come from a file")


def _train(a, scenario):
    cfg = load_run_config(a.config)
    if a.seed is not None:
        cfg.seed = a.seed
    if cfg.scenario != scenario:
        raise ConfigError(f"configuration scenario is '{cfg.scenario}', expected '{scenario}'")
    out = _out_dir(a.out or cfg.output_dir)
    spec = cfg.sea.build()
    obs = _observations(cfg, a.observations, spec)
    region = None
    if scenario == "prediction":
        region = cfg.region.build(cfg.domain.t[1], cfg.domain.t[0], spec.depth)
    domain = Domain.for_observations(cfg.domain.x, cfg.domain.t, spec.depth, obs, spec.gravity, region,
                                     cfg.domain.headroom)
    ev = cfg.evaluation
    gx = np.arange(domain.x[0], domain.x[1] + 0.5 * ev.dx, ev.dx)
    gt = np.arange(domain.t[0], domain.t[1] + 0.5 * ev.dt, ev.dt)
    mask = None
    if region is not None:
        X, T = np.meshgrid(gx, gt)
        mask = region.contains(X, T)
    truth = GroundTruth(spec, gx, gt, mask) if a.truth else None
    tc = cfg.train_config(checkpoint_dir=str(out / "checkpoints"), log_path=str(out / "train_log.csv"))
    runner = run_assimilation if scenario == "assimilation" else run_prediction
    model, report = runner(tc, obs, domain, truth)
    save_checkpoint(out / "model", model, {"scenario": scenario, "seed": cfg.seed})
    summary = {"epochs": report.epochs, "wall_time": report.wall_time, "pretrain_time": report.pretrain_time,
               "termination": report.termination, "loss_drop": report.loss_drop,
               "final_losses": {k: v[-1] for k, v in report.losses.items()},
               "final_weights": {k: v[-1] for k, v in report.weights.items()},
               "mse_data": report.mse_data[-1], "ssp": report.ssp,
               "constraints": report.constraint_diagnostics}
    (out / "report.json").write_text(json.dumps(summary, indent=2))
    from .plotting import plot_training_log
    plot_training_log(read_training_log(out / "train_log.csv"), out / "training.png")
    rows = [("epochs", report.epochs), ("termination", report.termination),
            ("wall_time_s", report.wall_time), ("loss_drop", report.loss_drop),
            ("mse_data", report.mse_data[-1])]
    rows += [(f"ssp_{k}", v) for k, v in report.ssp.items()]
    rows.append(("checkpoint", str(out / "model.json")))
    _emit(rows)


def cmd_assimilate(a):
    _train(a, "assimilation")


def cmd_predict(a):
    _train(a, "prediction")


# --------------------------------------------------------------------------- evaluation

def _estimate_from_checkpoint(path, truth: GridField) -> GridField:
    model, _ = load_checkpoint(path)
    X, T = truth.mesh()
    q = truth.quantity
    if q == "elevation":
        vals, _ = predicted_fields(model, truth.x, truth.t)
    elif q == "surface_potential":
        _, vals = predicted_fields(model, truth.x, truth.t)
    elif q == "potential" and "z" in truth.meta:
        from .network import eval_phi
        vals = eval_phi(model, X, T, np.full_like(X, float(truth.meta["z"])))
    else:
        raise ConfigError(f"cannot evaluate a checkpoint for quantity '{q}'")
    return GridField(vals, truth.x0, truth.dx, truth.t0, truth.dt, q, truth.units)


def cmd_evaluate(a):
    truth = load_field(a.truth)
    if (a.estimate is None) == (a.checkpoint is None):
        raise ConfigError("give exactly one of --estimate or --checkpoint")
    est = load_field(a.estimate) if a.estimate else _estimate_from_checkpoint(a.checkpoint, truth)
    if not truth.same_grid(est):
        raise ConfigError("truth and estimate grids differ")
    a_vals, b_vals = truth.values, est.values
    if truth.quantity in ("surface_potential", "potential") and a.gauge == "mean":
        a_vals = a_vals - a_vals.mean()
        b_vals = b_vals - b_vals.mean()
    summ = error_summary(a_vals, b_vals)
    _emit([("quantity", truth.quantity), ("ssp", summ["ssp"]), ("mse", summ["mse"]),
           ("max_abs_error", summ["max_abs"])])
    if a.out:
        _write_report(_out_dir(a.out), truth, a_vals, b_vals, a.x_sections, a.t_sections, a.log)


def _write_report(d: Path, truth: GridField, tv, ev, x_sections, t_sections, log_path):
    from .plotting import plot_cross_section, plot_field_comparison, plot_training_log
    x, t = truth.x, truth.t
    label = f"{truth.quantity} [{truth.units}]"
    plot_field_comparison(x, t, tv, ev, d / "field.png", label)
    t_sections = t_sections or [t[len(t) // 2]]
    x_sections = x_sections or [x[len(x) // 2]]
    for ts in t_sections:
        i = int(np.argmin(np.abs(t - ts)))
        name = f"section_t{t[i]:g}"
        np.savetxt(d / f"{name}.csv", np.column_stack([x, tv[i], ev[i]]), delimiter=",",
                   header="x,truth,estimate", comments="", fmt="%.10g")
        plot_cross_section(x, tv[i], ev[i], d / f"{name}.png", "x [m]", label, f"t = {t[i]:g} s")
    for xs in x_sections:
        j = int(np.argmin(np.abs(x - xs)))
        name = f"section_x{x[j]:g}"
        np.savetxt(d / f"{name}.csv", np.column_stack([t, tv[:, j], ev[:, j]]), delimiter=",",
                   header="t,truth,estimate", comments="", fmt="%.10g")
        plot_cross_section(t, tv[:, j], ev[:, j], d / f"{name}.png", "t [s]", label, f"x = {x[j]:g} m")
    if log_path:
        plot_training_log(read_training_log(log_path), d / "training.png")


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavepinn", description="Physics-informed wave reconstruction and prediction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("dispersion", help="solve the linear dispersion relation")
    s.add_argument("--omega", type=float)
    s.add_argument("--period", type=float)
    s.add_argument("--depth", type=float, required=True)
    s.add_argument("--gravity", type=float, default=wt.GRAVITY)
    s.set_defaults(func=cmd_dispersion)

    s = sub.add_parser("spectrum", help="JONSWAP peak parameters and cutoff frequencies")
    s.add_argument("--tp", type=float, required=True)
    s.add_argument("--gamma", type=float, default=3.3)
    s.add_argument("--depth", type=float, required=True)
    s.add_argument("--hs", type=float)
    s.add_argument("--steepness", type=float)
    s.add_argument("--fraction", type=float, default=0.05)
    s.add_argument("--gravity", type=float, default=wt.GRAVITY)
    s.add_argument("--out")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("region", help="group-velocity bounds of the prediction region")
    s.add_argument("--tp", type=float, required=True)
    s.add_argument("--gamma", type=float, default=3.3)
    s.add_argument("--depth", type=float, required=True)
    s.add_argument("--fraction", type=float, default=0.05)
    s.add_argument("--gravity", type=float, default=wt.GRAVITY)
    s.add_argument("--x-offset", type=float, default=0.0)
    s.add_argument("--x-extent", type=float, default=0.0)
    s.add_argument("--t", type=float, nargs="*")
    s.set_defaults(func=cmd_region)

    s = sub.add_parser("synth", help="linear-theory ground truth fields")
    s.add_argument("--config")
    s.add_argument("--reference-rows", type=int, nargs="+")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--depth", type=float, default=wt.REFERENCE_DEPTH)
    s.add_argument("--x", type=float, nargs=2, default=[0.0, 50.0])
    s.add_argument("--t", type=float, nargs=2, default=[0.0, 30.0])
    s.add_argument("--dx", type=float, default=0.5)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--z", type=float, nargs="*")
    s.add_argument("--surface-potential", action="store_true")
    s.add_argument("--table", action="store_true", help="also write x,t,value text tables")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("buoys", help="extract buoy time series from a field")
    s.add_argument("--field", required=True)
    s.add_argument("--positions", type=float, nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_buoys)

    s = sub.add_parser("snapshots", help="extract spatial snapshots from a field")
    s.add_argument("--field", required=True)
    s.add_argument("--times", type=float, nargs="+", required=True)
    s.add_argument("--x-range", type=float, nargs=2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_snapshots)

    for name, fn, help_ in (("assimilate", cmd_assimilate, "reconstruct a wave field from observations"),
                            ("predict", cmd_predict, "causal prediction from snapshot observations")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--observations")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--no-truth", dest="truth", action="store_false",
                       help="skip scoring against the configured sea state")
        s.set_defaults(func=fn)

    s = sub.add_parser("evaluate", help="SSP and error of an estimate against a reference field")
    s.add_argument("--truth", required=True)
    s.add_argument("--estimate")
    s.add_argument("--checkpoint")
    s.add_argument("--gauge", choices=["mean", "none"], default="mean")
    s.add_argument("--out")
    s.add_argument("--t-sections", type=float, nargs="*")
    s.add_argument("--x-sections", type=float, nargs="*")
    s.add_argument("--log", help="training log to plot alongside")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        args.func(args)
        return 0
    except (ConfigError, wt.DomainError, FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (NumericError, TrainingAborted, ConstraintPretrainingError, FrozenStateError,
            FloatingPointError, RuntimeError) as exc:
        sys.stderr.write(f"runtime error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
