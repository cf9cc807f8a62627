"""Command-line front end: ``upconv-g2 <command> ...``.

Every command writes its outputs plus ``<prefix>.manifest.json`` into
``--out-dir``; ``upconv-g2 replay MANIFEST --out-dir DIR`` re-runs it. Errors are reported as one JSON object on stderr; exit codes
are 0 (ok), 2 (configuration/domain), 3 (numerical/fit), 4 (regime).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, dispersion, hbt, propagation
from .errors import ConfigurationError, UpconvError
from .io import read_csv, sha256_file, write_csv, write_json


def _range(text):
    """'a:b:step' (inclusive of b when it falls on the grid) or 'x,y,z'."""
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            if not s > 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / s + 1e-9))
            return a + s * np.arange(n + 1)
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start:stop:step' or a comma list, got {text!r}") from None


def _factor(text):
    name, _, value = text.partition("=")
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}") from None


class Run:
    """Collects input files and outputs for the manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.prefix = args.prefix or args.command
        self.inputs = {}
        self.outputs = []
        self.seed = None

    def path(self, suffix):
        p = self.out / f"{self.prefix}{suffix}"
        self.outputs.append(p.name)
        return p

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def manifest(self):
        args = {k: v for k, v in vars(self.args).items() if k not in ("func", "argv")}
        write_json(self.out / f"{self.prefix}.manifest.json", {
            "command": self.args.command,
            "argv": self.args.argv,
            "args": args,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "version": __version__,
        })


# ------------------------------------------------------------ commands


def _crystal(args):
    return dispersion.CrystalSpec(poling_period_um=args.poling, length_mm=args.length,
                                  temperature_c=args.temperature, qpm_order=args.order)


def cmd_qpm(args, run):
    model = dispersion.load_model(args.sellmeier)
    if args.sellmeier:
        run.add_input(args.sellmeier)
    table = dispersion.qpm_curve(args.signal, _crystal(args), model, tuple(args.bracket))
    table.to_csv(run.path(".csv"))
    return {"points": len(table), "solved": int(table.solved.sum())}


def _setup(args, power=None):
    crystal, pump, signal = propagation.experiment_setup(
        avg_power_mw=args.power if power is None else power, kappa=args.kappa, signal_nm=args.signal_nm,
        pump_nm=args.pump_nm, signal_power_mw=args.signal_power, pump_fwhm_ps=args.pump_fwhm)
    grid = propagation.GridSpec(args.window, args.n_time, args.n_z)
    return crystal, pump, signal, grid


def cmd_propagate(args, run):
    crystal, pump, signal, grid = _setup(args)
    rec = propagation.propagate(crystal, pump, signal, grid, checkpoints=args.checkpoints, delta_k=args.delta_k)
    stem = run.out / run.prefix
    rec.export(stem)
    run.outputs += [f"{run.prefix}{s}" for s in ("_meta.json", "_pump.csv", "_signal.csv", "_sfg.csv")]
    gate = propagation.gate_response(rec)
    gate.to_csv(run.path("_gate.csv"))
    return {"resolution_ps": gate.fwhm, "sfg_energy_pj": rec.energy("sfg"),
            "manley_rowe_drift": rec.manley_rowe_drift}


def cmd_sweep(args, run):
    crystal, pump, signal, grid = _setup(args, power=1.0)
    table = propagation.sweep_pump_power(args.powers, crystal, pump, signal, grid, workers=args.workers)
    table.to_csv(run.path(".csv"))
    return {"points": len(table.power_mw)}


def cmd_calibrate(args, run):
    run.add_input(args.measured)
    data = read_csv(args.measured)
    try:
        powers, output = data["power_mW"], data["output"]
    except KeyError:
        raise ConfigurationError("measurement CSV needs columns power_mW, output") from None
    crystal, pump, signal, grid = _setup(args, power=1.0)
    kappa, info = propagation.fit_saturation(powers, output, args.initial_kappa, crystal, pump, signal, grid,
                                             workers=args.workers, full_output=True)
    result = {"kappa": kappa, **info}
    write_json(run.path(".json"), result)
    return result


def _gate_from(spec, base):
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return propagation.GateResponse.gaussian(float(spec.get("fwhm_ps", 4.0)), float(spec.get("dt_ps", 0.05))), None
    if kind == "csv":
        path = (base / spec["path"]).resolve()
        d = read_csv(path)
        return propagation.GateResponse.from_samples(d["t_ps"], d["h"]), path
    if kind == "simulated":
        c, p, s = propagation.experiment_setup(float(spec.get("avg_power_mw", 1.5)),
                                          float(spec.get("kappa", propagation.DEFAULT_KAPPA)))
        return propagation.gate_response(propagation.propagate(c, p, s, checkpoints=2)), None
    raise ConfigurationError(f"unknown gate kind {kind!r}")


def load_experiment(path):
    """Parse an experiment JSON into (source, MeasurementConfig, extra input files)."""
    path = Path(path)
    with open(path) as fh:
        exp = json.load(fh)
    try:
        cfg = dict(exp["config"])
        src_spec = dict(exp["source"])
    except (KeyError, TypeError):
        raise ConfigurationError("experiment file needs 'source' and 'config' objects") from None
    gate, gate_path = _gate_from(cfg.pop("gate", {}), path.parent)
    delays = cfg.pop("delays_ps")
    if isinstance(delays, dict):
        delays = _range(f"{delays['start']}:{delays['stop']}:{delays['step']}")
    if src_spec.get("kind") == "analytic_g2" and src_spec.pop("gate_referenced", False):
        src_spec.pop("kind")
        src_spec.pop("model", None)
        source = hbt.polariton_model(gate=gate, **src_spec)
    else:
        source = hbt.source_from_dict(src_spec)
    try:
        config = hbt.MeasurementConfig(gate=gate, delays_ps=delays, **cfg)
    except TypeError as exc:
        raise ConfigurationError(f"bad config field: {exc}") from None
    return source, config, [gate_path] if gate_path else []


def cmd_simulate(args, run):
    run.add_input(args.experiment)
    source, cfg, extra = load_experiment(args.experiment)
    for p in extra:
        run.add_input(p)
    if args.seed is not None:
        cfg.rng_seed = args.seed
    if args.n_periods is not None:
        cfg.n_periods = args.n_periods
    cfg.workers = args.workers
    run.seed = cfg.rng_seed
    hist = hbt.simulate_coincidences(source, cfg)
    hist.to_csv(run.path("_hist.csv"))
    est = hbt.estimate_g2(hbt.normalize(hist))
    est.to_csv(run.path("_g2.csv"))
    return {"bins": len(est.dt_ps), "n_periods": cfg.n_periods}


def _estimate_from_csv(path):
    d = read_csv(path)
    if "c" in d and np.all(np.isfinite(d["c"])):
        return hbt.estimate_g2(hbt.NormalizedRates(d["dt_ps"], d["c"], d["c_err"]))
    return hbt.G2Estimate(d["dt_ps"], d["g2"], d["g2_err"])


def cmd_analyze(args, run):
    result = {}
    if args.deconvolve:
        m, p = args.deconvolve
        result["resolution_ps"] = analysis.deconvolve_resolution(m, p)
    if args.g2_csv is None:
        if len(result) == 0:
            raise ConfigurationError("give a g2 CSV or --deconvolve")
    else:
        run.add_input(args.g2_csv)
        est = _estimate_from_csv(args.g2_csv)
        if not (args.mean or args.peak or args.visibility or args.violation):
            args.mean = True
        if args.mean:
            m, e = analysis.mean_g2(est)
            result["mean"] = {"value": m, "error": e}
        if args.peak:
            f = analysis.fit_gaussian_peak(est.dt_ps, est.g2, est.g2_err)
            result["peak"] = {"center": f.center, "fwhm": f.fwhm, "amplitude": f.amplitude,
                              "baseline": f.baseline, "errors": f.errors, "reduced_chi2": f.reduced_chi2,
                              "is_dip": f.is_dip, "fwhm_constrained": f.fwhm_constrained}
            if args.pulse_fwhm:
                r, re = analysis.deconvolve_resolution(f.fwhm, args.pulse_fwhm, f.errors["fwhm"], 0.0)
                result["peak"]["resolution_ps"] = {"value": r, "error": re}
        if args.visibility:
            v = analysis.visibility(est.dt_ps, est.g2, args.visibility, est.g2_err)
            result["visibility"] = {"value": v.visibility, "error": v.error, "offset": v.offset}
        if args.violation:
            v = analysis.classical_violation(est)
            result["violation"] = {"significance": v.significance, "argmax_dt_ps": v.argmax_dt}
    write_json(run.path(".json"), result)
    return result


def cmd_budget(args, run):
    factors = dict(analysis.DEFAULT_BUDGET_FACTORS)
    factors["gate_duty_cycle"] = analysis.gate_duty_cycle(args.resolution, args.rep_rate)
    factors.update(dict(args.factor or []))
    b = analysis.efficiency_budget(factors)
    result = {"factors": b.factors, "product": b.product}
    write_json(run.path(".json"), result)
    return result


def replay_argv(manifest_path, out_dir):
    """argv that regenerates the artifacts of ``manifest_path`` into ``out_dir``.

    Input files must still hash to the recorded values.
    """
    with open(manifest_path) as fh:
        man = json.load(fh)
    for path, digest in man["inputs"].items():
        if sha256_file(path) != digest:
            raise ConfigurationError(f"input {path} changed since the manifest was written")
    argv = list(man["argv"])
    if "--out-dir" in argv:
        i = argv.index("--out-dir")
        del argv[i:i + 2]
    argv = [a for a in argv if not a.startswith("--out-dir=")]
    return argv + ["--out-dir", str(out_dir)]


# --------------------------------------------------------------- parser


def _add_setup(p):
    p.add_argument("--kappa", type=float, default=propagation.DEFAULT_KAPPA, help="coupling, W^-1/2 mm^-1")
    p.add_argument("--signal-nm", type=float, default=812.0)
    p.add_argument("--pump-nm", type=float, default=None, help="default: QPM-solved")
    p.add_argument("--signal-power", type=float, default=1e-3, help="CW signal power, mW")
    p.add_argument("--pump-fwhm", type=float, default=2.5, help="sech^2 pump FWHM, ps")
    p.add_argument("--window", type=float, default=80.0, help="time window, ps")
    p.add_argument("--n-time", type=int, default=2048)
    p.add_argument("--n-z", type=int, default=400)


def build_parser():
    ap = argparse.ArgumentParser(prog="upconv-g2", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--prefix", default=None, help="output file prefix (default: command name)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qpm", parents=[common], help="QPM pump and SFG wavelength tables")
    p.add_argument("--signal", type=_range, default=_range("750:1150:1"), help="nm, start:stop:step")
    p.add_argument("--poling", type=float, default=3.96, help="poling period, um")
    p.add_argument("--temperature", type=float, default=25.0)
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--length", type=float, default=12.5)
    p.add_argument("--bracket", type=float, nargs=2, default=list(dispersion.PUMP_TUNING_RANGE_NM))
    p.add_argument("--sellmeier", default=None, help="coefficient JSON (default: bundled)")
    p.set_defaults(func=cmd_qpm)

    p = sub.add_parser("propagate", parents=[common], help="single propagation run and gate response")
    p.add_argument("--power", type=float, default=1.5, help="average pump power, mW")
    p.add_argument("--checkpoints", type=int, default=64)
    p.add_argument("--delta-k", type=float, default=0.0)
    _add_setup(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("sweep", parents=[common], help="pump power sweep")
    p.add_argument("--powers", type=_range, default=_range("0.1,0.2,0.5,1,1.5,2,3,5"))
    p.add_argument("--workers", type=int, default=None)
    _add_setup(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", parents=[common], help="fit kappa to a measured saturation curve")
    p.add_argument("measured", help="CSV with columns power_mW, output")
    p.add_argument("--initial-kappa", type=float, default=propagation.DEFAULT_KAPPA)
    p.add_argument("--workers", type=int, default=None)
    _add_setup(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo HBT run from an experiment JSON")
    p.add_argument("experiment")
    p.add_argument("--seed", type=int, default=None, help="override config.rng_seed")
    p.add_argument("--n-periods", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="fits on a g2 CSV")
    p.add_argument("g2_csv", nargs="?", default=None)
    p.add_argument("--mean", action="store_true")
    p.add_argument("--peak", action="store_true", help="Gaussian peak fit")
    p.add_argument("--pulse-fwhm", type=float, default=None, help="with --peak: deconvolve this pulse width")
    p.add_argument("--visibility", type=float, default=None, metavar="GHZ")
    p.add_argument("--violation", action="store_true")
    p.add_argument("--deconvolve", type=float, nargs=2, metavar=("MEASURED", "PULSE"))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("budget", parents=[common], help="efficiency budget")
    p.add_argument("--resolution", type=float, default=4.0, help="gate FWHM, ps")
    p.add_argument("--rep-rate", type=float, default=76.0, help="MHz")
    p.add_argument("--factor", type=_factor, action="append", help="name=value, repeatable")
    p.set_defaults(func=cmd_budget)
    return ap


def _fail(exc, code):
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["replay"]:
        if len(argv) != 4 or argv[2] != "--out-dir":
            print("usage: upconv-g2 replay MANIFEST --out-dir DIR", file=sys.stderr)
            return 2
        try:
            argv = replay_argv(argv[1], argv[3])
        except (UpconvError, OSError, KeyError, json.JSONDecodeError) as exc:
            return _fail(exc, getattr(exc, "exit_code", 2))
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        run = Run(args)
        result = args.func(args, run)
        run.manifest()
    except UpconvError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        return _fail(exc, 2)
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=_plain)
    sys.stdout.write("\n")
    return 0


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


if __name__ == "__main__":
    sys.exit(main())
