"""Simulate, fit and analyse a cavity-coupled spin-wave memory.

All artifacts go to ``[output] directory``; tabular data is CSV with one
header line, nested summaries are JSON.  Every JSON sidecar carries the
effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, is_dataclass

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, describe_defaults, load_config
from .fitting import EFFICIENCY, REFLECTANCE, FitProblem, fit, poisson_weights
from .linear import TwoLevelSystemParams, reflectance_curve
from .lm import RankDeficientFit
from .retrieval import IntegrationError, ReadPulse, ThreeLevelParams, integrate_retrieval
from .scan import ChiCache, ScanError, UnresolvedSplitting, od_sweep, scan_efficiency
from .stats import (DetectionRecord, DlczModel, EfficiencyChain, NoiseDominated, UndefinedCorrelator,
                    simulate_background, simulate_clicks, summarize)
from .units import CavityGeometry, derive_cavity, khz, mhz, to_mhz

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DOMAIN, EXIT_NUMERIC = 0, 2, 3, 4, 5


# -- config -> model objects ------------------------------------------------

def geometry(cfg) -> CavityGeometry:
    return CavityGeometry(
        mirror_reflectivity=cfg.get("cavity", "mirror_reflectivity"),
        round_trip_loss=cfg.get("cavity", "round_trip_loss"),
        length=cfg.get("cavity", "length_m"),
        waist=cfg.get("cavity", "waist_um") * 1e-6,
        wavelength=cfg.get("cavity", "wavelength_nm") * 1e-9,
        dipole_moment=cfg.get("cavity", "dipole_moment_Cm"),
    )


def three_level(cfg) -> ThreeLevelParams:
    return ThreeLevelParams(
        g=mhz(cfg.get("system", "g_MHz")),
        kappa=mhz(cfg.get("system", "kappa_MHz")),
        gamma=mhz(cfg.get("atom", "linewidth_MHz")) / 2.0,
        gamma_s=khz(cfg.get("atom", "spin_decoherence_kHz")),
        delta_c=mhz(cfg.get("system", "delta_c_MHz")),
        delta_r=mhz(cfg.get("system", "delta_r_MHz")),
    )


def read_pulse(cfg, rabi_mhz=None) -> ReadPulse:
    rabi = cfg.get("pulse", "rabi_MHz") if rabi_mhz is None else rabi_mhz
    return ReadPulse(mhz(rabi), fwhm=cfg.get("pulse", "fwhm_ns") * 1e-3, center=cfg.get("pulse", "center_us"))


def kappa0(cfg) -> float:
    value = cfg.get("system", "kappa0_MHz")
    return derive_cavity(geometry(cfg)).kappa0 if value is None else mhz(value)


def cache(cfg):
    value = cfg.get("output", "cache_dir")
    if value is not None and value.lower() == "none":
        return None
    return ChiCache(os.path.join(outdir(cfg), ".cache") if value is None else value)


def outdir(cfg) -> str:
    return cfg.get("output", "directory")


# -- writers ----------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".12g")


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _path(cfg, name) -> str:
    d = outdir(cfg)
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def write_csv(cfg, name, header, rows) -> str:
    path = _path(cfg, name)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_json(cfg, name, payload, force=False) -> str | None:
    if not (force or cfg.get("output", "json")):
        return None
    path = _path(cfg, name)
    doc = {"toolkit_version": __version__, "config_schema": SCHEMA_VERSION, "config": cfg.effective()}
    doc.update(_jsonable(payload))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- subcommands ------------------------------------------------------------

def cmd_derive(cfg, args):
    geom = geometry(cfg)
    d = derive_cavity(geom)
    rows = [
        ("finesse", f"{d.finesse:.4f}", ""),
        ("free spectral range", f"{d.fsr / 1e6:.3f}", "MHz"),
        ("kappa / 2pi", f"{to_mhz(d.kappa):.4f}", "MHz"),
        ("kappa0 / 2pi", f"{to_mhz(d.kappa0):.4f}", "MHz"),
        ("kappa / kappa0", f"{d.kappa_ratio:.4f}", ""),
        ("escape efficiency", f"{d.escape_efficiency:.4f}", ""),
        ("g0 / 2pi", f"{to_mhz(d.g0) * 1e3:.3f}", "kHz"),
    ]
    width = max(len(r[0]) for r in rows)
    for name, value, unit in rows:
        print(f"{name:<{width}}  {value:>12} {unit}".rstrip())
    if args.json:
        payload = {"derived": {
            "finesse": d.finesse, "fsr_Hz": d.fsr, "kappa_MHz": to_mhz(d.kappa), "kappa0_MHz": to_mhz(d.kappa0),
            "kappa_ratio": d.kappa_ratio, "escape_efficiency": d.escape_efficiency, "g0_kHz": to_mhz(d.g0) * 1e3,
        }}
        write_json(cfg, "derive.json", payload, force=True)


def cmd_reflectance(cfg, args):
    params = TwoLevelSystemParams(
        g=mhz(cfg.get("system", "g_MHz")),
        kappa=mhz(cfg.get("system", "kappa_MHz")),
        kappa0=kappa0(cfg),
        gamma=mhz(cfg.get("atom", "linewidth_MHz")) / 2.0,
        delta_c=mhz(cfg.get("system", "delta_c_MHz")),
    )
    grid = mhz(np.linspace(cfg.get("reflectance", "probe_min_MHz"), cfg.get("reflectance", "probe_max_MHz"),
                           cfg.get("reflectance", "probe_points")))
    curve = reflectance_curve(params, grid)
    write_csv(cfg, "reflectance.csv", ["detuning_MHz", "reflectance"],
              zip(to_mhz(curve.probe_detunings), curve.reflectance))
    write_json(cfg, "reflectance.json", {"params_rad_per_us": asdict(params)})


def cmd_retrieve(cfg, args):
    params = three_level(cfg)
    pulse = read_pulse(cfg)
    res = integrate_retrieval(params, pulse, cfg.get("integrator", "horizon_us"), cfg.get("integrator", "tol"),
                              n_samples=cfg.get("integrator", "samples"))
    write_csv(cfg, "retrieve.csv", ["t_us", "intensity"], zip(res.times, res.cavity_intensity))
    write_json(cfg, "retrieve.json", {
        "chi": res.chi, "decay_budget": res.decay_budget, "budget_total": res.budget_total,
        "steps": res.steps, "rejected_steps": res.rejected, "horizon_us": res.final_state.t,
    }, force=True)
    print(f"chi = {res.chi:.6f}")


def _axis(cfg, section, prefix):
    return mhz(np.linspace(cfg.get(section, f"{prefix}_min_MHz"), cfg.get(section, f"{prefix}_max_MHz"),
                           cfg.get(section, f"{prefix}_points")))


def cmd_scan(cfg, args):
    grid = scan_efficiency(three_level(cfg), read_pulse(cfg), _axis(cfg, "scan", "dr"), _axis(cfg, "scan", "dc"),
                           cfg.get("integrator", "horizon_us"), cfg.get("integrator", "tol"), args.workers,
                           cache(cfg))
    rows = ((to_mhz(dc), to_mhz(dr), grid.chi[i, j]) for i, dc in enumerate(grid.dc_axis)
            for j, dr in enumerate(grid.dr_axis))
    write_csv(cfg, "scan.csv", ["dc_MHz", "dr_MHz", "chi"], rows)
    write_json(cfg, "scan.json", {
        "peak_loci_MHz": [{"dc_MHz": to_mhz(dc), "dr_MHz": list(to_mhz(p))}
                          for dc, p in zip(grid.dc_axis, grid.peak_loci)],
        "eigen_overlay_MHz": {"dc_MHz": to_mhz(grid.dc_axis), "plus": to_mhz(grid.eigen_overlay[0]),
                              "minus": to_mhz(grid.eigen_overlay[1])},
        "chi_max": float(grid.chi.max()),
    })


def cmd_odsweep(cfg, args):
    base = three_level(cfg).replace(delta_c=0.0)
    res = od_sweep(base, read_pulse(cfg, cfg.get("odsweep", "rabi_MHz")), cfg.get("odsweep", "od_values"),
                   cfg.get("odsweep", "od_ref"), mhz(cfg.get("odsweep", "g_ref_MHz")),
                   n_dr=cfg.get("odsweep", "dr_points"), horizon=cfg.get("integrator", "horizon_us"),
                   tol=cfg.get("integrator", "tol"), workers=args.workers, cache=cache(cfg))
    write_csv(cfg, "odsweep.csv", ["od", "splitting_MHz"],
              ((o, to_mhz(s) if math.isfinite(s) else "nan") for o, s in zip(res.od_values, res.splittings)))
    write_json(cfg, "odsweep.json", {
        "amplitude_MHz": to_mhz(res.amplitude), "amplitude_ci_MHz": [to_mhz(v) for v in res.amplitude_ci],
        "exponent": res.exponent, "exponent_ci": res.exponent_ci, "unresolved_od": res.unresolved,
    })
    print(f"exponent = {res.exponent:.4f}  95% CI [{res.exponent_ci[0]:.4f}, {res.exponent_ci[1]:.4f}]")


def read_observations(path):
    xs, ys, ws = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "x_MHz":
            raise ConfigError("fit data must start with a header line x_MHz,y[,weight]", path, 1)
        for n, row in enumerate(reader, 2):
            if not row or row[0].startswith("#"):
                continue
            try:
                xs.append(float(row[0]))
                ys.append(float(row[1]))
                if len(row) > 2 and row[2].strip():
                    ws.append(float(row[2]))
            except (ValueError, IndexError):
                raise ConfigError(f"bad observation {row!r}", path, n) from None
    if ws and len(ws) != len(xs):
        raise ConfigError("weights must be given for every observation or none", path)
    return np.array(xs), np.array(ys), (np.array(ws) if ws else None)


def cmd_fit(cfg, args):
    path = args.data or cfg.get("fit", "data")
    if not path:
        raise ConfigError("no fit data: set [fit] data or pass --data", cfg.path, key="data")
    x_mhz, y, w = read_observations(path)
    if w is None and cfg.get("fit", "weighting") == "poisson":
        w = poisson_weights(y)
    kind = cfg.get("fit", "model")
    if kind == EFFICIENCY:
        base = three_level(cfg)
        pulse = read_pulse(cfg)
        free = {name: tuple(mhz(cfg.get("fit", f"{name}_{s}_MHz")) for s in ("init", "min", "max"))
                for name in ("g", "rabi", "delta_c")}
        fixed = {"kappa": base.kappa, "gamma": base.gamma, "gamma_s": base.gamma_s, "fwhm": pulse.fwhm,
                 "center": pulse.center, "horizon": cfg.get("integrator", "horizon_us"),
                 "tol": cfg.get("integrator", "tol")}
        scale = {name: to_mhz for name in free}
    elif kind == REFLECTANCE:
        free = {"n_atoms": tuple(cfg.get("fit", f"n_atoms_{s}") for s in ("init", "min", "max"))}
        fixed = {"g0": derive_cavity(geometry(cfg)).g0, "kappa": mhz(cfg.get("system", "kappa_MHz")),
                 "kappa0": kappa0(cfg), "gamma": mhz(cfg.get("atom", "linewidth_MHz")) / 2.0}
        scale = {"n_atoms": float}
    else:
        raise ConfigError(f"unknown fit model {kind!r}", cfg.path, key="model")
    report = fit(FitProblem(mhz(x_mhz), y, kind, free, fixed, w), max_iter=cfg.get("fit", "max_iter"))
    units = "_MHz" if kind == EFFICIENCY else ""
    write_json(cfg, "fit.json", {
        "model": kind,
        "estimates": {k + units: scale[k](v) for k, v in report.estimates.items()},
        "confidence_intervals_95": {k + units: [scale[k](a), scale[k](b)]
                                    for k, (a, b) in report.confidence_intervals.items()},
        "residual_rms": report.residual_rms, "iterations": report.iterations, "converged": report.converged,
        "message": report.message,
    }, force=True)
    for k, v in report.estimates.items():
        lo, hi = report.confidence_intervals[k]
        print(f"{k + units} = {scale[k](v):.6g}  [{scale[k](lo):.6g}, {scale[k](hi):.6g}]")
    if not report.converged:
        print("warning: fit did not converge", file=sys.stderr)


def stats_model(cfg) -> DlczModel:
    eta_esc = cfg.get("stats", "eta_esc")
    if eta_esc is None:
        eta_esc = derive_cavity(geometry(cfg)).escape_efficiency
    chain = EfficiencyChain(eta_esc, cfg.get("stats", "eta_t"), cfg.get("stats", "eta_d"))
    return DlczModel(cfg.get("stats", "mu"), cfg.get("stats", "chi_true"), chain,
                     cfg.get("stats", "write_efficiency"), cfg.get("stats", "dark_count"))


def cmd_simulate_events(cfg, args):
    model = stats_model(cfg)
    seed = cfg.get("stats", "seed")
    trials = cfg.get("stats", "trials")
    bg_trials = cfg.get("stats", "background_trials")
    bg_trials = trials if bg_trials is None else bg_trials
    w, r = simulate_clicks(model, trials, seed, args.workers)
    bg = simulate_background(model, bg_trials, seed, args.workers) if bg_trials else np.zeros(0, dtype=int)
    path = _path(cfg, "events.txt")
    with open(path, "w") as fh:
        fh.write(f"# seed {seed}\n")
        fh.write(f"# background_trials {bg.size}\n")
        fh.write(f"# background_read_any {int(np.count_nonzero(bg))}\n")
        fh.write(f"# config {json.dumps(cfg.effective(), sort_keys=True)}\n")
        fh.write("write_clicks read_clicks\n")
        lines = np.char.add(np.char.add(w.astype(str), " "), r.astype(str))
        fh.write("\n".join(lines.tolist()))
        fh.write("\n")
    write_json(cfg, "events.json", {"seed": seed, "trials": trials,
                                    "record": DetectionRecord.from_clicks(w, r, bg)})
    print(f"seed = {seed}")


def read_events(path) -> tuple[DetectionRecord, dict]:
    """Parse an event file; returns the record and the integer header fields."""
    meta = {}
    write, read = [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2 and parts[0] in ("seed", "background_trials", "background_read_any"):
                    meta[parts[0]] = int(parts[1])
                continue
            fields = line.split()
            if not fields or fields[0] == "write_clicks":
                continue
            try:
                write.append(int(fields[0]))
                read.append(int(fields[1]))
            except (ValueError, IndexError):
                raise ConfigError(f"bad event record {line.strip()!r}", path, n) from None
    rec = DetectionRecord.from_clicks(np.array(write, dtype=int), np.array(read, dtype=int))
    rec = DetectionRecord(**{**asdict(rec), "background_trials": meta.get("background_trials", 0),
                             "background_read_any": meta.get("background_read_any", 0)})
    return rec, meta


def cmd_stats(cfg, args):
    seed = None
    if args.record:
        with open(args.record) as fh:
            record = DetectionRecord(**json.load(fh))
    else:
        path = args.events or cfg.get("stats", "events") or os.path.join(outdir(cfg), "events.txt")
        record, meta = read_events(path)
        seed = meta.get("seed")
    summary = summarize(record, stats_model(cfg).chain)
    write_json(cfg, "stats.json", {"record": record, "summary": summary,
                                   "seed": seed}, force=True)
    chi = summary.chi_estimate
    print(f"g2_wr = {summary.g2_wr.value:.4f} +- {summary.g2_wr.error:.4f}")
    print(f"chi   = {chi.value:.4f} +- {chi.error:.4f}{'' if chi.in_model else '  (' + chi.note + ')'}")


COMMANDS = {
    "derive": cmd_derive, "reflectance": cmd_reflectance, "retrieve": cmd_retrieve, "scan": cmd_scan,
    "odsweep": cmd_odsweep, "fit": cmd_fit, "simulate-events": cmd_simulate_events, "stats": cmd_stats,
}

RETRIEVE_FLAGS = {
    "g_MHz": "system.g_MHz", "kappa_MHz": "system.kappa_MHz", "linewidth_MHz": "atom.linewidth_MHz",
    "spin_decoherence_kHz": "atom.spin_decoherence_kHz", "delta_c_MHz": "system.delta_c_MHz",
    "delta_r_MHz": "system.delta_r_MHz", "rabi_MHz": "pulse.rabi_MHz", "fwhm_ns": "pulse.fwhm_ns",
    "center_us": "pulse.center_us", "horizon_us": "integrator.horizon_us", "tol": "integrator.tol",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration entry (repeatable)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sweeps and Monte Carlo")
    common.add_argument("--output-dir", help="override [output] directory")

    parser = argparse.ArgumentParser(prog="cavity-spinwave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"cavity-spinwave {__version__} (config schema {SCHEMA_VERSION})")
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("derive", parents=[common], help="derived cavity constants")
    p.add_argument("--json", action="store_true", help="also write derive.json")
    sub.add_parser("reflectance", parents=[common], help="probe reflectance spectrum")
    p = sub.add_parser("retrieve", parents=[common], help="single read-out waveform and efficiency")
    for flag in RETRIEVE_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag)
    sub.add_parser("scan", parents=[common], help="efficiency over the (delta_c, delta_r) grid")
    sub.add_parser("odsweep", parents=[common], help="splitting versus optical depth")
    p = sub.add_parser("fit", parents=[common], help="least-squares fit of a measured spectrum")
    p.add_argument("--data", help="observation CSV (x_MHz,y[,weight])")
    p = sub.add_parser("simulate-events", parents=[common], help="Monte Carlo click record")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p = sub.add_parser("stats", parents=[common], help="estimator chain on a click record")
    p.add_argument("--events", help="event file from simulate-events")
    p.add_argument("--record", help="JSON file with aggregate DetectionRecord counts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(describe_defaults())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            parser.error(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.output_dir:
        overrides["output.directory"] = args.output_dir
    if args.command == "retrieve":
        for flag, key in RETRIEVE_FLAGS.items():
            if getattr(args, flag) is not None:
                overrides[key] = getattr(args, flag)
    if args.command == "simulate-events":
        if args.seed is not None:
            overrides["stats.seed"] = str(args.seed)
        if args.trials is not None:
            overrides["stats.trials"] = str(args.trials)

    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnresolvedSplitting, NoiseDominated, UndefinedCorrelator, RankDeficientFit) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (IntegrationError, ScanError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
