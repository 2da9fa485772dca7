"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cavity_spinwave.cli import main
from cavity_spinwave.fitting import (EFFICIENCY, REFLECTANCE, FitProblem, efficiency_model, fit_efficiency_spectrum,
                                     fit_reflectance_N, reflectance_model)
from cavity_spinwave.linear import TwoLevelSystemParams, eigenfrequencies_two_level, reflectance
from cavity_spinwave.oracle import rk4_chi
from cavity_spinwave.retrieval import (GAMMA, KAPPA, ReadPulse, ThreeLevelParams, dressed_eigenfrequencies,
                                       integrate_retrieval)
from cavity_spinwave.scan import evaluate_points, main_peaks, od_sweep, scan_efficiency
from cavity_spinwave.stats import (DlczModel, EfficiencyChain, autocorrelations, cauchy_schwarz,
                                   simulate_detection_events, summarize)
from cavity_spinwave.units import CavityGeometry, derive_cavity, mhz, to_mhz

BENCH_GEOMETRY = CavityGeometry(mirror_reflectivity=0.86, round_trip_loss=0.11, length=0.88)
GREY = dict(g=mhz(15.8), rabi=mhz(4.8), delta_c=mhz(-1.5))
CHAIN = EfficiencyChain(0.56, 0.53, 0.45)


def rel(a, b):
    return abs(a - b) / abs(b)


def test_cavity_derivations(acceptance_report):
    t0 = time.perf_counter()
    d = derive_cavity(BENCH_GEOMETRY)
    elapsed = time.perf_counter() - t0
    checks = {
        "F": rel(d.finesse, 23.5) <= 0.005,
        "eta": Fraction(d.escape_efficiency).limit_denominator(1000) == Fraction(14, 25)
        and d.escape_efficiency == 0.14 / 0.25,
        "fsr": rel(d.fsr, 340e6) <= 0.005,
        "kappa": rel(to_mhz(d.kappa), 7.25) <= 0.005,
        "ratio": rel(d.kappa_ratio, 1.91) <= 0.01,
        "runtime": elapsed < 0.1,
    }
    ok = all(checks.values())
    acceptance_report(1, ok, f"F={d.finesse:.3f} eta={d.escape_efficiency:.4f} fsr={d.fsr / 1e6:.2f} MHz "
                             f"kappa=2pi*{to_mhz(d.kappa):.4f} MHz kappa/kappa0={d.kappa_ratio:.4f}")
    assert ok, checks


def test_vacuum_rabi_reflectance(acceptance_report):
    t0 = time.perf_counter()
    d = derive_cavity(BENCH_GEOMETRY)
    g = mhz(15.0)
    p = TwoLevelSystemParams(g=g, kappa=KAPPA, kappa0=d.kappa0, gamma=GAMMA)
    plus, minus = eigenfrequencies_two_level(g, 0.0)
    minima = []
    for guess in (minus, plus):
        res = minimize_scalar(lambda x: reflectance(x, p), bounds=(guess - 0.5 * g, guess + 0.5 * g),
                              method="bounded", options={"xatol": 1e-9})
        minima.append(res.x)
    elapsed = time.perf_counter() - t0
    split_err = rel(minima[1] - minima[0], 2 * g)
    offsets = [abs(minima[0] - minus) / GAMMA, abs(minima[1] - plus) / GAMMA]
    ok = split_err <= 0.03 and max(offsets) <= 0.5 and elapsed < 1.0
    acceptance_report(2, ok, f"minima at 2pi*({to_mhz(minima[0]):.3f}, {to_mhz(minima[1]):.3f}) MHz, "
                             f"splitting error {split_err:.2%}, max offset {max(offsets):.3f} gamma, {elapsed:.3f} s")
    assert ok


def random_sets(n, seed):
    rng = np.random.default_rng(seed)
    params, pulses = [], []
    for _ in range(n):
        params.append(ThreeLevelParams(
            g=mhz(rng.uniform(0, 30)), kappa=mhz(rng.uniform(2, 15)), gamma=mhz(rng.uniform(1, 5)),
            gamma_s=mhz(rng.uniform(0, 0.1)), delta_c=mhz(rng.uniform(-20, 20)), delta_r=mhz(rng.uniform(-20, 20))))
        pulses.append(ReadPulse(mhz(rng.uniform(0.5, 15)), fwhm=rng.uniform(0.15, 0.5)))
    return params, pulses


def test_ode_correctness(acceptance_report):
    tol = 1e-9
    horizon = 3.2
    t0 = time.perf_counter()
    params, pulses = random_sets(100, seed=2024)
    adaptive = [integrate_retrieval(p, q, horizon=horizon, tol=tol, n_samples=0) for p, q in zip(params, pulses)]
    budget_err = max(abs(r.budget_total - 1.0) for r in adaptive)
    ref, ref_err = rk4_chi(params, pulses, horizon, 2.5e-4)
    chi_diff = np.max(np.abs(np.array([r.chi for r in adaptive]) - ref))
    elapsed = time.perf_counter() - t0
    ok = budget_err <= 10 * tol and chi_diff <= 1e-6 and np.max(ref_err) < 1e-6 and elapsed < 30
    acceptance_report(3, ok, f"max budget error {budget_err:.2e} (limit {10 * tol:.0e}), max |chi - chi_rk4| "
                             f"{chi_diff:.2e} (reference error {np.max(ref_err):.1e}), {elapsed:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def full_grid():
    base = ThreeLevelParams(g=GREY["g"])
    pulse = ReadPulse(GREY["rabi"])
    axis = mhz(np.linspace(-30, 30, 61))
    t0 = time.perf_counter()
    grid = scan_efficiency(base, pulse, axis, axis)
    return grid, time.perf_counter() - t0


def test_efficiency_spectrum(acceptance_report, full_grid):
    grid, grid_time = full_grid
    pulse = ReadPulse(GREY["rabi"])
    base = ThreeLevelParams(g=GREY["g"], delta_c=GREY["delta_c"])
    dr = mhz(np.linspace(-30, 30, 61))
    row = np.array([integrate_retrieval(base.replace(delta_r=x), pulse, n_samples=0).chi for x in dr])
    peaks = main_peaks(row, dr)
    overlay = sorted(dressed_eigenfrequencies(GREY["g"], GREY["rabi"], GREY["delta_c"]))
    step = mhz(1.0)
    offsets = [abs(a - b) for a, b in zip(peaks, overlay)] if len(peaks) == 2 else [math.inf]
    peak_chi = float(row.max())
    ok = len(peaks) == 2 and max(offsets) <= step and 0.6 <= peak_chi <= 0.85 and grid_time < 120
    acceptance_report(4, ok, f"peaks 2pi*({', '.join(f'{to_mhz(p):.2f}' for p in peaks)}) MHz vs overlay "
                             f"2pi*({', '.join(f'{to_mhz(p):.2f}' for p in overlay)}) MHz, "
                             f"peak chi {peak_chi:.3f}, 61x61 grid {grid_time:.1f} s")
    assert ok


def test_avoided_crossing(acceptance_report, full_grid):
    grid, _ = full_grid
    seps = grid.peak_separations()
    in_window = int(np.isfinite(seps).sum())
    # at large |delta_c| the cavity-like branch leaves the +-30 MHz read window;
    # follow it on a wider read axis so every row of the scan gets a separation
    wide = mhz(np.linspace(-60, 60, 121))
    base = ThreeLevelParams(g=GREY["g"])
    pulse = ReadPulse(GREY["rabi"])
    for i in np.flatnonzero(~np.isfinite(seps)):
        row = evaluate_points(base, pulse, [(grid.dc_axis[i], x) for x in wide])
        peaks = main_peaks(row, wide)
        if len(peaks) == 2:
            seps[i] = peaks[1] - peaks[0]
    resolved = np.isfinite(seps)
    min_sep = float(np.min(seps[resolved])) if resolved.any() else 0.0
    asym = float(np.max(np.abs(grid.chi - grid.chi[::-1, ::-1])))
    ok = resolved.all() and min_sep > 0 and asym <= 1e-9
    acceptance_report(5, ok, f"two maxima in {int(resolved.sum())}/{seps.size} rows ({in_window} inside the "
                             f"+-30 MHz window), minimum separation 2pi*{to_mhz(min_sep):.2f} MHz at "
                             f"delta_c = 2pi*{to_mhz(grid.dc_axis[np.nanargmin(seps)]):.0f} MHz, "
                             f"max |chi(dc,dr) - chi(-dc,-dr)| = {asym:.1e}")
    assert ok


def test_sqrt_od_law(acceptance_report):
    base = ThreeLevelParams(g=GREY["g"])
    res = od_sweep(base, ReadPulse(mhz(1.0)), [2, 4, 8, 16, 32], 2.0, GREY["g"])
    ok = not res.unresolved and abs(res.exponent - 0.5) <= 0.05
    acceptance_report(6, ok, f"exponent {res.exponent:.4f} (95% CI {res.exponent_ci[0]:.3f}..{res.exponent_ci[1]:.3f}) "
                             f"over OD 2..32, splittings 2pi*{np.round(to_mhz(res.splittings), 2).tolist()} MHz")
    assert ok


def test_fit_roundtrips(acceptance_report):
    t0 = time.perf_counter()
    x = mhz(np.linspace(-30, 30, 601))
    rng = np.random.default_rng(7)
    y = efficiency_model(x, **GREY) * (1 + 0.02 * rng.standard_normal(x.size))
    free = {"g": (mhz(13), mhz(5), mhz(30)), "rabi": (mhz(4), mhz(0.5), mhz(15)),
            "delta_c": (mhz(0), mhz(-10), mhz(10))}
    eff = fit_efficiency_spectrum(FitProblem(x, y, EFFICIENCY, free))
    eff_err = {k: rel(eff.estimates[k], GREY[k]) for k in GREY}

    d = derive_cavity(BENCH_GEOMETRY)
    fixed = dict(g0=d.g0, kappa=KAPPA, kappa0=d.kappa0, gamma=GAMMA)
    xr = mhz(np.linspace(-60, 60, 601))
    yr = reflectance_model(xr, 4e5, **fixed) * (1 + 0.01 * rng.standard_normal(xr.size))
    refl = fit_reflectance_N(FitProblem(xr, yr, REFLECTANCE, {"n_atoms": (2e5, 0, 5e6)}, fixed))
    n_err = rel(refl.estimates["n_atoms"], 4e5)
    elapsed = time.perf_counter() - t0
    ok = max(eff_err.values()) <= 0.05 and n_err <= 0.05 and elapsed < 300
    acceptance_report(7, ok, "efficiency fit errors " + ", ".join(f"{k} {v:.2%}" for k, v in eff_err.items())
                      + f"; N = {refl.estimates['n_atoms']:.0f} ({n_err:.2%}); {elapsed:.0f} s")
    assert ok


def test_statistics_closure(acceptance_report):
    t0 = time.perf_counter()
    rec = simulate_detection_events(DlczModel(mu=0.02, chi_true=0.75, chain=CHAIN), 1_000_000, seed=11)
    chi = summarize(rec, CHAIN).chi_estimate
    chi_sigmas = abs(chi.value - 0.75) / chi.error

    thermal = simulate_detection_events(DlczModel(mu=0.005, chi_true=0.75, chain=CHAIN, write_efficiency=1.0),
                                        10_000_000, seed=12, background_trials=0)
    ww, _ = autocorrelations(thermal)
    ww_sigmas = abs(ww.value - 2.0) / ww.error

    thermal_bound = cauchy_schwarz(1.0, 2.0, 2.0).bound
    measured_bound = cauchy_schwarz(1.0, 1.52, 1.52).bound
    elapsed = time.perf_counter() - t0
    ok = (chi_sigmas <= 3 and ww_sigmas <= 3 and thermal_bound == 2.0
          and measured_bound == pytest.approx(1.52, abs=1e-12) and elapsed < 120)
    acceptance_report(8, ok, f"chi = {chi.value:.3f} +- {chi.error:.3f} ({chi_sigmas:.2f} sigma); "
                             f"g2_ww = {ww.value:.3f} +- {ww.error:.3f} ({ww_sigmas:.2f} sigma); "
                             f"bounds {thermal_bound!r}, {measured_bound:.12g}; {elapsed:.0f} s")
    assert ok


def test_determinism(acceptance_report, tmp_path):
    data = tmp_path / "refl.csv"
    d = derive_cavity(BENCH_GEOMETRY)
    xr = np.linspace(-60, 60, 121)
    yr = reflectance_model(mhz(xr), 4e5, d.g0, KAPPA, d.kappa0, GAMMA)
    yr = yr * (1 + 0.01 * np.random.default_rng(0).standard_normal(xr.size))
    data.write_text("x_MHz,y\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(xr, yr)))
    commands = {
        "derive": ["--json"],
        "reflectance": [],
        "retrieve": [],
        "scan": ["--set", "scan.dc_points=7", "--set", "scan.dr_points=31"],
        "odsweep": ["--set", "odsweep.dr_points=121"],
        "fit": ["--data", str(data), "--set", "fit.model=reflectance_spectrum"],
        "simulate-events": ["--set", "stats.trials=200000"],
        "stats": ["--events", str(tmp_path / "events.txt")],
    }
    assert main(["simulate-events", "--output-dir", str(tmp_path), "--set", "stats.trials=200000",
                 "--set", "output.cache_dir=none"]) == 0

    mismatched = []
    for command, extra in commands.items():
        runs = []
        for workers in ("1", "2", "1"):
            # the echoed config includes the output directory, so every run reuses one
            out = tmp_path / command
            if out.exists():
                for f in out.iterdir():
                    f.unlink()
            code = main([command, *extra, "--workers", workers, "--output-dir", str(out),
                         "--set", "output.cache_dir=none"])
            assert code == 0, command
            runs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        if not runs[0] or any(r != runs[0] for r in runs[1:]):
            mismatched.append(command)
    ok = not mismatched
    acceptance_report(9, ok, f"{len(commands)} subcommands rerun with 1, 2, 1 workers; "
                             + ("all outputs byte-identical" if ok else f"differences in {mismatched}"))
    assert ok
