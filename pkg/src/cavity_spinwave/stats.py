"""Detection statistics for heralded spin-wave read-out.

Estimator chain from raw click counts to the intrinsic conversion efficiency,
the Cauchy-Schwarz test for non-classical write/read correlations, and a
seeded Monte Carlo click generator used to close the loop on the estimators.

Each field (write-out, read-out) is detected behind a 50:50 splitter on two
threshold detectors, so a trial records 0, 1 or 2 clicks per field.  Error
bars are first-order propagations of Poissonian counting errors.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_SEED = 20240601
CHUNK = 1 << 20
BACKGROUND_STREAM = 1 << 30


class UndefinedCorrelator(ValueError):
    """A normalized correlator has a zero denominator."""


class NoiseDominated(ValueError):
    """Background matches or exceeds the herald rate; the correction is undefined."""


@dataclass(frozen=True)
class Measurement:
    value: float
    error: float


@dataclass(frozen=True)
class EfficiencyChain:
    eta_esc: float = 0.56
    eta_t: float = 0.53
    eta_d: float = 0.45

    def __post_init__(self):
        for name in ("eta_esc", "eta_t", "eta_d"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")

    @property
    def eta_tot(self) -> float:
        return self.eta_esc * self.eta_t * self.eta_d


@dataclass(frozen=True)
class DetectionRecord:
    """Aggregate click counts.

    ``write_any``/``read_any`` count trials with at least one click on the
    field, ``coincidences`` trials with clicks on both fields, ``*_pairs``
    trials where both detectors of a field clicked and ``*_clicks`` the total
    detector clicks.  ``background_*`` come from a run with no write
    excitation and define the read background probability p_b.
    """

    trials: int
    write_any: int
    read_any: int
    coincidences: int
    write_pairs: int = 0
    read_pairs: int = 0
    write_clicks: int = 0
    read_clicks: int = 0
    background_trials: int = 0
    background_read_any: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("record needs at least one trial")
        counts = (self.write_any, self.read_any, self.coincidences, self.write_pairs, self.read_pairs)
        if min(counts) < 0 or max(counts) > self.trials:
            raise ValueError("counts must lie between 0 and the number of trials")
        if self.coincidences > min(self.write_any, self.read_any):
            raise ValueError("coincidences cannot exceed either singles count")
        if not 0 <= self.background_read_any <= self.background_trials:
            raise ValueError("background clicks must lie between 0 and the background trials")

    @classmethod
    def from_clicks(cls, write_clicks, read_clicks, background_read_clicks=None) -> "DetectionRecord":
        w = np.asarray(write_clicks)
        r = np.asarray(read_clicks)
        bg = np.zeros(0, dtype=int) if background_read_clicks is None else np.asarray(background_read_clicks)
        return cls(
            trials=int(w.size),
            write_any=int(np.count_nonzero(w)),
            read_any=int(np.count_nonzero(r)),
            coincidences=int(np.count_nonzero((w > 0) & (r > 0))),
            write_pairs=int(np.count_nonzero(w >= 2)),
            read_pairs=int(np.count_nonzero(r >= 2)),
            write_clicks=int(w.sum()),
            read_clicks=int(r.sum()),
            background_trials=int(bg.size),
            background_read_any=int(np.count_nonzero(bg)),
        )

    def merge(self, other: "DetectionRecord") -> "DetectionRecord":
        a, b = asdict(self), asdict(other)
        return DetectionRecord(**{k: a[k] + b[k] for k in a})

    @property
    def p_w(self) -> float:
        return self.write_any / self.trials

    @property
    def p_r(self) -> float:
        return self.read_any / self.trials

    @property
    def p_wr(self) -> float:
        return self.coincidences / self.trials

    @property
    def p_r_given_w(self) -> float:
        if self.write_any == 0:
            raise UndefinedCorrelator("no heralding clicks")
        return self.coincidences / self.write_any

    @property
    def p_b(self) -> float:
        return self.background_read_any / self.background_trials if self.background_trials else 0.0


# -- estimators -------------------------------------------------------------

def _ratio_error(value: float, *counts) -> float:
    return value * math.sqrt(sum(1.0 / max(c, 1) for c in counts))


def cross_correlation(record: DetectionRecord) -> Measurement:
    """g2_wr = p_wr / (p_w p_r)."""
    if record.write_any == 0 or record.read_any == 0:
        raise UndefinedCorrelator("g2_wr undefined: no clicks on the write or read detector")
    value = record.coincidences * record.trials / (record.write_any * record.read_any)
    if record.coincidences == 0:
        return Measurement(0.0, record.trials / (record.write_any * record.read_any))
    return Measurement(value, _ratio_error(value, record.coincidences, record.write_any, record.read_any))


def _autocorrelation(pairs: int, clicks: int, trials: int, field: str) -> Measurement:
    if clicks == 0:
        raise UndefinedCorrelator(f"g2_{field} undefined: no {field} detector clicks")
    single = clicks / (2.0 * trials)
    value = pairs / trials / single**2
    if pairs == 0:
        return Measurement(0.0, 1.0 / trials / single**2)
    return Measurement(value, value * math.sqrt(1.0 / pairs + 4.0 / clicks))


def autocorrelations(record: DetectionRecord) -> tuple[Measurement, Measurement]:
    """Unheralded (g2_ww, g2_rr) from the split-detector pair counts."""
    return (_autocorrelation(record.write_pairs, record.write_clicks, record.trials, "ww"),
            _autocorrelation(record.read_pairs, record.read_clicks, record.trials, "rr"))


def corrected_retrieval(p_r_given_w: float, p_b: float, p_w: float, chain: EfficiencyChain) -> float:
    """p^c_r|w = p_r|w / [eta_tot (1 - p_b / p_w)]."""
    if p_b < 0:
        raise ValueError("background probability must be non-negative")
    if p_b >= p_w:
        raise NoiseDominated(f"background p_b={p_b:g} >= herald probability p_w={p_w:g}")
    return p_r_given_w / (chain.eta_tot * (1.0 - p_b / p_w))


@dataclass(frozen=True)
class ChiEstimate:
    value: float
    error: float
    in_model: bool
    note: str = ""


def intrinsic_efficiency(p_corrected: float, g2_wr: float, p_error: float = 0.0,
                         g2_error: float = 0.0) -> ChiEstimate:
    """chi = p^c (1 - 1/g2_wr) with first-order error propagation."""
    if g2_wr <= 0:
        raise ValueError("g2_wr must be positive")
    value = p_corrected * (1.0 - 1.0 / g2_wr)
    error = math.hypot((1.0 - 1.0 / g2_wr) * p_error, p_corrected * g2_error / g2_wr**2)
    if g2_wr <= 1.0:
        return ChiEstimate(0.0, error, False, f"accidental-dominated (g2_wr={g2_wr:.4g} <= 1), raw value {value:.4g}")
    if value > 1.0:
        return ChiEstimate(value, error, False, "estimate above 1")
    return ChiEstimate(value, error, True)


@dataclass(frozen=True)
class CauchySchwarz:
    ratio: float
    bound: float
    bound_error: float
    significance: float
    nonclassical: bool


def cauchy_schwarz(g2_wr, g2_ww, g2_rr) -> CauchySchwarz:
    """Compare g2_wr with the classical bound sqrt(g2_ww g2_rr).

    Arguments are floats or :class:`Measurement`.  Non-classical means g2_wr
    exceeds the bound by at least one combined standard deviation; with no
    errors supplied any strict excess counts.
    """
    wr, ww, rr = (m if isinstance(m, Measurement) else Measurement(float(m), 0.0) for m in (g2_wr, g2_ww, g2_rr))
    if ww.value <= 0 or rr.value <= 0:
        raise UndefinedCorrelator("autocorrelations must be positive")
    bound = math.sqrt(ww.value * rr.value)
    bound_err = 0.5 * bound * math.hypot(ww.error / ww.value, rr.error / rr.value)
    sigma = math.hypot(wr.error, bound_err)
    excess = wr.value - bound
    if sigma > 0:
        significance = excess / sigma
    else:
        significance = math.inf if excess > 0 else (-math.inf if excess < 0 else 0.0)
    return CauchySchwarz(wr.value**2 / (ww.value * rr.value), bound, bound_err, significance,
                         excess > 0 and significance >= 1.0)


@dataclass(frozen=True)
class StatsSummary:
    p_w: float
    p_r: float
    p_wr: float
    p_r_given_w: Measurement
    p_b: float
    g2_wr: Measurement
    g2_ww: Measurement | None
    g2_rr: Measurement | None
    p_rw_corrected: Measurement
    chi_estimate: ChiEstimate
    cs: CauchySchwarz | None

    def as_dict(self) -> dict:
        return asdict(self)


def summarize(record: DetectionRecord, chain: EfficiencyChain) -> StatsSummary:
    g2 = cross_correlation(record)
    prw = record.p_r_given_w
    prw_err = math.sqrt(prw * (1.0 - prw) / record.write_any) if record.write_any else 0.0
    pc = corrected_retrieval(prw, record.p_b, record.p_w, chain)
    pc_err = pc * prw_err / prw if prw > 0 else prw_err / chain.eta_tot
    chi = intrinsic_efficiency(pc, g2.value, pc_err, g2.error)
    try:
        ww, rr = autocorrelations(record)
        cs = cauchy_schwarz(g2, ww, rr) if ww.value > 0 and rr.value > 0 else None
    except UndefinedCorrelator:
        ww = rr = cs = None
    return StatsSummary(record.p_w, record.p_r, record.p_wr, Measurement(prw, prw_err), record.p_b, g2, ww, rr,
                        Measurement(pc, pc_err), chi, cs)


# -- Monte Carlo ------------------------------------------------------------

@dataclass(frozen=True)
class DlczModel:
    """Click-generation model.

    Write-mode photon number is thermal with mean ``mu``; each photon heralds
    one stored excitation.  Write photons reach the detectors with
    ``write_efficiency``; each excitation is read out into the cavity with
    ``chi_true`` and detected through ``chain.eta_tot``.  ``dark_count`` is the
    per-detector per-gate false click probability.
    """

    mu: float
    chi_true: float
    chain: EfficiencyChain = EfficiencyChain()
    write_efficiency: float = 0.25
    dark_count: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        for name in ("chi_true", "write_efficiency", "dark_count"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _split_clicks(rng, photons, dark, size):
    first = rng.binomial(photons, 0.5)
    d1 = (first > 0) | (rng.random(size) < dark)
    d2 = (photons - first > 0) | (rng.random(size) < dark)
    return d1.astype(np.int8) + d2.astype(np.int8)


def _simulate_chunk(args):
    model, size, seed, index = args
    rng = _stream(seed, index)
    n = rng.geometric(1.0 / (1.0 + model.mu), size) - 1
    written = rng.binomial(n, model.write_efficiency)
    read = rng.binomial(n, model.chi_true * model.chain.eta_tot)
    w = _split_clicks(rng, written, model.dark_count, size)
    r = _split_clicks(rng, read, model.dark_count, size)
    return w, r


def _chunks(trials, offset):
    out = []
    start = 0
    i = 0
    while start < trials:
        size = min(CHUNK, trials - start)
        out.append((size, offset + i))
        start += size
        i += 1
    return out


def simulate_clicks(model: DlczModel, trials: int, seed: int = DEFAULT_SEED, workers: int = 1,
                    stream_offset: int = 0):
    """Per-trial (write_clicks, read_clicks) arrays, deterministic in (seed, trials)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(model, size, seed, idx) for size, idx in _chunks(trials, stream_offset)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_background(model: DlczModel, trials: int, seed: int = DEFAULT_SEED, workers: int = 1):
    """Read clicks from a run without write excitation (mu = 0)."""
    dark = DlczModel(mu=0.0, chi_true=model.chi_true, chain=model.chain,
                     write_efficiency=model.write_efficiency, dark_count=model.dark_count)
    return simulate_clicks(dark, trials, seed, workers, stream_offset=BACKGROUND_STREAM)[1]


def simulate_detection_events(model: DlczModel, trials: int, seed: int = DEFAULT_SEED, workers: int = 1,
                              background_trials: int | None = None) -> DetectionRecord:
    w, r = simulate_clicks(model, trials, seed, workers)
    bg_trials = trials if background_trials is None else background_trials
    bg = simulate_background(model, bg_trials, seed, workers) if bg_trials > 0 else None
    return DetectionRecord.from_clicks(w, r, bg)
