"""Run configuration: INI-style sections with unit-suffixed keys.

Every key is declared in :data:`SCHEMA` together with its default and a
one-line description; unknown keys are rejected with file and line.  Values
equal to ``auto`` are resolved by the consumer (usually derived from another
section).
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass

from .units import RB87_D2_SIGMA_MINUS_DIPOLE, RB87_D2_WAVELENGTH

SCHEMA_VERSION = "1"


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, key=None):
        where = ":".join(str(p) for p in (path, line) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.path, self.line, self.key = path, line, key


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _str(s):
    return s.strip()


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# section -> key -> (parser, default, description)
SCHEMA = {
    "cavity": {
        "mirror_reflectivity": (_float, "0.86", "coupling mirror power reflectivity R"),
        "round_trip_loss": (_float, "0.11", "intracavity round-trip loss L"),
        "length_m": (_float, "0.88", "cavity round-trip length"),
        "waist_um": (_float, "69", "TEM00 mode waist"),
        "wavelength_nm": (_float, repr(RB87_D2_WAVELENGTH * 1e9), "transition wavelength (87Rb D2)"),
        "dipole_moment_Cm": (_float, repr(RB87_D2_SIGMA_MINUS_DIPOLE), "dipole element, sigma- |F=2,mF=2> -> |F'=2,mF'=1>"),
    },
    "atom": {
        "linewidth_MHz": (_float, "6.07", "natural linewidth Gamma/2pi; coherence decay gamma = Gamma/2"),
        "spin_decoherence_kHz": (_float, "6.7", "spin-wave decoherence gamma_s/2pi"),
        "spin_half_time_us": (_float, "15", "measured spin-wave half-time (reported, not used in dynamics)"),
    },
    "system": {
        "g_MHz": (_float, "15.8", "collective coupling g/2pi"),
        "n_atoms": (_float, "4e5", "atom number for the reflectance model"),
        "kappa_MHz": (_float, "7.25", "cavity field decay kappa/2pi"),
        "kappa0_MHz": (_float, "auto", "coupler decay kappa0/2pi (auto: derived from [cavity])"),
        "delta_c_MHz": (_float, "-1.5", "cavity detuning (omega_a - omega_c)/2pi"),
        "delta_r_MHz": (_float, "0", "read pulse detuning from |s> -> |e>, /2pi"),
    },
    "pulse": {
        "rabi_MHz": (_float, "4.8", "peak read Rabi frequency Omega0/2pi"),
        "fwhm_ns": (_float, "294.3525", "FWHM of the Rabi envelope (250 ns full 1/e intensity width)"),
        "center_us": (_float, "auto", "pulse centre (auto: 3 fwhm)"),
    },
    "integrator": {
        "tol": (_float, "1e-9", "target accuracy of the decay budget"),
        "horizon_us": (_float, "auto", "integration horizon (auto: centre + 6 fwhm + 10/kappa)"),
        "samples": (_int, "501", "waveform samples written by retrieve"),
    },
    "reflectance": {
        "probe_min_MHz": (_float, "-60", "probe grid start"),
        "probe_max_MHz": (_float, "60", "probe grid end"),
        "probe_points": (_int, "601", "probe grid size"),
    },
    "scan": {
        "dc_min_MHz": (_float, "-30", "cavity detuning grid start"),
        "dc_max_MHz": (_float, "30", "cavity detuning grid end"),
        "dc_points": (_int, "61", "cavity detuning grid size"),
        "dr_min_MHz": (_float, "-30", "read detuning grid start"),
        "dr_max_MHz": (_float, "30", "read detuning grid end"),
        "dr_points": (_int, "61", "read detuning grid size"),
    },
    "odsweep": {
        "od_values": (_floats, "2 4 8 16 32", "optical depths"),
        "od_ref": (_float, "2", "reference optical depth"),
        "g_ref_MHz": (_float, "15.8", "coupling at the reference optical depth"),
        "rabi_MHz": (_float, "1.0", "read Rabi frequency for the sweep (weak read)"),
        "dr_points": (_int, "241", "read detuning points per optical depth"),
    },
    "fit": {
        "model": (_str, "efficiency_spectrum", "efficiency_spectrum or reflectance_spectrum"),
        "data": (_str, "", "CSV with columns x_MHz,y[,weight]"),
        "weighting": (_str, "uniform", "uniform or poisson (ignored when the CSV has weights)"),
        "g_init_MHz": (_float, "13", "initial g/2pi"),
        "g_min_MHz": (_float, "1", "lower bound g/2pi"),
        "g_max_MHz": (_float, "40", "upper bound g/2pi"),
        "rabi_init_MHz": (_float, "4", "initial Omega0/2pi"),
        "rabi_min_MHz": (_float, "0.1", "lower bound Omega0/2pi"),
        "rabi_max_MHz": (_float, "20", "upper bound Omega0/2pi"),
        "delta_c_init_MHz": (_float, "0", "initial delta_c/2pi"),
        "delta_c_min_MHz": (_float, "-30", "lower bound delta_c/2pi"),
        "delta_c_max_MHz": (_float, "30", "upper bound delta_c/2pi"),
        "n_atoms_init": (_float, "3e5", "initial atom number"),
        "n_atoms_min": (_float, "0", "lower bound atom number"),
        "n_atoms_max": (_float, "5e6", "upper bound atom number"),
        "max_iter": (_int, "100", "optimizer iteration cap"),
    },
    "stats": {
        "mu": (_float, "0.02", "mean write-mode photon number"),
        "chi_true": (_float, "0.75", "injected conversion efficiency"),
        "eta_esc": (_float, "auto", "cavity escape efficiency (auto: derived from [cavity])"),
        "eta_t": (_float, "0.53", "transmission cavity -> detector"),
        "eta_d": (_float, "0.45", "detector efficiency"),
        "write_efficiency": (_float, "0.25", "write-photon detection efficiency"),
        "dark_count": (_float, "1e-6", "false click probability per detector per gate"),
        "trials": (_int, "1000000", "Monte Carlo trials"),
        "background_trials": (_int, "auto", "trials in the no-excitation background run (auto: trials)"),
        "seed": (_int, "20240601", "random seed"),
        "events": (_str, "", "event file read by stats (default: the simulate-events output)"),
    },
    "output": {
        "directory": (_str, "out", "all artifacts are written here"),
        "cache_dir": (_str, "auto", "sweep cache (auto: <directory>/.cache; 'none' disables)"),
        "json": (_bool, "true", "write JSON sidecars"),
    },
}


@dataclass
class RunConfig:
    """Parsed configuration; ``raw`` keeps the effective string values."""

    raw: dict
    path: str | None = None

    def get(self, section: str, key: str):
        parser = SCHEMA[section][key][0]
        text = self.raw[section][key]
        if text.strip().lower() == "auto":
            return None
        try:
            return parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {exc}", self.path,
                              self._lines.get((section, key)), key) from None

    _lines: dict = None

    def effective(self) -> dict:
        return {s: dict(sorted(v.items())) for s, v in sorted(self.raw.items())}


def defaults() -> dict:
    return {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}


def _key_lines(text: str) -> dict:
    lines = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1)), n)
    return lines


def load_config(path=None, overrides=None) -> RunConfig:
    """Read ``path`` (optional) on top of the defaults, then apply ``overrides``.

    ``overrides`` maps "section.key" to a string value.
    """
    raw = defaults()
    lines = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.ParsingError as exc:
            first = exc.errors[0] if exc.errors else (None, "")
            raise ConfigError(f"cannot parse line {first[1]!r}", path, first[0]) from None
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None
        lines = _key_lines(text)
        for section in cp.sections():
            if section not in SCHEMA:
                line = next((n for (s, _), n in lines.items() if s == section), None)
                raise ConfigError(f"unknown section [{section}]", path, line)
            for key, value in cp.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", path, lines.get((section, key)), key)
                raw[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override key {dotted!r}", key=dotted)
        raw[section][key] = str(value)
    cfg = RunConfig(raw, None if path is None else str(path))
    cfg._lines = lines
    for section, keys in SCHEMA.items():
        for key in keys:
            cfg.get(section, key)
    return cfg


def describe_defaults() -> str:
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        width = max(len(k) for k in keys)
        for key, (_, default, desc) in keys.items():
            out.append(f"{key:<{width}} = {default:<14} # {desc}")
        out.append("")
    return "\n".join(out)
