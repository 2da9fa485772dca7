"""Unit conventions and resonator constants.

All angular rates and detunings are carried internally in rad/us and all
times in us.  Ordinary frequencies quoted in MHz (the "2pi x MHz" notation)
enter through :func:`mhz` or :meth:`AngularFrequency.from_mhz`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants as _const

TWO_PI = 2.0 * math.pi
C_LIGHT = _const.c
HBAR = _const.hbar
EPSILON_0 = _const.epsilon_0

# 87Rb D2 reduced dipole element <J=1/2||er||J'=3/2> (Steck, Rubidium 87 D Line Data).
RB87_D2_REDUCED_DIPOLE = 3.584e-29
# sigma- |F=2, mF=+2> -> |F'=2, mF'=+1> carries 1/12 of the reduced strength.
RB87_D2_SIGMA_MINUS_DIPOLE = RB87_D2_REDUCED_DIPOLE / math.sqrt(12.0)
RB87_D2_WAVELENGTH = 780.241209686e-9


def mhz(value: float) -> float:
    """Convert an ordinary frequency in MHz to rad/us."""
    return TWO_PI * value


def khz(value: float) -> float:
    """Convert an ordinary frequency in kHz to rad/us."""
    return TWO_PI * value * 1e-3


def to_mhz(value: float) -> float:
    """Convert rad/us back to ordinary MHz."""
    return value / TWO_PI


@dataclass(frozen=True, order=True)
class AngularFrequency:
    """Angular frequency stored in rad/us."""

    value: float

    @classmethod
    def from_mhz(cls, nu: float) -> "AngularFrequency":
        return cls(mhz(nu))

    @classmethod
    def from_khz(cls, nu: float) -> "AngularFrequency":
        return cls(khz(nu))

    @classmethod
    def from_rad_per_s(cls, omega: float) -> "AngularFrequency":
        return cls(omega * 1e-6)

    @property
    def mhz(self) -> float:
        return to_mhz(self.value)

    @property
    def rad_per_s(self) -> float:
        return self.value * 1e6

    def __float__(self) -> float:
        return self.value

    def __mul__(self, other: float) -> "AngularFrequency":
        return AngularFrequency(self.value * other)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CavityGeometry:
    """Raw resonator description.

    Attributes:
        mirror_reflectivity: power reflectivity R of the coupling mirror.
        round_trip_loss: intracavity round-trip loss L (excluding the coupler).
        length: round-trip length in m.
        waist: TEM00 waist in m.
        wavelength: optical wavelength in m.
        dipole_moment: transition dipole element in C m.
    """

    mirror_reflectivity: float = 0.86
    round_trip_loss: float = 0.11
    length: float = 0.88
    waist: float = 69e-6
    wavelength: float = RB87_D2_WAVELENGTH
    dipole_moment: float = RB87_D2_SIGMA_MINUS_DIPOLE

    def __post_init__(self):
        R, L = self.mirror_reflectivity, self.round_trip_loss
        if not 0.0 < R < 1.0:
            raise ValueError(f"mirror reflectivity must lie in (0, 1), got {R}")
        if not 0.0 <= L < 1.0:
            raise ValueError(f"round-trip loss must lie in [0, 1), got {L}")
        for name in ("length", "waist", "wavelength"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class CavityDerived:
    """Resonator constants derived from a :class:`CavityGeometry`.

    ``fsr`` is an ordinary frequency in Hz; the decay rates and ``g0`` are
    angular rates in rad/us.
    """

    finesse: float
    fsr: float
    kappa: float
    kappa0: float
    escape_efficiency: float
    g0: float

    @property
    def kappa_ratio(self) -> float:
        return self.kappa / self.kappa0


def derive_cavity(geom: CavityGeometry) -> CavityDerived:
    R, L = geom.mirror_reflectivity, geom.round_trip_loss
    round_trip = R * (1.0 - L)
    if not 0.0 < round_trip < 1.0:
        raise ValueError(f"R(1-L) must lie in (0, 1), got {round_trip}")
    finesse = math.pi * round_trip**0.25 / (1.0 - math.sqrt(round_trip))
    fsr = C_LIGHT / geom.length
    kappa = math.pi * fsr / finesse * 1e-6
    # coupler amplitude loss per round trip over the round-trip time
    kappa0 = (1.0 - R) * fsr / 2.0 * 1e-6
    escape = (1.0 - R) / (1.0 - R + L)
    return CavityDerived(
        finesse=finesse,
        fsr=fsr,
        kappa=kappa,
        kappa0=kappa0,
        escape_efficiency=escape,
        g0=coupling_g0(geom).value,
    )


def coupling_g0(geom: CavityGeometry) -> AngularFrequency:
    """Single-atom vacuum coupling for the cavity mode."""
    d = geom.dipole_moment
    if not d > 0.0:
        raise ValueError(f"dipole moment must be positive, got {d}")
    g0 = d * math.sqrt(2.0 * C_LIGHT / (HBAR * EPSILON_0 * geom.wavelength * geom.length * geom.waist**2))
    return AngularFrequency.from_rad_per_s(g0)


def collective_coupling(g0: float, n_atoms: float) -> float:
    """Collective coupling g = g0 sqrt(N), in the units of ``g0``."""
    if n_atoms < 0:
        raise ValueError(f"atom number must be non-negative, got {n_atoms}")
    return g0 * math.sqrt(n_atoms)
