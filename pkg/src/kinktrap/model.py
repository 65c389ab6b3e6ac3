"""Species, trap and laser parameters, and the dimensionless unit system.

All internal computation uses scaled units in which the ion mass, the axial
secular frequency and the Coulomb constant ``q**2 / (4 pi eps0)`` are one.
The length unit is therefore ``l**3 = q**2 / (4 pi eps0 m wx**2)``, time is
measured in ``1 / wx`` and energy in ``m wx**2 l**2``.  SI values appear only
at the boundaries (config files, exported tables, images).
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from functools import singledispatch

import numpy as np
import scipy.constants as const
from scipy.integrate import solve_ivp
from scipy.optimize import root

from .errors import ConfigError, OrderingViolation, StabilityViolation

TWO_PI = 2.0 * math.pi

#: Largest radial Mathieu q accepted for a FullRF trap.
Q_LIMIT = 0.9


@dataclass(frozen=True)
class SpeciesConfig:
    """Ion species. Defaults describe 24Mg+ on the S1/2-P3/2 line."""

    mass: float = 24.0 * const.atomic_mass
    charge: float = const.e
    transition_wavelength: float = 280e-9
    natural_linewidth: float = TWO_PI * 42e6

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        if self.charge == 0:
            raise ConfigError("charge must be non-zero")
        if not self.natural_linewidth > 0:
            raise ConfigError("natural_linewidth must be positive")
        if not self.transition_wavelength > 0:
            raise ConfigError("transition_wavelength must be positive")

    @property
    def coulomb_constant(self) -> float:
        """``q**2 / (4 pi eps0)`` in J m."""
        return self.charge**2 / (4.0 * math.pi * const.epsilon_0)


MG24 = SpeciesConfig()


class TrapModel(enum.Enum):
    FULL_RF = "fullrf"
    HARMONIC = "harmonic"


@dataclass(frozen=True)
class TrapConfig:
    """Linear Paul trap described by its drive and secular frequencies (rad/s).

    ``mathieu_a`` and ``mathieu_q`` are only populated for FullRF traps; they
    are derived by :func:`make_trap` so that the single-ion secular
    frequencies reproduce the requested ones.
    """

    rf_frequency: float
    secular_axial: float
    secular_radial_y: float
    secular_radial_z: float
    model: TrapModel = TrapModel.HARMONIC
    species: SpeciesConfig = MG24
    mathieu_a: tuple = (0.0, 0.0, 0.0)
    mathieu_q: float = 0.0

    def __post_init__(self):
        freqs = (self.rf_frequency, self.secular_axial, self.secular_radial_y, self.secular_radial_z)
        if not all(f > 0 and math.isfinite(f) for f in freqs):
            raise ConfigError(f"all frequencies must be positive and finite, got {freqs}")
        if self.secular_axial >= min(self.secular_radial_y, self.secular_radial_z):
            raise OrderingViolation(
                "axial frequency must lie below both radial frequencies "
                f"(wx={self.secular_axial:.6g}, wy={self.secular_radial_y:.6g}, wz={self.secular_radial_z:.6g})"
            )
        if self.secular_radial_y > self.secular_radial_z * (1 + 1e-12):
            raise OrderingViolation("the in-plane radial frequency wy must not exceed wz")

    @property
    def ratio(self) -> float:
        """Radial anisotropy ``wz / wy``."""
        return self.secular_radial_z / self.secular_radial_y

    @property
    def q_radial(self) -> float:
        """Lowest-order Mathieu estimate ``2 sqrt(2) max(wy, wz) / Omega``."""
        return 2.0 * math.sqrt(2.0) * max(self.secular_radial_y, self.secular_radial_z) / self.rf_frequency

    @property
    def rf_period(self) -> float:
        return TWO_PI / self.rf_frequency

    def with_ratio(self, ratio: float) -> "TrapConfig":
        """Same trap with ``wz = ratio * wy``."""
        return make_trap(
            self.rf_frequency,
            self.secular_axial,
            self.secular_radial_y,
            ratio * self.secular_radial_y,
            self.model,
            species=self.species,
        )

    def harmonic(self) -> "TrapConfig":
        return replace(self, model=TrapModel.HARMONIC, mathieu_a=(0.0, 0.0, 0.0), mathieu_q=0.0)

    def scaled(self) -> "ScaledTrap":
        return ScaledTrap.from_trap(self)


@dataclass(frozen=True)
class ScaledTrap:
    """Trap coefficients in scaled units, as consumed by the force kernels.

    The confining acceleration along axis ``i`` is
    ``-(static[i] - rf[i] * cos(omega_rf * t)) * r_i``.
    """

    static: np.ndarray
    rf: np.ndarray
    omega_rf: float
    full_rf: bool
    source: TrapConfig = field(repr=False, compare=False, default=None)

    @classmethod
    def from_trap(cls, trap: TrapConfig) -> "ScaledTrap":
        wx = trap.secular_axial
        omega = trap.rf_frequency / wx
        if trap.model is TrapModel.FULL_RF:
            pref = omega**2 / 4.0
            a = np.asarray(trap.mathieu_a, dtype=float)
            q = trap.mathieu_q
            static = pref * a
            rf = pref * 2.0 * np.array([0.0, q, -q])
            return cls(static, rf, omega, True, trap)
        w2 = np.array([1.0, (trap.secular_radial_y / wx) ** 2, (trap.secular_radial_z / wx) ** 2])
        return cls(w2, np.zeros(3), omega, False, trap)

    @property
    def secular_squared(self) -> np.ndarray:
        """Squared secular frequencies in units of ``wx**2``."""
        t = self.source
        wx = t.secular_axial
        return np.array([1.0, (t.secular_radial_y / wx) ** 2, (t.secular_radial_z / wx) ** 2])


def mathieu_beta(a: float, q: float) -> float:
    """Characteristic exponent of ``u'' + (a - 2 q cos 2 tau) u = 0``.

    Computed from the trace of the monodromy matrix over one period, so it is
    exact up to the ODE tolerance rather than a truncated series. Raises
    :class:`StabilityViolation` outside the first stability region.
    """
    if q == 0.0:
        if a <= 0:
            raise StabilityViolation(f"unconfined static axis (a={a})")
        return math.sqrt(a)

    def rhs(tau, y):
        k = a - 2.0 * q * math.cos(2.0 * tau)
        return [y[1], -k * y[0], y[3], -k * y[2]]

    sol = solve_ivp(rhs, (0.0, math.pi), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=1e-13, atol=1e-15)
    half_trace = 0.5 * (sol.y[0, -1] + sol.y[3, -1])
    if abs(half_trace) >= 1.0:
        raise StabilityViolation(f"Mathieu parameters (a={a:.6g}, q={q:.6g}) are outside the stable region")
    return math.acos(half_trace) / math.pi


@functools.lru_cache(maxsize=256)
def _calibrate_rf(omega_rf: float, wx: float, wy: float, wz: float):
    """Find (a_x, a_y, a_z, q) reproducing the secular frequencies exactly.

    The static field obeys Laplace (a_x + a_y + a_z = 0); the RF quadrupole
    acts in the radial plane with q_y = -q_z = q.
    """
    ax = 4.0 * wx**2 / omega_rf**2
    target = np.array([2.0 * wy / omega_rf, 2.0 * wz / omega_rf])
    q0 = 2.0 * math.sqrt(wx**2 + wy**2 + wz**2) / omega_rf
    ay0 = target[0] ** 2 - q0**2 / 2.0

    def residual(v):
        ay, q = v
        az = -ax - ay
        return [mathieu_beta(ay, q) / target[0] - 1.0, mathieu_beta(az, q) / target[1] - 1.0]

    sol = root(residual, [ay0, q0], method="hybr", options={"xtol": 1e-14})
    ay, q = sol.x
    az = -ax - ay
    err = np.abs(residual(sol.x))
    if not sol.success and err.max() > 1e-9:
        raise StabilityViolation(f"could not calibrate RF trap: {sol.message}")
    return (ax, float(ay), float(az)), float(q)


def make_trap(
    rf_frequency: float,
    secular_axial: float,
    secular_radial_y: float,
    secular_radial_z: float,
    model: TrapModel | str = TrapModel.HARMONIC,
    *,
    species: SpeciesConfig = MG24,
) -> TrapConfig:
    """Build and validate a trap; angular frequencies in rad/s.

    For ``FULL_RF`` the Mathieu parameters are calibrated numerically so that
    single-ion secular frequencies match the requested ones.
    """
    model = TrapModel(model) if not isinstance(model, TrapModel) else model
    trap = TrapConfig(rf_frequency, secular_axial, secular_radial_y, secular_radial_z, model, species)
    if model is TrapModel.FULL_RF:
        if trap.q_radial >= Q_LIMIT:
            raise StabilityViolation(f"q_radial = {trap.q_radial:.3f} >= {Q_LIMIT}")
        a, q = _calibrate_rf(rf_frequency, secular_axial, secular_radial_y, secular_radial_z)
        trap = replace(trap, mathieu_a=a, mathieu_q=q)
    return trap


def default_trap(model: TrapModel | str = TrapModel.HARMONIC, ratio: float = 1.05) -> TrapConfig:
    """Working point used throughout: 56 kHz axial, 620 kHz in-plane radial."""
    wy = TWO_PI * 620e3
    return make_trap(TWO_PI * 6.22e6, TWO_PI * 56e3, wy, ratio * wy, model)


@dataclass(frozen=True)
class LaserConfig:
    """Cooling beam. ``detuning`` in rad/s (negative = red), ``wavenumber`` in 1/m."""

    detuning: float
    saturation: float
    beam_direction: tuple
    wavenumber: float

    def __post_init__(self):
        if not self.saturation >= 0:
            raise ConfigError("saturation must be non-negative")
        norm = math.sqrt(sum(c * c for c in self.beam_direction))
        if len(self.beam_direction) != 3 or abs(norm - 1.0) > 1e-9:
            raise ConfigError(f"beam_direction must be a unit 3-vector, got {self.beam_direction}")
        if not self.wavenumber > 0:
            raise ConfigError("wavenumber must be positive")


def default_laser(species: SpeciesConfig = MG24, *, tilt_deg: float = 5.0) -> LaserConfig:
    """Beam tilted in the xy-plane, detuned by one linewidth, s = 0.2."""
    t = math.radians(tilt_deg)
    return LaserConfig(
        detuning=-species.natural_linewidth,
        saturation=0.2,
        beam_direction=(math.cos(t), math.sin(t), 0.0),
        wavenumber=TWO_PI / species.transition_wavelength,
    )


def doppler_limit(species: SpeciesConfig) -> float:
    """Doppler temperature ``hbar Gamma / (2 kB)`` in kelvin."""
    return const.hbar * species.natural_linewidth / (2.0 * const.k)


@dataclass(frozen=True)
class UnitScale:
    length: float
    time: float
    energy: float
    temperature_reference: float
    species: SpeciesConfig = MG24

    def __post_init__(self):
        if not all(v > 0 for v in (self.length, self.time, self.energy, self.temperature_reference)):
            raise ConfigError("unit scales must be strictly positive")

    @classmethod
    def from_trap(cls, trap: TrapConfig) -> "UnitScale":
        sp = trap.species
        wx = trap.secular_axial
        length = (sp.coulomb_constant / (sp.mass * wx**2)) ** (1.0 / 3.0)
        return cls(
            length=length,
            time=1.0 / wx,
            energy=sp.mass * wx**2 * length**2,
            temperature_reference=doppler_limit(sp),
            species=sp,
        )

    @property
    def velocity(self) -> float:
        return self.length / self.time

    @property
    def momentum(self) -> float:
        return self.species.mass * self.velocity

    @property
    def kT_doppler(self) -> float:
        """``kB T_D`` in scaled energy units."""
        return const.k * self.temperature_reference / self.energy

    def thermal_energy(self, temperature: float) -> float:
        """``kB T`` in scaled energy units for ``temperature`` in kelvin."""
        return const.k * temperature / self.energy


@singledispatch
def to_dimensionless(obj, scale: UnitScale):
    """Convert an SI object to its scaled counterpart."""
    raise TypeError(f"cannot scale {type(obj).__name__}")


@singledispatch
def from_dimensionless(obj, scale: UnitScale):
    """Inverse of :func:`to_dimensionless`."""
    raise TypeError(f"cannot unscale {type(obj).__name__}")


@to_dimensionless.register
def _(trap: TrapConfig, scale: UnitScale) -> ScaledTrap:
    return ScaledTrap.from_trap(trap)


@from_dimensionless.register
def _(trap: ScaledTrap, scale: UnitScale) -> TrapConfig:
    if trap.source is not None:
        return trap.source
    w = np.sqrt(trap.static) / scale.time
    return make_trap(trap.omega_rf / scale.time, w[0], w[1], w[2], TrapModel.HARMONIC, species=scale.species)
