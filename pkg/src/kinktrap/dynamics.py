"""Forces, laser cooling and time integration of N-ion systems (scaled units)."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.constants as const

from . import _kernels as K
from .errors import CoincidentIons, ConfigError, NonFinite, TimestepTooLarge
from .model import LaserConfig, ScaledTrap, TrapConfig, UnitScale, from_dimensionless, to_dimensionless

#: Pairs closer than this (scaled) are treated as coincident.
COINCIDENCE = 1e-9


@dataclass
class SystemState:
    positions: np.ndarray
    velocities: np.ndarray | None = None
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        if self.velocities is None:
            self.velocities = np.zeros_like(self.positions)
        self.velocities = np.array(self.velocities, dtype=float).reshape(self.positions.shape)
        if self.positions.shape[0] < 1:
            raise ConfigError("a state needs at least one ion")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "SystemState":
        return SystemState(self.positions.copy(), self.velocities.copy(), self.time)

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.velocities**2))


@to_dimensionless.register
def _(state: SystemState, scale: UnitScale) -> SystemState:
    return SystemState(state.positions / scale.length, state.velocities / scale.velocity, state.time / scale.time)


@from_dimensionless.register
def _(state: SystemState, scale: UnitScale) -> SystemState:
    return SystemState(state.positions * scale.length, state.velocities * scale.velocity, state.time * scale.time)


@dataclass
class Trajectory:
    """Snapshots at uniform stride. Arrays have shape (frames, N, 3)."""

    positions: np.ndarray
    velocities: np.ndarray
    times: np.ndarray
    dt: float
    stride: int
    seed: int = 0

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, i) -> SystemState:
        return SystemState(self.positions[i].copy(), self.velocities[i].copy(), float(self.times[i]))

    @property
    def final(self) -> SystemState:
        return self[-1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def concatenate(self, other: "Trajectory") -> "Trajectory":
        """Append ``other``, dropping its first frame when it repeats our last one."""
        skip = 1 if len(other) and len(self) and other.times[0] == self.times[-1] else 0
        return Trajectory(
            np.concatenate([self.positions, other.positions[skip:]]),
            np.concatenate([self.velocities, other.velocities[skip:]]),
            np.concatenate([self.times, other.times[skip:]]),
            self.dt,
            self.stride,
            self.seed,
        )


class CoolingMode(enum.Enum):
    NONE = "none"
    VISCOUS = "viscous"
    DOPPLER = "doppler"


@dataclass(frozen=True)
class ScaledLaser:
    kvec: np.ndarray
    hbar_k: float
    gamma: float
    detuning: float
    saturation: float

    @classmethod
    def from_laser(cls, laser: LaserConfig, scale: UnitScale) -> "ScaledLaser":
        k = laser.wavenumber * scale.length
        return cls(
            kvec=k * np.asarray(laser.beam_direction, dtype=float),
            hbar_k=const.hbar * laser.wavenumber / scale.momentum,
            gamma=scale.species.natural_linewidth * scale.time,
            detuning=laser.detuning * scale.time,
            saturation=laser.saturation,
        )

    @property
    def direction(self) -> np.ndarray:
        return self.kvec / np.linalg.norm(self.kvec)


@dataclass(frozen=True)
class CoolingParams:
    """Cooling applied during integration.

    ``gamma`` is a velocity friction rate and ``kT`` the temperature of the
    matching Langevin bath, both scaled. ``laser`` switches on the Doppler
    scattering force, with stochastic photon recoil if ``recoil`` is set.
    """

    gamma: float = 0.0
    kT: float = 0.0
    laser: ScaledLaser | None = None
    recoil: bool = False

    def __post_init__(self):
        if not self.gamma >= 0 or not self.kT >= 0:
            raise ConfigError("friction and bath temperature must be non-negative")
        if self.laser is not None and self.laser.saturation < 0:
            raise ConfigError("saturation must be non-negative")

    @classmethod
    def viscous(cls, gamma: float, kT: float = 0.0) -> "CoolingParams":
        return cls(gamma=gamma, kT=kT)

    @classmethod
    def doppler(cls, laser: LaserConfig, scale: UnitScale, recoil: bool = True) -> "CoolingParams":
        return cls(laser=ScaledLaser.from_laser(laser, scale), recoil=recoil)

    @property
    def mode(self) -> CoolingMode:
        if self.laser is not None:
            return CoolingMode.DOPPLER
        return CoolingMode.VISCOUS if self.gamma > 0 else CoolingMode.NONE


NO_COOLING = CoolingParams()


def _as_scaled(trap) -> ScaledTrap:
    return trap.scaled() if isinstance(trap, TrapConfig) else trap


def _check_separation(pos):
    d = K.min_pair_distance(pos) if pos.shape[0] > 1 else np.inf
    if d < COINCIDENCE:
        raise CoincidentIons(f"minimum pair distance {d:.3e} is below {COINCIDENCE:g}")


def total_force(state: SystemState, trap, t: float | None = None) -> np.ndarray:
    """Trap plus Coulomb force on every ion (unit mass, so also the acceleration)."""
    st = _as_scaled(trap)
    _check_separation(state.positions)
    out = np.empty_like(state.positions)
    K.total_accel(state.positions, state.time if t is None else t, st.static, st.rf, st.omega_rf, out)
    return out


def coulomb_force(positions: np.ndarray) -> np.ndarray:
    pos = np.ascontiguousarray(positions, dtype=float)
    out = np.zeros_like(pos)
    K.coulomb_accel(pos, out)
    return out


def scattering_rate(velocities: np.ndarray, laser: ScaledLaser) -> np.ndarray:
    """Photon scattering rate per ion (scaled 1/time)."""
    x = 2.0 * (laser.detuning - np.asarray(velocities) @ laser.kvec) / laser.gamma
    return 0.5 * laser.gamma * laser.saturation / (1.0 + laser.saturation + x**2)


def cooling_force(velocities: np.ndarray, params: CoolingParams, rng: np.random.Generator | None = None,
                  dt: float | None = None) -> np.ndarray:
    """Friction and mean scattering force; adds recoil kicks (as impulse / dt) when
    ``params.recoil`` is set and both ``rng`` and ``dt`` are given."""
    v = np.asarray(velocities, dtype=float)
    f = -params.gamma * v
    if params.laser is not None:
        rate = scattering_rate(v, params.laser)
        f = f + params.laser.hbar_k * rate[:, None] * params.laser.direction[None, :]
        if params.recoil and rng is not None and dt is not None:
            counts = rng.poisson(rate * dt)
            kicks = np.zeros_like(v)
            for i, m in enumerate(counts):
                if m:
                    u = rng.normal(size=(m, 3))
                    u /= np.linalg.norm(u, axis=1, keepdims=True)
                    kicks[i] = u.sum(axis=0) + (m - rate[i] * dt) * params.laser.direction
            f = f + params.laser.hbar_k * kicks / dt
    return f


def doppler_damping(laser: ScaledLaser) -> float:
    """Friction rate of the scattering force linearized at v = 0 along the beam."""
    s, g, d = laser.saturation, laser.gamma, laser.detuning
    k = np.linalg.norm(laser.kvec)
    den = 1.0 + s + (2.0 * d / g) ** 2
    return -4.0 * laser.hbar_k * k * s * d / (g * den**2)


def max_timestep(trap) -> float:
    st = _as_scaled(trap)
    return (2.0 * math.pi / st.omega_rf) / 50.0 if st.full_rf else math.inf


def _seed32(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**32))
    return int(seed) % (2**32)


def simulate(state: SystemState, trap, cooling: CoolingParams = NO_COOLING, duration: float = 0.0,
             dt: float = 0.01, stride: int = 1, seed=0, *, gamma_schedule=None, kt_schedule=None) -> Trajectory:
    """Integrate from ``state`` for ``duration`` (scaled time).

    ``gamma_schedule`` / ``kt_schedule`` optionally give per-step friction and
    bath temperature, overriding the constant values in ``cooling``. Results
    are a deterministic function of the inputs and ``seed``.
    """
    st = _as_scaled(trap)
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if dt > max_timestep(st) * (1 + 1e-12):
        raise TimestepTooLarge(f"dt = {dt:g} exceeds RF period / 50 = {max_timestep(st):g}")
    stride = max(int(stride), 1)
    nsteps = int(round(duration / dt))
    pos = np.array(state.positions, dtype=float)
    vel = np.array(state.velocities, dtype=float)
    _check_separation(pos)
    gam = np.atleast_1d(np.asarray(cooling.gamma if gamma_schedule is None else gamma_schedule, dtype=float))
    kts = np.atleast_1d(np.asarray(cooling.kT if kt_schedule is None else kt_schedule, dtype=float))
    las = cooling.laser
    if las is None:
        lasargs = (False, np.array([1.0, 0.0, 0.0]), 0.0, 1.0, 0.0, 0.0)
    else:
        lasargs = (True, np.asarray(las.kvec, dtype=float), las.hbar_k, las.gamma, las.detuning, las.saturation)
    nrec = nsteps // stride + 1
    out_p = np.empty((nrec,) + pos.shape)
    out_v = np.empty((nrec,) + pos.shape)
    out_t = np.empty(nrec)
    s32 = _seed32(seed)
    got = K.integrate(pos, vel, float(state.time), dt, nsteps, stride, st.static, st.rf, st.omega_rf, gam, kts,
                      *lasargs, bool(cooling.recoil), s32, out_p, out_v, out_t)
    if got < 0:
        raise NonFinite("integration produced non-finite coordinates")
    traj = Trajectory(out_p[:got], out_v[:got], out_t[:got], dt, stride, s32)
    _check_separation(traj.positions[-1])
    return traj


def rf_equilibrium(initial_positions, trap, *, gamma: float = 0.5, settle: float = 200.0, periods: int = 20,
                   steps_per_period: int = 60, mode: str = "mean") -> SystemState:
    """Crystal positions in the time-dependent trap after damping out secular motion.

    The ions are damped with friction ``gamma`` for ``settle`` (scaled time),
    then propagated without friction for ``periods`` RF periods. ``mode``
    selects the RF-period average of the positions ("mean") or the snapshot
    at RF phase zero ("stroboscopic").
    """
    st = _as_scaled(trap)
    if mode not in ("mean", "stroboscopic"):
        raise ConfigError(f"unknown averaging mode {mode!r}")
    period = 2.0 * math.pi / st.omega_rf if st.full_rf else 2.0 * math.pi
    dt = period / steps_per_period
    settle_steps = int(math.ceil(settle / period)) * steps_per_period
    start = SystemState(initial_positions)
    damped = simulate(start, st, CoolingParams.viscous(gamma), settle_steps * dt, dt, settle_steps).final
    tr = simulate(damped, st, NO_COOLING, periods * period, dt, 1)
    if mode == "stroboscopic":
        return tr[periods * steps_per_period]
    # trapezoid-free average: one sample per step over whole periods
    avg = tr.positions[:-1].mean(axis=0)
    return SystemState(avg, np.zeros_like(avg), tr.times[-1])


def step_verlet(state: SystemState, trap, dt: float) -> SystemState:
    """One velocity-Verlet step without cooling."""
    return simulate(state, trap, NO_COOLING, dt, dt, 1).final


def harmonic_energy(state: SystemState, trap) -> float:
    """Total energy in the static (secular) potential."""
    w2 = _as_scaled(trap).secular_squared
    e, _ = K.energy_grad(np.ascontiguousarray(state.positions), w2)
    return e + state.kinetic_energy()


TRAJECTORY_COLUMNS = ("step", "time", "ion_index", "x", "y", "z", "vx", "vy", "vz")


def write_trajectory_csv(traj: Trajectory, path, scale: UnitScale) -> None:
    """SI-unit table, one row per ion and snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for f in range(len(traj)):
            step = f * traj.stride
            t = traj.times[f] * scale.time
            p = traj.positions[f] * scale.length
            v = traj.velocities[f] * scale.velocity
            for i in range(p.shape[0]):
                w.writerow([step, repr(float(t)), i, *(repr(float(c)) for c in p[i]), *(repr(float(c)) for c in v[i])])


def read_trajectory_csv(path, scale: UnitScale) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    steps = np.unique(data[:, 0]).astype(int)
    n = int(data[:, 2].max()) + 1
    frames = data.reshape(len(steps), n, -1)
    times = frames[:, 0, 1] / scale.time
    stride = int(steps[1] - steps[0]) if len(steps) > 1 else 1
    dt = float((times[1] - times[0]) / stride) if len(steps) > 1 else 0.0
    return Trajectory(frames[:, :, 3:6] / scale.length, frames[:, :, 6:9] / scale.velocity, times, dt, stride)


def save_trajectory(traj: Trajectory, path) -> None:
    """Exact binary snapshot (scaled units)."""
    with open(path, "wb") as fh:
        np.savez(fh, positions=traj.positions, velocities=traj.velocities, times=traj.times,
                 meta=np.array([traj.dt, traj.stride, traj.seed], dtype=float))


def load_trajectory(path) -> Trajectory:
    with np.load(path) as z:
        dt, stride, seed = z["meta"]
        return Trajectory(z["positions"], z["velocities"], z["times"], float(dt), int(stride), int(seed))
