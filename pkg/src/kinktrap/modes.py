"""Normal modes, localization, thermal sampling and anharmonic frequency shifts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels as K
from .dynamics import NO_COOLING, SystemState, simulate
from .errors import KinkLost, NegativeCurvature, OrbitUnstable, PhysicsError, ZeroFrequencyMode
from .statics import EquilibriumConfig, centered_kink, find_kinks


def hessian(config, trap=None) -> np.ndarray:
    """Analytic (3N x 3N) Hessian of the static potential, ordered ion-major."""
    w2 = (trap or config.trap).scaled().secular_squared
    return K.hessian(config.positions, w2)


@dataclass
class ModeSpectrum:
    frequencies: np.ndarray
    eigenvectors: np.ndarray
    config: EquilibriumConfig

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0] // 3

    def mode(self, m: int) -> np.ndarray:
        """Eigenvector ``m`` as an (N, 3) displacement pattern."""
        return self.eigenvectors[:, m].reshape(-1, 3)

    def ion_weights(self) -> np.ndarray:
        """Per-ion displacement weight of every mode, shape (N, 3N)."""
        return (self.eigenvectors.reshape(self.n, 3, -1) ** 2).sum(axis=1)


def _fix_signs(vec: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component of each eigenvector positive
    # (first one wins on ties) so that mode indexing is reproducible
    k = np.argmax(np.abs(vec), axis=0)
    s = np.sign(vec[k, np.arange(vec.shape[1])])
    s[s == 0] = 1.0
    return vec * s


def normal_modes(config: EquilibriumConfig, trap=None) -> ModeSpectrum:
    """Eigen-decomposition of the (unit-mass) Hessian, ascending frequencies."""
    h = hessian(config, trap)
    lam, vec = np.linalg.eigh(h)
    if lam[0] < -1e-8:
        raise NegativeCurvature(f"Hessian eigenvalue {lam[0]:.3e} < 0: configuration is a saddle")
    return ModeSpectrum(np.sqrt(np.clip(lam, 0.0, None)), _fix_signs(vec), config)


@dataclass
class ModeLocalization:
    ipr: np.ndarray
    dominant_ions: list


def localization(spectrum: ModeSpectrum, top: int = 3) -> ModeLocalization:
    """Ion-level inverse participation ratio of every mode."""
    w = spectrum.ion_weights()
    ipr = (w**2).sum(axis=0) / w.sum(axis=0) ** 2
    dom = [tuple(int(i) for i in np.argsort(-w[:, m], kind="stable")[:top]) for m in range(w.shape[1])]
    return ModeLocalization(ipr, dom)


def kink_mode(spectrum: ModeSpectrum, core=None) -> int:
    """Index of the kink's localized mode.

    This is the mode contributing most to the thermal displacement variance
    of the two core ions (core weight divided by frequency squared), which
    is the mode responsible for the blurred core in fluorescence images.
    """
    if core is None:
        kinks = find_kinks(spectrum.config)
        if len(kinks) != 1:
            raise KinkLost(f"expected one kink, found {len(kinks)}")
        core = kinks[0].core_ion_indices
    w = spectrum.ion_weights()
    on_core = w[list(core)].sum(axis=0)
    return int(np.argmax(on_core / np.maximum(spectrum.frequencies, 1e-6) ** 2))


def core_weight(spectrum: ModeSpectrum, mode_index: int, core) -> float:
    return float(spectrum.ion_weights()[list(core), mode_index].sum())


@dataclass(frozen=True)
class TunePoint:
    ratio: float
    omega_low: float
    ipr: float
    status: str = "ok"


def tune_scan(n: int, trap_base, ratio_grid) -> list[TunePoint]:
    """Kink localized-mode frequency versus the radial anisotropy ``wz/wy``."""
    rows = []
    for r in ratio_grid:
        try:
            trap = trap_base.with_ratio(float(r))
            cfg = centered_kink(n, trap)
            spec = normal_modes(cfg)
            m = kink_mode(spec)
            rows.append(TunePoint(float(r), float(spec.frequencies[m]), float(localization(spec).ipr[m])))
        except PhysicsError as exc:
            rows.append(TunePoint(float(r), math.nan, math.nan, type(exc).__name__))
    return rows


def planarity_edge(n: int, trap_base, lo: float, hi: float, *, tol: float = 1e-6, threshold: float = 1e-6) -> float:
    """Anisotropy at which the centered kink turns planar, by bisection.

    ``lo`` must give a kink with out-of-plane core (above ``threshold``,
    scaled) and ``hi`` a planar one. The kink's localized mode softens to
    zero at this edge.
    """
    def planar(r):
        k = find_kinks(centered_kink(n, trap_base.with_ratio(r)))[0]
        return k.core_out_of_plane_amplitude < threshold

    if planar(lo) or not planar(hi):
        raise ValueError("bracket does not contain the planarity edge")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if planar(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def thermal_sample(spectrum: ModeSpectrum, kT: float, rng: np.random.Generator, modes=None) -> SystemState:
    """Superpose every mode (or only ``modes``) with energy ``kT`` and random phase."""
    idx = np.arange(len(spectrum.frequencies)) if modes is None else np.atleast_1d(modes)
    om = spectrum.frequencies[idx]
    if kT > 0 and np.any(om < 1e-6):
        raise ZeroFrequencyMode("cannot assign thermal energy to a zero-frequency mode")
    pos = spectrum.config.positions.copy()
    vel = np.zeros_like(pos)
    if kT == 0:
        return SystemState(pos, vel)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=len(idx))
    amp = np.sqrt(2.0 * kT) / om
    vecs = spectrum.eigenvectors[:, idx]
    pos += (vecs @ (amp * np.cos(phase))).reshape(-1, 3)
    vel += (vecs @ (-amp * om * np.sin(phase))).reshape(-1, 3)
    return SystemState(pos, vel)


def dominant_frequency(signal: np.ndarray, dt: float, guess: float | None = None) -> float:
    """Peak of the Hann-windowed discrete-time Fourier transform (angular)."""
    x = np.asarray(signal, dtype=float)
    x = x - x.mean()
    n = len(x)
    win = np.hanning(n)
    xw = x * win
    spec = np.abs(np.fft.rfft(xw, 8 * n))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(8 * n, dt)
    if guess is not None:
        band = (freqs > 0.5 * guess) & (freqs < 1.5 * guess)
        spec = np.where(band, spec, 0.0)
    k = int(np.argmax(spec[1:])) + 1
    t = np.arange(n) * dt
    df = freqs[1] - freqs[0]

    def neg(w):
        return -abs(np.dot(xw, np.exp(-1j * w * t)))

    res = minimize_scalar(neg, bounds=(freqs[k] - df, freqs[k] + df), method="bounded",
                          options={"xatol": 1e-12 * max(freqs[k], 1.0)})
    return float(res.x)


@dataclass(frozen=True)
class AnharmonicPoint:
    amplitude: float
    frequency: float
    status: str = "ok"


def mode_oscillation(spectrum: ModeSpectrum, mode_index: int, amplitude: float, *, periods: float = 60.0,
                     dt: float = 0.01, trap=None) -> float:
    """Effective frequency of free motion started along one mode.

    ``amplitude`` is the initial displacement of the most strongly moving
    ion. Raises :class:`OrbitUnstable` if the kink count changes.
    """
    cfg = spectrum.config
    trap = trap or cfg.trap
    e = spectrum.mode(mode_index)
    w = spectrum.frequencies[mode_index]
    if w < 1e-6:
        raise ZeroFrequencyMode("mode has zero frequency")
    shape = e / np.sqrt((e**2).sum(axis=1)).max()
    start = SystemState(cfg.positions + amplitude * shape, np.zeros_like(cfg.positions))
    duration = periods * 2.0 * np.pi / w
    stride = max(1, int((2.0 * np.pi / w) / (40 * dt)))
    traj = simulate(start, trap, NO_COOLING, duration, dt, stride)
    before = len(find_kinks(cfg))
    after = len(find_kinks(traj.positions[-1]))
    if after != before:
        raise OrbitUnstable(f"amplitude {amplitude:g} left the basin ({before} -> {after} kinks)")
    q = np.tensordot(traj.positions - cfg.positions, e, axes=([1, 2], [0, 1]))
    return dominant_frequency(q, dt * stride, guess=w)


def anharmonic_scan(config_or_spectrum, mode_index: int, amplitude_grid, **kw) -> list[AnharmonicPoint]:
    spectrum = config_or_spectrum if isinstance(config_or_spectrum, ModeSpectrum) else normal_modes(config_or_spectrum)
    rows = []
    for a in amplitude_grid:
        try:
            rows.append(AnharmonicPoint(float(a), mode_oscillation(spectrum, mode_index, float(a), **kw)))
        except OrbitUnstable:
            rows.append(AnharmonicPoint(float(a), math.nan, "beyond_range"))
    return rows


def write_spectrum_csv(spectrum: ModeSpectrum, path, axial_hz: float) -> None:
    loc = localization(spectrum)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode_index", "frequency_Hz", "IPR", "top3_ion_indices"])
        for m, f in enumerate(spectrum.frequencies):
            w.writerow([m, repr(float(f * axial_hz)), repr(float(loc.ipr[m])), ";".join(map(str, loc.dominant_ions[m]))])


def write_table_csv(rows, header, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
