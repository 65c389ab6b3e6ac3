"""Equilibrium configurations, structural classification and kink detection."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from .errors import AmbiguousStructure, CoincidentIons, ConfigError, KinkNotFormed, NoConvergence
from .model import ScaledTrap, TrapConfig, TrapModel, UnitScale

GRAD_TOL = 1e-10
CURVATURE_TOL = -1e-8
LINEAR_THRESHOLD = 0.05e-6
PLANE_THRESHOLD = 0.1e-6

#: Ions whose in-plane transverse offset is below this (scaled, and below
#: ``KINK_MASK_REL`` of the largest offset) carry no reliable zigzag phase.
KINK_MASK_ABS = 0.02
KINK_MASK_REL = 0.1


@dataclass
class EquilibriumConfig:
    positions: np.ndarray
    potential_energy: float
    gradient_norm: float
    trap: TrapConfig

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def w2(self) -> np.ndarray:
        return self.trap.scaled().secular_squared


def _w2(trap) -> np.ndarray:
    if isinstance(trap, TrapConfig):
        if trap.model is TrapModel.FULL_RF:
            raise ConfigError("static relaxation needs a Harmonic trap; use trap.harmonic()")
        return trap.scaled().secular_squared
    return np.asarray(trap, dtype=float)


def potential(positions, trap) -> tuple[float, np.ndarray]:
    """Static energy and gradient (scaled)."""
    return K.energy_grad(np.ascontiguousarray(positions, dtype=float), _w2(trap))


def _lbfgs(p, w2, maxiter):
    def fun(flat):
        e, g = K.energy_grad(flat.reshape(-1, 3), w2)
        return e, g.ravel()

    res = minimize(fun, p.ravel(), jac=True, method="L-BFGS-B",
                   options=dict(maxiter=maxiter, gtol=1e-12, ftol=1e-16, maxcor=30))
    return res.x.reshape(-1, 3)


def _newton(p, w2, iters=12, stationary=False):
    """Newton polish. Near-zero curvatures (symmetry modes) are skipped.

    With ``stationary`` the step targets the nearest stationary point even if
    the Hessian is indefinite; otherwise polishing stops at negative curvature.
    """
    for _ in range(iters):
        e, g = K.energy_grad(p, w2)
        gn = np.linalg.norm(g)
        if gn < 1e-13:
            break
        lam, vec = np.linalg.eigh(K.hessian(p, w2))
        if not stationary and lam[0] < CURVATURE_TOL:
            break
        keep = np.abs(lam) > 1e-9
        coef = (vec[:, keep].T @ g.ravel()) / lam[keep]
        step = (vec[:, keep] @ coef).reshape(-1, 3)
        # on a positive definite Hessian the step is a descent direction, so an
        # energy decrease is accepted too (soft anharmonic modes overshoot)
        descent = lam[0] > 0
        for frac in (1.0, 0.5, 0.25, 0.125, 0.0625):
            q = p - frac * step
            eq, gq = K.energy_grad(q, w2)
            if np.linalg.norm(gq) < gn or (descent and eq < e):
                break
        else:
            break
        p = q
    return p


def relax(initial_positions, trap, *, damping_time: float = 0.0, maxiter: int = 50000,
          escape_saddles: bool = True) -> EquilibriumConfig:
    """Local minimum of the static potential reached from ``initial_positions``.

    L-BFGS does the bulk of the work and Newton steps polish the gradient.
    An optional critically damped run of ``damping_time`` comes first; it
    helps for starts far from any basin but can trap defects when the start
    already encodes the intended structure, so it is off by default. If the result
    turns out to be a saddle it is pushed along the unstable direction and
    minimized again.
    """
    w2 = _w2(trap)
    p = np.array(initial_positions, dtype=float).reshape(-1, 3)
    n = p.shape[0]
    if n > 1 and K.min_pair_distance(p) < 1e-9:
        raise CoincidentIons("initial positions contain coincident ions")
    if damping_time > 0 and n > 1:
        st = ScaledTrap(w2, np.zeros(3), 1.0, False)
        dt = min(0.01, 0.2 / np.sqrt(w2.max()))
        nsteps = int(round(damping_time / dt))
        out_p = np.empty((2, n, 3))
        out_v = np.empty((2, n, 3))
        got = K.integrate(p.copy(), np.zeros_like(p), 0.0, dt, nsteps, max(nsteps, 1), w2, st.rf, 1.0,
                          np.array([2.0]), np.array([0.0]), False, np.array([1.0, 0.0, 0.0]), 0.0, 1.0, 0.0, 0.0,
                          False, 0, out_p, out_v, np.empty(2))
        if got == 2 and np.all(np.isfinite(out_p[1])):
            p = out_p[1].copy()
    for _ in range(6):
        p = _lbfgs(p, w2, maxiter)
        p = _newton(p, w2, stationary=not escape_saddles)
        if not escape_saddles or n == 1:
            break
        lam, vec = np.linalg.eigh(K.hessian(p, w2))
        if lam[0] >= CURVATURE_TOL:
            break
        p = p + 1e-3 * vec[:, 0].reshape(-1, 3)
    e, g = K.energy_grad(p, w2)
    gn = float(np.linalg.norm(g))
    if not gn < GRAD_TOL:
        raise NoConvergence(f"gradient norm {gn:.3e} after relaxation")
    return EquilibriumConfig(p, float(e), gn, trap if isinstance(trap, TrapConfig) else None)


def chain_length(n: int) -> float:
    """Rough axial half-extent used for initial guesses."""
    return 1.5 * n**0.6


def zigzag_guess(n: int, rng: np.random.Generator | None = None, z_noise: float = 0.05) -> np.ndarray:
    x = np.linspace(-1.0, 1.0, n) * chain_length(n)
    z = rng.normal(0.0, z_noise, n) if rng is not None else np.zeros(n)
    return np.c_[x, 0.5 * (-1.0) ** np.arange(n), z]


def ground_state(n: int, trap, *, restarts: int = 3, seed: int | None = None) -> EquilibriumConfig:
    """Lowest of several local minima started from zigzag and 3D guesses."""
    rng = np.random.default_rng(n if seed is None else seed)
    best = None
    for k in range(max(restarts, 1)):
        if k < 2 or k < restarts - 1:
            p0 = zigzag_guess(n, rng)
        else:
            p0 = np.c_[np.linspace(-1, 1, n) * chain_length(n), rng.normal(0, 0.3, (n, 2))]
        c = relax(p0, trap)
        if best is None or c.potential_energy < best.potential_energy:
            best = c
    return best


def planar_zigzag(n: int, trap) -> EquilibriumConfig:
    """Zigzag relaxed inside the xy-plane (z stays zero by symmetry).

    This is the reference from which kinks are cut; for large N it can be a
    saddle with respect to out-of-plane motion, so saddle escape is disabled.
    """
    return relax(zigzag_guess(n), trap, damping_time=0.0, escape_saddles=False)


class Structure(enum.Enum):
    LINEAR = "linear"
    ZIGZAG = "zigzag"
    THREE_D = "3d"
    COMPLEX = "complex"


@dataclass(frozen=True)
class StructureClass:
    kind: Structure
    max_out_of_plane: float
    transverse_amplitude: float


def principal_frame(positions: np.ndarray) -> tuple:
    """Axially ordered (x, y', z', order) with y' the dominant transverse direction.

    The sign of y' is fixed so that its
    largest component along (y, z) is positive, and z' = x-hat cross y'.
    """
    p = np.asarray(positions, dtype=float)
    order = np.argsort(p[:, 0], kind="stable")
    t = p[order, 1:]
    m = t.T @ t
    lam, vec = np.linalg.eigh(m)
    e1 = vec[:, 1]
    if abs(e1[0]) >= abs(e1[1]):
        e1 = e1 * np.sign(e1[0])
    else:
        e1 = e1 * np.sign(e1[1])
    e2 = np.array([-e1[1], e1[0]])
    return p[order, 0], t @ e1, t @ e2, order


def _thresholds(trap, linear_threshold, plane_threshold):
    scale = UnitScale.from_trap(trap) if isinstance(trap, TrapConfig) else None
    if scale is None:
        raise ConfigError("thresholds in metres need a TrapConfig reference")
    return linear_threshold / scale.length, plane_threshold / scale.length


def signature(positions: np.ndarray) -> tuple:
    """Alternation signature over axially sorted ions.

    Returns (x, y', z', mask, s, order) where ``s[i] = sign(y'_i) (-1)**i`` and ions
    with too small |y'| are masked out (``s = 0``).
    """
    x, yp, zp, order = principal_frame(positions)
    amp = np.abs(yp).max() if yp.size else 0.0
    mask = np.abs(yp) > max(KINK_MASK_ABS, KINK_MASK_REL * amp)
    s = np.where(mask, np.sign(yp) * (-1.0) ** np.arange(len(yp)), 0.0)
    return x, yp, zp, mask, s, order


def classify(config, linear_threshold: float = LINEAR_THRESHOLD, plane_threshold: float = PLANE_THRESHOLD,
             trap: TrapConfig | None = None) -> StructureClass:
    """Linear / Zigzag / ThreeD / Complex. Thresholds in metres."""
    pos = config.positions if hasattr(config, "positions") else np.asarray(config)
    lin, pla = _thresholds(trap or getattr(config, "trap", None), linear_threshold, plane_threshold)
    trans = np.abs(pos[:, 1:])
    if trans.max() < lin:
        return StructureClass(Structure.LINEAR, float(trans[:, 1].max()), float(trans.max()))
    x, yp, zp, mask, s, _ = signature(pos)
    out = float(np.abs(zp).max())
    amp = float(np.abs(yp).max())
    if out >= pla:
        return StructureClass(Structure.THREE_D, out, amp)
    big = np.abs(yp) >= lin
    sy = np.sign(yp[big])
    alternating = np.mean(sy[1:] != sy[:-1]) if sy.size > 1 else 1.0
    kind = Structure.ZIGZAG if alternating >= 0.8 else Structure.COMPLEX
    return StructureClass(kind, out, amp)


def structural_census(n_values, trap, **kw) -> list[tuple[int, StructureClass]]:
    """Ground-state structure class for every ion number in ``n_values``."""
    return [(int(n), classify(ground_state(int(n), trap, **kw))) for n in n_values]


@dataclass(frozen=True)
class KinkDescriptor:
    present: bool
    topological_charge: int
    axial_position: float
    lattice_position: float
    core_out_of_plane_amplitude: float
    core_ion_indices: tuple


NO_KINK = KinkDescriptor(False, 0, 0.0, 0.0, 0.0, ())


def find_kinks(config) -> list[KinkDescriptor]:
    """All flips of the alternation signature, ordered along the axis."""
    pos = config.positions if hasattr(config, "positions") else np.asarray(config)
    if pos.shape[0] < 3:
        return []
    x, yp, zp, mask, s, order = signature(pos)
    idx = np.nonzero(mask)[0]
    if idx.size < 2:
        return []
    sm = s[idx]
    flips = np.nonzero(np.diff(sm))[0]
    u = (-1.0) ** np.arange(len(yp)) * yp
    center = 0.5 * (x[0] + x[-1])
    out = []
    for f in flips:
        lo, hi = idx[f], idx[f + 1]
        # zero crossing of the staggered amplitude between the bracketing ions
        w = u[lo] / (u[lo] - u[hi])
        fi = lo + w * (hi - lo)
        k = min(int(np.floor(fi)), len(x) - 2)
        frac = fi - k
        xk = x[k] + frac * (x[k + 1] - x[k])
        spacing = x[k + 1] - x[k]
        core = (int(order[k]), int(order[k + 1]))
        amp = float(max(abs(zp[k]), abs(zp[k + 1])))
        charge = int(round((sm[f + 1] - sm[f]) / 2))
        out.append(KinkDescriptor(True, charge, float(xk - center), float((xk - center) / spacing), amp, core))
    return out


def detect_kink(config) -> KinkDescriptor:
    """The single kink of ``config`` (or an absent descriptor).

    Raises :class:`AmbiguousStructure` when more than one flip is found; the
    exception carries all descriptors.
    """
    kinks = find_kinks(config)
    if len(kinks) > 1:
        raise AmbiguousStructure(f"{len(kinks)} alternation flips found", kinks=kinks)
    return kinks[0] if kinks else NO_KINK


def kink_seed(zigzag: np.ndarray, bond: int, fraction: float = 0.0, nudge: float = 1e-3, seed: int = 1) -> np.ndarray:
    """Mirror the zigzag in y for axial indices > ``bond``.

    ``fraction`` in [0, 1] flips the ion at ``bond`` partially, giving a
    continuous family of seeds between neighbouring bonds. A small
    deterministic z offset breaks the planar symmetry so the kink can
    develop its out-of-plane structure.
    """
    p = np.array(zigzag, dtype=float)
    n = p.shape[0]
    order = np.argsort(p[:, 0], kind="stable")
    p[order[bond + 1:], 1] *= -1.0
    if 0 <= bond < n:
        p[order[bond], 1] *= 1.0 - 2.0 * fraction
    if nudge:
        p[:, 2] += nudge * np.random.default_rng(seed).normal(size=n)
    return p


def centered_kink(n: int, trap) -> EquilibriumConfig:
    """Relaxed kink at the crystal center, cut from the planar zigzag."""
    zz = planar_zigzag(n, trap)
    c = relax(kink_seed(zz.positions, n // 2 - 1), trap, damping_time=0.0)
    k = find_kinks(c)
    if len(k) != 1:
        raise KinkNotFormed(f"centered kink seed for N={n} relaxed to {len(k)} flips")
    return c


def lattice_spacing(positions: np.ndarray, at: float = 0.0) -> float:
    """Axial spacing of the bond nearest to axial coordinate ``at``."""
    x = np.sort(np.asarray(positions)[:, 0])
    mid = 0.5 * (x[1:] + x[:-1])
    k = int(np.argmin(np.abs(mid - at)))
    return float(x[k + 1] - x[k])


def write_config_csv(config, path, scale: UnitScale) -> None:
    """Columns ion_index, x, y, z (metres), s_i (alternation sign, 0 if masked)."""
    pos = config.positions
    _, _, _, _, s, order = signature(pos)
    si = np.zeros(len(pos))
    si[order] = s
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ion_index", "x", "y", "z", "s_i"])
        for i, r in enumerate(pos * scale.length):
            w.writerow([i, repr(float(r[0])), repr(float(r[1])), repr(float(r[2])), int(si[i])])


def read_config_csv(path, scale: UnitScale) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:4] / scale.length


def summary(config: EquilibriumConfig, scale: UnitScale) -> dict:
    cls = classify(config)
    kinks = find_kinks(config)
    return {
        "N": config.n,
        "class": cls.kind.value,
        "energy": config.potential_energy,
        "energy_over_kB_TD": config.potential_energy / scale.kT_doppler,
        "gradient_norm": config.gradient_norm,
        "max_out_of_plane_um": cls.max_out_of_plane * scale.length * 1e6,
        "kink_count": len(kinks),
        "kink_charge": kinks[0].topological_charge if len(kinks) == 1 else 0,
        "kink_position_um": kinks[0].axial_position * scale.length * 1e6 if len(kinks) == 1 else None,
    }


def write_summary_json(config: EquilibriumConfig, path, scale: UnitScale) -> None:
    with open(path, "w") as fh:
        json.dump(summary(config, scale), fh, indent=2, sort_keys=True)
        fh.write("\n")
