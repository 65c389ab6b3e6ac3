"""Effective Peierls-Nabarro potential of a kink and its growth with ion number.

A kink cut from the zigzag at an off-center bond is released into an
overdamped (gradient) flow, which in the limit of strong damping is the
adiabatic trajectory of the kink. Scanning the cut position outward and
bisecting between the last seed that stays trapped and the first that
escapes produces a path that passes arbitrarily close to the saddle bounding
the trapping well; the saddle is then polished with Newton steps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import InsufficientOverlap, KinkEscaped, KinkNotFormed, NotOverdamped, PhysicsError
from .model import TrapConfig, UnitScale
from .statics import (
    _newton,
    centered_kink,
    find_kinks,
    kink_seed,
    lattice_spacing,
    planar_zigzag,
)

#: Kinetic energy (in units of kB T_D) below which the overdamped path is
#: considered adiabatic.
KE_FRACTION = 1e-3


@dataclass
class KinkPath:
    positions: np.ndarray
    lattice_positions: np.ndarray
    energies: np.ndarray
    snapshots: np.ndarray
    gamma: float
    dt: float
    status: str = "center"
    trimmed: int = 0
    escape_side: int = 0

    def __len__(self):
        return len(self.energies)

    def mirrored(self) -> "KinkPath":
        snaps = self.snapshots.copy()
        snaps[..., 0] *= -1.0
        return KinkPath(-self.positions, -self.lattice_positions, self.energies.copy(), snaps, self.gamma, self.dt,
                        self.status, self.trimmed, -self.escape_side)


@dataclass
class PNProfile:
    positions: np.ndarray
    energies: np.ndarray
    barrier_height: float
    n: int
    lattice_positions: np.ndarray = field(default=None)

    def asymmetry(self) -> float:
        """Largest |E(x) - E(-x)| on the overlap, relative to the barrier."""
        xs = self.positions
        lim = min(-xs.min(), xs.max())
        grid = np.linspace(0.0, lim, 64)
        d = np.abs(np.interp(grid, xs, self.energies) - np.interp(-grid, xs, self.energies))
        return float(d.max() / self.barrier_height) if self.barrier_height > 0 else 0.0

    def interior_maxima(self, tol: float = 0.0) -> list:
        """Indices of local maxima away from the ends that exceed both neighbours by ``tol``."""
        e = self.energies
        mid = np.argmin(np.abs(self.positions))
        out = []
        for i in range(1, len(e) - 1):
            if e[i] > e[i - 1] + tol and e[i] > e[i + 1] + tol:
                # the rim of the well is allowed; only bumps inside it count
                inner = (i < mid and e[:i].max() > e[i]) or (i > mid and e[i + 1:].max() > e[i])
                if inner:
                    out.append(i)
        return out


def _flow_dt(config_positions, w2) -> float:
    lam = np.linalg.eigvalsh(K.hessian(config_positions, w2))
    return 1.0 / lam[-1]


class _Descender:
    """Gradient flow of kink configurations with kink tracking."""

    def __init__(self, n: int, trap: TrapConfig):
        self.n = n
        self.trap = trap
        self.w2 = trap.scaled().secular_squared
        self.scale = UnitScale.from_trap(trap)
        self.zigzag = planar_zigzag(n, trap)
        self.center = centered_kink(n, trap)
        self.spacing = lattice_spacing(self.center.positions)
        self.dt = _flow_dt(self.center.positions, self.w2)

    def seed(self, bond: int, fraction: float = 0.0, side: int = 1) -> np.ndarray:
        if side > 0:
            return kink_seed(self.zigzag.positions, bond, fraction)
        p = self.zigzag.positions.copy()
        p[:, 0] *= -1.0
        q = kink_seed(p, bond, fraction)
        return q

    def run(self, p, gamma: float, chunk: int = 100, max_chunks: int = 1500, gtol: float = 1e-6):
        """Flow until the kink is centered and stationary, escapes, or stalls."""
        p = np.array(p, dtype=float)
        out_p = np.empty((2, self.n, 3))
        out_e = np.empty(2)
        xs, ls, es, snaps, gns = [], [], [], [], []
        status = "stuck"
        side = 0
        for _ in range(max_chunks):
            K.gradient_flow(p, self.w2, self.dt, chunk, chunk, out_p, out_e)
            e, g = K.energy_grad(p, self.w2)
            kinks = find_kinks(p)
            if not kinks:
                status = "escaped"
                last = xs[-1] if xs else 0.0
                side = 1 if last > 0 else -1
                break
            if len(kinks) == 1:
                k = kinks[0]
                xs.append(k.axial_position)
                ls.append(k.axial_position / self.spacing)
                es.append(e)
                snaps.append(p.copy())
                gns.append(float(np.linalg.norm(g)))
            gn = float(np.linalg.norm(g))
            if len(kinks) == 1 and gn < gtol:
                status = "center" if abs(kinks[0].axial_position) < 0.5 * self.spacing else "stuck"
                break
        path = KinkPath(np.array(xs), np.array(ls), np.array(es), np.array(snaps).reshape(-1, self.n, 3),
                        gamma, self.dt * gamma, status, 0, side)
        path.grad_norms = np.array(gns)
        return path


def _trim(path: KinkPath, ke_limit: float) -> int:
    # overdamped velocities are -grad/gamma, so KE = |grad|^2 / (2 gamma^2)
    ke = 0.5 * path.grad_norms**2 / path.gamma**2
    below = np.nonzero(ke < ke_limit)[0]
    return int(below[0]) if below.size else len(path)


def seed_offcenter_kink(n: int, trap: TrapConfig, bond_offset: int, *, settle: int = 200) -> np.ndarray:
    """Kink cut ``bond_offset`` bonds right of center, briefly settled.

    Raises :class:`KinkNotFormed` if no single kink survives the settling.
    """
    d = _Descender(n, trap)
    bond = n // 2 - 1 + int(bond_offset)
    if not 0 <= bond < n - 1:
        raise KinkNotFormed(f"bond {bond} lies outside the chain")
    p = d.seed(bond)
    out_p = np.empty((2, n, 3))
    K.gradient_flow(p, d.w2, d.dt, settle, settle, out_p, np.empty(2))
    kinks = find_kinks(p)
    if len(kinks) != 1:
        raise KinkNotFormed(f"seed at bond offset {bond_offset} relaxed to {len(kinks)} kinks")
    return p


def adiabatic_descent(config, trap: TrapConfig, gamma: float = 20.0) -> KinkPath:
    """Overdamped path of a single kink toward the trap center.

    Raises :class:`KinkEscaped` if the kink leaves through a chain end and
    :class:`NotOverdamped` if, after the initial transient, the implied
    kinetic energy exceeds the adiabatic limit.
    """
    pos = config.positions if hasattr(config, "positions") else np.asarray(config)
    d = _Descender(pos.shape[0], trap)
    path = d.run(pos, gamma)
    if path.status == "escaped":
        raise KinkEscaped(f"kink left the crystal on the {'right' if path.escape_side > 0 else 'left'}",
                          side=path.escape_side)
    limit = KE_FRACTION * d.scale.kT_doppler
    t = _trim(path, limit)
    ke = 0.5 * path.grad_norms[t:] ** 2 / gamma**2
    if ke.size and ke.max() > 10 * limit:
        raise NotOverdamped(f"kinetic energy {ke.max():.2e} exceeds the adiabatic limit; raise gamma")
    path.trimmed = t
    return path


def _saddle(d: _Descender, path: KinkPath):
    """Polish the slowest point of a separatrix-hugging path into a saddle."""
    g = path.grad_norms
    # the path lingers near the saddle: first local minimum of |grad|
    i = len(g) - 1
    for k in range(1, len(g) - 1):
        if g[k] <= g[k - 1] and g[k] <= g[k + 1]:
            i = k
            break
    p = _newton(path.snapshots[i].copy(), d.w2, iters=30, stationary=True)
    e, g = K.energy_grad(p, d.w2)
    lam = np.linalg.eigvalsh(K.hessian(p, d.w2))
    ok = np.linalg.norm(g) < 1e-8 and (lam < -1e-8).sum() == 1 and len(find_kinks(p)) == 1
    return (p, float(e)) if ok else (None, float(path.energies[i]))


@dataclass
class BarrierResult:
    n: int
    barrier: float
    saddle_position: float
    profile: PNProfile | None
    path_right: KinkPath | None = None
    path_left: KinkPath | None = None
    status: str = "ok"


def watershed_path(d: _Descender, side: int = 1, gamma: float = 20.0, bisections: int = 14):
    """Descent from the seed at the edge of the trapping basin."""
    n = d.n
    last = None
    first_escape = None
    for j in range(n // 2, n - 1):
        path = d.run(d.seed(j, side=side), gamma)
        if path.status == "escaped":
            first_escape = j
            break
        last = (j, path)
    if last is None or first_escape is None:
        return last[1] if last else None
    # the seed family is continuous in the flip fraction of ion ``first_escape``
    lo, hi = 0.0, 1.0
    best = last[1]
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        path = d.run(d.seed(first_escape, mid, side=side), gamma, max_chunks=4000)
        if path.status != "escaped":
            lo, best = mid, path
        else:
            hi = mid
    return best


def _profile_from(path_r: KinkPath, path_l: KinkPath, e_center: float, n: int, spacing: float) -> PNProfile:
    xs = np.concatenate([path_l.positions, path_r.positions])
    es = np.concatenate([path_l.energies, path_r.energies]) - e_center
    order = np.argsort(xs, kind="stable")
    xs, es = xs[order], es[order]
    keep = np.r_[True, np.diff(xs) > 1e-12]
    xs, es = xs[keep], es[keep]
    grid = np.linspace(xs.min(), xs.max(), 201)
    eg = np.interp(grid, xs, es)
    return PNProfile(grid, eg, float(eg.max() - eg.min()), n, grid / spacing)


def pn_profile(path_left: KinkPath, path_right: KinkPath | None = None, *, center_energy: float | None = None,
               spacing: float = 1.0) -> PNProfile:
    """Merge two descents (or one and its mirror) into a profile zeroed at the center."""
    if path_right is None:
        path_right = path_left.mirrored()
    for p in (path_left, path_right):
        if p.status != "center" or len(p) == 0:
            raise InsufficientOverlap(f"a descent ended as '{p.status}' without reaching the center")
    n = path_left.snapshots.shape[1]
    sl = slice(path_left.trimmed, None)
    sr = slice(path_right.trimmed, None)
    left = KinkPath(path_left.positions[sl], path_left.lattice_positions[sl], path_left.energies[sl],
                    path_left.snapshots[sl], path_left.gamma, path_left.dt, "center")
    right = KinkPath(path_right.positions[sr], path_right.lattice_positions[sr], path_right.energies[sr],
                     path_right.snapshots[sr], path_right.gamma, path_right.dt, "center")
    if center_energy is None:
        center_energy = min(left.energies.min(), right.energies.min())
    return _profile_from(right, left, center_energy, n, spacing)


def pn_barrier(n: int, trap: TrapConfig, gamma: float = 20.0, *, both_sides: bool = True) -> BarrierResult:
    """Barrier height (scaled energy) confining a kink at the center of an N-ion crystal."""
    d = _Descender(n, trap)
    e0 = d.center.potential_energy
    paths = {}
    saddles = {}
    for side in ((1, -1) if both_sides else (1,)):
        path = watershed_path(d, side, gamma)
        if path is None:
            return BarrierResult(n, math.nan, math.nan, None, status="no_trapped_seed")
        saddle, es = _saddle(d, path)
        if saddle is not None:
            # steepest descent from the polished saddle is the adiabatic path
            lam, vec = np.linalg.eigh(K.hessian(saddle, d.w2))
            v = vec[:, 0].reshape(-1, 3)
            trial = []
            for sgn in (1.0, -1.0):
                pth = d.run(saddle + sgn * 1e-3 * v, gamma)
                trial.append(pth)
            inward = [t for t in trial if t.status == "center"]
            if inward:
                sp = find_kinks(saddle)[0].axial_position
                path = inward[0]
                # prepend the saddle itself so the profile reaches the rim
                path = KinkPath(np.r_[sp, path.positions], np.r_[sp / d.spacing, path.lattice_positions],
                                np.r_[es, path.energies], np.concatenate([saddle[None], path.snapshots]),
                                gamma, path.dt, "center")
                path.grad_norms = np.zeros(len(path))
        else:
            limit = KE_FRACTION * d.scale.kT_doppler
            path.trimmed = _trim(path, limit)
        paths[side] = path
        saddles[side] = es
    right = paths[1]
    left = paths.get(-1)
    barrier = max(saddles.values()) - e0
    sp = right.positions[right.trimmed] if len(right) else math.nan
    try:
        prof = pn_profile(left if left is not None else right.mirrored(), right, center_energy=e0,
                          spacing=d.spacing)
    except InsufficientOverlap:
        prof = None
    return BarrierResult(n, float(barrier), float(sp), prof, right, left,
                         "ok" if prof is not None else "profile_incomplete")


@dataclass
class SweepResult:
    rows: list
    coefficients: tuple | None
    r_squared: float | None
    excluded: list


def quadratic_fit(ns, values):
    """Least-squares ``a N**2 + b N + c`` and its coefficient of determination."""
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(ns) < 3:
        return None, None
    coef = np.polyfit(ns, v, 2)
    res = v - np.polyval(coef, ns)
    ss_tot = float(((v - v.mean()) ** 2).sum())
    r2 = 1.0 - float((res**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return tuple(float(c) for c in coef), r2


def barrier_sweep(n_range, trap: TrapConfig, *, workers: int = 1, both_sides: bool = False) -> SweepResult:
    """Barrier for every N; failures are tabulated and left out of the fit."""
    ns = list(n_range)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_one, ns, [trap] * len(ns), [both_sides] * len(ns)))
    else:
        results = [_sweep_one(n, trap, both_sides) for n in ns]
    rows = [(n, b, s) for n, (b, s) in zip(ns, results)]
    good = [(n, b) for n, b, s in rows if s == "ok" and np.isfinite(b)]
    excluded = [n for n, b, s in rows if not (s == "ok" and np.isfinite(b))]
    coef, r2 = quadratic_fit([g[0] for g in good], [g[1] for g in good])
    return SweepResult(rows, coef, r2, excluded)


def _sweep_one(n, trap, both_sides):
    try:
        r = pn_barrier(n, trap, both_sides=both_sides)
        return r.barrier, ("ok" if np.isfinite(r.barrier) else r.status)
    except PhysicsError as exc:
        return math.nan, type(exc).__name__


def write_profile_csv(profile: PNProfile, path, scale: UnitScale) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kink_position_um", "energy_over_kB_TD"])
        for x, e in zip(profile.positions, profile.energies):
            w.writerow([repr(float(x * scale.length * 1e6)), repr(float(e / scale.kT_doppler))])


def write_sweep(result: SweepResult, csv_path, json_path, scale: UnitScale) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "barrier_over_kB_TD", "status"])
        for n, b, s in result.rows:
            w.writerow([n, repr(float(b / scale.kT_doppler)), s])
    kt = scale.kT_doppler
    rec = {
        "a": result.coefficients[0] / kt if result.coefficients else None,
        "b": result.coefficients[1] / kt if result.coefficients else None,
        "c": result.coefficients[2] / kt if result.coefficients else None,
        "r_squared": result.r_squared,
        "excluded_N": result.excluded,
        "units": "kB_TD",
    }
    with open(json_path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
        fh.write("\n")
