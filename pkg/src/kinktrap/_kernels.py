"""Compiled inner loops: Coulomb forces, potential energy and the integrator.

Everything here works in scaled units with unit mass. Trap confinement is
described by two coefficient vectors so that one code path serves both the
static harmonic model and the time-dependent RF quadrupole:

    a_trap[i, k] = -(static[k] - rf[k] * cos(omega * t)) * pos[i, k]
"""

import numpy as np
import numba

_nb = dict(cache=True, nogil=True)


@numba.njit(**_nb)
def coulomb_accel(pos, out):
    """Add pairwise Coulomb accelerations into ``out`` and return the pair energy."""
    n = pos.shape[0]
    energy = 0.0
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            r = np.sqrt(r2)
            energy += 1.0 / r
            f = 1.0 / (r2 * r)
            out[i, 0] += f * dx
            out[i, 1] += f * dy
            out[i, 2] += f * dz
            out[j, 0] -= f * dx
            out[j, 1] -= f * dy
            out[j, 2] -= f * dz
    return energy


@numba.njit(**_nb)
def total_accel(pos, t, static, rf, omega, out):
    c = np.cos(omega * t)
    for i in range(pos.shape[0]):
        for k in range(3):
            out[i, k] = -(static[k] - rf[k] * c) * pos[i, k]
    coulomb_accel(pos, out)


@numba.njit(**_nb)
def energy_grad(pos, w2):
    """Static potential energy and its gradient for a harmonic trap."""
    g = np.zeros_like(pos)
    trap = 0.0
    for i in range(pos.shape[0]):
        for k in range(3):
            trap += 0.5 * w2[k] * pos[i, k] * pos[i, k]
    e = trap + coulomb_accel(pos, g)
    for i in range(pos.shape[0]):
        for k in range(3):
            g[i, k] = w2[k] * pos[i, k] - g[i, k]
    return e, g


@numba.njit(**_nb)
def min_pair_distance(pos):
    n = pos.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = 0.0
            for k in range(3):
                d += (pos[i, k] - pos[j, k]) ** 2
            if d < best:
                best = d
    return np.sqrt(best)


@numba.njit(**_nb)
def doppler_accel(vel, kvec, hbar_k, gamma_nat, delta, sat, out, rate):
    """Saturated two-level scattering force along the beam; also fills ``rate``."""
    knorm = np.sqrt(kvec[0] ** 2 + kvec[1] ** 2 + kvec[2] ** 2)
    for i in range(vel.shape[0]):
        kv = kvec[0] * vel[i, 0] + kvec[1] * vel[i, 1] + kvec[2] * vel[i, 2]
        x = 2.0 * (delta - kv) / gamma_nat
        r = 0.5 * gamma_nat * sat / (1.0 + sat + x * x)
        rate[i] = r
        for k in range(3):
            out[i, k] = hbar_k * r * kvec[k] / knorm


@numba.njit(**_nb)
def integrate(pos, vel, t0, dt, nsteps, stride, static, rf, omega, gammas, kts,
              doppler, kvec, hbar_k, gamma_nat, delta, sat, recoil, seed,
              out_pos, out_vel, out_t):
    """Advance ``nsteps`` and record every ``stride`` steps (first record is the input).

    Splitting per step: half kick, half drift, Ornstein-Uhlenbeck velocity
    update, half drift, half kick. With zero friction and temperature this is
    exactly velocity Verlet. ``gammas`` and ``kts`` are per-step schedules; a
    length-one array means constant. Returns the number of records written or
    ``-1`` if the state became non-finite.
    """
    np.random.seed(seed)
    n = pos.shape[0]
    acc = np.empty_like(pos)
    fd = np.zeros_like(pos)
    rate = np.zeros(n)
    total_accel(pos, t0, static, rf, omega, acc)
    if doppler:
        doppler_accel(vel, kvec, hbar_k, gamma_nat, delta, sat, fd, rate)
    knorm = np.sqrt(kvec[0] ** 2 + kvec[1] ** 2 + kvec[2] ** 2)
    rec = 0
    out_pos[0] = pos
    out_vel[0] = vel
    out_t[0] = t0
    rec = 1
    ng = gammas.shape[0]
    nk = kts.shape[0]
    for s in range(nsteps):
        g = gammas[min(s, ng - 1)]
        kt = kts[min(s, nk - 1)]
        for i in range(n):
            for k in range(3):
                vel[i, k] += 0.5 * dt * (acc[i, k] + fd[i, k])
                pos[i, k] += 0.5 * dt * vel[i, k]
        if g > 0.0:
            c1 = np.exp(-g * dt)
            c2 = np.sqrt((1.0 - c1 * c1) * kt) if kt > 0.0 else 0.0
            for i in range(n):
                for k in range(3):
                    if c2 > 0.0:
                        vel[i, k] = c1 * vel[i, k] + c2 * np.random.normal()
                    else:
                        vel[i, k] = c1 * vel[i, k]
        for i in range(n):
            for k in range(3):
                pos[i, k] += 0.5 * dt * vel[i, k]
        t = t0 + (s + 1) * dt
        total_accel(pos, t, static, rf, omega, acc)
        if doppler:
            doppler_accel(vel, kvec, hbar_k, gamma_nat, delta, sat, fd, rate)
        for i in range(n):
            for k in range(3):
                vel[i, k] += 0.5 * dt * (acc[i, k] + fd[i, k])
        if doppler and recoil:
            for i in range(n):
                mean = rate[i] * dt
                m = np.random.poisson(mean)
                # absorption shot noise along the beam around the mean force
                da = (m - mean) * hbar_k / knorm
                for k in range(3):
                    vel[i, k] += da * kvec[k]
                for _ in range(m):
                    cz = 2.0 * np.random.random() - 1.0
                    ph = 2.0 * np.pi * np.random.random()
                    sz = np.sqrt(1.0 - cz * cz)
                    vel[i, 0] += hbar_k * sz * np.cos(ph)
                    vel[i, 1] += hbar_k * sz * np.sin(ph)
                    vel[i, 2] += hbar_k * cz
        if (s + 1) % stride == 0:
            for i in range(n):
                for k in range(3):
                    if not np.isfinite(pos[i, k]) or not np.isfinite(vel[i, k]):
                        return -1
            out_pos[rec] = pos
            out_vel[rec] = vel
            out_t[rec] = t
            rec += 1
    return rec


@numba.njit(**_nb)
def gradient_flow(pos, w2, dt, nsteps, stride, out_pos, out_e):
    """Explicit Euler steps along ``-grad V``; records positions and energies."""
    rec = 0
    for s in range(nsteps + 1):
        e, g = energy_grad(pos, w2)
        if s % stride == 0:
            out_pos[rec] = pos
            out_e[rec] = e
            rec += 1
        if s == nsteps:
            break
        for i in range(pos.shape[0]):
            for k in range(3):
                pos[i, k] -= dt * g[i, k]
    return rec


def hessian(pos, w2):
    """Analytic Hessian of the static potential, shape (3N, 3N)."""
    pos = np.asarray(pos, dtype=float)
    n = pos.shape[0]
    d = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, 1.0)
    r = np.sqrt(r2)
    inv3 = 1.0 / (r2 * r)
    inv5 = inv3 / r2
    np.fill_diagonal(inv3, 0.0)
    np.fill_diagonal(inv5, 0.0)
    blocks = -(3.0 * d[:, :, :, None] * d[:, :, None, :] * inv5[:, :, None, None]
               - np.eye(3)[None, None] * inv3[:, :, None, None])
    diag = -blocks.sum(axis=1)
    idx = np.arange(n)
    blocks[idx, idx] = diag + np.diag(np.asarray(w2, dtype=float))[None]
    h = blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    return 0.5 * (h + h.T)
