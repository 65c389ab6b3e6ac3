"""Cloud-to-crystal quench trials and kink occurrence statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import CoolingParams, SystemState, simulate
from .errors import ConfigError, NotCrystallized, PhysicsError
from .model import TrapConfig, UnitScale
from .statics import classify, find_kinks, lattice_spacing


def random_cloud(n: int, kT_init: float, trap: TrapConfig, rng: np.random.Generator,
                 min_distance: float = 0.05) -> SystemState:
    """Hot cloud: uniform in the thermal ellipsoid, Maxwell-Boltzmann velocities.

    The ellipsoid semi-axes are ``sqrt(3 kT / w_k**2)`` per axis, enlarged to
    at least the Coulomb-limited extent of an N-ion chain so that dense
    clouds do not start with huge pair energies (only for N > 1). Rejection sampling keeps all
    pairs at least ``min_distance`` (scaled) apart.
    """
    if not kT_init > 0:
        raise ConfigError("initial temperature must be positive")
    w2 = trap.scaled().secular_squared
    semi = np.sqrt(3.0 * kT_init / w2)
    if n > 1:
        semi[0] = max(semi[0], 1.6 * n**0.55)
        semi[1:] = np.maximum(semi[1:], 0.15)
    pts = np.empty((n, 3))
    k = 0
    while k < n:
        u = rng.uniform(-1.0, 1.0, 3)
        if u @ u > 1.0:
            continue
        q = u * semi
        if k and np.min(np.sum((pts[:k] - q) ** 2, axis=1)) < min_distance**2:
            continue
        pts[k] = q
        k += 1
    vel = rng.normal(0.0, math.sqrt(kT_init), (n, 3))
    return SystemState(pts, vel)


@dataclass(frozen=True)
class QuenchSchedule:
    """Cooling protocol in scaled units; temperatures in units of kB T_D.

    Friction ramps linearly from 0 to ``gamma`` over ``ramp_time`` (no bath),
    then the crystal equilibrates with a Langevin bath at ``settle_temperature``
    for ``settle_time``, and finally ``final_time`` of strong friction at zero
    temperature freezes it for analysis.
    """

    initial_temperature: float = 50.0
    ramp_time: float = 200.0
    gamma: float = 0.05
    settle_time: float = 1500.0
    settle_temperature: float = 6.0
    final_time: float = 100.0
    final_gamma: float = 0.5
    dt: float = 0.01
    stationary_time: float = 50.0
    max_extensions: int = 2

    def __post_init__(self):
        if min(self.ramp_time, self.settle_time, self.final_time) < 0 or self.dt <= 0:
            raise ConfigError("schedule durations must be non-negative and dt positive")
        if self.initial_temperature <= 0:
            raise ConfigError("initial temperature must be positive")


@dataclass
class TrialOutcome:
    n: int
    seed: int
    structure: str
    multiplicity: int
    kinks: list
    max_multiplicity: int
    wall_time: float
    simulated_time: float
    failed: bool = False
    kink_positions_lattice: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d["kinks"] = [{"charge": k.topological_charge, "position": k.axial_position,
                       "lattice_position": k.lattice_position} for k in self.kinks]
        return d


def _kinetic_temperature(vel: np.ndarray) -> float:
    return float(np.mean(vel**2))


def quench_trial(n: int, trap: TrapConfig, schedule: QuenchSchedule = QuenchSchedule(), seed: int = 0,
                 cooling: CoolingParams | None = None) -> TrialOutcome:
    """One cloud-to-crystal run followed by structure and kink analysis.

    ``cooling`` may add a laser to every phase. The run is extended (up to
    ``schedule.max_extensions`` times) if the crystal is not yet cold and
    stationary; a trial that still fails raises :class:`NotCrystallized`.
    """
    t0 = time.perf_counter()
    scale = UnitScale.from_trap(trap)
    kt = scale.kT_doppler
    rng = np.random.default_rng(seed)
    state = random_cloud(n, schedule.initial_temperature * kt, trap, rng)
    dt = schedule.dt
    nr = int(round(schedule.ramp_time / dt))
    ns = int(round(schedule.settle_time / dt))
    nf = int(round(schedule.final_time / dt))
    gam = np.concatenate([np.linspace(0.0, schedule.gamma, nr), np.full(ns, schedule.gamma), np.full(nf, schedule.final_gamma)])
    kts = np.concatenate([np.zeros(nr), np.full(ns, schedule.settle_temperature * kt), np.zeros(nf)])
    base = cooling or CoolingParams()
    stride = max(1, int(round(5.0 / dt)))
    sub = int(rng.integers(2**32))
    traj = simulate(state, trap, base, (nr + ns + nf) * dt, dt, stride, sub, gamma_schedule=gam, kt_schedule=kts)
    history = [len(find_kinks(p)) for p in traj.positions[nr // stride:]]
    final = traj.final
    # crystallized: cold and structurally unchanged over the stationary window
    for ext in range(schedule.max_extensions + 1):
        hot = _kinetic_temperature(final.velocities) >= 2.0 * kt
        window = SystemState(final.positions, final.velocities, final.time)
        tail = simulate(window, trap, base, schedule.stationary_time, dt, stride, sub + ext + 1,
                        gamma_schedule=np.array([schedule.final_gamma]), kt_schedule=np.array([0.0]))
        k0 = classify(final.positions, trap=trap).kind
        k1 = classify(tail.final.positions, trap=trap).kind
        m0 = len(find_kinks(final.positions))
        m1 = len(find_kinks(tail.final.positions))
        final = tail.final
        if not hot and k0 == k1 and m0 == m1:
            break
    else:
        raise NotCrystallized(f"N={n} seed={seed} did not crystallize")
    kinks = find_kinks(final.positions)
    sp = lattice_spacing(final.positions)
    return TrialOutcome(
        n=n,
        seed=int(seed),
        structure=classify(final.positions, trap=trap).kind.value,
        multiplicity=len(kinks),
        kinks=kinks,
        max_multiplicity=max(history + [len(kinks)]),
        wall_time=time.perf_counter() - t0,
        simulated_time=float(final.time),
        kink_positions_lattice=[k.axial_position / sp for k in kinks],
    )


def trial_seed(base_seed: int, n: int, index: int) -> int:
    """``base_seed`` XOR a stable 64-bit hash of (N, trial index)."""
    h = hashlib.blake2b(f"{n}:{index}".encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(h, "little")) & (2**64 - 1)


@dataclass
class OccurrenceRow:
    n: int
    trials: int
    p_zigzag: float
    p_one_kink: float
    p_multi: float
    p_failed: float
    sigma_one_kink: float


@dataclass
class OccurrenceTable:
    rows: list
    outcomes: list


def _run(args):
    n, trap, schedule, seed, cooling = args
    try:
        return quench_trial(n, trap, schedule, seed, cooling)
    except PhysicsError:
        return TrialOutcome(n, int(seed), "failed", -1, [], -1, 0.0, 0.0, failed=True)


def kink_statistics(n_list, trials_per_n: int, base_seed: int, trap: TrapConfig,
                    schedule: QuenchSchedule = QuenchSchedule(), *, cooling: CoolingParams | None = None,
                    workers: int = 1) -> OccurrenceTable:
    """Run ``trials_per_n`` quenches per N and tabulate kink multiplicities.

    Per-trial seeds depend only on (base_seed, N, index), so the table is
    identical for any worker count.
    """
    if trials_per_n < 1:
        raise ConfigError("trials_per_n must be at least 1")
    jobs = [(n, trap, schedule, trial_seed(base_seed, n, i), cooling) for n in n_list for i in range(trials_per_n)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            outcomes = list(ex.map(_run, jobs, chunksize=1))
    else:
        outcomes = [_run(j) for j in jobs]
    rows = []
    for n in n_list:
        outs = [o for o in outcomes if o.n == n]
        ok = [o for o in outs if not o.failed]
        total = len(outs)
        m = len(ok)
        p0 = sum(o.multiplicity == 0 for o in ok) / m if m else math.nan
        p1 = sum(o.multiplicity == 1 for o in ok) / m if m else math.nan
        p2 = sum(o.multiplicity >= 2 for o in ok) / m if m else math.nan
        sig = math.sqrt(p1 * (1 - p1) / m) if m else math.nan
        rows.append(OccurrenceRow(n, total, p0, p1, p2, (total - m) / total, sig))
    return OccurrenceTable(rows, outcomes)


def write_table(table: OccurrenceTable, csv_path, jsonl_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "trials", "p_zigzag", "p_one_kink", "p_multi", "p_failed", "sigma_one_kink"])
        for r in table.rows:
            w.writerow([r.n, r.trials, repr(r.p_zigzag), repr(r.p_one_kink), repr(r.p_multi), repr(r.p_failed),
                        repr(r.sigma_one_kink)])
    with open(jsonl_path, "w") as fh:
        for o in table.outcomes:
            d = o.to_json()
            d.pop("wall_time")
            fh.write(json.dumps(d, sort_keys=True) + "\n")
