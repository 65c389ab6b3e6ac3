"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (visible even with output capture)
before asserting.
"""

import json
import math
import time

import numpy as np
import pytest
import scipy.constants as const

from kinktrap.cli import run
from kinktrap.dynamics import NO_COOLING, harmonic_energy, rf_equilibrium, simulate
from kinktrap.imaging import CameraConfig, blur_metric, extract_positions, render_frame, render_static
from kinktrap.model import UnitScale, default_trap
from kinktrap.modes import (
    anharmonic_scan,
    hessian,
    kink_mode,
    localization,
    normal_modes,
    planarity_edge,
    thermal_sample,
    tune_scan,
)
from kinktrap.pnscan import barrier_sweep, pn_barrier
from kinktrap.quenchlab import kink_statistics
from kinktrap.statics import (
    EquilibriumConfig,
    Structure,
    centered_kink,
    classify,
    find_kinks,
    ground_state,
    potential,
    relax,
    structural_census,
)


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
        assert ok, detail

    return _report


@pytest.fixture(scope="module")
def kink50(trap):
    return centered_kink(50, trap)


def test_criterion_01_analytic_oracles(trap, scale, report):
    t0 = time.perf_counter()
    two = relax([[-1.0, 0.0, 0.0], [1.3, 0.0, 0.0]], trap)
    d_si = np.ptp(two.positions[:, 0]) * scale.length
    sp = trap.species
    d_ref = (sp.charge**2 / (2 * math.pi * const.epsilon_0 * sp.mass * trap.secular_axial**2)) ** (1 / 3)
    err2 = abs(d_si / d_ref - 1)
    three = relax([[-1.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.9, 0.0, 0.0]], trap)
    x3 = np.sort(three.positions[:, 0])
    err3 = np.abs(x3 - np.array([-1, 0, 1]) * (5 / 4) ** (1 / 3)).max()
    w = normal_modes(two).frequencies
    errb = np.min(np.abs(w - math.sqrt(3.0))) / math.sqrt(3.0)
    elapsed = time.perf_counter() - t0
    ok = err2 < 1e-10 and err3 < 1e-8 and errb < 1e-8 and elapsed < 1.0
    report(1, "analytic oracles", ok,
           f"two-ion rel err {err2:.1e}, three-ion err {err3:.1e}, breathing rel err {errb:.1e}, {elapsed:.2f} s")


def test_criterion_02_numerical_hygiene(trap, scale, report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        p = rng.normal(size=(6, 3))
        h = hessian(EquilibriumConfig(p, 0.0, 0.0, trap))
        fd = np.empty_like(h)
        for k in range(18):
            d = np.zeros(18)
            d[k] = 1e-6
            fd[:, k] = (potential(p + d.reshape(6, 3), trap)[1] - potential(p - d.reshape(6, 3), trap)[1]).ravel() / 2e-6
        worst = max(worst, np.abs(fd - h).max() / np.abs(h).max())
    # energy drift over one million undamped steps, windowed means at both ends
    c = ground_state(10, trap)
    state = thermal_sample(normal_modes(c), 10 * scale.kT_doppler, np.random.default_rng(1))
    tr = simulate(state, trap, NO_COOLING, 1e4, 0.01, 100)
    e = np.array([harmonic_energy(tr[i], trap) for i in range(len(tr))])
    w = len(e) // 10
    drift = abs(e[-w:].mean() - e[:w].mean()) / abs(e[0])
    spec = normal_modes(centered_kink(50, trap))
    com = max(np.min(np.abs(spec.frequencies - wk)) for wk in np.sqrt(trap.scaled().secular_squared))
    ok = worst <= 1e-6 and drift < 1e-6 and com < 1e-10 and len(tr) == 10001
    report(2, "numerical hygiene", ok,
           f"Hessian vs FD {worst:.1e}, energy drift {drift:.1e} over 1e6 steps, COM error {com:.1e}")


def test_criterion_03_micromotion_equivalence(anisotropic_trap, report):
    fullrf = default_trap("fullrf", ratio=1.34)
    ref = ground_state(31, anisotropic_trap)
    scale = UnitScale.from_trap(anisotropic_trap)
    rows = []
    for mode in ("mean", "stroboscopic"):
        avg = rf_equilibrium(ref.positions, fullrf, mode=mode)
        rows.append(np.linalg.norm(avg.positions - ref.positions, axis=1).mean() * scale.length * 1e6)
    ok = classify(ref).kind is Structure.ZIGZAG and max(rows) < 0.5
    report(3, "micromotion equivalence", ok,
           f"N=31 ratio 1.34 mean deviation {rows[0]:.3f} um (RF average), {rows[1]:.3f} um (stroboscopic)")


def test_criterion_04_structural_census(trap, scale, report):
    rows = structural_census(range(22, 60), trap)
    kinds = {n: c for n, c in rows}
    zig = next(n for n, c in rows if c.kind is not Structure.LINEAR)
    three = next(n for n, c in rows if c.kind is Structure.THREE_D)
    out_um = kinds[three].max_out_of_plane * scale.length * 1e6
    ok = abs(zig - 27) <= 3 and abs(three - 53) <= 3 and out_um <= 1.5
    report(4, "structural census", ok, f"zigzag onset N={zig}, out-of-plane onset N={three} at {out_um:.2f} um")


def test_criterion_05_kink_mode(trap, kink50, report):
    spec = normal_modes(kink50)
    core = find_kinks(kink50)[0].core_ion_indices
    m = kink_mode(spec, core)
    loc = localization(spec)
    lowest = spec.frequencies[0]
    core_found = set(loc.dominant_ions[m][:2]) == set(core)
    edge = planarity_edge(50, trap, 1.10, 1.14)
    ratios = [1.01, 1.015, 1.02, 1.04, 1.06, 1.08, 1.10, edge - 1e-5]
    pts = tune_scan(50, trap, ratios)
    good = [p for p in pts if p.status == "ok"]
    lo = min(p.omega_low for p in good)
    hi = max(p.omega_low for p in good)
    ok = m == 0 and lowest < 1.0 and core_found and len(good) == len(pts) and lo < 0.2 and hi > 1.5
    report(5, "kink localized mode", ok,
           f"omega_low={lowest:.3f} wx, IPR {loc.ipr[m]:.3f} on ions {loc.dominant_ions[m][:2]} (core {core}); "
           f"tune range {lo:.3f}..{hi:.3f} wx, planarity edge {edge:.5f}")


def test_criterion_06_anharmonicity(kink50, report):
    spec = normal_modes(kink50)
    m = kink_mode(spec)
    extent = classify(kink50).transverse_amplitude
    k0, k1 = anharmonic_scan(spec, m, [1e-4, extent])
    com = int(np.argmin(np.abs(spec.frequencies - 1.0)))
    c0, c1 = anharmonic_scan(spec, com, [1e-4, extent])
    shift = abs(k1.frequency / k0.frequency - 1)
    com_shift = abs(c1.frequency / c0.frequency - 1)
    ok = k1.status == "ok" and shift > 0.10 and com_shift <= 1e-6
    report(6, "anharmonicity", ok,
           f"kink mode shift {100 * shift:.1f}% at amplitude {extent:.3f} (radial extent), COM shift {com_shift:.1e}")


def test_criterion_07_pn_potential(trap, scale, report):
    kt = scale.kT_doppler
    res = {n: pn_barrier(n, trap) for n in (44, 46)}
    shape_ok = all(r.status == "ok" and r.profile.asymmetry() < 0.05 and not r.profile.interior_maxima(1e-9 * kt)
                   for r in res.values())
    for r in res.values():
        prof = r.profile
        centre = prof.energies[np.argmin(np.abs(prof.positions))]
        shape_ok = shape_ok and centre <= prof.energies.min() + 1e-9 and r.barrier > 0
    b44, b46 = res[44].barrier / kt, res[46].barrier / kt
    sweep = barrier_sweep(range(40, 57), trap)
    ok = shape_ok and 5 <= b44 <= 15 and 10 <= b46 <= 30 and sweep.r_squared is not None and sweep.r_squared > 0.9
    asym = max(r.profile.asymmetry() for r in res.values())
    report(7, "Peierls-Nabarro potential", ok,
           f"barrier(44)={b44:.2f}, barrier(46)={b46:.2f} kB T_D, asymmetry {asym:.1e}, "
           f"quadratic R^2={sweep.r_squared:.4f} over N=40..56 (excluded {sweep.excluded})")


def test_criterion_08_quench_statistics(trap, report):
    table = kink_statistics([30, 44, 50, 54], 100, 20240611, trap)
    rows = {r.n: r for r in table.rows}
    ok_runs = [o for o in table.outcomes if not o.failed]
    multi = sum(o.multiplicity >= 2 for o in ok_runs)
    far = [p for o in ok_runs for p in o.kink_positions_lattice if abs(p) >= 2]
    ok = (rows[30].p_one_kink < 0.1 and all(0.3 <= rows[n].p_one_kink <= 0.7 for n in (50, 54))
          and multi == 0 and not far)
    detail = ", ".join(f"N={n}: P1={r.p_one_kink:.2f}+-{r.sigma_one_kink:.2f} failed={r.p_failed:.2f}"
                       for n, r in rows.items())
    report(8, "quench statistics", ok, f"{detail}; multi-kink finals {multi}; off-center kinks {len(far)}")


def test_criterion_09_imaging(trap, scale, kink50, report):
    cam = CameraConfig(exposure=1e-3)
    spec = normal_modes(kink50)
    core = list(find_kinks(kink50)[0].core_ion_indices)
    m = kink_mode(spec, core)
    ref = kink50.positions * scale.length
    duration = cam.exposure / scale.time + 1.0
    frames = {}
    for label, modes in (("all", None), ("single", [m])):
        total = None
        for seed in range(4):
            st = thermal_sample(spec, scale.kT_doppler, np.random.default_rng(seed), modes=modes)
            fr = render_frame(simulate(st, trap, NO_COOLING, duration, 0.01, 10), cam, scale)
            total = fr if total is None else total + fr
        frames[label] = blur_metric(total, ref)
    spread = frames["all"]
    others = np.delete(spread, core)
    ratio = spread[core].min() / np.nanmedian(others)
    single = (frames["single"][core] / spread[core]).min()
    static = render_static(ref, cam)
    found = extract_positions(static, 50)
    uv = cam.project(ref)
    uv = uv[np.argsort(uv[:, 0])]
    rms_px = np.sqrt(np.mean(np.sum((found - uv) ** 2, axis=1))) / cam.pixel_size
    ok = ratio >= 3 and single >= 0.8 and rms_px <= 0.25
    report(9, "imaging", ok,
           f"core/median spread {ratio:.2f}, single-mode fraction {single:.2f}, round-trip {rms_px:.1e} px RMS")


def _outputs(d):
    files = {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}
    man = json.loads((d / "manifest.json").read_text())
    man.pop("timing")
    return files, man


def test_criterion_10_determinism(tmp_path, report):
    fast = ["-s", "quench.ramp_time_s=1e-4", "-s", "quench.settle_time_s=2e-4", "-s", "quench.final_time_s=1e-4"]
    commands = {
        "relax": ["relax", "-n", "31", "-s", "trap.ratio=1.34"],
        "modes": ["modes", "-n", "50", "--kink", "--amplitudes", "1e-8,3e-7"],
        "quench": ["quench", "-n", "20,30", "--trials", "3", "--seed", "9"] + fast,
        "pn": ["pn", "-n", "42"],
        "sweep": ["sweep", "-n", "41..42"],
        "render": ["render", "-n", "50", "--kink", "--seed", "3", "-s", "camera.exposure_s=2e-4"],
        "tune": ["tune", "-n", "50", "--ratios", "1.02,1.06"],
    }
    same = {}
    for name, argv in commands.items():
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        codes = run(argv + ["-o", str(a)]), run(argv + ["-o", str(b)])
        same[name] = codes == (0, 0) and _outputs(a) == _outputs(b)
    ok = all(same.values())
    report(10, "determinism", ok, ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
