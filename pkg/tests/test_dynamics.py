import numpy as np
import pytest

from kinktrap.dynamics import (
    NO_COOLING,
    CoolingMode,
    CoolingParams,
    ScaledLaser,
    SystemState,
    Trajectory,
    cooling_force,
    coulomb_force,
    doppler_damping,
    harmonic_energy,
    load_trajectory,
    read_trajectory_csv,
    save_trajectory,
    scattering_rate,
    simulate,
    total_force,
    write_trajectory_csv,
)
from kinktrap.errors import CoincidentIons, ConfigError, TimestepTooLarge
from kinktrap.model import default_laser, default_trap


def test_single_ion_force_is_trap_curvature(trap):
    st = SystemState([[0.3, -0.2, 0.1]])
    w2 = trap.scaled().secular_squared
    np.testing.assert_allclose(total_force(st, trap), -w2 * np.array([[0.3, -0.2, 0.1]]), rtol=1e-14)


def test_two_ion_coulomb_force():
    f = coulomb_force(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    np.testing.assert_allclose(f, [[-0.25, 0, 0], [0.25, 0, 0]], rtol=1e-14)


def test_newton_third_law(rng):
    f = coulomb_force(rng.normal(size=(9, 3)))
    np.testing.assert_allclose(f.sum(axis=0), 0.0, atol=1e-12)


def test_coincident_ions_rejected(trap):
    with pytest.raises(CoincidentIons):
        total_force(SystemState([[0.1, 0, 0], [0.1, 0, 0]]), trap)


def test_timestep_limit_fullrf():
    t = default_trap("fullrf")
    with pytest.raises(TimestepTooLarge):
        simulate(SystemState([[0.1, 0, 0]]), t, NO_COOLING, 1.0, 0.01)


def test_energy_conserved_short(trap):
    st = SystemState([[-1.0, 0.02, 0.0], [0.1, -0.03, 0.01], [1.1, 0.0, 0.02]], [[0.01, 0, 0], [0, 0.02, 0], [0, 0, 0]])
    tr = simulate(st, trap, NO_COOLING, 20.0, 0.002, 50)
    e = [harmonic_energy(s, trap) for s in (tr[0], tr.final)]
    # instantaneous (shadow-energy) fluctuation of Verlet is O(dt**2)
    assert abs(e[1] - e[0]) / abs(e[0]) < 1e-5


def test_determinism_and_seed_sensitivity(trap):
    st = SystemState([[-1.0, 0.02, 0.0], [1.0, -0.02, 0.0]])
    cool = CoolingParams.viscous(0.1, 0.01)
    a = simulate(st, trap, cool, 5.0, 0.01, 10, 7)
    b = simulate(st, trap, cool, 5.0, 0.01, 10, 7)
    c = simulate(st, trap, cool, 5.0, 0.01, 10, 8)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_langevin_equipartition(trap):
    # single ion, axial kinetic temperature relaxes to the bath value
    kt = 0.01
    tr = simulate(SystemState([[0.0, 0.0, 0.0]]), trap, CoolingParams.viscous(0.5, kt), 4000.0, 0.01, 10, 3)
    v2 = tr.velocities[len(tr) // 10:, 0, :] ** 2
    np.testing.assert_allclose(v2.mean(axis=0), kt, rtol=0.1)


def test_scattering_rate_and_damping(scale):
    las = ScaledLaser.from_laser(default_laser(), scale)
    r0 = scattering_rate(np.zeros((1, 3)), las)[0]
    s = 0.2
    assert r0 == pytest.approx(0.5 * las.gamma * s / (1 + s + 4.0))
    gamma = doppler_damping(las)
    assert gamma > 0
    # finite difference of the mean force along the beam reproduces the friction rate
    dv = 1e-4
    d = las.direction
    p = CoolingParams(laser=las, recoil=False)
    fp = cooling_force(dv * d[None, :], p) @ d
    fm = cooling_force(-dv * d[None, :], p) @ d
    assert -(fp - fm)[0] / (2 * dv) == pytest.approx(gamma, rel=1e-6)


def test_cooling_modes(scale):
    assert NO_COOLING.mode is CoolingMode.NONE
    assert CoolingParams.viscous(0.1).mode is CoolingMode.VISCOUS
    assert CoolingParams.doppler(default_laser(), scale).mode is CoolingMode.DOPPLER
    with pytest.raises(ConfigError):
        CoolingParams.viscous(-1.0)


def test_doppler_cooling_reaches_millikelvin(trap, scale):
    # one ion, laser cooling with recoil: temperature within a factor of a few of T_D
    cool = CoolingParams.doppler(default_laser(), scale)
    st = SystemState([[0.0, 0.0, 0.0]], [[0.05, 0.05, 0.05]])
    tr = simulate(st, trap, cool, 3000.0, 0.005, 20, 11)
    v2 = (tr.velocities[len(tr) // 2:, 0, 0] ** 2).mean()
    assert 0.3 < v2 / scale.kT_doppler < 5.0


def test_trajectory_io(tmp_path, trap, scale):
    st = SystemState([[-1.0, 0.02, 0.0], [1.0, -0.02, 0.0]], [[0.0, 0.01, 0.0], [0.0, 0.0, 0.01]])
    tr = simulate(st, trap, NO_COOLING, 1.0, 0.01, 20)
    p = tmp_path / "t.csv"
    write_trajectory_csv(tr, p, scale)
    back = read_trajectory_csv(p, scale)
    np.testing.assert_allclose(back.positions, tr.positions, rtol=1e-12)
    np.testing.assert_allclose(back.velocities, tr.velocities, rtol=1e-12, atol=1e-300)
    assert back.stride == 20
    save_trajectory(tr, tmp_path / "t.npz")
    z = load_trajectory(tmp_path / "t.npz")
    assert np.array_equal(z.positions, tr.positions)
    assert isinstance(tr.concatenate(tr), Trajectory)
