import json

import numpy as np
import pytest

from kinktrap.errors import ConfigError
from kinktrap.quenchlab import (
    QuenchSchedule,
    kink_statistics,
    quench_trial,
    random_cloud,
    trial_seed,
    write_table,
)

FAST = QuenchSchedule(ramp_time=50.0, gamma=0.2, settle_time=100.0, settle_temperature=2.0, final_time=50.0)


def test_cloud_determinism(trap):
    a = random_cloud(20, 0.1, trap, np.random.default_rng(5))
    b = random_cloud(20, 0.1, trap, np.random.default_rng(5))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)
    d = np.linalg.norm(a.positions[:, None] - a.positions[None], axis=-1)
    assert d[np.triu_indices(20, 1)].min() >= 0.05


def test_cloud_cold_limit(trap):
    s = random_cloud(1, 1e-12, trap, np.random.default_rng(0))
    assert np.abs(s.positions).max() < 1e-5
    assert np.abs(s.velocities).max() < 1e-4


def test_cloud_equipartition(trap):
    rng = np.random.default_rng(1)
    kt = 0.05
    ke = np.mean([random_cloud(3, kt, trap, rng).kinetic_energy() for _ in range(10000)])
    assert ke == pytest.approx(1.5 * 3 * kt, rel=0.02)
    with pytest.raises(ConfigError):
        random_cloud(3, 0.0, trap, rng)


def test_trial_seed_stable():
    assert trial_seed(7, 30, 0) == trial_seed(7, 30, 0)
    assert len({trial_seed(7, n, i) for n in (30, 31) for i in range(50)}) == 100


def test_quench_small_crystal(trap):
    out = quench_trial(12, trap, FAST, seed=3)
    assert out.structure == "linear"
    assert out.multiplicity == 0 and not out.failed
    assert out.simulated_time >= 200.0


def test_statistics_single_trial(trap, tmp_path):
    t1 = kink_statistics([12, 20], 1, 42, trap, FAST)
    for r in t1.rows:
        assert r.p_one_kink in (0.0, 1.0)
        assert r.sigma_one_kink == 0.0
        assert r.p_zigzag + r.p_one_kink + r.p_multi <= 1.0
    write_table(t1, tmp_path / "a.csv", tmp_path / "a.jsonl")
    t2 = kink_statistics([12, 20], 1, 42, trap, FAST, workers=2)
    write_table(t2, tmp_path / "b.csv", tmp_path / "b.jsonl")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    rec = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [r["n"] for r in rec] == [12, 20]
    assert "wall_time" not in rec[0]


def test_schedule_validation():
    with pytest.raises(ConfigError):
        QuenchSchedule(dt=0.0)
    with pytest.raises(ConfigError):
        kink_statistics([10], 0, 1, None)
