import json

import numpy as np
import pytest

from kinktrap.dynamics import NO_COOLING, ScaledLaser, SystemState, simulate
from kinktrap.errors import ConfigError, CountMismatch, ExposureUnderrun, OverlappingSpots
from kinktrap.imaging import (
    CameraConfig,
    blur_metric,
    extract_positions,
    read_pgm,
    render_frame,
    render_static,
    write_pgm,
)
from kinktrap.model import default_laser
from kinktrap.statics import ground_state

CAM = CameraConfig(width=128, height=32, exposure=1e-4)


def test_camera_validation():
    with pytest.raises(ConfigError):
        CameraConfig(pixel_size=0.0)
    with pytest.raises(ConfigError):
        CameraConfig(exposure=-1.0)


def test_pixel_mapping_round_trip():
    uv = np.array([[3e-6, -2e-6], [0.0, 0.0]])
    np.testing.assert_allclose(CAM.to_object(CAM.to_pixels(uv)), uv, atol=1e-18)


def test_static_single_ion_spread():
    cam = CameraConfig(width=64, height=64, psf_sigma=2e-6)
    fr = render_static(np.zeros((1, 3)), cam)
    assert fr.data.sum() == pytest.approx(1.0, rel=1e-9)
    raw = blur_metric(fr, np.zeros((1, 3)), subtract_psf=False)[0]
    # the pixel box adds pixel**2 / 12 to the PSF variance
    assert raw == pytest.approx(np.sqrt(cam.psf_sigma**2 + cam.pixel_size**2 / 12), rel=0.05)


def test_round_trip_static(trap, scale):
    pos = ground_state(8, trap).positions * scale.length
    cam = CameraConfig(width=256, height=32)
    found = extract_positions(render_static(pos, cam), 8)
    uv = cam.project(pos)
    uv = uv[np.argsort(uv[:, 0])]
    rms = np.sqrt(np.mean(np.sum((found - uv) ** 2, axis=1))) / cam.pixel_size
    assert rms < 0.25


def test_count_mismatch(trap, scale):
    pos = ground_state(5, trap).positions * scale.length
    cam = CameraConfig(width=256, height=32)
    with pytest.raises(CountMismatch) as ei:
        extract_positions(render_static(pos, cam), 6)
    assert ei.value.found == 5 and ei.value.expected == 6


def test_overlapping_spots():
    pos = np.array([[0.0, 0.0, 0.0], [1e-6, 0.0, 0.0]])
    with pytest.raises(OverlappingSpots) as ei:
        blur_metric(render_static(pos, CAM), pos)
    assert ei.value.pairs == [(0, 1)]


def _traj(trap, scale, duration_s):
    st = SystemState([[-0.7, 0.01, 0.0], [0.7, -0.01, 0.0]], [[0.0, 0.02, 0.0], [0.0, 0.0, 0.02]])
    return simulate(st, trap, NO_COOLING, duration_s / scale.time, 0.01, 5)


def test_exposure_underrun(trap, scale):
    with pytest.raises(ExposureUnderrun):
        render_frame(_traj(trap, scale, 1e-5), CAM, scale)


def test_linearity(trap, scale):
    tr = _traj(trap, scale, 2.2e-4)
    half = len(tr) // 2
    full = render_frame(tr, CAM, scale, exposure=(tr.times[-1] - tr.times[0]) * scale.time)
    from kinktrap.dynamics import Trajectory

    first = Trajectory(tr.positions[:half], tr.velocities[:half], tr.times[:half], tr.dt, tr.stride)
    second = Trajectory(tr.positions[half:], tr.velocities[half:], tr.times[half:], tr.dt, tr.stride)
    fa = render_frame(first, CAM, scale, exposure=(first.times[-1] - first.times[0]) * scale.time)
    fb = render_frame(second, CAM, scale, exposure=(second.times[-1] - second.times[0]) * scale.time)
    np.testing.assert_allclose((fa + fb).data, full.data, rtol=1e-12, atol=1e-25)


def test_laser_weighting(trap, scale):
    tr = _traj(trap, scale, 2e-4)
    las = ScaledLaser.from_laser(default_laser(), scale)
    fr = render_frame(tr, CAM, scale, las)
    assert fr.normalization["weighting"] == "scattering_rate"
    assert fr.data.sum() > 0


def test_pgm_round_trip(tmp_path, trap, scale):
    fr = render_frame(_traj(trap, scale, 2e-4), CAM, scale)
    write_pgm(fr, tmp_path / "f.pgm")
    img = read_pgm(tmp_path / "f.pgm")
    assert img.shape == (CAM.height, CAM.width)
    meta = json.loads((tmp_path / "f.pgm.json").read_text())
    np.testing.assert_allclose(img / meta["scale_to_counts"], fr.data, atol=1.0 / meta["scale_to_counts"])
    assert img.max() == 65535
