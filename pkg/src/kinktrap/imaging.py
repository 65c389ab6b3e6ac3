"""Synthetic fluorescence images, per-ion blur and centroid extraction.

Image coordinates: column index runs along the trap axis (x), row index
along the in-plane radial direction (y); row-major storage with the origin
at the top-left pixel. Pixel ``(r, c)`` covers the object-plane square
centred at ``u = (c - (W - 1) / 2) * pixel``, ``v = (r - (H - 1) / 2) * pixel``
relative to ``CameraConfig.center``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import label, maximum_filter
from scipy.optimize import least_squares
from scipy.special import erf

from .dynamics import ScaledLaser, Trajectory, scattering_rate
from .errors import ConfigError, CountMismatch, ExposureUnderrun, OverlappingSpots
from .model import UnitScale


@dataclass(frozen=True)
class CameraConfig:
    """Object-plane camera model (SI units)."""

    pixel_size: float = 0.8e-6
    width: int = 1024
    height: int = 64
    exposure: float = 0.2
    psf_sigma: float = 1.0e-6
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.pixel_size > 0 and self.psf_sigma > 0 and self.exposure > 0):
            raise ConfigError("pixel size, PSF width and exposure must be positive")
        if self.width < 1 or self.height < 1:
            raise ConfigError("frame extent must be at least one pixel")

    def project(self, positions: np.ndarray) -> np.ndarray:
        """Object-plane (u, v) in metres for (..., 3) positions in metres.

        The view axis is z tilted by ``tilt_x`` about the x axis and
        ``tilt_y`` about the y axis.
        """
        p = np.asarray(positions, dtype=float)
        cx, sx = math.cos(self.tilt_x), math.sin(self.tilt_x)
        cy, sy = math.cos(self.tilt_y), math.sin(self.tilt_y)
        u = cy * p[..., 0] - sy * p[..., 2]
        v = cx * p[..., 1] - sx * (sy * p[..., 0] + cy * p[..., 2])
        return np.stack([u - self.center[0], v - self.center[1]], axis=-1)

    def pixel_edges(self) -> tuple[np.ndarray, np.ndarray]:
        cu = (np.arange(self.width + 1) - self.width / 2.0) * self.pixel_size
        cv = (np.arange(self.height + 1) - self.height / 2.0) * self.pixel_size
        return cu, cv

    def to_pixels(self, uv: np.ndarray) -> np.ndarray:
        """(u, v) metres to fractional (column, row)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([uv[..., 0] / self.pixel_size + (self.width - 1) / 2.0,
                         uv[..., 1] / self.pixel_size + (self.height - 1) / 2.0], axis=-1)

    def to_object(self, cr: np.ndarray) -> np.ndarray:
        cr = np.asarray(cr, dtype=float)
        return np.stack([(cr[..., 0] - (self.width - 1) / 2.0) * self.pixel_size,
                         (cr[..., 1] - (self.height - 1) / 2.0) * self.pixel_size], axis=-1)


@dataclass
class ImageFrame:
    data: np.ndarray
    camera: CameraConfig
    normalization: dict = field(default_factory=dict)

    def __add__(self, other: "ImageFrame") -> "ImageFrame":
        return ImageFrame(self.data + other.data, self.camera, {"combined": True})


def _pixel_weights(centers: np.ndarray, edges: np.ndarray, sigma: float) -> np.ndarray:
    # fraction of a 1D Gaussian falling in each pixel, shape (points, pixels)
    z = (edges[None, :] - centers[:, None]) / (math.sqrt(2.0) * sigma)
    c = 0.5 * erf(z)
    return c[:, 1:] - c[:, :-1]


def render_points(uv: np.ndarray, weights: np.ndarray, camera: CameraConfig, chunk: int = 4096) -> np.ndarray:
    """Accumulate Gaussian spots at object-plane points (metres)."""
    eu, ev = camera.pixel_edges()
    img = np.zeros((camera.height, camera.width))
    for s in range(0, len(uv), chunk):
        cu = _pixel_weights(uv[s:s + chunk, 0], eu, camera.psf_sigma)
        cv = _pixel_weights(uv[s:s + chunk, 1], ev, camera.psf_sigma)
        img += (cv * weights[s:s + chunk, None]).T @ cu
    return img


def render_frame(trajectory: Trajectory, camera: CameraConfig, scale: UnitScale, laser: ScaledLaser | None = None,
                 exposure: float | None = None) -> ImageFrame:
    """Integrate fluorescence over the first ``exposure`` seconds of a trajectory.

    Each snapshot deposits, per ion, a PSF weighted by the instantaneous
    scattering rate (uniform weights without a laser) times the snapshot
    interval.
    """
    exposure = camera.exposure if exposure is None else exposure
    t = trajectory.times * scale.time
    covered = t[-1] - t[0]
    if len(trajectory) > 1 and covered < exposure * (1 - 1e-9):
        raise ExposureUnderrun(f"trajectory covers {covered:.3e} s, exposure is {exposure:.3e} s")
    if len(trajectory) > 1:
        nfr = int(np.searchsorted(t - t[0], exposure * (1 + 1e-12), side="right"))
        dt = trajectory.dt * trajectory.stride * scale.time
    else:
        nfr, dt = 1, exposure
    pos = trajectory.positions[:nfr] * scale.length
    if laser is not None:
        w = np.stack([scattering_rate(v, laser) for v in trajectory.velocities[:nfr]]) / scale.time
    else:
        w = np.ones(pos.shape[:2])
    w = w * dt
    uv = camera.project(pos).reshape(-1, 2)
    img = render_points(uv, w.ravel(), camera)
    return ImageFrame(img, camera, {"frames": int(nfr), "exposure_s": float(exposure),
                                    "weighting": "scattering_rate" if laser is not None else "uniform",
                                    "units": "photons" if laser is not None else "ion_seconds"})


def render_static(positions_m: np.ndarray, camera: CameraConfig, weight: float = 1.0) -> ImageFrame:
    uv = camera.project(np.asarray(positions_m))
    img = render_points(uv, np.full(len(uv), weight), camera)
    return ImageFrame(img, camera, {"frames": 1, "weighting": "uniform"})


def _regions(cols: np.ndarray, width: int) -> np.ndarray:
    # axial strips between midpoints of neighbouring spots
    order = np.argsort(cols, kind="stable")
    mids = 0.5 * (cols[order][1:] + cols[order][:-1])
    bounds = np.r_[-0.5, mids, width - 0.5]
    out = np.empty((len(cols), 2))
    out[order, 0] = bounds[:-1]
    out[order, 1] = bounds[1:]
    return out


def blur_metric(frame: ImageFrame, reference_positions: np.ndarray, *, min_separation: float = 3.0,
                subtract_psf: bool = True) -> np.ndarray:
    """Per-ion RMS spread (metres) along the radial image axis.

    Each ion owns the axial strip of pixels closer (in x) to it than to any
    other ion; within that strip the background-subtracted intensity's
    second moment along v is reported. ``reference_positions`` are (N, 3)
    positions in metres. With ``subtract_psf`` the PSF variance is removed
    in quadrature, leaving the motional spread. Raises
    :class:`OverlappingSpots` when two ions are closer than
    ``min_separation`` PSF widths along the axis.
    """
    cam = frame.camera
    uv = cam.project(np.asarray(reference_positions, dtype=float))
    cr = cam.to_pixels(uv)
    cols = cr[:, 0]
    order = np.argsort(cols, kind="stable")
    gap = np.diff(cols[order]) * cam.pixel_size
    bad = np.nonzero(gap < min_separation * cam.psf_sigma)[0]
    if bad.size:
        pairs = [(int(order[i]), int(order[i + 1])) for i in bad]
        raise OverlappingSpots(f"{len(pairs)} ion pairs have overlapping assignment regions", pairs=pairs)
    img = frame.data
    far = img < 1e-6 * img.max()
    bg = float(np.median(img[far])) if far.any() else 0.0
    data = np.clip(img - bg, 0.0, None)
    reg = _regions(cols, cam.width)
    c_idx = np.arange(cam.width)
    v = (np.arange(cam.height) - (cam.height - 1) / 2.0) * cam.pixel_size
    out = np.empty(len(cols))
    for i in range(len(cols)):
        sel = (c_idx >= reg[i, 0]) & (c_idx < reg[i, 1])
        prof = data[:, sel].sum(axis=1)
        tot = prof.sum()
        if tot <= 0:
            out[i] = math.nan
            continue
        mu = (prof * v).sum() / tot
        var = (prof * (v - mu) ** 2).sum() / tot
        if subtract_psf:
            var -= cam.psf_sigma**2
        out[i] = math.sqrt(max(var, 0.0))
    return out


def _spot_model(params, cols, rows, edges_u, edges_v, sigma_px):
    a, c0, r0, bg = params
    s = math.sqrt(2.0) * sigma_px
    wu = 0.5 * (erf((cols + 0.5 - c0) / s) - erf((cols - 0.5 - c0) / s))
    wv = 0.5 * (erf((rows + 0.5 - r0) / s) - erf((rows - 0.5 - r0) / s))
    return a * wv[:, None] * wu[None, :] + bg


def extract_positions(frame: ImageFrame, expected_count: int, *, threshold: float = 0.1) -> np.ndarray:
    """Fitted object-plane positions (metres), ordered along the axis.

    Spots are seeded at local maxima brighter than ``threshold`` times the
    peak and refined with a pixel-integrated Gaussian least-squares fit.
    """
    if expected_count < 1:
        raise ConfigError("expected_count must be at least 1")
    cam = frame.camera
    img = frame.data
    peak = float(img.max()) if img.size else 0.0
    if not peak > 0:
        raise CountMismatch("frame is empty", found=0, expected=expected_count)
    sig = cam.psf_sigma / cam.pixel_size
    size = max(3, int(2 * math.ceil(1.5 * sig) + 1))
    maxima = (img == maximum_filter(img, size=size, mode="constant")) & (img > threshold * peak)
    # a spot centred on a pixel boundary gives a plateau of tied maxima
    labels = label(maxima, structure=np.ones((3, 3)))[0]
    rr, cc = np.nonzero(maxima)
    _, first = np.unique(labels[rr, cc], return_index=True)
    rr, cc = rr[first], cc[first]
    if len(rr) != expected_count:
        raise CountMismatch(f"found {len(rr)} spots, expected {expected_count}", found=len(rr), expected=expected_count)
    half = max(2, int(math.ceil(3 * sig)))
    out = []
    for r, c in zip(rr, cc):
        r0, r1 = max(0, r - half), min(cam.height, r + half + 1)
        c0, c1 = max(0, c - half), min(cam.width, c + half + 1)
        win = img[r0:r1, c0:c1]
        rows = np.arange(r0, r1, dtype=float)
        cols = np.arange(c0, c1, dtype=float)

        def resid(p):
            return (_spot_model(p, cols, rows, None, None, sig) - win).ravel()

        a0 = float(win.sum())
        fit = least_squares(resid, [a0, float(c), float(r), 0.0], x_scale=[a0, 1.0, 1.0, max(peak, 1e-300)])
        out.append(fit.x[1:3])
    cr = np.array(out)
    cr = cr[np.argsort(cr[:, 0], kind="stable")]
    return cam.to_object(cr)


def write_pgm(frame: ImageFrame, path, sidecar=None) -> None:
    """16-bit binary PGM scaled so the brightest pixel is 65535, plus JSON metadata."""
    img = frame.data
    peak = float(img.max())
    scale = 65535.0 / peak if peak > 0 else 0.0
    q = np.clip(np.rint(img * scale), 0, 65535).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    meta = {"camera": asdict(frame.camera), "normalization": frame.normalization, "scale_to_counts": scale,
            "peak": peak, "pixel_order": "row-major, origin top-left"}
    meta["camera"]["center"] = list(frame.camera.center)
    with open(sidecar or f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise OSError(f"{path} is not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h).reshape(h, w).astype(float)
