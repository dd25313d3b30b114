"""Envelope detection, image smoothing, and weighted-centroid echo detection.

The envelope detector computes the magnitude of the analytic signal
(quadrature via a 255-tap Hilbert-type FIR), low-passes it with a
zero-phase 2nd-order filter (default cutoff 1 kHz), and decimates to
10 kHz. Zero-phase filtering keeps echo centroids free of range bias.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, label, median_filter
from scipy.signal import butter, filtfilt

from .errors import ParameterError
from .signals import Waveform

ENVELOPE_CUTOFF = 1000.0     # Hz
ENVELOPE_RATE = 10_000.0     # Hz after decimation
HILBERT_TAPS = 255
DETECT_THRESHOLD = 0.5
MAX_DETECTIONS = 10


@dataclass(frozen=True)
class AcousticImage:
    """Range x azimuth intensity raster with bin metadata."""

    intensities: np.ndarray      # (range_bins, azimuth_bins), >= 0
    range_bin_size: float        # meters per range bin
    azimuth_bins: tuple          # degrees, one per column
    sample_rate_env: float       # Hz of the envelope rows

    def __post_init__(self):
        img = np.asarray(self.intensities, dtype=np.float64)
        object.__setattr__(self, "intensities", img)
        if img.ndim != 2:
            raise ParameterError(f"intensities must be 2-D, got shape {img.shape}")
        if img.shape[1] != len(self.azimuth_bins):
            raise ParameterError("azimuth_bins must match the number of image columns")
        if not np.all(np.isfinite(img)) or np.any(img < 0):
            raise ParameterError("intensities must be finite and >= 0")
        if self.range_bin_size <= 0:
            raise ParameterError(f"range_bin_size must be > 0, got {self.range_bin_size}")


@dataclass(frozen=True)
class EchoDetection:
    range_r: float
    azimuth_theta: float
    strength: float


@lru_cache(maxsize=4)
def _hilbert_fir(taps: int) -> np.ndarray:
    # Blackman-windowed ideal Hilbert transformer (type III, odd length).
    if taps % 2 == 0:
        raise ParameterError(f"Hilbert FIR length must be odd, got {taps}")
    m = np.arange(taps) - (taps - 1) // 2
    h = np.zeros(taps)
    odd = m % 2 != 0
    h[odd] = 2.0 / (np.pi * m[odd])
    return h * np.blackman(taps)


def envelope_channels(x: np.ndarray, fs: float, cutoff: float = ENVELOPE_CUTOFF):
    """Array-level envelope: analytic magnitude, LP filtered, decimated.

    Returns (envelope, envelope_sample_rate).
    """
    if cutoff >= fs / 2.0:
        raise ParameterError(f"cutoff {cutoff} Hz must be below Nyquist {fs / 2.0} Hz")
    quad = np.convolve(x, _hilbert_fir(HILBERT_TAPS), mode="same")
    mag = np.hypot(x, quad)
    b, a = butter(2, cutoff / (fs / 2.0))
    smooth = filtfilt(b, a, mag)
    factor = max(1, int(round(fs / ENVELOPE_RATE)))
    out = np.clip(smooth[::factor], 0.0, None)
    return out, fs / factor


def envelope(x: Waveform, cutoff: float = ENVELOPE_CUTOFF) -> Waveform:
    samples, fs_env = envelope_channels(x.samples, x.sample_rate, cutoff)
    return Waveform(samples, fs_env)


def smooth_image(img: AcousticImage, median_k: int = 3, gauss_sigma: float = 1.0) -> AcousticImage:
    """2-D median filter then Gaussian blur (3-sigma truncation, reflected edges)."""
    if median_k < 1 or median_k % 2 == 0:
        raise ParameterError(f"median_k must be odd and >= 1, got {median_k}")
    smoothed = median_filter(img.intensities, size=median_k, mode="reflect")
    if gauss_sigma > 0:
        smoothed = gaussian_filter(smoothed, sigma=gauss_sigma, truncate=3.0, mode="reflect")
    return AcousticImage(smoothed, img.range_bin_size, img.azimuth_bins, img.sample_rate_env)


def detect_echoes(
    img: AcousticImage,
    threshold_frac: float = DETECT_THRESHOLD,
    max_detections: int = MAX_DETECTIONS,
) -> list[EchoDetection]:
    """Weighted-centroid peak detection on a thresholded image.

    Binarizes at threshold_frac of the global maximum, labels 8-connected
    components, and reports each component's intensity-weighted centroid
    in physical units, strongest first.
    """
    if not 0.0 < threshold_frac < 1.0:
        raise ParameterError(f"threshold_frac must be in (0, 1), got {threshold_frac}")
    peak = img.intensities.max() if img.intensities.size else 0.0
    if peak <= 0.0:
        return []
    mask = img.intensities >= threshold_frac * peak
    labels, n_components = label(mask, structure=np.ones((3, 3), dtype=int))
    azimuths = np.asarray(img.azimuth_bins)
    detections = []
    for comp in range(1, n_components + 1):
        rows, cols = np.nonzero(labels == comp)
        w = img.intensities[rows, cols]
        total = w.sum()
        r_hat = float((w * rows).sum() / total) * img.range_bin_size
        theta_hat = float((w * azimuths[cols]).sum() / total)
        detections.append(EchoDetection(r_hat, theta_hat, float(w.max())))
    detections.sort(key=lambda d: d.strength, reverse=True)
    return detections[:max_detections]


def detections_to_csv(detections: list[EchoDetection], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "range_m", "azimuth_deg", "strength"])
        for i, d in enumerate(detections):
            writer.writerow([i, f"{d.range_r:.6f}", f"{d.azimuth_theta:.4f}", f"{d.strength:.6g}"])


def image_to_pgm(img: AcousticImage, path: str | Path) -> None:
    """8-bit max-normalized PGM (row = range bin, column = azimuth bin)."""
    write_pgm(img.intensities, path)
    meta = {
        "range_bin_size": img.range_bin_size,
        "azimuth_bins": list(img.azimuth_bins),
        "sample_rate_env": img.sample_rate_env,
    }
    import json

    Path(path).with_suffix(".json").write_text(json.dumps(meta))


def write_pgm(raster: np.ndarray, path: str | Path) -> None:
    peak = raster.max()
    scaled = raster / peak * 255.0 if peak > 0 else np.zeros_like(raster)
    data = scaled.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
