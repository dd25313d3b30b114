"""ERB-spaced gammatone filterbank and cochleogram construction.

An echo window is re-beamformed toward its detection, split into 40
gammatone bands equally spaced on the ERB-rate scale between 20 kHz
and 110 kHz, and reduced to 106 non-overlapping frame energies per
band. The 40 x 106 raster (log-compressed, max-normalized) is the
network input; changing the window or frame constants changes that
shape and is rejected downstream unless the network config matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterError
from .geometry import SPEED_OF_SOUND, ArrayGeometry
from .imaging import EchoDetection, write_pgm
from .signals import Waveform

N_BANDS = 40
F_LO = 20_000.0
F_HI = 110_000.0
GAMMATONE_ORDER = 4
ERB_WIDTH_FACTOR = 1.019     # bandwidth-to-decay factor of the gammatone literature

WINDOW_SAMPLES = 5300        # ~11.78 ms at 450 kHz; 106 frames of 50 samples
FRAME_SAMPLES = 50
N_FRAMES = WINDOW_SAMPLES // FRAME_SAMPLES
WINDOW_PRE_SECONDS = 0.5e-3  # window starts this long before the echo onset
LOG_EPS = 1e-6


def erb_rate(f_hz):
    """ERB-rate scale value of a frequency (Glasberg-Moore convention)."""
    return 21.4 * np.log10(4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def erb_rate_inverse(rate):
    return 1000.0 * (10.0 ** (np.asarray(rate) / 21.4) - 1.0) / 4.37


def erb_bandwidth(f_hz):
    """Equivalent rectangular bandwidth at a center frequency, Hz."""
    return 24.7 * (4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def erb_spaced_centers(f_lo: float, f_hi: float, n: int) -> np.ndarray:
    """n center frequencies equally spaced on the ERB-rate scale."""
    if not 0.0 < f_lo < f_hi:
        raise ParameterError(f"need 0 < f_lo < f_hi, got ({f_lo}, {f_hi})")
    if n < 2:
        raise ParameterError(f"need at least 2 centers, got {n}")
    rates = np.linspace(erb_rate(f_lo), erb_rate(f_hi), n)
    return erb_rate_inverse(rates)


@dataclass(frozen=True)
class GammatoneBank:
    """40-channel 4th-order gammatone bank on the ERB-rate scale."""

    center_freqs: np.ndarray
    bandwidths: np.ndarray
    sample_rate: float
    order: int = GAMMATONE_ORDER

    def __post_init__(self):
        cf = np.asarray(self.center_freqs, dtype=np.float64)
        bw = np.asarray(self.bandwidths, dtype=np.float64)
        object.__setattr__(self, "center_freqs", cf)
        object.__setattr__(self, "bandwidths", bw)
        if cf.shape != (N_BANDS,) or bw.shape != (N_BANDS,):
            raise ParameterError(f"bank must have exactly {N_BANDS} channels, got {cf.size}")
        if np.any(np.diff(cf) <= 0):
            raise ParameterError("center frequencies must be strictly increasing")
        if cf[0] < F_LO - 1e-6 or cf[-1] > F_HI + 1e-6:
            raise ParameterError(f"center frequencies must lie within [{F_LO}, {F_HI}] Hz")
        spacing = np.diff(erb_rate(cf))
        if np.ptp(spacing) > 1e-9:
            raise ParameterError("centers must be equally spaced on the ERB-rate scale")


def default_bank(sample_rate: float) -> GammatoneBank:
    centers = erb_spaced_centers(F_LO, F_HI, N_BANDS)
    return GammatoneBank(centers, erb_bandwidth(centers), sample_rate)


def _band_coefficients(fc: float, bw: float, fs: float, order: int):
    # Cascade of `order` identical complex one-pole sections collapsed into
    # a single complex IIR; peak gain at fc normalized to one.
    pole = np.exp((-2.0 * np.pi * ERB_WIDTH_FACTOR * bw + 2.0j * np.pi * fc) / fs)
    a = np.poly([pole] * order)
    gain = (1.0 - np.abs(pole)) ** order
    return np.array([gain], dtype=np.complex128), a


def gammatone_band(x: np.ndarray, fc: float, bw: float, fs: float, order: int = GAMMATONE_ORDER):
    """One band signal; impulse response ~ t^3 exp(-2*pi*1.019*bw*t) cos(2*pi*fc*t)."""
    b, a = _band_coefficients(fc, bw, fs, order)
    return 2.0 * np.real(lfilter(b, a, x))


def gammatone_matrix(x: np.ndarray, bank: GammatoneBank) -> np.ndarray:
    """(40, n_samples) band decomposition of a 1-D signal."""
    out = np.empty((bank.center_freqs.size, x.size))
    for k, (fc, bw) in enumerate(zip(bank.center_freqs, bank.bandwidths)):
        out[k] = gammatone_band(x, fc, bw, bank.sample_rate, bank.order)
    return out


def gammatone_filter(x: Waveform, bank: GammatoneBank) -> list[Waveform]:
    if x.sample_rate != bank.sample_rate:
        raise ParameterError(
            f"sample-rate mismatch: signal at {x.sample_rate} Hz, bank at {bank.sample_rate} Hz"
        )
    return [Waveform(row, x.sample_rate) for row in gammatone_matrix(x.samples, bank)]


def frame_energies(bands: np.ndarray, frame_len: int = FRAME_SAMPLES) -> np.ndarray:
    """Non-overlapping per-band frame energies; frames tile the window exactly."""
    n_bands, n = bands.shape
    n_frames = n // frame_len
    clipped = bands[:, : n_frames * frame_len]
    return (clipped**2).reshape(n_bands, n_frames, frame_len).sum(axis=2)


def log_compress(v: np.ndarray, eps: float = LOG_EPS) -> np.ndarray:
    return np.log10(1.0 + v / eps)


def normalize_raster(v: np.ndarray) -> np.ndarray:
    """Scale into [0, 1] by the maximum; an all-zero raster stays zero."""
    peak = v.max()
    return v / peak if peak > 0 else v


@dataclass(frozen=True)
class Cochleogram:
    """40 x 106 non-negative raster, rows low-to-high frequency."""

    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.shape != (N_BANDS, N_FRAMES):
            raise ParameterError(f"cochleogram must be {N_BANDS}x{N_FRAMES}, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ParameterError("cochleogram values must be finite and >= 0")


def make_cochleogram(
    channels,
    g: ArrayGeometry,
    det: EchoDetection,
    bank: GammatoneBank,
    c_sound: float = SPEED_OF_SOUND,
    scene_id=None,
) -> Cochleogram:
    """Cochleogram of one detected echo from matched-filtered channels.

    Re-beamforms toward (det.azimuth, 0 deg), windows WINDOW_SAMPLES
    starting WINDOW_PRE_SECONDS before the echo's two-way-time sample,
    applies the gammatone bank, reduces to frame energies, and
    log-compresses + max-normalizes. Windows that run past the record
    bounds are zero-padded and flagged in metadata.
    """
    from .beamform import das_beamform

    beam = das_beamform(channels, g, det.azimuth_theta, 0.0, c_sound)
    return cochleogram_from_beam(beam, det, bank, c_sound=c_sound, scene_id=scene_id)


def cochleogram_from_beam(
    beam: Waveform,
    det: EchoDetection,
    bank: GammatoneBank,
    c_sound: float = SPEED_OF_SOUND,
    scene_id=None,
) -> Cochleogram:
    """The windowing + filterbank half of make_cochleogram."""
    if beam.sample_rate != bank.sample_rate:
        raise ParameterError("beam and bank sample rates differ")
    fs = beam.sample_rate
    onset = int(round(2.0 * det.range_r / c_sound * fs))
    start = onset - int(round(WINDOW_PRE_SECONDS * fs))
    window = np.zeros(WINDOW_SAMPLES)
    lo = max(start, 0)
    hi = min(start + WINDOW_SAMPLES, len(beam))
    zero_padded = lo != start or hi != start + WINDOW_SAMPLES
    if hi > lo:
        window[lo - start : hi - start] = beam.samples[lo:hi]
    bands = gammatone_matrix(window, bank)
    raster = normalize_raster(log_compress(frame_energies(bands)))
    meta = {
        "range_m": det.range_r,
        "azimuth_deg": det.azimuth_theta,
        "scene_id": scene_id,
        "zero_padded": bool(zero_padded),
    }
    return Cochleogram(raster, meta)


def cochleogram_to_pgm(c: Cochleogram, path) -> None:
    # Low-frequency band at the bottom row of the image.
    write_pgm(c.values[::-1], path)
