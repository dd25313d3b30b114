"""Delay-and-sum beamforming: single-direction steering and image sweeps.

Channels are matched-filtered before beamforming (pipeline order), and
the image sweep reuses the filtered channels across all beams. Beams
are independent, so a sweep parallelized across directions assembles
bit-identically to the serial loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import SPEED_OF_SOUND, ArrayGeometry, steering_delays
from .imaging import AcousticImage, envelope_channels
from .signals import Waveform, fractional_shift, matched_filter_bank


@dataclass(frozen=True)
class SteeringGrid:
    azimuths: tuple
    elevations: tuple = (0.0,)

    def __post_init__(self):
        az = np.asarray(self.azimuths, dtype=np.float64)
        if az.size == 0:
            raise ParameterError("grid must contain at least one azimuth")
        if np.any(np.diff(az) <= 0):
            raise ParameterError("azimuths must be strictly increasing")
        if np.any(np.abs(az) > 90.0):
            raise ParameterError("azimuths must lie within [-90, 90] deg")


def default_grid(step_deg: float = 1.0) -> SteeringGrid:
    """Azimuth sweep -60..60 deg at 1 deg (121 beams), elevation 0."""
    n = int(round(120.0 / step_deg)) + 1
    return SteeringGrid(tuple(np.linspace(-60.0, 60.0, n)))


def _stack(channels) -> tuple[np.ndarray, float]:
    if isinstance(channels, np.ndarray):
        return channels, None
    lengths = {len(ch) for ch in channels}
    if len(lengths) != 1:
        raise ParameterError(f"channel lengths differ: {sorted(lengths)}")
    rates = {ch.sample_rate for ch in channels}
    if len(rates) != 1:
        raise ParameterError(f"channel sample rates differ: {sorted(rates)}")
    return np.stack([ch.samples for ch in channels]), rates.pop()


def das_matrix(
    channels: np.ndarray,
    g: ArrayGeometry,
    azimuth_deg: float,
    elevation_deg: float,
    fs: float,
    c_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Delay-and-sum a (n_mics, n_samples) matrix toward one direction."""
    taus = steering_delays(g, azimuth_deg, elevation_deg, c_sound)
    out = np.zeros(channels.shape[1])
    for m in range(channels.shape[0]):
        out += fractional_shift(channels[m], taus[m] * fs)
    out /= channels.shape[0]
    return out


def das_beamform(
    channels,
    g: ArrayGeometry,
    azimuth_deg: float,
    elevation_deg: float = 0.0,
    c_sound: float = SPEED_OF_SOUND,
) -> Waveform:
    """y[n] = mean_m x_m[n - tau_m * fs], fractional delays interpolated."""
    matrix, fs = _stack(channels)
    if fs is None:
        raise ParameterError("das_beamform needs Waveform channels (sample rate unknown)")
    return Waveform(das_matrix(matrix, g, azimuth_deg, elevation_deg, fs, c_sound), fs)


def beamform_image(
    channels,
    g: ArrayGeometry,
    grid: SteeringGrid,
    template: Waveform,
    c_sound: float = SPEED_OF_SOUND,
    envelope_cutoff: float = 1000.0,
    prefiltered: bool = False,
) -> AcousticImage:
    """Range x azimuth intensity raster at elevation 0.

    Matched-filters every channel once (unless already filtered), then
    per grid azimuth: delay-and-sum, envelope-detect, decimate, stack.
    """
    matrix, fs = _stack(channels)
    if fs is None:
        fs = template.sample_rate
    if not prefiltered:
        matrix = matched_filter_bank(matrix, template, fs)
    columns = []
    fs_env = None
    for az in grid.azimuths:
        beam = das_matrix(matrix, g, az, grid.elevations[0], fs, c_sound)
        env, fs_env = envelope_channels(beam, fs, envelope_cutoff)
        columns.append(env)
    intensities = np.stack(columns, axis=1)
    return AcousticImage(
        intensities=intensities,
        range_bin_size=c_sound / 2.0 / fs_env,
        azimuth_bins=tuple(grid.azimuths),
        sample_rate_env=fs_env,
    )
