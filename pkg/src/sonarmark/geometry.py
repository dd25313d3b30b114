"""Sensor array layout, landmark geometry, and coordinate conventions.

Sensor frame: x forward, y left, z up. Azimuth is measured from the
x-axis toward +y (left positive), elevation toward +z. The real
device's 32-microphone layout is irregular and unpublished, so a
seeded pseudo-random layout stands in for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

SPEED_OF_SOUND = 343.0           # m/s, dry air at 20 C; configurable everywhere

N_MICS = 32
MIN_MIC_SPACING = 0.004          # m
ARRAY_DISK_RADIUS = 0.08         # m, sampling disk in the y-z plane
MAX_MIC_RADIUS = 0.1             # m, hard bound from the array invariant

LANDMARK_RADII_MM = (10, 15, 20, 25, 30, 35, 40, 45, 50, 55)
CUT_FACTOR = 0.66


@dataclass(frozen=True)
class ArrayGeometry:
    """32 microphone positions plus the emitter position, meters."""

    mic_positions: np.ndarray    # (32, 3)
    emitter_position: np.ndarray  # (3,)

    def __post_init__(self):
        mics = np.asarray(self.mic_positions, dtype=np.float64)
        emitter = np.asarray(self.emitter_position, dtype=np.float64)
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "emitter_position", emitter)
        if mics.shape != (N_MICS, 3):
            raise ParameterError(f"mic_positions must be ({N_MICS}, 3), got {mics.shape}")
        if emitter.shape != (3,):
            raise ParameterError("emitter_position must be a 3-vector")
        dists = np.linalg.norm(mics[:, None, :] - mics[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() < MIN_MIC_SPACING:
            raise ParameterError(
                f"microphones closer than {MIN_MIC_SPACING * 1e3:.0f} mm (min {dists.min() * 1e3:.2f} mm)"
            )
        if np.linalg.norm(mics, axis=1).max() > MAX_MIC_RADIUS:
            raise ParameterError(f"all microphones must lie within {MAX_MIC_RADIUS} m of the origin")


@dataclass(frozen=True)
class LandmarkSpec:
    """Dish reflector: sphere radius and the cut fraction that forms the dish."""

    radius_d: float              # m
    cut_factor_c: float = CUT_FACTOR

    def __post_init__(self):
        mm = round(self.radius_d * 1000.0, 6)
        if mm not in LANDMARK_RADII_MM:
            raise ParameterError(
                f"radius_d must be one of {LANDMARK_RADII_MM} mm, got {self.radius_d * 1000:.3f} mm"
            )
        if not 0.0 < self.cut_factor_c < 1.0:
            raise ParameterError(f"cut_factor_c must be in (0, 1), got {self.cut_factor_c}")

    @property
    def class_id(self) -> int:
        return int(round((self.radius_d * 1000.0 - 10.0) / 5.0)) + 1


def landmark_from_class(class_id: int) -> LandmarkSpec:
    if not 1 <= class_id <= 10:
        raise ParameterError(f"class_id must be in 1..10, got {class_id}")
    return LandmarkSpec(radius_d=LANDMARK_RADII_MM[class_id - 1] / 1000.0)


@dataclass(frozen=True)
class ScenePose:
    """Landmark placement: range, azimuth, and horizontal orientation, degrees."""

    range_r: float
    azimuth_theta: float
    orientation_gamma: float

    def __post_init__(self):
        if not 0.3 < self.range_r <= 3.0:
            raise ParameterError(f"range_r must be in (0.3, 3.0] m, got {self.range_r}")
        if abs(self.azimuth_theta) > 60.0:
            raise ParameterError(f"azimuth_theta must be in [-60, 60] deg, got {self.azimuth_theta}")
        if abs(self.orientation_gamma) > 60.0:
            raise ParameterError(
                f"orientation_gamma must be in [-60, 60] deg, got {self.orientation_gamma}"
            )

    @property
    def position(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth_theta)
        return self.range_r * np.array([np.cos(az), np.sin(az), 0.0])


def look_vector(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector pointing from the array toward (azimuth, elevation)."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def default_array(seed: int) -> ArrayGeometry:
    """Deterministic irregular layout: 32 mics rejection-sampled in a 0.08 m
    disk in the y-z plane with 4 mm minimum spacing; emitter at the origin.
    Same seed gives a bit-identical layout.
    """
    rng = np.random.default_rng(np.random.SeedSequence((0x5EA0, seed)))
    points = []
    attempts = 0
    while len(points) < N_MICS and attempts < 100_000:
        attempts += 1
        yz = rng.uniform(-ARRAY_DISK_RADIUS, ARRAY_DISK_RADIUS, size=2)
        if yz[0] ** 2 + yz[1] ** 2 > ARRAY_DISK_RADIUS**2:
            continue
        if any((yz[0] - p[0]) ** 2 + (yz[1] - p[1]) ** 2 < MIN_MIC_SPACING**2 for p in points):
            continue
        points.append(yz)
    if len(points) < N_MICS:
        points = _fallback_grid()
    mics = np.zeros((N_MICS, 3))
    mics[:, 1] = [p[0] for p in points]
    mics[:, 2] = [p[1] for p in points]
    return ArrayGeometry(mics, np.zeros(3))


def _fallback_grid():
    # Regular 6x6 grid clipped to the disk; spacing far above the 4 mm floor.
    coords = np.linspace(-0.055, 0.055, 6)
    grid = [(y, z) for y in coords for z in coords if y * y + z * z <= ARRAY_DISK_RADIUS**2]
    return grid[:N_MICS]


def steering_delays(
    g: ArrayGeometry,
    azimuth_deg: float,
    elevation_deg: float,
    c_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Relative far-field delays (s) that align the array to a direction.

    tau_m = -(p_m . u) / c with u the unit propagation vector of a wave
    arriving from (azimuth, elevation), i.e. u = -look_vector. Delays are
    mean-subtracted so the largest magnitude is minimized.
    """
    if abs(azimuth_deg) > 90.0 or abs(elevation_deg) > 90.0:
        raise ParameterError("steering angles must satisfy |azimuth| <= 90 and |elevation| <= 90 deg")
    if c_sound <= 0:
        raise ParameterError(f"c_sound must be > 0, got {c_sound}")
    u_prop = -look_vector(azimuth_deg, elevation_deg)
    tau = -(g.mic_positions @ u_prop) / c_sound
    return tau - tau.mean()


def save_array_geometry(g: ArrayGeometry, path: str | Path) -> None:
    payload = {"mics": g.mic_positions.tolist(), "emitter": g.emitter_position.tolist()}
    Path(path).write_text(json.dumps(payload, indent=2))


def load_array_geometry(path: str | Path) -> ArrayGeometry:
    payload = json.loads(Path(path).read_text())
    return ArrayGeometry(np.array(payload["mics"]), np.array(payload["emitter"]))
