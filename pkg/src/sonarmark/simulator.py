"""Physics-inspired synthesis of 32-channel recordings.

A scene holds at most one dish landmark plus point clutter. The dish
echo is a two-glint surrogate (rim + cavity return) whose delay
spread encodes the dish radius and whose ripple depth encodes the
orientation magnitude. A small side-mounted bracket glint rotates
with the dish and shifts in range like sin(gamma), which is what
makes the *sign* of the orientation observable at all; a rotationally
symmetric dish alone reflects identically at +/-gamma.

All synthesis is deterministic given the scene seed and is linear in
the scatterers, so superposition holds exactly with noise off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .geometry import (
    SPEED_OF_SOUND,
    ArrayGeometry,
    LandmarkSpec,
    ScenePose,
    landmark_from_class,
)
from .signals import (
    CHIRP_DURATION,
    CHIRP_F_END,
    CHIRP_F_START,
    RECORD_DURATION,
    SAMPLE_RATE,
    ChirpSpec,
    Waveform,
    make_chirp,
)

RIM_AMPLITUDE = 0.4


@dataclass(frozen=True)
class ReflectorResponse:
    """Two-glint echo surrogate: rim return plus delayed cavity return."""

    glint_delays: tuple      # seconds, (0.0, delta_t)
    glint_amplitudes: tuple

    def __post_init__(self):
        d1, d2 = self.glint_delays
        a1, a2 = self.glint_amplitudes
        if d1 < 0 or d2 < d1:
            raise ParameterError("glint delays must be >= 0 with the second >= the first")
        if a1 < 0 or a2 < 0:
            raise ParameterError("glint amplitudes must be >= 0")


def dish_depth(spec: LandmarkSpec) -> float:
    """Depth of the dish cavity along its axis, h = d*(1 - (2c - 1))."""
    return spec.radius_d * (1.0 - (2.0 * spec.cut_factor_c - 1.0))


def reflector_response(
    spec: LandmarkSpec, gamma_deg: float, c_sound: float = SPEED_OF_SOUND
) -> ReflectorResponse:
    """Two-glint dish echo at orientation gamma.

    Glint 1 is the rim (reference delay 0, fixed amplitude). Glint 2 is
    the cavity return, arriving 2*h*cos(gamma)/c later with amplitude
    cos^2(gamma). The echo spectrum is therefore a comb with notch
    spacing 1/delta_t: the dish radius sets the ripple period, the
    orientation sets ripple depth and fine delay.
    """
    if abs(gamma_deg) > 90.0:
        raise ParameterError(f"gamma must satisfy |gamma| <= 90 deg, got {gamma_deg}")
    gamma = np.deg2rad(gamma_deg)
    delta_t = 2.0 * dish_depth(spec) * np.cos(gamma) / c_sound
    a2 = float(np.cos(gamma) ** 2)
    return ReflectorResponse((0.0, float(delta_t)), (RIM_AMPLITUDE, a2))


@dataclass(frozen=True)
class Scene:
    """One measurement setup: optional landmark, point clutter, noise level."""

    landmark: tuple | None            # (LandmarkSpec, ScenePose) or None
    clutter: tuple = ()               # ((position xyz, reflectivity), ...)
    noise_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_rms < 0:
            raise ParameterError(f"noise_rms must be >= 0, got {self.noise_rms}")
        for _, refl in self.clutter:
            if refl < 0:
                raise ParameterError(f"clutter reflectivity must be >= 0, got {refl}")


@dataclass(frozen=True)
class SimConfig:
    """All synthesis constants; serializable so runs are reproducible."""

    sample_rate: float = SAMPLE_RATE
    duration: float = RECORD_DURATION
    c_sound: float = SPEED_OF_SOUND
    chirp_f_start: float = CHIRP_F_START
    chirp_f_end: float = CHIRP_F_END
    chirp_duration: float = CHIRP_DURATION
    chirp_amplitude: float = 1.0
    noise_rms: float = 0.02
    # landmark pose sampling
    range_min: float = 0.5
    range_max: float = 3.0
    azimuth_max: float = 60.0
    gamma_max: float = 60.0
    # clutter sampling
    clutter_landmark_max: int = 5     # landmark scenes draw 0..this
    clutter_empty_min: int = 1
    clutter_empty_max: int = 8
    clutter_range_min: float = 0.4
    clutter_range_max: float = 3.0
    clutter_azimuth_max: float = 60.0
    clutter_reflectivity_min: float = 0.1
    clutter_reflectivity_max: float = 0.6
    # dish surrogate constants
    rim_amplitude: float = RIM_AMPLITUDE
    mount_lever: float = 0.04         # m, bracket offset from the dish center
    mount_amplitude: float = 0.25     # 0 disables the mount glint

    def chirp_spec(self) -> ChirpSpec:
        return ChirpSpec(
            self.chirp_f_start,
            self.chirp_f_end,
            self.chirp_duration,
            self.sample_rate,
            self.chirp_amplitude,
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DatasetConfig:
    n_landmark: int
    n_empty: int
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if self.n_landmark < 0 or self.n_empty < 0 or self.n_landmark + self.n_empty == 0:
            raise ParameterError("scene counts must be positive")


def landmark_scatterers(
    spec: LandmarkSpec,
    pose: ScenePose,
    c_sound: float = SPEED_OF_SOUND,
    rim_amplitude: float = RIM_AMPLITUDE,
    mount_lever: float = 0.04,
    mount_amplitude: float = 0.25,
):
    """Positioned point scatterers realizing the dish echo at a pose.

    The rim glint sits at the landmark position, the cavity glint a dish
    depth behind it along the line of sight (scaled by cos gamma so the
    two-way delay matches reflector_response), and the bracket glint at
    lever length from the center, rotating with gamma in the horizontal
    plane: its range offset goes like sin(gamma), an odd function, so
    echoes at +gamma and -gamma differ.
    """
    gamma = np.deg2rad(pose.orientation_gamma)
    p = pose.position
    u_los = p / np.linalg.norm(p)
    response = reflector_response(spec, pose.orientation_gamma, c_sound)
    scatterers = [
        (p, rim_amplitude),
        (p + u_los * (response.glint_delays[1] * c_sound / 2.0), response.glint_amplitudes[1]),
    ]
    if mount_amplitude > 0.0:
        t_perp = np.array([-u_los[1], u_los[0], 0.0])
        mount = p + u_los * (mount_lever * np.sin(gamma)) + t_perp * (mount_lever * np.cos(gamma))
        scatterers.append((mount, mount_amplitude))
    return scatterers


def scene_scatterers(scene: Scene, sim: SimConfig):
    """All positioned (point, reflectivity) pairs of a scene."""
    scatterers = list(scene.clutter)
    if scene.landmark is not None:
        spec, pose = scene.landmark
        scatterers.extend(
            landmark_scatterers(
                spec,
                pose,
                c_sound=sim.c_sound,
                rim_amplitude=sim.rim_amplitude,
                mount_lever=sim.mount_lever,
                mount_amplitude=sim.mount_amplitude,
            )
        )
    return scatterers


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((0x0153, seed)))


def synthesize_channels(
    scene: Scene,
    g: ArrayGeometry,
    chirp: Waveform,
    fs: float,
    duration: float,
    sim: SimConfig | None = None,
) -> np.ndarray:
    """Raw (32, n_samples) recording matrix for a scene.

    Each scatterer contributes a fractionally delayed copy of the chirp
    per microphone, with amplitude reflectivity / (d_emit * d_mic); iid
    Gaussian noise of scene.noise_rms is added per channel.
    """
    sim = sim or SimConfig(sample_rate=fs, duration=duration)
    n = int(round(duration * fs))
    template = chirp.samples
    n_template = template.size
    if n < n_template:
        raise ParameterError("record window shorter than the emitted chirp")
    channels = np.zeros((len(g.mic_positions), n))
    c = sim.c_sound
    emitter = g.emitter_position
    for idx, (pos, refl) in enumerate(scene_scatterers(scene, sim)):
        pos = np.asarray(pos, dtype=np.float64)
        d_emit = np.linalg.norm(pos - emitter)
        d_mics = np.linalg.norm(g.mic_positions - pos[None, :], axis=1)
        delays = (d_emit + d_mics) / c * fs
        if np.ceil(delays.max()) + n_template >= n:
            raise ParameterError(
                f"echo of scatterer {idx} at {pos.tolist()} falls beyond the record window"
            )
        amps = refl / (d_emit * d_mics)
        for m in range(channels.shape[0]):
            _add_delayed(channels[m], template, delays[m], amps[m])
    if scene.noise_rms > 0:
        rng = _noise_rng(scene.seed)
        channels += scene.noise_rms * rng.standard_normal(channels.shape)
    return channels


def synthesize_recording(
    scene: Scene,
    g: ArrayGeometry,
    chirp: Waveform,
    fs: float,
    duration: float,
    sim: SimConfig | None = None,
) -> list[Waveform]:
    """Scene recording as 32 Waveform channels."""
    channels = synthesize_channels(scene, g, chirp, fs, duration, sim)
    return [Waveform(row, fs) for row in channels]


def _add_delayed(dst: np.ndarray, template: np.ndarray, delay_samples: float, amp: float):
    # Linear-interpolated fractional insertion: the same two-tap kernel as
    # signals.fractional_shift, so synthesis and beamforming share one
    # delay model and cancel systematic bias.
    i = int(np.floor(delay_samples))
    f = delay_samples - i
    seg = np.zeros(template.size + 1)
    seg[:-1] = (1.0 - f) * template
    seg[1:] += f * template
    dst[i : i + seg.size] += amp * seg


def sample_scene(index: int, is_landmark: bool, config: DatasetConfig) -> Scene:
    """Draw one scene deterministically from (config.seed, index)."""
    sim = config.sim
    seq = np.random.SeedSequence((config.seed, index))
    rng = np.random.default_rng(seq)
    scene_seed = int(seq.generate_state(1, dtype=np.uint64)[0])
    landmark = None
    if is_landmark:
        spec = landmark_from_class(int(rng.integers(1, 11)))
        pose = ScenePose(
            range_r=float(rng.uniform(sim.range_min, sim.range_max)),
            azimuth_theta=float(rng.uniform(-sim.azimuth_max, sim.azimuth_max)),
            orientation_gamma=float(rng.uniform(-sim.gamma_max, sim.gamma_max)),
        )
        landmark = (spec, pose)
        n_clutter = int(rng.integers(0, sim.clutter_landmark_max + 1))
    else:
        n_clutter = int(rng.integers(sim.clutter_empty_min, sim.clutter_empty_max + 1))
    clutter = []
    for _ in range(n_clutter):
        r = float(rng.uniform(sim.clutter_range_min, sim.clutter_range_max))
        az = np.deg2rad(rng.uniform(-sim.clutter_azimuth_max, sim.clutter_azimuth_max))
        pos = (r * np.cos(az), r * np.sin(az), 0.0)
        refl = float(rng.uniform(sim.clutter_reflectivity_min, sim.clutter_reflectivity_max))
        clutter.append((pos, refl))
    return Scene(landmark=landmark, clutter=tuple(clutter), noise_rms=sim.noise_rms, seed=scene_seed)


def scene_plan(config: DatasetConfig) -> list[Scene]:
    """All scenes of a dataset draw: landmark scenes first, then empty."""
    scenes = [sample_scene(i, True, config) for i in range(config.n_landmark)]
    scenes += [
        sample_scene(config.n_landmark + j, False, config) for j in range(config.n_empty)
    ]
    return scenes


def generate_dataset(config: DatasetConfig, g: ArrayGeometry):
    """Yield (scene, 32-channel recording) pairs for the full plan."""
    chirp = make_chirp(config.sim.chirp_spec())
    for scene in scene_plan(config):
        yield scene, synthesize_recording(
            scene, g, chirp, config.sim.sample_rate, config.sim.duration, config.sim
        )
