"""Dichromatic-reflection-model synthesis with analytically known heart rate.

A skin pixel's RGB value over time is modelled as

    C(t) = I(t) * (u_s * (s0 + s(t)) + u_d * d0 + u_p * p(t)) + v_n(t)

where I(t) is the light intensity, u_s the unit colour of the light
spectrum with stationary/varying specular strengths s0 and s(t), u_d the
unit skin colour with stationary diffuse strength d0, u_p the relative
pulse strength per channel, p(t) the pulse waveform, and v_n(t) i.i.d.
Gaussian sensor noise. Only the diffuse term carries pulse information.

The generator turns this pixel law into whole synthetic face videos whose
heart rate is known exactly, which gives every downstream component a
ground-truth oracle at desk scale. An FFT spectral-peak estimator and a
Nyquist stride bound complete the toolbox.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.fft

from .dataio import Clip, HrLabel, LandmarkSet
from .rois import Rect, RoiId, canonical_landmarks, roi_rects

HR_MIN_BPM = 40.0
HR_MAX_BPM = 160.0

# Peak of sin(x) + 0.3*sin(2x), used to keep the harmonic waveform in [-1, 1].
# At the maximum, cos(x) = (-1 + sqrt(3.88)) / 2.4.
_COS_PEAK = (-1.0 + math.sqrt(1.0 + 4.0 * 1.2 * 0.6)) / (2.0 * 1.2)
_SIN_PEAK = math.sqrt(1.0 - _COS_PEAK**2)
HARMONIC_PEAK = _SIN_PEAK + 0.3 * (2.0 * _SIN_PEAK * _COS_PEAK)


class NoDominantPeakError(Exception):
    """The in-band power spectrum has no clearly dominant peak."""


class PulseShape(enum.Enum):
    SINUSOID = "sinusoid"
    SINUSOID_PLUS_HARMONIC = "sinusoid_plus_harmonic"


@dataclass(frozen=True)
class PulseWaveform:
    """Periodic pulse waveform p(t) with values in [-1, 1]."""

    hr_bpm: float
    shape: PulseShape = PulseShape.SINUSOID
    phase: float = 0.0

    def __post_init__(self):
        if not (HR_MIN_BPM <= self.hr_bpm <= HR_MAX_BPM):
            raise ValueError(
                f"hr_bpm must be in [{HR_MIN_BPM:g}, {HR_MAX_BPM:g}], got {self.hr_bpm}"
            )

    @property
    def frequency_hz(self) -> float:
        return self.hr_bpm / 60.0

    def evaluate(self, t: np.ndarray, phase_offset: float | np.ndarray = 0.0) -> np.ndarray:
        """Sample p(t); ``phase_offset`` broadcasts against ``t``."""
        x = 2.0 * np.pi * self.frequency_hz * np.asarray(t, dtype=np.float64)
        x = x + self.phase + phase_offset
        if self.shape is PulseShape.SINUSOID:
            return np.sin(x)
        return (np.sin(x) + 0.3 * np.sin(2.0 * x)) / HARMONIC_PEAK


@dataclass(frozen=True)
class IntensityProfile:
    """Light level I(t) = base * (1 + flicker_amplitude * sin(2*pi*f*t + phase))."""

    base: float = 1.0
    flicker_amplitude: float = 0.0
    flicker_freq_hz: float = 0.0
    flicker_phase: float = 0.0

    def __post_init__(self):
        if not (self.base > 0):
            raise ValueError("intensity base must be positive")
        if not (0.0 <= self.flicker_amplitude < 1.0):
            raise ValueError("flicker_amplitude must be in [0, 1) to keep I(t) > 0")
        if self.flicker_amplitude > 0 and self.flicker_freq_hz <= 0:
            raise ValueError("flicker needs a positive frequency")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.flicker_amplitude == 0.0:
            return np.full_like(t, self.base)
        return self.base * (
            1.0
            + self.flicker_amplitude
            * np.sin(2.0 * np.pi * self.flicker_freq_hz * t + self.flicker_phase)
        )


@dataclass(frozen=True)
class MotionProfile:
    """Varying specular part s(t) = amplitude * sin(2*pi*f*t + phase).

    Models slow body motion; the frequency is capped below the pulse band.
    """

    amplitude: float = 0.0
    freq_hz: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("motion amplitude must be >= 0")
        if self.amplitude > 0 and not (0.0 < self.freq_hz < 0.3):
            raise ValueError("motion frequency must be in (0, 0.3) Hz")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.amplitude == 0.0:
            return np.zeros_like(t)
        return self.amplitude * np.sin(2.0 * np.pi * self.freq_hz * t + self.phase)


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be an RGB 3-vector")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit length (|{name}| = {norm:.12f})")
    return v


@dataclass(frozen=True, eq=False)
class DrmParams:
    """All static quantities of the skin reflection model."""

    u_s: np.ndarray = field(default_factory=lambda: np.ones(3) / math.sqrt(3.0))
    s0: float = 0.2
    u_d: np.ndarray = field(
        default_factory=lambda: np.array([0.75, 0.55, 0.45]) / np.linalg.norm([0.75, 0.55, 0.45])
    )
    d0: float = 0.8
    u_p: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.04, 0.03]))
    noise_sigma: float = 0.0
    seed: int = 0
    intensity: IntensityProfile = field(default_factory=IntensityProfile)
    motion: MotionProfile = field(default_factory=MotionProfile)

    def __post_init__(self):
        object.__setattr__(self, "u_s", _unit(self.u_s, "u_s"))
        object.__setattr__(self, "u_d", _unit(self.u_d, "u_d"))
        u_p = np.asarray(self.u_p, dtype=np.float64)
        if u_p.shape != (3,):
            raise ValueError("u_p must be an RGB 3-vector")
        object.__setattr__(self, "u_p", u_p)
        if self.s0 < 0 or self.d0 < 0:
            raise ValueError("s0 and d0 must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def skin_pixel_trace(
    params: DrmParams, pulse: PulseWaveform, fps: float, n_frames: int
) -> np.ndarray:
    """RGB time series of a single skin pixel, shape (n_frames, 3).

    Deterministic for a fixed ``params.seed``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if not (fps > 0):
        raise ValueError("fps must be positive")
    t = np.arange(n_frames, dtype=np.float64) / fps
    intensity = params.intensity(t)
    if np.any(intensity <= 0):
        raise ValueError("I(t) must be positive at every sampled time step")
    specular = params.u_s[None, :] * (params.s0 + params.motion(t))[:, None]
    diffuse = params.u_d[None, :] * params.d0
    pulse_term = params.u_p[None, :] * pulse.evaluate(t)[:, None]
    trace = intensity[:, None] * (specular + diffuse + pulse_term)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        trace = trace + rng.normal(0.0, params.noise_sigma, size=trace.shape)
    return trace


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Static geometry of a synthetic face video.

    ``face_layout`` is derived from ``landmarks`` with the same mapping the
    ROI cropper uses, so crops of the emitted landmarks reproduce the
    layout exactly. ``shading_strength`` scales a fixed spatial shading
    field applied to the stationary diffuse term (a crude directional
    light; identical for every generated clip).
    """

    frame_size: int = 64
    fps: float = 30.0
    n_frames: int = 150
    landmarks: np.ndarray = None
    face_layout: dict[RoiId, Rect] = None
    background_sigma: float = 0.01
    background_level: float = 0.35
    shading_strength: float = 0.0

    def __post_init__(self):
        if self.frame_size < 16:
            raise ValueError("frame_size must be >= 16")
        if not (self.fps > 0 and self.n_frames >= 2):
            raise ValueError("need positive fps and at least 2 frames")
        if self.background_sigma < 0 or not (0.0 <= self.background_level <= 1.0):
            raise ValueError("bad background parameters")
        if not (0.0 <= self.shading_strength < 0.5):
            raise ValueError("shading_strength must be in [0, 0.5)")
        if self.landmarks is None:
            object.__setattr__(self, "landmarks", canonical_landmarks(self.frame_size))
        lms = np.asarray(self.landmarks, dtype=np.float64)
        object.__setattr__(self, "landmarks", lms)
        if self.face_layout is None:
            object.__setattr__(self, "face_layout", roi_rects(lms))
        self._validate_layout()

    def _validate_layout(self):
        layout = self.face_layout
        missing = [r for r in RoiId if r not in layout]
        if missing:
            raise ValueError(f"face_layout lacks ROIs: {missing}")
        frame = Rect(0, 0, self.frame_size, self.frame_size)
        whole = layout[RoiId.WHOLE_FACE]
        if not frame.contains(whole):
            raise ValueError(f"whole-face ROI {whole} exceeds the frame")
        for roi, rect in layout.items():
            if rect.area <= 0:
                raise ValueError(f"ROI {roi.name} is degenerate: {rect}")
            if roi is not RoiId.WHOLE_FACE and not whole.contains(rect):
                raise ValueError(f"ROI {roi.name} {rect} is not nested in the whole face")

    def shading_field(self) -> np.ndarray:
        """Per-pixel multiplier for d0 over the whole frame, shape (H, W)."""
        n = self.frame_size
        yy, xx = np.meshgrid(
            (np.arange(n) + 0.5) / n - 0.5, (np.arange(n) + 0.5) / n - 0.5, indexing="ij"
        )
        pattern = 0.8 * xx + 0.6 * yy + 0.35 * np.sin(2.0 * np.pi * (1.3 * xx + 0.7 * yy) + 1.0)
        return 1.0 + self.shading_strength * pattern


def generate_synthetic_video(
    scene: SyntheticScene,
    params: DrmParams,
    pulse: PulseWaveform,
    subject_id: str = "s000",
    video_id: str = "c000",
) -> tuple[Clip, LandmarkSet, float]:
    """Render a synthetic face clip; returns (clip, landmarks, hr_bpm).

    Every pixel inside the whole-face rectangle follows the skin pixel law
    with a small fixed per-pixel jitter (pulse amplitude x U(0.9, 1.1),
    pulse phase + U(-0.05, 0.05) rad); everything else is background
    noise. Bit-identical output for identical inputs and seed.
    """
    rng = np.random.default_rng(params.seed)
    n = scene.frame_size
    t = np.arange(scene.n_frames, dtype=np.float64) / scene.fps
    intensity = params.intensity(t)
    if np.any(intensity <= 0):
        raise ValueError("I(t) must be positive at every sampled time step")

    video = rng.normal(
        scene.background_level, scene.background_sigma, size=(scene.n_frames, n, n, 3)
    )

    face = scene.face_layout[RoiId.WHOLE_FACE]
    h_face, w_face = face.height, face.width
    n_px = h_face * w_face
    amp = rng.uniform(0.9, 1.1, size=n_px)
    dphase = rng.uniform(-0.05, 0.05, size=n_px)

    # (P, T) pulse samples with per-pixel amplitude/phase jitter.
    p_px = amp[:, None] * pulse.evaluate(t[None, :], phase_offset=dphase[:, None])

    shading = scene.shading_field()[face.y0 : face.y1, face.x0 : face.x1].reshape(n_px)
    specular = params.u_s[None, :] * (params.s0 + params.motion(t))[:, None]  # (T, 3)
    diffuse = params.u_d[None, None, :] * (params.d0 * shading)[:, None, None]  # (P, 1, 3)
    pulse_term = params.u_p[None, None, :] * p_px[:, :, None]  # (P, T, 3)
    skin = intensity[None, :, None] * (specular[None, :, :] + diffuse + pulse_term)
    if params.noise_sigma > 0:
        skin = skin + rng.normal(0.0, params.noise_sigma, size=skin.shape)

    video[:, face.y0 : face.y1, face.x0 : face.x1, :] = (
        skin.reshape(h_face, w_face, scene.n_frames, 3).transpose(2, 0, 1, 3)
    )
    pixels = np.clip(video, 0.0, 1.0).transpose(3, 0, 1, 2).astype(np.float32)
    clip = Clip(pixels, scene.fps, subject_id, video_id)
    return clip, LandmarkSet(scene.landmarks.copy()), float(pulse.hr_bpm)


def hr_oracle_fft(
    trace: np.ndarray,
    fps: float,
    band_bpm: tuple[float, float] = (HR_MIN_BPM, HR_MAX_BPM),
    resolution_bpm: float = 0.1,
) -> float:
    """Spectral-peak heart rate of a 1-D trace, in bpm.

    The mean-removed trace is Hann-tapered and zero-padded so the frequency
    grid is at least ``resolution_bpm`` fine, then the power-spectrum argmax
    is searched inside ``band_bpm``. Raises :class:`NoDominantPeakError`
    when the peak does not stand out (peak power < 2x the in-band median).
    """
    x = np.asarray(trace, dtype=np.float64).ravel()
    if not (fps > 0):
        raise ValueError("fps must be positive")
    if x.size < 2.0 * fps:
        raise ValueError(
            f"trace too short: {x.size} samples is under 2 s at {fps:g} fps"
        )
    x = x - x.mean()
    x = x * np.hanning(x.size)
    n_fft = scipy.fft.next_fast_len(
        max(x.size, int(math.ceil(fps * 60.0 / resolution_bpm)))
    )
    power = np.abs(scipy.fft.rfft(x, n_fft)) ** 2
    freqs = scipy.fft.rfftfreq(n_fft, d=1.0 / fps)
    lo, hi = band_bpm[0] / 60.0, band_bpm[1] / 60.0
    band = (freqs >= lo) & (freqs <= hi)
    if not np.any(band):
        raise NoDominantPeakError(f"no spectral bins inside {band_bpm} bpm")
    band_power = power[band]
    peak_idx = int(np.argmax(band_power))
    peak = float(band_power[peak_idx])
    median = float(np.median(band_power))
    if peak <= 0.0 or peak < 2.0 * median:
        raise NoDominantPeakError(
            f"in-band peak power {peak:.3e} is below 2x the median {median:.3e}"
        )
    return float(freqs[band][peak_idx] * 60.0)


def nyquist_max_stride(fps: float, hr_max_bpm: float) -> int:
    """Largest integer stride keeping the subsampled rate above Nyquist.

    Returns the largest S with fps / S > 2 * hr_max_bpm / 60.
    """
    if not (fps > 0 and hr_max_bpm > 0):
        raise ValueError("fps and hr_max_bpm must be positive")
    bound = 2.0 * hr_max_bpm / 60.0
    s = int(math.floor(fps / bound)) + 1
    while s > 1 and not (fps / s > bound):
        s -= 1
    if not (fps / s > bound):
        raise ValueError(
            f"even stride 1 violates Nyquist: {fps:g} fps <= {bound:g} Hz"
        )
    return s


# ---------------------------------------------------------------------------
# Dataset synthesis
# ---------------------------------------------------------------------------


def synthesize_dataset(
    n_subjects: int,
    clips_per_subject: int,
    scene: SyntheticScene,
    *,
    hr_range_bpm: tuple[float, float] = (HR_MIN_BPM, HR_MAX_BPM),
    noise_sigma: float = 0.02,
    pulse_shape: PulseShape = PulseShape.SINUSOID,
    flicker_amplitude: float = 0.0,
    flicker_freq_hz: float = 0.45,
    motion_amplitude: float = 0.0,
    motion_freq_hz: float = 0.25,
    seed: int = 0,
) -> Iterator[tuple[Clip, LandmarkSet, HrLabel]]:
    """Generate a labelled synthetic dataset, one clip at a time.

    Heart rates are drawn uniformly from ``hr_range_bpm``; pulse, flicker
    and motion phases are random per clip. Fully determined by ``seed``.
    """
    if n_subjects < 1 or clips_per_subject < 1:
        raise ValueError("need at least one subject and one clip per subject")
    lo, hi = hr_range_bpm
    if not (HR_MIN_BPM <= lo < hi <= HR_MAX_BPM):
        raise ValueError(f"hr_range_bpm must be inside [{HR_MIN_BPM:g}, {HR_MAX_BPM:g}]")
    rng = np.random.default_rng(seed)
    for si in range(n_subjects):
        subject = f"s{si:03d}"
        for ci in range(clips_per_subject):
            clip_id = f"{subject}_c{ci:02d}"
            hr = float(rng.uniform(lo, hi))
            pulse = PulseWaveform(hr, pulse_shape, phase=float(rng.uniform(0, 2 * np.pi)))
            params = DrmParams(
                noise_sigma=noise_sigma,
                seed=int(rng.integers(0, 2**31 - 1)),
                intensity=IntensityProfile(
                    flicker_amplitude=flicker_amplitude,
                    flicker_freq_hz=flicker_freq_hz,
                    flicker_phase=float(rng.uniform(0, 2 * np.pi)),
                ),
                motion=MotionProfile(
                    amplitude=motion_amplitude,
                    freq_hz=motion_freq_hz,
                    phase=float(rng.uniform(0, 2 * np.pi)),
                ),
            )
            clip, lms, hr_out = generate_synthetic_video(
                scene, params, pulse, subject_id=subject, video_id=clip_id
            )
            yield clip, lms, HrLabel(hr_out, subject, clip_id)
