"""Tests for the synthetic skin-reflection generator and HR oracle."""

import math

import numpy as np
import pytest

from rppg_ssl.dataio import Clip
from rppg_ssl.drm import (
    DrmParams,
    IntensityProfile,
    MotionProfile,
    NoDominantPeakError,
    PulseShape,
    PulseWaveform,
    SyntheticScene,
    generate_synthetic_video,
    hr_oracle_fft,
    nyquist_max_stride,
    skin_pixel_trace,
    synthesize_dataset,
)
from rppg_ssl.rois import Rect, RoiId, roi_rects


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestPulseWaveform:
    def test_rejects_hr_outside_range(self):
        with pytest.raises(ValueError):
            PulseWaveform(39.9)
        with pytest.raises(ValueError):
            PulseWaveform(160.1)
        PulseWaveform(40.0)
        PulseWaveform(160.0)

    def test_sinusoid_values(self):
        pulse = PulseWaveform(60.0, phase=0.3)
        t = np.linspace(0, 4, 1000)
        np.testing.assert_allclose(
            pulse.evaluate(t), np.sin(2 * np.pi * t + 0.3), atol=1e-12
        )

    def test_bounded_in_unit_interval(self):
        t = np.linspace(0, 10, 50_000)
        for shape in PulseShape:
            pulse = PulseWaveform(73.0, shape, phase=1.1)
            values = pulse.evaluate(t)
            assert np.max(np.abs(values)) <= 1.0 + 1e-12

    def test_harmonic_reaches_unit_amplitude(self):
        pulse = PulseWaveform(60.0, PulseShape.SINUSOID_PLUS_HARMONIC)
        t = np.linspace(0, 1, 200_001)
        assert np.max(np.abs(pulse.evaluate(t))) > 1.0 - 1e-6


class TestSkinPixelTrace:
    def test_constant_when_all_varying_terms_vanish(self):
        params = DrmParams(s0=0.0, u_p=np.zeros(3), noise_sigma=0.0)
        trace = skin_pixel_trace(params, PulseWaveform(60.0), fps=30, n_frames=90)
        expected = params.u_d * params.d0
        np.testing.assert_allclose(trace, np.tile(expected, (90, 1)), atol=1e-15)

    def test_closed_form_sinusoid(self):
        params = DrmParams(noise_sigma=0.0)
        pulse = PulseWaveform(60.0, phase=0.7)
        fps, n = 30.0, 300
        trace = skin_pixel_trace(params, pulse, fps, n)
        t = np.arange(n) / fps
        for c in range(3):
            expected = (
                params.u_s[c] * params.s0
                + params.u_d[c] * params.d0
                + params.u_p[c] * np.sin(2 * np.pi * t + 0.7)
            )
            np.testing.assert_allclose(trace[:, c], expected, atol=1e-12)
        # Mean-removed green channel peaks at 1.0 Hz.
        assert hr_oracle_fft(trace[:, 1], fps) == pytest.approx(60.0, abs=0.2)

    def test_noise_statistics(self):
        clean = DrmParams(noise_sigma=0.0)
        noisy = DrmParams(noise_sigma=0.01, seed=11)
        pulse = PulseWaveform(80.0)
        a = skin_pixel_trace(clean, pulse, 30, 10_000)
        b = skin_pixel_trace(noisy, pulse, 30, 10_000)
        stds = np.std(b - a, axis=0)
        assert np.all(np.abs(stds - 0.01) < 0.05 * 0.01)

    def test_deterministic_for_seed(self):
        params = DrmParams(noise_sigma=0.05, seed=42)
        pulse = PulseWaveform(95.0)
        a = skin_pixel_trace(params, pulse, 30, 120)
        b = skin_pixel_trace(params, pulse, 30, 120)
        np.testing.assert_array_equal(a, b)

    def test_rejects_non_unit_colour_vectors(self):
        with pytest.raises(ValueError, match="u_s"):
            DrmParams(u_s=np.array([1.0, 1.0, 1.0]))
        with pytest.raises(ValueError, match="u_d"):
            DrmParams(u_d=np.array([0.9, 0.1, 0.1]))

    def test_rejects_bad_sampling(self):
        params = DrmParams()
        with pytest.raises(ValueError):
            skin_pixel_trace(params, PulseWaveform(60.0), fps=30, n_frames=0)
        with pytest.raises(ValueError):
            skin_pixel_trace(params, PulseWaveform(60.0), fps=0, n_frames=30)

    def test_pulse_component_linear_in_strength(self):
        # The model is affine in p(t): scaling u_p scales the pulse part exactly.
        pulse = PulseWaveform(100.0, phase=0.2)
        base = DrmParams(u_p=np.zeros(3), noise_sigma=0.0)
        one = DrmParams(u_p=np.array([0.02, 0.04, 0.03]), noise_sigma=0.0)
        three = DrmParams(u_p=3.0 * np.array([0.02, 0.04, 0.03]), noise_sigma=0.0)
        t0 = skin_pixel_trace(base, pulse, 30, 150)
        t1 = skin_pixel_trace(one, pulse, 30, 150)
        t3 = skin_pixel_trace(three, pulse, 30, 150)
        np.testing.assert_allclose(t3 - t0, 3.0 * (t1 - t0), rtol=1e-12, atol=1e-15)


class TestSyntheticScene:
    def test_default_layout_is_nested(self):
        scene = SyntheticScene()
        whole = scene.face_layout[RoiId.WHOLE_FACE]
        for roi in RoiId:
            rect = scene.face_layout[roi]
            assert rect.area > 0
            assert whole.contains(rect)
        assert Rect(0, 0, 64, 64).contains(whole)

    def test_layout_matches_landmark_mapping(self):
        scene = SyntheticScene(frame_size=96)
        assert scene.face_layout == roi_rects(scene.landmarks)

    def test_rejects_non_nested_layout(self):
        scene = SyntheticScene()
        layout = dict(scene.face_layout)
        layout[RoiId.CHIN] = Rect(0, 0, 64, 64)
        with pytest.raises(ValueError, match="not nested"):
            SyntheticScene(landmarks=scene.landmarks, face_layout=layout)

    def test_rejects_degenerate_roi(self):
        scene = SyntheticScene()
        layout = dict(scene.face_layout)
        layout[RoiId.FOREHEAD] = Rect(20, 20, 20, 30)
        with pytest.raises(ValueError, match="degenerate"):
            SyntheticScene(landmarks=scene.landmarks, face_layout=layout)


class TestGenerateSyntheticVideo:
    def test_output_shape_and_range(self):
        scene = SyntheticScene()
        clip, lms, hr = generate_synthetic_video(
            scene, DrmParams(noise_sigma=0.02, seed=5), PulseWaveform(72.0)
        )
        assert clip.pixels.shape == (3, 150, 64, 64)
        assert clip.pixels.dtype == np.float32
        assert clip.fps == 30.0
        assert hr == 72.0
        assert clip.pixels.min() >= 0.0 and clip.pixels.max() <= 1.0

    def test_landmarks_reproduce_layout(self):
        scene = SyntheticScene()
        _, lms, _ = generate_synthetic_video(scene, DrmParams(), PulseWaveform(90.0))
        assert roi_rects(lms.points) == scene.face_layout

    def test_noiseless_oracle_recovers_hr(self):
        scene = SyntheticScene(background_sigma=0.0)
        params = DrmParams(noise_sigma=0.0, seed=1)
        clip, _, _ = generate_synthetic_video(scene, params, PulseWaveform(72.0))
        face = scene.face_layout[RoiId.WHOLE_FACE]
        trace = clip.pixels[1, :, face.y0 : face.y1, face.x0 : face.x1].mean(axis=(1, 2))
        assert hr_oracle_fft(trace, 30.0) == pytest.approx(72.0, abs=0.5)

    def test_bit_identical_for_same_seed(self):
        scene = SyntheticScene()
        params = DrmParams(noise_sigma=0.03, seed=9)
        pulse = PulseWaveform(88.0, phase=0.4)
        a, _, _ = generate_synthetic_video(scene, params, pulse)
        b, _, _ = generate_synthetic_video(scene, params, pulse)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_spectral_fidelity_over_random_rates(self):
        # Noiseless synthesis: the oracle recovers the label HR everywhere
        # in the admissible range.
        scene = SyntheticScene(background_sigma=0.0)
        face = scene.face_layout[RoiId.WHOLE_FACE]
        rng = np.random.default_rng(2024)
        for hr in rng.uniform(40.0, 160.0, size=20):
            params = DrmParams(noise_sigma=0.0, seed=int(rng.integers(1 << 30)))
            pulse = PulseWaveform(float(hr), phase=float(rng.uniform(0, 2 * np.pi)))
            clip, _, _ = generate_synthetic_video(scene, params, pulse)
            trace = clip.pixels[1, :, face.y0 : face.y1, face.x0 : face.x1].mean(
                axis=(1, 2)
            )
            assert hr_oracle_fft(trace, 30.0) == pytest.approx(hr, abs=0.5)

    def test_subsampling_preserves_oracle_estimate(self):
        params = DrmParams(noise_sigma=0.0)
        pulse = PulseWaveform(132.0, phase=1.9)
        trace = skin_pixel_trace(params, pulse, 30, 150)[:, 1]
        reference = hr_oracle_fft(trace, 30.0)
        for stride in range(1, nyquist_max_stride(30, 160) + 1):
            sub = trace[::stride]
            assert hr_oracle_fft(sub, 30.0 / stride) == pytest.approx(
                reference, abs=1.0
            )


class TestHrOracle:
    def test_pure_sinusoids(self):
        t = np.arange(300) / 30.0
        assert hr_oracle_fft(np.sin(2 * np.pi * 1.0 * t), 30.0) == pytest.approx(
            60.0, abs=0.1
        )
        assert hr_oracle_fft(np.sin(2 * np.pi * 2.5 * t), 30.0) == pytest.approx(
            150.0, abs=0.1
        )

    def test_noisy_sinusoid_monte_carlo(self):
        # 1.2 Hz sinusoid at 10 dB SNR: noise variance = A^2 / (2 * 10).
        t = np.arange(450) / 30.0
        signal = np.sin(2 * np.pi * 1.2 * t + 0.5)
        sigma = math.sqrt(1.0 / 20.0)
        hits = 0
        for seed in range(100):
            noise = np.random.default_rng(seed).normal(0.0, sigma, size=t.size)
            try:
                hr = hr_oracle_fft(signal + noise, 30.0)
            except NoDominantPeakError:
                continue
            hits += abs(hr - 72.0) <= 1.0
        assert hits >= 95

    def test_rejects_short_trace(self):
        with pytest.raises(ValueError, match="2 s"):
            hr_oracle_fft(np.ones(59), 30.0)

    def test_no_dominant_peak_on_flat_trace(self):
        with pytest.raises(NoDominantPeakError):
            hr_oracle_fft(np.full(300, 0.5), 30.0)

    def test_resolution_finer_than_half_bpm(self):
        t = np.arange(150) / 30.0
        hr = hr_oracle_fft(np.sin(2 * np.pi * (97.3 / 60.0) * t), 30.0)
        assert abs(hr - 97.3) <= 0.5


class TestNyquistMaxStride:
    def test_thirty_fps_bound(self):
        assert nyquist_max_stride(30, 160) == 5

    def test_stride_six_violates_bound(self):
        # 30/6 = 5 fps is below the 5.33 Hz Nyquist rate.
        assert 30.0 / 6.0 <= 2 * 160.0 / 60.0
        assert nyquist_max_stride(30, 160) < 6

    def test_matches_exhaustive_scan(self):
        for fps, hr_max in [(61.0, 160.0), (30.0, 160.0), (24.0, 120.0), (100.0, 150.0)]:
            best = max(
                s for s in range(1, 200) if fps / s > 2 * hr_max / 60.0
            )
            assert nyquist_max_stride(fps, hr_max) == best
        assert nyquist_max_stride(61, 160) == 11

    def test_invalid_when_stride_one_fails(self):
        with pytest.raises(ValueError):
            nyquist_max_stride(5.0, 160.0)


class TestProfiles:
    def test_intensity_flicker_positive(self):
        with pytest.raises(ValueError):
            IntensityProfile(base=0.0)
        with pytest.raises(ValueError):
            IntensityProfile(flicker_amplitude=1.0, flicker_freq_hz=1.0)
        profile = IntensityProfile(flicker_amplitude=0.3, flicker_freq_hz=2.0)
        t = np.linspace(0, 5, 1000)
        assert np.all(profile(t) > 0)

    def test_motion_band_limited(self):
        with pytest.raises(ValueError):
            MotionProfile(amplitude=0.1, freq_hz=0.5)
        profile = MotionProfile(amplitude=0.1, freq_hz=0.2)
        assert np.max(np.abs(profile(np.linspace(0, 10, 500)))) <= 0.1


class TestSynthesizeDataset:
    def test_counts_ids_and_determinism(self):
        scene = SyntheticScene(frame_size=32, n_frames=40)
        items = list(synthesize_dataset(3, 2, scene, noise_sigma=0.01, seed=5))
        assert len(items) == 6
        subjects = {label.subject_id for _, _, label in items}
        assert len(subjects) == 3
        for clip, lms, label in items:
            assert isinstance(clip, Clip)
            assert clip.video_id == label.clip_id
            assert 40.0 <= label.hr_bpm <= 160.0
        again = list(synthesize_dataset(3, 2, scene, noise_sigma=0.01, seed=5))
        for (a, _, la), (b, _, lb) in zip(items, again):
            np.testing.assert_array_equal(a.pixels, b.pixels)
            assert la == lb
