import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import comix.background as bg
import comix.synthvideo as sv


def _video_from(frames, video_id=0, label=2):
    return sv.Video(
        frames=np.asarray(frames, dtype=np.float64),
        domain=sv.SOURCE,
        video_id=video_id,
        label=label,
    )


def test_median_of_pixel_series():
    series = np.array([0.3, 0.1, 0.3, 0.7, 0.3]).reshape(5, 1, 1, 1)
    out = bg.extract_background_tmf(_video_from(series))
    assert out.pixels[0, 0, 0] == 0.3


def test_single_frame_video():
    frame = np.random.default_rng(0).uniform(size=(1, 4, 4, 1))
    out = bg.extract_background_tmf(_video_from(frame))
    np.testing.assert_array_equal(out.pixels, frame[0])


def test_even_frame_count_uses_middle_mean():
    series = np.array([0.0, 1.0, 0.2, 0.6]).reshape(4, 1, 1, 1)
    out = bg.extract_background_tmf(_video_from(series))
    assert out.pixels[0, 0, 0] == pytest.approx(0.4)  # mean of 0.2 and 0.6


def test_recovers_generator_background():
    cfg = sv.GenConfig(num_classes=4, videos_per_class=1, test_videos_per_class=0, seed=11)
    src, _ = sv.generate_domain_pair(cfg)
    for class_id, video in enumerate(src.train.videos):
        spec = sv.make_motion_spec(cfg, sv.SOURCE, "train", class_id, 0)
        true_bg = sv.generator_background(cfg, sv.SOURCE, "train", class_id, 0)
        est = bg.extract_background_tmf(video).pixels
        occupancy = sv.foreground_masks(
            spec, cfg.frames, cfg.height, cfg.width, cfg.fg_size
        ).mean(axis=0)
        stable = occupancy < 0.4  # pixels the foreground covers less than 40% of the time
        err = np.abs(est - true_bg)[stable]
        assert err.max() < 0.05


class TestMixCoefficient:
    def test_gamma_zero(self):
        rng = np.random.default_rng(0)
        assert all(bg.sample_mix_coefficient(0.0, rng) == 0.0 for _ in range(100))

    def test_uniform_mean(self):
        rng = np.random.default_rng(1)
        draws = np.array([bg.sample_mix_coefficient(0.5, rng) for _ in range(10000)])
        assert abs(draws.mean() - 0.25) < 0.01
        assert draws.min() >= 0.0 and draws.max() <= 0.5

    def test_seed_determinism(self):
        a = [bg.sample_mix_coefficient(0.5, np.random.default_rng(3)) for _ in range(1)]
        b = [bg.sample_mix_coefficient(0.5, np.random.default_rng(3)) for _ in range(1)]
        assert a == b

    @pytest.mark.parametrize("gamma", [-0.1, 1.5])
    def test_gamma_out_of_range(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            bg.sample_mix_coefficient(gamma, np.random.default_rng(0))


class TestMixBackground:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.video = _video_from(rng.uniform(size=(6, 4, 4, 1)))
        self.frame = bg.BackgroundFrame(pixels=rng.uniform(size=(4, 4, 1)), source_video_id=9)

    def test_lambda_zero_is_identity(self):
        out = bg.mix_background(self.video, self.frame, 0.0)
        np.testing.assert_array_equal(out.frames, self.video.frames)
        assert out.provenance == sv.MIXED
        assert out.label == self.video.label

    def test_lambda_one_is_background(self):
        out = bg.mix_background(self.video, self.frame, 1.0)
        for t in range(out.num_frames):
            np.testing.assert_array_equal(out.frames[t], self.frame.pixels)

    def test_midpoint_arithmetic(self):
        video = _video_from(np.full((2, 1, 1, 1), 0.2))
        frame = bg.BackgroundFrame(pixels=np.full((1, 1, 1), 0.6), source_video_id=0)
        out = bg.mix_background(video, frame, 0.5)
        assert out.frames[0, 0, 0, 0] == pytest.approx(0.4)

    @given(lam=st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=50, deadline=None)
    def test_convexity(self, lam):
        rng = np.random.default_rng(7)
        video = _video_from(rng.uniform(size=(3, 4, 4, 1)))
        frame = bg.BackgroundFrame(pixels=rng.uniform(size=(4, 4, 1)), source_video_id=1)
        out = bg.mix_background(video, frame, lam)
        lo = np.minimum(video.frames, frame.pixels[None])
        hi = np.maximum(video.frames, frame.pixels[None])
        assert np.all(out.frames >= lo - 1e-15) and np.all(out.frames <= hi + 1e-15)

    def test_frame_differences_scale_by_one_minus_lambda(self):
        lam = 0.37
        out = bg.mix_background(self.video, self.frame, lam)
        for t1, t2 in [(0, 1), (2, 5)]:
            got = out.frames[t1] - out.frames[t2]
            want = (1.0 - lam) * (self.video.frames[t1] - self.video.frames[t2])
            np.testing.assert_allclose(got, want, atol=1e-15)

    def test_dim_mismatch(self):
        bad = bg.BackgroundFrame(pixels=np.zeros((3, 3, 1)), source_video_id=0)
        with pytest.raises(ValueError, match="mismatch"):
            bg.mix_background(self.video, bad, 0.5)

    @pytest.mark.parametrize("lam", [-0.01, 1.01])
    def test_lambda_out_of_range(self, lam):
        with pytest.raises(ValueError, match="coefficient"):
            bg.mix_background(self.video, self.frame, lam)


def test_cache_covers_dataset():
    cfg = sv.GenConfig(num_classes=2, videos_per_class=2, test_videos_per_class=0, seed=3)
    src, _ = sv.generate_domain_pair(cfg)
    cache = bg.build_background_cache(src.train)
    assert set(cache) == {v.video_id for v in src.train.videos}


def test_combine_backgrounds():
    a = bg.BackgroundFrame(pixels=np.zeros((2, 2, 1)), source_video_id=0)
    b = bg.BackgroundFrame(pixels=np.ones((2, 2, 1)), source_video_id=1)
    out = bg.combine_backgrounds(a, b, 0.5)
    np.testing.assert_array_equal(out.pixels, np.full((2, 2, 1), 0.5))
