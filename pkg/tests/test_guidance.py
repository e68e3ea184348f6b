import numpy as np
import pytest

from sgw.guidance import (
    DEFAULT_T_RANGE,
    GuidanceSpec,
    IMAGE_GUIDANCE_SCALE,
    MockGuidance,
    TEXT_GUIDANCE_SCALE,
    alpha_bar,
    build_guidance,
    noise_image,
    protocol_noise,
)
from sgw.images import pfm_from_bytes, pfm_to_bytes


class TestSpec:
    def test_mock_requires_target(self):
        with pytest.raises(ValueError, match="target_image"):
            GuidanceSpec(mode="mock", target_image=None)

    def test_bridge_requires_endpoint(self):
        with pytest.raises(ValueError, match="endpoint"):
            GuidanceSpec(mode="text", prompt="a red jacket")

    def test_default_guidance_scales(self):
        text = GuidanceSpec(mode="text", prompt="x", endpoint="http://localhost:1")
        image = GuidanceSpec(mode="image", endpoint="http://localhost:1")
        assert text.guidance_scale == TEXT_GUIDANCE_SCALE == 10.0
        assert image.guidance_scale == IMAGE_GUIDANCE_SCALE == 3.0

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            GuidanceSpec(mode="audio")

    def test_unknown_weighting_rejected(self):
        with pytest.raises(ValueError):
            GuidanceSpec(mode="mock", target_image=np.zeros((2, 2, 3)), weighting="exp")


class TestProtocolNoise:
    def test_deterministic_given_t(self):
        a = protocol_noise(0.31, 8, 8)
        b = protocol_noise(0.31, 8, 8)
        assert np.array_equal(a, b)

    def test_varies_with_t_and_shape(self):
        assert not np.array_equal(protocol_noise(0.31, 8, 8), protocol_noise(0.32, 8, 8))
        assert protocol_noise(0.31, 4, 6).shape == (4, 6, 3)

    def test_alpha_bar_endpoints(self):
        assert alpha_bar(0.0) == pytest.approx(1.0)
        assert alpha_bar(1.0) == pytest.approx(0.0, abs=1e-30)

    def test_noise_image_blend(self):
        x = np.full((2, 2, 3), 0.5)
        eps = np.ones((2, 2, 3))
        t = 0.4
        out = noise_image(x, eps, t)
        ab = alpha_bar(t)
        assert np.allclose(out, np.sqrt(ab) * 0.5 + np.sqrt(1 - ab), atol=1e-15)


class TestMock:
    def test_gradient_is_exact_difference(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(6, 6, 3))
        target = rng.uniform(size=(6, 6, 3))
        spec = GuidanceSpec(mode="mock", target_image=target)
        g = MockGuidance(spec).pixel_gradient(x, t=0.5, camera=None, view_index=0)
        assert np.array_equal(g, x - target)  # w(t) = 1, bit-exact

    def test_single_pixel_difference(self):
        target = np.zeros((4, 4, 3))
        x = np.zeros((4, 4, 3))
        x[1, 2, 0] = 0.2
        spec = GuidanceSpec(mode="mock", target_image=target)
        g = MockGuidance(spec).pixel_gradient(x, t=0.1, camera=None, view_index=0)
        expected = np.zeros_like(x)
        expected[1, 2, 0] = 0.2
        assert np.array_equal(g, expected)

    def test_zero_weight_schedule(self):
        x = np.random.default_rng(1).uniform(size=(4, 4, 3))
        spec = GuidanceSpec(mode="mock", target_image=np.zeros((4, 4, 3)), weighting="zero")
        g = MockGuidance(spec).pixel_gradient(x, t=0.5, camera=None, view_index=0)
        assert np.all(g == 0.0)

    def test_multi_view_targets(self):
        spec = GuidanceSpec(mode="mock", target_image=np.zeros((2, 2, 3)))
        targets = [np.full((2, 2, 3), 0.1), np.full((2, 2, 3), 0.9)]
        mock = MockGuidance(spec, targets=targets)
        assert np.array_equal(mock.target_for(0), targets[0])
        assert np.array_equal(mock.target_for(1), targets[1])

    def test_build_guidance_dispatch(self):
        spec = GuidanceSpec(mode="mock", target_image=np.zeros((2, 2, 3)))
        assert isinstance(build_guidance(spec), MockGuidance)
        assert DEFAULT_T_RANGE[0] < DEFAULT_T_RANGE[1]


class TestPfm:
    def test_color_round_trip(self):
        rng = np.random.default_rng(2)
        img = rng.normal(size=(5, 7, 3)).astype(np.float32).astype(np.float64)
        out = pfm_from_bytes(pfm_to_bytes(img))
        assert np.array_equal(out, img)

    def test_gray_round_trip(self):
        rng = np.random.default_rng(3)
        img = rng.normal(size=(4, 6)).astype(np.float32).astype(np.float64)
        out = pfm_from_bytes(pfm_to_bytes(img))
        assert np.array_equal(out, img)

    def test_garbage_rejected(self):
        from sgw.errors import FormatError

        with pytest.raises(FormatError):
            pfm_from_bytes(b"JPEG not really")
