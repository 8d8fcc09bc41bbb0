import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from augmixcloak.imaging import (
    InvalidImageError,
    Normalizer,
    as_image,
    resize_bilinear,
    standardize,
    to_grayscale,
)
from oracles import naive_resize

unit_floats = st.floats(0.0, 1.0, allow_nan=False)


def images(max_side=12, channels=(1, 3)):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.sampled_from(channels)).flatmap(
        lambda s: arrays(np.float64, s, elements=unit_floats)
    )


def test_as_image_scales_bytes_and_adds_channel():
    img = as_image(np.array([[0, 255]], dtype=np.uint8))
    assert img.shape == (1, 2, 1)
    np.testing.assert_array_equal(img[:, :, 0], [[0.0, 1.0]])


class TestGrayscale:
    def test_single_channel_is_identity(self):
        img = np.random.default_rng(0).random((4, 5, 1))
        assert to_grayscale(img) is img

    def test_constant_rgb(self):
        out = to_grayscale(np.full((3, 3, 3), 0.37))
        assert out.shape == (3, 3, 1)
        np.testing.assert_allclose(out, 0.37, atol=1e-15)

    def test_red_pixel(self):
        out = to_grayscale(np.array([[[1.0, 0.0, 0.0]]]))
        assert out[0, 0, 0] == pytest.approx(0.299)

    def test_rejects_two_channels(self):
        with pytest.raises(InvalidImageError):
            to_grayscale(np.zeros((2, 2, 2)))

    @given(images())
    def test_idempotent(self, img):
        once = to_grayscale(img)
        np.testing.assert_array_equal(to_grayscale(once), once)


class TestResize:
    def test_same_size_identity(self):
        img = np.random.default_rng(1).random((5, 7, 3))
        np.testing.assert_array_equal(resize_bilinear(img, 5, 7), img)

    def test_checkerboard_to_single_pixel(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]
        assert resize_bilinear(img, 1, 1)[0, 0, 0] == pytest.approx(0.5)

    def test_upsample_row(self):
        img = np.array([[0.0, 1.0]])[:, :, None]
        np.testing.assert_allclose(resize_bilinear(img, 1, 3)[0, :, 0], [0.0, 0.5, 1.0])

    @pytest.mark.parametrize("size", [(0, 3), (3, 0), (-1, 2)])
    def test_rejects_bad_sizes(self, size):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((2, 2, 1)), *size)

    @settings(max_examples=40, deadline=None)
    @given(images(8), st.integers(1, 10), st.integers(1, 10))
    def test_matches_pixelwise_oracle_and_keeps_range(self, img, oh, ow):
        out = resize_bilinear(img, oh, ow)
        np.testing.assert_allclose(out, naive_resize(img, oh, ow), atol=1e-12)
        assert out.min() >= img.min() and out.max() <= img.max()


class TestStandardize:
    def test_identity_stats(self):
        img = np.random.default_rng(2).random((3, 3, 3))
        np.testing.assert_array_equal(standardize(img, 0.0, 1.0).data, img)

    def test_constant_image_to_zero(self):
        out = standardize(np.full((2, 2, 1), 0.3), [0.3], [0.1])
        np.testing.assert_array_equal(out.data, 0.0)

    def test_arithmetic(self):
        out = standardize(np.full((1, 1, 1), 0.8), [0.5], [0.25])
        assert out.data[0, 0, 0] == pytest.approx(1.2)

    def test_zero_std_rejected(self):
        with pytest.raises(ValueError):
            standardize(np.zeros((1, 1, 3)), [0, 0, 0], [1, 0, 1])

    @given(images(), st.floats(-1, 1), st.floats(0.01, 5))
    def test_round_trip(self, img, mean, std):
        std_img = standardize(img, mean, std)
        np.testing.assert_allclose(std_img.invert(), img, atol=1e-6)


def test_normalizer_matches_standardize():
    rng = np.random.default_rng(3)
    batch = rng.random((6, 4, 4, 3))
    norm = Normalizer.fit(batch)
    np.testing.assert_array_equal(norm(batch)[2], norm.standardize(batch[2]).data)
    assert Normalizer.from_dict(norm.to_dict()).means.tolist() == norm.means.tolist()
