import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from laserloc.errors import ImageFormatError, ParameterError
from laserloc.imagekit import (
    RasterImage,
    image_to_mask,
    load_image,
    mask_to_image,
    red_channel,
    save_image,
)
from laserloc.simulate import Scene, default_calibration, render


def test_pgm_bytes_load(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 7]))
    img = load_image(path)
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert img.data == bytes([0, 255, 128, 7])


def test_from_bytes_checks_length():
    assert RasterImage.from_bytes(2, 1, 3, range(6)).channels == 3
    with pytest.raises(ParameterError):
        RasterImage.from_bytes(2, 2, 1, b"abc")


def test_rejects_bad_arrays():
    with pytest.raises(ParameterError):
        RasterImage(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ParameterError):
        RasterImage(np.zeros((0, 3), dtype=np.uint8))
    with pytest.raises(ParameterError):
        RasterImage(np.zeros((2, 2, 2), dtype=np.uint8))


def test_pixels_read_only():
    img = RasterImage(np.zeros((3, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1


images = st.one_of(
    arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))),
    arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))),
)


@settings(max_examples=60, deadline=None)
@given(arr=images, ext=st.sampled_from([".png", ".pnm"]))
def test_round_trip(tmp_path_factory, arr, ext):
    path = tmp_path_factory.mktemp("rt") / ("img" + ext)
    img = RasterImage(arr)
    save_image(img, path)
    assert load_image(path) == img


def test_round_trip_netpbm_by_channels(tmp_path):
    gray = RasterImage(np.arange(12, dtype=np.uint8).reshape(3, 4))
    rgb = RasterImage(np.arange(36, dtype=np.uint8).reshape(3, 4, 3))
    save_image(gray, tmp_path / "g.pgm")
    save_image(rgb, tmp_path / "c.ppm")
    assert load_image(tmp_path / "g.pgm") == gray
    assert load_image(tmp_path / "c.ppm") == rgb
    with pytest.raises(ImageFormatError):
        save_image(rgb, tmp_path / "bad.pgm")


def test_zeros_round_trip(tmp_path):
    img = RasterImage(np.zeros((4, 4), dtype=np.uint8))
    save_image(img, tmp_path / "z.png")
    assert not load_image(tmp_path / "z.png").pixels.any()


def test_mask_pgm_has_two_levels(tmp_path):
    mask = np.zeros((5, 6), dtype=np.uint8)
    mask[1:3, 2] = 1
    save_image(mask_to_image(mask), tmp_path / "m.pgm")
    back = load_image(tmp_path / "m.pgm")
    assert set(np.unique(back.pixels)) == {0, 255}
    assert np.array_equal(image_to_mask(back), mask)


def test_jpeg_rejected(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "x.jpg")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.jpg")
    with pytest.raises(ImageFormatError):
        save_image(RasterImage(np.zeros((2, 2), dtype=np.uint8)), tmp_path / "x.jpg")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_image("/nonexistent/none.png")


def test_red_channel_examples():
    px = np.array([[[200, 10, 10]]], dtype=np.uint8)
    assert red_channel(RasterImage(px)).pixels[0, 0] == 200
    gray = np.full((3, 4, 3), 77, dtype=np.uint8)
    assert np.all(red_channel(RasterImage(gray)).pixels == 77)
    with pytest.raises(ParameterError):
        red_channel(RasterImage(np.zeros((2, 2), dtype=np.uint8)))


@settings(max_examples=40, deadline=None)
@given(arr=arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10), st.just(3))))
def test_red_channel_shape_and_values(arr):
    red = red_channel(RasterImage(arr))
    assert (red.height, red.width, red.channels) == (arr.shape[0], arr.shape[1], 1)
    assert set(np.unique(red.pixels)) <= set(np.unique(arr))


@pytest.fixture(scope="module")
def simulator_frame():
    scene = Scene(apple_center=(-0.047, 0.0, 1.0), noise_sigma=2.0)
    return render(scene, default_calibration(), slide_offset=0.1, rng_seed=3)


def test_simulator_fixture_round_trip(tmp_path, simulator_frame):
    img, _ = simulator_frame
    assert (img.channels, img.width, img.height) == (3, 640, 480)
    save_image(img, tmp_path / "f.png")
    assert load_image(tmp_path / "f.png").data == img.data


def test_simulator_stripe_stands_out_in_red(simulator_frame):
    img, truth = simulator_frame
    red = red_channel(img).pixels.astype(float)
    rows = truth.visible_rows
    cols = np.rint(truth.stripe_center_px).astype(int)
    stripe = red[rows, cols].mean()
    background = red[rows, cols - 8].mean()
    assert stripe - background > 60
