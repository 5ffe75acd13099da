import numpy as np
import pytest

from thermohand.imagecore import (
    BinaryMask,
    DimensionMismatchError,
    GrayImage,
    PgmDepthError,
    PgmFormatError,
    apply_mask,
    load_image,
    load_mask,
    save_image,
    save_mask,
)


def test_load_8bit_scales_by_255(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_image(path, 8)
    assert img.width == 2 and img.height == 2
    expected = np.array([[0.0, 1.0], [128 / 255, 64 / 255]])
    np.testing.assert_array_equal(img.pixels, expected)


def test_load_single_max_pixel(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P5\n1 1\n255\n" + bytes([255]))
    assert load_image(path, 8).pixels[0, 0] == 1.0


def test_load_16bit_big_endian(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n2 1\n65535\n" + bytes([0xFF, 0xFF, 0x00, 0x01]))
    img = load_image(path, 16)
    np.testing.assert_allclose(img.pixels, [[1.0, 1 / 65535]])


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "d.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([3, 7]))
    img = load_image(path, 8)
    np.testing.assert_allclose(img.pixels, [[3 / 255, 7 / 255]])


def test_roundtrip_is_lossless_for_both_depths(tmp_path):
    rng = np.random.default_rng(7)
    for depth in (8, 16):
        for i in range(100):
            img = GrayImage(rng.random((16, 16)))
            first = tmp_path / f"r{depth}_{i}_1.pgm"
            second = tmp_path / f"r{depth}_{i}_2.pgm"
            save_image(img, first, depth)
            save_image(load_image(first, depth), second, depth)
            assert first.read_bytes() == second.read_bytes()


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.pgm", 8)
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(PgmFormatError):
        load_image(bad, 8)
    truncated = tmp_path / "short.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n" + bytes([0, 1]))
    with pytest.raises(PgmFormatError):
        load_image(truncated, 8)
    wrong_depth = tmp_path / "depth.pgm"
    wrong_depth.write_bytes(b"P5\n1 1\n255\n" + bytes([0]))
    with pytest.raises(PgmDepthError):
        load_image(wrong_depth, 16)


def test_mask_roundtrip(tmp_path):
    mask = BinaryMask(np.arange(12).reshape(3, 4) % 3 == 0)
    save_mask(mask, tmp_path / "m.pgm")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.pgm").pixels, mask.pixels)


class TestApplyMask:
    def test_all_true_is_identity(self):
        img = GrayImage(np.random.default_rng(0).random((5, 5)))
        mask = BinaryMask(np.ones((5, 5), dtype=bool))
        np.testing.assert_array_equal(apply_mask(img, mask).pixels, img.pixels)

    def test_all_false_zeroes(self):
        img = GrayImage(np.full((4, 3), 0.7))
        mask = BinaryMask(np.zeros((4, 3), dtype=bool))
        assert not apply_mask(img, mask).pixels.any()

    def test_checkerboard(self):
        img = GrayImage(np.full((4, 4), 0.5))
        board = (np.indices((4, 4)).sum(axis=0) % 2) == 0
        out = apply_mask(img, BinaryMask(board)).pixels
        assert set(np.unique(out)) == {0.0, 0.5}
        np.testing.assert_array_equal(out[board], 0.5)

    def test_dimension_mismatch(self):
        img = GrayImage(np.zeros((4, 4)))
        with pytest.raises(DimensionMismatchError):
            apply_mask(img, BinaryMask(np.ones((4, 5), dtype=bool)))

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        img = GrayImage(rng.random((8, 8)))
        mask = BinaryMask(rng.random((8, 8)) > 0.5)
        once = apply_mask(img, mask)
        np.testing.assert_array_equal(apply_mask(once, mask).pixels, once.pixels)


def test_invariants_enforced():
    with pytest.raises(ValueError):
        GrayImage(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        GrayImage(np.zeros(9))
    img = GrayImage(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0
