"""File codecs (PNG, PPM/PGM) and resampling primitives."""
import struct
import zlib

import numpy as np
import pytest

import util
from idstyle.errors import FormatError, ParameterError, ShapeError
from idstyle.imageio import (CATMULL_ROM_A, crop, load_image, quantize,
                             resize, save_image)
from idstyle.mosaic import FaceBox


def make_png(width, height, channels, scanlines, color_type=None, depth=8,
             interlace=0):
    """Hand-assembled PNG so decoding of arbitrary filters is testable."""
    if color_type is None:
        color_type = 0 if channels == 1 else 2
    sig = b"\x89PNG\r\n\x1a\n"

    def chunk(ctype, payload):
        return (struct.pack(">I", len(payload)) + ctype + payload
                + struct.pack(">I", zlib.crc32(ctype + payload) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", width, height, depth, color_type, 0, 0,
                       interlace)
    raw = b"".join(bytes([f]) + bytes(line) for f, line in scanlines)
    return sig + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) \
        + chunk(b"IEND", b"")


class TestPnm:
    def test_single_pixel_pgm(self, tmp_path):
        path = tmp_path / "one.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\xff")
        img = load_image(path)
        assert img.shape == (1, 1, 1)
        assert img.ravel()[0] == 1.0

    def test_comments_and_maxval_scaling(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5 # toy\n# another comment\n2 1\n100\n" + bytes([0, 50]))
        img = load_image(path)
        assert np.allclose(img.ravel(), [0.0, 0.5])

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = util.quantized(rng.uniform(size=(3, 4, 3)))
        path = tmp_path / "x.ppm"
        save_image(img, path)
        assert np.array_equal(load_image(path), img)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(FormatError, match="truncated"):
            load_image(path)

    def test_channel_suffix_mismatch(self, tmp_path):
        with pytest.raises(ParameterError):
            save_image(np.zeros((2, 2, 1)), tmp_path / "x.ppm")
        with pytest.raises(ParameterError):
            save_image(np.zeros((2, 2, 3)), tmp_path / "x.pgm")


class TestPng:
    def test_round_trip_gray_and_rgb(self, tmp_path):
        rng = np.random.default_rng(1)
        for channels in (1, 3):
            img = util.quantized(rng.uniform(size=(5, 7, channels)))
            path = tmp_path / f"rt{channels}.png"
            save_image(img, path)
            assert np.array_equal(load_image(path), img)

    def test_save_load_is_idempotent_after_first_quantization(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(4, 4, 3))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        save_image(img, p1)
        once = load_image(p1)
        save_image(once, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quantization_contract(self):
        vals = np.array([0.0, 0.5, 1.0]).reshape(1, 3, 1)
        assert quantize(vals).ravel().tolist() == [0, 128, 255]

    def test_all_filter_types_decode(self, tmp_path):
        # Rows exercising None/Sub/Up/Average/Paeth against a straight
        # per-pixel reconstruction done here by hand.
        width, height = 4, 5
        pixels = np.arange(width * height, dtype=np.uint8).reshape(height, width) * 7

        def row(vals):
            return list(vals.astype(np.uint8))

        lines = []
        lines.append((0, row(pixels[0])))  # None
        sub = pixels[1].astype(int).copy()
        sub[1:] -= pixels[1].astype(int)[:-1]
        lines.append((1, row(np.asarray(sub) % 256)))
        up = (pixels[2].astype(int) - pixels[1].astype(int)) % 256
        lines.append((2, row(np.asarray(up))))
        avg = pixels[3].astype(int).copy()
        for i in range(width):
            left = int(pixels[3][i - 1]) if i else 0
            avg[i] = (int(pixels[3][i]) - ((left + int(pixels[2][i])) >> 1)) % 256
        lines.append((3, row(np.asarray(avg))))
        pae = pixels[4].astype(int).copy()
        for i in range(width):
            left = int(pixels[4][i - 1]) if i else 0
            up_ = int(pixels[3][i])
            ul = int(pixels[3][i - 1]) if i else 0
            p = left + up_ - ul
            pa, pb, pc = abs(p - left), abs(p - up_), abs(p - ul)
            pred = left if pa <= pb and pa <= pc else (up_ if pb <= pc else ul)
            pae[i] = (int(pixels[4][i]) - pred) % 256
        lines.append((4, row(np.asarray(pae))))

        path = tmp_path / "filters.png"
        path.write_bytes(make_png(width, height, 1, lines))
        img = load_image(path)
        assert np.array_equal(quantize(img).reshape(height, width), pixels)

    def test_truncated_file(self, tmp_path):
        good = tmp_path / "good.png"
        save_image(np.full((4, 4, 3), 0.25), good)
        bad = tmp_path / "bad.png"
        bad.write_bytes(good.read_bytes()[:-10])
        with pytest.raises(FormatError, match="offset"):
            load_image(bad)

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(FormatError, match="offset 0"):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "missing.png")

    def test_unsupported_depth_and_color(self, tmp_path):
        path = tmp_path / "d16.png"
        path.write_bytes(make_png(1, 1, 1, [(0, [0, 0])], depth=16))
        with pytest.raises(FormatError, match="bit depth"):
            load_image(path)
        path.write_bytes(make_png(1, 1, 1, [(0, [0, 0])], color_type=4))
        with pytest.raises(FormatError, match="color type"):
            load_image(path)

    def test_interlaced_rejected(self, tmp_path):
        path = tmp_path / "i.png"
        path.write_bytes(make_png(1, 1, 1, [(0, [0])], interlace=1))
        with pytest.raises(FormatError, match="interlaced"):
            load_image(path)

    def test_bad_crc(self, tmp_path):
        path = tmp_path / "crc.png"
        save_image(np.full((2, 2, 1), 0.5), path)
        raw = bytearray(path.read_bytes())
        raw[20] ^= 0xFF  # corrupt inside IHDR payload
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="CRC"):
            load_image(path)


def naive_catmull_rom_resize(img, new_w, new_h):
    """Direct per-pixel evaluation of the separable Catmull-Rom formula;
    independent of the production gather/weights implementation."""
    def k(t):
        t = abs(t)
        a = CATMULL_ROM_A
        if t <= 1.0:
            return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
        if t < 2.0:
            return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
        return 0.0

    h, w, c = img.shape
    tmp = np.zeros((h, new_w, c))
    for dx in range(new_w):
        s = (dx + 0.5) * (w / new_w) - 0.5
        base = int(np.floor(s))
        for tap in range(base - 1, base + 3):
            tmp[:, dx] += k(s - tap) * img[:, min(max(tap, 0), w - 1)]
    out = np.zeros((new_h, new_w, c))
    for dy in range(new_h):
        s = (dy + 0.5) * (h / new_h) - 0.5
        base = int(np.floor(s))
        for tap in range(base - 1, base + 3):
            out[dy] += k(s - tap) * tmp[min(max(tap, 0), h - 1)]
    return np.clip(out, 0.0, 1.0)


class TestResize:
    def test_identity_is_bitwise_for_both_kernels(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(6, 5, 3))
        for kernel in ("nearest", "bicubic"):
            assert np.array_equal(resize(img, 5, 6, kernel), img)

    def test_nearest_doubling_of_single_pixel(self):
        img = np.full((1, 1, 1), 0.625)
        out = resize(img, 2, 2, "nearest")
        assert np.array_equal(out, np.full((2, 2, 1), 0.625))

    @pytest.mark.parametrize("kernel", ["nearest", "bicubic"])
    def test_constants_are_fixed_points(self, kernel):
        img = np.full((5, 4, 3), 0.37)
        out = resize(img, 9, 7, kernel)
        assert np.max(np.abs(out - 0.37)) < 1e-12

    def test_bicubic_matches_direct_kernel_evaluation(self):
        # Horizontal ramp upscaled 2x, checked against the independent
        # nested-loop evaluator.
        ramp = np.tile(np.linspace(0.1, 0.9, 8)[None, :, None], (5, 1, 1))
        got = resize(ramp, 16, 10, "bicubic")
        want = naive_catmull_rom_resize(ramp, 16, 10)
        assert np.max(np.abs(got - want)) < 1e-6

    def test_bicubic_matches_oracle_on_random_images(self):
        rng = np.random.default_rng(4)
        img = util.smooth_texture(rng, 7, 9)
        for dims in ((13, 5), (4, 11)):
            got = resize(img, dims[0], dims[1], "bicubic")
            want = naive_catmull_rom_resize(img, dims[0], dims[1])
            assert np.max(np.abs(got - want)) < 1e-12

    def test_down_up_round_trip_on_smooth_gradient(self):
        yy, xx = np.meshgrid(np.linspace(0.2, 0.8, 32),
                             np.linspace(0.3, 0.7, 32), indexing="ij")
        img = ((yy + xx) / 2.0)[:, :, None]
        down = resize(img, 16, 16, "bicubic")
        back = resize(down, 32, 32, "bicubic")
        assert util.psnr(img, back) > 40.0

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            resize(np.zeros((2, 2, 1)), 0, 2)
        with pytest.raises(ParameterError):
            resize(np.zeros((2, 2, 1)), 2, 2, "lanczos")


class TestCrop:
    def test_full_image_box_is_bitwise_copy(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(size=(4, 6, 3))
        out = crop(img, FaceBox(0, 0, 6, 4))
        assert np.array_equal(out, img)
        out[0, 0, 0] = 0.0  # must be a copy
        assert img[0, 0, 0] != 0.0

    def test_single_pixel(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(size=(3, 3, 1))
        assert crop(img, FaceBox(2, 1, 1, 1)).ravel()[0] == img[1, 2, 0]

    def test_crop_paste_identity(self):
        rng = np.random.default_rng(7)
        img = rng.uniform(size=(5, 5, 3))
        box = FaceBox(1, 2, 3, 2)
        region = crop(img, box)
        out = img.copy()
        out[box.y:box.y + box.h, box.x:box.x + box.w] = region
        assert np.array_equal(out, img)

    def test_out_of_bounds(self):
        with pytest.raises(ShapeError):
            crop(np.zeros((4, 4, 1)), FaceBox(2, 2, 3, 1))
