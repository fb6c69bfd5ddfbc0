import numpy as np
import pytest
from PIL import Image

from plvseg.imageio import (
    GRAY,
    LUV,
    RGB,
    CorruptHeaderError,
    ImageReadError,
    LabelMap,
    LabelOverflowError,
    RasterImage,
    UnsupportedFormatError,
    canonicalize,
    load_image,
    load_labelmap,
    rgb_to_luv,
    save_image,
    save_labelmap,
    smooth,
)

# 16 probe colors: cube corners, grays, and a few mixed tones
PROBE = np.array(
    [
        [0, 0, 0], [255, 255, 255], [255, 0, 0], [0, 255, 0], [0, 0, 255],
        [255, 255, 0], [0, 255, 255], [255, 0, 255], [128, 128, 128], [64, 64, 64],
        [200, 150, 100], [10, 200, 30], [90, 30, 220], [250, 128, 114], [1, 2, 3], [17, 170, 255],
    ],
    dtype=np.float64,
)


def reference_luv(r, g, b):
    """Scalar sRGB -> XYZ -> CIELUV, written out from the CIE formulas (D65, 2 degree)."""

    def lin(c):
        c /= 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = lin(r), lin(g), lin(b)
    X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    Xn, Yn, Zn = 0.9504700, 1.0000000, 1.0888300
    yr = Y / Yn
    L = 116 * yr ** (1 / 3) - 16 if yr > (6 / 29) ** 3 else (29 / 3) ** 3 * yr
    if X + 15 * Y + 3 * Z == 0:
        return (L, 0.0, 0.0)
    up = 4 * X / (X + 15 * Y + 3 * Z)
    vp = 9 * Y / (X + 15 * Y + 3 * Z)
    upn = 4 * Xn / (Xn + 15 * Yn + 3 * Zn)
    vpn = 9 * Yn / (Xn + 15 * Yn + 3 * Zn)
    return (L, 13 * L * (up - upn), 13 * L * (vp - vpn))


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
    return path


class TestDecode:
    def test_black_png(self, tmp_path):
        img = load_image(write_png(tmp_path / "b.png", np.zeros((2, 2))), GRAY, 0)
        assert img.width == 2 and img.height == 2 and img.channels == 1
        assert img.data.ravel().tolist() == [0, 0, 0, 0]

    def test_no_smoothing_is_exact(self, tmp_path):
        arr = np.random.default_rng(1).integers(0, 256, (7, 9, 3))
        img = load_image(write_png(tmp_path / "c.png", arr), RGB, 0)
        np.testing.assert_array_equal(img.data, arr)

    def test_ppm_and_png_agree(self, tmp_path):
        arr = np.random.default_rng(2).integers(0, 256, (5, 6, 3)).astype(np.uint8)
        save_image(tmp_path / "x.ppm", arr)
        write_png(tmp_path / "x.png", arr)
        a = load_image(tmp_path / "x.ppm", RGB, 0)
        b = load_image(tmp_path / "x.png", RGB, 0)
        np.testing.assert_array_equal(a.data, b.data)

    def test_pgm_with_comment(self, tmp_path):
        p = tmp_path / "g.pgm"
        p.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([0, 100, 0]))
        assert load_image(p, GRAY, 0).data.ravel().tolist() == [0, 100, 0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageReadError):
            load_image(tmp_path / "nope.png")

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "x.jpg"
        p.write_bytes(b"\xff\xd8\xff\xe0garbage")
        with pytest.raises(UnsupportedFormatError):
            load_image(p)

    def test_corrupt_netpbm_header(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P5\nthree 1\n255\n\x00\x00\x00")
        with pytest.raises(CorruptHeaderError):
            load_image(p)

    def test_truncated_netpbm(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(CorruptHeaderError):
            load_image(p)

    def test_corrupt_png(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"\x89PNG\r\n\x1a\n" + b"\x00" * 20)
        with pytest.raises(CorruptHeaderError):
            load_image(p)

    def test_errors_are_distinct(self):
        kinds = {ImageReadError, UnsupportedFormatError, CorruptHeaderError}
        assert len(kinds) == 3
        assert not issubclass(CorruptHeaderError, UnsupportedFormatError)


class TestRasterImage:
    def test_channel_invariant(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((2, 2, 3)), GRAY)
        with pytest.raises(ValueError):
            RasterImage(np.zeros((2, 2)), LUV)

    def test_immutable(self):
        img = RasterImage(np.zeros((2, 2)), GRAY)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1


class TestSmoothing:
    def test_three_pixel_row(self):
        img = RasterImage(np.array([[0.0, 100.0, 0.0]]), GRAY)
        out = smooth(img, 0.8).data.ravel()
        assert 0 < out[1] < 100

    def test_matches_direct_convolution(self):
        # oracle: explicit normalized kernel with reflect ("abcd|dcba") padding
        rng = np.random.default_rng(0)
        plane = rng.uniform(0, 255, (6, 11))
        sigma = 0.8
        radius = int(4.0 * sigma + 0.5)
        x = np.arange(-radius, radius + 1)
        k = np.exp(-0.5 * (x / sigma) ** 2)
        k /= k.sum()
        padded = np.pad(plane, radius, mode="symmetric")
        rows = np.array([[np.dot(padded[i, j : j + 2 * radius + 1], k) for j in range(plane.shape[1])]
                         for i in range(padded.shape[0])])
        expect = np.array([[np.dot(rows[i : i + 2 * radius + 1, j], k) for j in range(plane.shape[1])]
                           for i in range(plane.shape[0])])
        got = smooth(RasterImage(plane, GRAY), sigma).data[..., 0]
        np.testing.assert_allclose(got, expect, atol=1e-9)

    @pytest.mark.parametrize("value", [0.0, 37.0, 255.0])
    def test_constant_preserved(self, value):
        img = RasterImage(np.full((5, 8, 3), value), RGB)
        out = smooth(img, 1.7)
        assert np.all(out.data == value)
        assert out.data.sum() == img.data.sum()

    def test_stays_in_range(self):
        rng = np.random.default_rng(9)
        data = rng.uniform(10, 200, (20, 20, 3))
        out = smooth(RasterImage(data, RGB), 2.0).data
        for ch in range(3):
            assert out[..., ch].min() >= data[..., ch].min()
            assert out[..., ch].max() <= data[..., ch].max()

    def test_zero_sigma_identity(self):
        img = RasterImage(np.arange(12.0).reshape(3, 4), GRAY)
        assert smooth(img, 0) is img


class TestLuv:
    def test_white(self):
        out = rgb_to_luv(RasterImage(np.full((1, 1, 3), 255.0), RGB)).data.ravel()
        assert out[0] == pytest.approx(100.0, abs=1e-6)
        assert abs(out[1]) < 1e-3 and abs(out[2]) < 1e-3

    def test_black(self):
        out = rgb_to_luv(RasterImage(np.zeros((1, 1, 3)), RGB)).data.ravel()
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_red_lightness(self):
        out = rgb_to_luv(RasterImage(np.array([[[255.0, 0, 0]]]), RGB)).data.ravel()
        assert out[0] == pytest.approx(53.24, abs=0.01)

    def test_probe_set_matches_reference(self):
        ours = rgb_to_luv(RasterImage(PROBE[None], RGB)).data[0]
        ref = np.array([reference_luv(*c) for c in PROBE])
        np.testing.assert_allclose(ours, ref, atol=1e-3)

    def test_close_to_skimage(self):
        # skimage tabulates the D65 white slightly differently, hence the looser bound
        skcolor = pytest.importorskip("skimage.color")
        ours = rgb_to_luv(RasterImage(PROBE[None], RGB)).data[0]
        np.testing.assert_allclose(ours, skcolor.rgb2luv(PROBE[None] / 255.0)[0], atol=1e-2)

    def test_deterministic(self):
        a = rgb_to_luv(RasterImage(PROBE[None], RGB)).data
        b = rgb_to_luv(RasterImage(PROBE[None], RGB)).data
        np.testing.assert_array_equal(a, b)

    def test_lightness_range(self):
        ours = rgb_to_luv(RasterImage(PROBE[None], RGB)).data[0]
        assert np.all((ours[:, 0] >= 0) & (ours[:, 0] <= 100 + 1e-9))

    def test_wrong_colorspace(self):
        with pytest.raises(ValueError):
            rgb_to_luv(RasterImage(np.zeros((1, 1)), GRAY))


def flood_fill_components(labels):
    """Oracle: count 4-connected same-label components by explicit BFS."""
    h, w = labels.shape
    seen = np.zeros_like(labels, dtype=bool)
    count = 0
    for y in range(h):
        for x in range(w):
            if seen[y, x]:
                continue
            count += 1
            stack = [(y, x)]
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and labels[ny, nx] == labels[y, x]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count


class TestLabelMaps:
    @pytest.mark.parametrize("suffix", [".pgm", ".csv"])
    def test_round_trip(self, tmp_path, suffix):
        labels = canonicalize(np.random.default_rng(4).integers(0, 5, (9, 13)))
        save_labelmap(labels, tmp_path / f"gt{suffix}")
        back = load_labelmap(tmp_path / f"gt{suffix}")
        np.testing.assert_array_equal(back.labels, labels.labels)

    def test_constant_map_becomes_zero(self, tmp_path):
        save_labelmap(LabelMap(np.full((3, 4), 7)), tmp_path / "c.pgm")
        assert np.all(load_labelmap(tmp_path / "c.pgm").labels == 0)

    def test_split_label_gets_two_ids(self):
        grid = np.array([[1, 1, 0, 1], [1, 1, 0, 1]])
        canon = canonicalize(grid)
        assert canon.num_segments == flood_fill_components(grid) == 3
        assert canon.labels[0, 0] != canon.labels[0, 3]

    def test_random_maps_against_flood_fill(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            grid = rng.integers(0, 3, (7, 8))
            assert canonicalize(grid).num_segments == flood_fill_components(grid)

    def test_idempotent(self):
        grid = np.random.default_rng(6).integers(0, 4, (10, 10))
        once = canonicalize(grid)
        np.testing.assert_array_equal(canonicalize(once.labels).labels, once.labels)

    def test_dense_ids(self):
        canon = canonicalize(np.array([[40, 40, 3], [9, 9, 3]]))
        assert sorted(np.unique(canon.labels)) == [0, 1, 2]

    def test_overflow(self, tmp_path):
        with pytest.raises(LabelOverflowError):
            save_labelmap(LabelMap(np.array([[0, 70000]])), tmp_path / "big.pgm")

    def test_csv_needs_grid(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,3,4,5")
        (tmp_path / "bad.csv.json").write_text('{"width": 2}')
        with pytest.raises(CorruptHeaderError):
            load_labelmap(p)
