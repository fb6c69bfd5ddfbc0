"""Raster images, label maps and their on-disk formats.

Supported inputs are PNG (through Pillow) and binary netpbm (P5/P6).
Label maps are stored as 16-bit PGM or as a headerless integer CSV whose
width comes from a ``<name>.csv.json`` sidecar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

GRAY, RGB, LUV = "GRAY", "RGB", "LUV"
COLORSPACES = (GRAY, RGB, LUV)
DEFAULT_SIGMA = 0.8


class ImageReadError(OSError):
    """The file could not be opened or read."""


class UnsupportedFormatError(ValueError):
    """The file is not in one of the supported raster formats."""


class CorruptHeaderError(ValueError):
    """The file claims a supported format but its header is malformed."""


class LabelOverflowError(ValueError):
    """A label id does not fit in the on-disk integer width."""


@dataclass(frozen=True)
class RasterImage:
    """Pixel grid stored as a float64 array of shape (height, width, channels)."""

    data: np.ndarray
    colorspace: str

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"bad image shape {data.shape}")
        if self.colorspace not in COLORSPACES:
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        expected = 1 if self.colorspace == GRAY else 3
        if data.shape[2] != expected:
            raise ValueError(f"{self.colorspace} needs {expected} channels, got {data.shape[2]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel integer segment ids, shape (height, width)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ValueError(f"label map must be a non-empty 2-D grid, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        if labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_segments(self) -> int:
        return int(np.unique(self.labels).size)

    def canonical(self, connectivity: int = 4) -> "LabelMap":
        return canonicalize(self.labels, connectivity)


def canonicalize(labels: np.ndarray, connectivity: int = 4) -> LabelMap:
    """Split spatially disconnected labels and renumber densely in raster order."""
    labels = np.asarray(labels)
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    out = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    for value in np.unique(labels):
        comp, n = ndimage.label(labels == value, structure=structure)
        mask = comp > 0
        out[mask] = comp[mask] + offset - 1
        offset += n
    return LabelMap(relabel_dense(out))


def relabel_dense(labels: np.ndarray) -> np.ndarray:
    """Renumber ids to 0..S-1 in order of first appearance (raster scan)."""
    flat = np.asarray(labels).ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse].reshape(np.shape(labels)).astype(np.int64)


# ---------------------------------------------------------------------------
# Color
# ---------------------------------------------------------------------------

# sRGB primaries, D65 white
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = _RGB_TO_XYZ @ np.ones(3)
_EPSILON = 216 / 24389
_KAPPA = 24389 / 27


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_luv(img: RasterImage) -> RasterImage:
    """CIE 1976 L*u*v* from 8-bit-range sRGB under D65."""
    if img.colorspace != RGB:
        raise ValueError(f"expected an RGB image, got {img.colorspace}")
    lin = _srgb_to_linear(np.clip(img.data / 255.0, 0.0, 1.0))
    xyz = lin @ _RGB_TO_XYZ.T
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    yr = y / _WHITE[1]
    L = np.where(yr > _EPSILON, 116.0 * np.cbrt(yr) - 16.0, _KAPPA * yr)

    denom = x + 15.0 * y + 3.0 * z
    safe = np.where(denom > 0, denom, 1.0)
    up = np.where(denom > 0, 4.0 * x / safe, 0.0)
    vp = np.where(denom > 0, 9.0 * y / safe, 0.0)
    wd = _WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2]
    un = 4.0 * _WHITE[0] / wd
    vn = 9.0 * _WHITE[1] / wd
    u = np.where(denom > 0, 13.0 * L * (up - un), 0.0)
    v = np.where(denom > 0, 13.0 * L * (vp - vn), 0.0)
    return RasterImage(np.stack([L, u, v], axis=-1), LUV)


def rgb_to_gray(img: RasterImage) -> RasterImage:
    if img.colorspace != RGB:
        raise ValueError(f"expected an RGB image, got {img.colorspace}")
    gray = img.data @ np.array([0.299, 0.587, 0.114])
    return RasterImage(gray, GRAY)


def convert(img: RasterImage, colorspace: str) -> RasterImage:
    colorspace = colorspace.upper()
    if img.colorspace == colorspace:
        return img
    if img.colorspace == GRAY and colorspace in (RGB, LUV):
        img = RasterImage(np.repeat(img.data, 3, axis=2), RGB)
        return convert(img, colorspace)
    if img.colorspace == RGB and colorspace == LUV:
        return rgb_to_luv(img)
    if img.colorspace == RGB and colorspace == GRAY:
        return rgb_to_gray(img)
    raise ValueError(f"cannot convert {img.colorspace} to {colorspace}")


def smooth(img: RasterImage, sigma: float) -> RasterImage:
    """Per-channel Gaussian blur with reflected borders; identity when sigma == 0."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return img
    out = np.empty_like(img.data)
    for ch in range(img.channels):
        plane = img.data[..., ch]
        blurred = ndimage.gaussian_filter(plane, sigma, mode="reflect", truncate=4.0)
        # a normalized nonnegative kernel cannot leave the input range; clip rounding noise
        out[..., ch] = np.clip(blurred, plane.min(), plane.max())
    return RasterImage(out, img.colorspace)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc


def _parse_netpbm_header(buf: bytes, path) -> tuple[str, int, int, int, int]:
    """Return (magic, width, height, maxval, data offset)."""
    magic = buf[:2].decode("ascii", "replace")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(buf) and (buf[pos : pos + 1].isspace() or buf[pos : pos + 1] == b"#"):
            if buf[pos : pos + 1] == b"#":
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptHeaderError(f"{path}: malformed {magic} header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise CorruptHeaderError(f"{path}: malformed {magic} header")
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise CorruptHeaderError(f"{path}: bad dimensions or maxval ({width}x{height}, {maxval})")
    return magic, width, height, maxval, pos + 1


def read_netpbm(path) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6), 8 or 16 bit."""
    buf = _read_bytes(path)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"{path}: not a binary PGM/PPM file")
    magic_s, width, height, maxval, offset = _parse_netpbm_header(buf, path)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(buf) - offset < count * dtype.itemsize:
        raise CorruptHeaderError(f"{path}: header promises more pixel data than the file holds")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    arr = arr.reshape(height, width, channels) if channels == 3 else arr.reshape(height, width)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8)


def write_netpbm(path, arr: np.ndarray, maxval: int | None = None) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    magic = b"P6" if arr.ndim == 3 else b"P5"
    if maxval is None:
        maxval = 255 if arr.dtype == np.uint8 else 65535
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, arr.shape[1], arr.shape[0], maxval)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _decode(path) -> np.ndarray:
    buf = _read_bytes(path)
    if buf[:2] in (b"P5", b"P6"):
        return read_netpbm(path)
    if buf[:8] == _PNG_MAGIC:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("I;16", "I;16B", "I"):
                    return np.asarray(im).astype(np.uint16)
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB")
                return np.asarray(im)
        except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
            raise CorruptHeaderError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise CorruptHeaderError(f"{path}: {exc}") from exc
    raise UnsupportedFormatError(f"{path}: unsupported image format (PNG, PGM, PPM only)")


def read_image(path) -> np.ndarray:
    """Decoded 8-bit pixels, unsmoothed and unconverted: (h, w) gray or (h, w, 3) RGB."""
    arr = _decode(path)
    if arr.dtype != np.uint8:
        raise UnsupportedFormatError(f"{path}: only 8-bit images are supported")
    return arr


def load_image(path, colorspace: str = LUV, smooth_sigma: float = DEFAULT_SIGMA) -> RasterImage:
    """Decode an image, smooth it in RGB/gray, then convert to ``colorspace``."""
    arr = read_image(path)
    img = RasterImage(arr.astype(np.float64), RGB if arr.ndim == 3 else GRAY)
    img = smooth(img, smooth_sigma)
    return convert(img, colorspace)


def from_array(arr: np.ndarray, colorspace: str = LUV, smooth_sigma: float = DEFAULT_SIGMA) -> RasterImage:
    """Same pipeline as :func:`load_image` for an in-memory 8-bit-range array."""
    arr = np.asarray(arr, dtype=np.float64)
    img = RasterImage(arr, RGB if arr.ndim == 3 and arr.shape[2] == 3 else GRAY)
    return convert(smooth(img, smooth_sigma), colorspace)


def save_image(path, arr: np.ndarray) -> None:
    """Write an 8-bit gray or RGB array as PNG, PGM or PPM depending on the suffix."""
    arr = np.clip(np.rint(np.asarray(arr, dtype=np.float64)), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".ppm"):
        write_netpbm(path, arr)
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(arr).save(path)
    else:
        raise UnsupportedFormatError(f"{path}: cannot write {suffix or 'extensionless'} images")


def load_labelmap(path, connectivity: int = 4) -> LabelMap:
    """Read a 16-bit PGM, PNG or CSV label map and canonicalize its ids."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        labels = _read_label_csv(path)
    else:
        labels = _decode(path)
        if labels.ndim != 2:
            raise UnsupportedFormatError(f"{path}: label maps must be single-channel")
    return canonicalize(labels.astype(np.int64), connectivity)


def save_labelmap(labels: LabelMap, path) -> None:
    path = Path(path)
    arr = labels.labels
    if path.suffix.lower() == ".csv":
        np.savetxt(path, arr.ravel()[None, :], fmt="%d", delimiter=",")
        path.with_name(path.name + ".json").write_text(
            json.dumps({"width": labels.width, "height": labels.height})
        )
        return
    if arr.max() > 65535:
        raise LabelOverflowError(f"label id {int(arr.max())} does not fit in 16 bits")
    write_netpbm(path, arr.astype(np.uint16), maxval=65535)


def _read_label_csv(path: Path) -> np.ndarray:
    sidecar = path.with_name(path.name + ".json")
    try:
        text = path.read_text()
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    try:
        values = np.array([int(t) for t in text.replace("\n", ",").split(",") if t.strip()], dtype=np.int64)
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: non-integer entry ({exc})") from exc
    width = meta.get("width")
    if width is None:
        raise CorruptHeaderError(f"{path}: missing width sidecar {sidecar.name}")
    if width < 1 or values.size % width:
        raise CorruptHeaderError(f"{path}: {values.size} values do not form rows of width {width}")
    return values.reshape(-1, width)
