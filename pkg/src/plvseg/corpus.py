"""Synthetic evaluation corpus with exact ground truth.

Each image is a mosaic: a randomly warped Voronoi partition whose cells are
filled with crops of the natural photographs and textures bundled with
scikit-image, recolored per cell, then shaded, blurred and noised. The cell
map is the ground truth. ``busyness`` (0..1) sets how much texture survives,
so the corpus spans smooth to heavily textured scenes.

scikit-image is only needed here; install the ``corpus`` extra.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import LabelMap, canonicalize, save_image, save_labelmap

BSDS_SHAPE = (321, 481)
GRAY_SOURCES = ("grass", "gravel", "brick", "moon", "cell")
COLOR_SOURCES = ("chelsea", "coffee", "immunohistochemistry", "rocket", "astronaut", "hubble_deep_field", "retina")


@dataclass
class MosaicImage:
    name: str
    rgb: np.ndarray  # uint8, (h, w, 3)
    gt: LabelMap
    busyness: float


def _sources() -> dict[str, np.ndarray]:
    try:
        from skimage import data
    except ImportError as exc:  # pragma: no cover
        raise ImportError("the synthetic corpus needs scikit-image (pip install 'artifact[corpus]')") from exc
    out = {}
    for name in GRAY_SOURCES + COLOR_SOURCES:
        arr = np.asarray(getattr(data, name)(), dtype=np.float64)
        if name == "retina":
            arr = arr[350:1050, 350:1050]
        if arr.max() <= 1.0:
            arr = arr * 255.0
        out[name] = arr[..., :3] if arr.ndim == 3 else arr
    return out


_CACHE: dict[str, np.ndarray] = {}


def _crop(src: np.ndarray, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    ph, pw = max(0, h - src.shape[0]), max(0, w - src.shape[1])
    if ph or pw:
        pad = ((0, ph), (0, pw)) + (((0, 0),) if src.ndim == 3 else ())
        src = np.pad(src, pad, mode="reflect")
    y = rng.integers(0, src.shape[0] - h + 1)
    x = rng.integers(0, src.shape[1] - w + 1)
    patch = src[y : y + h, x : x + w]
    if rng.random() < 0.5:
        patch = patch[:, ::-1]
    if rng.random() < 0.5:
        patch = patch[::-1, :]
    return patch


def _smooth_field(shape, sigma, rng) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return f / (np.abs(f).max() + 1e-12)


def warped_voronoi(shape: tuple[int, int], n_regions: int, rng: np.random.Generator,
                   warp: float = 30.0, fine_warp: float = 0.0) -> np.ndarray:
    h, w = shape
    seeds = np.column_stack([rng.uniform(0, h, n_regions), rng.uniform(0, w, n_regions)])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy += warp * _smooth_field(shape, 20.0, rng)
    xx += warp * _smooth_field(shape, 20.0, rng)
    if fine_warp:
        # ragged, detailed contours
        yy += fine_warp * _smooth_field(shape, 3.0, rng)
        xx += fine_warp * _smooth_field(shape, 3.0, rng)
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    return np.argmin(d, axis=2)


def make_mosaic(seed: int, busyness: float, shape: tuple[int, int] = BSDS_SHAPE,
                n_regions: int | None = None, name: str | None = None,
                contrast: float = 8.0, edge_blur: float = 1.2, fine_warp: float = 8.0,
                regions: tuple[int, int] = (30, 60)) -> MosaicImage:
    if not _CACHE:
        _CACHE.update(_sources())
    rng = np.random.default_rng(seed)
    if n_regions is None:
        n_regions = int(rng.integers(regions[0], regions[1] + 1))
    cells = warped_voronoi(shape, n_regions, rng, fine_warp=fine_warp)

    # a small palette shared by all cells: many neighbors differ only weakly,
    # as adjacent objects often do in photographs
    palette = rng.uniform(40.0, 215.0, (int(rng.integers(3, 6)), 3))
    img = np.zeros(shape + (3,))
    names = sorted(_CACHE)
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]] / max(shape)
    for r in range(n_regions):
        mask = cells == r
        if not mask.any():
            continue
        src = _CACHE[names[rng.integers(len(names))]]
        patch = _crop(src, shape, rng)
        if busyness < 0.35:
            # smooth scenes keep only the coarse structure of the source
            sig = 6.0 * (1.0 - busyness)
            axes = (sig, sig, 0) if patch.ndim == 3 else sig
            patch = ndimage.gaussian_filter(patch, axes, mode="reflect")
        if patch.ndim == 2:
            patch = patch[..., None] * rng.uniform(0.6, 1.0, 3)
        else:
            patch = patch[..., rng.permutation(3)]
        centered = patch - patch[mask].mean(axis=0)
        base = palette[rng.integers(len(palette))] + rng.normal(0.0, contrast, 3)
        ramp = rng.normal(0.0, 25.0, 3)[None, :] * (np.cos(ang := rng.uniform(0, 2 * np.pi)) * yy[mask]
                                                   + np.sin(ang) * xx[mask])[:, None]
        gain = busyness * rng.uniform(0.6, 1.6)
        img[mask] = base + ramp + gain * centered[mask]

    shading = 1.0 + 0.15 * _smooth_field(shape, 60.0, rng)
    img *= shading[..., None]
    img = ndimage.gaussian_filter(img, (edge_blur, edge_blur, 0), mode="reflect")
    img += rng.normal(0.0, 1.5, img.shape)
    rgb = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return MosaicImage(name or f"mosaic{seed:03d}", rgb, canonicalize(cells), busyness)


def make_corpus(n_images: int = 25, shape: tuple[int, int] = BSDS_SHAPE, seed: int = 0) -> list[MosaicImage]:
    """``n_images`` mosaics with busyness rising evenly from smooth to heavily textured."""
    out = []
    for i in range(n_images):
        busy = 0.08 + 0.92 * i / max(1, n_images - 1)
        out.append(make_mosaic(seed * 1000 + i, busy, shape, name=f"mosaic{i:03d}"))
    return out


def write_corpus(images: list[MosaicImage], root) -> Path:
    """Write ``images/NAME.png`` and ``gt/NAME.pgm`` under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for im in images:
        save_image(root / "images" / f"{im.name}.png", im.rgb)
        save_labelmap(im.gt, root / "gt" / f"{im.name}.pgm")
    return root
