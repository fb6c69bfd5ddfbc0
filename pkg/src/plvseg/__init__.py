"""Local-variation graph segmentation and its hypothesis-testing variants."""

from .forest import SegmentationResult, remove_small_segments, segment
from .imageio import LabelMap, RasterImage, load_image, load_labelmap, save_labelmap
from .pixelgraph import build_graph, sort_edges
from .policies import MergePolicy, Variant

__all__ = [
    "LabelMap",
    "MergePolicy",
    "RasterImage",
    "SegmentationResult",
    "Variant",
    "build_graph",
    "load_image",
    "load_labelmap",
    "remove_small_segments",
    "save_labelmap",
    "segment",
    "sort_edges",
]
__version__ = "0.1.0"
