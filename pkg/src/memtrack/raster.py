"""Pixel rendering of disc masks for boundary metrics and images."""
import math
from typing import Iterable, Tuple

import numpy as np
from scipy import ndimage

from .core import MaskGeom

MIN_RESOLUTION = 64
BOUNDARY_TOLERANCE = 0.008  # fraction of the image diagonal

_CROSS = ndimage.generate_binary_structure(2, 1)


class PixelGrid:
    """Pixel-centre sampling grid over a ``width`` x ``height`` world.

    ``resolution`` pixels span the longer world side.
    """

    def __init__(self, width: float, height: float, resolution: int):
        if resolution < MIN_RESOLUTION:
            raise ValueError(f"resolution {resolution} is below {MIN_RESOLUTION}")
        self.scale = max(width, height) / resolution
        self.columns = max(1, int(round(width / self.scale)))
        self.rows = max(1, int(round(height / self.scale)))
        self.xs = (np.arange(self.columns) + 0.5) * self.scale
        self.ys = (np.arange(self.rows) + 0.5) * self.scale

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.columns

    def disc(self, mask: MaskGeom) -> np.ndarray:
        dx = (self.xs - mask.center_x)[None, :]
        dy = (self.ys - mask.center_y)[:, None]
        return dx * dx + dy * dy <= mask.radius * mask.radius

    def rasterize(self, masks: Iterable[MaskGeom]) -> np.ndarray:
        """Union of the visible discs."""
        canvas = np.zeros(self.shape, dtype=bool)
        for mask in masks:
            if not mask.blank:
                canvas |= self.disc(mask)
        return canvas


def boundary(region: np.ndarray) -> np.ndarray:
    """Region pixels with a 4-neighbour outside the region or the image."""
    return region & ~ndimage.binary_erosion(region, structure=_CROSS, border_value=0)


def disk_structure(radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1)
    return offsets[:, None] ** 2 + offsets[None, :] ** 2 <= radius * radius


def tolerance_radius(shape: Tuple[int, int]) -> int:
    return int(math.ceil(BOUNDARY_TOLERANCE * math.hypot(*shape)))


def dilate(pixels: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0 or not pixels.any():
        return pixels.copy()
    return ndimage.binary_dilation(pixels, structure=disk_structure(radius))


def boundary_f(predicted: np.ndarray, truth: np.ndarray, radius: int) -> float:
    """Boundary F-measure of two regions with a disk-shaped match tolerance."""
    pred_edge, truth_edge = boundary(predicted), boundary(truth)
    pred_count, truth_count = int(pred_edge.sum()), int(truth_edge.sum())
    if pred_count == 0 and truth_count == 0:
        return 1.0
    if pred_count == 0 or truth_count == 0:
        return 0.0
    precision = int((pred_edge & dilate(truth_edge, radius)).sum()) / pred_count
    recall = int((truth_edge & dilate(pred_edge, radius)).sum()) / truth_count
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
