"""Fusion of rendered label maps with background segmentation and object masks.

Rule 1: pixels without projection (255 in the rendered map) take the background label.
Rule 2: object masks are pasted over the result, except on pixels where the rendered map already
holds a movable class. Masks go in descending confidence, the lower index first on equal
confidence, and never overwrite pixels pasted by an earlier mask.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classRegistry import IGNORE_ID, ClassRegistry
from .renderer import LabelMap

DEFAULT_CONFIDENCE = 0.9


class DimensionMismatchError(ValueError):
    """Rasters that must share a size do not."""


class NonMovableObjectError(ValueError):
    """An object mask carries a class outside the movable group."""


@dataclass
class ObjectMask:
    """Instance mask of a movable object with its detector confidence."""
    classId: int
    pixels: np.ndarray
    confidence: float

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f'Confidence must lie in [0, 1], got {self.confidence}')


def holeCount(label: LabelMap) -> int:
    """Number of pixels still holding 255."""
    return int(np.count_nonzero(label.data == IGNORE_ID))


def fuse(rendered: LabelMap, background: LabelMap, objects: Sequence[ObjectMask], registry: ClassRegistry,
         threshold: float = DEFAULT_CONFIDENCE) -> LabelMap:
    """Fuse a rendered label map with background labels and object masks.

    Args:
        rendered (LabelMap): map projected from the semantic 3D map
        background (LabelMap): per-pixel background segmentation, may hold 255
        objects (list): object masks; those below threshold are skipped
        registry (ClassRegistry): decides which classes are movable
        threshold (float): minimal confidence of a pasted mask

    Returns:
        LabelMap: fused labels

    Raises:
        DimensionMismatchError: rasters of different size
        NonMovableObjectError: a mask class is not movable
    """
    shape = rendered.data.shape
    if background.data.shape != shape:
        raise DimensionMismatchError(f'Background {background.data.shape} does not match rendered {shape}')
    for index, obj in enumerate(objects):
        if obj.pixels.shape != shape:
            raise DimensionMismatchError(f'Object mask {index} is {obj.pixels.shape}, expected {shape}')
        if not registry.isMovable(obj.classId):
            raise NonMovableObjectError(f'Object mask {index} has non-movable class {obj.classId}')
    holes = rendered.data == IGNORE_ID
    fused = np.where(holes, background.data, rendered.data).astype(np.uint16)
    protected = np.isin(rendered.data, registry.movableIds())
    claimed = np.zeros(shape, dtype=bool)
    order = sorted(range(len(objects)), key=lambda i: (-objects[i].confidence, i))
    skipped = 0
    for index in order:
        obj = objects[index]
        if obj.confidence < threshold:
            skipped += 1
            continue
        paint = obj.pixels & ~protected & ~claimed
        fused[paint] = obj.classId
        claimed |= paint
    if skipped:
        logging.info('Skipped %d object masks below confidence %.2f', skipped, threshold)
    result = LabelMap(fused)
    remaining = holeCount(result)
    if remaining:
        logging.warning('Fused label map keeps %d unlabeled pixels', remaining)
    return result
