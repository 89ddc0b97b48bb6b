"""Software z-buffer renderer of label and depth maps by class-dependent point splatting.

Footprint rule: a point projecting to (u, v) at depth d with world square size s covers the
square of half-width h = floor(max(1, s * fx / d) / 2) pixels around pixel (floor(u), floor(v)).
Per pixel the smallest depth wins; equal depths go to the smaller point index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .classRegistry import IGNORE_ID
from .geometry import CameraModel, CameraPose, projectPoints
from .pointCloud import SemanticPointCloud

DEFAULT_SPLAT_RANGE = (0.025, 0.05)  # meters
CHUNK_ENTRIES = 1 << 22
LARGE_FOOTPRINT = 64 * 64


@dataclass
class LabelMap:
    """Per-pixel class ids, 255 where no data."""
    data: np.ndarray

    @classmethod
    def blank(cls, width: int, height: int) -> LabelMap:
        """Map with every pixel 255."""
        return cls(np.full((height, width), IGNORE_ID, dtype=np.uint16))

    @property
    def width(self) -> int:
        """Columns."""
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        """Rows."""
        return int(self.data.shape[0])


@dataclass
class DepthMap:
    """Per-pixel depth in meters, +inf where empty."""
    data: np.ndarray

    @classmethod
    def blank(cls, width: int, height: int) -> DepthMap:
        """Map with every pixel empty."""
        return cls(np.full((height, width), np.inf, dtype=np.float64))

    @property
    def width(self) -> int:
        """Columns."""
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        """Rows."""
        return int(self.data.shape[0])

    @property
    def covered(self) -> np.ndarray:
        """Boolean mask of pixels holding a depth."""
        return np.isfinite(self.data)


@dataclass
class SplatConfig:
    """World-space splat square size per class, clamped into [sMin, sMax]."""
    sizes: dict[int, float] = field(default_factory=dict)
    sMin: float = DEFAULT_SPLAT_RANGE[0]
    sMax: float = DEFAULT_SPLAT_RANGE[1]

    def __post_init__(self) -> None:
        if not 0 <= self.sMin <= self.sMax:
            raise ValueError(f'Invalid splat range [{self.sMin}, {self.sMax}]')
        self.sizes = {int(classId): min(self.sMax, max(self.sMin, float(size)))
                      for classId, size in self.sizes.items()}

    def sizeFor(self, classIds: np.ndarray) -> np.ndarray:
        """Square size of every class id; classes without an entry get sMin."""
        classIds = np.asarray(classIds)
        result = np.full(classIds.shape, self.sMin, dtype=np.float64)
        for classId, size in self.sizes.items():
            result[classIds == classId] = size
        return result


@dataclass
class BirdviewRaster:
    """Top-down raster: per cell the intensity, class and height of the highest point."""
    origin: tuple[float, float]
    resolution: float
    intensity: np.ndarray
    label: np.ndarray
    height: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        """Cells holding at least one point."""
        return np.isfinite(self.height)


def classMeanDistances(cloud: SemanticPointCloud, poses: Sequence[CameraPose]) -> dict[int, float]:
    """Per class: mean over its points of the distance to the closest camera center."""
    if not len(cloud):
        raise ValueError('Splat sizes need a non-empty cloud')
    if not poses:
        raise ValueError('Splat sizes need at least one camera pose')
    centers = np.array([pose.t for pose in poses])
    distances, _ = cKDTree(centers).query(cloud.positions, k=1)
    classIds, inverse = np.unique(cloud.classIds, return_inverse=True)
    sums = np.bincount(inverse, weights=distances)
    counts = np.bincount(inverse)
    return {int(classId): float(total / count) for classId, total, count in zip(classIds, sums, counts)}


def computeSplatSizes(cloud: SemanticPointCloud, poses: Sequence[CameraPose],
                      sizeRange: tuple[float, float] = DEFAULT_SPLAT_RANGE) -> SplatConfig:
    """Square size per class proportional to its mean distance to the trajectory.

    The per-class means are mapped linearly so the smallest becomes sizeRange[0] and the largest
    sizeRange[1]; a single class gets sizeRange[0].

    Args:
        cloud (SemanticPointCloud): labeled map
        poses (list): ground-truth camera poses
        sizeRange (tuple): (sMin, sMax) in meters

    Returns:
        SplatConfig: sizes per class
    """
    sMin, sMax = sizeRange
    means = classMeanDistances(cloud, poses)
    low, high = min(means.values()), max(means.values())
    if high > low:
        sizes = {classId: sMin + (mean - low) / (high - low) * (sMax - sMin) for classId, mean in means.items()}
    else:
        sizes = {classId: sMin for classId in means}
    logging.debug('Splat sizes: %s', sizes)
    return SplatConfig(sizes, sMin, sMax)


def footprintHalfWidths(sizes: np.ndarray, depth: np.ndarray, fx: float) -> np.ndarray:
    """Half-width in pixels of the splat square: floor(max(1, s fx / d) / 2)."""
    side = np.maximum(1.0, sizes * fx / depth)
    return np.floor(side / 2.0).astype(np.int64)


class _ZBuffer:
    """Depth and winning point index per pixel; candidates merge by (depth, index)."""

    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self.depth = np.full(width * height, np.inf)
        self.index = np.full(width * height, -1, dtype=np.int64)

    def mergeEntries(self, pixels: np.ndarray, depth: np.ndarray, index: np.ndarray) -> None:
        """Merge candidate (pixel, depth, point index) triples."""
        if not len(pixels):
            return
        order = np.lexsort((index, depth, pixels))
        pixels, depth, index = pixels[order], depth[order], index[order]
        first = np.ones(len(pixels), dtype=bool)
        first[1:] = pixels[1:] != pixels[:-1]
        pixels, depth, index = pixels[first], depth[first], index[first]
        current, currentIndex = self.depth[pixels], self.index[pixels]
        wins = (depth < current) | ((depth == current) & ((index < currentIndex) | (currentIndex < 0)))
        self.depth[pixels[wins]] = depth[wins]
        self.index[pixels[wins]] = index[wins]

    def mergeRectangle(self, col: int, row: int, half: int, depth: float, index: int) -> None:
        """Merge one large square footprint directly into the buffer."""
        rows = slice(max(0, row - half), min(self.height, row + half + 1))
        cols = slice(max(0, col - half), min(self.width, col + half + 1))
        depthView = self.depth.reshape(self.height, self.width)[rows, cols]
        indexView = self.index.reshape(self.height, self.width)[rows, cols]
        wins = (depth < depthView) | ((depth == depthView) & ((index < indexView) | (indexView < 0)))
        depthView[wins] = depth
        indexView[wins] = index


def _footprintEntries(cols: np.ndarray, rows: np.ndarray, half: int, width: int,
                      height: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel ids covered by squares of one half-width; also the owning position in the input."""
    offsets = np.arange(-half, half + 1)
    dCol, dRow = np.meshgrid(offsets, offsets)
    allCols = cols[:, None] + dCol.ravel()[None, :]
    allRows = rows[:, None] + dRow.ravel()[None, :]
    owner = np.broadcast_to(np.arange(len(cols))[:, None], allCols.shape)
    inside = (allCols >= 0) & (allCols < width) & (allRows >= 0) & (allRows < height)
    return allRows[inside] * width + allCols[inside], owner[inside]


def render(cloud: SemanticPointCloud, pose: CameraPose, cam: CameraModel,
           splat: Optional[SplatConfig] = None) -> tuple[LabelMap, DepthMap]:
    """Render label and depth maps of a cloud seen from pose.

    Args:
        cloud (SemanticPointCloud): semantic map, may be empty
        pose (CameraPose): camera pose
        cam (CameraModel): intrinsics and raster size
        splat (SplatConfig): square sizes; default is the minimum size for every class

    Returns:
        tuple: LabelMap, DepthMap
    """
    splat = splat or SplatConfig()
    label, depthMap = LabelMap.blank(cam.width, cam.height), DepthMap.blank(cam.width, cam.height)
    if not len(cloud):
        return label, depthMap
    uv, depth, valid = projectPoints(cloud.positions, pose, cam)
    pointIndex = np.flatnonzero(valid)
    if not len(pointIndex):
        return label, depthMap
    depth = depth[pointIndex]
    cols = np.floor(uv[pointIndex, 0]).astype(np.int64)
    rows = np.floor(uv[pointIndex, 1]).astype(np.int64)
    halves = footprintHalfWidths(splat.sizeFor(cloud.classIds[pointIndex]), depth, cam.fx)
    zBuffer = _ZBuffer(cam.width, cam.height)
    for half in np.unique(halves):
        members = np.flatnonzero(halves == half)
        side = 2 * int(half) + 1
        if side * side > LARGE_FOOTPRINT:
            for member in members:
                zBuffer.mergeRectangle(int(cols[member]), int(rows[member]), int(half), float(depth[member]),
                                       int(pointIndex[member]))
            continue
        chunk = max(1, CHUNK_ENTRIES // (side * side))
        for start in range(0, len(members), chunk):
            part = members[start:start + chunk]
            pixels, owner = _footprintEntries(cols[part], rows[part], int(half), cam.width, cam.height)
            zBuffer.mergeEntries(pixels, depth[part][owner], pointIndex[part][owner])
    hit = zBuffer.index >= 0
    label.data.reshape(-1)[hit] = cloud.classIds[zBuffer.index[hit]]
    depthMap.data.reshape(-1)[hit] = zBuffer.depth[hit]
    return label, depthMap


def renderBirdview(road: SemanticPointCloud, bounds: tuple[float, float, float, float],
                   resolution: float) -> BirdviewRaster:
    """Orthographic top-down raster keeping the highest point of every cell.

    Cell (ix, iy) covers [xmin + ix*res, xmin + (ix+1)*res) x [ymin + iy*res, ...); arrays are indexed [iy, ix].

    Args:
        road (SemanticPointCloud): usually the output of filterRoadPoints
        bounds (tuple): (xmin, ymin, xmax, ymax) in meters
        resolution (float): meters per cell

    Returns:
        BirdviewRaster: intensity (nan empty), label (255 empty), height (-inf empty)
    """
    xmin, ymin, xmax, ymax = bounds
    if resolution <= 0:
        raise ValueError(f'Resolution must be positive, got {resolution}')
    if xmax <= xmin or ymax <= ymin:
        raise ValueError(f'Degenerate bounds {bounds}')
    nx = int(np.ceil((xmax - xmin) / resolution - 1e-9))
    ny = int(np.ceil((ymax - ymin) / resolution - 1e-9))
    intensity = np.full((ny, nx), np.nan)
    label = np.full((ny, nx), IGNORE_ID, dtype=np.uint16)
    height = np.full((ny, nx), -np.inf)
    raster = BirdviewRaster((xmin, ymin), resolution, intensity, label, height)
    if not len(road):
        return raster
    ix = np.floor((road.positions[:, 0] - xmin) / resolution).astype(np.int64)
    iy = np.floor((road.positions[:, 1] - ymin) / resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    index = np.flatnonzero(inside)
    cells = iy[index] * nx + ix[index]
    z = road.positions[index, 2]
    order = np.lexsort((index, -z, cells))
    cells, index = cells[order], index[order]
    first = np.ones(len(cells), dtype=bool)
    first[1:] = cells[1:] != cells[:-1]
    cells, index = cells[first], index[first]
    intensity.reshape(-1)[cells] = road.intensity[index]
    label.reshape(-1)[cells] = road.classIds[index]
    height.reshape(-1)[cells] = road.positions[index, 2]
    return raster


def coverage(label: LabelMap) -> float:
    """Fraction of pixels holding a class other than 255."""
    if label.data.size == 0:
        return 0.0
    return float(np.mean(label.data != IGNORE_ID))
