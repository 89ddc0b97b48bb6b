"""Road prior: 2D road raster with a precomputed offset to the nearest road cell.

Grid metric is the 8-connected chamfer distance with weights 1 and sqrt(2), which for cell
offsets (dx, dy) equals |max - min| + sqrt(2) * min. Equal distances go to the road cell with
the smaller linear index iy * nx + ix.

ROF1 file: magic b'ROF1', origin 2 x f64, resolution f64, dims (nx, ny) 2 x u32, then per cell
(row major, iy outer) a u8 road flag and the offset as 2 x f32 meters; little endian.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .classRegistry import ROAD_SURFACE_IDS
from .pointCloud import SemanticPointCloud

DEFAULT_RESOLUTION = 0.05  # meters
FIELD_MAGIC = b'ROF1'
FIELD_HEADER = np.dtype([('magic', 'S4'), ('origin', '<f8', (2,)), ('resolution', '<f8'), ('dims', '<u4', (2,))])
FIELD_CELL = np.dtype([('road', 'u1'), ('offset', '<f4', (2,))])
NEIGHBORS_8 = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))
SQRT2 = math.sqrt(2.0)


class NoRoadError(ValueError):
    """The road mask holds no cell."""


def chamferDistance(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """8-connected chamfer distance in cells for integer cell offsets."""
    ax, ay = np.abs(dx), np.abs(dy)
    low, high = np.minimum(ax, ay), np.maximum(ax, ay)
    return (high - low) + SQRT2 * low


@dataclass
class RoadOffsetField:
    """Road mask and per-cell offset (meters) to the nearest road cell; arrays indexed [iy, ix]."""
    origin: tuple[float, float]
    resolution: float
    roadMask: np.ndarray
    offsets: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        """(nx, ny) cell counts."""
        return int(self.roadMask.shape[1]), int(self.roadMask.shape[0])

    def cellOf(self, x: float, y: float, clamp: bool = True) -> tuple[int, int]:
        """Cell (ix, iy) containing a world position; clamped to the border by default."""
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        if clamp:
            nx, ny = self.shape
            ix, iy = min(max(ix, 0), nx - 1), min(max(iy, 0), ny - 1)
        return ix, iy

    def offsetAt(self, ix: int, iy: int) -> np.ndarray:
        """Offset in meters stored for cell (ix, iy)."""
        return self.offsets[iy, ix]

    def isRoad(self, x: float, y: float) -> bool:
        """True if the world position lies inside a road cell of the field."""
        ix, iy = self.cellOf(x, y, clamp=False)
        nx, ny = self.shape
        return 0 <= ix < nx and 0 <= iy < ny and bool(self.roadMask[iy, ix])

    @classmethod
    def fromMask(cls, roadMask: np.ndarray, origin: tuple[float, float] = (0.0, 0.0),
                 resolution: float = DEFAULT_RESOLUTION) -> RoadOffsetField:
        """Field of a given boolean road mask, indexed [iy, ix]."""
        if resolution <= 0:
            raise ValueError(f'Resolution must be positive, got {resolution}')
        roadMask = np.asarray(roadMask, dtype=bool)
        nearest = nearestRoadCells(roadMask)
        ny, nx = roadMask.shape
        iy, ix = np.divmod(np.arange(nx * ny), nx)
        nearestIy, nearestIx = np.divmod(nearest, nx)
        offsets = np.stack([(nearestIx - ix) * resolution, (nearestIy - iy) * resolution], axis=-1)
        return cls((float(origin[0]), float(origin[1])), float(resolution), roadMask,
                   offsets.reshape(ny, nx, 2).astype(np.float64))


def nearestRoadCells(roadMask: np.ndarray) -> np.ndarray:
    """Linear index of the nearest road cell for every cell, by multi-source wavefront propagation.

    Each round hands every changed cell's source to its 8 neighbors and keeps the smallest
    (distance to source, source index) per cell; it stops when no cell changes.

    Args:
        roadMask (np.ndarray): boolean mask [iy, ix]

    Returns:
        np.ndarray: flat array of nearest road-cell indices

    Raises:
        NoRoadError: mask without road cell
    """
    ny, nx = roadMask.shape
    flatMask = roadMask.reshape(-1)
    if not flatMask.any():
        raise NoRoadError('Road mask holds no road cell')
    nearest = np.full(nx * ny, -1, dtype=np.int64)
    distance = np.full(nx * ny, np.inf)
    frontier = np.flatnonzero(flatMask)
    nearest[frontier] = frontier
    distance[frontier] = 0.0
    rounds = 0
    while len(frontier):
        rounds += 1
        frontierIy, frontierIx = np.divmod(frontier, nx)
        sources = nearest[frontier]
        sourceIy, sourceIx = np.divmod(sources, nx)
        cells, candidates, distances = [], [], []
        for dx, dy in NEIGHBORS_8:
            ix, iy = frontierIx + dx, frontierIy + dy
            inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
            cells.append(iy[inside] * nx + ix[inside])
            candidates.append(sources[inside])
            distances.append(chamferDistance(ix[inside] - sourceIx[inside], iy[inside] - sourceIy[inside]))
        cell, candidate, dist = np.concatenate(cells), np.concatenate(candidates), np.concatenate(distances)
        order = np.lexsort((candidate, dist, cell))
        cell, candidate, dist = cell[order], candidate[order], dist[order]
        first = np.ones(len(cell), dtype=bool)
        first[1:] = cell[1:] != cell[:-1]
        cell, candidate, dist = cell[first], candidate[first], dist[first]
        better = (dist < distance[cell]) | ((dist == distance[cell]) & (candidate < nearest[cell]))
        frontier = cell[better]
        nearest[frontier] = candidate[better]
        distance[frontier] = dist[better]
    logging.debug('Nearest-road propagation converged after %d rounds on %dx%d cells', rounds, nx, ny)
    return nearest


def rasterizeRoad(cloud: SemanticPointCloud, roadClasses: Iterable[int], resolution: float,
                  bounds: Optional[tuple[float, float, float, float]] = None) -> tuple[tuple[float, float], np.ndarray]:
    """Road mask of the cells holding a road-class point.

    Args:
        cloud (SemanticPointCloud): map
        roadClasses (list): ids counted as road
        resolution (float): meters per cell
        bounds (tuple): (xmin, ymin, xmax, ymax); default the xy extent of the whole map

    Returns:
        tuple: grid origin, boolean mask [iy, ix]
    """
    if bounds is None:
        xmin, ymin = cloud.positions[:, :2].min(axis=0)
        xmax, ymax = cloud.positions[:, :2].max(axis=0)
    else:
        xmin, ymin, xmax, ymax = bounds
    nx = int(math.floor((xmax - xmin) / resolution)) + 1
    ny = int(math.floor((ymax - ymin) / resolution)) + 1
    mask = np.zeros((ny, nx), dtype=bool)
    road = cloud.positions[np.isin(cloud.classIds, list(roadClasses))]
    ix = np.floor((road[:, 0] - xmin) / resolution).astype(np.int64)
    iy = np.floor((road[:, 1] - ymin) / resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    mask[iy[inside], ix[inside]] = True
    return (float(xmin), float(ymin)), mask


def buildOffsetField(cloud: SemanticPointCloud, roadClasses: Iterable[int] = ROAD_SURFACE_IDS,
                     resolution: float = DEFAULT_RESOLUTION,
                     bounds: Optional[tuple[float, float, float, float]] = None) -> RoadOffsetField:
    """Rasterize the road points of a map and precompute the nearest-road offsets.

    Args:
        cloud (SemanticPointCloud): non-empty labeled map
        roadClasses (list): class ids treated as road
        resolution (float): meters per cell
        bounds (tuple): optional (xmin, ymin, xmax, ymax) of the grid

    Returns:
        RoadOffsetField: field with offsets in meters

    Raises:
        NoRoadError: no point of a road class inside the grid
    """
    if resolution <= 0:
        raise ValueError(f'Resolution must be positive, got {resolution}')
    if not len(cloud):
        raise ValueError('Cannot build a road field from an empty map')
    origin, mask = rasterizeRoad(cloud, roadClasses, resolution, bounds)
    field = RoadOffsetField.fromMask(mask, origin, resolution)
    logging.info('Road field: %dx%d cells, %d road cells', mask.shape[1], mask.shape[0], int(mask.sum()))
    return field


def rectifyTranslation(t: np.ndarray, field: RoadOffsetField) -> np.ndarray:
    """Move a translation onto the road: (tx + fx, ty + fy, tz) with f read at the (clamped) cell of t."""
    t = np.asarray(t, dtype=float).reshape(3)
    offset = field.offsetAt(*field.cellOf(t[0], t[1]))
    return np.array([t[0] + offset[0], t[1] + offset[1], t[2]])


def saveField(path: Union[str, Path], field: RoadOffsetField) -> None:
    """Write a field as ROF1."""
    nx, ny = field.shape
    header = np.zeros(1, dtype=FIELD_HEADER)
    header['magic'] = FIELD_MAGIC
    header['origin'] = field.origin
    header['resolution'] = field.resolution
    header['dims'] = (nx, ny)
    cells = np.zeros(nx * ny, dtype=FIELD_CELL)
    cells['road'] = field.roadMask.reshape(-1)
    cells['offset'] = field.offsets.reshape(-1, 2)
    with open(path, 'wb') as fh:
        fh.write(header.tobytes())
        fh.write(cells.tobytes())


def loadField(path: Union[str, Path]) -> RoadOffsetField:
    """Read a ROF1 field."""
    data = Path(path).read_bytes()
    if len(data) < FIELD_HEADER.itemsize or data[:4] != FIELD_MAGIC:
        raise ValueError(f'{path}: not a ROF1 road-field file')
    header = np.frombuffer(data, dtype=FIELD_HEADER, count=1)[0]
    nx, ny = (int(value) for value in header['dims'])
    if len(data) != FIELD_HEADER.itemsize + nx * ny * FIELD_CELL.itemsize:
        raise ValueError(f'{path}: size does not match {nx}x{ny} cells')
    cells = np.frombuffer(data, dtype=FIELD_CELL, offset=FIELD_HEADER.itemsize)
    origin = (float(header['origin'][0]), float(header['origin'][1]))
    return RoadOffsetField(origin, float(header['resolution']), cells['road'].reshape(ny, nx).astype(bool),
                           cells['offset'].reshape(ny, nx, 2).astype(np.float64))
