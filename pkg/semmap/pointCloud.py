"""Semantic point clouds: frozen struct-of-arrays storage, neighbor queries and files.

File formats
- ASCII: one point per line 'x y z class_id intensity round', '#' comments.
- Binary: magic b'SPC1', u64 count, then per point 3 x f64, u16 class, f32 intensity, u16 round
  (little endian, packed).
"""
from __future__ import annotations

import logging
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from .classRegistry import IGNORE_ID

BINARY_MAGIC = b'SPC1'
BINARY_SUFFIXES = ('.spc', '.bin')
POINT_DTYPE = np.dtype([('x', '<f8'), ('y', '<f8'), ('z', '<f8'), ('classId', '<u2'), ('intensity', '<f4'),
                        ('round', '<u2')])


class SemanticPointCloud:
    """Points with class id, reflectance intensity and acquisition round; immutable after construction."""

    def __init__(self, positions: np.ndarray, classIds: Optional[np.ndarray] = None,
                 intensity: Optional[np.ndarray] = None, roundIds: Optional[np.ndarray] = None) -> None:
        """Initialize the cloud.

        Args:
            positions (np.ndarray): (N,3) positions in meters
            classIds (np.ndarray): (N,) class ids, default 255
            intensity (np.ndarray): (N,) reflectance in [0,1], default 0
            roundIds (np.ndarray): (N,) acquisition round, default 0
        """
        positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        count = len(positions)
        if not np.all(np.isfinite(positions)):
            raise ValueError('Point positions must be finite')
        self.positions = positions
        self.classIds = self._column(classIds, count, IGNORE_ID, np.int64, 'classIds')
        self.intensity = self._column(intensity, count, 0.0, np.float64, 'intensity')
        self.roundIds = self._column(roundIds, count, 0, np.int64, 'roundIds')
        if count and self.roundIds.min() < 0:
            raise ValueError('Round indices must be >= 0')
        for array in (self.positions, self.classIds, self.intensity, self.roundIds):
            array.setflags(write=False)

    @staticmethod
    def _column(values: Optional[np.ndarray], count: int, default: float, dtype: type, name: str) -> np.ndarray:
        if values is None:
            return np.full(count, default, dtype=dtype)
        column = np.array(values, dtype=dtype).reshape(-1)
        if len(column) != count:
            raise ValueError(f'{name} has {len(column)} entries for {count} points')
        return column

    @classmethod
    def empty(cls) -> SemanticPointCloud:
        """Cloud without points."""
        return cls(np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def rounds(self) -> int:
        """Number of acquisition rounds: 1 + max round index (0 for an empty cloud)."""
        return int(self.roundIds.max()) + 1 if len(self) else 0

    @cached_property
    def spatialIndex(self) -> cKDTree:
        """kd-tree over positions, built on first use."""
        return cKDTree(self.positions)

    def subset(self, selection: np.ndarray) -> SemanticPointCloud:
        """Cloud of the selected points (boolean mask or index array), order preserved."""
        selection = np.asarray(selection)
        return SemanticPointCloud(self.positions[selection], self.classIds[selection], self.intensity[selection],
                                  self.roundIds[selection])

    def withRound(self, roundId: int) -> SemanticPointCloud:
        """Same points relabeled as acquisition round roundId."""
        return SemanticPointCloud(self.positions, self.classIds, self.intensity, np.full(len(self), roundId))

    def classSet(self) -> list[int]:
        """Sorted distinct class ids."""
        return [int(classId) for classId in np.unique(self.classIds)]

    def hasLabels(self) -> bool:
        """True if any point carries a class other than 255."""
        return bool(np.any(self.classIds != IGNORE_ID))


def mergeClouds(clouds: Iterable[SemanticPointCloud]) -> SemanticPointCloud:
    """Concatenate clouds, keeping every column."""
    clouds = list(clouds)
    if not clouds:
        return SemanticPointCloud.empty()
    return SemanticPointCloud(np.concatenate([cloud.positions for cloud in clouds]),
                              np.concatenate([cloud.classIds for cloud in clouds]),
                              np.concatenate([cloud.intensity for cloud in clouds]),
                              np.concatenate([cloud.roundIds for cloud in clouds]))


def splitRounds(cloud: SemanticPointCloud) -> list[SemanticPointCloud]:
    """Split a merged cloud into one cloud per round index 0 .. rounds-1."""
    return [cloud.subset(cloud.roundIds == roundId) for roundId in range(cloud.rounds)]


def radiusNeighbors(cloud: SemanticPointCloud, center: np.ndarray, radius: float) -> np.ndarray:
    """Indices of the points with |x - center| < radius (strict), ascending.

    Args:
        cloud (SemanticPointCloud): cloud to query
        center (np.ndarray): query point
        radius (float): radius in meters, > 0

    Returns:
        np.ndarray: point indices
    """
    if radius <= 0:
        raise ValueError(f'Radius must be positive, got {radius}')
    if not len(cloud):
        return np.zeros(0, dtype=np.int64)
    center = np.asarray(center, dtype=float).reshape(3)
    candidates = np.array(cloud.spatialIndex.query_ball_point(center, r=radius), dtype=np.int64)
    if not len(candidates):
        return candidates
    distances = np.linalg.norm(cloud.positions[candidates] - center, axis=1)
    return np.sort(candidates[distances < radius])


def loadCloud(path: Union[str, Path]) -> SemanticPointCloud:
    """Read an ASCII or SPC1 binary point-cloud file (chosen by suffix)."""
    path = Path(path)
    if path.suffix.lower() in BINARY_SUFFIXES:
        return _loadBinary(path)
    rows: list[list[float]] = []
    with open(path, encoding='utf-8') as fh:
        for lineNo, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f'{path}:{lineNo}: expected "x y z class_id intensity round"')
            try:
                rows.append([float(part) for part in parts])
            except ValueError as e:
                raise ValueError(f'{path}:{lineNo}: {e}') from e
    if not rows:
        return SemanticPointCloud.empty()
    table = np.array(rows)
    return SemanticPointCloud(table[:, :3], table[:, 3].astype(np.int64), table[:, 4], table[:, 5].astype(np.int64))


def _loadBinary(path: Path) -> SemanticPointCloud:
    data = path.read_bytes()
    if data[:4] != BINARY_MAGIC:
        raise ValueError(f'{path}: not an SPC1 point-cloud file')
    count = int(np.frombuffer(data, dtype='<u8', count=1, offset=4)[0])
    expected = 12 + count * POINT_DTYPE.itemsize
    if len(data) != expected:
        raise ValueError(f'{path}: expected {expected} bytes for {count} points, found {len(data)}')
    records = np.frombuffer(data, dtype=POINT_DTYPE, count=count, offset=12)
    positions = np.column_stack([records['x'], records['y'], records['z']])
    return SemanticPointCloud(positions, records['classId'], records['intensity'], records['round'])


def saveCloud(path: Union[str, Path], cloud: SemanticPointCloud) -> None:
    """Write a cloud; binary for the suffixes in BINARY_SUFFIXES, ASCII otherwise."""
    path = Path(path)
    if path.suffix.lower() in BINARY_SUFFIXES:
        records = np.zeros(len(cloud), dtype=POINT_DTYPE)
        records['x'], records['y'], records['z'] = cloud.positions.T
        records['classId'] = cloud.classIds
        records['intensity'] = cloud.intensity
        records['round'] = cloud.roundIds
        with open(path, 'wb') as fh:
            fh.write(BINARY_MAGIC)
            fh.write(np.array([len(cloud)], dtype='<u8').tobytes())
            fh.write(records.tobytes())
    else:
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write('# x y z class_id intensity round\n')
            for (x, y, z), classId, intensity, roundId in zip(cloud.positions, cloud.classIds, cloud.intensity,
                                                             cloud.roundIds):
                fh.write(f'{x:.17g} {y:.17g} {z:.17g} {classId} {intensity:.9g} {roundId}\n')
    logging.debug('Wrote %d points to %s', len(cloud), path)
