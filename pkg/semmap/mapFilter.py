"""Map cleaning: moving-object removal across acquisition rounds and road-point extraction."""
from __future__ import annotations

import logging
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .classRegistry import IGNORE_ID, ROAD_SURFACE_IDS
from .pointCloud import SemanticPointCloud, mergeClouds

DEFAULT_DELTA = 0.6
DEFAULT_EPS_D = 0.025  # meters
DEFAULT_NORMAL_NEIGHBORS = 16
DEGENERATE_RATIO = 1e-10


class RoundMismatchError(ValueError):
    """A cloud's round metadata disagrees with its position in the round list."""


def consistencyMasks(rounds: Sequence[SemanticPointCloud], delta: float = DEFAULT_DELTA,
                     epsD: float = DEFAULT_EPS_D, workers: int = 1) -> list[np.ndarray]:
    """Per round, the boolean mask of the points observed consistently over the acquisition rounds.

    A point x_j of round j is kept if the number of rounds i (including j) holding a point closer
    than epsD, divided by the number of rounds r, is at least delta.

    Args:
        rounds (list): one cloud per round, all in a common world frame; cloud k holds round index k
        delta (float): minimal support fraction in (0, 1]
        epsD (float): neighbor distance in meters, > 0
        workers (int): threads used by the kd-tree queries; the result does not depend on it

    Returns:
        list: one keep mask per round

    Raises:
        RoundMismatchError: a cloud carries round indices other than its list position
    """
    rounds = list(rounds)
    if not rounds:
        raise ValueError('At least one round is required')
    if not 0 < delta <= 1:
        raise ValueError(f'delta must be in (0, 1], got {delta}')
    if epsD <= 0:
        raise ValueError(f'epsD must be positive, got {epsD}')
    for index, cloud in enumerate(rounds):
        found = np.unique(cloud.roundIds)
        if len(found) and (len(found) > 1 or found[0] != index):
            raise RoundMismatchError(f'Cloud {index} of {len(rounds)} reports rounds {found.tolist()}')
    roundCount = len(rounds)
    trees = [cKDTree(cloud.positions) if len(cloud) else None for cloud in rounds]
    masks: list[np.ndarray] = []
    for index, cloud in enumerate(rounds):
        support = np.zeros(len(cloud), dtype=np.int64)
        for tree in trees:
            if tree is None or not len(cloud):
                continue
            distances, _ = tree.query(cloud.positions, k=1, distance_upper_bound=epsD, workers=workers)
            support += distances < epsD
        keep = support / roundCount >= delta - 1e-12
        logging.debug('Round %d: kept %d of %d points', index, int(keep.sum()), len(cloud))
        masks.append(keep)
    return masks


def removeMoving(rounds: Sequence[SemanticPointCloud], delta: float = DEFAULT_DELTA, epsD: float = DEFAULT_EPS_D,
                 workers: int = 1) -> SemanticPointCloud:
    """Union of the consistently observed points of all rounds, original columns unchanged.

    See consistencyMasks for the keep rule and the arguments.
    """
    rounds = list(rounds)
    masks = consistencyMasks(rounds, delta, epsD, workers)
    result = mergeClouds(cloud.subset(mask) for cloud, mask in zip(rounds, masks))
    logging.info('Moving-object removal kept %d of %d points over %d rounds', len(result),
                 sum(len(cloud) for cloud in rounds), len(rounds))
    return result


def estimateNormals(positions: np.ndarray, neighbors: int = DEFAULT_NORMAL_NEIGHBORS,
                    workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Plane-fit normals from the k nearest neighbors of every point.

    Args:
        positions (np.ndarray): (N,3) positions
        neighbors (int): neighborhood size k, including the point itself
        workers (int): threads for the kd-tree query

    Returns:
        tuple: normals (N,3) and a boolean mask of degenerate (collinear or too small) neighborhoods
    """
    count = len(positions)
    if count < 3:
        return np.zeros((count, 3)), np.ones(count, dtype=bool)
    k = max(3, min(neighbors, count))
    _, indices = cKDTree(positions).query(positions, k=k, workers=workers)
    local = positions[indices]
    local = local - local.mean(axis=1, keepdims=True)
    covariance = np.einsum('nki,nkj->nij', local, local) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    normals = eigenvectors[:, :, 0]
    largest = eigenvalues[:, 2]
    degenerate = (largest <= 0) | (eigenvalues[:, 1] <= DEGENERATE_RATIO * largest)
    return normals, degenerate


def filterRoadPoints(cloud: SemanticPointCloud, maxNormalTiltDeg: float = 10.0,
                     neighbors: int = DEFAULT_NORMAL_NEIGHBORS,
                     roadClasses: Iterable[int] = ROAD_SURFACE_IDS,
                     workers: int = 1) -> tuple[SemanticPointCloud, int]:
    """Extract road points by normal direction, or by road-surface label when labels exist.

    Args:
        cloud (SemanticPointCloud): non-empty cloud
        maxNormalTiltDeg (float): allowed angle between normal and vertical, in (0, 90]
        neighbors (int): neighbors used for the plane fit
        roadClasses (list): ids accepted as road surface
        workers (int): threads for the kd-tree query

    Returns:
        tuple: road cloud, number of points dropped for a degenerate neighborhood
    """
    if not len(cloud):
        raise ValueError('Cannot filter road points of an empty cloud')
    if not 0 < maxNormalTiltDeg <= 90:
        raise ValueError(f'Tilt must be in (0, 90], got {maxNormalTiltDeg}')
    normals, degenerate = estimateNormals(cloud.positions, neighbors, workers)
    flat = np.abs(normals[:, 2]) >= math.cos(math.radians(maxNormalTiltDeg))
    labeledRoad = np.isin(cloud.classIds, list(roadClasses)) & (cloud.classIds != IGNORE_ID)
    keep = labeledRoad | (flat & ~degenerate)
    dropped = int(np.sum(degenerate & ~labeledRoad))
    if dropped:
        logging.warning('Road filter dropped %d points with degenerate neighborhoods', dropped)
    logging.info('Road filter kept %d of %d points', int(keep.sum()), len(cloud))
    return cloud.subset(keep), dropped
