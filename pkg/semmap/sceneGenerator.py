"""Deterministic synthetic street scenes with exact ground truth.

A scene is a straight road along +x (z = 0, y in [-roadWidth/2, roadWidth/2]) with raised sidewalks,
building facades, poles, traffic lights, traffic signs, trees and parked cars, recorded in several
acquisition rounds. Static primitives are identical in every round; transient objects float at least
0.1 m above the road and appear in a strict subset of the rounds. Cameras move along a waypoint polyline.

Scene config: 'key = value' lines, '#' comments, keys as the SceneSpec fields; waypoints as 'x,y; x,y; ...'.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .classRegistry import ROAD_ID, SIDEWALK_ID
from .geometry import CameraPose, PoseRecord, writePoses
from .pointCloud import SemanticPointCloud, saveCloud

CAR_ID, PERSON_ID = 1, 4
TRAFFIC_LIGHT_ID, POLE_ID, TRAFFIC_SIGN_ID = 14, 15, 16
BUILDING_ID, VEGETATION_ID = 20, 21
LANE_DIVIDER_ID = 200  # s_w_d
CURB_HEIGHT = 0.15
TRANSIENT_LIFT = 0.1


class DegenerateTrajectoryError(ValueError):
    """The camera trajectory has no usable length or sampling."""


@dataclass
class SceneSpec:
    """Parameters of a synthetic scene; lengths in meters."""
    seed: int = 0
    extent: float = 40.0
    roadWidth: float = 8.0
    sidewalkWidth: float = 2.5
    buildingSetback: float = 1.0
    buildingHeight: float = 8.0
    roadSpacing: float = 0.025
    objectSpacing: float = 0.05
    poles: int = 4
    trafficLights: int = 2
    trafficSigns: int = 2
    trees: int = 3
    parkedCars: int = 2
    transients: int = 1
    transientRounds: int = 1
    rounds: int = 6
    laneMarks: bool = True
    waypoints: list[tuple[float, float]] = field(default_factory=lambda: [(2.0, 0.0), (38.0, 0.0)])
    speed: float = 10.0      # m/s
    frameRate: float = 10.0  # frames/s
    cameraHeight: float = 1.5

    def __post_init__(self) -> None:
        for name in ('extent', 'roadWidth', 'roadSpacing', 'objectSpacing', 'buildingHeight'):
            if not getattr(self, name) > 0:
                raise ValueError(f'{name} must be positive, got {getattr(self, name)}')
        for name in ('poles', 'trafficLights', 'trafficSigns', 'trees', 'parkedCars', 'transients'):
            if getattr(self, name) < 0:
                raise ValueError(f'{name} must be >= 0, got {getattr(self, name)}')
        if self.rounds < 1:
            raise ValueError(f'rounds must be >= 1, got {self.rounds}')
        if self.transients and not 1 <= self.transientRounds < self.rounds:
            raise ValueError(f'transientRounds must lie in [1, {self.rounds - 1}], got {self.transientRounds}')
        self.waypoints = [(float(x), float(y)) for x, y in self.waypoints]


def _parseValue(template: Any, text: str) -> Any:
    if isinstance(template, bool):
        if text.lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
            raise ValueError(f'expected a boolean, got "{text}"')
        return text.lower() in ('true', '1', 'yes')
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    points = []
    for item in text.split(';'):
        if item.strip():
            x, y = item.split(',')
            points.append((float(x), float(y)))
    return points


def loadSceneSpec(path: Union[str, Path]) -> SceneSpec:
    """Read a 'key = value' scene config; unknown keys are rejected."""
    defaults = SceneSpec()
    known = {item.name for item in fields(SceneSpec)}
    values: dict[str, Any] = {}
    with open(path, encoding='utf-8') as fh:
        for lineNo, line in enumerate(fh, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError(f'{path}:{lineNo}: expected "key = value"')
            key, text = (part.strip() for part in line.split('=', 1))
            if key not in known:
                raise ValueError(f"{path}:{lineNo}: unknown key '{key}'")
            try:
                values[key] = _parseValue(getattr(defaults, key), text)
            except ValueError as e:
                raise ValueError(f'{path}:{lineNo}: invalid value for {key}: {e}') from e
    return SceneSpec(**values)


def saveSceneSpec(path: Union[str, Path], spec: SceneSpec) -> None:
    """Write a scene config readable by loadSceneSpec."""
    with open(path, 'w', encoding='utf-8') as fh:
        for item in fields(SceneSpec):
            value = getattr(spec, item.name)
            if item.name == 'waypoints':
                value = '; '.join(f'{x:g},{y:g}' for x, y in value)
            fh.write(f'{item.name} = {value}\n')


@dataclass
class Primitive:
    """One sampled scene element."""
    primitiveId: int
    kind: str
    classId: int
    transient: bool
    rounds: tuple[int, ...]
    positions: np.ndarray
    intensity: np.ndarray


@dataclass
class SceneMembership:
    """Source primitive and transient flag of every point, per round, plus the primitive table."""
    primitives: list[Primitive]
    pointPrimitive: list[np.ndarray]
    transient: list[np.ndarray]


def stratifiedRectangle(rng: np.random.Generator, sizeA: float, sizeB: float, spacing: float) -> np.ndarray:
    """Jittered-grid samples (a, b) of the rectangle [0, sizeA) x [0, sizeB), one per cell."""
    countA, countB = max(1, math.ceil(sizeA / spacing)), max(1, math.ceil(sizeB / spacing))
    ia, ib = np.meshgrid(np.arange(countA), np.arange(countB), indexing='ij')
    jitter = rng.uniform(0.0, 1.0, size=(countA * countB, 2))
    a = (ia.reshape(-1) + jitter[:, 0]) * sizeA / countA
    b = (ib.reshape(-1) + jitter[:, 1]) * sizeB / countB
    return np.column_stack([a, b])


def _plane(rng: np.random.Generator, origin: np.ndarray, axisA: np.ndarray, axisB: np.ndarray,
           spacing: float) -> np.ndarray:
    lengthA, lengthB = float(np.linalg.norm(axisA)), float(np.linalg.norm(axisB))
    samples = stratifiedRectangle(rng, lengthA, lengthB, spacing)
    return origin + np.outer(samples[:, 0] / lengthA, axisA) + np.outer(samples[:, 1] / lengthB, axisB)


def _box(rng: np.random.Generator, center: np.ndarray, size: np.ndarray, spacing: float) -> np.ndarray:
    """Samples of the four sides and the top of an axis-aligned box standing on z = center_z - size_z/2."""
    low = center - size / 2
    sx, sy, sz = (np.array([size[0], 0, 0]), np.array([0, size[1], 0]), np.array([0, 0, size[2]]))
    faces = [(low, sx, sz), (low + sy, sx, sz), (low, sy, sz), (low + sx, sy, sz), (low + sz, sx, sy)]
    return np.concatenate([_plane(rng, origin, a, b, spacing) for origin, a, b in faces])


def _cylinder(rng: np.random.Generator, base: np.ndarray, radius: float, height: float,
              spacing: float) -> np.ndarray:
    samples = stratifiedRectangle(rng, 2 * math.pi * radius, height, spacing)
    angle = samples[:, 0] / radius
    return np.column_stack([base[0] + radius * np.cos(angle), base[1] + radius * np.sin(angle),
                            base[2] + samples[:, 1]])


def _sphere(rng: np.random.Generator, center: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    samples = stratifiedRectangle(rng, 2 * math.pi * radius, 2 * radius, spacing)
    angle = samples[:, 0] / radius
    z = samples[:, 1] / radius - 1.0
    ring = np.sqrt(np.clip(1.0 - z**2, 0.0, 1.0))
    return center + radius * np.column_stack([ring * np.cos(angle), ring * np.sin(angle), z])


class _Builder:
    """Collects primitives with per-primitive random streams."""

    def __init__(self, spec: SceneSpec) -> None:
        self.spec = spec
        self.primitives: list[Primitive] = []
        self.placement = np.random.default_rng([spec.seed, 0])

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self.spec.seed, 1, len(self.primitives)])

    def add(self, kind: str, classId: int, positions: np.ndarray, intensity: tuple[float, float],
            rounds: tuple[int, ...] = (), rng: Any = None) -> None:
        rng = rng if rng is not None else self.rng()
        transient = bool(rounds)
        self.primitives.append(Primitive(len(self.primitives), kind, classId, transient,
                                         rounds or tuple(range(self.spec.rounds)), positions,
                                         rng.uniform(*intensity, size=len(positions))))

    def sideY(self, side: int, inset: float) -> float:
        """y on the sidewalk of one side (+1 left, -1 right), inset meters from the curb."""
        return side * (self.spec.roadWidth / 2 + inset)

    def pole(self, x: float, side: int, height: float) -> np.ndarray:
        base = np.array([x, self.sideY(side, 0.5), CURB_HEIGHT])
        return _cylinder(self.rng(), base, 0.08, height, self.spec.objectSpacing)


def _buildStatic(builder: _Builder) -> None:
    spec, place = builder.spec, builder.placement
    half = spec.roadWidth / 2
    rng = builder.rng()
    road = _plane(rng, np.array([0.0, -half, 0.0]), np.array([spec.extent, 0, 0]),
                  np.array([0, spec.roadWidth, 0]), spec.roadSpacing)
    if spec.laneMarks:
        dashed = (np.abs(road[:, 1]) < 0.075) & (np.mod(road[:, 0], 6.0) < 3.0)
        builder.add('lane', LANE_DIVIDER_ID, road[dashed], (0.85, 0.95), rng=rng)
        road = road[~dashed]
    builder.add('road', ROAD_ID, road, (0.15, 0.25), rng=rng)
    for side in (1, -1):
        origin = np.array([0.0, half if side > 0 else -half - spec.sidewalkWidth, CURB_HEIGHT])
        builder.add('sidewalk', SIDEWALK_ID, _plane(builder.rng(), origin, np.array([spec.extent, 0, 0]),
                                                    np.array([0, spec.sidewalkWidth, 0]), spec.roadSpacing),
                    (0.25, 0.35))
    for side in (1, -1):
        y = side * (half + spec.sidewalkWidth + spec.buildingSetback)
        facade = _plane(builder.rng(), np.array([0.0, y, 0.0]), np.array([spec.extent, 0, 0]),
                        np.array([0, 0, spec.buildingHeight]), spec.objectSpacing)
        builder.add('building', BUILDING_ID, facade, (0.3, 0.5))
    for _ in range(spec.poles):
        x, side = place.uniform(1.0, spec.extent - 1.0), int(place.choice([-1, 1]))
        builder.add('pole', POLE_ID, builder.pole(x, side, 6.0), (0.4, 0.5))
    for _ in range(spec.trafficLights):
        x, side = place.uniform(1.0, spec.extent - 1.0), int(place.choice([-1, 1]))
        builder.add('pole', POLE_ID, builder.pole(x, side, 4.0), (0.4, 0.5))
        center = np.array([x, builder.sideY(side, 0.5) - side * 0.3, CURB_HEIGHT + 4.5])
        builder.add('traffic_light', TRAFFIC_LIGHT_ID,
                    _box(builder.rng(), center, np.array([0.35, 0.35, 1.0]), spec.objectSpacing), (0.5, 0.7))
    for _ in range(spec.trafficSigns):
        x, side = place.uniform(1.0, spec.extent - 1.0), int(place.choice([-1, 1]))
        builder.add('pole', POLE_ID, builder.pole(x, side, 2.2), (0.4, 0.5))
        center = np.array([x, builder.sideY(side, 0.5), CURB_HEIGHT + 2.2])
        builder.add('traffic_sign', TRAFFIC_SIGN_ID,
                    _box(builder.rng(), center, np.array([0.05, 0.8, 0.8]), spec.objectSpacing), (0.8, 0.9))
    for _ in range(spec.trees):
        x, side = place.uniform(2.0, spec.extent - 2.0), int(place.choice([-1, 1]))
        y = builder.sideY(side, spec.sidewalkWidth - 0.5)
        trunk = _cylinder(builder.rng(), np.array([x, y, CURB_HEIGHT]), 0.15, 2.5, spec.objectSpacing)
        canopy = _sphere(builder.rng(), np.array([x, y, CURB_HEIGHT + 4.0]), 1.5, spec.objectSpacing)
        builder.add('tree', VEGETATION_ID, np.concatenate([trunk, canopy]), (0.3, 0.4))
    for _ in range(spec.parkedCars):
        x, side = place.uniform(3.0, spec.extent - 3.0), int(place.choice([-1, 1]))
        center = np.array([x, side * (half - 1.2), 0.75 + 0.02])
        builder.add('parked_car', CAR_ID, _box(builder.rng(), center, np.array([4.2, 1.8, 1.5]),
                                               spec.objectSpacing), (0.5, 0.6))


def _buildTransients(builder: _Builder) -> None:
    spec, place = builder.spec, builder.placement
    lane = max(0.0, spec.roadWidth / 2 - 3.4)
    for _ in range(spec.transients):
        rounds = tuple(sorted(int(k) for k in place.choice(spec.rounds, size=spec.transientRounds, replace=False)))
        if place.uniform() < 0.5:
            kind, classId, size = 'transient_car', CAR_ID, np.array([4.2, 1.8, 1.5])
        else:
            kind, classId, size = 'transient_person', PERSON_ID, np.array([0.5, 0.5, 1.7])
        x = place.uniform(size[0] / 2 + 1.0, spec.extent - size[0] / 2 - 1.0)
        y = place.uniform(-lane, lane)
        center = np.array([x, y, TRANSIENT_LIFT + size[2] / 2])
        builder.add(kind, classId, _box(builder.rng(), center, size, spec.objectSpacing), (0.4, 0.6), rounds)


def trajectory(spec: SceneSpec) -> list[CameraPose]:
    """Camera poses along the waypoint polyline, one per speed/frameRate meters.

    Raises:
        DegenerateTrajectoryError: fewer than 2 waypoints, zero length or non-positive speed or frame rate
    """
    if len(spec.waypoints) < 2:
        raise DegenerateTrajectoryError('The trajectory needs at least 2 waypoints')
    if not (spec.speed > 0 and spec.frameRate > 0):
        raise DegenerateTrajectoryError(f'Speed {spec.speed} and frame rate {spec.frameRate} must be positive')
    points = np.array(spec.waypoints, dtype=float)
    segments = np.diff(points, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    if np.any(lengths <= 0):
        raise DegenerateTrajectoryError('Consecutive waypoints must differ')
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    step = spec.speed / spec.frameRate
    poses = []
    for arc in np.arange(0.0, cumulative[-1] + 1e-9, step):
        index = min(int(np.searchsorted(cumulative, arc, side='right')) - 1, len(segments) - 1)
        forward2d = segments[index] / lengths[index]
        position = points[index] + forward2d * (arc - cumulative[index])
        forward = np.array([forward2d[0], forward2d[1], 0.0])
        down = np.array([0.0, 0.0, -1.0])
        right = np.cross(down, forward)
        rotation = np.column_stack([right, down, forward])
        center = np.array([*position, spec.cameraHeight])
        poses.append(CameraPose.fromRotation(Rotation.from_matrix(rotation), center))
    return poses


def generate(spec: SceneSpec) -> tuple[list[SemanticPointCloud], list[CameraPose], SceneMembership]:
    """Sample the scene.

    Args:
        spec (SceneSpec): scene parameters

    Returns:
        tuple: one cloud per round (round index set), ground-truth poses, per-point membership
    """
    poses = trajectory(spec)
    builder = _Builder(spec)
    _buildStatic(builder)
    _buildTransients(builder)
    clouds, pointPrimitive, transient = [], [], []
    for roundId in range(spec.rounds):
        present = [primitive for primitive in builder.primitives if roundId in primitive.rounds]
        positions = np.concatenate([primitive.positions for primitive in present])
        classIds = np.concatenate([np.full(len(primitive.positions), primitive.classId) for primitive in present])
        intensity = np.concatenate([primitive.intensity for primitive in present])
        clouds.append(SemanticPointCloud(positions, classIds, intensity, np.full(len(positions), roundId)))
        pointPrimitive.append(np.concatenate([np.full(len(p.positions), p.primitiveId) for p in present]))
        transient.append(np.concatenate([np.full(len(p.positions), p.transient) for p in present]))
    logging.info('Scene: %d primitives, %d points per round (round 0), %d frames', len(builder.primitives),
                 len(clouds[0]), len(poses))
    return clouds, poses, SceneMembership(builder.primitives, pointPrimitive, transient)


def frameIds(count: int) -> list[str]:
    """Frame ids of a generated trajectory."""
    return [f'frame_{index:05d}' for index in range(count)]


def saveScene(directory: Union[str, Path], rounds: list[SemanticPointCloud], poses: list[CameraPose],
              membership: SceneMembership) -> None:
    """Write round_<k>.spc, poses.txt, round_<k>.members ('primitive_id transient' per point) and primitives.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for roundId, cloud in enumerate(rounds):
        saveCloud(directory / f'round_{roundId}.spc', cloud)
        with open(directory / f'round_{roundId}.members', 'w', encoding='utf-8') as fh:
            for primitiveId, flag in zip(membership.pointPrimitive[roundId], membership.transient[roundId]):
                fh.write(f'{primitiveId} {int(flag)}\n')
    records: list[PoseRecord] = list(zip(frameIds(len(poses)), poses))
    writePoses(directory / 'poses.txt', records)
    with open(directory / 'primitives.csv', 'w', encoding='utf-8') as fh:
        fh.write('primitive_id,kind,class_id,transient,rounds,points\n')
        for primitive in membership.primitives:
            rounds = ' '.join(str(k) for k in primitive.rounds)
            fh.write(f'{primitive.primitiveId},{primitive.kind},{primitive.classId},{int(primitive.transient)},'
                     f'{rounds},{len(primitive.positions)}\n')
