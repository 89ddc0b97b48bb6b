"""Pose localization against the semantic map: GPS/IMU noise simulation, the semantically weighted
geometric loss, pose refinement by direct loss minimization and pose-stream evaluation.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (NEAR_PLANE, CameraModel, CameraPose, PoseRecord, RelativePose, composeCorrection,
                       projectPoints, rotationAngleDeg, translationError)
from .pointCloud import SemanticPointCloud
from .renderer import DepthMap, LabelMap

DEFAULT_TRANS_MAX = 7.5  # meters
DEFAULT_ROT_MAX = 15.0  # degrees
LOSS_WIDTH, LOSS_HEIGHT = 304, 256
STRONG_CLASSES = (14, 15, 16)  # traffic light, pole, traffic sign
STRONG_WEIGHT = 2.0
IRLS_FLOOR = 1e-9  # pixels


class EmptyVisibleSetError(ValueError):
    """No map point is visible under the ground-truth pose."""


class DivergenceError(ValueError):
    """The refinement produced a non-finite loss or pose."""


class PoseStreamMismatchError(ValueError):
    """Estimated and ground-truth streams differ in length or frame ids."""


@dataclass(frozen=True)
class NoiseModel:
    """Uniform GPS/IMU perturbation: offset magnitude in [0, transMax] m, rotation angle in [0, rotMax] deg."""
    transMax: float = DEFAULT_TRANS_MAX
    rotMax: float = DEFAULT_ROT_MAX
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.transMax) and self.transMax >= 0):
            raise ValueError(f'transMax must be finite and >= 0, got {self.transMax}')
        if not (math.isfinite(self.rotMax) and self.rotMax >= 0):
            raise ValueError(f'rotMax must be finite and >= 0, got {self.rotMax}')

    def generator(self) -> np.random.Generator:
        """Fresh random generator of this model's seed."""
        return np.random.default_rng(self.seed)


def _unitVector(rng: np.random.Generator) -> np.ndarray:
    while True:
        vector = rng.standard_normal(3)
        norm = float(np.linalg.norm(vector))
        if norm > 1e-12:
            return vector / norm


def drawPerturbation(rng: np.random.Generator, model: NoiseModel) -> RelativePose:
    """One perturbation: direction, magnitude, rotation axis and angle, in this draw order."""
    direction = _unitVector(rng)
    magnitude = rng.uniform(0.0, model.transMax)
    axis = _unitVector(rng)
    angle = math.radians(rng.uniform(0.0, model.rotMax))
    return RelativePose.fromRotation(Rotation.from_rotvec(axis * angle), direction * magnitude)


def perturb(pose: CameraPose, model: NoiseModel, rng: Optional[np.random.Generator] = None) -> CameraPose:
    """Coarse pose p^c = p* + eps; rng defaults to a generator of model.seed."""
    rng = rng if rng is not None else model.generator()
    return composeCorrection(pose, drawPerturbation(rng, model))


def perturbStream(poses: Sequence[CameraPose], model: NoiseModel) -> list[CameraPose]:
    """Perturb a pose stream with one generator, so frame k depends on the seed and k only."""
    rng = model.generator()
    return [perturb(pose, model, rng) for pose in poses]


@dataclass
class SemanticWeightTable:
    """Loss weight per class id; classes without an entry get the default."""
    weights: dict[int, float] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self) -> None:
        for classId, weight in {**self.weights, -1: self.default}.items():
            if not (math.isfinite(weight) and weight >= 0):
                raise ValueError(f'Weight of class {classId} must be finite and >= 0, got {weight}')
        self.weights = {int(classId): float(weight) for classId, weight in self.weights.items()}

    @classmethod
    def defaultTable(cls) -> SemanticWeightTable:
        """Stronger weight for traffic lights, poles and traffic signs."""
        return cls({classId: STRONG_WEIGHT for classId in STRONG_CLASSES})

    def weightsFor(self, classIds: np.ndarray) -> np.ndarray:
        """Weight of every class id."""
        classIds = np.asarray(classIds)
        result = np.full(classIds.shape, self.default, dtype=np.float64)
        for classId, weight in self.weights.items():
            result[classIds == classId] = weight
        return result

    def scaled(self, factor: float) -> SemanticWeightTable:
        """Every weight multiplied by factor."""
        return SemanticWeightTable({classId: weight * factor for classId, weight in self.weights.items()},
                                   self.default * factor)


def loadWeights(path: Union[str, Path], default: float = 1.0) -> SemanticWeightTable:
    """Read 'class_id,weight' rows; an optional header row and '#' lines are skipped."""
    weights: dict[int, float] = {}
    with open(path, newline='', encoding='utf-8') as fh:
        for lineNo, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith('#'):
                continue
            if lineNo == 1 and row[0].strip() == 'class_id':
                continue
            try:
                weights[int(row[0])] = float(row[1])
            except (IndexError, ValueError) as e:
                raise ValueError(f'{path}:{lineNo}: expected "class_id,weight"') from e
    return SemanticWeightTable(weights, default)


def saveWeights(path: Union[str, Path], table: SemanticWeightTable) -> None:
    """Write the table as 'class_id,weight' rows with a header."""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(['class_id', 'weight'])
        for classId in sorted(table.weights):
            writer.writerow([classId, f'{table.weights[classId]:.17g}'])


def poseLoss(pose: CameraPose, gt: CameraPose, points: SemanticPointCloud, cam: CameraModel,
             weights: SemanticWeightTable) -> tuple[float, int]:
    """Weighted sum of pixel distances between projections under pose and under gt.

    Points visible under gt but not under pose contribute the raster diagonal times their weight.

    Args:
        pose (CameraPose): candidate pose
        gt (CameraPose): ground-truth pose
        points (SemanticPointCloud): labeled points, usually back-projected from a gt depth map
        cam (CameraModel): camera of the loss
        weights (SemanticWeightTable): per-class weights

    Returns:
        tuple: loss, number of points clamped to the penalty

    Raises:
        EmptyVisibleSetError: no point is visible under gt
    """
    return PoseObjective(points, gt, cam, weights).loss(pose)


def backProject(depth: DepthMap, label: LabelMap, pose: CameraPose, cam: CameraModel) -> SemanticPointCloud:
    """World points of the covered pixels of a depth map, at the pixel centers.

    x_cam = depth * K^-1 (col + 0.5, row + 0.5, 1), x = R x_cam + t; the class comes from the label map.
    """
    if depth.data.shape != label.data.shape:
        raise ValueError(f'Depth {depth.data.shape} and label {label.data.shape} maps differ in size')
    if (depth.width, depth.height) != (cam.width, cam.height):
        raise ValueError(f'Maps are {depth.width}x{depth.height}, camera is {cam.width}x{cam.height}')
    rows, cols = np.nonzero(depth.covered)
    d = depth.data[rows, cols]
    xCam = np.column_stack([(cols + 0.5 - cam.cx) / cam.fx * d, (rows + 0.5 - cam.cy) / cam.fy * d, d])
    return SemanticPointCloud(pose.cameraToWorld(xCam), label.data[rows, cols].astype(np.int64))


class PoseObjective:
    """Loss of candidate poses against fixed target pixels pi(x, gt) of a visible point set.

    Poses are varied through the local chart delta = (dt, dtheta): R = exp(dtheta) R0, t = t0 + dt.
    """

    def __init__(self, points: SemanticPointCloud, gtPose: CameraPose, cam: CameraModel,
                 weights: SemanticWeightTable) -> None:
        uv, _, visible = projectPoints(points.positions, gtPose, cam)
        if not visible.any():
            raise EmptyVisibleSetError('No point is visible under the ground-truth pose')
        self.cam = cam
        self.points = points.positions[visible]
        self.classIds = points.classIds[visible]
        self.targets = uv[visible]
        self.weights = weights.weightsFor(self.classIds)
        self.penalty = cam.diagonal

    def __len__(self) -> int:
        return len(self.points)

    def subsample(self, maxPoints: int) -> PoseObjective:
        """Objective over at most maxPoints observations picked with a fixed stride."""
        if maxPoints <= 0 or len(self) <= maxPoints:
            return self
        keep = np.unique(np.linspace(0, len(self) - 1, maxPoints).round().astype(np.int64))
        result = object.__new__(PoseObjective)
        result.cam, result.penalty = self.cam, self.penalty
        result.points, result.classIds = self.points[keep], self.classIds[keep]
        result.targets, result.weights = self.targets[keep], self.weights[keep]
        return result

    @staticmethod
    def retract(pose: CameraPose, delta: np.ndarray) -> CameraPose:
        """Pose moved by a chart increment."""
        delta = np.asarray(delta, dtype=float)
        try:
            return CameraPose.fromRotation(Rotation.from_rotvec(delta[3:]) * pose.rotation, pose.t + delta[:3])
        except ValueError as e:
            raise DivergenceError(f'Pose update produced an invalid pose: {e}') from e

    def residuals(self, pose: CameraPose, clampToRaster: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Pixel residuals pi(x, pose) - target and the mask of points that count as visible.

        Without clampToRaster every point in front of the near plane counts as visible.
        """
        uv, depth, valid = projectPoints(self.points, pose, self.cam)
        if not clampToRaster:
            valid = depth > NEAR_PLANE
        return uv - self.targets, valid

    def value(self, pose: CameraPose, clampToRaster: bool = True) -> float:
        """Loss value; clampToRaster=False is the surrogate ignoring the raster border."""
        residual, valid = self.residuals(pose, clampToRaster)
        perPoint = np.where(valid, np.linalg.norm(residual, axis=1), self.penalty)
        return float(np.sum(self.weights * perPoint))

    def loss(self, pose: CameraPose) -> tuple[float, int]:
        """Loss and number of clamped points."""
        _, valid = self.residuals(pose)
        return self.value(pose), int(np.count_nonzero(~valid))

    def jacobian(self, pose: CameraPose, mask: np.ndarray) -> np.ndarray:
        """Analytic d(residual)/d(delta) of the masked points, shape (M, 2, 6)."""
        rotation = pose.rotationMatrix
        diff = self.points[mask] - pose.t
        xCam = diff @ rotation
        x, y, z = xCam[:, 0], xCam[:, 1], xCam[:, 2]
        dProject = np.zeros((len(diff), 2, 3))
        dProject[:, 0, 0] = self.cam.fx / z
        dProject[:, 0, 2] = -self.cam.fx * x / z**2
        dProject[:, 1, 1] = self.cam.fy / z
        dProject[:, 1, 2] = -self.cam.fy * y / z**2
        skew = np.zeros((len(diff), 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = -diff[:, 2], diff[:, 1]
        skew[:, 1, 0], skew[:, 1, 2] = diff[:, 2], -diff[:, 0]
        skew[:, 2, 0], skew[:, 2, 1] = -diff[:, 1], diff[:, 0]
        dCamera = np.concatenate([np.broadcast_to(-rotation.T, (len(diff), 3, 3)),
                                  np.einsum('ji,njk->nik', rotation, skew)], axis=2)
        return np.einsum('nij,njk->nik', dProject, dCamera)

    def numericJacobian(self, pose: CameraPose, mask: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """Central-difference d(residual)/d(delta) of the masked points."""
        result = np.zeros((int(mask.sum()), 2, 6))
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = step
            plus, _ = self.residuals(self.retract(pose, delta), clampToRaster=False)
            minus, _ = self.residuals(self.retract(pose, -delta), clampToRaster=False)
            result[:, :, k] = (plus[mask] - minus[mask]) / (2 * step)
        return result

    def gradient(self, pose: CameraPose) -> np.ndarray:
        """Analytic gradient of the loss with respect to the chart increment at pose."""
        residual, valid = self.residuals(pose)
        norms = np.linalg.norm(residual, axis=1)
        mask = valid & (norms > 0)
        jacobian = self.jacobian(pose, mask)
        scale = self.weights[mask] / norms[mask]
        return np.einsum('n,nki,nk->i', scale, jacobian, residual[mask])

    def numericGradient(self, pose: CameraPose, step: float = 1e-6) -> np.ndarray:
        """Central-difference gradient of the loss with respect to the chart increment."""
        result = np.zeros(6)
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = step
            result[k] = (self.value(self.retract(pose, delta)) - self.value(self.retract(pose, -delta))) / (2 * step)
        return result


@dataclass
class RefineOptions:
    """Settings of the pose refinement."""
    maxIterations: int = 100
    patience: int = 8                 # consecutive rejected steps before a descent stops
    damping: float = 1e-3             # initial Marquardt factor
    starts: int = 5                   # the coarse pose plus rotation jitters
    jitterDeg: float = 5.0
    maxPoints: int = 2000             # observations kept per frame, 0 keeps all
    analyticGradient: bool = True
    surrogatePhase: bool = True       # first descend ignoring the raster border
    relTolerance: float = 1e-12
    convergedPixels: float = 1e-6     # mean weighted pixel error that ends the multi-start early

    def __post_init__(self) -> None:
        if self.maxIterations < 1 or self.patience < 1 or self.starts < 1:
            raise ValueError('maxIterations, patience and starts must be >= 1')
        if self.damping <= 0:
            raise ValueError(f'damping must be positive, got {self.damping}')


@dataclass
class RefineResult:
    """Outcome of a refinement."""
    pose: CameraPose
    loss: float
    initialLoss: float
    iterations: int
    start: int  # index of the winning start, -1 if the coarse pose was kept


def jitteredStarts(coarse: CameraPose, count: int, jitterDeg: float) -> list[CameraPose]:
    """The coarse pose followed by rotations of +-jitterDeg about the world up axis and the camera right axis."""
    angle = math.radians(jitterDeg)
    right = coarse.rotationMatrix[:, 0]
    axes = [np.array([0.0, 0.0, 1.0]), -np.array([0.0, 0.0, 1.0]), right, -right]
    starts = [coarse] + [CameraPose.fromRotation(Rotation.from_rotvec(axis * angle) * coarse.rotation, coarse.t)
                         for axis in axes]
    return starts[:count]


def _descend(objective: PoseObjective, start: CameraPose, options: RefineOptions,
             clampToRaster: bool) -> tuple[CameraPose, float, int]:
    """Damped Gauss-Newton on the IRLS form of sum w |e| with backtracking; loss never increases."""
    pose = start
    loss = objective.value(pose, clampToRaster)
    if not math.isfinite(loss):
        raise DivergenceError(f'Non-finite loss {loss} at the start pose')
    damping = options.damping
    iteration = 0
    for iteration in range(1, options.maxIterations + 1):
        if loss <= 0:
            break
        residual, mask = objective.residuals(pose, clampToRaster)
        if not mask.any():
            break
        if options.analyticGradient:
            jacobian = objective.jacobian(pose, mask)
        else:
            jacobian = objective.numericJacobian(pose, mask)
        error = residual[mask]
        irls = objective.weights[mask] / np.maximum(np.linalg.norm(error, axis=1), IRLS_FLOOR)
        hessian = np.einsum('n,nki,nkj->ij', irls, jacobian, jacobian)
        gradient = np.einsum('n,nki,nk->i', irls, jacobian, error)
        diagonal = np.diag(hessian)
        floor = 1e-12 * max(float(diagonal.max()), 1e-300)
        candidate, candidateLoss, rejected = None, loss, 0
        while candidate is None and rejected < options.patience:
            try:
                step = -np.linalg.solve(hessian + np.diag(damping * diagonal + floor), gradient)
            except np.linalg.LinAlgError:
                damping *= 10
                rejected += 1
                continue
            if not np.all(np.isfinite(step)):
                raise DivergenceError('Non-finite pose increment')
            for fraction in (1.0, 0.5, 0.25):
                trial = objective.retract(pose, fraction * step)
                trialLoss = objective.value(trial, clampToRaster)
                if not math.isfinite(trialLoss):
                    raise DivergenceError(f'Non-finite loss {trialLoss} during refinement')
                if trialLoss < loss:
                    candidate, candidateLoss = trial, trialLoss
                    break
            if candidate is None:
                damping *= 10
                rejected += 1
        if candidate is None:
            break
        damping = max(damping / 3.0, 1e-12)
        improvement = loss - candidateLoss
        pose, loss = candidate, candidateLoss
        if improvement <= options.relTolerance * (loss + improvement):
            break
    return pose, loss, iteration


def refineAgainstObjective(objective: PoseObjective, coarse: CameraPose,
                           options: Optional[RefineOptions] = None) -> RefineResult:
    """Multi-start minimization of the objective; never returns a pose worse than coarse."""
    options = options or RefineOptions()
    objective = objective.subsample(options.maxPoints)
    initialLoss = objective.value(coarse)
    best = RefineResult(coarse, initialLoss, initialLoss, 0, -1)
    target = options.convergedPixels * float(objective.weights.sum())
    if initialLoss <= target:
        return best
    for index, start in enumerate(jitteredStarts(coarse, options.starts, options.jitterDeg)):
        pose, iterations = start, 0
        if options.surrogatePhase:
            pose, _, iterations = _descend(objective, pose, options, clampToRaster=False)
        pose, loss, more = _descend(objective, pose, options, clampToRaster=True)
        logging.debug('Start %d: loss %.6g after %d iterations', index, loss, iterations + more)
        if loss < best.loss:
            best = RefineResult(pose, loss, initialLoss, iterations + more, index)
        if best.loss <= target:
            break
    return best


def refinePose(coarse: CameraPose, gtPose: CameraPose, gtRender: tuple[DepthMap, LabelMap], cam: CameraModel,
               weights: Optional[SemanticWeightTable] = None,
               options: Optional[RefineOptions] = None) -> CameraPose:
    """Correct a coarse pose by minimizing the weighted geometric loss against a ground-truth render.

    Args:
        coarse (CameraPose): noisy (usually road-rectified) pose
        gtPose (CameraPose): pose the render was made at
        gtRender (tuple): depth and label maps rendered at gtPose
        cam (CameraModel): camera; scaled to the render size when they differ
        weights (SemanticWeightTable): loss weights, default SemanticWeightTable.defaultTable()
        options (RefineOptions): optimizer settings

    Returns:
        CameraPose: refined pose

    Raises:
        EmptyVisibleSetError: the render holds no covered pixel
        DivergenceError: the loss or pose became non-finite
    """
    depth, label = gtRender
    if (cam.width, cam.height) != (depth.width, depth.height):
        cam = cam.scaled(depth.width, depth.height)
    weights = weights or SemanticWeightTable.defaultTable()
    points = backProject(depth, label, gtPose, cam)
    if not len(points):
        raise EmptyVisibleSetError('Ground-truth render holds no covered pixel')
    result = refineAgainstObjective(PoseObjective(points, gtPose, cam, weights), coarse, options)
    logging.debug('Refinement: loss %.6g -> %.6g (start %d)', result.initialLoss, result.loss, result.start)
    return result.pose


def _unpack(stream: Sequence[Union[CameraPose, PoseRecord]]) -> tuple[Optional[list[str]], list[CameraPose]]:
    if stream and isinstance(stream[0], tuple):
        return [str(item[0]) for item in stream], [item[1] for item in stream]  # type: ignore[index]
    return None, list(stream)  # type: ignore[arg-type]


def poseErrors(estimates: Sequence[Union[CameraPose, PoseRecord]],
               groundTruth: Sequence[Union[CameraPose, PoseRecord]]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame translation errors (m) and rotation errors (deg).

    Raises:
        PoseStreamMismatchError: different lengths or frame ids
    """
    estimateIds, estimatePoses = _unpack(estimates)
    gtIds, gtPoses = _unpack(groundTruth)
    if len(estimatePoses) != len(gtPoses):
        raise PoseStreamMismatchError(f'{len(estimatePoses)} estimates for {len(gtPoses)} ground-truth frames')
    if estimateIds is not None and gtIds is not None and estimateIds != gtIds:
        mismatch = next(i for i, (a, b) in enumerate(zip(estimateIds, gtIds)) if a != b)
        raise PoseStreamMismatchError(f"Frame {mismatch}: '{estimateIds[mismatch]}' vs '{gtIds[mismatch]}'")
    translation = np.array([translationError(a, b) for a, b in zip(estimatePoses, gtPoses)])
    rotation = np.array([rotationAngleDeg(a, b) for a, b in zip(estimatePoses, gtPoses)])
    return translation, rotation


def evaluatePoseStream(estimates: Sequence[Union[CameraPose, PoseRecord]],
                       groundTruth: Sequence[Union[CameraPose, PoseRecord]]) -> tuple[float, float]:
    """Median translation error (m) and median rotation error (deg) of a pose stream."""
    translation, rotation = poseErrors(estimates, groundTruth)
    if not len(translation):
        raise PoseStreamMismatchError('Cannot evaluate an empty pose stream')
    return float(np.median(translation)), float(np.median(rotation))
