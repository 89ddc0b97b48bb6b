"""Segmentation and instance metrics: confusion matrix scores (Pix.Acc, mAcc, mIoU) and
interpolated instance-mask average precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .classRegistry import IGNORE_ID
from .labelFusion import DimensionMismatchError
from .renderer import LabelMap

LABEL_SPACE = 256
DEFAULT_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


class EmptyConfusionError(ValueError):
    """Summary of a confusion matrix without scored pixels."""


@dataclass
class ConfusionMatrix:
    """Pixel counts indexed [gt class, predicted class] over the ids 0..255; gt 255 is never counted."""
    counts: np.ndarray = field(default_factory=lambda: np.zeros((LABEL_SPACE, LABEL_SPACE), dtype=np.int64))

    @property
    def total(self) -> int:
        """Number of scored pixels."""
        return int(self.counts.sum())

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(conf: ConfusionMatrix, gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Confusion matrix plus the counts of one frame pair.

    Raises:
        DimensionMismatchError: gt and pred differ in size
    """
    if gt.data.shape != pred.data.shape:
        raise DimensionMismatchError(f'Ground truth {gt.data.shape} and prediction {pred.data.shape} differ')
    gtIds = gt.data.reshape(-1).astype(np.int64)
    predIds = pred.data.reshape(-1).astype(np.int64)
    scored = gtIds != IGNORE_ID
    if np.any(predIds >= LABEL_SPACE) or np.any(gtIds >= LABEL_SPACE):
        raise ValueError(f'Class ids must be below {LABEL_SPACE}')
    pairs = gtIds[scored] * LABEL_SPACE + predIds[scored]
    frame = np.bincount(pairs, minlength=LABEL_SPACE**2).reshape(LABEL_SPACE, LABEL_SPACE)
    return ConfusionMatrix(conf.counts + frame)


def perClassScores(conf: ConfusionMatrix) -> dict[int, tuple[float, float]]:
    """Accuracy and IoU of every class present in the ground truth."""
    diagonal = np.diag(conf.counts).astype(np.float64)
    rows = conf.counts.sum(axis=1).astype(np.float64)
    cols = conf.counts.sum(axis=0).astype(np.float64)
    present = np.flatnonzero(rows > 0)
    return {int(c): (float(diagonal[c] / rows[c]), float(diagonal[c] / (rows[c] + cols[c] - diagonal[c])))
            for c in present}


def summarize(conf: ConfusionMatrix) -> tuple[float, float, float]:
    """Pixel accuracy, mean class accuracy and mean IoU; means over classes present in the ground truth.

    Raises:
        EmptyConfusionError: no scored pixel
    """
    total = conf.total
    if total == 0:
        raise EmptyConfusionError('Confusion matrix holds no scored pixel')
    scores = perClassScores(conf)
    pixAcc = float(np.trace(conf.counts)) / total
    mAcc = float(np.mean([acc for acc, _ in scores.values()]))
    mIou = float(np.mean([iou for _, iou in scores.values()]))
    return pixAcc, mAcc, mIou


@dataclass
class InstancePrediction:
    """Predicted instance mask with class and score."""
    mask: np.ndarray
    classId: int
    score: float
    imageId: Union[int, str] = 0

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError('Instance mask must not be empty')


@dataclass
class GroundTruthInstance:
    """Ground-truth instance mask with class."""
    mask: np.ndarray
    classId: int
    imageId: Union[int, str] = 0

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)


def maskIou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 when both are empty."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f'Masks {a.shape} and {b.shape} differ')
    union = np.count_nonzero(a | b)
    return float(np.count_nonzero(a & b)) / union if union else 0.0


def interpolatedAp(matched: Sequence[bool], gtCount: int) -> float:
    """101-point interpolated AP of score-sorted match flags against gtCount instances."""
    if gtCount == 0 or not len(matched):
        return 0.0
    flags = np.asarray(matched, dtype=bool)
    truePositives = np.cumsum(flags)
    falsePositives = np.cumsum(~flags)
    recall = truePositives / gtCount
    precision = truePositives / (truePositives + falsePositives)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    positions = np.searchsorted(recall, RECALL_POINTS, side='left')
    sampled = np.where(positions < len(envelope), envelope[np.minimum(positions, len(envelope) - 1)], 0.0)
    return float(np.mean(sampled))


def _matchFlags(preds: list[InstancePrediction], gts: list[GroundTruthInstance], threshold: float) -> list[bool]:
    """Greedy score-descending matching of predictions to unmatched gt of the same image."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    used = [False] * len(gts)
    flags = []
    for index in order:
        pred = preds[index]
        bestIou, best = threshold, -1
        for gtIndex, gt in enumerate(gts):
            if used[gtIndex] or gt.imageId != pred.imageId:
                continue
            iou = maskIou(pred.mask, gt.mask)
            if iou >= bestIou and (best < 0 or iou > bestIou):
                bestIou, best = iou, gtIndex
        if best >= 0:
            used[best] = True
        flags.append(best >= 0)
    return flags


def _asGroundTruth(item: Union[GroundTruthInstance, tuple]) -> GroundTruthInstance:
    if isinstance(item, GroundTruthInstance):
        return item
    return GroundTruthInstance(*item)


def instanceApPerClass(preds: Sequence[InstancePrediction], gts: Iterable[Union[GroundTruthInstance, tuple]],
                       iouThresholds: Optional[Sequence[float]] = None) -> dict[int, float]:
    """AP of every class present in the ground truth, averaged over the IoU thresholds.

    Args:
        preds (list): predicted instances of all images
        gts (list): GroundTruthInstance or (mask, classId[, imageId]) tuples
        iouThresholds (list): default 0.50:0.05:0.95

    Returns:
        dict: class id -> AP
    """
    thresholds = list(iouThresholds) if iouThresholds is not None else list(DEFAULT_IOU_THRESHOLDS)
    gtList = [_asGroundTruth(item) for item in gts]
    result: dict[int, float] = {}
    for classId in sorted({gt.classId for gt in gtList}):
        classGts = [gt for gt in gtList if gt.classId == classId]
        classPreds = [pred for pred in preds if pred.classId == classId]
        scores = [interpolatedAp(_matchFlags(classPreds, classGts, threshold), len(classGts))
                  for threshold in thresholds]
        result[classId] = float(np.mean(scores))
    return result


def instanceAp(preds: Sequence[InstancePrediction], gts: Iterable[Union[GroundTruthInstance, tuple]],
               iouThresholds: Optional[Sequence[float]] = None) -> float:
    """Mean AP over the classes present in the ground truth; 0 without gt instances."""
    perClass = instanceApPerClass(preds, gts, iouThresholds)
    return float(np.mean(list(perClass.values()))) if perClass else 0.0


def difficultySplit(counts: Sequence[int], easyMax: int, moderateMax: int) -> list[str]:
    """Label images 'easy', 'moderate' or 'hard' by their number of movable objects.

    Args:
        counts (list): movable objects per image
        easyMax (int): highest count of an easy image
        moderateMax (int): highest count of a moderate image, >= easyMax
    """
    if easyMax > moderateMax:
        raise ValueError(f'easyMax {easyMax} exceeds moderateMax {moderateMax}')
    return ['easy' if count <= easyMax else 'moderate' if count <= moderateMax else 'hard' for count in counts]
