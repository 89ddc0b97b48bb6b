"""End-to-end pipeline: scene -> filterMoving -> render -> perturb -> rectify -> refine -> smooth -> fuse -> evaluate.

Stages run in this fixed order. A disabled stage passes its input through (perturb, rectify, refine,
smooth) or produces nothing (render, fuse, evaluate); stages before it are never affected.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .classRegistry import ClassRegistry, defaultRegistry
from .configManager import ConfigurationManager
from .geometry import CameraModel, CameraPose, PoseRecord, readPoses, writePoses
from .kalman import kalmanSmooth
from .labelFusion import ObjectMask
from .localization import (NoiseModel, RefineOptions, SemanticWeightTable, evaluatePoseStream, loadWeights,
                           perturbStream)
from .mapFilter import consistencyMasks
from .metrics import ConfusionMatrix, accumulate, perClassScores, summarize
from .misc import writeCsv
from .pointCloud import SemanticPointCloud, loadCloud, mergeClouds, saveCloud, splitRounds
from .rasterFiles import saveDepthMap, saveLabelMap
from .renderer import DepthMap, LabelMap, SplatConfig, computeSplatSizes, render
from .roadPrior import buildOffsetField, rectifyTranslation, saveField
from .sceneGenerator import SceneSpec, frameIds, generate, loadSceneSpec, saveScene
from .worker import runFrames

STAGES = ('scene', 'filterMoving', 'render', 'perturb', 'rectify', 'refine', 'smooth', 'fuse', 'evaluate')
EXIT_CODES = {'config': 2, 'scene': 10, 'filterMoving': 11, 'render': 12, 'perturb': 13, 'rectify': 14,
              'refine': 15, 'smooth': 16, 'fuse': 17, 'evaluate': 18}
POSE_STAGES = ('coarse', 'rectified', 'refined', 'smoothed')


class StageError(ValueError):
    """A pipeline stage failed; carries the stage name and its exit code."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f'Stage {stage} failed: {message}')
        self.stage = stage
        self.exitCode = EXIT_CODES[stage]


@dataclass
class PipelineResult:
    """Exit status, artifact directory and the summary values written to summary.csv."""
    status: int
    directory: Path
    summary: dict[str, float] = field(default_factory=dict)
    failedStage: Optional[str] = None


class Pipeline:
    """Runs the enabled stages of one configuration and keeps their intermediate results."""

    def __init__(self, config: ConfigurationManager, registry: Optional[ClassRegistry] = None) -> None:
        self.config = config
        self.registry = registry or defaultRegistry()
        self.directory = Path(config.get('output')['directory'])
        self.threads = int(config.get('threads'))
        self.cam: CameraModel = config.camera()
        self.rounds: list[SemanticPointCloud] = []
        self.frames: list[str] = []
        self.poses: dict[str, list[CameraPose]] = {}
        self.map = SemanticPointCloud.empty()
        self.removed = SemanticPointCloud.empty()
        self.renders: Optional[list[tuple[LabelMap, DepthMap]]] = None
        self.confusion: Optional[ConfusionMatrix] = None
        self.summary: dict[str, float] = {}
        self._splat: Optional[SplatConfig] = None

    @property
    def splat(self) -> SplatConfig:
        """Splat sizes of the cleaned map, computed on first use."""
        if self._splat is None:
            splat = self.config.get('splat')
            self._splat = computeSplatSizes(self.map, self.poses['gt'], (splat['min'], splat['max']))
        return self._splat

    def run(self) -> PipelineResult:
        """Execute the stages in order; the first failing stage ends the run with its exit code."""
        self.directory.mkdir(parents=True, exist_ok=True)
        self.config.saveSnapshot(self.directory)
        handlers: dict[str, Callable[[bool], None]] = {stage: getattr(self, f'_{stage}') for stage in STAGES}
        for stage in STAGES:
            enabled = self.config.stageEnabled(stage)
            logging.info('Stage %s%s', stage, '' if enabled else ' (disabled)')
            try:
                handlers[stage](enabled)
            except StageError as e:
                logging.error('%s', e)
                return PipelineResult(e.exitCode, self.directory, self.summary, stage)
            except (ValueError, OSError, np.linalg.LinAlgError) as e:
                logging.error('%s', StageError(stage, str(e)))
                return PipelineResult(EXIT_CODES[stage], self.directory, self.summary, stage)
        return PipelineResult(0, self.directory, self.summary)

    def _writePoses(self, name: str) -> None:
        records: list[PoseRecord] = list(zip(self.frames, self.poses[name]))
        writePoses(self.directory / f'poses_{name}.txt', records)

    def _scene(self, enabled: bool) -> None:
        inputs = self.config.get('input')
        if enabled:
            if inputs['sceneConfig']:
                spec = loadSceneSpec(inputs['sceneConfig'])
            else:
                spec = SceneSpec(seed=int(self.config.get('seed')))
            self.rounds, gtPoses, membership = generate(spec)
            saveScene(self.directory / 'scene', self.rounds, gtPoses, membership)
            self.frames = frameIds(len(gtPoses))
        else:
            if not inputs['rounds'] or not inputs['poses']:
                raise StageError('scene', 'scene generation is disabled and no input rounds/poses are given')
            clouds = [loadCloud(path) for path in inputs['rounds']]
            self.rounds = splitRounds(clouds[0]) if len(clouds) == 1 else [
                cloud.withRound(index) for index, cloud in enumerate(clouds)]
            records = readPoses(inputs['poses'])
            self.frames = [frameId for frameId, _ in records]
            gtPoses = [pose for _, pose in records]
        if not gtPoses:
            raise StageError('scene', 'no ground-truth poses')
        self.poses['gt'] = gtPoses
        self._writePoses('gt')

    def _filterMoving(self, enabled: bool) -> None:
        if enabled:
            settings = self.config.get('mapFilter')
            masks = consistencyMasks(self.rounds, settings['delta'], settings['epsD'], self.threads)
            self.map = mergeClouds(cloud.subset(mask) for cloud, mask in zip(self.rounds, masks))
            self.removed = mergeClouds(cloud.subset(~mask) for cloud, mask in zip(self.rounds, masks))
            logging.info('Map keeps %d points, %d removed as moving', len(self.map), len(self.removed))
        else:
            self.map = mergeClouds(self.rounds)
        if not len(self.map):
            raise StageError('filterMoving', 'the cleaned map is empty')
        saveCloud(self.directory / 'map.spc', self.map)

    def _render(self, enabled: bool) -> None:
        if not enabled:
            return
        jobs = [{'frameId': frameId, 'cloud': self.map, 'pose': pose, 'cam': self.cam, 'splat': self.splat}
                for frameId, pose in zip(self.frames, self.poses['gt'])]
        self.renders = runFrames('render', jobs, self.threads)
        renderDir = self.directory / 'renders'
        renderDir.mkdir(exist_ok=True)
        for frameId, (label, depth) in zip(self.frames, self.renders):
            saveLabelMap(renderDir / f'{frameId}.pgm', label)
            saveDepthMap(renderDir / f'{frameId}.dpt', depth)

    def _perturb(self, enabled: bool) -> None:
        if enabled:
            noise = self.config.get('noise')
            model = NoiseModel(noise['transMax'], noise['rotMax'], int(self.config.get('seed')))
            self.poses['coarse'] = perturbStream(self.poses['gt'], model)
        else:
            self.poses['coarse'] = list(self.poses['gt'])
        self._writePoses('coarse')

    def _rectify(self, enabled: bool) -> None:
        if enabled:
            settings = self.config.get('roadPrior')
            roadField = buildOffsetField(self.map, settings['classes'], settings['resolution'])
            saveField(self.directory / 'roadField.rof', roadField)
            self.poses['rectified'] = [CameraPose(pose.q, rectifyTranslation(pose.t, roadField))
                                       for pose in self.poses['coarse']]
        else:
            self.poses['rectified'] = list(self.poses['coarse'])
        self._writePoses('rectified')

    def _refine(self, enabled: bool) -> None:
        if not enabled:
            self.poses['refined'] = list(self.poses['rectified'])
            self._writePoses('refined')
            return
        settings = self.config.get('refine')
        weights = loadWeights(settings['weights']) if settings['weights'] else SemanticWeightTable.defaultTable()
        options = RefineOptions(maxIterations=settings['maxIterations'], patience=settings['patience'],
                                starts=settings['starts'], maxPoints=settings['maxPoints'])
        lossCam = self.cam.scaled(settings['lossWidth'], settings['lossHeight'])
        jobs = [{'frameId': frameId, 'cloud': self.map, 'gtPose': gt, 'coarse': coarse, 'lossCam': lossCam,
                 'splat': self.splat, 'weights': weights, 'options': options}
                for frameId, gt, coarse in zip(self.frames, self.poses['gt'], self.poses['rectified'])]
        self.poses['refined'] = runFrames('refine', jobs, self.threads)
        self._writePoses('refined')

    def _smooth(self, enabled: bool) -> None:
        if enabled and len(self.poses['refined']) >= 2:
            settings = self.config.get('kalman')
            self.poses['smoothed'] = kalmanSmooth(self.poses['refined'], settings['dt'], settings['processNoise'],
                                                  settings['measurementNoise'])
        else:
            self.poses['smoothed'] = list(self.poses['refined'])
        self._writePoses('smoothed')

    def _objectMasks(self, pose: CameraPose, gtDepth: DepthMap) -> list[ObjectMask]:
        """Masks of the removed movable points visible in front of the static map at pose."""
        if not len(self.removed):
            return []
        label, depth = render(self.removed, pose, self.cam, self.splat)
        masks = []
        for classId in np.unique(label.data):
            if not self.registry.isMovable(int(classId)):
                continue
            pixels = (label.data == classId) & (depth.data < gtDepth.data)
            if pixels.any():
                masks.append(ObjectMask(int(classId), pixels, 1.0))
        return masks

    def _fuse(self, enabled: bool) -> None:
        if not enabled:
            return
        if self.renders is None:
            logging.warning('Fusion needs the render stage, skipped')
            return
        threshold = self.config.get('fusion')['threshold']
        jobs: dict[str, list[dict[str, Any]]] = {'pred': [], 'ref': []}
        for gt, estimate, (label, depth) in zip(self.poses['gt'], self.poses['smoothed'], self.renders):
            common = {'cloud': self.map, 'cam': self.cam, 'splat': self.splat, 'background': label,
                      'masks': self._objectMasks(gt, depth), 'registry': self.registry, 'threshold': threshold}
            jobs['pred'].append({**common, 'pose': estimate})
            jobs['ref'].append({**common, 'pose': gt})
        predicted = runFrames('fuse', jobs['pred'], self.threads)
        reference = runFrames('fuse', jobs['ref'], self.threads)
        fusedDir = self.directory / 'fused'
        fusedDir.mkdir(exist_ok=True)
        confusion = ConfusionMatrix()
        for frameId, pred, ref in zip(self.frames, predicted, reference):
            saveLabelMap(fusedDir / f'{frameId}_pred.pgm', pred)
            saveLabelMap(fusedDir / f'{frameId}_ref.pgm', ref)
            confusion = accumulate(confusion, ref, pred)
        self.confusion = confusion

    def _evaluate(self, enabled: bool) -> None:
        if not enabled:
            return
        for name in POSE_STAGES:
            translation, rotation = evaluatePoseStream(self.poses[name], self.poses['gt'])
            self.summary[f'{name}.median_translation_m'] = translation
            self.summary[f'{name}.median_rotation_deg'] = rotation
        if self.confusion is not None and self.confusion.total:
            pixAcc, mAcc, mIou = summarize(self.confusion)
            self.summary.update({'fused.pix_acc': pixAcc, 'fused.mean_class_acc': mAcc, 'fused.mean_iou': mIou})
            for classId, (acc, iou) in perClassScores(self.confusion).items():
                self.summary[f'fused.class_{classId}.iou'] = iou
                self.summary[f'fused.class_{classId}.acc'] = acc
        writeCsv(self.directory / 'summary.csv', ('quantity', 'value'), self.summary.items())
        logging.info('Summary: %s', ', '.join(f'{key}={value:.4g}' for key, value in self.summary.items()
                                              if '.class_' not in key))


def runPipeline(config: ConfigurationManager) -> PipelineResult:
    """Run the pipeline of a validated configuration."""
    return Pipeline(config).run()
