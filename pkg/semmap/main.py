"""Command line entry point of semmap: one subcommand per stage plus the end-to-end pipeline."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .classRegistry import ROAD_SURFACE_IDS, ClassRegistry, defaultRegistry, loadRegistry
from .configManager import ConfigurationError, ConfigurationManager
from .geometry import CameraModel, CameraPose, PoseRecord, readPoses, writePoses
from .kalman import kalmanSmooth
from .labelFusion import DEFAULT_CONFIDENCE, ObjectMask, fuse, holeCount
from .localization import (DEFAULT_ROT_MAX, DEFAULT_TRANS_MAX, LOSS_HEIGHT, LOSS_WIDTH, NoiseModel, RefineOptions,
                           SemanticWeightTable, loadWeights, perturbStream, poseErrors)
from .mapFilter import DEFAULT_DELTA, DEFAULT_EPS_D, filterRoadPoints, removeMoving
from .metrics import (ConfusionMatrix, GroundTruthInstance, InstancePrediction, accumulate, instanceApPerClass,
                      perClassScores, summarize)
from .misc import HELP_TEXT, intensityImage, parseFloats, writeCsv
from .pipeline import EXIT_CODES, runPipeline
from .pointCloud import SemanticPointCloud, loadCloud, saveCloud, splitRounds
from .rasterFiles import loadLabelMap, loadMask, loadMaskDirectory, saveDepthMap, saveLabelMap, writePgm
from .renderer import DEFAULT_SPLAT_RANGE, computeSplatSizes, renderBirdview
from .roadPrior import DEFAULT_RESOLUTION, buildOffsetField, loadField, rectifyTranslation, saveField
from .sceneGenerator import SceneSpec, generate, loadSceneSpec, saveScene
from .worker import runFrames

FAILURE = 1


def _camera(text: str) -> CameraModel:
    return CameraModel.fromString(text)


def _splatRange(text: str) -> tuple[float, float]:
    low, high = parseFloats(text, 2)
    return low, high


def _classList(text: str) -> list[int]:
    return [int(value) for value in parseFloats(text)]


def _poses(records: Sequence[PoseRecord]) -> list[CameraPose]:
    return [pose for _, pose in records]


def _loadRounds(paths: Sequence[str]) -> list[SemanticPointCloud]:
    clouds = [loadCloud(path) for path in paths]
    if len(clouds) == 1:
        return splitRounds(clouds[0])
    return [cloud.withRound(index) for index, cloud in enumerate(clouds)]


def cmdGenScene(args: argparse.Namespace) -> int:
    """Generate a synthetic scene."""
    spec = loadSceneSpec(args.spec) if args.spec else SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    rounds, poses, membership = generate(spec)
    saveScene(args.out, rounds, poses, membership)
    logging.info('Scene with %d rounds and %d frames written to %s', len(rounds), len(poses), args.out)
    return 0


def cmdFilterMoving(args: argparse.Namespace) -> int:
    """Remove points not seen consistently over the acquisition rounds."""
    cleaned = removeMoving(_loadRounds(args.rounds), args.delta, args.eps_d, args.threads)
    saveCloud(args.out, cleaned)
    return 0


def cmdRender(args: argparse.Namespace) -> int:
    """Render label and depth maps of a map at every pose."""
    cloud = loadCloud(args.map)
    records = readPoses(args.poses)
    splat = computeSplatSizes(cloud, _poses(records), args.splat_range)
    jobs = [{'frameId': frameId, 'cloud': cloud, 'pose': pose, 'cam': args.cam, 'splat': splat}
            for frameId, pose in records]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (frameId, _), (label, depth) in zip(records, runFrames('render', jobs, args.threads)):
        saveLabelMap(out / f'{frameId}.pgm', label)
        saveDepthMap(out / f'{frameId}.dpt', depth)
    logging.info('Rendered %d frames into %s', len(records), out)
    return 0


def cmdRenderBirdview(args: argparse.Namespace) -> int:
    """Top-down intensity and label images of the road surface."""
    cloud = loadCloud(args.map)
    road, _ = filterRoadPoints(cloud, args.max_tilt, roadClasses=args.classes, workers=args.threads)
    if args.bounds:
        xmin, ymin, xmax, ymax = parseFloats(args.bounds, 4)
    else:
        (xmin, ymin), (xmax, ymax) = cloud.positions[:, :2].min(axis=0), cloud.positions[:, :2].max(axis=0)
        xmax, ymax = xmax + args.resolution, ymax + args.resolution
    raster = renderBirdview(road, (xmin, ymin, xmax, ymax), args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # image rows run along +y; flip so north is up
    writePgm(out / 'intensity.pgm', intensityImage(raster.intensity)[::-1])
    writePgm(out / 'label.pgm', raster.label[::-1])
    return 0


def cmdBuildRoadField(args: argparse.Namespace) -> int:
    """Precompute the nearest-road offsets of a map."""
    roadField = buildOffsetField(loadCloud(args.map), args.classes, args.resolution)
    saveField(args.out, roadField)
    return 0


def cmdSimulateNoise(args: argparse.Namespace) -> int:
    """Perturb every pose of a stream."""
    records = readPoses(args.poses)
    model = NoiseModel(args.trans_max, args.rot_max, args.seed or 0)
    noisy = perturbStream(_poses(records), model)
    writePoses(args.out, [(frameId, pose) for (frameId, _), pose in zip(records, noisy)])
    return 0


def cmdRectify(args: argparse.Namespace) -> int:
    """Move every translation onto the nearest road cell."""
    roadField = loadField(args.field)
    records = [(frameId, CameraPose(pose.q, rectifyTranslation(pose.t, roadField)))
               for frameId, pose in readPoses(args.poses)]
    writePoses(args.out, records)
    return 0


def cmdRefine(args: argparse.Namespace) -> int:
    """Refine coarse poses against renders of the map at the ground-truth poses."""
    cloud = loadCloud(args.map)
    coarse, gt = readPoses(args.coarse), readPoses(args.gt)
    poseErrors(coarse, gt)  # frame ids must agree
    weights = loadWeights(args.weights) if args.weights else SemanticWeightTable.defaultTable()
    width, height = (int(value) for value in parseFloats(args.loss_size, 2))
    lossCam = args.cam.scaled(width, height)
    splat = computeSplatSizes(cloud, _poses(gt), args.splat_range)
    options = RefineOptions(maxIterations=args.max_iterations, starts=args.starts)
    jobs = [{'frameId': frameId, 'cloud': cloud, 'gtPose': gtPose, 'coarse': coarsePose, 'lossCam': lossCam,
             'splat': splat, 'weights': weights, 'options': options}
            for (frameId, coarsePose), (_, gtPose) in zip(coarse, gt)]
    refined = runFrames('refine', jobs, args.threads)
    writePoses(args.out, [(frameId, pose) for (frameId, _), pose in zip(coarse, refined)])
    return 0


def cmdSmooth(args: argparse.Namespace) -> int:
    """Kalman-filter the translations of a pose stream."""
    records = readPoses(args.poses)
    smoothed = kalmanSmooth(_poses(records), args.dt, args.process_noise, args.measurement_noise, args.rts)
    writePoses(args.out, [(frameId, pose) for (frameId, _), pose in zip(records, smoothed)])
    return 0


def cmdFuse(args: argparse.Namespace) -> int:
    """Fuse a rendered label map with background labels and object masks."""
    registry = loadRegistry(args.classes) if args.classes else defaultRegistry()
    objects = [ObjectMask(classId, pixels, confidence)
               for pixels, classId, confidence in loadMaskDirectory(args.objects_dir)]
    fused = fuse(loadLabelMap(args.rendered), loadLabelMap(args.background), objects, registry, args.threshold)
    saveLabelMap(args.out, fused)
    logging.info('Fused %d object masks, %d holes remain', len(objects), holeCount(fused))
    return 0


def cmdEvalPose(args: argparse.Namespace) -> int:
    """Per-frame and median pose errors."""
    estimates, gt = readPoses(args.est), readPoses(args.gt)
    translation, rotation = poseErrors(estimates, gt)
    rows: list[tuple] = [(frameId, float(t), float(r)) for (frameId, _), t, r in zip(gt, translation, rotation)]
    rows.append(('median', float(np.median(translation)), float(np.median(rotation))))
    writeCsv(args.out, ('frame_id', 'translation_m', 'rotation_deg'), rows)
    return 0


def _className(registry: ClassRegistry, classId: int) -> str:
    return registry.name(classId) if registry.isValid(classId) else f'class_{classId}'


def cmdEvalSeg(args: argparse.Namespace) -> int:
    """Pixel accuracy, class accuracy and IoU of predicted label maps; files are paired by name."""
    registry = loadRegistry(args.classes) if args.classes else defaultRegistry()
    gtFiles = sorted(Path(args.gt_dir).glob('*.pgm'))
    if not gtFiles:
        raise ValueError(f'No PGM file in {args.gt_dir}')
    confusion = ConfusionMatrix()
    for gtFile in gtFiles:
        predFile = Path(args.pred_dir) / gtFile.name
        if not predFile.is_file():
            raise ValueError(f'Prediction {predFile} missing')
        confusion = accumulate(confusion, loadLabelMap(gtFile), loadLabelMap(predFile))
    pixAcc, mAcc, mIou = summarize(confusion)
    rows: list[tuple] = [(classId, _className(registry, classId), acc, iou)
                         for classId, (acc, iou) in perClassScores(confusion).items()]
    rows += [('pix_acc', '', pixAcc, ''), ('mean', '', mAcc, mIou)]
    writeCsv(args.out, ('class_id', 'name', 'accuracy', 'iou'), rows)
    return 0


def _loadInstances(directory: Path, images: list[str]) -> list[tuple[np.ndarray, int, float, str]]:
    """Masks of '<dir>/<image>/<instance>.pgm' with sidecars, tagged by image name."""
    instances = []
    for image in images:
        imageDir = directory / image
        if not imageDir.is_dir():
            continue
        for path in sorted(imageDir.glob('*.pgm')):
            mask, classId, confidence = loadMask(path)
            instances.append((mask, classId, confidence, image))
    return instances


def cmdEvalInstance(args: argparse.Namespace) -> int:
    """Per-class interpolated AP of instance masks."""
    gtDir, predDir = Path(args.gt_dir), Path(args.pred_dir)
    images = sorted({path.name for root in (gtDir, predDir) for path in root.iterdir() if path.is_dir()})
    gts = [GroundTruthInstance(mask, classId, image) for mask, classId, _, image in _loadInstances(gtDir, images)]
    preds = []
    for mask, classId, score, image in _loadInstances(predDir, images):
        if not mask.any():
            logging.warning('Empty prediction mask in image %s skipped', image)
            continue
        preds.append(InstancePrediction(mask, classId, score, image))
    perClass = instanceApPerClass(preds, gts)
    rows: list[tuple] = [(classId, ap) for classId, ap in perClass.items()]
    rows.append(('mean', float(np.mean(list(perClass.values()))) if perClass else 0.0))
    writeCsv(args.out, ('class_id', 'ap'), rows)
    return 0


def cmdPipeline(args: argparse.Namespace) -> int:
    """Run the configured stages end to end."""
    overrides: dict = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.threads_given:
        overrides['threads'] = args.threads
    if args.out_dir:
        overrides['output'] = {'directory': args.out_dir}
    try:
        config = ConfigurationManager(Path(args.config) if args.config else None, overrides)
    except ConfigurationError as e:
        logging.error('%s', e)
        return EXIT_CODES['config']
    result = runPipeline(config)
    if result.status == 0:
        logging.info('Pipeline finished, artifacts in %s', result.directory)
    return result.status


def buildParser() -> argparse.ArgumentParser:
    """Argument parser with all subcommands."""
    parser = argparse.ArgumentParser(prog='semmap', description='Semantic 3D map labeling and localization toolkit',
                                     epilog=HELP_TEXT, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--threads', type=int, default=None, help='worker threads for frame-parallel stages')
    parser.add_argument('--seed', type=int, default=None, help='random seed')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name: str, function: Callable[[argparse.Namespace], int]) -> argparse.ArgumentParser:
        command = sub.add_parser(name, help=(function.__doc__ or '').strip())
        command.set_defaults(function=function)
        return command

    camHelp = 'fx,fy,cx,cy,width,height'
    splatDefault = ','.join(str(value) for value in DEFAULT_SPLAT_RANGE)
    classDefault = ','.join(str(value) for value in ROAD_SURFACE_IDS)

    command = add('gen-scene', cmdGenScene)
    command.add_argument('--spec', help='scene config (key = value); default scene if omitted')
    command.add_argument('--out', required=True)

    command = add('filter-moving', cmdFilterMoving)
    command.add_argument('--rounds', nargs='+', required=True, help='one cloud per round, or one merged cloud')
    command.add_argument('--delta', type=float, default=DEFAULT_DELTA)
    command.add_argument('--eps-d', type=float, default=DEFAULT_EPS_D)
    command.add_argument('--out', required=True)

    command = add('render', cmdRender)
    command.add_argument('--map', required=True)
    command.add_argument('--poses', required=True)
    command.add_argument('--cam', type=_camera, required=True, help=camHelp)
    command.add_argument('--splat-range', type=_splatRange, default=splatDefault)
    command.add_argument('--out', required=True)

    command = add('render-birdview', cmdRenderBirdview)
    command.add_argument('--map', required=True)
    command.add_argument('--bounds', help='xmin,ymin,xmax,ymax; default the map extent')
    command.add_argument('--resolution', type=float, default=DEFAULT_RESOLUTION)
    command.add_argument('--max-tilt', type=float, default=10.0, help='degrees')
    command.add_argument('--classes', type=_classList, default=classDefault)
    command.add_argument('--out', required=True)

    command = add('build-road-field', cmdBuildRoadField)
    command.add_argument('--map', required=True)
    command.add_argument('--resolution', type=float, default=DEFAULT_RESOLUTION)
    command.add_argument('--classes', type=_classList, default=classDefault)
    command.add_argument('--out', required=True)

    command = add('simulate-noise', cmdSimulateNoise)
    command.add_argument('--poses', required=True)
    command.add_argument('--trans-max', type=float, default=DEFAULT_TRANS_MAX)
    command.add_argument('--rot-max', type=float, default=DEFAULT_ROT_MAX)
    command.add_argument('--out', required=True)

    command = add('rectify', cmdRectify)
    command.add_argument('--poses', required=True)
    command.add_argument('--field', required=True)
    command.add_argument('--out', required=True)

    command = add('refine', cmdRefine)
    command.add_argument('--map', required=True)
    command.add_argument('--coarse', required=True)
    command.add_argument('--gt', required=True, help='ground-truth poses the renders are made at')
    command.add_argument('--cam', type=_camera, required=True, help=camHelp)
    command.add_argument('--weights', help='class_id,weight CSV')
    command.add_argument('--splat-range', type=_splatRange, default=splatDefault)
    command.add_argument('--loss-size', default=f'{LOSS_WIDTH},{LOSS_HEIGHT}', help='width,height')
    command.add_argument('--max-iterations', type=int, default=100)
    command.add_argument('--starts', type=int, default=5)
    command.add_argument('--out', required=True)

    command = add('smooth', cmdSmooth)
    command.add_argument('--poses', required=True)
    command.add_argument('--dt', type=float, required=True)
    command.add_argument('--process-noise', type=float, default=0.1)
    command.add_argument('--measurement-noise', type=float, default=None)
    command.add_argument('--rts', action='store_true', help='backward smoothing pass')
    command.add_argument('--out', required=True)

    command = add('fuse', cmdFuse)
    command.add_argument('--rendered', required=True)
    command.add_argument('--background', required=True)
    command.add_argument('--objects-dir', required=True)
    command.add_argument('--threshold', type=float, default=DEFAULT_CONFIDENCE)
    command.add_argument('--classes', help='class table; default the built-in tables')
    command.add_argument('--out', required=True)

    command = add('eval-pose', cmdEvalPose)
    command.add_argument('--est', required=True)
    command.add_argument('--gt', required=True)
    command.add_argument('--out', default='-')

    command = add('eval-seg', cmdEvalSeg)
    command.add_argument('--gt-dir', required=True)
    command.add_argument('--pred-dir', required=True)
    command.add_argument('--classes', help='class table; default the built-in tables')
    command.add_argument('--out', default='-')

    command = add('eval-instance', cmdEvalInstance)
    command.add_argument('--gt-dir', required=True)
    command.add_argument('--pred-dir', required=True)
    command.add_argument('--out', default='-')

    command = add('pipeline', cmdPipeline)
    command.add_argument('--config', help='JSON configuration; defaults if omitted')
    command.add_argument('--out-dir', help='overrides output.directory')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse the arguments, run one subcommand and return its exit code."""
    args = buildParser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)
    args.threads_given = args.threads is not None
    if args.threads is None:
        args.threads = 1
    try:
        return int(args.function(args))
    except (ValueError, OSError) as e:
        logging.error('%s failed: %s', args.command, e)
        return FAILURE


if __name__ == '__main__':
    sys.exit(main())
