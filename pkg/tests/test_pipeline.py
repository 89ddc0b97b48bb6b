"""Tests of the frame workers and the end-to-end pipeline."""
import csv
from pathlib import Path

import numpy as np
import pytest

from semmap.classRegistry import defaultRegistry
from semmap.configManager import ConfigurationManager
from semmap.geometry import CameraModel, CameraPose, readPoses, rotationAngleDeg, translationError
from semmap.labelFusion import ObjectMask
from semmap.localization import RefineOptions, SemanticWeightTable
from semmap.pipeline import EXIT_CODES, STAGES, Pipeline, StageError, runPipeline
from semmap.pointCloud import SemanticPointCloud
from semmap.rasterFiles import loadLabelMap
from semmap.renderer import LabelMap, SplatConfig
from semmap.sceneGenerator import SceneSpec, saveSceneSpec
from semmap.worker import Worker, runFrames

SMALL_CAMERA = {'fx': 40.0, 'fy': 40.0, 'cx': 32.0, 'cy': 24.0, 'width': 64, 'height': 48}


@pytest.fixture
def runConfig(tmp_path):
    """Overrides for a short street, a small camera and a cheap refinement."""
    spec = SceneSpec(seed=5, extent=12.0, roadSpacing=0.2, objectSpacing=0.2, poles=2, trafficLights=1,
                     trafficSigns=1, trees=1, parkedCars=1, transients=1, transientRounds=1, rounds=3,
                     waypoints=[(2.0, 0.0), (10.0, 0.0)], frameRate=5.0)
    saveSceneSpec(tmp_path / 'scene.cfg', spec)
    return {'seed': 1, 'input': {'sceneConfig': str(tmp_path / 'scene.cfg')},
            'output': {'directory': str(tmp_path / 'run')}, 'camera': SMALL_CAMERA,
            'roadPrior': {'resolution': 0.1}, 'noise': {'transMax': 0.5, 'rotMax': 2.0},
            'refine': {'maxIterations': 5, 'starts': 1, 'maxPoints': 300, 'lossWidth': 32, 'lossHeight': 24}}


def readSummary(path):
    with open(path, newline='', encoding='utf-8') as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ['quantity', 'value']
    return {key: float(value) for key, value in rows[1:]}


class TestWorker:
    def test_unknown_work_type(self):
        with pytest.raises(ValueError):
            Worker('paint', {}).run()

    def test_render_jobs_keep_order(self, rng):
        cam = CameraModel(40.0, 40.0, 20.0, 20.0, 40, 40)
        cloud = SemanticPointCloud(np.column_stack([rng.uniform(-2, 2, 200), rng.uniform(-2, 2, 200),
                                                    rng.uniform(4, 8, 200)]), rng.choice([9, 20], 200))
        poses = [CameraPose(np.array([1.0, 0, 0, 0]), np.array([x, 0.0, 0.0])) for x in (-0.5, 0.0, 0.5)]
        jobs = [{'cloud': cloud, 'pose': pose, 'cam': cam, 'splat': SplatConfig({}, 0.05, 0.05)} for pose in poses]
        single = runFrames('render', jobs, threads=1)
        pooled = runFrames('render', jobs, threads=3)
        for (labelA, depthA), (labelB, depthB) in zip(single, pooled):
            np.testing.assert_array_equal(labelA.data, labelB.data)
            np.testing.assert_array_equal(depthA.data, depthB.data)

    def test_refine_from_ground_truth(self, rng):
        cam = CameraModel(40.0, 40.0, 20.0, 20.0, 40, 40)
        cloud = SemanticPointCloud(np.column_stack([rng.uniform(-2, 2, 500), rng.uniform(-2, 2, 500),
                                                    rng.uniform(4, 8, 500)]), rng.choice([9, 15], 500))
        gt = CameraPose.identity()
        job = {'cloud': cloud, 'gtPose': gt, 'coarse': gt, 'lossCam': cam, 'splat': SplatConfig({}, 0.05, 0.05),
               'weights': SemanticWeightTable.defaultTable(), 'options': RefineOptions()}
        assert Worker('refine', job).run().allClose(gt, atol=0)

    def test_fuse_job(self):
        cam = CameraModel(10.0, 10.0, 2.0, 2.0, 4, 4)
        cloud = SemanticPointCloud(np.array([[0.0, 0.0, 5.0]]), [20])
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = True
        job = {'cloud': cloud, 'pose': CameraPose.identity(), 'cam': cam, 'splat': SplatConfig({}, 0.0, 0.0),
               'background': LabelMap(np.full((4, 4), 11, dtype=np.uint16)), 'masks': [ObjectMask(1, mask, 1.0)],
               'registry': defaultRegistry(), 'threshold': 0.9}
        fused = Worker('fuse', job).run()
        assert fused.data[2, 2] == 20
        assert fused.data[0, 0] == 1
        assert fused.data[3, 3] == 11


class TestPipeline:
    def test_full_run(self, runConfig):
        result = runPipeline(ConfigurationManager(overrides=runConfig))
        assert result.status == 0
        directory = result.directory
        for name in ('resolvedConfig.json', 'map.spc', 'roadField.rof', 'summary.csv', 'scene/round_0.spc'):
            assert (directory / name).is_file()
        gt = readPoses(directory / 'poses_gt.txt')
        assert len(gt) == 5
        for stage in ('coarse', 'rectified', 'refined', 'smoothed'):
            assert [frameId for frameId, _ in readPoses(directory / f'poses_{stage}.txt')] == \
                [frameId for frameId, _ in gt]
        assert len(list((directory / 'renders').glob('*.pgm'))) == 5
        assert len(list((directory / 'fused').glob('*_pred.pgm'))) == 5
        summary = readSummary(directory / 'summary.csv')
        assert summary == pytest.approx(result.summary)
        assert 0 < summary['coarse.median_translation_m'] <= 0.5
        assert 0 <= summary['fused.mean_iou'] <= 1
        assert 0 <= summary['fused.pix_acc'] <= 1

    def test_moving_points_leave_the_map(self, runConfig):
        pipeline = Pipeline(ConfigurationManager(overrides=runConfig))
        assert pipeline.run().status == 0
        assert set(pipeline.removed.classSet()) <= {1, 4}
        assert len(pipeline.removed) > 0
        assert len(pipeline.map) + len(pipeline.removed) == sum(len(cloud) for cloud in pipeline.rounds)

    def test_without_noise_fusion_is_perfect(self, runConfig):
        stages = {stage: stage not in ('perturb', 'rectify', 'refine', 'smooth') for stage in STAGES}
        result = runPipeline(ConfigurationManager(overrides={**runConfig, 'stages': stages}))
        assert result.status == 0
        assert result.summary['smoothed.median_translation_m'] == 0.0
        assert result.summary['fused.pix_acc'] == 1.0
        pred = loadLabelMap(result.directory / 'fused' / 'frame_00000_pred.pgm')
        ref = loadLabelMap(result.directory / 'fused' / 'frame_00000_ref.pgm')
        np.testing.assert_array_equal(pred.data, ref.data)

    def test_refinement_does_not_hurt(self, runConfig):
        pipeline = Pipeline(ConfigurationManager(overrides=runConfig))
        assert pipeline.run().status == 0
        for coarse, refined, gt in zip(pipeline.poses['rectified'], pipeline.poses['refined'], pipeline.poses['gt']):
            # refinement never increases the loss; the pose error may still move a little
            assert translationError(refined, gt) <= translationError(coarse, gt) + 0.5
            assert rotationAngleDeg(refined, gt) <= rotationAngleDeg(coarse, gt) + 2.0

    def test_disabled_render_skips_fusion(self, runConfig):
        stages = {stage: stage != 'render' for stage in STAGES}
        result = runPipeline(ConfigurationManager(overrides={**runConfig, 'stages': stages}))
        assert result.status == 0
        assert not (result.directory / 'renders').exists()
        assert not (result.directory / 'fused').exists()
        assert 'fused.mean_iou' not in result.summary
        assert 'refined.median_translation_m' in result.summary

    def test_disabled_scene_without_inputs(self, runConfig):
        stages = {stage: stage != 'scene' for stage in STAGES}
        result = runPipeline(ConfigurationManager(overrides={**runConfig, 'stages': stages}))
        assert result.status == EXIT_CODES['scene'] == 10
        assert result.failedStage == 'scene'

    def test_missing_weights_fail_refine(self, runConfig, tmp_path):
        runConfig['refine']['weights'] = str(tmp_path / 'missing.csv')
        result = runPipeline(ConfigurationManager(overrides=runConfig))
        assert result.status == 15
        assert (result.directory / 'poses_rectified.txt').is_file()
        assert not (result.directory / 'poses_refined.txt').exists()


    def test_thread_count_leaves_artifacts_unchanged(self, runConfig, tmp_path):
        outputs = []
        for threads in (1, 8):
            overrides = {**runConfig, 'threads': threads, 'output': {'directory': str(tmp_path / f'run{threads}')}}
            result = runPipeline(ConfigurationManager(overrides=overrides))
            assert result.status == 0
            outputs.append({path.relative_to(result.directory): path.read_bytes()
                            for path in sorted(result.directory.rglob('*')) if path.is_file()})
        single, pooled = outputs
        # the snapshot records the output directory
        assert single.pop(Path('resolvedConfig.json')) and pooled.pop(Path('resolvedConfig.json'))
        assert single.keys() == pooled.keys()
        for name, content in single.items():
            assert content == pooled[name], name

    def test_stage_error(self):
        error = StageError('fuse', 'no renders')
        assert error.exitCode == 17
        assert 'fuse' in str(error)
