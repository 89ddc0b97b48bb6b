"""Tests of the command line and its helpers."""
import csv
import io
import json
import logging

import numpy as np
import pytest

from semmap.geometry import CameraPose, readPoses, writePoses
from semmap.main import buildParser, main
from semmap.misc import intensityImage, parseFloats
from semmap.pointCloud import loadCloud
from semmap.rasterFiles import loadLabelMap, readPgm, saveLabelMap, saveMask
from semmap.renderer import LabelMap
from semmap.sceneGenerator import SceneSpec, saveSceneSpec


@pytest.fixture(autouse=True)
def keepLogging(monkeypatch):
    """The command line configures the root logger; leave pytest's handlers alone."""
    monkeypatch.setattr(logging, 'basicConfig', lambda **kwargs: None)


@pytest.fixture
def scene(tmp_path):
    spec = SceneSpec(seed=2, extent=10.0, roadSpacing=0.25, objectSpacing=0.25, poles=1, trafficLights=0,
                     trafficSigns=1, trees=0, parkedCars=0, transients=1, rounds=3, waypoints=[(2.0, 0.0), (8.0, 0.0)],
                     frameRate=5.0)
    saveSceneSpec(tmp_path / 'scene.cfg', spec)
    assert main(['gen-scene', '--spec', str(tmp_path / 'scene.cfg'), '--out', str(tmp_path / 'scene')]) == 0
    return tmp_path / 'scene'


def readRows(path):
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.reader(fh))


class TestHelpers:
    def test_parse_floats(self):
        assert parseFloats('0.025, 0.05') == [0.025, 0.05]
        with pytest.raises(ValueError):
            parseFloats('1,2', 3)
        with pytest.raises(ValueError):
            parseFloats('1,x')

    def test_intensity_image(self):
        image = intensityImage(np.array([[0.0, 0.5], [np.nan, 2.0]]))
        np.testing.assert_array_equal(image, [[0, 128], [0, 255]])
        assert image.dtype == np.uint8

    def test_parser_needs_subcommand(self):
        with pytest.raises(SystemExit):
            buildParser().parse_args([])


class TestStageCommands:
    def test_gen_scene(self, scene):
        names = sorted(path.name for path in scene.glob('round_*.spc'))
        assert names == ['round_0.spc', 'round_1.spc', 'round_2.spc']
        assert len(readPoses(scene / 'poses.txt')) == 4

    def test_seed_flag_changes_scene(self, tmp_path, scene):
        out = tmp_path / 'other'
        assert main(['--seed', '11', 'gen-scene', '--spec', str(tmp_path / 'scene.cfg'), '--out', str(out)]) == 0
        first, other = loadCloud(scene / 'round_0.spc'), loadCloud(out / 'round_0.spc')
        assert len(first) != len(other) or not np.array_equal(first.positions, other.positions)

    def test_map_chain(self, tmp_path, scene):
        rounds = [str(path) for path in sorted(scene.glob('round_*.spc'))]
        assert main(['filter-moving', '--rounds', *rounds, '--out', str(tmp_path / 'map.spc')]) == 0
        cleaned = loadCloud(tmp_path / 'map.spc')
        assert 0 < len(cleaned) < sum(len(loadCloud(path)) for path in rounds)
        assert main(['--threads', '2', 'render', '--map', str(tmp_path / 'map.spc'), '--poses',
                     str(scene / 'poses.txt'), '--cam', '40,40,32,24,64,48', '--out', str(tmp_path / 'renders')]) == 0
        label = loadLabelMap(tmp_path / 'renders' / 'frame_00000.pgm')
        assert label.data.shape == (48, 64)
        assert (label.data != 255).any()
        assert (tmp_path / 'renders' / 'frame_00003.dpt').is_file()
        assert main(['render-birdview', '--map', str(tmp_path / 'map.spc'), '--resolution', '0.5',
                     '--out', str(tmp_path / 'birdview')]) == 0
        birdview = tmp_path / 'birdview'
        assert readPgm(birdview / 'label.pgm').shape == readPgm(birdview / 'intensity.pgm').shape

    def test_pose_chain(self, tmp_path, scene):
        gt = str(scene / 'poses.txt')
        assert main(['--seed', '3', 'simulate-noise', '--poses', gt, '--trans-max', '1', '--rot-max', '2',
                     '--out', str(tmp_path / 'coarse.txt')]) == 0
        assert main(['build-road-field', '--map', str(scene / 'round_0.spc'), '--resolution', '0.25',
                     '--out', str(tmp_path / 'road.rof')]) == 0
        assert main(['rectify', '--poses', str(tmp_path / 'coarse.txt'), '--field', str(tmp_path / 'road.rof'),
                     '--out', str(tmp_path / 'rectified.txt')]) == 0
        assert main(['refine', '--map', str(scene / 'round_0.spc'), '--coarse', str(tmp_path / 'rectified.txt'),
                     '--gt', gt, '--cam', '40,40,32,24,64,48', '--loss-size', '32,24', '--max-iterations', '3',
                     '--starts', '1', '--out', str(tmp_path / 'refined.txt')]) == 0
        assert main(['smooth', '--poses', str(tmp_path / 'refined.txt'), '--dt', '0.2', '--rts',
                     '--out', str(tmp_path / 'smoothed.txt')]) == 0
        assert main(['eval-pose', '--est', str(tmp_path / 'smoothed.txt'), '--gt', gt,
                     '--out', str(tmp_path / 'errors.csv')]) == 0
        rows = readRows(tmp_path / 'errors.csv')
        assert rows[0] == ['frame_id', 'translation_m', 'rotation_deg']
        assert [row[0] for row in rows[1:]] == ['frame_00000', 'frame_00001', 'frame_00002', 'frame_00003', 'median']

    def test_eval_pose_to_stdout(self, tmp_path, capsys):
        records = [('a', CameraPose.identity()), ('b', CameraPose(np.array([1.0, 0, 0, 0]), np.array([3.0, 4, 0])))]
        writePoses(tmp_path / 'gt.txt', records[:1] + [('b', CameraPose.identity())])
        writePoses(tmp_path / 'est.txt', records)
        assert main(['eval-pose', '--est', str(tmp_path / 'est.txt'), '--gt', str(tmp_path / 'gt.txt')]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows[2][:2] == ['b', '5']
        assert rows[3][:2] == ['median', '2.5']

    def test_mismatched_streams_fail(self, tmp_path):
        writePoses(tmp_path / 'gt.txt', [('a', CameraPose.identity())])
        writePoses(tmp_path / 'est.txt', [('z', CameraPose.identity())])
        assert main(['eval-pose', '--est', str(tmp_path / 'est.txt'), '--gt', str(tmp_path / 'gt.txt')]) == 1

    def test_missing_input_fails(self, tmp_path):
        assert main(['filter-moving', '--rounds', str(tmp_path / 'none.spc'), '--out', str(tmp_path / 'm.spc')]) == 1


class TestLabelCommands:
    def test_fuse(self, tmp_path):
        rendered = LabelMap(np.array([[9, 255], [1, 20]], dtype=np.uint16))
        saveLabelMap(tmp_path / 'rendered.pgm', rendered)
        saveLabelMap(tmp_path / 'background.pgm', LabelMap(np.full((2, 2), 11, dtype=np.uint16)))
        (tmp_path / 'objects').mkdir()
        saveMask(tmp_path / 'objects' / 'car.pgm', np.array([[False, False], [True, True]]), 2, 0.95)
        assert main(['fuse', '--rendered', str(tmp_path / 'rendered.pgm'), '--background',
                     str(tmp_path / 'background.pgm'), '--objects-dir', str(tmp_path / 'objects'),
                     '--out', str(tmp_path / 'fused.pgm')]) == 0
        np.testing.assert_array_equal(loadLabelMap(tmp_path / 'fused.pgm').data, [[9, 11], [1, 2]])

    def test_eval_seg(self, tmp_path):
        (tmp_path / 'gt').mkdir()
        (tmp_path / 'pred').mkdir()
        saveLabelMap(tmp_path / 'gt' / 'f0.pgm', LabelMap(np.array([[1, 1, 2, 2]], dtype=np.uint16)))
        saveLabelMap(tmp_path / 'pred' / 'f0.pgm', LabelMap(np.array([[1, 2, 2, 1]], dtype=np.uint16)))
        assert main(['eval-seg', '--gt-dir', str(tmp_path / 'gt'), '--pred-dir', str(tmp_path / 'pred'),
                     '--out', str(tmp_path / 'seg.csv')]) == 0
        rows = readRows(tmp_path / 'seg.csv')
        assert rows[0] == ['class_id', 'name', 'accuracy', 'iou']
        assert rows[1][:2] == ['1', 'car']
        assert rows[-1][0] == 'mean'
        assert float(rows[-1][3]) == pytest.approx(1 / 3)

    def test_eval_seg_missing_prediction(self, tmp_path):
        (tmp_path / 'gt').mkdir()
        (tmp_path / 'pred').mkdir()
        saveLabelMap(tmp_path / 'gt' / 'f0.pgm', LabelMap.blank(2, 2))
        assert main(['eval-seg', '--gt-dir', str(tmp_path / 'gt'), '--pred-dir', str(tmp_path / 'pred')]) == 1

    def test_eval_instance(self, tmp_path):
        square = np.zeros((6, 6), dtype=bool)
        square[1:4, 1:4] = True
        for root in ('gt', 'pred'):
            (tmp_path / root / 'img0').mkdir(parents=True)
        saveMask(tmp_path / 'gt' / 'img0' / 'a.pgm', square, 1, 1.0)
        saveMask(tmp_path / 'pred' / 'img0' / 'a.pgm', square, 1, 0.8)
        saveMask(tmp_path / 'pred' / 'img0' / 'empty.pgm', np.zeros((6, 6)), 1, 0.9)
        assert main(['eval-instance', '--gt-dir', str(tmp_path / 'gt'), '--pred-dir', str(tmp_path / 'pred'),
                     '--out', str(tmp_path / 'ap.csv')]) == 0
        assert readRows(tmp_path / 'ap.csv') == [['class_id', 'ap'], ['1', '1'], ['mean', '1']]


class TestPipelineCommand:
    def test_invalid_config_exit_code(self, tmp_path):
        (tmp_path / 'run.json').write_text(json.dumps({'mapFilter': {'delta': 1.5}}), encoding='utf-8')
        out = tmp_path / 'run'
        assert main(['pipeline', '--config', str(tmp_path / 'run.json'), '--out-dir', str(out)]) == 2
        assert not out.exists()

    def test_stage_exit_code(self, tmp_path):
        config = {'stages': {'scene': False}}
        (tmp_path / 'run.json').write_text(json.dumps(config), encoding='utf-8')
        out = tmp_path / 'run'
        arguments = ['--threads', '2', 'pipeline', '--config', str(tmp_path / 'run.json'), '--out-dir', str(out)]
        assert main(arguments) == 10
        assert 'threads' not in json.loads((out / 'resolvedConfig.json').read_text(encoding='utf-8'))
