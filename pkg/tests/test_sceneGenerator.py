"""Tests of the synthetic street-scene generator."""
import numpy as np
import pytest

from semmap.geometry import readPoses
from semmap.pointCloud import loadCloud
from semmap.sceneGenerator import (DegenerateTrajectoryError, SceneSpec, frameIds, generate, loadSceneSpec,
                                   saveScene, saveSceneSpec, trajectory)


class TestGenerate:
    def test_deterministic(self, smallSpec, smallScene):
        rounds, poses, _ = generate(smallSpec)
        for again, first in zip(rounds, smallScene[0]):
            np.testing.assert_array_equal(again.positions, first.positions)
            np.testing.assert_array_equal(again.intensity, first.intensity)
        assert all(a.allClose(b, atol=0) for a, b in zip(poses, smallScene[1]))

    def test_seed_changes_scene(self, smallSpec, smallScene):
        other = SceneSpec(**{**smallSpec.__dict__, 'seed': 8})
        rounds, _, _ = generate(other)
        first = smallScene[0][0]
        assert len(rounds[0]) != len(first) or not np.array_equal(rounds[0].positions, first.positions)

    def test_round_ids_and_labels(self, smallScene):
        rounds, _, _ = smallScene
        for index, cloud in enumerate(rounds):
            assert set(cloud.roundIds.tolist()) == {index}
            assert {9, 10, 200, 15, 20}.issubset(cloud.classSet())
            assert np.all((cloud.intensity >= 0) & (cloud.intensity <= 1))

    def test_transients_in_strict_subset_and_lifted(self, smallScene):
        rounds, _, membership = smallScene
        transients = [p for p in membership.primitives if p.transient]
        assert len(transients) == 1
        assert len(transients[0].rounds) == 1
        for cloud, flags in zip(rounds, membership.transient):
            assert np.all(cloud.positions[flags, 2] >= 0.1 - 1e-9)
            assert set(cloud.classIds[flags].tolist()) <= {1, 4}
        assert sum(int(flags.any()) for flags in membership.transient) == 1

    def test_static_points_identical_in_every_round(self, smallScene):
        rounds, _, membership = smallScene
        static = [cloud.positions[~flags] for cloud, flags in zip(rounds, membership.transient)]
        for positions in static[1:]:
            np.testing.assert_array_equal(positions, static[0])

    def test_without_transients_rounds_match(self):
        spec = SceneSpec(seed=1, extent=8.0, roadSpacing=0.2, objectSpacing=0.2, transients=0, rounds=3,
                         waypoints=[(1.0, 0.0), (7.0, 0.0)])
        rounds, _, membership = generate(spec)
        for cloud in rounds[1:]:
            np.testing.assert_array_equal(cloud.positions, rounds[0].positions)
        assert not any(flags.any() for flags in membership.transient)

    def test_spacing_sets_density(self):
        coarse = SceneSpec(seed=1, extent=8.0, roadSpacing=0.2, objectSpacing=0.2, transients=0, rounds=1,
                           waypoints=[(1.0, 0.0), (7.0, 0.0)])
        fine = SceneSpec(**{**coarse.__dict__, 'roadSpacing': 0.1})
        assert len(generate(fine)[0][0]) > len(generate(coarse)[0][0])


class TestTrajectory:
    def test_poses_along_the_road(self, smallScene):
        _, poses, _ = smallScene
        assert len(poses) == 9
        np.testing.assert_allclose(poses[0].t, [2.0, 0.0, 1.5])
        np.testing.assert_allclose(poses[-1].t, [10.0, 0.0, 1.5])
        for pose in poses:
            np.testing.assert_allclose(pose.rotationMatrix[:, 2], [1.0, 0.0, 0.0], atol=1e-12)
            np.testing.assert_allclose(pose.rotationMatrix[:, 1], [0.0, 0.0, -1.0], atol=1e-12)

    def test_corner(self):
        spec = SceneSpec(waypoints=[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)], speed=1.0, frameRate=1.0)
        poses = trajectory(spec)
        assert len(poses) == 5
        np.testing.assert_allclose(poses[3].t, [2.0, 1.0, 1.5])
        np.testing.assert_allclose(poses[3].rotationMatrix[:, 2], [0.0, 1.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize('changes', [{'waypoints': [(1.0, 1.0)]}, {'waypoints': [(1.0, 1.0), (1.0, 1.0)]},
                                         {'speed': 0.0}, {'frameRate': -1.0}])
    def test_degenerate(self, changes):
        with pytest.raises(DegenerateTrajectoryError):
            trajectory(SceneSpec(**changes))

    def test_frame_ids(self):
        assert frameIds(2) == ['frame_00000', 'frame_00001']


class TestSceneSpec:
    def test_file_round_trip(self, tmp_path, smallSpec):
        saveSceneSpec(tmp_path / 'scene.cfg', smallSpec)
        assert loadSceneSpec(tmp_path / 'scene.cfg') == smallSpec

    def test_partial_file(self, tmp_path):
        (tmp_path / 'scene.cfg').write_text('# short street\nrounds = 4\nwaypoints = 1,0; 5,0\nlaneMarks = no\n',
                                            encoding='utf-8')
        spec = loadSceneSpec(tmp_path / 'scene.cfg')
        assert spec.rounds == 4
        assert spec.waypoints == [(1.0, 0.0), (5.0, 0.0)]
        assert spec.laneMarks is False
        assert spec.extent == SceneSpec().extent

    @pytest.mark.parametrize('content, message', [('colour = red\n', ':1:'), ('rounds = 2\nposes 3\n', ':2:'),
                                                  ('rounds = many\n', ':1:')])
    def test_bad_files(self, tmp_path, content, message):
        (tmp_path / 'scene.cfg').write_text(content, encoding='utf-8')
        with pytest.raises(ValueError, match=message):
            loadSceneSpec(tmp_path / 'scene.cfg')

    @pytest.mark.parametrize('changes', [{'extent': 0.0}, {'poles': -1}, {'rounds': 0},
                                         {'transients': 1, 'transientRounds': 6, 'rounds': 6}])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            SceneSpec(**changes)


class TestSaveScene:
    def test_files(self, tmp_path, smallScene):
        rounds, poses, membership = smallScene
        saveScene(tmp_path, rounds, poses, membership)
        loaded = loadCloud(tmp_path / 'round_0.spc')
        np.testing.assert_array_equal(loaded.classIds, rounds[0].classIds)
        records = readPoses(tmp_path / 'poses.txt')
        assert [frameId for frameId, _ in records] == frameIds(len(poses))
        members = (tmp_path / 'round_0.members').read_text(encoding='utf-8').splitlines()
        assert len(members) == len(rounds[0])
        header = (tmp_path / 'primitives.csv').read_text(encoding='utf-8').splitlines()[0]
        assert header == 'primitive_id,kind,class_id,transient,rounds,points'
