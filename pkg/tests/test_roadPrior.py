"""Tests of the road offset field and translation rectification."""
import numpy as np
import pytest

from semmap.classRegistry import ROAD_ID, SIDEWALK_ID
from semmap.pointCloud import SemanticPointCloud
from semmap.roadPrior import (NoRoadError, RoadOffsetField, buildOffsetField, chamferDistance, loadField,
                              rectifyTranslation, saveField)
from semmap.sceneGenerator import SceneSpec, generate

from .oracles import chamferNearest


def cellCenter(field, ix, iy):
    return np.array([field.origin[0] + (ix + 0.5) * field.resolution,
                     field.origin[1] + (iy + 0.5) * field.resolution, 1.5])


class TestChamfer:
    def test_distances(self):
        np.testing.assert_allclose(chamferDistance(np.array([0, 3, 2, -3]), np.array([0, 0, 2, 1])),
                                   [0.0, 3.0, 2 * np.sqrt(2), 2 + np.sqrt(2)])


class TestOffsetField:
    def test_all_road_gives_zero_offsets(self):
        field = RoadOffsetField.fromMask(np.ones((6, 9), dtype=bool))
        assert not field.offsets.any()

    def test_single_road_cell(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[5, 5] = True
        field = RoadOffsetField.fromMask(mask, (0.0, 0.0), 0.05)
        np.testing.assert_allclose(field.offsetAt(5, 8), [0.0, -0.15], atol=1e-12)
        np.testing.assert_allclose(field.offsetAt(0, 0), [0.25, 0.25], atol=1e-12)

    @pytest.mark.parametrize('seed', range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.uniform(size=(64, 64)) < (0.002, 0.01, 0.05, 0.2)[seed % 4]
        mask[int(rng.integers(64)), int(rng.integers(64))] = True
        field = RoadOffsetField.fromMask(mask, (0.0, 0.0), 1.0)
        distance, nearest = chamferNearest(mask)
        iy, ix = np.mgrid[0:64, 0:64]
        step = np.rint(field.offsets).astype(int)
        found = (iy + step[..., 1]) * 64 + ix + step[..., 0]
        np.testing.assert_array_equal(found, nearest)
        np.testing.assert_allclose(chamferDistance(step[..., 0], step[..., 1]), distance, atol=1e-9)

    def test_ties_go_to_smaller_index(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 0] = mask[2, 4] = True
        field = RoadOffsetField.fromMask(mask, (0.0, 0.0), 1.0)
        np.testing.assert_array_equal(field.offsetAt(2, 2), [-2.0, 0.0])

    def test_no_road(self):
        with pytest.raises(NoRoadError):
            RoadOffsetField.fromMask(np.zeros((4, 4), dtype=bool))

    def test_from_cloud(self):
        x, y = np.meshgrid(np.arange(0.0, 4.0, 0.1), np.arange(0.0, 1.0, 0.1))
        road = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
        wall = np.array([[0.0, 3.0, 1.0], [4.0, 3.0, 1.0]])
        cloud = SemanticPointCloud(np.vstack([road, wall]), np.r_[np.full(len(road), 9), [11, 11]])
        field = buildOffsetField(cloud, resolution=0.25)
        assert field.origin == (0.0, 0.0)
        assert field.roadMask[:4, :16].all()
        assert not field.roadMask[4:].any() and not field.roadMask[:, 16].any()
        with pytest.raises(NoRoadError):
            buildOffsetField(cloud, roadClasses=[10], resolution=0.25)
        with pytest.raises(ValueError):
            buildOffsetField(SemanticPointCloud.empty())


class TestRectify:
    @pytest.fixture
    def field(self, rng):
        mask = np.zeros((40, 40), dtype=bool)
        mask[15:22, :] = True
        mask[rng.integers(40, size=10), rng.integers(40, size=10)] = True
        return RoadOffsetField.fromMask(mask, (-2.0, -2.0), 0.1)

    def test_lands_on_road_and_idempotent(self, field):
        for iy in range(40):
            for ix in range(40):
                once = rectifyTranslation(cellCenter(field, ix, iy), field)
                assert field.isRoad(once[0], once[1])
                assert once[2] == 1.5
                np.testing.assert_array_equal(rectifyTranslation(once, field), once)

    def test_road_position_unchanged(self, field):
        t = cellCenter(field, 3, 18)
        np.testing.assert_array_equal(rectifyTranslation(t, field), t)

    def test_outside_grid_uses_border_cell(self, field):
        t = np.array([100.0, -0.15, 2.0])
        np.testing.assert_allclose(rectifyTranslation(t, field), t + np.r_[field.offsetAt(39, 18), 0.0])

    def test_lane_marks_count_as_road(self):
        spec = SceneSpec(extent=8.0, objectSpacing=0.2, poles=0, trafficLights=0, trafficSigns=0, trees=0,
                         parkedCars=0, transients=0, rounds=1, waypoints=[(1.0, 0.0), (7.0, 0.0)])
        cloud = generate(spec)[0][0]
        field = buildOffsetField(cloud)
        paintless = buildOffsetField(cloud, roadClasses=(ROAD_ID, SIDEWALK_ID))
        for x in (1.0, 2.0, 6.5, 7.0):
            t = np.array([x, 0.0, 1.5])
            assert field.isRoad(x, 0.0)
            np.testing.assert_array_equal(rectifyTranslation(t, field), t)
            assert not paintless.isRoad(x, 0.0)


class TestFieldFile:
    def test_round_trip(self, tmp_path, rng):
        mask = rng.uniform(size=(12, 17)) < 0.1
        mask[0, 0] = True
        field = RoadOffsetField.fromMask(mask, (3.5, -1.25), 0.5)
        saveField(tmp_path / 'road.rof', field)
        loaded = loadField(tmp_path / 'road.rof')
        assert loaded.origin == field.origin
        assert loaded.resolution == field.resolution
        np.testing.assert_array_equal(loaded.roadMask, field.roadMask)
        np.testing.assert_array_equal(loaded.offsets, field.offsets)

    def test_corrupt(self, tmp_path):
        (tmp_path / 'bad.rof').write_bytes(b'ROF2' + bytes(40))
        with pytest.raises(ValueError):
            loadField(tmp_path / 'bad.rof')
