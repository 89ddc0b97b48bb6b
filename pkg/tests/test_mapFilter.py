"""Tests of moving-object removal and road-point extraction."""
import numpy as np
import pytest

from semmap.mapFilter import RoundMismatchError, consistencyMasks, estimateNormals, filterRoadPoints, removeMoving
from semmap.pointCloud import SemanticPointCloud, mergeClouds
from semmap.sceneGenerator import SceneSpec, generate

from .oracles import consistentSupport


def staticCloud(rng, count=300):
    return SemanticPointCloud(rng.uniform(0, 10, (count, 3)), rng.integers(9, 22, count))


def copies(cloud, count):
    return [cloud.withRound(index) for index in range(count)]


class TestRemoveMoving:
    def test_single_round_unchanged(self, rng):
        cloud = staticCloud(rng)
        result = removeMoving([cloud])
        np.testing.assert_array_equal(result.positions, cloud.positions)

    def test_blob_in_one_round_removed(self, rng):
        cloud = staticCloud(rng)
        blob = SemanticPointCloud(rng.uniform(20, 21, (50, 3)), np.full(50, 1))
        rounds = copies(cloud, 5) + [mergeClouds([cloud, blob]).withRound(5)]
        masks = consistencyMasks(rounds, 0.6, 0.025)
        assert all(mask.all() for mask in masks[:5])
        assert masks[5][:len(cloud)].all()
        assert not masks[5][len(cloud):].any()
        assert 1 not in removeMoving(rounds).classSet()

    @pytest.mark.parametrize('present, kept', [(3, True), (2, False)])
    def test_support_boundary(self, rng, present, kept):
        cloud = staticCloud(rng, 50)
        extra = SemanticPointCloud(np.array([[50.0, 50.0, 50.0]]), [4])
        rounds = [mergeClouds([cloud, extra]).withRound(k) if k < present else cloud.withRound(k) for k in range(5)]
        masks = consistencyMasks(rounds, 0.6, 0.025)
        assert masks[0][-1] == kept

    def test_matches_brute_force(self, rng):
        base = rng.uniform(0, 2, (150, 3))
        rounds = []
        for index in range(4):
            keep = rng.uniform(size=len(base)) < 0.7
            jitter = rng.normal(0, 0.015, (int(keep.sum()), 3))
            rounds.append(SemanticPointCloud(base[keep] + jitter, roundIds=np.full(int(keep.sum()), index)))
        masks = consistencyMasks(rounds, 0.5, 0.025)
        for mask, support in zip(masks, consistentSupport(rounds, 0.025)):
            np.testing.assert_array_equal(mask, support >= 0.5)

    def test_idempotent(self, rng):
        cloud = staticCloud(rng)
        blob = SemanticPointCloud(rng.uniform(20, 21, (30, 3)), np.full(30, 1))
        rounds = copies(cloud, 4) + [mergeClouds([cloud, blob]).withRound(4)]
        once = removeMoving(rounds).withRound(0)
        twice = removeMoving([once])
        np.testing.assert_array_equal(twice.positions, once.positions)

    def test_thread_count_does_not_matter(self, rng):
        cloud = staticCloud(rng)
        rounds = copies(cloud, 3)
        for one, many in zip(consistencyMasks(rounds, workers=1), consistencyMasks(rounds, workers=4)):
            np.testing.assert_array_equal(one, many)

    def test_round_mismatch(self, rng):
        cloud = staticCloud(rng)
        with pytest.raises(RoundMismatchError):
            consistencyMasks([cloud, cloud])

    @pytest.mark.parametrize('delta, epsD', [(0.0, 0.025), (1.5, 0.025), (0.6, 0.0)])
    def test_invalid_parameters(self, rng, delta, epsD):
        with pytest.raises(ValueError):
            consistencyMasks([staticCloud(rng)], delta, epsD)

    def test_generated_transient_removed_exactly(self, smallScene):
        rounds, _, membership = smallScene
        masks = consistencyMasks(rounds)
        for mask, transient in zip(masks, membership.transient):
            np.testing.assert_array_equal(mask, ~transient)


def grid(spacing=0.1, size=2.0):
    values = np.arange(0.0, size, spacing)
    a, b = np.meshgrid(values, values)
    return a.ravel(), b.ravel()


class TestFilterRoadPoints:
    def test_flat_labeled_road_kept(self):
        x, y = grid()
        cloud = SemanticPointCloud(np.column_stack([x, y, np.zeros_like(x)]), np.full(len(x), 9))
        road, dropped = filterRoadPoints(cloud, 10.0)
        assert len(road) == len(cloud)
        assert dropped == 0

    def test_flat_unlabeled_plane_kept(self):
        x, y = grid()
        cloud = SemanticPointCloud(np.column_stack([x, y, 0.01 * x]))
        road, _ = filterRoadPoints(cloud, 10.0)
        assert len(road) == len(cloud)

    def test_vertical_wall_removed(self):
        x, z = grid()
        cloud = SemanticPointCloud(np.column_stack([x, np.zeros_like(x), z]))
        road, _ = filterRoadPoints(cloud, 10.0)
        assert len(road) == 0

    def test_collinear_points_are_degenerate(self):
        positions = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
        _, degenerate = estimateNormals(positions)
        assert degenerate.all()
        road, dropped = filterRoadPoints(SemanticPointCloud(positions), 10.0)
        assert len(road) == 0 and dropped == 20

    def test_invalid_input(self):
        with pytest.raises(ValueError):
            filterRoadPoints(SemanticPointCloud.empty())
        with pytest.raises(ValueError):
            filterRoadPoints(SemanticPointCloud(np.zeros((5, 3))), 0.0)

    def test_scene_recall_and_precision(self):
        spec = SceneSpec(seed=3, extent=12.0, roadSpacing=0.1, objectSpacing=0.1, trees=1, trafficLights=0,
                         trafficSigns=0, parkedCars=0, transients=0, rounds=1, waypoints=[(2.0, 0.0), (10.0, 0.0)])
        (cloud,), _, membership = generate(spec)
        kinds = np.array([membership.primitives[p].kind for p in membership.pointPrimitive[0]])
        truth = np.isin(kinds, ['road', 'sidewalk', 'lane'])
        road, _ = filterRoadPoints(cloud, 10.0)
        keyOf = {tuple(p): index for index, p in enumerate(cloud.positions)}
        kept = np.zeros(len(cloud), dtype=bool)
        kept[[keyOf[tuple(p)] for p in road.positions]] = True
        truePositives = np.count_nonzero(kept & truth)
        assert truePositives / truth.sum() >= 0.99
        assert truePositives / kept.sum() >= 0.99
