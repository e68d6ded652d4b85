import numpy as np
import pytest

from fusion_prognostics.clustering.model import KnnConfig
from fusion_prognostics.clustering.operations import (
    align_labels,
    cluster_sensors,
    kmeans,
    knn_diagnose,
    neighbor_count,
    per_mode_accuracy,
)
from fusion_prognostics.exceptions import DataError, InsufficientData


class TestKmeans:
    def test_one_cluster_is_the_mean(self):
        points = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]])

        model = kmeans(points, K=1, seed=0)

        assert np.allclose(model.centroids[0], points.mean(axis=0))
        assert model.inertia == pytest.approx(((points - points.mean(axis=0)) ** 2).sum())

    def test_two_separated_pairs(self):
        points = np.array([0.0, 0.1, 10.0, 10.1])

        model = kmeans(points, K=2, seed=0)

        assert np.allclose(np.sort(model.centroids[:, 0]), [0.05, 10.05])
        assert model.labels[0] == model.labels[1] != model.labels[2] == model.labels[3]

    def test_duplicated_points_keep_centroids(self):
        rng = np.random.default_rng(0)
        points = np.vstack([rng.normal(-3, 0.5, (10, 2)), rng.normal(3, 0.5, (10, 2))])

        single = kmeans(points, K=2, seed=7)
        doubled = kmeans(np.vstack([points, points]), K=2, seed=7)

        assert np.allclose(single.centroids, doubled.centroids, rtol=0.0, atol=1e-12)

    def test_centroids_come_in_lexicographic_order(self):
        points = np.array([[5.0, 0.0], [5.1, 0.0], [-5.0, 1.0], [-5.1, 1.0], [0.0, 9.0], [0.1, 9.0]])

        model = kmeans(points, K=3, seed=3)

        assert np.allclose(model.centroids, [[-5.05, 1.0], [0.05, 9.0], [5.05, 0.0]])
        assert model.labels.tolist() == [2, 2, 0, 0, 1, 1]

    def test_labels_follow_nearest_centroid(self):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(40, 3))

        model = kmeans(points, K=3, seed=0)

        assert np.array_equal(model.labels, model.assign(points))

    def test_fewer_points_than_clusters(self):
        with pytest.raises(InsufficientData):
            kmeans(np.array([[1.0]]), K=2)


class TestKnn:
    def test_neighbor_count(self):
        assert neighbor_count(160, KnnConfig()) == 16
        assert neighbor_count(5, KnnConfig()) == 1
        assert neighbor_count(11, KnnConfig()) == 2
        assert neighbor_count(3, KnnConfig(neighbor_fraction=0.1, minimum_neighbors=5)) == 3

    def test_two_mode_fixture(self):
        rng = np.random.default_rng(2)
        scores = np.concatenate([rng.normal(-1, 0.1, 50), rng.normal(1, 0.1, 50)])[:, None]
        modes = np.repeat([0, 1], 50)

        assert knn_diagnose(scores, modes, np.array([0.9])) == 1
        assert knn_diagnose(scores, modes, np.array([-0.9])) == 0

    def test_training_point_in_a_pure_neighbourhood(self):
        rng = np.random.default_rng(3)
        scores = np.vstack([rng.normal(-5, 0.1, (80, 2)), rng.normal(5, 0.1, (80, 2))])
        modes = np.repeat([0, 1], 80)

        assert knn_diagnose(scores, modes, scores[100]) == 1

    def test_tie_goes_to_the_nearest_neighbour(self):
        scores = np.array([[0.0], [1.0], [2.0], [3.0]])
        modes = np.array([0, 0, 1, 1])
        everyone = KnnConfig(neighbor_fraction=1.0)

        assert knn_diagnose(scores, modes, np.array([2.9]), everyone) == 1
        assert knn_diagnose(scores, modes, np.array([0.1]), everyone) == 0

    def test_invariant_under_rotation(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=(60, 2))
        modes = (scores[:, 0] > 0).astype(int)
        test = np.array([0.3, -0.2])
        angle = 0.7
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])

        assert knn_diagnose(scores, modes, test) == knn_diagnose(scores @ rotation.T, modes, rotation @ test)

    def test_empty_training_set(self):
        with pytest.raises(InsufficientData):
            knn_diagnose(np.empty((0, 2)), np.empty(0, dtype=int), np.zeros(2))


class TestAlignment:
    def test_identity(self):
        truth = np.array([0, 0, 1, 1, 1])

        permutation, accuracy = align_labels(truth, truth, 2)

        assert list(permutation) == [0, 1]
        assert accuracy == 1.0

    def test_swapped_labels(self):
        truth = np.array([0, 0, 1, 1, 1])

        permutation, accuracy = align_labels(1 - truth, truth, 2)

        assert list(permutation) == [1, 0]
        assert accuracy == 1.0

    def test_random_labels_score_about_half(self):
        rng = np.random.default_rng(5)
        truth = np.repeat([0, 1], 200)

        accuracies = [align_labels(rng.integers(0, 2, 400), truth, 2)[1] for _ in range(100)]

        assert np.mean(accuracies) == pytest.approx(0.5, abs=0.06)

    def test_per_mode_accuracy(self):
        truth = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        pred = np.array([1, 1, 1, 0, 0, 0, 0, 0])

        assert np.allclose(per_mode_accuracy(pred, truth, 2), [0.75, 1.0])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            align_labels(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)

    def test_labels_out_of_range(self):
        with pytest.raises(DataError):
            align_labels(np.array([0, 2]), np.array([0, 1]), 2)


def test_sensorwise_clustering_labels_every_sensor(small_study):
    train = small_study.offline_train

    clustering = cluster_sensors(train, K=2, seed=0)

    assert clustering.labels.shape == (train.n_systems, train.n_sensors)
    assert set(np.unique(clustering.labels)) <= {0, 1}
