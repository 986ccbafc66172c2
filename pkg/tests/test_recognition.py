import numpy as np
import pytest

from src.models.zsl.data_model import ClassInfo, LabeledDataset, PrototypeTable
from src.models.zsl.exceptions import ShapeError, ValidationError
from src.models.zsl.nn_core import NetworkParams, layer_specs
from src.models.zsl.pipeline import check_projection_gradients
from src.models.zsl.recognition import (
    ProjectionConfig,
    ProjectionModel,
    class_targets,
    classify,
    confusion_matrix,
    evaluate,
    hit_at_k,
    init_projection,
    per_class_accuracy,
    prototype_distances,
    rank_predictions,
    train_projection,
)

UNSEEN = ("u0", "u1", "u2")


def _identity_projection(dim=2):
    layer = NetworkParams(layer_specs((dim, dim)), (np.eye(dim),), (np.zeros(dim),))
    return ProjectionModel(layer, layer, lam=1.0)


def _candidates():
    return PrototypeTable(UNSEEN, np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), (False,) * 3)


def _test_set(features, labels):
    classes = tuple(ClassInfo(c, False) for c in UNSEEN)
    return LabeledDataset(np.asarray(features, dtype=float), labels, classes, partition="test")


class TestDistances:
    def test_euclidean_and_cosine(self):
        emb = np.array([[3.0, 4.0]])
        protos = np.array([[0.0, 0.0], [3.0, 0.0]])
        np.testing.assert_allclose(prototype_distances(emb, protos, "euclidean"), [[5.0, 4.0]])
        np.testing.assert_allclose(prototype_distances(emb, protos[1:], "cosine"), [[0.4]])

    def test_zero_norm_under_cosine(self):
        with pytest.raises(ValidationError):
            prototype_distances(np.zeros((1, 2)), np.ones((2, 2)), "cosine")
        with pytest.raises(ValidationError):
            prototype_distances(np.ones((1, 2)), np.zeros((2, 2)), "cosine")

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            prototype_distances(np.ones((1, 2)), np.ones((2, 3)))

    def test_ranking_is_stable(self):
        np.testing.assert_array_equal(rank_predictions([[0.5, 0.1, 0.1, 0.0]]), [[3, 1, 2, 0]])


class TestClassify:
    def test_exact_prototype_is_recognized(self):
        assert classify(_identity_projection(), np.array([0.0, 2.0]), _candidates()) == "u1"

    def test_tie_goes_to_first_candidate(self):
        assert classify(_identity_projection(), np.array([1.0, 1.0]), _candidates()) == "u0"

    def test_cosine_ignores_scale(self, rng):
        model = _identity_projection()
        for _ in range(10):
            x = rng.standard_normal(2)
            assert classify(model, x, _candidates()) == classify(model, 7.5 * x, _candidates())

    @pytest.mark.parametrize("metric", ["cosine", "euclidean"])
    def test_agrees_with_a_linear_scan(self, metric):
        rng = np.random.default_rng(17)
        for _ in range(10_000):
            d, s, v = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 7)
            W, b = rng.standard_normal((d, s)), rng.standard_normal(s)
            encoder = NetworkParams(layer_specs((d, s)), (W,), (b,))
            decoder = NetworkParams(layer_specs((s, d)), (W.T.copy(),), (np.zeros(d),))
            protos = rng.standard_normal((v, s))
            table = PrototypeTable(tuple(f"c{i}" for i in range(v)), protos, (False,) * v)
            x = rng.standard_normal(d)
            e = x @ W + b
            scores = []
            for p in protos:
                if metric == "euclidean":
                    scores.append(float(np.sqrt(np.sum((e - p) ** 2))))
                else:
                    scores.append(1.0 - float(e @ p) / (np.linalg.norm(e) * np.linalg.norm(p)))
            best = min(scores)
            chosen = classify(ProjectionModel(encoder, decoder), x, table, metric, mode="P")
            assert scores[table.class_ids.index(chosen)] <= best + 1e-12


class TestHitAtK:
    def test_second_ranked_truth(self):
        ds = _test_set([[1.0, 0.1]], ("u1",))
        hits = hit_at_k(_identity_projection(), ds, _candidates(), metric="euclidean")
        np.testing.assert_allclose(hits, [0.0, 1.0, 1.0])

    def test_curve_is_monotone_and_complete(self, rng):
        labels = tuple(UNSEEN[i] for i in rng.integers(0, 3, size=20))
        ds = _test_set(rng.standard_normal((20, 2)), labels)
        hits = hit_at_k(_identity_projection(), ds, _candidates())
        assert np.all(np.diff(hits) >= 0)
        assert hits[-1] == 1.0

    def test_k_out_of_range(self):
        ds = _test_set([[1.0, 0.0]], ("u0",))
        with pytest.raises(ValidationError):
            hit_at_k(_identity_projection(), ds, _candidates(), top_k=4)

    def test_examples_outside_candidates(self):
        classes = tuple(ClassInfo(c, False) for c in UNSEEN + ("u9",))
        ds = LabeledDataset(np.ones((1, 2)), ("u9",), classes, partition="test")
        with pytest.raises(ValidationError):
            hit_at_k(_identity_projection(), ds, _candidates())


class TestConfusion:
    def test_trace_matches_top1(self, rng):
        labels = tuple(UNSEEN[i] for i in rng.integers(0, 3, size=30))
        ds = _test_set(rng.standard_normal((30, 2)), labels)
        report = evaluate(_identity_projection(), ds, _candidates())
        assert report.total == 30
        assert np.trace(report.confusion) / report.total == report.top1
        counts = [labels.count(c) for c in UNSEEN]
        np.testing.assert_array_equal(report.confusion.sum(axis=1), counts)

    def test_matches_standalone_matrix(self, rng):
        ds = _test_set(rng.standard_normal((8, 2)), ("u0", "u1") * 4)
        report = evaluate(_identity_projection(), ds, _candidates())
        np.testing.assert_array_equal(report.confusion, confusion_matrix(_identity_projection(), ds, _candidates()))

    def test_per_class_accuracy_without_examples(self):
        confusion = np.array([[3, 1], [0, 0]])
        np.testing.assert_allclose(per_class_accuracy(confusion), [0.75, 0.0])


class TestProjectionTraining:
    def _config(self, **overrides):
        settings = dict(epochs=4, batch_size=8, learning_rate=0.01, seed=5)
        settings.update(overrides)
        return ProjectionConfig(**settings)

    @pytest.mark.parametrize("tied", [False, True])
    def test_gradients_match_finite_differences(self, tied):
        report = check_projection_gradients(tied=tied, seed=2, lam=0.5)
        assert report.passed, report

    def test_zero_epochs_returns_initial_model(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        model = train_projection(train, table, self._config(epochs=0), mode="P")
        expected = init_projection(train.dim, table.n, 1.0, False, np.random.SeedSequence(5).spawn(2)[0])
        for a, b in zip(model.encoder.blocks(), expected.encoder.blocks()):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_model(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        a = train_projection(train, table, self._config(), mode="P")
        b = train_projection(train, table, self._config(), mode="P")
        for x, y in zip(a.encoder.blocks() + a.decoder.blocks(), b.encoder.blocks() + b.decoder.blocks()):
            np.testing.assert_array_equal(x, y)

    def test_tied_decoder_stays_tied(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        model = train_projection(train, table, self._config(tied=True), mode="P")
        np.testing.assert_array_equal(model.decoder.weights[0], model.encoder.weights[0].T)

    def test_sylvester_solution_satisfies_its_equation(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        lam = 0.7
        model = train_projection(train, table, self._config(solver="sylvester", lam=lam), mode="P")
        P = class_targets(train, table, "P")
        X = train.features
        W = model.decoder.weights[0]
        lhs = P.T @ P @ W + lam * W @ (X.T @ X)
        rhs = (1.0 + lam) * P.T @ X
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)
        assert model.tied

    def test_larger_lambda_fits_prototypes_better(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        P = class_targets(train, table, "P")

        def fit(lam):
            model = train_projection(train, table, self._config(solver="sylvester", lam=lam), mode="P")
            return np.sum((model.project(train.features) - P) ** 2)

        assert fit(10.0) <= fit(0.1) * (1 + 1e-9)

    def test_evaluate_after_training(self, small_benchmark):
        _, _, table, train, test = small_benchmark
        model = train_projection(train, table, self._config(), mode="P")
        report = evaluate(model, test, table.restrict(False), mode="P")
        assert report.class_ids == table.unseen_ids
        assert report.hit_at_k.shape == (3,)
        assert report.hit_at_k[-1] == 1.0
        assert report.mode == "P"
