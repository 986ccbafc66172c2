import numpy as np
import pytest

from src.models.zsl.data_model import (
    DATASET_PRESETS,
    ClassInfo,
    FeatureSchema,
    LabeledDataset,
    PrototypeTable,
    SyntheticSpec,
    class_centers,
    dims_from_files,
    generate_synthetic,
    l2_normalize_rows,
    load_features,
    load_prototypes,
    save_features,
    save_prototypes,
    split_partitions,
    synthetic_mixing_matrix,
)
from src.models.zsl.exceptions import DataFormatError, ShapeError, ValidationError


def _classes(seen=("a", "b"), unseen=("u",)):
    return tuple(ClassInfo(c, True) for c in seen) + tuple(ClassInfo(c, False) for c in unseen)


class TestLabeledDataset:
    def test_train_partition_requires_every_seen_class(self):
        with pytest.raises(ValidationError, match="'b'"):
            LabeledDataset(np.ones((2, 3)), ("a", "a"), _classes(), partition="train")

    def test_train_partition_rejects_unseen_examples(self):
        with pytest.raises(ValidationError, match="unseen"):
            LabeledDataset(np.ones((3, 3)), ("a", "b", "u"), _classes(), partition="train")

    def test_test_partition_rejects_seen_examples(self):
        with pytest.raises(ValidationError):
            LabeledDataset(np.ones((1, 3)), ("a",), _classes(), partition="test")

    def test_unknown_label(self):
        with pytest.raises(ValidationError):
            LabeledDataset(np.ones((1, 3)), ("zz",), _classes())

    def test_label_count_mismatch(self):
        with pytest.raises(ShapeError):
            LabeledDataset(np.ones((2, 3)), ("a",), _classes())

    def test_non_finite_features(self):
        features = np.ones((1, 3))
        features[0, 1] = np.nan
        with pytest.raises(ValidationError):
            LabeledDataset(features, ("a",), _classes())

    def test_features_are_read_only(self):
        ds = LabeledDataset(np.ones((1, 3)), ("a",), _classes())
        with pytest.raises(ValueError):
            ds.features[0, 0] = 2.0

    def test_label_positions(self):
        ds = LabeledDataset(np.ones((3, 2)), ("b", "u", "a"), _classes())
        np.testing.assert_array_equal(ds.label_positions(("a", "b")), [1, -1, 0])


class TestPrototypeTable:
    def test_segments(self):
        table = PrototypeTable(("a", "u"), np.ones((2, 3)), (True, False), np.zeros((2, 2)))
        assert table.segment("P").shape == (2, 3)
        assert table.segment("E").shape == (2, 2)
        assert table.segment("P+E").shape == (2, 5)
        np.testing.assert_array_equal(table.combined()[:, :3], 1.0)

    def test_expanded_row_count_must_match(self):
        with pytest.raises(ShapeError):
            PrototypeTable(("a", "u"), np.ones((2, 3)), (True, False), np.zeros((3, 2)))

    def test_duplicate_ids(self):
        with pytest.raises(ValidationError):
            PrototypeTable(("a", "a"), np.ones((2, 3)), (True, False))

    def test_restrict_keeps_order(self):
        table = PrototypeTable(("u1", "a", "u2"), np.arange(6.0).reshape(3, 2), (False, True, False))
        unseen = table.restrict(False)
        assert unseen.class_ids == ("u1", "u2")
        np.testing.assert_array_equal(unseen.predefined, [[0, 1], [4, 5]])

    def test_missing_expanded_segment(self):
        table = PrototypeTable(("a",), np.ones((1, 2)), (True,))
        with pytest.raises(ValidationError):
            table.segment("E")


class TestSyntheticBenchmark:
    def test_shapes_and_order(self):
        spec = SyntheticSpec(seed=7, m_seen=4, v_unseen=2, d=10, n=3, cluster_spread=0.3, examples_per_class=5)
        ds, table = generate_synthetic(spec)
        assert ds.features.shape == (30, 10)
        assert table.predefined.shape == (6, 3)
        assert table.seen_ids == ("c000", "c001", "c002", "c003")
        assert table.unseen_ids == ("c004", "c005")

    def test_same_seed_same_data(self):
        spec = SyntheticSpec(seed=11, m_seen=3, v_unseen=2, d=8, n=2, cluster_spread=0.5, examples_per_class=3)
        ds1, table1 = generate_synthetic(spec)
        ds2, table2 = generate_synthetic(spec)
        np.testing.assert_array_equal(ds1.features, ds2.features)
        np.testing.assert_array_equal(table1.predefined, table2.predefined)

    def test_zero_spread_puts_examples_on_centers(self):
        spec = SyntheticSpec(seed=1, m_seen=3, v_unseen=1, d=6, n=2, cluster_spread=0.0, examples_per_class=4)
        ds, table = generate_synthetic(spec)
        centers = table.predefined @ synthetic_mixing_matrix(spec).T
        positions = ds.label_positions(table.class_ids)
        np.testing.assert_allclose(ds.features, centers[positions], atol=1e-12)

    def test_hidden_factors_widen_the_mixing_matrix(self):
        spec = SyntheticSpec(seed=1, m_seen=3, v_unseen=1, d=6, n=2, cluster_spread=0.1, examples_per_class=2, hidden_dim=3)
        assert synthetic_mixing_matrix(spec).shape == (6, 5)

    def test_mixing_matrix_is_an_isometry(self):
        spec = SyntheticSpec(seed=4, m_seen=3, v_unseen=1, d=12, n=4, cluster_spread=0.1, examples_per_class=2, hidden_dim=5)
        mixing = synthetic_mixing_matrix(spec)
        np.testing.assert_allclose(mixing.T @ mixing, np.eye(9), atol=1e-12)

    def test_factor_model_prototypes_have_low_rank(self):
        spec = SyntheticSpec(
            seed=2, m_seen=12, v_unseen=4, d=20, n=8, cluster_spread=0.0, examples_per_class=2,
            hidden_dim=4, factor_dim=2, hidden_scale=0.5,
        )
        ds, table = generate_synthetic(spec)
        centered = table.predefined - table.predefined.mean(axis=0)
        assert np.linalg.matrix_rank(centered, tol=1e-9) == 2
        mixing = synthetic_mixing_matrix(spec)
        positions = ds.label_positions(table.class_ids)
        np.testing.assert_allclose(ds.features @ mixing[:, :8], table.predefined[positions], atol=1e-12)
        hidden = ds.features @ mixing[:, 8:]
        assert np.any(np.abs(hidden) > 1e-6)

    @pytest.mark.parametrize(
        "overrides",
        [{"factor_dim": 2}, {"factor_dim": -1}, {"hidden_dim": 5}, {"hidden_scale": -0.5}, {"hidden_scale": float("nan")}],
    )
    def test_generator_settings_rejected(self, overrides):
        settings = dict(seed=1, m_seen=3, v_unseen=1, d=6, n=2, cluster_spread=0.1, examples_per_class=2)
        settings.update(overrides)
        with pytest.raises(ValidationError):
            SyntheticSpec(**settings)

    def test_negative_spread_rejected(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(seed=1, m_seen=3, v_unseen=1, d=6, n=2, cluster_spread=-0.1, examples_per_class=2)

    def test_split_partitions(self, small_benchmark):
        _, ds, table, train, test = small_benchmark
        assert set(train.labels) == set(table.seen_ids)
        assert set(test.labels) == set(table.unseen_ids)
        assert train.n_examples + test.n_examples == ds.n_examples

    def test_presets(self):
        awa = DATASET_PRESETS["awa"]
        assert (awa.visual_dim, awa.semantic_dim, awa.expanded_dim, awa.seen, awa.unseen) == (1024, 85, 65, 40, 10)
        spec = SyntheticSpec.from_preset("cub", seed=0)
        assert (spec.d, spec.n, spec.m_seen, spec.v_unseen) == (1024, 312, 150, 50)


class TestFeatureHelpers:
    def test_l2_normalize_keeps_zero_rows(self):
        out = l2_normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0]])

    def test_class_centers_match_grouped_mean(self, small_benchmark):
        _, _, table, train, _ = small_benchmark
        centers = class_centers(train)
        for i, class_id in enumerate(table.seen_ids):
            rows = train.features[np.array(train.labels) == class_id]
            np.testing.assert_allclose(centers[i], rows.mean(axis=0), atol=1e-12)


class TestCsvFiles:
    def test_features_and_prototypes_reload(self, small_benchmark, tmp_path):
        _, ds, table, _, _ = small_benchmark
        save_features(ds, tmp_path / "features.csv")
        save_prototypes(table, tmp_path / "prototypes.csv")
        loaded_table = load_prototypes(tmp_path / "prototypes.csv")
        loaded = load_features(tmp_path / "features.csv", FeatureSchema.from_prototypes(loaded_table))
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded_table.predefined, table.predefined)
        assert loaded.labels == ds.labels
        dims = dims_from_files(tmp_path / "features.csv", tmp_path / "prototypes.csv")
        assert (dims.d, dims.n, dims.m, dims.v) == (12, 3, 6, 3)

    def test_expanded_columns_are_read_back(self, tmp_path):
        table = PrototypeTable(("a", "u"), np.ones((2, 2)), (True, False), np.full((2, 3), 0.25))
        save_prototypes(table, tmp_path / "p.csv")
        loaded = load_prototypes(tmp_path / "p.csv")
        assert loaded.k == 3
        np.testing.assert_array_equal(loaded.expanded, 0.25)

    def test_bad_value_reports_line(self, tmp_path):
        (tmp_path / "p.csv").write_text("class_id,split,a0\na,seen,1.0\nu,unseen,oops\n")
        with pytest.raises(DataFormatError) as info:
            load_prototypes(tmp_path / "p.csv")
        assert info.value.line == 3

    def test_bad_split_value(self, tmp_path):
        (tmp_path / "p.csv").write_text("class_id,split,a0\na,maybe,1.0\n")
        with pytest.raises(DataFormatError):
            load_prototypes(tmp_path / "p.csv")

    def test_unknown_class_in_features(self, tmp_path):
        (tmp_path / "f.csv").write_text("example_id,class_id,f0\nx1,zz,1.0\n")
        schema = FeatureSchema(class_split={"a": True})
        with pytest.raises(DataFormatError) as info:
            load_features(tmp_path / "f.csv", schema)
        assert info.value.line == 2

    def test_dimension_mismatch(self, tmp_path):
        (tmp_path / "f.csv").write_text("example_id,class_id,f0,f1\nx1,a,1.0,2.0\n")
        with pytest.raises(DataFormatError):
            load_features(tmp_path / "f.csv", FeatureSchema(class_split={"a": True}, dim=3))
