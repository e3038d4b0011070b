import numpy as np
import pytest

from fuserec.catalog import (DomainTag, EmbeddingTable, ItemCatalog, init_id_table,
                             load_image_table, lookup, write_embedding_file)
from fuserec.errors import DataError

from conftest import make_catalog


class TestInitIdTable:
    def test_values_within_init_bound(self):
        table = init_id_table(3, 256, seed=7)
        assert table.values.shape == (3, 256)
        assert table.trainable
        assert np.abs(table.values).max() <= 1.0 / 16.0

    def test_minimal_case(self):
        table = init_id_table(1, 1, seed=0)
        assert table.values.shape == (1, 1)

    def test_same_seed_bit_identical(self):
        a = init_id_table(5, 8, seed=42)
        b = init_id_table(5, 8, seed=42)
        assert np.array_equal(a.values, b.values)

    def test_different_seed_differs(self):
        a = init_id_table(5, 8, seed=42)
        b = init_id_table(5, 8, seed=43)
        assert not np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("num_items,dim", [(0, 4), (4, 0), (-1, 4)])
    def test_invalid_arguments(self, num_items, dim):
        with pytest.raises(ValueError):
            init_id_table(num_items, dim, seed=0)


class TestLookup:
    def test_gather_order_and_duplicates(self):
        table = init_id_table(3, 4, seed=1)
        out = lookup(table, [2, 0, 2])
        assert np.array_equal(out[0], table.values[2])
        assert np.array_equal(out[1], table.values[0])
        assert np.array_equal(out[0], out[2])

    def test_empty_ids(self):
        table = init_id_table(3, 4, seed=1)
        assert lookup(table, []).shape == (0, 4)

    def test_single_row_table(self):
        table = init_id_table(1, 4, seed=1)
        assert np.array_equal(lookup(table, [0]), table.values)

    def test_out_of_range(self):
        table = init_id_table(3, 4, seed=1)
        with pytest.raises(IndexError):
            lookup(table, [3])

    def test_gather_linearity(self):
        rng = np.random.default_rng(0)
        a = EmbeddingTable(rng.standard_normal((5, 3)), trainable=True)
        b = EmbeddingTable(rng.standard_normal((5, 3)), trainable=True)
        ids = [4, 1, 1, 0]
        mix = EmbeddingTable(2.0 * a.values + 3.0 * b.values, trainable=True)
        np.testing.assert_allclose(lookup(mix, ids),
                                   2.0 * lookup(a, ids) + 3.0 * lookup(b, ids))

    def test_returns_copy(self):
        table = init_id_table(3, 4, seed=1)
        out = lookup(table, [0])
        out[:] = 99.0
        assert np.abs(table.values).max() <= 1.0


class TestLoadImageTable:
    def write(self, tmp_path, keys, values, text=False):
        path = tmp_path / ("emb.txt" if text else "emb.bin")
        write_embedding_file(path, keys, values, text=text)
        return path

    @pytest.mark.parametrize("text", [False, True])
    def test_load_normalizes_rows(self, tmp_path, text):
        catalog = make_catalog(2, 1)
        rng = np.random.default_rng(3)
        values = 5.0 * rng.standard_normal((3, 512))
        path = self.write(tmp_path, list(catalog.keys), values, text=text)
        table = load_image_table(path, catalog)
        assert not table.trainable
        assert table.values.shape == (3, 512)
        np.testing.assert_allclose(np.linalg.norm(table.values, axis=1), 1.0, atol=1e-6)

    def test_missing_key_named(self, tmp_path):
        catalog = make_catalog(2, 1)
        path = self.write(tmp_path, list(catalog.keys)[:-1],
                          np.eye(2, 4))
        with pytest.raises(DataError, match="Y000"):
            load_image_table(path, catalog)

    def test_nan_rejected(self, tmp_path):
        catalog = make_catalog(2, 1)
        values = np.ones((3, 4))
        values[1, 2] = np.nan
        path = self.write(tmp_path, list(catalog.keys), values)
        with pytest.raises(DataError, match="non-finite"):
            load_image_table(path, catalog)

    def test_dimension_mismatch_in_text_variant(self, tmp_path):
        catalog = make_catalog(2, 1)
        path = tmp_path / "emb.txt"
        path.write_text("X000 1.0 0.0\nX001 1.0 0.0 0.0\nY000 1.0 0.0\n")
        with pytest.raises(DataError, match="dimension mismatch"):
            load_image_table(path, catalog)

    def test_zero_norm_row_rejected(self, tmp_path):
        catalog = make_catalog(2, 1)
        values = np.ones((3, 4))
        values[0] = 0.0
        path = self.write(tmp_path, list(catalog.keys), values)
        with pytest.raises(DataError, match="zero-norm"):
            load_image_table(path, catalog)

    def test_extra_keys_ignored(self, tmp_path):
        catalog = make_catalog(2, 1)
        keys = list(catalog.keys) + ["GONE"]
        path = self.write(tmp_path, keys, np.eye(4, 4))
        table = load_image_table(path, catalog)
        assert table.values.shape == (3, 4)

    def test_truncated_binary(self, tmp_path):
        catalog = make_catalog(2, 1)
        path = self.write(tmp_path, list(catalog.keys), np.eye(3, 4))
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(DataError, match="truncated|trailing"):
            load_image_table(path, catalog)

    def test_frozen_table_rejects_writes(self, tmp_path):
        catalog = make_catalog(2, 1)
        path = self.write(tmp_path, list(catalog.keys), np.eye(3, 4))
        table = load_image_table(path, catalog)
        with pytest.raises(ValueError):
            table.values[0, 0] = 1.0


class TestCatalog:
    def test_partition_counts(self):
        catalog = make_catalog(4, 3)
        assert catalog.count(DomainTag.X) + catalog.count(DomainTag.Y) == len(catalog)

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ValueError):
            ItemCatalog.from_items([("a", DomainTag.X), ("a", DomainTag.Y)])

    def test_save_load_round_trip(self, tmp_path):
        catalog = make_catalog(3, 2)
        catalog.save(tmp_path / "cat.tsv")
        loaded = ItemCatalog.load(tmp_path / "cat.tsv")
        assert loaded.keys == catalog.keys
        assert np.array_equal(loaded.tags, catalog.tags)

    def test_subset_preserves_order(self):
        catalog = make_catalog(3, 2)
        sub, remap = catalog.subset({"X001", "Y000", "Y001"})
        assert sub.keys == ("X001", "Y000", "Y001")
        assert remap == {1: 0, 3: 1, 4: 2}
