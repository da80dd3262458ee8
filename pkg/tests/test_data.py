import struct

import numpy as np
import pytest

from poinhier.data import (
    EmbeddingDataset,
    SynthConfig,
    augment_pair,
    dataset_from_bytes,
    dataset_to_bytes,
    generate_synthetic,
    read_dataset,
    stratified_split,
    write_dataset,
)
from poinhier.errors import FormatError, InvalidDataset, InvalidInput, UnsupportedVersion

SMALL = SynthConfig(n_per_subcluster=5, subclusters_per_class=2, d_in=3)


class TestFormat:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(SMALL)
        path = tmp_path / "d.phe"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back.equals(ds)
        assert dataset_to_bytes(back) == path.read_bytes()

    def test_layout_by_hand(self):
        ds = EmbeddingDataset([[1.5, -2.0]], [1], [[0.25, 3.0]], [7])
        expected = (b"PHE1" + struct.pack("<III", 1, 1, 2) + b"\x01\x01" + b"\x01"
                    + struct.pack("<ff", 1.5, -2.0) + struct.pack("<ff", 0.25, 3.0)
                    + struct.pack("<I", 7))
        assert dataset_to_bytes(ds) == expected

    def test_empty_dataset_is_header_only(self):
        data = dataset_to_bytes(EmbeddingDataset(np.zeros((0, 4)), []))
        assert len(data) == 18
        assert dataset_from_bytes(data).n == 0

    def test_single_sample_without_aug(self):
        ds = dataset_from_bytes(dataset_to_bytes(EmbeddingDataset([[0.5]], [0])))
        assert ds.n == 1 and ds.aug_features is None and ds.subcluster_ids is None

    def test_bad_magic(self):
        data = bytearray(dataset_to_bytes(generate_synthetic(SMALL)))
        data[0:4] = b"PHE2"
        with pytest.raises(FormatError):
            dataset_from_bytes(bytes(data))

    def test_version(self):
        data = bytearray(dataset_to_bytes(generate_synthetic(SMALL)))
        data[4] = 2
        with pytest.raises(UnsupportedVersion):
            dataset_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [0, 10, 18, 30, -1])
    def test_truncated(self, cut):
        data = dataset_to_bytes(generate_synthetic(SMALL))
        with pytest.raises(FormatError):
            dataset_from_bytes(data[:cut])

    def test_oversized_header_does_not_allocate(self):
        data = b"PHE1" + struct.pack("<III", 1, 2**31, 2**31) + b"\x00\x00"
        with pytest.raises(FormatError):
            dataset_from_bytes(data)

    def test_bad_label_byte(self):
        data = bytearray(dataset_to_bytes(EmbeddingDataset([[0.5]], [0])))
        data[18] = 5
        with pytest.raises(FormatError):
            dataset_from_bytes(bytes(data))

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_dataset(generate_synthetic(SMALL), tmp_path / "missing" / "x.phe")

    def test_invalid_construction(self):
        with pytest.raises(InvalidDataset):
            EmbeddingDataset([[0.0]], [2])
        with pytest.raises(InvalidDataset):
            EmbeddingDataset([[0.0]], [0], [[0.0, 1.0]])


class TestSynthetic:
    def test_noise_free(self):
        cfg = SynthConfig(n_per_subcluster=4, subclusters_per_class=3, d_in=5, noise_sigma=0, aug_sigma=0)
        ds = generate_synthetic(cfg)
        assert np.array_equal(ds.features, ds.aug_features)
        for sc in np.unique(ds.subcluster_ids):
            rows = ds.features[ds.subcluster_ids == sc]
            assert np.all(rows == rows[0])

    def test_counts_and_balance(self):
        ds = generate_synthetic(SynthConfig(n_per_subcluster=7, subclusters_per_class=3, d_in=4))
        assert ds.n == 2 * 3 * 7
        assert np.sum(ds.labels == 0) == np.sum(ds.labels == 1)
        assert len(np.unique(ds.subcluster_ids)) == 6

    def test_pure_function_of_config(self):
        assert dataset_to_bytes(generate_synthetic(SMALL)) == dataset_to_bytes(generate_synthetic(SMALL))

    def test_centroid_rule_separates(self):
        ds = generate_synthetic(SynthConfig(n_per_subcluster=50, class_separation=40.0, subcluster_spread=2.0,
                                            noise_sigma=0.5))
        X = ds.features.astype(float)
        centroids = [X[ds.labels == c].mean(axis=0) for c in (0, 1)]
        pred = [int(np.argmin([np.linalg.norm(x - m) for m in centroids])) for x in X]
        assert np.array_equal(pred, ds.labels)

    def test_invalid_config(self):
        with pytest.raises(InvalidInput):
            SynthConfig(subclusters_per_class=0)


class TestAugment:
    def _plain(self, n=4, d=3):
        return EmbeddingDataset(np.arange(n * d, dtype=float).reshape(n, d), [0, 1] * (n // 2))

    def test_zero_sigma(self):
        ds = augment_pair(self._plain(), 0.0, 1)
        assert np.array_equal(ds.aug_features, ds.features)

    def test_seeded(self):
        a = augment_pair(self._plain(), 0.5, 3)
        b = augment_pair(self._plain(), 0.5, 3)
        assert a.equals(b)

    def test_empirical_std(self):
        ds = EmbeddingDataset(np.zeros((100_000, 2)), np.zeros(100_000, dtype=int))
        out = augment_pair(ds, 0.7, 0)
        std = (out.aug_features.astype(float) - out.features).std(axis=0)
        np.testing.assert_allclose(std, 0.7, rtol=0.02)

    def test_already_augmented(self):
        with pytest.raises(InvalidInput):
            augment_pair(generate_synthetic(SMALL), 0.1, 0)


def test_stratified_split():
    ds = generate_synthetic(SynthConfig(n_per_subcluster=10, subclusters_per_class=2, d_in=2))
    train, held = stratified_split(ds, 0.2, np.random.default_rng(0))
    assert train.n + held.n == ds.n
    assert np.sum(held.labels == 0) == np.sum(held.labels == 1) == 4
