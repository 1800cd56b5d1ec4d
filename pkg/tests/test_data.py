"""Synthetic data, subject-independent splits, metrics and file formats."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_macro_f1, dominant_frequency, nearest_centroid_accuracy
from pasnet.data import (confusion_matrix, generate_synthetic, load_dataset, macro_f1, save_dataset,
                         split_subject_independent)
from pasnet.errors import ConfigurationError, InputError
from pasnet.io import (read_manifest, read_tensor_container, read_window, read_window_bin, read_window_csv,
                       write_tensor_container, write_window_bin, write_window_csv)


class TestSynthetic:
    def test_counts(self):
        ds = generate_synthetic(classes=4, samples_per_class=200, T=128, in_channels=6, nodes=3)
        assert ds.windows.shape == (800, 128, 6, 3)
        assert np.bincount(ds.labels).tolist() == [200] * 4

    def test_same_seed_same_bytes(self):
        a = generate_synthetic(samples_per_class=10, seed=9)
        b = generate_synthetic(samples_per_class=10, seed=9)
        assert a.windows.tobytes() == b.windows.tobytes()
        assert a.subjects.tobytes() == b.subjects.tobytes()
        c = generate_synthetic(samples_per_class=10, seed=10)
        assert a.windows.tobytes() != c.windows.tobytes()

    def test_frequency_centroid_oracle(self):
        ds = generate_synthetic(classes=2, samples_per_class=30, noise=0.0, seed=2)
        feats = np.array([[dominant_frequency(w[:, c, v], 50.0) for c in range(6) for v in range(3)]
                          for w in ds.windows])
        assert nearest_centroid_accuracy(feats, ds.labels) == 1.0

    def test_active_nodes_differ(self):
        ds = generate_synthetic(classes=4, samples_per_class=5, noise=0.0)
        energy = np.stack([(ds.windows[ds.labels == k] ** 2).mean(axis=(0, 1, 2)) for k in range(4)])
        assert len({tuple(np.round(e / e.max(), 2)) for e in energy}) == 4

    def test_needs_two_classes(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic(classes=1)


class TestSplit:
    def test_twenty_subjects(self):
        sp = split_subject_independent(np.arange(20).repeat(3), seed=0)
        assert [len(sp["subjects"][k]) for k in ("train", "val", "test")] == [14, 3, 3]

    def test_three_subjects(self):
        sp = split_subject_independent([5, 6, 7, 5])
        assert [len(sp["subjects"][k]) for k in ("train", "val", "test")] == [1, 1, 1]

    @given(st.lists(st.integers(0, 30), min_size=3, max_size=200), st.integers(0, 100))
    @settings(max_examples=50, deadline=None)
    def test_no_leakage_and_full_cover(self, ids, seed):
        ids = np.array(ids)
        if len(np.unique(ids)) < 3:
            with pytest.raises(ConfigurationError):
                split_subject_independent(ids, seed=seed)
            return
        sp = split_subject_independent(ids, seed=seed)
        seen = {k: set(ids[sp[k]].tolist()) for k in ("train", "val", "test")}
        assert not seen["train"] & seen["test"]
        assert not seen["train"] & seen["val"]
        assert not seen["val"] & seen["test"]
        assert sorted(np.concatenate([sp[k] for k in ("train", "val", "test")]).tolist()) == list(range(len(ids)))

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            split_subject_independent(range(10), fractions=(0.5, 0.2, 0.2))


class TestMetrics:
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
    @settings(max_examples=80, deadline=None)
    def test_macro_f1_matches_brute_force(self, pairs):
        y, p = zip(*pairs)
        assert macro_f1(y, p, 5) == pytest.approx(brute_force_macro_f1(y, p, 5), abs=1e-12)

    def test_perfect(self):
        y = [0, 1, 2, 2, 1]
        assert macro_f1(y, y, 3) == 1.0

    def test_confusion(self):
        m = confusion_matrix([0, 1, 1], [0, 0, 1], 2)
        assert m.tolist() == [[1, 0], [1, 1]]


class TestFormats:
    def test_window_bin_roundtrip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(10, 6, 3)).astype(np.float32)
        write_window_bin(tmp_path / "w.bin", x)
        assert np.array_equal(read_window_bin(tmp_path / "w.bin"), x)

    def test_window_csv_roundtrip_with_header(self, tmp_path):
        x = np.random.default_rng(1).normal(size=(7, 3, 2)).astype(np.float32)
        write_window_csv(tmp_path / "w.csv", x)
        text = (tmp_path / "w.csv").read_text()
        (tmp_path / "h.csv").write_text("ax0,ay0,az0,ax1,ay1,az1\n" + text)
        for name in ("w.csv", "h.csv"):
            np.testing.assert_allclose(read_window(tmp_path / name, 3, 2), x, rtol=1e-6)

    def test_csv_node_major_layout(self, tmp_path):
        (tmp_path / "w.csv").write_text("1,2,3,4,5,6\n")
        x = read_window_csv(tmp_path / "w.csv", 3, 2)
        assert x[0, :, 0].tolist() == [1, 2, 3] and x[0, :, 1].tolist() == [4, 5, 6]

    def test_bad_files(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"abc")
        with pytest.raises(InputError):
            read_window_bin(tmp_path / "a.bin")
        (tmp_path / "b.csv").write_text("1,2\n")
        with pytest.raises(InputError):
            read_window_csv(tmp_path / "b.csv", 3, 1)
        (tmp_path / "c.csv").write_text("1,nan,3\n")
        with pytest.raises(InputError):
            read_window_csv(tmp_path / "c.csv", 3, 1)
        (tmp_path / "m.csv").write_text("path,label\n")
        with pytest.raises(InputError):
            read_manifest(tmp_path / "m.csv")

    def test_tensor_container(self, tmp_path):
        t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "s": np.float32(2.5)}
        write_tensor_container(tmp_path / "c", t, {"k": 1})
        back, meta = read_tensor_container(tmp_path / "c")
        assert meta == {"k": 1}
        assert np.array_equal(back["a"], t["a"]) and back["s"] == 2.5
        (tmp_path / "d").write_bytes((tmp_path / "c").read_bytes()[:30])
        with pytest.raises(InputError):
            read_tensor_container(tmp_path / "d")

    def test_dataset_roundtrip(self, tmp_path):
        ds = generate_synthetic(samples_per_class=6, T=16)
        sp = split_subject_independent(ds.subjects)
        manifest = save_dataset(tmp_path, ds, sp)
        back = load_dataset(manifest, 6, 3, split="test")
        assert np.array_equal(back.windows, ds.windows[sp["test"]])
        assert np.array_equal(back.labels, ds.labels[sp["test"]])
        with pytest.raises(InputError):
            load_dataset(manifest, 6, 3, split="holdout")
