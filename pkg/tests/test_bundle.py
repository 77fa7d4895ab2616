import numpy as np
import pytest

from fscl.bundle import (
    TeacherBundle,
    TeacherRecord,
    load_bundle,
    synthetic_teacher,
    teacher_top1_accuracy,
    validate_bundle,
    write_bundle,
)
from fscl.data import make_blobs
from fscl.errors import (
    BundleCorruptionError,
    BundleError,
    BundleFormatError,
    UsageError,
)

from oracles import binomial_3sigma


def tiny_dataset():
    return make_blobs(n_classes=4, train_per_class=3, test_per_class=2,
                      height=2, width=2, channels=1, seed=5)


def tiny_bundle(quality=0.8, seed=11):
    return synthetic_teacher(tiny_dataset(), quality=quality,
                             scale_dims=[3, 5], embed_dim=4, seed=seed)


class TestRoundTrip:
    def test_write_then_load_is_bitwise(self, tmp_path):
        bundle = tiny_bundle()
        path = tmp_path / "t.bftb"
        write_bundle(path, bundle)
        loaded = load_bundle(path)
        assert loaded.scale_dims == bundle.scale_dims
        assert loaded.embed_dim == bundle.embed_dim
        assert loaded.class_names == bundle.class_names
        assert len(loaded.records) == len(bundle.records)
        for a, b in zip(loaded.records, bundle.records):
            assert a.sample_id == b.sample_id
            assert a.label == b.label
            for fa, fb in zip(a.features, b.features):
                assert fa.tobytes() == fb.tobytes()
            assert a.embedding.tobytes() == b.embedding.tobytes()
            assert a.vocab_scores.tobytes() == b.vocab_scores.tobytes()

    def test_same_seed_twice_gives_identical_files(self, tmp_path):
        p1, p2 = tmp_path / "a.bftb", tmp_path / "b.bftb"
        write_bundle(p1, tiny_bundle(seed=3))
        write_bundle(p2, tiny_bundle(seed=3))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bftb"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(BundleFormatError, match="magic"):
            load_bundle(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.bftb"
        bundle = tiny_bundle()
        write_bundle(path, bundle)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(BundleFormatError, match="version"):
            load_bundle(path)

    def test_truncation_mid_record_reports_offset(self, tmp_path):
        path = tmp_path / "trunc.bftb"
        write_bundle(path, tiny_bundle())
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 7])
        with pytest.raises(BundleCorruptionError, match="byte offset"):
            load_bundle(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "extra.bftb"
        write_bundle(path, tiny_bundle())
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00")
        with pytest.raises(BundleCorruptionError, match="trailing"):
            load_bundle(path)


class TestValidateBundle:
    def test_synthetic_bundle_is_clean(self):
        ds = tiny_dataset()
        bundle = synthetic_teacher(ds, 0.5, scale_dims=[3], embed_dim=4, seed=0)
        assert validate_bundle(bundle, expected_scales=1,
                               class_universe=ds.class_names) == []

    def test_one_nan_embedding_is_one_error_naming_the_sample(self):
        bundle = tiny_bundle()
        bundle.records[7].embedding[1] = np.nan
        problems = validate_bundle(bundle)
        assert len(problems) == 1
        assert "sample 7" in problems[0]
        assert "embedding" in problems[0]

    def test_vocab_missing_dataset_class(self):
        ds = tiny_dataset()
        bundle = synthetic_teacher(ds, 0.5, scale_dims=[3], embed_dim=4, seed=0)
        bundle.class_names = bundle.class_names[:-1]
        bundle.records = [r for r in bundle.records]  # names list is what matters
        problems = validate_bundle(bundle, class_universe=ds.class_names)
        assert any("does not cover" in p and "class_003" in p for p in problems)

    def test_scale_count_mismatch(self):
        bundle = tiny_bundle()
        problems = validate_bundle(bundle, expected_scales=3)
        assert any("scales" in p for p in problems)

    def test_scale_dim_mismatch_names_scale(self):
        bundle = tiny_bundle()  # dims [3, 5]
        problems = validate_bundle(bundle, expected_scale_dims=[3, 6])
        assert any("scale 1" in p for p in problems)

    def test_non_dense_ids_detected(self):
        bundle = tiny_bundle()
        bundle.records[0].sample_id = 999
        assert any("dense" in p for p in validate_bundle(bundle))


class TestSyntheticTeacher:
    def test_quality_one_is_perfect(self):
        bundle = synthetic_teacher(tiny_dataset(), 1.0, scale_dims=[3],
                                   embed_dim=4, seed=1)
        assert teacher_top1_accuracy(bundle) == 1.0

    def test_quality_zero_is_chance_level(self):
        ds = make_blobs(n_classes=5, train_per_class=80, test_per_class=20,
                        height=2, width=2, channels=1, seed=9)
        bundle = synthetic_teacher(ds, 0.0, scale_dims=[3], embed_dim=4, seed=2)
        acc = teacher_top1_accuracy(bundle) * 100.0
        chance = 100.0 / 5
        assert abs(acc - chance) <= binomial_3sigma(0.2, len(bundle.records))

    def test_accuracy_monotone_in_quality_at_fixed_seed(self):
        ds = make_blobs(n_classes=6, train_per_class=25, test_per_class=5,
                        height=2, width=2, channels=1, seed=10)
        accs = [teacher_top1_accuracy(
                    synthetic_teacher(ds, q, scale_dims=[4], embed_dim=4, seed=77))
                for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert all(b >= a for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0

    def test_quality_out_of_range(self):
        with pytest.raises(UsageError):
            synthetic_teacher(tiny_dataset(), 1.5, scale_dims=[3], embed_dim=4, seed=0)

    def test_record_lookup_and_missing_record(self):
        bundle = tiny_bundle()
        assert bundle.record_for(0).sample_id == 0
        with pytest.raises(BundleError, match="sample 10000"):
            bundle.record_for(10000)
