import numpy as np
import pytest

from fscl.bundle import synthetic_teacher
from fscl.data import make_blobs
from fscl.errors import ProtocolError, UsageError
from fscl.models import GateNet, MineDiscriminator, StudentModel
from fscl.protocol import (
    Hyperparams,
    TrainState,
    build_sessions,
    compute_metrics,
    evaluate,
    run_session,
)

from oracles import binomial_3sigma

TABLE_ACCS = [81.64, 79.45, 77.29, 72.85, 73.54, 71.86, 71.83, 70.16,
              69.55, 68.93, 69.34]


def label_only_dataset(n_classes, train_per_class, test_per_class, seed=0):
    """Tiny 1-pixel dataset; build_sessions only consults labels."""
    return make_blobs(n_classes=n_classes, train_per_class=train_per_class,
                      test_per_class=test_per_class, height=2, width=2,
                      channels=1, seed=seed)


class TestBuildSessions:
    def test_cub_style_split(self):
        ds = label_only_dataset(200, 6, 1)
        stream = build_sessions(ds, base_count=100, n_way=10, k_shot=5,
                                n_incremental=10, seed=1)
        assert stream.num_sessions == 11
        for s in stream.sessions[1:]:
            assert len(s.labels) == 10
            assert len(s.sample_ids) == 50

    def test_cifar_style_split(self):
        ds = label_only_dataset(100, 6, 1)
        stream = build_sessions(ds, base_count=60, n_way=5, k_shot=5,
                                n_incremental=8, seed=2)
        assert stream.num_sessions == 9

    def test_base_only_stream(self):
        ds = label_only_dataset(5, 3, 1)
        stream = build_sessions(ds, base_count=5, n_way=0, k_shot=0,
                                n_incremental=0, seed=3)
        assert stream.num_sessions == 1
        assert len(stream.sessions[0].sample_ids) == 15

    def test_base_session_takes_all_training_data(self):
        ds = label_only_dataset(6, 4, 2)
        stream = build_sessions(ds, base_count=3, n_way=1, k_shot=2,
                                n_incremental=3, seed=4)
        assert len(stream.sessions[0].sample_ids) == 3 * 4

    def test_disjoint_labels_and_exact_counts_over_random_configs(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n_classes = int(rng.integers(3, 15))
            ds = label_only_dataset(n_classes, 6, 1, seed=int(rng.integers(1000)))
            base = int(rng.integers(1, n_classes))
            n_way = int(rng.integers(1, 4))
            k_shot = int(rng.integers(1, 6))
            max_inc = (n_classes - base) // n_way
            n_inc = int(rng.integers(0, max_inc + 1))
            stream = build_sessions(ds, base, n_way, k_shot, n_inc,
                                    seed=int(rng.integers(10_000)))
            label_sets = [set(s.labels) for s in stream.sessions]
            for i in range(len(label_sets)):
                for j in range(i + 1, len(label_sets)):
                    assert not (label_sets[i] & label_sets[j])
            for s in stream.sessions[1:]:
                assert len(s.labels) == n_way
                assert len(s.sample_ids) == n_way * k_shot
                for c in s.labels:
                    picked = [i for i in s.sample_ids if ds.labels[i] == c]
                    assert len(picked) == k_shot
            universe = set().union(*label_sets)
            test_labels = {int(ds.labels[i]) for i in stream.test_ids}
            assert test_labels <= universe

    def test_deterministic_given_seed(self):
        ds = label_only_dataset(12, 6, 2)
        a = build_sessions(ds, 4, 2, 3, 4, seed=42)
        b = build_sessions(ds, 4, 2, 3, 4, seed=42)
        for sa, sb in zip(a.sessions, b.sessions):
            assert sa.labels == sb.labels
            assert np.array_equal(sa.sample_ids, sb.sample_ids)

    def test_insufficient_classes_reports_counts(self):
        ds = label_only_dataset(5, 3, 1)
        with pytest.raises(ProtocolError, match="5"):
            build_sessions(ds, base_count=3, n_way=2, k_shot=1,
                           n_incremental=2, seed=0)

    def test_insufficient_samples_reports_counts(self):
        ds = label_only_dataset(6, 2, 1)
        with pytest.raises(ProtocolError, match="needs 3"):
            build_sessions(ds, base_count=2, n_way=2, k_shot=3,
                           n_incremental=2, seed=0)


def quick_setup(seed=0, quality=1.0, n_classes=4, enable_bet=True):
    ds = make_blobs(n_classes=n_classes, train_per_class=6, test_per_class=4,
                    height=8, width=8, channels=1, noise=0.3, seed=seed)
    bundle = synthetic_teacher(ds, quality, scale_dims=[6, 6], embed_dim=5,
                               seed=seed + 1)
    student = StudentModel(height=8, width=8, in_channels=1, channels=[4, 6],
                           embed_dim=8, rng=np.random.default_rng(seed + 2))
    disc = MineDiscriminator([(4, 6), (6, 6)], d_common=6, conv_channels=4,
                             rng=np.random.default_rng(seed + 3)) if enable_bet else None
    alpha = GateNet(8, 5, hidden=[8, 6], rng=np.random.default_rng(seed + 4))
    state = TrainState(student=student, disc=disc, gate_net=alpha)
    return ds, bundle, state


class TestRunSession:
    def test_zero_epochs_leaves_state_bitwise_unchanged(self):
        ds, bundle, state = quick_setup()
        stream = build_sessions(ds, 2, 1, 2, 1, seed=0)
        state.student.expand_classifier(stream.sessions[0].labels)
        before = {p.name: p.data.copy() for p in state.student.parameters()}
        hp = Hyperparams(epochs=0, batch_size=4, lr=1e-3)
        run_session(state, ds, stream.sessions[0], bundle, hp, t=1, seed=0)
        for p in state.student.parameters():
            assert p.data.tobytes() == before[p.name].tobytes()
        assert state.train_log == []

    def test_two_runs_same_seed_bitwise_identical(self):
        def full_run():
            ds, bundle, state = quick_setup(seed=9)
            stream = build_sessions(ds, 2, 1, 2, 2, seed=9)
            hp = Hyperparams(epochs=2, batch_size=3, lr=1e-3)
            for t, session in enumerate(stream.sessions, start=1):
                state.student.expand_classifier(session.labels)
                run_session(state, ds, session, bundle, hp, t, seed=9)
            return np.concatenate([p.data.reshape(-1) for p in state.student.parameters()])

        a, b = full_run(), full_run()
        assert a.tobytes() == b.tobytes()

    def test_loss_trends_down_on_separable_data(self):
        ds, bundle, state = quick_setup(seed=3, quality=0.9)
        stream = build_sessions(ds, 4, 0, 0, 0, seed=3)
        state.student.expand_classifier(stream.sessions[0].labels)
        hp = Hyperparams(epochs=10, batch_size=6, lr=2e-3)
        run_session(state, ds, stream.sessions[0], bundle, hp, t=1, seed=3)
        losses = [e["total"] for e in state.train_log][:50]
        steps = np.arange(len(losses))
        slope = np.polyfit(steps, losses, 1)[0]
        assert slope < 0

    def test_step_count_matches_contract(self):
        ds, bundle, state = quick_setup(seed=4)
        stream = build_sessions(ds, 3, 0, 0, 0, seed=4)
        state.student.expand_classifier(stream.sessions[0].labels)
        n = len(stream.sessions[0].sample_ids)  # 18
        hp = Hyperparams(epochs=3, batch_size=4, lr=1e-3)
        run_session(state, ds, stream.sessions[0], bundle, hp, t=1, seed=4)
        import math
        assert len(state.train_log) == 3 * math.ceil(n / 4)

    def test_bet_term_zero_when_disabled(self):
        ds, bundle, state = quick_setup(seed=5, enable_bet=False)
        stream = build_sessions(ds, 3, 0, 0, 0, seed=5)
        state.student.expand_classifier(stream.sessions[0].labels)
        hp = Hyperparams(epochs=2, batch_size=4, lr=1e-3, enable_bet=False)
        run_session(state, ds, stream.sessions[0], bundle, hp, t=1, seed=5)
        assert all(e["bet"] == 0.0 for e in state.train_log)
        assert all(e["total"] == e["ce"] for e in state.train_log)


class TestEvaluate:
    def test_oracle_teacher_with_alpha_zero_is_perfect(self):
        ds, bundle, state = quick_setup(seed=6, quality=1.0)
        stream = build_sessions(ds, 4, 0, 0, 0, seed=6)
        state.student.expand_classifier(stream.sessions[0].labels)
        acc, confusion = evaluate(state, ds, stream.test_ids, bundle,
                                  stream.seen_labels(1), alpha_override=0.0)
        assert acc == 100.0
        assert int(np.trace(confusion)) == len(stream.test_ids)

    def test_uniform_random_predictions_are_chance_level(self):
        n_classes = 5
        ds = make_blobs(n_classes=n_classes, train_per_class=2, test_per_class=60,
                        height=8, width=8, channels=1, seed=7)
        bundle = synthetic_teacher(ds, 0.0, scale_dims=[4], embed_dim=4, seed=8)
        student = StudentModel(height=8, width=8, in_channels=1, channels=[4],
                               embed_dim=4, rng=np.random.default_rng(9))
        student.expand_classifier(list(range(n_classes)))
        state = TrainState(student=student)
        stream = build_sessions(ds, n_classes, 0, 0, 0, seed=10)
        acc, _ = evaluate(state, ds, stream.test_ids, bundle,
                          stream.seen_labels(1), alpha_override=0.0)
        chance = 100.0 / n_classes
        assert abs(acc - chance) <= binomial_3sigma(1 / n_classes, len(stream.test_ids))

    def test_confusion_trace_equals_correct_count(self):
        ds, bundle, state = quick_setup(seed=11, quality=0.7)
        stream = build_sessions(ds, 4, 0, 0, 0, seed=11)
        state.student.expand_classifier(stream.sessions[0].labels)
        acc, confusion = evaluate(state, ds, stream.test_ids, bundle,
                                  stream.seen_labels(1), alpha_override=0.0)
        total = confusion.sum()
        assert total == len(stream.test_ids)
        assert acc == pytest.approx(100.0 * np.trace(confusion) / total)

    def test_row_sums_equal_per_class_test_counts(self):
        ds, bundle, state = quick_setup(seed=12)
        stream = build_sessions(ds, 4, 0, 0, 0, seed=12)
        state.student.expand_classifier(stream.sessions[0].labels)
        _, confusion = evaluate(state, ds, stream.test_ids, bundle,
                                stream.seen_labels(1), alpha_override=1.0)
        for i, label in enumerate(stream.seen_labels(1)):
            assert confusion[i].sum() == len(ds.ids(split=1, label=label))

    def test_empty_eligible_set_rejected(self):
        ds, bundle, state = quick_setup(seed=13)
        state.student.expand_classifier([0])
        with pytest.raises(ProtocolError):
            evaluate(state, ds, np.asarray([], dtype=np.int64), bundle, [0])


class TestComputeMetrics:
    def test_published_row_arithmetic(self):
        report = compute_metrics(TABLE_ACCS)
        assert round(report.avg, 2) == 73.31
        assert round(report.kr, 2) == 84.93

    def test_delta_against_reference(self):
        report = compute_metrics(TABLE_ACCS, reference_final=63.81)
        assert round(report.delta_final, 2) == 5.53

    def test_single_session(self):
        report = compute_metrics([88.5])
        assert report.avg == 88.5
        assert report.kr == 100.0
        assert report.delta_final is None

    def test_invariants(self):
        report = compute_metrics(TABLE_ACCS)
        assert report.avg == pytest.approx(sum(TABLE_ACCS) / len(TABLE_ACCS), abs=1e-9)
        assert report.kr == pytest.approx(100.0 * TABLE_ACCS[-1] / TABLE_ACCS[0], abs=1e-9)

    def test_zero_base_accuracy_rejected(self):
        with pytest.raises(UsageError, match="retention"):
            compute_metrics([0.0, 10.0])

    def test_empty_and_out_of_range_rejected(self):
        with pytest.raises(UsageError):
            compute_metrics([])
        with pytest.raises(UsageError):
            compute_metrics([50.0, 101.0])
