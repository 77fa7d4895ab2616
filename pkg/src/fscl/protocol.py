"""Session protocol: disjoint-label session construction, the per-session
training loop on the combined objective, seen-class evaluation, and the
summary metrics (per-session accuracy, average, retention rate, final delta).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, adam_step, backward
from .decision import decide, decision_loss
from .errors import ProtocolError, UsageError
from .transfer import bet_loss

# rng stream tags so every consumer draws from its own deterministic stream
STREAM_SPLIT = 0x51
STREAM_TRAIN = 0x52


@dataclass
class Session:
    labels: list          # classes introduced in this session, registration order
    sample_ids: np.ndarray


@dataclass
class SessionStream:
    sessions: list
    test_ids: np.ndarray
    base_count: int
    n_way: int
    k_shot: int

    @property
    def num_sessions(self):
        return len(self.sessions)

    def seen_labels(self, t):
        """Union of session labels through 1-based session t, in registration order."""
        seen = []
        for s in self.sessions[:t]:
            seen.extend(s.labels)
        return seen


@dataclass
class MetricsReport:
    acc: list
    avg: float
    kr: float
    delta_final: float = None
    confusion: list = field(default_factory=list)
    seen: list = field(default_factory=list)


@dataclass
class TrainState:
    student: object
    disc: object = None
    gate_net: object = None
    train_log: list = field(default_factory=list)


def build_sessions(dataset, base_count, n_way, k_shot, n_incremental, seed):
    """Deterministic session split: seeded class shuffle, prefix-take for the
    base session, then n_way chunks with exactly k_shot training samples each.

    The base session takes every training sample of its classes; the test
    pool keeps only classes that appear in some session.
    """
    if base_count < 1:
        raise ProtocolError(f"build_sessions: base_count must be >= 1, got {base_count}")
    if n_incremental > 0 and (n_way < 1 or k_shot < 1):
        raise ProtocolError(
            f"build_sessions: need n_way >= 1 and k_shot >= 1, got ({n_way}, {k_shot})")
    needed = base_count + n_way * n_incremental
    if needed > dataset.n_classes:
        raise ProtocolError(
            f"build_sessions: split needs {needed} classes "
            f"(base {base_count} + {n_way}x{n_incremental}), dataset has {dataset.n_classes}")
    rng = np.random.default_rng([int(seed), STREAM_SPLIT])
    order = rng.permutation(dataset.n_classes)
    base_labels = [int(c) for c in order[:base_count]]
    base_ids = np.sort(np.concatenate(
        [dataset.ids(split=0, label=c) for c in base_labels]))
    sessions = [Session(labels=base_labels, sample_ids=base_ids)]
    cursor = base_count
    for _ in range(n_incremental):
        labels = [int(c) for c in order[cursor:cursor + n_way]]
        cursor += n_way
        picked = []
        for c in labels:
            pool = dataset.ids(split=0, label=c)
            if len(pool) < k_shot:
                raise ProtocolError(
                    f"build_sessions: class {c} has {len(pool)} training samples, "
                    f"needs {k_shot}")
            picked.append(np.sort(rng.permutation(pool)[:k_shot]))
        sessions.append(Session(labels=labels, sample_ids=np.sort(np.concatenate(picked))))
    universe = set()
    for s in sessions:
        universe.update(s.labels)
    test_ids = np.asarray(
        [int(i) for i in dataset.ids(split=1) if int(dataset.labels[i]) in universe],
        dtype=np.int64)
    return SessionStream(sessions=sessions, test_ids=test_ids,
                         base_count=base_count, n_way=n_way, k_shot=k_shot)


@dataclass
class Hyperparams:
    epochs: int
    batch_size: int
    lr: float
    lambda_bet: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    enable_bet: bool = True
    enable_iad: bool = True


def _student_only_loss(out, y_row):
    return decision_loss(ad.stable_softmax(out.logits), y_row)


def run_session(state, dataset, session, bundle, hp, t, seed):
    """Train in place on one session's data; the classifier must already be
    expanded for this session's labels. Deterministic given `seed` and t."""
    student = state.student
    seen = student.classes
    if bundle is not None:
        for sid in session.sample_ids:
            bundle.record_for(int(sid))  # raises naming the sample
    rng = np.random.default_rng([int(seed), STREAM_TRAIN, int(t)])
    step = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(session.sample_ids)
        for start in range(0, len(order), hp.batch_size):
            batch = [int(s) for s in order[start:start + hp.batch_size]]
            outs, recs, ce_terms = [], [], []
            for sid in batch:
                x = Tensor(dataset.image_tensor_data(sid))
                out = student.forward(x)
                y_row = student.row_of(int(dataset.labels[sid]))
                if bundle is None:
                    ce_terms.append(_student_only_loss(out, y_row))
                else:
                    rec = bundle.record_for(sid)
                    dec = decide(out, rec, state.gate_net, seen,
                                 alpha_override=None if hp.enable_iad else 1.0)
                    ce_terms.append(decision_loss(dec.p, y_row))
                    recs.append(rec)
                outs.append(out)
            ce = ce_terms[0]
            for term in ce_terms[1:]:
                ce = ce + term
            ce = ce / len(batch)
            params = list(student.parameters())
            bet = None
            if hp.enable_bet and len(batch) >= 2:
                bet = bet_loss(outs, recs, state.disc, rng)
                params += state.disc.parameters()
            if hp.enable_iad and bundle is not None:
                params += state.gate_net.parameters()
            total = ce if bet is None else ce + hp.lambda_bet * bet
            backward(total)
            adam_step(params, lr=hp.lr, beta1=hp.beta1, beta2=hp.beta2,
                      eps=hp.adam_eps)
            state.train_log.append({
                "session": t, "epoch": epoch, "step": step,
                "ce": ce.item(),
                "bet": 0.0 if bet is None else bet.item(),
                "total": total.item(),
            })
            step += 1
    return state


def evaluate(state, dataset, test_ids, bundle, seen_labels, alpha_override=None):
    """Accuracy (percent) and confusion matrix over test samples of seen
    classes. Rows/columns follow `seen_labels` order; samples are processed
    in ascending id order."""
    seen_set = set(seen_labels)
    row = {c: i for i, c in enumerate(seen_labels)}
    eligible = sorted(int(i) for i in test_ids if int(dataset.labels[i]) in seen_set)
    if not eligible:
        raise ProtocolError("evaluate: no test samples for the seen classes")
    n = len(seen_labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    student = state.student
    for sid in eligible:
        out = student.forward(Tensor(dataset.image_tensor_data(sid)))
        if bundle is None:
            p = ad.stable_softmax(out.logits).data
        else:
            rec = bundle.record_for(sid)
            override = alpha_override
            if override is None and state.gate_net is None:
                override = 1.0
            dec = decide(out, rec, state.gate_net, seen_labels,
                         alpha_override=override)
            p = dec.p.data
        pred = int(np.argmax(p))
        confusion[row[int(dataset.labels[sid])], pred] += 1
    correct = int(np.trace(confusion))
    acc = 100.0 * correct / len(eligible)
    return acc, confusion


def compute_metrics(acc, reference_final=None):
    """Summary metrics from per-session accuracies (percent)."""
    acc = [float(a) for a in acc]
    if not acc:
        raise UsageError("compute_metrics: empty accuracy list")
    for a in acc:
        if not 0.0 <= a <= 100.0:
            raise UsageError(f"compute_metrics: accuracy {a} outside [0, 100]")
    if acc[0] == 0.0:
        raise UsageError("compute_metrics: retention rate undefined, Acc_1 is 0")
    avg = float(np.mean(acc))
    kr = 100.0 * acc[-1] / acc[0]
    delta = None if reference_final is None else acc[-1] - float(reference_final)
    return MetricsReport(acc=acc, avg=avg, kr=kr, delta_final=delta)
