"""Instance-level decision fusion: a per-sample gate alpha mixes the student's
class probabilities with the frozen teacher's, and the fused distribution is
trained with cross-entropy so gradients reach the student and the gate net
(the teacher side stays constant).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, UsageError, VocabularyError

LOG_CLAMP = 1e-12


@dataclass
class DecisionOutput:
    """Gate value plus the three distributions over the seen classes."""

    alpha: Tensor
    p_student: Tensor
    p_teacher: Tensor
    p: Tensor

    @property
    def alpha_value(self):
        return float(self.alpha.data)


def fuse(alpha, p_student, p_teacher):
    """Convex combination alpha * p_student + (1 - alpha) * p_teacher.

    `alpha` may be a python float or a scalar tensor (differentiable path).
    """
    if isinstance(alpha, Tensor):
        if alpha.data.shape != ():
            raise UsageError(f"fuse: alpha must be scalar, got shape {alpha.data.shape}")
        alpha_value = float(alpha.data)
        alpha_t = alpha
    else:
        alpha_value = float(alpha)
        alpha_t = Tensor(np.asarray(alpha_value))
    if not 0.0 <= alpha_value <= 1.0:
        raise UsageError(f"fuse: alpha must be in [0, 1], got {alpha_value}")
    if p_student.data.shape != p_teacher.data.shape or p_student.data.ndim != 1:
        raise DimensionError(
            f"fuse: shapes {p_student.data.shape} vs {p_teacher.data.shape}")
    return ad.add(ad.mul(alpha_t, p_student), ad.mul(1.0 - alpha_t, p_teacher))


def decision_loss(p, y):
    """Cross-entropy -ln p[y] on the fused distribution, floor-clamped before
    the log."""
    if p.data.ndim != 1:
        raise DimensionError(f"decision_loss: expected 1-D distribution, got {p.data.shape}")
    if not 0 <= y < p.data.shape[0]:
        raise UsageError(f"decision_loss: class index {y} out of range for {p.data.shape[0]}")
    return -ad.log(ad.clamp(ad.pick(p, y), lo=LOG_CLAMP))


def decide(student_out, teacher_rec, gate_net, seen_classes, alpha_override=None):
    """Fused decision for one sample.

    The teacher's full-vocabulary scores are restricted to `seen_classes`
    (same order as the student's classifier rows) and softmaxed into p_teacher;
    `alpha_override` bypasses the gate net (0.0 = teacher only, 1.0 = student
    only), used by evaluation modes and ablations.
    """
    vocab = np.asarray(teacher_rec.vocab_scores, dtype=np.float64)
    missing = [c for c in seen_classes if not 0 <= c < vocab.shape[0]]
    if missing:
        raise VocabularyError(
            f"decide: class {missing[0]} absent from teacher vocabulary "
            f"(size {vocab.shape[0]})")
    if student_out.logits.data.shape[0] != len(seen_classes):
        raise DimensionError(
            f"decide: {student_out.logits.data.shape[0]} student logits vs "
            f"{len(seen_classes)} seen classes")
    p_teacher = ad.stable_softmax(Tensor(vocab[list(seen_classes)]))
    p_student = ad.stable_softmax(student_out.logits)
    if alpha_override is not None:
        alpha = Tensor(np.asarray(float(alpha_override)))
    else:
        alpha = gate_net.forward(student_out.embedding,
                                  Tensor(np.asarray(teacher_rec.embedding, dtype=np.float64)))
    p = fuse(alpha, p_student, p_teacher)
    return DecisionOutput(alpha=alpha, p_student=p_student, p_teacher=p_teacher, p=p)
