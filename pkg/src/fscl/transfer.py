"""Embedding transfer by mutual-information maximization.

The student's pooled multi-scale features are scored against the frozen
teacher's features by per-scale critics; training descends the negated
Donsker-Varadhan lower bound, which raises the MI estimate over the student
encoder and the critics jointly. Marginal samples come from an in-batch
derangement, and the log of the empirical marginal expectation is computed
as log_sum_exp(scores) - ln(B).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BatchTooSmallError, ConfigError, UsageError


@dataclass
class BatchPairs:
    """Aligned (student, teacher) pairs plus a deranged re-pairing of the
    same batch for the marginal expectation."""

    joint: list
    marginal: list


def derangement(n, rng):
    """Seeded fixed-point-free permutation of range(n) (one full cycle)."""
    if n < 2:
        raise BatchTooSmallError(f"derangement: need batch size >= 2, got {n}")
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def make_marginal_pairs(batch, rng):
    """Split an aligned batch into joint pairs (untouched) and marginal pairs
    where every teacher feature is moved to a different sample."""
    n = len(batch)
    if n < 2:
        raise BatchTooSmallError(f"make_marginal_pairs: need batch size >= 2, got {n}")
    perm = derangement(n, rng)
    joint = list(batch)
    marginal = [(batch[i][0], batch[perm[i]][1]) for i in range(n)]
    return BatchPairs(joint=joint, marginal=marginal)


def dv_lower_bound(joint_scores, marginal_scores):
    """mean(joint) - [log_sum_exp(marginal) - ln(len(marginal))], as a float."""
    joint = np.asarray(joint_scores, dtype=np.float64)
    marginal = np.asarray(marginal_scores, dtype=np.float64)
    if joint.size == 0 or marginal.size == 0:
        raise UsageError("dv_lower_bound: score lists must be non-empty")
    m = marginal.max()
    log_mean_exp = m + math.log(np.exp(marginal - m).sum()) - math.log(marginal.size)
    return float(joint.mean() - log_mean_exp)


def _dv_bound_t(joint, marginal):
    # differentiable twin of dv_lower_bound over stacked score tensors
    n = marginal.data.shape[0]
    return ad.tmean(joint) - (ad.log_sum_exp(marginal) - math.log(n))


def scale_dv_bound(disc, scale, student_vecs, teacher_vecs, rng):
    """Differentiable DV bound for one scale over a batch of vector pairs."""
    pairs = make_marginal_pairs(list(zip(student_vecs, teacher_vecs)), rng)
    joint = ad.stack_scalars([disc.score(s, t, scale) for s, t in pairs.joint])
    marg = ad.stack_scalars([disc.score(s, t, scale) for s, t in pairs.marginal])
    return _dv_bound_t(joint, marg)


def bet_loss(student_outs, teacher_recs, disc, rng):
    """Transfer loss for one batch: the negated sum of per-scale DV bounds.

    Student feature maps are pooled to vectors inside; teacher features enter
    as constants, so gradients reach only the student encoder and the critics.
    """
    n = len(student_outs)
    if n != len(teacher_recs):
        raise UsageError(
            f"bet_loss: {n} student outputs vs {len(teacher_recs)} teacher records")
    if n < 2:
        raise BatchTooSmallError(f"bet_loss: need batch size >= 2, got {n}")
    n_scales = disc.num_scales
    for out in student_outs:
        if len(out.features) != n_scales:
            raise ConfigError(
                f"bet_loss: student exposes {len(out.features)} scales, "
                f"discriminator has {n_scales}")
    for rec in teacher_recs:
        if len(rec.features) != n_scales:
            raise ConfigError(
                f"bet_loss: teacher record {getattr(rec, 'sample_id', '?')} has "
                f"{len(rec.features)} scales, discriminator has {n_scales}")
    total = None
    for scale in range(n_scales):
        s_vecs = [ad.global_average_pool(out.features[scale]) for out in student_outs]
        t_vecs = [Tensor(rec.features[scale]) for rec in teacher_recs]
        dv = scale_dv_bound(disc, scale, s_vecs, t_vecs, rng)
        total = dv if total is None else total + dv
    return -total
