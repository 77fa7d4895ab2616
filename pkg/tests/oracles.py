"""Independent numeric oracles shared by the test suite.

These deliberately re-derive expected values without going through the
library's own verification helpers, so each check has two distinct routes.
"""

import math

import numpy as np


def central_difference_grads(loss_fn, arrays, eps=1e-4):
    """Central-difference gradients of a scalar loss w.r.t. raw numpy buffers.

    `loss_fn` takes no arguments and must re-read `arrays` on every call;
    entries are perturbed in place and restored.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn()
            flat[i] = orig - eps
            f_minus = loss_fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over paired arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gaussian_mi(rho):
    """Analytic mutual information of a bivariate normal with correlation rho."""
    return -0.5 * math.log(1.0 - rho * rho)


def binomial_3sigma(p, n):
    """Three-sigma half-width (in percent) for a binomial accuracy estimate."""
    return 3.0 * math.sqrt(p * (1.0 - p) / n) * 100.0
