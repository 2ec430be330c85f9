"""Independent reference computations shared by the test modules."""

import math
from fractions import Fraction

import numpy as np

GRID = np.round(np.arange(0.5, 4.0 + 1e-9, 0.01), 2)


def weibull_grid_loglik(samples, shapes=GRID, scales=GRID):
    """Weibull log-likelihood on a (shape, scale) grid, from sufficient statistics."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    sum_log = np.log(x).sum()
    out = np.empty((len(shapes), len(scales)))
    for i, k in enumerate(shapes):
        s_k = np.sum(x**k)
        out[i] = n * math.log(k) - n * k * np.log(scales) + (k - 1) * sum_log - s_k / scales**k
    return out


def sample_weibull(rng, shape, scale, n):
    # inverse-CDF sampling, independent of numpy's own weibull generator
    u = rng.random(n)
    return scale * (-np.log1p(-u)) ** (1.0 / shape)


def rejection_line_oracle(distances, theta):
    """Sort, drop ceil(theta * n) largest (exact rational arithmetic), take the max left."""
    d = sorted(float(v) for v in distances)
    n = len(d)
    drop = min(n, math.ceil(Fraction(str(theta)) * n))
    return d[n - drop - 1] if drop < n else d[0]


def count_outcomes(truth, predicted, learned):
    """Per-instance tally of correct-known, correct-unknown, TP, FP, FN."""
    n_known = n_unknown = tp = fp = fn = 0
    for gt, pred in zip(truth, predicted):
        is_known = gt in learned
        said_unknown = pred is None
        if is_known and not said_unknown and pred == gt:
            n_known += 1
        if not is_known and said_unknown:
            n_unknown += 1
        if said_unknown and not is_known:
            tp += 1
        if said_unknown and is_known:
            fp += 1
        if not said_unknown and not is_known:
            fn += 1
    return n_known, n_unknown, tp, fp, fn
