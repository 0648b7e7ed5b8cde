"""Independent reference routes shared by the metric tests and the acceptance suite."""

import math

import numpy as np


def direct_inception_score(p):
    """Row by row with scalar math.log."""
    n, c = p.shape
    marg = [sum(p[i][j] for i in range(n)) / n for j in range(c)]
    total = 0.0
    for i in range(n):
        total += sum(p[i][j] * (math.log(p[i][j]) - math.log(marg[j])) for j in range(c) if p[i][j] > 0)
    return math.exp(total / n)


def brute_force_pr(real, gen, k):
    """Full distance matrices, sorted rows, explicit membership."""
    def radii(x):
        d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
        return np.sort(d, axis=1)[:, k]

    def covered(q, ref, r):
        d = np.sqrt(((q[:, None, :] - ref[None, :, :]) ** 2).sum(-1))
        return np.mean([(d[i] <= r).any() for i in range(len(q))])

    return covered(gen, real, radii(real)), covered(real, gen, radii(gen))
