"""Brute-force reference implementations, deliberately sharing no code with hdbf.

Everything here loops over ordered index tuples and recomputes variances from
scratch with ``statistics.variance``.  Only usable for tiny n and p.
"""

import itertools
import statistics

import numpy as np


def _var_without(col, drop):
    return statistics.variance([v for l, v in enumerate(col) if l not in drop])


def trace_sq(x_this, x_other, which, studentized=True):
    """Literal ordered-quadruple trace estimator for group ``which``."""
    x_this = np.asarray(x_this, float)
    x_other = np.asarray(x_other, float)
    n, p = x_this.shape
    n1, n2 = (n, len(x_other)) if which == 1 else (len(x_other), n)
    gamma = n1 / n2
    full_other = [statistics.variance(x_other[:, k].tolist()) for k in range(p)]
    total = 0.0
    count = 0
    for quad in itertools.permutations(range(n), 4):
        i1, i2, i3, i4 = quad
        if studentized:
            v_this = [_var_without(x_this[:, k].tolist(), set(quad)) for k in range(p)]
            if which == 1:
                d = [v_this[k] + gamma * full_other[k] for k in range(p)]
            else:
                d = [full_other[k] + gamma * v_this[k] for k in range(p)]
        else:
            d = [1.0] * p
        a = sum((x_this[i1, k] - x_this[i2, k]) * (x_this[i3, k] - x_this[i4, k]) / d[k] for k in range(p))
        b = sum((x_this[i3, k] - x_this[i2, k]) * (x_this[i1, k] - x_this[i4, k]) / d[k] for k in range(p))
        total += a * b
        count += 1
    return total / (2 * count)


def cross_trace(x1, x2, studentized=True):
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    n1, p = x1.shape
    n2 = len(x2)
    gamma = n1 / n2
    total = 0.0
    count = 0
    for i1, i2 in itertools.permutations(range(n1), 2):
        for i3, i4 in itertools.permutations(range(n2), 2):
            acc = 0.0
            for k in range(p):
                if studentized:
                    d = _var_without(x1[:, k].tolist(), {i1, i2}) + gamma * _var_without(x2[:, k].tolist(), {i3, i4})
                else:
                    d = 1.0
                acc += (x1[i1, k] - x1[i2, k]) * (x2[i3, k] - x2[i4, k]) / d
            total += acc * acc
            count += 1
    return total / (4 * count)


def plugin(x1, x2):
    """PA-surrogate by direct loops over ordered pairs with pooled leave-out variances."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    n1, p = x1.shape
    n2 = len(x2)
    scale = 1 + n1 / n2

    def pooled(k, drop1, drop2):
        a = [v for l, v in enumerate(x1[:, k]) if l not in drop1]
        b = [v for l, v in enumerate(x2[:, k]) if l not in drop2]
        ss = sum((v - statistics.fmean(a)) ** 2 for v in a) + sum((v - statistics.fmean(b)) ** 2 for v in b)
        return scale * ss / (len(a) + len(b) - 2)

    total = 0.0
    for k in range(p):
        w1 = sum(x1[i, k] * x1[j, k] / pooled(k, {i, j}, set()) for i, j in itertools.permutations(range(n1), 2))
        w2 = sum(x2[s, k] * x2[t, k] / pooled(k, set(), {s, t}) for s, t in itertools.permutations(range(n2), 2))
        c = sum(x1[i, k] * x2[s, k] / pooled(k, {i}, {s}) for i in range(n1) for s in range(n2))
        total += w1 / (n1 * (n1 - 1)) + w2 / (n2 * (n2 - 1)) - 2 * c / (n1 * n2)
    return total


def cq_expansion(x1, x2):
    """Chen--Qin statistic as the three inner-product averages."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    n1, n2 = len(x1), len(x2)
    a = sum(float(x1[i] @ x1[j]) for i, j in itertools.permutations(range(n1), 2)) / (n1 * (n1 - 1))
    b = sum(float(x2[s] @ x2[t]) for s, t in itertools.permutations(range(n2), 2)) / (n2 * (n2 - 1))
    c = sum(float(x1[i] @ x2[s]) for i in range(n1) for s in range(n2)) / (n1 * n2)
    return a + b - 2 * c


def dense_ma_covariance(rho, p, innovation_var):
    """Sigma = R V R^T with R the p x (p+T-1) banded coefficient matrix."""
    t = len(rho)
    r = np.zeros((p, p + t - 1))
    for k in range(p):
        r[k, k : k + t] = rho
    return r @ np.diag(innovation_var) @ r.T
