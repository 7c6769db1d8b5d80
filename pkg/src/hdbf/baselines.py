"""Comparison statistics: the identity-scaled (CQ) statistic and a PA-surrogate.

The PA-surrogate mimics the construction of the Park--Ayyala statistic: the
within-sample-1, within-sample-2 and cross parts each get their own
leave-out pooled variance in the denominator.  Each part is individually
unbiased for its mean term, but the three denominators have slightly different
expectations whenever the two groups' variances differ, so a large common
location leaks into the statistic.  That is the shift bias whose leading term
:func:`pa_bias` evaluates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from hdbf.errors import DegenerateCoordinateError, TooFewObservationsError
from hdbf.fstest import TwoSample, _leave_out_variances, _pairs

PLUGIN_LABEL = "PA-surrogate"


class BaselineKind(str, enum.Enum):
    cq = "cq"
    plugin = "plugin"


@dataclass(frozen=True)
class BiasInputs:
    mu: np.ndarray
    sigma1_sq: np.ndarray
    sigma2_sq: np.ndarray
    kappa: float
    n: int

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s1 = np.atleast_1d(np.asarray(self.sigma1_sq, dtype=float))
        s2 = np.atleast_1d(np.asarray(self.sigma2_sq, dtype=float))
        if not (mu.shape == s1.shape == s2.shape) or mu.ndim != 1:
            raise ValueError("mu, sigma1_sq and sigma2_sq must be vectors of equal length")
        if np.any(s1 <= 0) or np.any(s2 <= 0):
            raise ValueError("variances must be positive")
        if not 0 < self.kappa < 1:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma1_sq", s1)
        object.__setattr__(self, "sigma2_sq", s2)


def compute_cq(ts: TwoSample) -> float:
    """Unscaled two-sample U-statistic, O(n p) through column sums."""
    n1, n2 = ts.sample1.n, ts.sample2.n
    if n1 < 2 or n2 < 2:
        raise TooFewObservationsError(f"compute_cq needs n1, n2 >= 2, got {n1}, {n2}")
    x1, x2 = ts.centered()
    s1, s2 = x1.sum(axis=0), x2.sum(axis=0)
    within1 = s1 * s1 - (x1 * x1).sum(axis=0)
    within2 = s2 * s2 - (x2 * x2).sum(axis=0)
    per_k = within1 / (n1 * (n1 - 1)) + within2 / (n2 * (n2 - 1)) - 2 * s1 * s2 / (n1 * n2)
    return float(np.sum(per_k))


def _pooled(v1, v2, keep1, keep2, scale):
    # (1 + gamma) * pooled variance targets sigma1^2 + sigma2^2 when n1 == n2.
    return scale * ((keep1 - 1) * v1 + (keep2 - 1) * v2) / (keep1 + keep2 - 2)


def _check(den, part, locate):
    bad = ~(den > 0)
    if bad.any():
        idx = tuple(int(a) for a in np.argwhere(bad)[0])
        loc = locate(idx)
        raise DegenerateCoordinateError(
            f"non-positive {part} denominator {den[idx]!r} at {loc}", loc
        )


def compute_plugin(ts: TwoSample) -> float:
    """PA-surrogate statistic.

    ``sum_k [ mean_{i!=j} X1ik X1jk / d1_k(i,j) + mean_{s!=t} X2sk X2tk / d2_k(s,t)
    - 2 mean_{i,s} X1ik X2sk / d12_k(i,s) ]`` where every ``d`` is ``(1 + gamma)``
    times the pooled variance of both groups with the observations appearing in
    the numerator left out.
    """
    n1, n2 = ts.sample1.n, ts.sample2.n
    if n1 < 4 or n2 < 4:
        raise TooFewObservationsError(f"compute_plugin needs n1, n2 >= 4, got {n1}, {n2}")
    x1, x2 = ts.sample1.data, ts.sample2.data
    scale = 1.0 + ts.gamma
    full1, full2 = x1.var(axis=0, ddof=1), x2.var(axis=0, ddof=1)
    pairs1, pairs2 = _pairs(n1), _pairs(n2)
    singles1 = np.arange(n1)[:, None]
    singles2 = np.arange(n2)[:, None]

    d1 = _pooled(_leave_out_variances(x1, pairs1), full2, n1 - 2, n2, scale)
    _check(d1, "within-sample-1", lambda ix: {"k": ix[1], "i": int(pairs1[ix[0], 0]), "j": int(pairs1[ix[0], 1])})
    d2 = _pooled(full1, _leave_out_variances(x2, pairs2), n1, n2 - 2, scale)
    _check(d2, "within-sample-2", lambda ix: {"k": ix[1], "s": int(pairs2[ix[0], 0]), "t": int(pairs2[ix[0], 1])})
    v1_one = _leave_out_variances(x1, singles1)
    v2_one = _leave_out_variances(x2, singles2)
    d12 = _pooled(v1_one[:, None, :], v2_one[None, :, :], n1 - 1, n2 - 1, scale)
    _check(d12, "cross", lambda ix: {"k": ix[2], "i": ix[0], "s": ix[1]})

    # Unordered pairs; each stands for two ordered ones.
    within1 = 2 * np.sum(x1[pairs1[:, 0]] * x1[pairs1[:, 1]] / d1, axis=0) / (n1 * (n1 - 1))
    within2 = 2 * np.sum(x2[pairs2[:, 0]] * x2[pairs2[:, 1]] / d2, axis=0) / (n2 * (n2 - 1))
    cross = np.einsum("ik,sk,isk->k", x1, x2, 1.0 / d12) / (n1 * n2)
    return float(np.sum(within1 + within2 - 2 * cross))


def pa_bias(b: BiasInputs) -> float:
    """Leading-order null mean of the PA statistic under a common location ``mu``."""
    k = b.kappa
    num = 2.0 * b.mu**2 * (b.sigma1_sq - b.sigma2_sq) ** 2 / b.n**2
    den = (k * b.sigma1_sq + (1 - k) * b.sigma2_sq) ** 3
    return float(np.sum(num / den))
