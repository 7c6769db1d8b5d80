"""Scale- and shift-invariant two-sample location test for high-dimensional data.

The statistic is a two-sample U-statistic whose per-coordinate kernel

    (X1[i,k] - X2[s,k]) * (X1[j,k] - X2[t,k])

is divided by ``var1_k(-i,-j) + gamma * var2_k(-s,-t)``, the sum of the
leave-two-out sample variances of coordinate ``k``.  Because the excluded
observations are exactly the ones used in the numerator, numerator and
denominator are independent and the statistic has mean exactly zero under
equal locations.  Studentization uses three U-statistic trace estimators built
from leave-four-out (or leave-two-out) variances.

Two routes compute the statistic:

* :func:`compute_tn` evaluates the sum over unordered pairs with all
  denominators held in an array, O(p * n1^2 * n2^2) flops but vectorized;
* :func:`compute_tn_oracle` is the literal quadruple loop with every variance
  recomputed from scratch, for cross-checking on small inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.stats import norm

from hdbf.errors import (
    DegenerateCoordinateError,
    NonPositiveVarianceError,
    TooFewObservationsError,
)

ScalingMode = Literal["studentized", "identity"]
SCALING_MODES = ("studentized", "identity")


@dataclass(frozen=True, eq=False)
class Sample:
    """One group of observations, rows are observations and columns coordinates."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"sample must be a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"sample must have n >= 1 and p >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sample contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class TwoSample:
    sample1: Sample
    sample2: Sample

    def __post_init__(self):
        if self.sample1.p != self.sample2.p:
            raise ValueError(
                f"samples differ in dimension: {self.sample1.p} vs {self.sample2.p}"
            )

    @classmethod
    def from_arrays(cls, x1, x2) -> "TwoSample":
        return cls(Sample(x1), Sample(x2))

    @property
    def gamma(self) -> float:
        return self.sample1.n / self.sample2.n

    @property
    def p(self) -> int:
        return self.sample1.p

    def centered(self) -> tuple[np.ndarray, np.ndarray]:
        """Both samples minus their pooled mean.

        Subtracting one common vector leaves every quantity in this module
        unchanged and removes the cancellation that large common shifts cause.
        """
        ref = np.concatenate([self.sample1.data, self.sample2.data]).mean(axis=0)
        return self.sample1.data - ref, self.sample2.data - ref


@dataclass(frozen=True, eq=False)
class MomentCache:
    col_sum: np.ndarray
    col_sumsq: np.ndarray
    n: int


@dataclass(frozen=True)
class TraceEstimates:
    tr1: float
    tr2: float
    tr12: float
    scaling_mode: str = "studentized"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    variance_hat: float
    z: float
    p_value: float
    reject: bool
    alpha: float

    __test__ = False  # keep pytest from collecting this as a test class


def build_moment_cache(sample: Sample) -> MomentCache:
    x = sample.data
    return MomentCache(col_sum=x.sum(axis=0), col_sumsq=(x * x).sum(axis=0), n=sample.n)


def loo_variance(cache: MomentCache, sample: Sample, k: int, excluded: Sequence[int]) -> float:
    """Unbiased variance of coordinate ``k`` with the ``excluded`` rows removed.

    Only the excluded values are touched; the rest comes from ``cache``.
    """
    excluded = list(excluded)
    if len(set(excluded)) != len(excluded):
        raise ValueError(f"excluded indices must be distinct, got {excluded}")
    m = cache.n - len(excluded)
    if m < 2:
        raise TooFewObservationsError(
            f"leave-{len(excluded)}-out variance needs at least 2 retained values, n={cache.n}"
        )
    s = float(cache.col_sum[k])
    ss = float(cache.col_sumsq[k])
    for idx in excluded:
        v = float(sample.data[idx, k])
        s -= v
        ss -= v * v
    return (ss - s * s / m) / (m - 1)


def term_denominator(ts: TwoSample, k: int, i: int, j: int, s: int, t: int) -> float:
    """Denominator of the (k, i, j, s, t) term of T_n, from moment caches."""
    v1 = loo_variance(build_moment_cache(ts.sample1), ts.sample1, k, (i, j))
    v2 = loo_variance(build_moment_cache(ts.sample2), ts.sample2, k, (s, t))
    return v1 + ts.gamma * v2


def _pairs(n: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), 2)), dtype=np.intp).reshape(-1, 2)


def _quads(n: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), 4)), dtype=np.intp).reshape(-1, 4)


def _leave_out_variances(x: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """Variances of every column of ``x`` after dropping each row-set in ``excluded``.

    ``excluded`` has shape (m, r); the result has shape (m, p).
    """
    n, r = x.shape[0], excluded.shape[1]
    keep = n - r
    xc = x - x.mean(axis=0)
    sq = xc * xc
    s = np.broadcast_to(xc.sum(axis=0), (len(excluded), x.shape[1])).copy()
    q = np.broadcast_to(sq.sum(axis=0), s.shape).copy()
    for c in range(r):
        s -= xc[excluded[:, c]]
        q -= sq[excluded[:, c]]
    return (q - s * s / keep) / (keep - 1)


def _require_n(n: int, minimum: int, what: str):
    if n < minimum:
        raise TooFewObservationsError(f"{what} needs at least {minimum} observations, got {n}")


def _pair_denominators(ts: TwoSample, pairs1: np.ndarray, pairs2: np.ndarray) -> np.ndarray:
    """Leave-two-out denominators, shape (n1 choose 2, n2 choose 2, p)."""
    v1 = _leave_out_variances(ts.sample1.data, pairs1)
    v2 = _leave_out_variances(ts.sample2.data, pairs2)
    den = v1[:, None, :] + ts.gamma * v2[None, :, :]
    bad = ~(den > 0)
    if bad.any():
        u, v, k = (int(a) for a in np.argwhere(bad)[0])
        i, j = (int(a) for a in pairs1[u])
        s, t = (int(a) for a in pairs2[v])
        raise DegenerateCoordinateError(
            f"non-positive denominator {den[u, v, k]!r} at coordinate k={k}, "
            f"sample-1 pair ({i}, {j}), sample-2 pair ({s}, {t})",
            {"k": k, "i": i, "j": j, "s": s, "t": t},
        )
    return den


def _pair_weights(ts: TwoSample, scaling: str):
    pairs1, pairs2 = _pairs(ts.sample1.n), _pairs(ts.sample2.n)
    if scaling == "identity":
        return pairs1, pairs2, None
    den = _pair_denominators(ts, pairs1, pairs2)
    return pairs1, pairs2, np.divide(1.0, den, out=den)


def _tn_from_weights(x1, x2, pairs1, pairs2, w) -> float:
    # Over the four orderings of unordered pairs {i,j}, {s,t} the kernel sums to
    # 4 a_i a_j - 2 (a_i + a_j)(b_s + b_t) + 4 b_s b_t.
    n1, n2 = x1.shape[0], x2.shape[0]
    a_i, a_j = x1[pairs1[:, 0]], x1[pairs1[:, 1]]
    b_s, b_t = x2[pairs2[:, 0]], x2[pairs2[:, 1]]
    prod1, sum1 = a_i * a_j, a_i + a_j
    prod2, sum2 = b_s * b_t, b_s + b_t
    if w is None:
        u, v = len(pairs1), len(pairs2)
        per_k = 4 * v * prod1.sum(axis=0) - 2 * sum1.sum(axis=0) * sum2.sum(axis=0) + 4 * u * prod2.sum(axis=0)
    else:
        row = w.sum(axis=1)
        col = w.sum(axis=0)
        mixed = np.einsum("uvk,vk->uk", w, sum2)
        per_k = 4 * (prod1 * row).sum(axis=0) - 2 * (sum1 * mixed).sum(axis=0) + 4 * (prod2 * col).sum(axis=0)
    return float(np.sum(per_k)) / (n1 * (n1 - 1) * n2 * (n2 - 1))


def _cross_from_weights(x1, x2, pairs1, pairs2, w) -> float:
    d1 = x1[pairs1[:, 0]] - x1[pairs1[:, 1]]
    d2 = x2[pairs2[:, 0]] - x2[pairs2[:, 1]]
    if w is None:
        inner = np.einsum("uk,vk->uv", d1, d2)
    else:
        inner = np.einsum("uk,vk,uvk->uv", d1, d2, w)
    # Squared kernel is sign-free, so each unordered pair pair stands for 4 ordered ones.
    return float(np.sum(inner * inner)) / (4 * len(pairs1) * len(pairs2))


def compute_tn(ts: TwoSample, scaling: ScalingMode = "studentized") -> float:
    """The FS statistic T_n.

    With ``scaling="identity"`` every denominator is 1, which reduces the
    statistic to the unscaled (Chen--Qin type) U-statistic.
    """
    _check_mode(scaling)
    need = 4 if scaling == "studentized" else 2
    _require_n(ts.sample1.n, need, "compute_tn (sample 1)")
    _require_n(ts.sample2.n, need, "compute_tn (sample 2)")
    pairs1, pairs2, w = _pair_weights(ts, scaling)
    x1, x2 = ts.centered()
    return _tn_from_weights(x1, x2, pairs1, pairs2, w)


def _naive_var(values: list[float]) -> float:
    m = len(values)
    mean = sum(values) / m
    return sum((v - mean) ** 2 for v in values) / (m - 1)


def compute_tn_oracle(ts: TwoSample, scaling: ScalingMode = "studentized") -> float:
    """Literal quadruple-loop evaluation of T_n; meant for n <= 10, p <= 20."""
    _check_mode(scaling)
    need = 4 if scaling == "studentized" else 2
    _require_n(ts.sample1.n, need, "compute_tn_oracle (sample 1)")
    _require_n(ts.sample2.n, need, "compute_tn_oracle (sample 2)")
    x1 = ts.sample1.data.T.tolist()
    x2 = ts.sample2.data.T.tolist()
    n1, n2, gamma = ts.sample1.n, ts.sample2.n, ts.gamma
    total = 0.0
    for k in range(ts.p):
        a, b = x1[k], x2[k]
        for i in range(n1):
            for j in range(n1):
                if i == j:
                    continue
                for s in range(n2):
                    for t in range(n2):
                        if s == t:
                            continue
                        if scaling == "identity":
                            den = 1.0
                        else:
                            v1 = _naive_var([a[l] for l in range(n1) if l != i and l != j])
                            v2 = _naive_var([b[l] for l in range(n2) if l != s and l != t])
                            den = v1 + gamma * v2
                            if not den > 0 or not math.isfinite(den):
                                raise DegenerateCoordinateError(
                                    f"non-positive denominator {den!r} at coordinate k={k}, "
                                    f"sample-1 pair ({i}, {j}), sample-2 pair ({s}, {t})",
                                    {"k": k, "i": i, "j": j, "s": s, "t": t},
                                )
                        total += (a[i] - b[s]) * (a[j] - b[t]) / den
    return total / (n1 * (n1 - 1) * n2 * (n2 - 1))


# Ordered quadruples are sums over the 24 orderings of each 4-subset.
_PERMS = np.array(list(itertools.permutations(range(4))), dtype=np.intp)
_OFFDIAG = list(itertools.combinations(range(4), 2))


def trace_sq_hat(ts: TwoSample, which: int, scaling: ScalingMode = "studentized") -> float:
    """Estimate tr((L S L)^2) for group ``which`` (tr(S^2) in identity mode).

    Studentized mode divides coordinate k by the leave-four-out variance of the
    group plus gamma times (or, for group 2, added to) the full-sample variance of
    the other group.
    """
    _check_mode(scaling)
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which!r}")
    this = ts.sample1 if which == 1 else ts.sample2
    other = ts.sample2 if which == 1 else ts.sample1
    n = this.n
    if scaling == "studentized":
        _require_n(n, 6, f"trace_sq_hat (sample {which})")
        _require_n(other.n, 2, f"trace_sq_hat (other sample of {which})")
    else:
        _require_n(n, 4, f"trace_sq_hat (sample {which})")

    quads = _quads(n)
    x = this.data - this.data.mean(axis=0)
    if scaling == "studentized":
        v_this = _leave_out_variances(this.data, quads)
        v_other = other.data.var(axis=0, ddof=1)
        if which == 1:
            den = v_this + ts.gamma * v_other
        else:
            den = v_other + ts.gamma * v_this
        bad = ~(den > 0)
        if bad.any():
            q, k = (int(a) for a in np.argwhere(bad)[0])
            raise DegenerateCoordinateError(
                f"non-positive denominator {den[q, k]!r} at coordinate k={k}, "
                f"sample-{which} quadruple {tuple(int(a) for a in quads[q])}",
                {"k": k, "quadruple": tuple(int(a) for a in quads[q])},
            )
        w = 1.0 / den
    else:
        w = np.ones((len(quads), x.shape[1]))

    rows = [x[quads[:, c]] for c in range(4)]
    gram = np.zeros((len(quads), 4, 4))
    for a, b in _OFFDIAG:
        g = np.einsum("mk,mk->m", w * rows[a], rows[b])
        gram[:, a, b] = g
        gram[:, b, a] = g

    total = 0.0
    for i1, i2, i3, i4 in _PERMS:
        first = gram[:, i1, i3] - gram[:, i1, i4] - gram[:, i2, i3] + gram[:, i2, i4]
        second = gram[:, i3, i1] - gram[:, i3, i4] - gram[:, i2, i1] + gram[:, i2, i4]
        total += float(np.sum(first * second))
    n_ordered = n * (n - 1) * (n - 2) * (n - 3)
    return total / (2 * n_ordered)


def cross_trace_hat(ts: TwoSample, scaling: ScalingMode = "studentized") -> float:
    """Estimate tr(L S1 L^2 S2 L) (tr(S1 S2) in identity mode)."""
    _check_mode(scaling)
    need = 4 if scaling == "studentized" else 2
    _require_n(ts.sample1.n, need, "cross_trace_hat (sample 1)")
    _require_n(ts.sample2.n, need, "cross_trace_hat (sample 2)")
    pairs1, pairs2, w = _pair_weights(ts, scaling)
    return _cross_from_weights(ts.sample1.data, ts.sample2.data, pairs1, pairs2, w)


def variance_hat(tr: TraceEstimates, n1: int, n2: int) -> float:
    if n1 < 2 or n2 < 2:
        raise TooFewObservationsError(f"variance_hat needs n1, n2 >= 2, got {n1}, {n2}")
    return 2 * tr.tr1 / (n1 * (n1 - 1)) + 2 * tr.tr2 / (n2 * (n2 - 1)) + 4 * tr.tr12 / (n1 * n2)


def estimate_traces(ts: TwoSample, scaling: ScalingMode = "studentized") -> TraceEstimates:
    return TraceEstimates(
        tr1=trace_sq_hat(ts, 1, scaling),
        tr2=trace_sq_hat(ts, 2, scaling),
        tr12=cross_trace_hat(ts, scaling),
        scaling_mode=scaling,
    )


def fs_components(ts: TwoSample) -> tuple[float, TraceEstimates]:
    """T_n and its studentized trace estimates, sharing one denominator array."""
    for which, smp in ((1, ts.sample1), (2, ts.sample2)):
        _require_n(smp.n, 6, f"FS test (sample {which})")
    pairs1, pairs2, w = _pair_weights(ts, "studentized")
    x1, x2 = ts.centered()
    tn = _tn_from_weights(x1, x2, pairs1, pairs2, w)
    tr12 = _cross_from_weights(x1, x2, pairs1, pairs2, w)
    del w
    traces = TraceEstimates(
        tr1=trace_sq_hat(ts, 1), tr2=trace_sq_hat(ts, 2), tr12=tr12, scaling_mode="studentized"
    )
    return tn, traces


def upper_quantile(alpha: float) -> float:
    """z_alpha, the upper-alpha quantile of N(0, 1)."""
    return float(norm.isf(alpha))


def decide(statistic: float, var_hat: float, alpha: float) -> TestResult:
    """One-sided normal-approximation decision for a statistic and its variance estimate."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not var_hat > 0 or not math.isfinite(var_hat):
        raise NonPositiveVarianceError(f"variance estimate is not positive: {var_hat!r}")
    z = statistic / math.sqrt(var_hat)
    return TestResult(
        statistic=statistic,
        variance_hat=var_hat,
        z=z,
        p_value=float(norm.sf(z)),
        reject=bool(z > upper_quantile(alpha)),
        alpha=alpha,
    )


def run_fs_test(ts: TwoSample, alpha: float = 0.05) -> TestResult:
    """Reject equal locations when T_n / sigma_hat_n exceeds z_alpha."""
    tn, traces = fs_components(ts)
    return decide(tn, variance_hat(traces, ts.sample1.n, ts.sample2.n), alpha)


def _check_mode(scaling: str):
    if scaling not in SCALING_MODES:
        raise ValueError(f"scaling must be one of {SCALING_MODES}, got {scaling!r}")
