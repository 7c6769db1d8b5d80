"""Moving-average data generator with exactly known covariance.

Each observation of group ``g`` is an MA(T_g) process along the coordinate axis:

    X[j, k] = sum_{l=0}^{T_g-1} rho_g[l] * Z[j, k + l] + mu[k]

with an innovation vector ``Z[j]`` of length ``p + T_g - 1``.  Scenario I draws
all innovations from N(0, 1).  Scenario II draws the first half of the
innovation indices from Gamma(4, 1) - 4 (mean zero, variance 4) and the rest
from N(0, 1).

Randomness comes from counter-based Philox streams keyed by
``(master_seed, purpose, *indices)`` so that any replication can be regenerated
on its own, in any process, in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hdbf.errors import InvalidSpecError
from hdbf.fstest import Sample

RNG_ALGORITHM = "numpy Philox4x64-10, SeedSequence(master_seed, spawn_key=(purpose, *indices))"

# Stream purposes.
STRUCTURE = 0
DATA = 1

# Structure sub-streams.
RHO1, RHO2, MU0, MASK = 0, 1, 2, 3

GAMMA_SHAPE = 4.0


def stream(master_seed: int, purpose: int, *indices: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(purpose), *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MASpec:
    t_order: tuple[int, int]
    rho: tuple[np.ndarray, np.ndarray]
    scenario: str
    p: int

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise InvalidSpecError(f"scenario must be 'I' or 'II', got {self.scenario!r}")
        if self.p < 1:
            raise InvalidSpecError(f"p must be positive, got {self.p}")
        rho = tuple(np.asarray(r, dtype=float).ravel() for r in self.rho)
        for g, (t, r) in enumerate(zip(self.t_order, rho), start=1):
            if t < 1 or len(r) != t:
                raise InvalidSpecError(f"group {g}: rho has length {len(r)} but T={t}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "t_order", tuple(int(t) for t in self.t_order))


@dataclass(frozen=True)
class CovSummary:
    """Banded covariance of one group.

    ``band[d, k]`` is cov(X_k, X_{k+d}) for ``k + d < p`` and 0 past the edge.
    """

    band: np.ndarray
    tr_sq: float

    @property
    def diag(self) -> np.ndarray:
        return self.band[0]

    def dense(self) -> np.ndarray:
        p = self.band.shape[1]
        out = np.diag(self.band[0]).astype(float)
        for d in range(1, min(self.band.shape[0], p)):
            off = self.band[d, : p - d]
            out += np.diag(off, d) + np.diag(off, -d)
        return out


@dataclass(frozen=True)
class MeanSpec:
    lam: float = 0.0
    case: str = "A"
    eta: float = 0.0
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.case not in ("A", "B"):
            raise InvalidSpecError(f"case must be 'A' or 'B', got {self.case!r}")
        if self.lam < 0 or self.eta < 0:
            raise InvalidSpecError("lambda and eta must be non-negative")


def draw_rho(t_order: int, rng: np.random.Generator) -> np.ndarray:
    if t_order < 1:
        raise InvalidSpecError(f"MA order must be >= 1, got {t_order}")
    return rng.uniform(2.0, 3.0, size=t_order)


def make_spec(p: int, scenario: str, master_seed: int, t_order=(3, 4)) -> MASpec:
    """MA spec with coefficients drawn once from the experiment's structure stream."""
    rho = (
        draw_rho(t_order[0], stream(master_seed, STRUCTURE, RHO1)),
        draw_rho(t_order[1], stream(master_seed, STRUCTURE, RHO2)),
    )
    return MASpec(t_order=tuple(t_order), rho=rho, scenario=scenario, p=p)


def gamma_block(p: int, t_order: int) -> int:
    """Number of leading innovation indices that are Gamma in Scenario II."""
    return (p + t_order - 1) // 2


def innovation_variances(spec: MASpec, group: int) -> np.ndarray:
    t = spec.t_order[group - 1]
    v = np.ones(spec.p + t - 1)
    if spec.scenario == "II":
        v[: gamma_block(spec.p, t)] = GAMMA_SHAPE
    return v


def gen_sample(spec: MASpec, group: int, mu, n: int, rng: np.random.Generator) -> Sample:
    if n < 1:
        raise InvalidSpecError(f"n must be positive, got {n}")
    t = spec.t_order[group - 1]
    rho = spec.rho[group - 1]
    p = spec.p
    width = p + t - 1
    if spec.scenario == "I":
        z = rng.standard_normal((n, width))
    else:
        h = gamma_block(p, t)
        z = np.empty((n, width))
        z[:, :h] = rng.gamma(GAMMA_SHAPE, 1.0, size=(n, h)) - GAMMA_SHAPE
        z[:, h:] = rng.standard_normal((n, width - h))
    x = np.zeros((n, p))
    for l in range(t):
        x += rho[l] * z[:, l : l + p]
    x += np.asarray(mu, dtype=float)
    return Sample(x)


def exact_covariance(spec: MASpec, group: int) -> CovSummary:
    t = spec.t_order[group - 1]
    rho = spec.rho[group - 1]
    p = spec.p
    var_z = innovation_variances(spec, group)
    band = np.zeros((t, p))
    for d in range(min(t, p)):
        kk = np.arange(p - d)
        for m in range(t - d):
            band[d, : p - d] += rho[m] * rho[m + d] * var_z[kk + d + m]
    tr_sq = float(np.sum(band[0] ** 2) + 2 * np.sum(band[1:] ** 2))
    return CovSummary(band=band, tr_sq=tr_sq)


def scaled_traces(cov1: CovSummary, cov2: CovSummary, gamma: float) -> tuple[float, float, float]:
    """Exact tr((L S1 L)^2), tr((L S2 L)^2) and tr(L S1 L^2 S2 L), L^2 = 1/(s1 + gamma s2)."""
    l2 = 1.0 / (cov1.diag + gamma * cov2.diag)
    p = len(l2)
    depth = min(max(cov1.band.shape[0], cov2.band.shape[0]), p)
    tr1 = tr2 = tr12 = 0.0
    for d in range(depth):
        w = l2[: p - d] * l2[d:]
        b1 = cov1.band[d, : p - d] if d < cov1.band.shape[0] else np.zeros(p - d)
        b2 = cov2.band[d, : p - d] if d < cov2.band.shape[0] else np.zeros(p - d)
        mult = 1.0 if d == 0 else 2.0
        tr1 += mult * float(np.sum(w * b1 * b1))
        tr2 += mult * float(np.sum(w * b2 * b2))
        tr12 += mult * float(np.sum(w * b1 * b2))
    return tr1, tr2, tr12


def cross_trace(cov1: CovSummary, cov2: CovSummary) -> float:
    """Exact tr(S1 S2)."""
    p = cov1.band.shape[1]
    depth = min(cov1.band.shape[0], cov2.band.shape[0], p)
    return float(sum((1.0 if d == 0 else 2.0) * np.sum(cov1.band[d, : p - d] * cov2.band[d, : p - d]) for d in range(depth)))


def draw_mask(p: int, case: str, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(p, dtype=bool)
    if case == "A":
        mask[:] = True
    else:
        mask[rng.choice(p, size=p // 2, replace=False)] = True
    return mask


def make_means(p: int, mean_spec: MeanSpec, cov1: CovSummary, cov2: CovSummary, rng: np.random.Generator):
    """Return (mu1, mu2) with mu2 = mu0 ~ U(0, lambda)^p and mu1 = mu0 + delta * mask.

    ``delta`` is chosen so ||mu1 - mu2||^2 / sqrt(tr(S1^2) + tr(S2^2)) equals eta.
    """
    mask = mean_spec.mask if mean_spec.mask is not None else np.ones(p, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (p,):
        raise InvalidSpecError(f"mask must have length {p}, got shape {mask.shape}")
    mu0 = rng.uniform(0.0, mean_spec.lam, size=p) if mean_spec.lam > 0 else np.zeros(p)
    m = int(mask.sum())
    if mean_spec.eta == 0:
        return mu0.copy(), mu0
    if m == 0:
        raise InvalidSpecError("eta > 0 needs at least one shifted coordinate")
    delta = np.sqrt(mean_spec.eta * np.sqrt(cov1.tr_sq + cov2.tr_sq) / m)
    return mu0 + delta * mask, mu0
