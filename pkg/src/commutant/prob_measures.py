"""Sample measures in coordinates, Gaussian likelihoods and ordering mixtures.

When flows are composed in an unknown order, the likelihood of an
observation given the flow times is a mixture over all ``k!`` orderings;
``mixture_likelihood`` enumerates those orderings and reports whether the
components coincide (collapse), which happens exactly when the flows commute.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, MissingInverseError, NonFiniteError
from .geometry import Flow, SmoothMap, as_point

MAX_FACTORS = 6
DEFAULT_SIGMA = 0.1
COLLAPSE_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class SampleMeasure:
    """Equal-weight empirical measure on ``R^dim``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("a sample measure needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise NonFiniteError("sample measure has non-finite samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]


def _as_callable(f):
    return f.func if isinstance(f, SmoothMap) else f


def pushforward(m: SampleMeasure, f) -> SampleMeasure:
    """Image measure ``f_* m`` (pointwise image of every sample)."""
    func = f if not isinstance(f, SmoothMap) else f.__call__
    return SampleMeasure(np.stack([np.asarray(func(s), dtype=float).reshape(-1) for s in m.samples]))


def consistency_check(m: SampleMeasure, chart1: SmoothMap, chart2: SmoothMap) -> float:
    """Max over samples of ``||chart2(s) - psi(chart1(s))||`` with ``psi = chart2 o chart1^-1``.

    Both charts map manifold points to coordinates; the transition map is
    assembled from ``chart1``'s inverse, so the value measures how well the
    chart/inverse pair is wired (it is zero up to roundoff when it is).
    """
    if chart1.inverse is None:
        raise MissingInverseError(f"chart {chart1.name!r} has no inverse")
    worst = 0.0
    for s in m.samples:
        direct = chart2.func(s)
        via = chart2.func(chart1.inverse(chart1.func(s)))
        worst = max(worst, float(np.linalg.norm(np.asarray(direct) - np.asarray(via))))
    return worst


@dataclass(frozen=True)
class GaussianLikelihoodFamily:
    """Isotropic Gaussian ``N(m, sigma^2 I)`` about a manifold point ``m``."""

    sigma: float = DEFAULT_SIGMA
    dim: Optional[int] = None

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("noise scale sigma must be finite and positive")


def likelihood(fam: GaussianLikelihoodFamily, m, x) -> float:
    """Log-density of ``x`` under ``N(m, sigma^2 I)``."""
    m = as_point(m, fam.dim)
    x = as_point(x, m.size)
    d = m.size
    r2 = float(np.sum((x - m) ** 2))
    return -0.5 * d * math.log(2.0 * math.pi * fam.sigma ** 2) - 0.5 * r2 / fam.sigma ** 2


def likelihood_gap(fam: GaussianLikelihoodFamily, inv1, inv2, probes) -> np.ndarray:
    """Symmetric KL divergence between the two likelihoods at each latent probe.

    For equal isotropic covariances this is ``||inv1(v) - inv2(v)||^2 / sigma^2``.
    """
    f1, f2 = _as_callable(inv1), _as_callable(inv2)
    probes = np.asarray(probes, dtype=float)
    if probes.ndim < 2:
        probes = probes.reshape(-1, 1)
    gaps = []
    for v in probes:
        diff = np.asarray(f1(v), dtype=float) - np.asarray(f2(v), dtype=float)
        gaps.append(float(np.sum(diff ** 2)) / fam.sigma ** 2)
    return np.array(gaps)


@dataclass(frozen=True, eq=False)
class MixtureReport:
    orderings: tuple
    means: np.ndarray
    weights: np.ndarray
    collapsed: bool
    max_separation: float
    tolerance: float
    prior_renormalized: bool
    sigma: float

    def log_likelihood(self, x) -> float:
        """``log sum_sigma P(sigma) N(x; mean_sigma, s^2 I)``."""
        fam = GaussianLikelihoodFamily(self.sigma)
        logs = np.array([likelihood(fam, mu, x) for mu in self.means])
        with np.errstate(divide="ignore"):
            return float(logsumexp(logs, b=self.weights))

    def to_json(self) -> dict:
        return {
            "means": self.means.tolist(),
            "weights": self.weights.tolist(),
            "collapsed": self.collapsed,
            "max_separation": self.max_separation,
        }


def compose_ordered(flows: Sequence[Flow], times, order, p) -> np.ndarray:
    """``theta_{o1}(T_{o1}, theta_{o2}(T_{o2}, ... theta_{ok}(T_{ok}, p)))``.

    The last factor in ``order`` is applied first, matching the shorthand
    ``theta_{t_1} o ... o theta_{t_k} p``.
    """
    x = np.asarray(p, dtype=float)
    for i in reversed(order):
        x = flows[i](times[i], x)
    return x


def _normalize_prior(prior, count: int):
    if prior is None:
        return np.full(count, 1.0 / count), False
    w = np.asarray(prior, dtype=float).reshape(-1)
    if w.size != count or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError(f"prior must be {count} non-negative weights with positive sum")
    total = float(w.sum())
    return w / total, abs(total - 1.0) > 1e-6


def mixture_likelihood(flows: Sequence[Flow], T, p, prior=None,
                       fam: Optional[GaussianLikelihoodFamily] = None) -> MixtureReport:
    """Enumerate all orderings of the flow composition at times ``T``.

    Component means are the ordered compositions applied to ``p``. The
    mixture collapses when every pair of means is within
    ``1e-9 + 10 * integrator error``; the integrator error is estimated by
    step doubling (zero for closed-form flows).
    """
    flows = list(flows)
    k = len(flows)
    if k == 0:
        raise ValueError("need at least one factor")
    if k > MAX_FACTORS:
        raise ValueError(f"at most {MAX_FACTORS} factors are supported (got {k}); "
                         "the ordering mixture has k! components")
    T = np.asarray(T, dtype=float).reshape(-1)
    if T.size != k:
        raise DimensionError(f"need one time per factor ({k}), got {T.size}")
    fam = fam or GaussianLikelihoodFamily()
    p = as_point(p, flows[0].dim)
    orderings = tuple(itertools.permutations(range(k)))
    weights, renormalized = _normalize_prior(prior, len(orderings))
    means = np.stack([compose_ordered(flows, T, o, p) for o in orderings])
    refined = [f.refined(2) for f in flows]
    err = 0.0
    if any(f.kind != "closed" for f in flows):
        err = max(float(np.linalg.norm(compose_ordered(refined, T, o, p) - mu))
                  for o, mu in zip(orderings, means))
    tol = COLLAPSE_ATOL + 10.0 * err
    sep = 0.0
    for a, b in itertools.combinations(range(len(means)), 2):
        sep = max(sep, float(np.linalg.norm(means[a] - means[b])))
    return MixtureReport(orderings, means, weights, sep <= tol, sep, tol, renormalized, fam.sigma)
