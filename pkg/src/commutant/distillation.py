"""Local rank, distillation and atlas stitching for generative maps.

A map ``f: R^m -> R^d`` that is full rank at ``x`` is distilled by keeping
the latent coordinates picked out by a column-pivoted QR of its Jacobian and
freezing the rest. Around ``x`` this gives a reparameterization with exactly
``rank`` effective parameters; several such charts, indexed by an integer
chart id, form an atlas over a sample of the latent space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import qmc

from .errors import DomainExitError, RankDeficientError
from .geometry import SmoothMap, as_point

DEFAULT_RANK_TOL = 1e-8
RADIUS_BISECTIONS = 30
RADIUS_PROBES = 20
MAX_RADIUS = 1.0


@dataclass(frozen=True, eq=False)
class RankReport:
    point: np.ndarray
    singular_values: np.ndarray
    rank: int
    tol: float

    def to_json(self) -> dict:
        return {
            "point": self.point.tolist(),
            "singular_values": self.singular_values.tolist(),
            "rank": self.rank,
            "tol": self.tol,
        }


def rank_report(J, point, tol: float = DEFAULT_RANK_TOL) -> RankReport:
    """Numerical rank: number of singular values above ``tol * sigma_max``."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    s = np.linalg.svd(J, compute_uv=False) if J.size else np.zeros(0)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return RankReport(np.asarray(point, dtype=float), s, rank, float(tol))


def local_rank(f: SmoothMap, x, tol: float = DEFAULT_RANK_TOL) -> RankReport:
    x = as_point(x, f.in_dim)
    return rank_report(f.jacobian(x), x, tol)


@dataclass(frozen=True, eq=False)
class LocalDistillation:
    base_point: np.ndarray
    selected: tuple
    frozen_values: np.ndarray
    radius: float
    chart_id: int = 0
    rank: int = 0

    @property
    def complement(self) -> tuple:
        return tuple(i for i in range(self.base_point.size) if i not in self.selected)

    def latent(self, w) -> np.ndarray:
        """Full latent vector with the selected coordinates set to ``w``."""
        x = self.base_point.copy()
        x[list(self.selected)] = w
        return x

    def contains(self, x, slack: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.max(np.abs(x - self.base_point), initial=0.0) <= self.radius + slack)

    def to_json(self) -> dict:
        return {
            "chart_id": self.chart_id,
            "base_point": self.base_point.tolist(),
            "selected_indices": list(self.selected),
            "frozen_values": self.frozen_values.tolist(),
            "radius": self.radius,
        }


def _probe_offsets(k: int) -> np.ndarray:
    """Halton probes in ``[-1, 1]^k`` plus the ``2k`` face centres of the cube."""
    if k == 0:
        return np.zeros((RADIUS_PROBES, 0))
    u = qmc.Halton(d=k, scramble=False).random(RADIUS_PROBES + 1)[1:]
    faces = np.concatenate([np.eye(k), -np.eye(k)])
    return np.concatenate([2.0 * u - 1.0, faces])


def _full_rank_on_box(f: SmoothMap, x: np.ndarray, S: list, r: float, tol: float) -> bool:
    lo, hi = x[S] - r, x[S] + r
    if f.box is not None:
        lo, hi = np.maximum(lo, f.box.lo[S]), np.minimum(hi, f.box.hi[S])
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    J0 = f.jacobian(x)[:, S]
    # a square block keeps its determinant sign on a connected full-rank box,
    # so a sign flip between probes means the box crosses a degenerate set
    sign = np.sign(np.linalg.det(J0)) if J0.shape[0] == J0.shape[1] else None
    for off in _probe_offsets(len(S)):
        z = x.copy()
        z[S] = center + half * off
        J = f.jacobian(z)[:, S]
        if rank_report(J, z, tol).rank < len(S):
            return False
        if sign is not None and np.sign(np.linalg.det(J)) != sign:
            return False
    return True


def _validity_radius(f: SmoothMap, x: np.ndarray, S: list, tol: float) -> float:
    if _full_rank_on_box(f, x, S, MAX_RADIUS, tol):
        return MAX_RADIUS
    lo, hi = 0.0, MAX_RADIUS
    for _ in range(RADIUS_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if _full_rank_on_box(f, x, S, mid, tol):
            lo = mid
        else:
            hi = mid
    return lo


def distill_at(f: SmoothMap, x, tol: float = DEFAULT_RANK_TOL, chart_id: int = 0) -> LocalDistillation:
    """Distill ``f`` at ``x`` to ``rank`` latent coordinates.

    Submersion case (rank = data dim): the first ``rank`` pivots of a
    column-pivoted QR of the Jacobian are kept. Immersion case (rank = latent
    dim): every latent is kept. The validity radius is the largest cube
    half-width (at most 1, found by bisection) on which the restricted
    Jacobian stays full rank at all probe points (and, when it is square,
    keeps the sign of its determinant).
    """
    x = as_point(x, f.in_dim)
    J = f.jacobian(x)
    report = rank_report(J, x, tol)
    m, d = f.in_dim, f.out_dim
    if report.rank == d and d <= m:
        _, _, piv = scipy.linalg.qr(J, pivoting=True, mode="economic")
        S = sorted(int(i) for i in piv[:d])
    elif report.rank == m:
        S = list(range(m))
    else:
        raise RankDeficientError(
            f"map {f.name!r} has rank {report.rank} at {x.tolist()}, "
            f"below min(latent dim {m}, data dim {d}); it is not full rank there",
            point=x, rank=report.rank)
    comp = [i for i in range(m) if i not in S]
    radius = _validity_radius(f, x, S, tol)
    return LocalDistillation(x, tuple(S), x[comp].copy(), radius, chart_id, report.rank)


def evaluate_distilled(d: LocalDistillation, f: SmoothMap, w) -> np.ndarray:
    """``f`` with the selected latents set to ``w`` and the rest frozen."""
    w = as_point(w, len(d.selected))
    base = d.base_point[list(d.selected)]
    if np.max(np.abs(w - base), initial=0.0) > d.radius + 1e-12:
        raise DomainExitError(f"w = {w.tolist()} lies outside chart {d.chart_id}'s radius {d.radius}",
                              point=w)
    return f(d.latent(w))


def chart_preimage(d: LocalDistillation, f: SmoothMap, y, iters: int = 50, tol: float = 1e-13):
    """Solve ``evaluate_distilled(d, f, w) = y`` for ``w`` by Gauss-Newton.

    Returns ``(w, residual_norm)``. Starts from the chart's base values.
    """
    y = np.asarray(y, dtype=float)
    S = list(d.selected)
    w = d.base_point[S].copy()
    res = np.inf
    for _ in range(iters):
        x = d.latent(w)
        r = np.asarray(f.func(x), dtype=float) - y
        res = float(np.linalg.norm(r))
        if res <= tol:
            break
        step = np.linalg.lstsq(f.jacobian(x)[:, S], r, rcond=None)[0]
        w = w - step
    return w, res


@dataclass(frozen=True, eq=False)
class Atlas:
    charts: tuple
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self):
        return len(self.charts)

    def covering_chart(self, x) -> Optional[LocalDistillation]:
        for c in self.charts:
            if c.contains(x):
                return c
        return None

    def coverage(self) -> float:
        if len(self.samples) == 0:
            return 1.0
        return float(np.mean([self.covering_chart(s) is not None for s in self.samples]))

    def to_json(self) -> list:
        return [c.to_json() for c in self.charts]


def build_atlas(f: SmoothMap, samples: Sequence, tol: float = DEFAULT_RANK_TOL) -> Atlas:
    """Greedy cover of ``samples`` by local distillations.

    Every sample must be a full-rank point. Samples are visited in the given
    order; one not already inside an existing chart's validity cube becomes
    the base of a new chart. The result depends on sample order.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return Atlas((), np.zeros((0, f.in_dim)))
    samples = samples.reshape(-1, f.in_dim)
    full = min(f.in_dim, f.out_dim)
    for s in samples:
        rep = local_rank(f, s, tol)
        if rep.rank < full:
            raise RankDeficientError(
                f"map {f.name!r} has rank {rep.rank} < {full} at sample {s.tolist()}",
                point=s, rank=rep.rank)
    charts = []
    for s in samples:
        if any(c.contains(s) for c in charts):
            continue
        charts.append(distill_at(f, s, tol, chart_id=len(charts)))
    return Atlas(tuple(charts), samples)
