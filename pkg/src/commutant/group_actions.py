"""Matrix Lie group actions given in exponential coordinates.

An action is specified by a basis ``E_1..E_k`` of a matrix Lie algebra; the
group element with coordinates ``u`` is ``expm(sum_i u_i E_i)``. Actions on
``R^d`` are either linear (``n = d``) or affine through homogeneous
coordinates (``n = d + 1``, acting on ``(p, 1)``), which is how translations
are represented.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .distillation import RankReport, rank_report
from .errors import DimensionError, NonCommutingFactorsError
from .geometry import Box, as_point, numerical_jacobian
from .matrix_exp import expm

N_COMMUTE_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class MatrixGroupAction:
    """Action ``(u, p) -> expm(sum u_i E_i) . p`` of a matrix group on ``R^dim``.

    ``blocks`` partitions the parameters into factors applied left to right
    as ``expm(U_1) expm(U_2) ...``; a plain action has a single block.
    """

    basis: tuple
    homogeneous: bool = False
    name: str = ""
    blocks: Optional[tuple] = None

    def __post_init__(self):
        basis = tuple(np.array(E, dtype=float) for E in self.basis)
        if not basis:
            raise ValueError("an action needs at least one algebra generator")
        n = basis[0].shape[0]
        if any(E.shape != (n, n) for E in basis):
            raise DimensionError("algebra basis matrices must be square and share one shape")
        for E in basis:
            E.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        blocks = self.blocks
        if blocks is None:
            blocks = (tuple(range(len(basis))),)
        blocks = tuple(tuple(int(i) for i in b) for b in blocks)
        if sorted(itertools.chain(*blocks)) != list(range(len(basis))):
            raise ValueError("blocks must partition the parameter indices")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return self.basis[0].shape[0]

    @property
    def dim(self) -> int:
        return self.n - 1 if self.homogeneous else self.n

    @property
    def param_dim(self) -> int:
        return len(self.basis)

    def element(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.param_dim:
            raise DimensionError(f"action {self.name!r} takes {self.param_dim} parameters, got {u.size}")
        G = np.eye(self.n)
        for block in self.blocks:
            G = G @ expm(sum(u[i] * self.basis[i] for i in block))
        return G

    def act_matrix(self, G, p) -> np.ndarray:
        p = as_point(p, self.dim)
        if self.homogeneous:
            return (G @ np.append(p, 1.0))[: self.dim]
        return G @ p

    def __call__(self, u, p) -> np.ndarray:
        return self.act_matrix(self.element(u), p)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "homogeneous": self.homogeneous,
            "algebra_basis": [E.tolist() for E in self.basis],
        }


def translation_action(direction, name: str = "") -> MatrixGroupAction:
    """One-parameter translation along ``direction`` (homogeneous form)."""
    v = np.asarray(direction, dtype=float).reshape(-1)
    d = v.size
    E = np.zeros((d + 1, d + 1))
    E[:d, d] = v
    return MatrixGroupAction((E,), homogeneous=True, name=name)


def compatibility_defect(action: MatrixGroupAction, u, v, p) -> float:
    """``||(g h) . p - g . (h . p)||`` for ``g = element(u)``, ``h = element(v)``."""
    G, H = action.element(u), action.element(v)
    return float(np.linalg.norm(action.act_matrix(G @ H, p) - action.act_matrix(G, action.act_matrix(H, p))))


def commute_samples(k1: int, k2: int, dim: int, n: int = N_COMMUTE_SAMPLES,
                    param_radius: float = 1.0, box: Optional[Box] = None):
    """Deterministic Sobol triples ``(u, v, p)``: ``u, v`` in a cube, ``p`` in ``box``."""
    kk = max(k1, k2)
    box = box if box is not None else Box.cube(dim)
    U = qmc.Sobol(d=2 * kk + dim, scramble=False).random(n)
    out = []
    for row in U:
        u = (2.0 * row[:kk] - 1.0) * param_radius
        v = (2.0 * row[kk:2 * kk] - 1.0) * param_radius
        out.append((u, v, box.from_unit(row[2 * kk:])))
    return out


def actions_commute(a1: MatrixGroupAction, a2: MatrixGroupAction, samples=None,
                    tol: float = 1e-9):
    """Max of ``||a1(u, a2(v, p)) - a2(v, a1(u, p))||`` over samples.

    Each sample ``(u, v, p)`` is used with both role assignments (``u`` for
    ``a1`` and ``v`` for ``a2``, then swapped), so the result does not depend
    on argument order. Returns ``(defect <= tol, defect)``.
    """
    if a1.dim != a2.dim:
        raise DimensionError("actions on spaces of different dimension")
    if samples is None:
        samples = commute_samples(a1.param_dim, a2.param_dim, a1.dim)
    worst = 0.0
    for u, v, p in samples:
        for x, y in ((u, v), (v, u)):
            g = a1.element(np.asarray(x)[: a1.param_dim])
            h = a2.element(np.asarray(y)[: a2.param_dim])
            lhs = a1.act_matrix(g, a2.act_matrix(h, p))
            rhs = a2.act_matrix(h, a1.act_matrix(g, p))
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst <= tol, worst


def product_action(actions: Sequence[MatrixGroupAction], order=None, tol: float = 1e-9,
                   samples=None) -> MatrixGroupAction:
    """Joint action of commuting factors with concatenated parameters.

    Factors are applied in ``order`` (a permutation of factor indices). Any
    non-commuting pair raises :class:`NonCommutingFactorsError`: without
    commutativity the factors only generate a free product, and the joint
    action would depend on the order chosen.
    """
    actions = list(actions)
    if not actions:
        raise ValueError("need at least one action")
    if order is None:
        order = list(range(len(actions)))
    if sorted(order) != list(range(len(actions))):
        raise ValueError("order must be a permutation of the factor indices")
    if len(actions) == 1:
        return actions[0]
    hom = actions[0].homogeneous
    if any(a.homogeneous != hom or a.n != actions[0].n for a in actions):
        raise DimensionError("factors must act through matrices of one size and form")
    for i, j in itertools.combinations(range(len(actions)), 2):
        ok, defect = actions_commute(actions[i], actions[j], samples, tol)
        if not ok:
            raise NonCommutingFactorsError((i, j), defect)
    offsets = np.cumsum([0] + [a.param_dim for a in actions])
    basis, blocks = [], []
    for a in actions:
        basis.extend(a.basis)
    for f in order:
        for block in actions[f].blocks:
            blocks.append(tuple(offsets[f] + i for i in block))
    name = " x ".join(actions[f].name or f"factor{f}" for f in order)
    return MatrixGroupAction(tuple(basis), hom, name, tuple(blocks))


def orbit_jacobian(action: MatrixGroupAction, p, h: Optional[float] = None) -> np.ndarray:
    p = as_point(p, action.dim)
    return numerical_jacobian(lambda u: action(u, p), np.zeros(action.param_dim), h)


def orbit_rank(action: MatrixGroupAction, p, tol: float = 1e-8) -> RankReport:
    """Rank of the orbit map ``u -> action(u, p)`` at ``u = 0``."""
    p = as_point(p, action.dim)
    return rank_report(orbit_jacobian(action, p), p, tol)


def is_free_near_identity(action: MatrixGroupAction, p, tol: float = 1e-8) -> bool:
    """Local injectivity of the orbit map at the identity (full parameter rank)."""
    return orbit_rank(action, p, tol).rank == action.param_dim


def factor_ranks(actions: Sequence[MatrixGroupAction], p, tol: float = 1e-8) -> dict:
    """Per-factor orbit ranks and the rank of the joint orbit map at ``p``.

    Directions shared between factor orbits are not attributed to either
    factor; the joint rank can therefore be below the sum of factor ranks.
    """
    actions = list(actions)
    per = [orbit_rank(a, p, tol).rank for a in actions]
    J = np.concatenate([orbit_jacobian(a, p) for a in actions], axis=1)
    return {"factor_ranks": per, "joint_rank": rank_report(J, p, tol).rank,
            "transitivity": "not assessed"}
