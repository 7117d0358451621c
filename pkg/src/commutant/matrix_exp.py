"""Matrix exponentials of generator dictionaries.

Covers the operator ``exp(sum_i a_i A_i)``: a scaling-and-squaring Pade
``expm``, commutator tests, joint diagonalization of commuting dictionaries
and the fast exponential it enables, the splitting defect
``||e^{sA+tB} - e^{sA} e^{tB}||``, the Frechet derivative of ``expm`` along a
generator, penalty descent towards a commuting dictionary and generator
recovery from a sampled linear flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConditioningError,
    DefectiveGeneratorError,
    DimensionError,
    NonCommutingError,
    RankDeficientError,
)

JOINT_DIAG_SEED = 0xC0FFEE
MAX_RESEEDS = 3
MAX_EIGVEC_CONDITION = 1e8
IMAG_TOL = 1e-8

# Higham (2005) degree thresholds and Pade numerator coefficients.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def _pade_uv(A, m):
    b = _PADE[m]
    n = A.shape[0]
    ident = np.eye(n, dtype=A.dtype)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
        return U, V
    powers = [ident, A2]
    while len(powers) < (m + 1) // 2:
        powers.append(powers[-1] @ A2)
    U = A @ sum(b[2 * k + 1] * P for k, P in enumerate(powers))
    V = sum(b[2 * k] * P for k, P in enumerate(powers))
    return U, V


def expm(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade approximant.

    The Pade degree is the smallest of 3, 5, 7, 9 whose 1-norm threshold
    admits ``A``; otherwise ``A`` is scaled by ``2**-s`` into the degree-13
    range and the result squared ``s`` times.
    """
    A = _square(A)
    A = A.astype(np.result_type(A.dtype, float))
    if A.shape[0] == 0:
        return A.copy()
    norm1 = float(np.linalg.norm(A, 1))
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            U, V = _pade_uv(A, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(math.ceil(math.log2(norm1 / _THETA[13])))) if norm1 > 0 else 0
    U, V = _pade_uv(A / 2.0 ** s, 13)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def commutator(A, B) -> np.ndarray:
    A, B = np.asarray(A), np.asarray(B)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    return A @ B - B @ A


# --------------------------------------------------------------------------
# dictionaries
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatrixDictionary:
    """Ordered list of linearly independent ``n x n`` generators."""

    generators: tuple

    def __post_init__(self):
        gens = tuple(np.array(_square(A), dtype=float) for A in self.generators)
        if not gens:
            raise ValueError("dictionary needs at least one generator")
        n = gens[0].shape[0]
        if any(A.shape != (n, n) for A in gens):
            raise DimensionError("all generators must share one shape")
        s = np.linalg.svd(np.stack([A.reshape(-1) for A in gens]), compute_uv=False)
        if s[0] == 0 or s[-1] <= 1e-10 * s[0] or len(gens) > n * n:
            raise ValueError("dictionary generators are not linearly independent")
        for A in gens:
            A.setflags(write=False)
        object.__setattr__(self, "generators", gens)

    @property
    def n(self) -> int:
        return self.generators[0].shape[0]

    @property
    def k(self) -> int:
        return len(self.generators)

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.generators)

    def __getitem__(self, i):
        return self.generators[i]

    def combine(self, alpha) -> np.ndarray:
        """``sum_i alpha[i] * A_i``."""
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != self.k:
            raise DimensionError(f"need {self.k} coefficients, got {alpha.size}")
        return np.tensordot(alpha, np.stack(self.generators), axes=1)

    def to_json(self) -> list:
        return [A.tolist() for A in self.generators]


def _generators(d) -> list:
    if isinstance(d, MatrixDictionary):
        return list(d.generators)
    return [np.asarray(A, dtype=float) for A in d]


def max_commutator(d):
    """``(max_{i<j} ||[A_i, A_j]||_F, (i, j))``; pair is ``None`` for k < 2."""
    gens = _generators(d)
    best, pair = 0.0, None
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            c = float(np.linalg.norm(commutator(gens[i], gens[j]), "fro"))
            if pair is None or c > best:
                best, pair = c, (i, j)
    return best, pair


def default_commute_tol(d) -> float:
    gens = _generators(d)
    return 1e-10 * max(float(np.linalg.norm(A, "fro")) ** 2 for A in gens)


def commutes(d, tol: Optional[float] = None):
    """Return ``(all pairs commute within tol, max pairwise ||[A_i, A_j]||_F)``.

    ``tol`` defaults to ``1e-10 * max_i ||A_i||_F**2``.
    """
    if tol is None:
        tol = default_commute_tol(d)
    mx, _ = max_commutator(d)
    return mx <= tol, mx


def splitting_defect(A, B, s: float = 1.0, t: float = 1.0) -> float:
    """``||exp(sA + tB) - exp(sA) exp(tB)||_F``."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.linalg.norm(expm(s * A + t * B) - expm(s * A) @ expm(t * B), "fro"))


# --------------------------------------------------------------------------
# joint diagonalization
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Diagonalization:
    """``A_i ~= P diag(diags[i]) P^-1`` (complex), with the worst residual."""

    P: np.ndarray
    P_inv: np.ndarray
    diags: np.ndarray
    residual: float
    condition: float
    seed: int = JOINT_DIAG_SEED

    @property
    def k(self) -> int:
        return self.diags.shape[0]

    def to_json(self) -> dict:
        return {
            "P_real": self.P.real.tolist(),
            "P_imag": self.P.imag.tolist(),
            "eigenvalues_real": self.diags.real.tolist(),
            "eigenvalues_imag": self.diags.imag.tolist(),
            "residual": self.residual,
            "condition": self.condition,
            "seed": self.seed,
        }


def joint_diagonalize(d, tol: Optional[float] = None) -> Diagonalization:
    """Simultaneously diagonalize a commuting dictionary.

    The eigenvectors of a random combination ``sum_i c_i A_i`` (seeded with
    ``JOINT_DIAG_SEED``) diagonalize every generator when the dictionary
    commutes and each generator is diagonalizable. Up to three reseeds are
    tried before a poorly conditioned eigenvector matrix is declared a
    defective generator.
    """
    gens = _generators(d)
    if tol is None:
        tol = default_commute_tol(gens)
    mx, pair = max_commutator(gens)
    if pair is not None and mx > tol:
        raise NonCommutingError(pair, mx)
    stack = np.stack(gens).astype(complex)
    scale = max(1.0, max(float(np.linalg.norm(A, "fro")) for A in gens))
    last = None
    for attempt in range(MAX_RESEEDS + 1):
        seed = JOINT_DIAG_SEED + attempt
        c = np.random.default_rng(seed).standard_normal(len(gens))
        _, P = np.linalg.eig(np.tensordot(c, stack, axes=1))
        P = P / np.linalg.norm(P, axis=0)
        cond = float(np.linalg.cond(P))
        if not np.isfinite(cond) or cond > MAX_EIGVEC_CONDITION:
            last = f"eigenvector condition number {cond:.3e}"
            continue
        P_inv = np.linalg.inv(P)
        diags = np.stack([np.diag(P_inv @ A @ P) for A in stack])
        residual = max(
            float(np.linalg.norm(P @ np.diag(D) @ P_inv - A, "fro"))
            for D, A in zip(diags, stack)
        )
        if residual > 1e-6 * scale:
            last = f"diagonalization residual {residual:.3e}"
            continue
        return Diagonalization(P, P_inv, diags, residual, cond, seed)
    raise DefectiveGeneratorError(
        f"could not diagonalize the dictionary after {MAX_RESEEDS} reseeds ({last}); "
        "a generator is probably defective")


def fast_expm(diag: Diagonalization, alpha) -> np.ndarray:
    """``P exp(sum_i alpha_i D_i) P^-1`` as a real matrix."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != diag.k:
        raise DimensionError(f"need {diag.k} coefficients, got {alpha.size}")
    out = (diag.P * np.exp(alpha @ diag.diags)) @ diag.P_inv
    return _real_or_raise(out)


def fast_apply(diag: Diagonalization, alpha, p) -> np.ndarray:
    """``P exp(sum_i alpha_i D_i) P^-1 p`` with an entry-wise exponential."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != diag.k:
        raise DimensionError(f"need {diag.k} coefficients, got {alpha.size}")
    p = np.asarray(p, dtype=float).reshape(-1)
    out = diag.P @ (np.exp(alpha @ diag.diags) * (diag.P_inv @ p))
    return _real_or_raise(out)


def _real_or_raise(z: np.ndarray) -> np.ndarray:
    imag = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if imag > IMAG_TOL * max(1.0, float(np.max(np.abs(z.real))) if z.size else 1.0):
        raise ConditioningError(f"imaginary residue {imag:.3e} exceeds tolerance")
    return np.ascontiguousarray(z.real)


# --------------------------------------------------------------------------
# derivatives
# --------------------------------------------------------------------------


def expm_frechet(M, E) -> np.ndarray:
    """Frechet derivative of ``expm`` at ``M`` in direction ``E`` (block-matrix identity)."""
    M, E = np.asarray(M, dtype=float), np.asarray(E, dtype=float)
    n = M.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = M
    block[n:, n:] = M
    block[:n, n:] = E
    return expm(block)[:n, n:]


def expm_directional_derivative(d, alpha0, i: int) -> np.ndarray:
    """``d/da_i exp(sum_j a_j A_j)`` evaluated at ``alpha0``."""
    gens = _generators(d)
    alpha0 = np.asarray(alpha0, dtype=float).reshape(-1)
    if alpha0.size != len(gens):
        raise DimensionError(f"need {len(gens)} coefficients, got {alpha0.size}")
    M = np.tensordot(alpha0, np.stack(gens), axes=1)
    return expm_frechet(M, gens[i])


# --------------------------------------------------------------------------
# commutativity enforcement
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PenaltyDescentResult:
    generators: tuple
    losses: list = field(default_factory=list)
    grad_norm: float = 0.0
    iterations: int = 0

    @property
    def dictionary(self) -> MatrixDictionary:
        return MatrixDictionary(self.generators)

    @property
    def max_commutator(self) -> float:
        return max_commutator(self.generators)[0]


def penalty_loss(B, A, lam: float) -> float:
    fit = sum(float(np.sum((Bi - Ai) ** 2)) for Bi, Ai in zip(B, A))
    pen = 0.0
    for i in range(len(B)):
        for j in range(i + 1, len(B)):
            pen += float(np.sum(commutator(B[i], B[j]) ** 2))
    return fit + lam * pen


def penalty_gradient(B, A, lam: float) -> list:
    grads = []
    for i, Bi in enumerate(B):
        g = 2.0 * (Bi - A[i])
        for j, Bj in enumerate(B):
            if j != i:
                C = commutator(Bi, Bj)
                g = g + 2.0 * lam * (C @ Bj.T - Bj.T @ C)
        grads.append(g)
    return grads


def commutator_penalty_descent(d, lam: float, iters: int = 1000, lr: float = 0.05,
                               gtol: float = 1e-12, jitter: float = 0.0,
                               seed: int = JOINT_DIAG_SEED) -> PenaltyDescentResult:
    """Minimize ``sum ||B_i - A_i||^2 + lam * sum_{i<j} ||[B_i, B_j]||^2``.

    Plain gradient descent started at ``B = A``; a step is accepted only if
    the loss does not increase, halving the step (at most 30 times) until it
    does. The step size that was accepted is reused, and allowed to grow
    again by a factor 2, on the next iteration. Stops early when no step is
    accepted or the gradient norm drops below ``gtol``.

    Starting exactly at ``A`` keeps the iterates in any subspace the
    dictionary is symmetric under (e.g. ``B_2 = B_1^T`` for a transposed
    pair), where descent can stall on a saddle. ``jitter > 0`` adds a seeded
    Gaussian perturbation of that size to the starting point.
    """
    if lam < 0:
        raise ValueError("penalty weight must be non-negative")
    A = _generators(d)
    B = [Ai.copy() for Ai in A]
    if jitter > 0:
        rng = np.random.default_rng(seed)
        B = [Bi + jitter * rng.standard_normal(Bi.shape) for Bi in B]
    loss = penalty_loss(B, A, lam)
    losses = [loss]
    step = lr
    grads = penalty_gradient(B, A, lam)
    gnorm = math.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    it = 0
    for it in range(1, iters + 1):
        if gnorm <= gtol:
            break
        accepted = False
        for _ in range(31):
            trial = [Bi - step * g for Bi, g in zip(B, grads)]
            trial_loss = penalty_loss(trial, A, lam)
            if trial_loss <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        B, loss = trial, trial_loss
        losses.append(loss)
        step = min(2.0 * step, lr)
        grads = penalty_gradient(B, A, lam)
        gnorm = math.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    return PenaltyDescentResult(tuple(B), losses, gnorm, it)


# --------------------------------------------------------------------------
# inverse problem
# --------------------------------------------------------------------------


def recover_generator(trajectory: Sequence, rank_tol: float = 1e-10):
    """Least-squares fit of ``A`` in ``x' = A x`` from samples ``(t, x(t))``.

    Velocities come from second-order finite differences over the (sorted)
    sample times. Returns ``(A, residual)`` where ``residual`` is the RMS
    misfit of the velocity regression.
    """
    traj = sorted(((float(t), np.asarray(x, dtype=float).reshape(-1)) for t, x in trajectory),
                  key=lambda tx: tx[0])
    if len(traj) < 2:
        raise ValueError("need at least two trajectory samples")
    ts = np.array([t for t, _ in traj])
    X = np.stack([x for _, x in traj])
    n = X.shape[1]
    if len(traj) < n + 1:
        raise ValueError(f"need at least {n + 1} samples for a {n}-dimensional flow")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample times must be distinct")
    V = np.gradient(X, ts, axis=0, edge_order=2)
    if np.all(V == 0):
        return np.zeros((n, n)), 0.0
    AT, _, rank, _ = np.linalg.lstsq(X, V, rcond=rank_tol)
    if rank < n:
        raise RankDeficientError(
            f"trajectory spans only {rank} of {n} dimensions; generator is not identifiable",
            rank=int(rank))
    A = AT.T
    residual = float(np.sqrt(np.mean((X @ AT - V) ** 2)))
    return A, residual
