"""Vector fields, flows and Lie brackets in a single coordinate chart.

Points and tangent vectors are plain 1-D float arrays; the classes here wrap
the callables that produce them together with the metadata (dimension,
optional analytic Jacobian, domain box) needed by the numerical routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import (
    DimensionError,
    DomainExitError,
    MissingInverseError,
    NonFiniteError,
)

EPS = np.finfo(float).eps
DEFAULT_STEPS_PER_UNIT = 100

ArrayFn = Callable[[np.ndarray], np.ndarray]


def as_point(p, dim: Optional[int] = None) -> np.ndarray:
    """Validate ``p`` as a finite coordinate vector and return a float copy."""
    arr = np.array(p, dtype=float).reshape(-1)
    if dim is not None and arr.size != dim:
        raise DimensionError(f"expected a point of dimension {dim}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"point has non-finite coordinates: {arr}")
    return arr


def default_step(p) -> float:
    """Central-difference step ``eps**(1/3) * max(1, |p|_inf)``."""
    p = np.asarray(p, dtype=float)
    scale = max(1.0, float(np.max(np.abs(p)))) if p.size else 1.0
    return EPS ** (1.0 / 3.0) * scale


# --------------------------------------------------------------------------
# domain boxes
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned hyper-rectangle ``[lo_i, hi_i]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("box bounds must have equal length with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1])

    @classmethod
    def cube(cls, dim: int, half_width: float = 1.0, center=None) -> "Box":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(c - half_width, c + half_width)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def to_pairs(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def contains(self, p, slack: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        pad = slack * np.maximum(1.0, np.abs(self.hi - self.lo))
        return bool(np.all(p >= self.lo - pad) and np.all(p <= self.hi + pad))

    def scaled(self, factor: float) -> "Box":
        """Box with the same center and half-widths multiplied by ``factor``."""
        c, r = self.center, 0.5 * (self.hi - self.lo) * factor
        return Box(c - r, c + r)

    def intersect(self, other: "Box") -> "Box":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return Box(lo, np.maximum(lo, hi))

    def from_unit(self, u) -> np.ndarray:
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        return self.from_unit(rng.random((n, self.dim)))

    def low_discrepancy(self, n: int) -> np.ndarray:
        """``n`` deterministic Halton points (unscrambled) mapped into the box."""
        if n <= 0:
            return np.empty((0, self.dim))
        # skip the origin of the sequence so the first point is not a corner
        u = qmc.Halton(d=self.dim, scramble=False).random(n + 1)[1:]
        return self.from_unit(u)

    def grid(self, n: int) -> np.ndarray:
        axes = [np.linspace(a, b, n) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------


def _fd_jacobian(func: ArrayFn, x: np.ndarray, h: Optional[float] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if h is None:
        h = default_step(x)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(func(x + e), dtype=float) - np.asarray(func(x - e), dtype=float)) / (2.0 * h))
    if not cols:
        return np.zeros((np.asarray(func(x)).size, 0))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# vector fields
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorField:
    """A tangent-vector valued function on a chart of dimension ``dim``.

    ``kind`` is one of ``"analytic"``, ``"linear"`` (``X(p) = A p``),
    ``"frame"`` (Jacobian column pushed forward through a chart) or
    ``"lincomb"``. ``source`` records how the field was declared so that
    scenarios can be serialized again.
    """

    func: ArrayFn
    dim: int
    jac: Optional[ArrayFn] = None
    name: str = ""
    kind: str = "analytic"
    matrix: Optional[np.ndarray] = None
    source: Optional[dict] = field(default=None, compare=False)

    @classmethod
    def linear(cls, A, name: str = "") -> "VectorField":
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError("linear generator must be a square matrix")
        A.setflags(write=False)
        return cls(
            func=lambda p: A @ p,
            dim=A.shape[0],
            jac=lambda p: A.copy(),
            name=name,
            kind="linear",
            matrix=A,
            source={"kind": "matrix", "payload": A.tolist()},
        )

    @classmethod
    def constant(cls, v, name: str = "") -> "VectorField":
        v = np.array(v, dtype=float)
        n = v.size
        return cls(lambda p: v.copy(), n, lambda p: np.zeros((n, n)), name=name)

    def __call__(self, p) -> np.ndarray:
        return evaluate_field(self, p)

    def jacobian(self, p, h: Optional[float] = None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(p), dtype=float)
        return _fd_jacobian(self.func, p, h)

    def renamed(self, name: str, source: Optional[dict] = None) -> "VectorField":
        return VectorField(self.func, self.dim, self.jac, name, self.kind, self.matrix,
                           source if source is not None else self.source)

    # linear structure: combinations keep analytic Jacobians when both have them
    def __add__(self, other: "VectorField") -> "VectorField":
        return lincomb([1.0, 1.0], [self, other])

    def __sub__(self, other: "VectorField") -> "VectorField":
        return lincomb([1.0, -1.0], [self, other])

    def __mul__(self, a: float) -> "VectorField":
        return lincomb([a], [self])

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return lincomb([-1.0], [self])


def lincomb(coefs: Sequence[float], fields: Sequence[VectorField], name: str = "") -> VectorField:
    """The field ``sum_i coefs[i] * fields[i]``."""
    if len(coefs) != len(fields) or not fields:
        raise ValueError("need one coefficient per field and at least one field")
    dim = fields[0].dim
    if any(f.dim != dim for f in fields):
        raise DimensionError("cannot combine fields of different dimension")
    coefs = [float(c) for c in coefs]
    fields = list(fields)

    def func(p):
        return sum(c * np.asarray(f.func(p), dtype=float) for c, f in zip(coefs, fields))

    jac = None
    if all(f.jac is not None for f in fields):
        def jac(p):
            return sum(c * np.asarray(f.jac(p), dtype=float) for c, f in zip(coefs, fields))

    matrix = None
    if all(f.matrix is not None for f in fields):
        matrix = sum(c * f.matrix for c, f in zip(coefs, fields))
    return VectorField(func, dim, jac, name=name, kind="lincomb", matrix=matrix)


def evaluate_field(X: VectorField, p) -> np.ndarray:
    """Evaluate ``X`` at ``p``; raises on dimension mismatch or non-finite output."""
    p = as_point(p, X.dim)
    v = np.asarray(X.func(p), dtype=float).reshape(-1)
    if v.size != X.dim:
        raise DimensionError(f"field {X.name!r} returned {v.size} components, expected {X.dim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"field {X.name!r} is not finite at {p}")
    return v


# --------------------------------------------------------------------------
# smooth maps
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """A map ``R^in_dim -> R^out_dim`` with optional Jacobian and inverse."""

    func: ArrayFn
    in_dim: int
    out_dim: int
    jac: Optional[ArrayFn] = None
    inverse: Optional[ArrayFn] = None
    box: Optional[Box] = None
    name: str = ""
    source: Optional[dict] = field(default=None, compare=False)

    def __call__(self, x) -> np.ndarray:
        x = as_point(x, self.in_dim)
        self._check_domain(x)
        return np.asarray(self.func(x), dtype=float).reshape(-1)

    def _check_domain(self, x):
        if self.box is not None and not self.box.contains(x):
            raise DomainExitError(f"{x} lies outside the domain of map {self.name!r}", point=x)

    @property
    def has_inverse(self) -> bool:
        return self.inverse is not None

    def inv(self, y) -> np.ndarray:
        if self.inverse is None:
            raise MissingInverseError(f"map {self.name!r} has no inverse")
        y = as_point(y, self.out_dim)
        return np.asarray(self.inverse(y), dtype=float).reshape(-1)

    def jacobian(self, x, h: Optional[float] = None) -> np.ndarray:
        """Analytic Jacobian if available, central differences otherwise."""
        x = as_point(x, self.in_dim)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float).reshape(self.out_dim, self.in_dim)
        return numerical_jacobian(self, x, h)

    def inverted(self, name: Optional[str] = None) -> "SmoothMap":
        """The inverse map as a :class:`SmoothMap` (no domain box)."""
        if self.inverse is None:
            raise MissingInverseError(f"map {self.name!r} has no inverse")
        return SmoothMap(self.inverse, self.out_dim, self.in_dim, inverse=self.func,
                         name=name or f"{self.name}^-1")

    @classmethod
    def linear(cls, M, name: str = "", box: Optional[Box] = None) -> "SmoothMap":
        M = np.array(M, dtype=float)
        inverse = None
        if M.shape[0] == M.shape[1] and np.linalg.matrix_rank(M) == M.shape[0]:
            Minv = np.linalg.inv(M)
            inverse = lambda y: Minv @ y  # noqa: E731
        return cls(lambda x: M @ x, M.shape[1], M.shape[0], jac=lambda x: M.copy(),
                   inverse=inverse, box=box, name=name,
                   source={"kind": "linear", "payload": M.tolist()})


def numerical_jacobian(f, x, h: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x`` (shape ``out x in``).

    ``f`` may be a :class:`SmoothMap` (domain-checked at ``x``) or any callable
    taking and returning 1-D arrays.
    """
    if isinstance(f, SmoothMap):
        x = as_point(x, f.in_dim)
        f._check_domain(x)
        func = f.func
    else:
        x = as_point(x)
        func = f
    if h is not None and h <= 0:
        raise ValueError("finite-difference step must be positive")
    return _fd_jacobian(lambda z: np.asarray(func(z), dtype=float).reshape(-1), x, h)


# --------------------------------------------------------------------------
# Lie brackets
# --------------------------------------------------------------------------


def lie_bracket(X: VectorField, Y: VectorField, p, h: Optional[float] = None) -> np.ndarray:
    """``[X, Y](p) = DY(p) X(p) - DX(p) Y(p)``.

    Analytic Jacobians are used where the fields carry them; otherwise each
    missing Jacobian is replaced by central differences with step ``h``.
    """
    if X.dim != Y.dim:
        raise DimensionError(f"bracket of fields with dims {X.dim} and {Y.dim}")
    p = as_point(p, X.dim)
    return Y.jacobian(p, h) @ evaluate_field(X, p) - X.jacobian(p, h) @ evaluate_field(Y, p)


def bracket_field(X: VectorField, Y: VectorField, h: Optional[float] = None) -> VectorField:
    """``[X, Y]`` as a field in its own right (Jacobian by finite differences)."""
    if X.dim != Y.dim:
        raise DimensionError(f"bracket of fields with dims {X.dim} and {Y.dim}")
    return VectorField(lambda p: lie_bracket(X, Y, p, h), X.dim,
                       name=f"[{X.name},{Y.name}]")


def commutativity_matrix(fields: Sequence[VectorField], sample, h: Optional[float] = None,
                         mapper=map) -> np.ndarray:
    """Symmetric matrix of ``max_p ||[X_i, X_j](p)||`` over the sample.

    ``mapper`` may be swapped for an executor's ``map`` to evaluate sample
    points concurrently; results are order preserving either way.
    """
    fields = list(fields)
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    k = len(fields)
    if k == 0 or sample.shape[0] == 0:
        raise ValueError("need at least one field and one sample point")
    C = np.zeros((k, k))
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    for i, j in pairs:
        norms = list(mapper(lambda p: float(np.linalg.norm(lie_bracket(fields[i], fields[j], p, h))), sample))
        C[i, j] = C[j, i] = max(norms)
    return C


def linear_independence_check(fields: Sequence[VectorField], sample, tol: float = 1e-8) -> np.ndarray:
    """Per-point flag: smallest singular value of the stacked values > tol * largest."""
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    out = np.zeros(sample.shape[0], dtype=bool)
    for n, p in enumerate(sample):
        V = np.stack([evaluate_field(X, p) for X in fields], axis=1)
        if V.shape[1] > V.shape[0]:
            continue
        s = np.linalg.svd(V, compute_uv=False)
        out[n] = bool(s[0] > 0 and s[-1] > tol * s[0])
    return out


# --------------------------------------------------------------------------
# flows
# --------------------------------------------------------------------------


def _rk4_step(func, p, dt):
    k1 = func(p)
    k2 = func(p + 0.5 * dt * k1)
    k3 = func(p + 0.5 * dt * k2)
    k4 = func(p + dt * k3)
    return p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_flow(X: VectorField, p, t: float, steps: Optional[int] = None,
                   box: Optional[Box] = None) -> np.ndarray:
    """Fixed-step classical RK4 approximation of the flow of ``X`` at time ``t``.

    ``steps`` defaults to ``DEFAULT_STEPS_PER_UNIT`` per unit of ``|t|``. If a
    ``box`` is given, leaving it raises :class:`DomainExitError` with the
    (step-resolution) exit time.
    """
    p = as_point(p, X.dim)
    t = float(t)
    if steps is None:
        steps = max(1, math.ceil(DEFAULT_STEPS_PER_UNIT * abs(t)))
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if t == 0.0:
        return p
    if box is not None and not box.contains(p):
        raise DomainExitError(f"start point {p} outside domain", exit_time=0.0, point=p)
    dt = t / steps
    func = X.func
    x = p
    for n in range(steps):
        x = _rk4_step(func, x, dt)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"flow of {X.name!r} diverged at t={(n + 1) * dt}")
        if box is not None and not box.contains(x):
            raise DomainExitError(
                f"flow of {X.name!r} left the domain at t={(n + 1) * dt:.6g}",
                exit_time=(n + 1) * dt, point=x)
    return x


@dataclass(frozen=True, eq=False)
class Flow:
    """``(t, p) -> p'`` either in closed form or integrated from a field."""

    func: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    box: Optional[Box] = None
    name: str = ""
    kind: str = "closed"
    field: Optional[VectorField] = None
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT

    @classmethod
    def closed_form(cls, func, dim: int, box: Optional[Box] = None, name: str = "",
                    field: Optional[VectorField] = None) -> "Flow":
        return cls(func, dim, box, name, "closed", field)

    @classmethod
    def from_field(cls, X: VectorField, box: Optional[Box] = None,
                   steps_per_unit: int = DEFAULT_STEPS_PER_UNIT, name: str = "") -> "Flow":
        def func(t, p):
            steps = max(1, math.ceil(steps_per_unit * abs(t)))
            return integrate_flow(X, p, t, steps, box)
        return cls(func, X.dim, box, name or X.name, "integrated", X, steps_per_unit)

    def __call__(self, t: float, p) -> np.ndarray:
        p = as_point(p, self.dim)
        if self.kind == "closed":
            if self.box is not None and not self.box.contains(p):
                raise DomainExitError(f"start point {p} outside domain", exit_time=0.0, point=p)
            if t == 0:
                return p
            q = np.asarray(self.func(float(t), p), dtype=float)
            if self.box is not None and not self.box.contains(q):
                raise DomainExitError(f"flow {self.name!r} left the domain at t={t:.6g}",
                                      exit_time=float(t), point=q)
            return q
        return self.func(float(t), p)

    def refined(self, factor: int = 2) -> "Flow":
        """Same flow with ``factor`` times more RK4 steps (closed forms unchanged)."""
        if self.kind == "closed":
            return self
        return Flow.from_field(self.field, self.box, self.steps_per_unit * factor, self.name)


def flow_commutator_defect(flow_i: Flow, flow_j: Flow, s: float, t: float, p) -> float:
    """``|| theta_i(s, theta_j(t, p)) - theta_j(t, theta_i(s, p)) ||_2``."""
    if flow_i.dim != flow_j.dim:
        raise DimensionError("flows act on spaces of different dimension")
    p = as_point(p, flow_i.dim)
    a = flow_i(s, flow_j(t, p))
    b = flow_j(t, flow_i(s, p))
    return float(np.linalg.norm(a - b))


# --------------------------------------------------------------------------
# frames of a chart
# --------------------------------------------------------------------------


def pushforward_field(f: SmoothMap, i: int, name: str = "") -> VectorField:
    """Field ``Y(y) = df(f^-1(y)) e_i``: the i-th latent coordinate pushed to data space."""
    if f.inverse is None:
        raise MissingInverseError(f"map {f.name!r} has no inverse; cannot push fields forward")
    if f.in_dim != f.out_dim:
        raise DimensionError("pushforward fields need a square (chart) map")
    if not 0 <= i < f.in_dim:
        raise IndexError(f"latent index {i} out of range for {f.in_dim} latents")

    def func(y):
        x = np.asarray(f.inverse(y), dtype=float)
        return f.jacobian(x)[:, i]

    return VectorField(func, f.out_dim, name=name or f"{f.name}_frame_{i}", kind="frame")


def frame_fields(f: SmoothMap) -> list:
    return [pushforward_field(f, i) for i in range(f.in_dim)]


def chart_flow(f: SmoothMap, i: int, box: Optional[Box] = None, name: str = "") -> Flow:
    """Closed-form flow of the i-th frame field: ``y -> f(f^-1(y) + t e_i)``."""
    if f.inverse is None:
        raise MissingInverseError(f"map {f.name!r} has no inverse")

    def func(t, y):
        x = np.asarray(f.inverse(y), dtype=float).copy()
        x[i] += t
        return np.asarray(f.func(x), dtype=float)

    return Flow.closed_form(func, f.out_dim, box, name or f"{f.name}_flow_{i}")
