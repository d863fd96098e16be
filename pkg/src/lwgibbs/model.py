"""Model objects: symmetric matrices, interactions, Gibbs models.

A Gibbs model is the weight exp(-h(x)) with Hamiltonian

    h(x) = 1/2 x^T A x + eps * U(x),

where A is a real symmetric N x N matrix and U an interaction term.
Everything here is immutable after construction and safe to share
across threads; interaction callables must be pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    NotSymmetricError,
)

# Eigenvalue floor for "positive definite" checks on interaction matrices.
PD_EIG_FLOOR = 1e-12


def _as_square_array(data, name: str = "matrix") -> np.ndarray:
    arr = np.array(data, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        if arr.size == 1:
            arr = arr.reshape(1, 1)
        else:
            raise DimensionMismatchError(f"{name} must be square, got shape {arr.shape}")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Dense real symmetric matrix.

    Construction fails loudly if the data is not exactly symmetric;
    use :meth:`symmetrized` for nearly-symmetric numerical output.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = _as_square_array(self.data, "SymMatrix")
        if not np.array_equal(arr, arr.T):
            raise NotSymmetricError("matrix entries are not symmetric")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def identity(cls, n: int) -> "SymMatrix":
        return cls(np.eye(n))

    @classmethod
    def diagonal(cls, values) -> "SymMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def symmetrized(cls, data) -> "SymMatrix":
        """Build from nearly-symmetric data by averaging (i,j) and (j,i)."""
        arr = _as_square_array(data, "SymMatrix")
        return cls((arr + arr.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.data).min())

    def is_positive_definite(self, floor: float = PD_EIG_FLOOR) -> bool:
        return self.min_eigenvalue() > floor

    def inverse(self) -> "SymMatrix":
        inv = np.linalg.inv(self.data)
        return SymMatrix.symmetrized(inv)

    def __repr__(self):
        return f"SymMatrix({self.data.tolist()!r})"


def as_sym(m) -> SymMatrix:
    """Coerce a SymMatrix or array-like to SymMatrix (exact symmetry required)."""
    if isinstance(m, SymMatrix):
        return m
    return SymMatrix(m)


def _batched(x, dim: int | None):
    """Normalize input points to shape (m, N); return (points, was_single)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr.reshape(1, -1), True
    if arr.ndim != 2:
        raise DimensionMismatchError(f"points must have shape (N,) or (m, N), got {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr, False


@dataclass(frozen=True)
class GrowthMeta:
    """Growth-condition metadata for an interaction.

    weak_constant is a C >= 0 with U(x) + C*(1 + |x|^2) >= 0 everywhere
    (None when no such constant is known).  strong claims that U + b
    eventually dominates every quadratic: for all alpha there is b with
    U(x) + b >= alpha |x|^2.
    """

    weak_constant: float | None
    strong: bool

    def __post_init__(self):
        if self.weak_constant is not None and self.weak_constant < 0:
            raise ValueError("weak_constant must be >= 0")

    def check_weak_inequality(self, interaction: "Interaction", dim: int,
                              n_points: int = 64, scale: float = 10.0,
                              seed: int = 20240817) -> bool:
        """Spot-check U(x) + C(1+|x|^2) >= 0 on a randomized sample grid."""
        if self.weak_constant is None:
            return True
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-scale, scale, size=(n_points, dim))
        u = interaction.evaluate(pts)
        bound = self.weak_constant * (1.0 + np.sum(pts * pts, axis=1))
        return bool(np.all(u + bound >= -1e-12))


class Interaction:
    """Base class for interaction terms U(x).

    Subclasses implement :meth:`evaluate` on batches of points,
    shape (m, N) -> (m,), and declare growth metadata.  ``dim`` is the
    required ambient dimension, or None when any dimension is accepted.
    ``fragment`` optionally marks the coordinate subset U depends on.
    """

    dim: int | None = None
    fragment: frozenset[int] | None = None
    growth: GrowthMeta = GrowthMeta(weak_constant=None, strong=False)

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        pts, single = _batched(x, self.dim)
        out = self.evaluate(pts)
        return float(out[0]) if single else out

    def coulomb_matrix(self) -> np.ndarray | None:
        """Quartic-coupling matrix v when U(x) = (1/8) sum_ij v_ij x_i^2 x_j^2."""
        return None

    def _check_fragment(self, dim: int):
        """Spot-check that U ignores off-fragment coordinates."""
        frag = self.fragment
        if frag is None:
            return
        if any(i < 0 or i >= dim for i in frag):
            raise DimensionMismatchError("fragment indices out of range")
        others = [i for i in range(dim) if i not in frag]
        if not others:
            return
        rng = np.random.default_rng(20240818)
        base = rng.uniform(-3.0, 3.0, size=(16, dim))
        moved = base.copy()
        moved[:, others] = rng.uniform(-3.0, 3.0, size=(16, len(others)))
        if not np.allclose(self.evaluate(base), self.evaluate(moved), rtol=0, atol=1e-10):
            raise ValueError("interaction depends on coordinates outside its fragment")


class Zero(Interaction):
    """The zero interaction; valid in any dimension."""

    dim = None
    fragment = frozenset()
    growth = GrowthMeta(weak_constant=0.0, strong=False)

    def evaluate(self, x):
        pts, _ = _batched(x, None)
        return np.zeros(pts.shape[0])

    def __repr__(self):
        return "Zero()"


class GeneralizedCoulomb(Interaction):
    """Quartic density-density interaction U(x) = (1/8) sum_ij v_ij x_i^2 x_j^2.

    Requires v symmetric positive definite (smallest eigenvalue above
    1e-12), which makes U grow faster than any quadratic.
    """

    def __init__(self, v, fragment=None):
        v = as_sym(v)
        if not v.is_positive_definite(PD_EIG_FLOOR):
            raise NotPositiveDefiniteError(
                "coupling matrix v must be positive definite (eigenvalue floor 1e-12)")
        self.v = v
        self.dim = v.dim
        self.fragment = frozenset(fragment) if fragment is not None else None
        self.growth = GrowthMeta(weak_constant=0.0, strong=True)
        if self.fragment is not None:
            idx = sorted(self.fragment)
            outside = [i for i in range(self.dim) if i not in self.fragment]
            if outside and np.any(v.data[np.ix_(outside, range(self.dim))] != 0.0):
                raise ValueError("v couples coordinates outside the declared fragment")
            del idx
        self._check_fragment(self.dim)

    def evaluate(self, x):
        pts, _ = _batched(x, self.dim)
        y = pts * pts
        return 0.125 * np.einsum("mi,ij,mj->m", y, self.v.data, y)

    def coulomb_matrix(self):
        return self.v.data

    def __repr__(self):
        return f"GeneralizedCoulomb(v={self.v.data.tolist()!r})"


class Quartic1D(Interaction):
    """One-dimensional quartic U(x) = (1/8) lam x^4.

    Coincides with GeneralizedCoulomb(v=[[lam]]); kept as its own kind
    because the one-dimensional double well is used throughout.
    """

    def __init__(self, lam: float):
        lam = float(lam)
        if lam < 0:
            raise ValueError("lam must be >= 0")
        self.lam = lam
        self.dim = 1
        self.fragment = frozenset({0}) if lam > 0 else frozenset()
        self.growth = GrowthMeta(weak_constant=0.0, strong=lam > 0)

    def evaluate(self, x):
        pts, _ = _batched(x, 1)
        return 0.125 * self.lam * pts[:, 0] ** 4

    def coulomb_matrix(self):
        return np.array([[self.lam]])

    def __repr__(self):
        return f"Quartic1D(lam={self.lam!r})"


class CappedQuartic2D(Interaction):
    """Two-dimensional interaction with weak but not strong growth.

    U(x1, x2) = |x1|^4 where |x1| <= 1/|x2| and |x2|^-4 elsewhere
    (the first branch applies when x2 = 0).  U is continuous and
    nonnegative, but bounded on every line x2 = const != 0, so it
    cannot dominate a quadratic; composed with squeeze maps
    diag(1, 1/j) it produces divergent Gibbs integrals at quadratic
    forms that are only positive semidefinite.
    """

    dim = 2
    fragment = None
    growth = GrowthMeta(weak_constant=0.0, strong=False)

    def evaluate(self, x):
        pts, _ = _batched(x, 2)
        a1 = np.abs(pts[:, 0])
        a2 = np.abs(pts[:, 1])
        inner = a1 * a2 <= 1.0  # |x1| <= 1/|x2|, true for x2 = 0
        out = np.empty(pts.shape[0])
        out[inner] = a1[inner] ** 4
        out[~inner] = a2[~inner] ** -4
        return out

    def __repr__(self):
        return "CappedQuartic2D()"


class Custom(Interaction):
    """User-supplied interaction with explicitly declared growth metadata.

    fn must be pure and vectorized: (m, N) array -> (m,) array.
    Growth is never inferred automatically.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int,
                 growth: GrowthMeta, fragment=None, label: str = "custom"):
        self.fn = fn
        self.dim = int(dim)
        self.growth = growth
        self.fragment = frozenset(fragment) if fragment is not None else None
        self.label = label
        if self.fragment is not None:
            self._check_fragment(self.dim)

    def evaluate(self, x):
        pts, _ = _batched(x, self.dim)
        out = np.asarray(self.fn(pts), dtype=float)
        if out.shape != (pts.shape[0],):
            raise DimensionMismatchError(
                f"custom interaction returned shape {out.shape}, expected ({pts.shape[0]},)")
        return out

    def __repr__(self):
        return f"Custom({self.label!r}, dim={self.dim})"


def transform_interaction(U: Interaction, T) -> Interaction:
    """Pull back U through the linear map T: returns x |-> U(Tx).

    The result keeps a structured kind only for diagonal-positive T on a
    GeneralizedCoulomb (where v'_ij = v_ij t_i^2 t_j^2); any other case
    yields a Custom interaction with transformed growth metadata.
    """
    T = _as_square_array(T, "T")
    n = T.shape[0]
    if U.dim is not None and U.dim != n:
        raise DimensionMismatchError(f"T is {n}x{n} but U has dimension {U.dim}")

    if isinstance(U, Zero):
        return Zero()

    diag_positive = np.array_equal(T, np.diag(np.diagonal(T))) and np.all(np.diagonal(T) > 0)
    v = U.coulomb_matrix()
    if diag_positive and v is not None and isinstance(U, (GeneralizedCoulomb, Quartic1D)):
        t2 = np.diagonal(T) ** 2
        v_new = v * np.outer(t2, t2)
        if n == 1 and isinstance(U, Quartic1D):
            return Quartic1D(float(v_new[0, 0]))
        return GeneralizedCoulomb(v_new, fragment=U.fragment)

    # Growth under x -> Tx: strong growth survives exactly when T is
    # invertible (|Tx| >= |x| / |T^-1|); a weak constant rescales by the
    # squared operator norm of T.
    op_norm2 = float(np.linalg.norm(T, 2)) ** 2
    invertible = abs(np.linalg.det(T)) > 1e-10
    weak = U.growth.weak_constant
    growth = GrowthMeta(
        weak_constant=None if weak is None else weak * max(1.0, op_norm2),
        strong=U.growth.strong and invertible,
    )
    T_frozen = T.copy()
    T_frozen.flags.writeable = False

    def composed(pts, _U=U, _T=T_frozen):
        return _U.evaluate(pts @ _T.T)

    return Custom(composed, dim=n, growth=growth, label=f"({U!r} o T)")


def restrict_interaction(U: Interaction, p: int) -> Interaction:
    """Restriction x_p |-> U(x_1..x_p, 0, ..., 0) as a p-dimensional interaction.

    For GeneralizedCoulomb this is the leading p x p block of v; strong
    growth is inherited (padding with zeros only drops terms of U's
    lower bound).
    """
    n = U.dim
    if n is None:
        return Zero()
    if not 1 <= p <= n:
        raise DimensionMismatchError(f"cannot restrict dimension {n} to {p}")
    if p == n:
        return U
    v = U.coulomb_matrix()
    if v is not None and isinstance(U, (GeneralizedCoulomb, Quartic1D)):
        v_p = v[:p, :p]
        if p == 1:
            return Quartic1D(float(v_p[0, 0]))
        return GeneralizedCoulomb(v_p)

    def padded(pts, _U=U, _n=n, _p=p):
        full = np.zeros((pts.shape[0], _n))
        full[:, :_p] = pts
        return _U.evaluate(full)

    growth = GrowthMeta(weak_constant=U.growth.weak_constant, strong=U.growth.strong)
    return Custom(padded, dim=p, growth=growth, label=f"({U!r} | first {p})")


@dataclass(frozen=True)
class GibbsModel:
    """Quadratic form A, interaction U and coupling eps defining exp(-h(x))."""

    A: SymMatrix
    interaction: Interaction = field(default_factory=Zero)
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", as_sym(self.A))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        d = self.interaction.dim
        if d is not None and d != self.A.dim:
            raise DimensionMismatchError(
                f"A is {self.A.dim}-dimensional but interaction expects {d}")

    @property
    def dim(self) -> int:
        return self.A.dim

    def log_weight(self, x) -> np.ndarray:
        """-h(x) on a batch of points, shape (m, N) -> (m,)."""
        pts, _ = _batched(x, self.dim)
        quad = 0.5 * np.einsum("mi,ij,mj->m", pts, self.A.data, pts)
        if self.epsilon == 0.0 or isinstance(self.interaction, Zero):
            return -quad
        return -(quad + self.epsilon * self.interaction.evaluate(pts))


def hamiltonian(model: GibbsModel, x):
    """h(x) = 1/2 x^T A x + eps U(x); scalar for a single point, array for a batch."""
    pts, single = _batched(x, model.dim)
    vals = -model.log_weight(pts)
    return float(vals[0]) if single else vals


class DomainVerdict(enum.Enum):
    INSIDE = "Inside"
    OUTSIDE = "Outside"
    UNKNOWN = "Unknown"


def check_domain_membership(model: GibbsModel, probe: bool = True) -> DomainVerdict:
    """Decide whether the Gibbs integral of the model exists.

    Inside when the interaction has strong growth, or when the known
    weak-growth constant C satisfies lambda_min(A) > 2 eps C (so the
    quadratic part dominates the admissible decrease of U).  Outside
    when a divergence certificate is found by truncated-box probing.
    Unknown is a legitimate verdict otherwise.
    """
    growth = model.interaction.growth
    eps = model.epsilon
    if growth.strong and eps > 0:
        return DomainVerdict.INSIDE
    min_eig = model.A.min_eigenvalue()
    c_weak = growth.weak_constant
    if c_weak is not None and min_eig > 2.0 * eps * c_weak:
        return DomainVerdict.INSIDE
    if probe:
        from . import integrate  # deferred: integrate depends on this module

        result = integrate.divergence_probe(model)
        if result.verdict is integrate.ProbeVerdict.DIVERGENT:
            return DomainVerdict.OUTSIDE
        if result.verdict is integrate.ProbeVerdict.CONVERGENT:
            return DomainVerdict.INSIDE
    return DomainVerdict.UNKNOWN
