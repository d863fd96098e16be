"""Gibbs integrals: partition function, moments, divergence probing.

Quadrature for N <= 3: Gauss-Hermite tensor grids after Cholesky
reweighting when the quadratic form is positive definite, composite
Gauss-Legendre on a truncated box otherwise (requires an interaction
with strong growth; the halfwidth is grown until the boundary integrand
falls below 1e-14 of the interior maximum).  Importance-sampled Monte
Carlo for 4 <= N <= 6.  All estimators are deterministic given the
spec's seed; sums are accumulated in a fixed order.

Internally every route works with log-offset weights, so models whose
weight exceeds float range (deep double wells) integrate stably.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import gridquad
from .errors import (
    BudgetExceededError,
    DimensionMismatchError,
    DivergenceDetectedError,
    NotPositiveDefiniteError,
)
from .model import DomainVerdict, GibbsModel, SymMatrix, check_domain_membership

BOUNDARY_DECAY = 1e-14  # truncation box: boundary weight / peak weight

# Gauss-Hermite order ladders and box panel ladders, per dimension.
_GH_ORDERS = {1: (24, 32, 48, 64, 96, 128, 192, 256),
              2: (12, 16, 24, 32, 48, 64, 96, 128),
              3: (8, 12, 16, 24, 32, 44, 56)}
_BOX_PANELS = {1: (4, 8, 16, 32, 64, 128, 192),
               2: (4, 6, 8, 12, 16, 24, 32),
               3: (4, 6, 8, 10, 12)}
_BOX_ORDER = {1: 24, 2: 16, 3: 10}

_LOGZ_FLOOR = 1e-14        # error floors: quadrature cannot resolve below roundoff
_MOMENT_FLOOR = 1e-13


class Method(enum.Enum):
    AUTO_QUADRATURE = "quadrature"
    MONTE_CARLO = "mc"


class MethodUsed(enum.Enum):
    GAUSS_HERMITE = "gauss-hermite"
    TRUNCATED_BOX = "truncated-box"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class IntegrationSpec:
    """Accuracy/budget knobs for the integration routines."""

    method: Method = Method.AUTO_QUADRATURE
    target_rel_error: float = 1e-8
    max_evals: int = 50_000_000
    truncation_box_halfwidth: float | None = None  # None = automatic
    mc_samples: int = 200_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.target_rel_error <= 0:
            raise ValueError("target_rel_error must be > 0")
        if self.method is Method.MONTE_CARLO and self.mc_samples < 10_000:
            raise ValueError("mc_samples must be >= 10^4 for Monte Carlo")

    @classmethod
    def monte_carlo(cls, target_rel_error: float = 1e-3, mc_samples: int = 200_000,
                    rng_seed: int = 0, max_evals: int = 50_000_000) -> "IntegrationSpec":
        return cls(method=Method.MONTE_CARLO, target_rel_error=target_rel_error,
                   mc_samples=mc_samples, rng_seed=rng_seed, max_evals=max_evals)


DEFAULT_SPEC = IntegrationSpec()


@dataclass(frozen=True)
class IntegrationResult:
    """Value with an absolute-error estimate and method provenance."""

    value: object            # float, SymMatrix, or rank-4 ndarray
    abs_error: float
    n_evals: int
    method_used: MethodUsed

    def __post_init__(self):
        if self.abs_error < 0:
            raise ValueError("abs_error must be >= 0")


@dataclass(frozen=True)
class MomentBundle:
    """Joint result of one integration pass.

    log_partition = log Z; green = <x x^T>; fourth = <x_i x_j x_k x_l>
    (None unless requested).  err_log_partition doubles as the relative
    error of Z.
    """

    log_partition: float
    green: np.ndarray
    fourth: np.ndarray | None
    err_log_partition: float
    err_green: float
    err_fourth: float
    n_evals: int
    method_used: MethodUsed


def _weighted_sums(points, qweights, log_w, need_fourth):
    """Offset-stabilized sums of e^{log_w} * {1, x_i x_j, x_i x_j x_k x_l}."""
    shift = float(np.max(log_w))
    w = qweights * np.exp(log_w - shift)
    s0 = float(np.sum(w))
    s2 = np.einsum("m,mi,mj->ij", w, points, points)
    s4 = None
    if need_fourth:
        s4 = np.einsum("m,mi,mj,mk,ml->ijkl", w, points, points, points, points)
    return shift, s0, s2, s4


def _bundle_from_level(shift, s0, s2, s4, log_pref):
    log_z = log_pref + shift + np.log(s0)
    green = s2 / s0
    fourth = None if s4 is None else s4 / s0
    return log_z, green, fourth


def _converged(prev, cur, tol):
    """Compare (log_z, green, fourth) across refinement levels."""
    dz = abs(cur[0] - prev[0])
    dg = float(np.max(np.abs(cur[1] - prev[1])))
    g_scale = max(1.0, float(np.max(np.abs(cur[1]))))
    ok = dz <= tol and dg <= tol * g_scale
    dm = 0.0
    if cur[2] is not None:
        dm = float(np.max(np.abs(cur[2] - prev[2])))
        m_scale = max(1.0, float(np.max(np.abs(cur[2]))))
        ok = ok and dm <= tol * m_scale
    return ok, dz, dg, dm


def _finish(cur, deltas, n_evals, used, need_fourth):
    dz, dg, dm = deltas
    g_scale = max(1.0, float(np.max(np.abs(cur[1]))))
    m_scale = 1.0 if cur[2] is None else max(1.0, float(np.max(np.abs(cur[2]))))
    return MomentBundle(
        log_partition=cur[0],
        green=(cur[1] + cur[1].T) / 2.0,
        fourth=cur[2],
        err_log_partition=max(dz, _LOGZ_FLOOR),
        err_green=max(dg, _MOMENT_FLOOR * g_scale),
        err_fourth=(max(dm, _MOMENT_FLOOR * m_scale) if need_fourth else 0.0),
        n_evals=n_evals,
        method_used=used,
    )


# ---------------------------------------------------------------------------
# Gauss-Hermite route (A positive definite)

def _gh_moments(model, spec, need_fourth):
    n = model.dim
    A = model.A.data
    L = np.linalg.cholesky(A)  # A = L L^T
    # x = L^-T y maps the Gaussian part to the standard normal; the
    # residual exponent is eps*U(x).
    log_pref = float(n / 2.0 * np.log(2.0 * np.pi) - np.sum(np.log(np.diagonal(L))))

    prev = None
    n_evals = 0
    for order in _GH_ORDERS[n]:
        nodes, weights = gridquad.gauss_hermite(order)
        y, qw = gridquad.tensor_rule(nodes, weights, n)
        if n_evals + y.shape[0] > spec.max_evals:
            break
        x = np.linalg.solve(L.T, y.T).T
        quad = 0.5 * np.einsum("mi,ij,mj->m", x, A, x)
        log_w = model.log_weight(x) + quad  # = -eps*U(x)
        n_evals += x.shape[0]
        cur = _bundle_from_level(*_weighted_sums(x, qw, log_w, need_fourth), log_pref)
        if prev is not None:
            ok, dz, dg, dm = _converged(prev, cur, spec.target_rel_error)
            if ok:
                return _finish(cur, (dz, dg, dm), n_evals, MethodUsed.GAUSS_HERMITE,
                               need_fourth)
        prev = cur
    return None  # caller decides on fallback


# ---------------------------------------------------------------------------
# Truncated-box route (indefinite A, strong-growth interaction)

def _find_mode(model):
    """Numerically locate the minimum of h(x); returns (x_min, h_min)."""
    n = model.dim

    def h(x):
        return float(-model.log_weight(x.reshape(1, -1))[0])

    starts = [np.zeros(n)]
    for s in (2.0, 8.0, 32.0):
        for i in range(n):
            e = np.zeros(n)
            e[i] = s
            starts.append(e)
            starts.append(-e)
    best_x, best_h = None, np.inf
    for x0 in starts:
        res = minimize(h, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
        if res.fun < best_h:
            best_x, best_h = res.x, float(res.fun)
    return best_x, best_h


def _auto_halfwidth(model, x_mode, h_min):
    """Grow the box until the boundary weight decays below BOUNDARY_DECAY."""
    n = model.dim
    need = -np.log(BOUNDARY_DECAY)
    L = max(4.0, 2.0 * float(np.max(np.abs(x_mode))) + 4.0)
    probe = np.linspace(-1.0, 1.0, 9)
    for _ in range(80):
        worst = -np.inf
        for axis in range(n):
            for sign in (-1.0, 1.0):
                if n == 1:
                    face = np.array([[sign * L]])
                else:
                    rest = gridquad.tensor_rule(probe * L, np.ones_like(probe), n - 1)[0]
                    face = np.insert(rest, axis, sign * L, axis=1)
                h_face = -model.log_weight(face)
                worst = max(worst, float(np.min(h_face)))
        if worst - h_min >= need:
            return L
        L *= 1.5
    raise BudgetExceededError("no decaying truncation box found (weight does not fall off)")


def _box_moments(model, spec, need_fourth):
    n = model.dim
    if spec.truncation_box_halfwidth is not None:
        L = float(spec.truncation_box_halfwidth)
    else:
        x_mode, h_min = _find_mode(model)
        L = _auto_halfwidth(model, x_mode, h_min)

    prev = None
    n_evals = 0
    order = _BOX_ORDER[n]
    for panels in _BOX_PANELS[n]:
        edges = gridquad.uniform_edges(L, panels)
        nodes, qw1 = gridquad.gauss_legendre_panels(edges, order)
        x, qw = gridquad.tensor_rule(nodes, qw1, n)
        if n_evals + x.shape[0] > spec.max_evals:
            break
        log_w = model.log_weight(x)
        n_evals += x.shape[0]
        cur = _bundle_from_level(*_weighted_sums(x, qw, log_w, need_fourth), 0.0)
        if prev is not None:
            ok, dz, dg, dm = _converged(prev, cur, spec.target_rel_error)
            if ok:
                return _finish(cur, (dz, dg, dm), n_evals, MethodUsed.TRUNCATED_BOX,
                               need_fourth)
        prev = cur
    raise BudgetExceededError(
        f"box quadrature did not reach target_rel_error={spec.target_rel_error} "
        f"within {spec.max_evals} evaluations")


# ---------------------------------------------------------------------------
# Monte Carlo route (4 <= N <= 6, or on request)

_MC_BATCHES = 25


def _mc_moments(model, spec, need_fourth):
    n = model.dim
    A = model.A.data
    eigs = np.linalg.eigvalsh(A)
    if eigs[0] > 1e-8:
        eta = 0.0
    else:
        eta = -float(eigs[0]) + 1e-3 * (1.0 + float(np.max(np.abs(A))))
    precision = A + eta * np.eye(n)
    mode, _ = _find_mode(model)
    cov = np.linalg.inv(precision)
    chol = np.linalg.cholesky(cov)

    rng = np.random.default_rng(spec.rng_seed)
    m = (spec.mc_samples // _MC_BATCHES) * _MC_BATCHES
    z = rng.standard_normal((m, n))
    x = mode + z @ chol.T
    sign, logdet_prec = np.linalg.slogdet(precision)
    d = x - mode
    log_q = (-0.5 * np.einsum("mi,ij,mj->m", d, precision, d)
             + 0.5 * logdet_prec - 0.5 * n * np.log(2.0 * np.pi))
    log_w = model.log_weight(x) - log_q
    shift = float(np.max(log_w))
    w = np.exp(log_w - shift)

    wb = w.reshape(_MC_BATCHES, -1)
    xb = x.reshape(_MC_BATCHES, -1, n)
    z_b = wb.mean(axis=1)                                   # batch Z / e^shift
    s2_b = np.einsum("bm,bmi,bmj->bij", wb, xb, xb) / wb.shape[1]
    g_b = s2_b / z_b[:, None, None]

    z_mean = float(z_b.mean())
    log_z = shift + np.log(z_mean)
    err_log_z = float(z_b.std(ddof=1) / np.sqrt(_MC_BATCHES) / z_mean)
    green = np.einsum("m,mi,mj->ij", w, x, x) / w.sum()
    err_green = float(np.max(g_b.std(axis=0, ddof=1)) / np.sqrt(_MC_BATCHES))

    fourth = None
    err_fourth = 0.0
    if need_fourth:
        s4_b = np.einsum("bm,bmi,bmj,bmk,bml->bijkl", wb, xb, xb, xb, xb) / wb.shape[1]
        f_b = s4_b / z_b[:, None, None, None, None]
        fourth = np.einsum("m,mi,mj,mk,ml->ijkl", w, x, x, x, x) / w.sum()
        err_fourth = float(np.max(f_b.std(axis=0, ddof=1)) / np.sqrt(_MC_BATCHES))

    return MomentBundle(
        log_partition=float(log_z),
        green=(green + green.T) / 2.0,
        fourth=fourth,
        err_log_partition=max(err_log_z, 1e-16),
        err_green=max(err_green, 1e-16),
        err_fourth=err_fourth,
        n_evals=m,
        method_used=MethodUsed.MONTE_CARLO,
    )


# ---------------------------------------------------------------------------
# Dispatch

def _domain_guard(model):
    verdict = check_domain_membership(model)
    if verdict is DomainVerdict.OUTSIDE:
        raise DivergenceDetectedError(
            "Gibbs integral diverges (truncated integrals grow without bound)")
    return verdict


def moments(model: GibbsModel, spec: IntegrationSpec = DEFAULT_SPEC,
            need_fourth: bool = False) -> MomentBundle:
    """Evaluate log Z, second and (optionally) fourth moments in one pass."""
    _domain_guard(model)
    n = model.dim
    if spec.method is Method.MONTE_CARLO:
        return _mc_moments(model, spec, need_fourth)
    if n > 3:
        raise DimensionMismatchError(
            f"quadrature supports N <= 3 (got N={n}); use IntegrationSpec.monte_carlo()")
    if model.A.min_eigenvalue() > 0:
        bundle = _gh_moments(model, spec, need_fourth)
        if bundle is not None:
            return bundle
        # Gauss-Hermite stalled: retry on a truncated box when the
        # interaction decays fast enough to allow one.
        if model.interaction.growth.strong and model.epsilon > 0:
            return _box_moments(model, spec, need_fourth)
        raise BudgetExceededError(
            f"quadrature did not reach target_rel_error={spec.target_rel_error} "
            f"within {spec.max_evals} evaluations")
    if not (model.interaction.growth.strong and model.epsilon > 0):
        raise BudgetExceededError(
            "no decaying truncation box exists for an indefinite quadratic form "
            "without strong interaction growth")
    return _box_moments(model, spec, need_fourth)


def partition_function(model: GibbsModel,
                       spec: IntegrationSpec = DEFAULT_SPEC) -> IntegrationResult:
    """Z = integral of exp(-h); value > 0, error from successive refinements."""
    b = moments(model, spec, need_fourth=False)
    value = float(np.exp(b.log_partition))
    return IntegrationResult(value=value, abs_error=value * b.err_log_partition,
                             n_evals=b.n_evals, method_used=b.method_used)


def free_energy(model: GibbsModel,
                spec: IntegrationSpec = DEFAULT_SPEC) -> IntegrationResult:
    """Omega = -log Z, evaluated in log space (safe for very large Z)."""
    b = moments(model, spec, need_fourth=False)
    return IntegrationResult(value=-b.log_partition, abs_error=b.err_log_partition,
                             n_evals=b.n_evals, method_used=b.method_used)


def green_function(model: GibbsModel,
                   spec: IntegrationSpec = DEFAULT_SPEC) -> IntegrationResult:
    """Second-moment matrix <x x^T> of the Gibbs measure; symmetric PD."""
    b = moments(model, spec, need_fourth=False)
    g = SymMatrix.symmetrized(b.green)
    if g.min_eigenvalue() <= 0:
        raise NotPositiveDefiniteError(
            "Green function estimate is not positive definite; integration error too large")
    return IntegrationResult(value=g, abs_error=b.err_green,
                             n_evals=b.n_evals, method_used=b.method_used)


def fourth_moment_tensor(model: GibbsModel,
                         spec: IntegrationSpec = DEFAULT_SPEC) -> IntegrationResult:
    """Rank-4 tensor <x_i x_j x_k x_l>; symmetric under all index permutations."""
    b = moments(model, spec, need_fourth=True)
    return IntegrationResult(value=b.fourth, abs_error=b.err_fourth,
                             n_evals=b.n_evals, method_used=b.method_used)


# ---------------------------------------------------------------------------
# Divergence probe

class ProbeVerdict(enum.Enum):
    CONVERGENT = "Convergent"
    DIVERGENT = "Divergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ProbeResult:
    verdict: ProbeVerdict
    estimate: float | None       # value of the integral when convergent
    halfwidths: tuple
    log_values: tuple            # log of the truncated integrals
    n_evals: int


def _truncated_log_integral(model, halfwidth, order=24):
    """log of the integral of exp(-h) over [-L, L]^N, geometric panels."""
    edges = gridquad.geometric_edges(halfwidth)
    nodes, w1 = gridquad.gauss_legendre_panels(edges, order)
    x, qw = gridquad.tensor_rule(nodes, w1, model.dim)
    log_w = model.log_weight(x)
    shift = float(np.max(log_w))
    s = float(np.sum(qw * np.exp(log_w - shift)))
    return shift + np.log(s), x.shape[0]


def divergence_probe(model: GibbsModel, initial_halfwidth: float = 1.0,
                     max_doublings: int = 40, divergence_ratio: float = 1.5,
                     spec: IntegrationSpec = DEFAULT_SPEC) -> ProbeResult:
    """Classify the Gibbs integral by truncated boxes of doubling halfwidth.

    Divergent when the last 3 doublings each grew the integral by more
    than divergence_ratio; Convergent when the relative increments fall
    below the spec's target twice in a row; Inconclusive once the
    doubling budget is exhausted.
    """
    tol = spec.target_rel_error
    logs = []
    widths = []
    n_evals = 0
    grow_streak = 0
    settle_streak = 0
    L = float(initial_halfwidth)
    for m in range(max_doublings + 1):
        log_i, evals = _truncated_log_integral(model, L)
        n_evals += evals
        logs.append(log_i)
        widths.append(L)
        if m >= 1:
            log_f = logs[-1] - logs[-2]
            if log_f > np.log(divergence_ratio):
                grow_streak += 1
                settle_streak = 0
            else:
                grow_streak = 0
                # factor - 1 is the relative increment of the integral
                settle_streak = settle_streak + 1 if np.expm1(log_f) <= tol else 0
            if grow_streak >= 3:
                return ProbeResult(ProbeVerdict.DIVERGENT, None, tuple(widths),
                                   tuple(logs), n_evals)
            if settle_streak >= 2:
                return ProbeResult(ProbeVerdict.CONVERGENT, float(np.exp(logs[-1])),
                                   tuple(widths), tuple(logs), n_evals)
        if n_evals > spec.max_evals:
            break
        L *= 2.0
    return ProbeResult(ProbeVerdict.INCONCLUSIVE, None, tuple(widths), tuple(logs),
                       n_evals)
