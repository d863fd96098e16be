"""Asymptotic-series coefficients in the coupling from epsilon-sweeps.

Bold coefficients (fixed interacting G): Phi[G, eps*U] and Sigma[G, eps*U]
are sampled on a geometric epsilon grid and fitted by polynomial least
squares with no constant term.  Bare coefficients (fixed quadratic form
A): same machinery but the Green-function series has a constant term
G^(0) = A^{-1}.  Every sample costs a full duality solve (bold) or one
integration (bare), so least squares over all samples is preferred to
repeated finite differencing.

One guard order beyond the requested truncation is always included in
the fit and discarded afterwards; this suppresses the leading
truncation bias without extra samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import duality, integrate, parallel
from .errors import DimensionMismatchError, ExtractionUnstableError
from .model import GibbsModel, Interaction, SymMatrix, as_sym

EPS0_DEFAULT = 1e-2
EPS_MIN = 1e-4          # keep duality solves well conditioned
MAX_ORDER = 3           # integration noise swamps eps^4 signals at desk scale

# Epsilon sweeps need tighter integrals than the package default: the
# k-th coefficient amplifies per-sample noise by roughly eps_min^-k.
DEFAULT_SERIES_SPEC = integrate.IntegrationSpec(target_rel_error=1e-11)

UNSTABLE_TOL = 1e-5     # absolute fit residual above which extraction is rejected


@dataclass(frozen=True)
class SeriesCoefficients:
    """Bold coefficients Phi^(1..M) (scalars) and Sigma^(1..M) (matrices)."""

    order: int
    phi_coeffs: tuple
    sigma_coeffs: tuple
    fit_residual: float
    eps_grid: tuple


@dataclass(frozen=True)
class BareSeriesCoefficients:
    """Bare coefficients g^(0..M) and sigma^(1..M) at fixed A."""

    order: int
    g_coeffs: tuple
    sigma_coeffs: tuple
    fit_residual: float
    eps_grid: tuple


def _eps_grid(order: int, eps0: float):
    grid = [eps0 / 2 ** m for m in range(order + 3)]
    grid = [e for e in grid if e >= EPS_MIN]
    if len(grid) < order + 2:
        raise ValueError(
            f"epsilon grid from eps0={eps0} leaves too few samples above {EPS_MIN}")
    return grid


def _fit(eps, samples, powers, eps0):
    """Least squares of samples (rows: eps values) on (eps/eps0)^k for k in powers.

    Returns (coefficients in natural units, max abs residual).
    """
    eps = np.asarray(eps)
    y = np.asarray(samples)
    design = np.stack([(eps / eps0) ** k for k in powers], axis=1)
    flat = y.reshape(len(eps), -1)
    coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
    resid = design @ coef - flat
    coef_natural = coef / np.array([eps0 ** k for k in powers])[:, None]
    return coef_natural.reshape((len(powers),) + y.shape[1:]), float(np.max(np.abs(resid)))


def extract_bold_series(G, U: Interaction, order: int,
                        spec: integrate.IntegrationSpec = DEFAULT_SERIES_SPEC,
                        eps0: float = EPS0_DEFAULT,
                        newton_tol: float = 1e-10,
                        unstable_tol: float = UNSTABLE_TOL) -> SeriesCoefficients:
    """Fit Phi[G, eps*U] and Sigma[G, eps*U] as series in eps starting at order 1."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}")
    G = as_sym(G)
    grid = _eps_grid(order, eps0)

    def sample(e):
        return duality.lw_functional(G, U, e, spec, newton_tol=newton_tol)

    evals = parallel.ordered_map(sample, grid)
    phis = np.array([ev.phi for ev in evals])
    sigmas = np.array([ev.sigma.data for ev in evals])

    powers = list(range(1, min(order + 1, len(grid) - 1) + 1))  # guard order included
    phi_coef, r1 = _fit(grid, phis, powers, eps0)
    sig_coef, r2 = _fit(grid, sigmas, powers, eps0)
    residual = max(r1, r2)
    if residual > unstable_tol:
        raise ExtractionUnstableError(
            f"series fit residual {residual:.3e} exceeds {unstable_tol:.1e}")
    return SeriesCoefficients(
        order=order,
        phi_coeffs=tuple(float(c) for c in phi_coef[:order]),
        sigma_coeffs=tuple(SymMatrix.symmetrized(sig_coef[k]) for k in range(order)),
        fit_residual=residual,
        eps_grid=tuple(grid),
    )


def closed_form_sigma1(G, v) -> SymMatrix:
    """First-order bold self-energy (Hartree + exchange) for the quartic coupling v:

    Sigma^(1)_ij = -1/2 delta_ij sum_k v_ik G_kk - v_ij G_ij.
    """
    G = as_sym(G)
    v = as_sym(v)
    if G.dim != v.dim:
        raise DimensionMismatchError(f"G is {G.dim}-dim but v is {v.dim}-dim")
    g = G.data
    hartree = -0.5 * np.diag(v.data @ np.diagonal(g))
    exchange = -v.data * g
    return SymMatrix.symmetrized(hartree + exchange)


@dataclass(frozen=True)
class CoefficientRelationRow:
    k: int
    phi_k: float
    trace_form: float      # Tr[G Sigma^(k)] / (2k)
    abs_gap: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class CoefficientRelationReport:
    rows: tuple
    passed: bool


def coefficient_tolerance(coeffs, k: int, scale: float) -> float:
    """Uncertainty of a fitted order-k coefficient of magnitude ``scale``.

    Two independent contributions: sample noise amplified by eps0^-k
    through the least squares, and the truncation bias of the guarded
    fit, which is a small multiple of eps0 per extra order and is not
    visible in the fit residual.
    """
    eps0 = max(coeffs.eps_grid)
    noise = 100.0 * coeffs.fit_residual / eps0 ** k
    trunc = 0.01 * 2.0 ** (k - 1) * max(scale, 1e-6)
    return max(noise, trunc)


def check_coefficient_relation(coeffs: SeriesCoefficients, G) -> CoefficientRelationReport:
    """For homogeneous quartic U: Phi^(k) = Tr[G Sigma^(k)] / (2k), each k <= M."""
    G = as_sym(G)
    rows = []
    ok = True
    for k in range(1, coeffs.order + 1):
        phi_k = coeffs.phi_coeffs[k - 1]
        tr = float(np.trace(G.data @ coeffs.sigma_coeffs[k - 1].data)) / (2.0 * k)
        gap = abs(phi_k - tr)
        tol = coefficient_tolerance(coeffs, k, max(abs(phi_k), abs(tr)))
        passed = gap <= tol
        ok = ok and passed
        rows.append(CoefficientRelationRow(k=k, phi_k=phi_k, trace_form=tr,
                                           abs_gap=gap, tolerance=tol, passed=passed))
    return CoefficientRelationReport(rows=tuple(rows), passed=ok)


def extract_bare_series(A, U: Interaction, order: int,
                        spec: integrate.IntegrationSpec = DEFAULT_SERIES_SPEC,
                        eps0: float = EPS0_DEFAULT,
                        unstable_tol: float = UNSTABLE_TOL) -> BareSeriesCoefficients:
    """Fit G_A(eps) (with constant term A^{-1}) and sigma_A(eps) = A - G_A(eps)^{-1}."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}")
    A = as_sym(A)
    grid = _eps_grid(order, eps0)

    def sample(e):
        res = integrate.green_function(GibbsModel(A, U, e), spec)
        return res.value.data

    greens = np.array(parallel.ordered_map(sample, grid))
    sigmas = np.array([A.data - np.linalg.inv(g) for g in greens])

    guard = min(order + 1, len(grid) - 2)
    g_powers = list(range(0, guard + 1))
    s_powers = list(range(1, guard + 1))
    g_coef, r1 = _fit(grid, greens, g_powers, eps0)
    s_coef, r2 = _fit(grid, sigmas, s_powers, eps0)
    residual = max(r1, r2)
    if residual > unstable_tol:
        raise ExtractionUnstableError(
            f"series fit residual {residual:.3e} exceeds {unstable_tol:.1e}")
    return BareSeriesCoefficients(
        order=order,
        g_coeffs=tuple(SymMatrix.symmetrized(g_coef[k]) for k in range(order + 1)),
        sigma_coeffs=tuple(SymMatrix.symmetrized(s_coef[k]) for k in range(order)),
        fit_residual=residual,
        eps_grid=tuple(grid),
    )
