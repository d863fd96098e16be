"""Legendre duality: the A <-> G bijection, F[G], the LW functional, self-energy.

The concave conjugate of the free energy under the pairing
<A, G> = 1/2 Tr[A G] is evaluated through its dual representation

    F[G] = 1/2 Tr[A[G] G] - Omega[A[G]],

where A[G] is the unique quadratic form whose Gibbs measure has second
moment G.  A[G] is found by Newton iteration on the moment residual,
with the Jacobian assembled from the fourth-moment tensor.  From F the
interaction-only functional and the self-energy follow:

    Phi[G] = 2 F[G] - Tr log G - N log(2 pi e),
    Sigma[G] = A[G] - G^{-1}.

Matrix gradients follow the symmetrized-perturbation convention: the
direction E^(ij) has ones at (i,j) and (j,i) (two at (i,i) on the
diagonal), which makes nabla_ij f = 2 df/dX_ij for entrywise-smooth f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import integrate
from .errors import (
    BudgetExceededError,
    DivergenceDetectedError,
    LeftDomainError,
    NoConvergenceError,
    NotPositiveDefiniteError,
)
from .model import GibbsModel, Interaction, SymMatrix, as_sym

LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))

NEWTON_TOL_DEFAULT = 1e-6
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class InversionResult:
    A: SymMatrix
    residual_norm: float     # max |G[A] - G_target|
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LwEvaluation:
    phi: float
    F: float
    A: SymMatrix
    sigma: SymMatrix
    error_estimate: float


def _upper_indices(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def _sym_from_upper(vec, n):
    m = np.zeros((n, n))
    for a, (i, j) in enumerate(_upper_indices(n)):
        m[i, j] = vec[a]
        m[j, i] = vec[a]
    return m


def _upper_from_sym(m, n):
    return np.array([m[i, j] for (i, j) in _upper_indices(n)])


def moment_jacobian(green: np.ndarray, fourth: np.ndarray) -> np.ndarray:
    """d G_ij / d A_kl on upper-triangle coordinates.

    Perturbing the (k,l) entry of A (and its mirror) by da adds
    x_k x_l * da to the Hamiltonian for k != l but only
    x_k^2 * da / 2 for k = l, hence the half weight on diagonal
    columns:

        dG_ij/dA_kl = -c_kl (<x_i x_j x_k x_l> - G_ij G_kl),
        c_kl = 1/2 if k = l else 1.
    """
    n = green.shape[0]
    pairs = _upper_indices(n)
    jac = np.empty((len(pairs), len(pairs)))
    for b, (k, l) in enumerate(pairs):
        c = 0.5 if k == l else 1.0
        cov = fourth[:, :, k, l] - green * green[k, l]
        for a, (i, j) in enumerate(pairs):
            jac[a, b] = -c * cov[i, j]
    return jac


def _admissible(A_arr, U: Interaction, eps: float) -> bool:
    # With strong growth the free energy exists for every symmetric A;
    # otherwise stay strictly positive definite.
    if U.growth.strong and eps > 0:
        return True
    return float(np.linalg.eigvalsh(A_arr).min()) > 1e-10


def _invert_with_moments(G_target: SymMatrix, U: Interaction, eps: float,
                         spec: integrate.IntegrationSpec, newton_tol: float,
                         max_iter: int):
    """Newton solve for A with G[A] = G_target; returns (result, final bundle)."""
    n = G_target.dim
    Gt = G_target.data
    A = np.linalg.inv(Gt)
    A = (A + A.T) / 2.0

    def bundle_at(A_arr):
        return integrate.moments(GibbsModel(SymMatrix.symmetrized(A_arr), U, eps),
                                 spec, need_fourth=True)

    bundle = bundle_at(A)
    resid = bundle.green - Gt
    rnorm = float(np.max(np.abs(resid)))
    iterations = 0
    while rnorm > newton_tol:
        if iterations >= max_iter:
            raise NoConvergenceError(
                f"Newton inversion: residual {rnorm:.3e} > tol {newton_tol:.1e} "
                f"after {iterations} iterations")
        jac = moment_jacobian(bundle.green, bundle.fourth)
        step_vec = np.linalg.solve(jac, -_upper_from_sym(resid, n))
        dA = _sym_from_upper(step_vec, n)

        t = 1.0
        accepted = False
        saw_admissible = False
        for _ in range(20):
            A_try = A + t * dA
            if not _admissible(A_try, U, eps):
                t /= 2.0
                continue
            saw_admissible = True
            try:
                bundle_try = bundle_at(A_try)
            except (DivergenceDetectedError, BudgetExceededError,
                    NotPositiveDefiniteError):
                t /= 2.0
                continue
            resid_try = bundle_try.green - Gt
            rnorm_try = float(np.max(np.abs(resid_try)))
            if rnorm_try < rnorm or rnorm_try <= newton_tol:
                A, bundle, resid, rnorm = A_try, bundle_try, resid_try, rnorm_try
                accepted = True
                break
            t /= 2.0
        if not accepted:
            if not saw_admissible:
                raise LeftDomainError(
                    "Newton inversion: no admissible step direction remains in dom Omega")
            raise NoConvergenceError(
                f"Newton inversion stalled at residual {rnorm:.3e}")
        iterations += 1

    result = InversionResult(A=SymMatrix.symmetrized(A), residual_norm=rnorm,
                             iterations=iterations, converged=True)
    return result, bundle


def invert_green(G_target, U: Interaction, eps: float,
                 spec: integrate.IntegrationSpec = integrate.DEFAULT_SPEC,
                 newton_tol: float = NEWTON_TOL_DEFAULT,
                 max_iter: int = NEWTON_MAX_ITER) -> InversionResult:
    """Find A with second moment G_target; starts from A = G_target^{-1}."""
    result, _ = _invert_with_moments(as_sym(G_target), U, eps, spec, newton_tol,
                                     max_iter)
    return result


def _evaluate(G, U, eps, spec, newton_tol) -> LwEvaluation:
    G = as_sym(G)
    n = G.dim
    inv_res, bundle = _invert_with_moments(G, U, eps, spec, newton_tol,
                                           NEWTON_MAX_ITER)
    A = inv_res.A.data
    omega = -bundle.log_partition
    F = 0.5 * float(np.trace(A @ G.data)) - omega
    sign, logdet_g = np.linalg.slogdet(G.data)
    phi = 2.0 * F - logdet_g - n * LOG_2PI_E
    G_inv = np.linalg.inv(G.data)
    sigma = SymMatrix.symmetrized(A - (G_inv + G_inv.T) / 2.0)
    # First-order transport of the inversion residual plus the quadrature
    # error of Omega; the Legendre form makes the residual term second
    # order, so this is a conservative bound.
    a_scale = float(np.max(np.abs(A)))
    err_f = (bundle.err_log_partition
             + 0.5 * a_scale * n * (inv_res.residual_norm + bundle.err_green))
    error = 2.0 * err_f
    return LwEvaluation(phi=float(phi), F=float(F), A=inv_res.A, sigma=sigma,
                        error_estimate=float(error))


def lw_functional(G, U: Interaction, eps: float,
                  spec: integrate.IntegrationSpec = integrate.DEFAULT_SPEC,
                  newton_tol: float = 1e-8) -> LwEvaluation:
    """Phi[G] with its building blocks (F, A[G], Sigma[G]) and an error estimate."""
    return _evaluate(G, U, eps, spec, newton_tol)


def script_F(G, U: Interaction, eps: float,
             spec: integrate.IntegrationSpec = integrate.DEFAULT_SPEC,
             newton_tol: float = 1e-8) -> float:
    """Concave conjugate F[G] of the free energy (Gaussian entropy for U = 0)."""
    return _evaluate(G, U, eps, spec, newton_tol).F


def self_energy(G, U: Interaction, eps: float,
                spec: integrate.IntegrationSpec = integrate.DEFAULT_SPEC,
                newton_tol: float = 1e-8) -> SymMatrix:
    """Sigma[G] = A[G] - G^{-1}, the half-gradient of Phi."""
    return _evaluate(G, U, eps, spec, newton_tol).sigma


@dataclass(frozen=True)
class VariationalReport:
    omega: float
    objective_at_minimizer: float
    gap: float
    probe_gaps: tuple          # objective(G') - omega for each probe; must be >= -tol
    tolerance: float
    passed: bool


def variational_check(A, U: Interaction, eps: float,
                      spec: integrate.IntegrationSpec = integrate.DEFAULT_SPEC,
                      n_probes: int = 3, seed: int = 0) -> VariationalReport:
    """Check Omega[A] = inf_G (1/2 Tr[A G] - F[G]) at and around the minimizer."""
    A = as_sym(A)
    n = A.dim
    model = GibbsModel(A, U, eps)
    omega_res = integrate.free_energy(model, spec)
    omega = float(omega_res.value)
    g_res = integrate.green_function(model, spec)
    g_star = g_res.value.data

    def objective(G_arr):
        ev = _evaluate(SymMatrix.symmetrized(G_arr), U, eps, spec, 1e-8)
        half_tr = 0.5 * float(np.trace(A.data @ G_arr))
        return half_tr - ev.F, ev.error_estimate

    obj_star, err_star = objective(g_star)
    gap = abs(obj_star - omega)
    tol = max(5.0 * (err_star + omega_res.abs_error), 1e-9)

    rng = np.random.default_rng(seed)
    min_eig = float(np.linalg.eigvalsh(g_star).min())
    probes = [g_star + 0.1 * np.eye(n)]
    for k in range(max(0, n_probes - 1)):
        raw = rng.standard_normal((n, n))
        pert = (raw + raw.T) / 2.0
        scale = 0.2 * min_eig / max(1e-12, float(np.max(np.abs(pert))))
        probes.append(g_star + (-1.0) ** k * scale * pert)  # probe both directions
    probe_gaps = []
    for G_probe in probes:
        val, _ = objective(G_probe)
        probe_gaps.append(float(val - omega))
    passed = gap <= tol and all(p >= -tol for p in probe_gaps)
    return VariationalReport(omega=omega, objective_at_minimizer=float(obj_star),
                             gap=float(gap), probe_gaps=tuple(probe_gaps),
                             tolerance=float(tol), passed=passed)
