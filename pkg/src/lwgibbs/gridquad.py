"""Quadrature grids: Gauss-Hermite, panelled Gauss-Legendre, tensor products."""

from functools import lru_cache, reduce

import numpy as np


@lru_cache(maxsize=128)
def gauss_hermite(n: int):
    """Nodes/weights for E[f(X)] with X ~ N(0,1): sum w_i f(x_i), sum w_i = 1."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


@lru_cache(maxsize=128)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre_panels(edges, order: int):
    """Composite Gauss-Legendre rule over consecutive panels.

    edges is an increasing 1D array; each [edges[k], edges[k+1]] gets an
    ``order``-point rule.  Returns flat (nodes, weights).
    """
    edges = np.asarray(edges, dtype=float)
    t, w = _leggauss(order)
    lo = edges[:-1][:, None]
    hi = edges[1:][:, None]
    half = (hi - lo) / 2.0
    nodes = (lo + hi) / 2.0 + half * t[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def uniform_edges(halfwidth: float, panels: int) -> np.ndarray:
    return np.linspace(-halfwidth, halfwidth, panels + 1)


def geometric_edges(halfwidth: float, base: float = 1.0) -> np.ndarray:
    """Symmetric edges growing geometrically away from the origin.

    0, base, 2*base, 4*base, ... capped at halfwidth, mirrored to the
    negative side.  Resolves integrands with structure near the origin
    on very wide boxes at logarithmic panel count.
    """
    if halfwidth <= base:
        return np.array([-halfwidth, 0.0, halfwidth])
    pos = [base]
    while pos[-1] < halfwidth:
        pos.append(min(pos[-1] * 2.0, halfwidth))
    pos = np.asarray(pos)
    return np.concatenate([-pos[::-1], [0.0], pos])


def tensor_rule(nodes_1d, weights_1d, ndim: int):
    """Tensor-product rule from one 1D rule: points (m, ndim), weights (m,)."""
    if ndim == 1:
        return nodes_1d.reshape(-1, 1), weights_1d
    grids = np.meshgrid(*([nodes_1d] * ndim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    weights = reduce(np.multiply.outer, [weights_1d] * ndim).ravel()
    return points, weights
