"""Gauss rules on simplices (collapsed conical product) and on boxes."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def simplex_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(Q, dim + 1)`` and weights summing to 1, exact to ``order``.

    Built from Gauss-Jacobi points through the Duffy map; weights are
    normalized to the reference simplex volume.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if order < 1:
        raise ValueError("order must be >= 1")
    m = order // 2 + 2
    from scipy.special import roots_jacobi

    # Jacobi weight (1 - t)^alpha on [-1, 1], alpha = dim - 1 - k for coordinate k
    rules = []
    for k in range(dim):
        alpha = dim - 1 - k
        t, w = roots_jacobi(m, alpha, 0)
        rules.append(((t + 1) / 2, w / 2 ** (alpha + 1)))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.ones_like(grids[0])
    for k, (_, w) in enumerate(rules):
        shape = [1] * dim
        shape[k] = m
        wgrid = wgrid * w.reshape(shape)
    u = [g.ravel() for g in grids]
    weights = wgrid.ravel()
    # Duffy: x0 = u0, x1 = u1 (1 - u0), x2 = u2 (1 - u0)(1 - u1)
    coords = []
    rest = np.ones_like(u[0])
    for k in range(dim):
        coords.append(u[k] * rest)
        rest = rest * (1 - u[k])
    x = np.stack(coords, axis=1)
    bary = np.concatenate([1 - x.sum(axis=1, keepdims=True), x], axis=1)
    return bary, weights / weights.sum()


def box_rule(lo, hi, points_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on ``[lo, hi]``."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    t, w = np.polynomial.legendre.leggauss(points_per_axis)
    axes = [(lo[k] + hi[k]) / 2 + (hi[k] - lo[k]) / 2 * t for k in range(len(lo))]
    waxes = [(hi[k] - lo[k]) / 2 * w for k in range(len(lo))]
    X = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    W = np.ones(1)
    for wa in waxes:
        W = np.outer(W, wa).ravel()
    return X, W
