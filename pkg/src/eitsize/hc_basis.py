"""High-Continuity (HC) quadratic shape functions and reference quadrature.

On the reference interval xi in [-1/2, 1/2] each element carries three
shape functions.  Elements touching the boundary on an axis use the
left/right variants on that axis, which make the outermost parameter a
field value instead of a slope control.  Together the variants span the
open-uniform quadratic B-spline space, so the interpolated field is C^1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import INTERIOR, LEFT, RIGHT, StructuredMesh

VARIANTS = {"left": LEFT, "interior": INTERIOR, "right": RIGHT}

# rows: phi_1..phi_3, columns: coefficients of 1, xi, xi^2
_COEFFS = {
    INTERIOR: np.array([[1 / 8, -1 / 2, 1 / 2],
                        [3 / 4, 0.0, -1.0],
                        [1 / 8, 1 / 2, 1 / 2]]),
    LEFT: np.array([[1 / 4, -1.0, 1.0],
                    [5 / 8, 1 / 2, -3 / 2],
                    [1 / 8, 1 / 2, 1 / 2]]),
    RIGHT: np.array([[1 / 8, -1 / 2, 1 / 2],
                     [5 / 8, -1 / 2, -3 / 2],
                     [1 / 4, 1.0, 1.0]]),
}


@dataclass(frozen=True)
class ShapeSet1D:
    variant: int
    coeffs: np.ndarray

    def values(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.stack([c[0] + c[1] * xi + c[2] * xi**2 for c in self.coeffs], -1)

    def derivatives(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.stack([c[1] + 2 * c[2] * xi for c in self.coeffs], -1)


def shape_set(variant) -> ShapeSet1D:
    code = VARIANTS[variant] if isinstance(variant, str) else int(variant)
    return ShapeSet1D(code, _COEFFS[code])


def eval_shape(variant, i: int, xi: float) -> float:
    """Value of shape function ``i`` (1-based) of the given variant at ``xi``."""
    if i not in (1, 2, 3):
        raise ValueError(f"shape function index must be 1, 2 or 3, got {i}")
    if not -0.5 - 1e-12 <= xi <= 0.5 + 1e-12:
        raise ValueError(f"xi={xi} outside the reference interval [-1/2, 1/2]")
    return float(shape_set(variant).values(xi)[i - 1])


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1/2, 1/2]^dim (weights sum to 1)."""

    dim: int
    points_per_axis: int
    points: np.ndarray  # (q, dim)
    weights: np.ndarray  # (q,)
    points_1d: np.ndarray
    weights_1d: np.ndarray

    @property
    def degree(self) -> int:
        return 2 * self.points_per_axis - 1


@lru_cache(maxsize=None)
def make_quadrature(dim: int, points_per_axis: int = 3) -> QuadratureRule:
    if points_per_axis < 3:
        raise ValueError("at least 3 Gauss points per axis are needed to integrate "
                         "the degree-4 stiffness integrand exactly")
    if dim < 0:
        raise ValueError("dim must be non-negative")
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    x, w = x / 2, w / 2
    pts = np.array(list(itertools.product(x, repeat=dim))).reshape(-1, dim)[:, ::-1]
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=dim)])
    return QuadratureRule(dim, points_per_axis, pts, wts, x, w)


def tensor_basis(variants, points, h: float = 1.0):
    """Tensor-product HC basis at reference points.

    Parameters
    ----------
    variants : sequence of int
        Per-axis variant codes of the element.
    points : array_like, shape (q, dim)
        Reference coordinates in [-1/2, 1/2]^dim.
    h : float
        Element size; gradients are returned in physical units (scaled 1/h).

    Returns
    -------
    N : ndarray, shape (q, 3^dim)
    dN : ndarray, shape (q, dim, 3^dim)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = points.shape[1]
    vals = [shape_set(variants[a]).values(points[:, a]) for a in range(dim)]
    ders = [shape_set(variants[a]).derivatives(points[:, a]) / h for a in range(dim)]

    def outer(factors):
        # local index x fastest: combine the last axis first
        out = factors[dim - 1]
        for a in range(dim - 2, -1, -1):
            out = (out[:, :, None] * factors[a][:, None, :]).reshape(len(points), -1)
        return out

    N = outer(vals)
    dN = np.stack(
        [outer([ders[a] if a == g else vals[a] for a in range(dim)]) for g in range(dim)],
        axis=1,
    )
    return N, dN


def eval_tensor_basis(mesh: StructuredMesh, element, local_point):
    """Basis row N_e and gradient rows grad N_e of one element at one point.

    Returns arrays of shape (1, 3^dim) and (dim, 3^dim).
    """
    idx = element if np.ndim(element) == 0 else mesh.element_index(element)
    xi = np.asarray(local_point, dtype=float).reshape(1, -1)
    if xi.shape[1] != mesh.dim or np.any(np.abs(xi) > 0.5 + 1e-12):
        raise ValueError("local point must lie in [-1/2, 1/2]^dim")
    N, dN = tensor_basis(mesh.element_variants[idx], xi, mesh.h)
    return N, dN[0]


def element_matrices_1d(variant, h: float = 1.0, points_per_axis: int = 3):
    """1-D stiffness and mass matrices of one HC element."""
    q = make_quadrature(1, points_per_axis)
    s = shape_set(variant)
    v = s.values(q.points_1d)
    d = s.derivatives(q.points_1d) / h
    K = h * np.einsum("q,qi,qj->ij", q.weights_1d, d, d)
    M = h * np.einsum("q,qi,qj->ij", q.weights_1d, v, v)
    return K, M


def interpolate_1d(w, n_e: int, x, side_l: float = 1.0):
    """Evaluate a 1-D HC field with parameters ``w`` (length n_e + 2) and its slope."""
    w = np.asarray(w, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = side_l / n_e
    e = np.clip(np.floor(x / h).astype(int), 0, n_e - 1)
    xi = x / h - e - 0.5
    val = np.empty_like(x)
    der = np.empty_like(x)
    for i, (ei, t) in enumerate(zip(e, xi)):
        variant = LEFT if ei == 0 else RIGHT if ei == n_e - 1 else INTERIOR
        s = shape_set(variant)
        val[i] = s.values(t) @ w[ei:ei + 3]
        der[i] = s.derivatives(t) @ w[ei:ei + 3] / h
    return val, der
