"""Size-estimate lines, empirical constants and the frequency of boundary data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .mesh import StructuredMesh

SLACK = 0.05


class RegimeMismatch(ValueError):
    """Records and bound line belong to different contrast regimes (k<1 / k>1)."""


@dataclass(frozen=True)
class TheoremContext:
    d0: float
    omega_volume: float
    m0: float | None = None
    regularity: tuple = ()  # opaque (name, value) pairs: r0, M0, delta1, m, M

    def __post_init__(self):
        if self.d0 < 0:
            raise ValueError("d0 must be non-negative")
        if self.m0 is not None and not self.m0 > 0:
            raise ValueError("m0 must be positive when given")


@dataclass(frozen=True)
class BoundsLine:
    """lower * gap <= |D|/|Omega| <= upper * gap**exponent."""

    lower_coef: float
    upper_coef: float
    k: float
    exponent: float = 1.0
    provenance: str = "uniform"

    def __post_init__(self):
        if self.exponent == 1.0 and not 0 < self.lower_coef <= self.upper_coef:
            raise ValueError("need 0 < lower_coef <= upper_coef")

    @property
    def regime(self) -> int:
        return 1 if self.k > 1 else -1


def _check_k(k):
    if not k > 0 or k == 1:
        raise ValueError(f"contrast k must be positive and different from 1, got {k}")


def _k_factors(k):
    """(lower, upper) multipliers of C1, C2 in the fat-inclusion bounds."""
    _check_k(k)
    if k > 1:
        return 1 / (k - 1), k / (k - 1)
    return k / (1 - k), 1 / (1 - k)


def theoretical_line_uniform(k: float) -> BoundsLine:
    lo, hi = _k_factors(k)
    return BoundsLine(lo, hi, k, 1.0, "uniform")


def cosine_constant(n: int) -> float:
    """C_n = 10 / (n pi cosh^2(n pi / 2)) * (sinh(n pi / 20) - sin(n pi / 20)).

    The difference sinh x - sin x = 2 (x^3/3! + x^7/7! + ...) is summed as a
    series to avoid cancellation.
    """
    if n not in (1, 2):
        raise ValueError("C_n is only defined for n = 1, 2")
    x = n * math.pi / 20
    diff, term, j = 0.0, x**3 / 6, 3
    while term > 1e-18 * max(diff, 1e-300):
        diff += 2 * term
        term *= x**4 / ((j + 1) * (j + 2) * (j + 3) * (j + 4))
        j += 4
    return 10 / (n * math.pi * math.cosh(n * math.pi / 2) ** 2) * diff


def theoretical_line_cosine(k: float, n: int) -> BoundsLine:
    lo, hi = _k_factors(k)
    t = math.tanh(n * math.pi / 2) / (n * math.pi)
    c = cosine_constant(n)
    return BoundsLine(lo * t, hi * t / c, k, 1.0, f"cosine({n})")


def theoretical_line_cem_uniform(k: float, l: float, z: float) -> BoundsLine:
    if not l > 0 or z < 0:
        raise ValueError("need l > 0 and z >= 0")
    lo, hi = _k_factors(k)
    f = (l + 2 * z) / l
    return BoundsLine(lo * f, hi * f, k, 1.0, "cem-uniform")


@dataclass
class BoundCheck:
    passed: bool
    lower_margin: float
    upper_margin: float


def _margin(value, bound, sign):
    """Relative distance of ``value`` inside ``bound`` (positive = inside)."""
    if bound == 0:
        if value == 0:
            return 0.0
        return sign * math.inf
    return sign * (value - bound) / bound


def check_bounds(record, line: BoundsLine, context: TheoremContext | None = None,
                 slack: float = 0.0) -> BoundCheck:
    """Check lower * gap <= v <= upper * gap**exponent for one record.

    ``record`` needs ``k``, ``gap`` and ``volume_fraction`` attributes.
    Margins are relative to the bound value; ``slack`` widens both sides.
    """
    k = float(record.k)
    if k != 1 and (k > 1) != (line.k > 1):
        raise RegimeMismatch(f"record k={k} does not match line k={line.k}")
    if context is not None and context.m0 is not None and line.exponent != 1.0:
        raise ValueError("fat-inclusion context needs an exponent-1 line")
    v, gap = float(record.volume_fraction), float(record.gap)
    lo = line.lower_coef * gap
    hi = line.upper_coef * gap**line.exponent
    lm = _margin(v, lo, 1.0)
    um = _margin(v, hi, -1.0)
    return BoundCheck(lm >= -slack and um >= -slack, lm, um)


@dataclass
class EmpiricalConstants:
    C1_emp: float
    C2_emp: float
    n_samples: int
    k: float
    excitation: str = ""

    def line(self) -> BoundsLine:
        lo, hi = _k_factors(self.k)
        return BoundsLine(lo * self.C1_emp, hi * self.C2_emp, self.k, 1.0, "empirical")


def empirical_constants(records, k: float | None = None) -> EmpiricalConstants:
    """Tightest C1, C2 such that every record satisfies the fat-inclusion bounds."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    ks = {float(r.k) for r in records}
    if k is None:
        if len(ks) != 1:
            raise RegimeMismatch(f"records mix contrasts {sorted(ks)}")
        k = ks.pop()
    elif any((rk > 1) != (k > 1) for rk in ks):
        raise RegimeMismatch(f"records with k={sorted(ks)} do not match k={k}")
    lo, hi = _k_factors(k)
    v = np.array([r.volume_fraction for r in records], dtype=float)
    gap = np.array([r.gap for r in records], dtype=float)
    if np.any(gap <= 0):
        raise ValueError("empirical constants need strictly positive power gaps")
    ratio = v / gap
    exc = {getattr(r, "excitation", "") or getattr(r, "test_id", "") for r in records}
    return EmpiricalConstants(float(ratio.min() / lo), float(ratio.max() / hi),
                              len(records), float(k), ",".join(sorted(exc)))


def powerlaw_fit(records):
    """Least-squares fit of log v = log C + e log gap; returns (C, e)."""
    records = list(records)
    v = np.array([r.volume_fraction for r in records], dtype=float)
    gap = np.array([r.gap for r in records], dtype=float)
    if len(records) < 3:
        raise ValueError("power-law fit needs at least 3 records")
    if np.any(gap <= 0) or np.any(v <= 0):
        raise ValueError("power-law fit needs positive gaps and volumes")
    if np.ptp(np.log(gap)) == 0:
        raise ValueError("degenerate fit: all gaps equal")
    A = np.stack([np.ones_like(gap), np.log(gap)], axis=1)
    (logc, e), *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    return float(math.exp(logc)), float(e)


# -- frequency F[phi] ---------------------------------------------------------

@dataclass
class SurfaceSpectrum:
    """Generalized eigenpairs of (Laplace-Beltrami stiffness, mass) on dOmega."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # M-orthonormal columns
    mass: np.ndarray
    node_index: dict = field(repr=False)


def _boundary_node_map(mesh: StructuredMesh):
    n = mesh.n_e
    nodes = {}
    for multi in np.ndindex(*([n + 1] * mesh.dim)):
        if any(c in (0, n) for c in multi):
            nodes[multi] = len(nodes)
    return nodes


def _surface_cells(mesh: StructuredMesh, nodes):
    """Bilinear (3-D) or linear (2-D) boundary cells as lists of node ids.

    Node order in each cell is tensor order with the first tangential axis
    fastest; returns (cells, axis, side) triples.
    """
    n = mesh.n_e
    cells = []
    for axis in range(mesh.dim):
        tang = [a for a in range(mesh.dim) if a != axis]
        for side in (0, 1):
            for idx in np.ndindex(*([n] * len(tang))):
                ids = []
                for corner in np.ndindex(*([2] * len(tang))):
                    multi = [0] * mesh.dim
                    multi[axis] = 0 if side == 0 else n
                    for t, i, c in zip(tang, idx, corner[::-1]):
                        multi[t] = i + c
                    ids.append(nodes[tuple(multi)])
                cells.append((ids, axis, side, idx))
    return cells


def _linear_1d(x):
    return np.stack([0.5 - x, 0.5 + x], -1), np.stack([-np.ones_like(x), np.ones_like(x)], -1)


def _cell_basis(qpts, h):
    """Values (q, 2^d) and tangential gradients (q, d, 2^d) of Q1 on a cell."""
    d = qpts.shape[1]
    vals, ders = zip(*[_linear_1d(qpts[:, a]) for a in range(d)])
    if d == 1:
        return vals[0], (ders[0] / h)[:, None, :]
    V = (vals[1][:, :, None] * vals[0][:, None, :]).reshape(len(qpts), -1)
    G0 = (vals[1][:, :, None] * (ders[0] / h)[:, None, :]).reshape(len(qpts), -1)
    G1 = ((ders[1] / h)[:, :, None] * vals[0][:, None, :]).reshape(len(qpts), -1)
    return V, np.stack([G0, G1], axis=1)


def surface_spectrum(mesh: StructuredMesh) -> SurfaceSpectrum:
    from .hc_basis import make_quadrature

    nodes = _boundary_node_map(mesh)
    N = len(nodes)
    q = make_quadrature(mesh.dim - 1, 3)
    V, G = _cell_basis(q.points, mesh.h)
    area = mesh.h ** (mesh.dim - 1)
    Me = area * np.einsum("q,qi,qj->ij", q.weights, V, V)
    Se = area * np.einsum("q,qai,qaj->ij", q.weights, G, G)
    S = np.zeros((N, N))
    M = np.zeros((N, N))
    for ids, *_ in _surface_cells(mesh, nodes):
        ix = np.ix_(ids, ids)
        S[ix] += Se
        M[ix] += Me
    lam, vec = eigh(S, M)
    return SurfaceSpectrum(np.clip(lam, 0.0, None), vec, M, nodes)


def surface_load(mesh: StructuredMesh, flux, spectrum: SurfaceSpectrum | None = None):
    """f_j = int_{dOmega} phi psi_j for the bilinear boundary basis psi_j."""
    from .hc_basis import make_quadrature

    nodes = _boundary_node_map(mesh) if spectrum is None else spectrum.node_index
    q = make_quadrature(mesh.dim - 1, 3)
    V, _ = _cell_basis(q.points, mesh.h)
    area = mesh.h ** (mesh.dim - 1)
    f = np.zeros(len(nodes))
    for ids, axis, side, idx in _surface_cells(mesh, nodes):
        tang = [a for a in range(mesh.dim) if a != axis]
        x = np.empty((len(q.weights), mesh.dim))
        x[:, axis] = 0.0 if side == 0 else mesh.side_l
        for j, t in enumerate(tang):
            x[:, t] = (idx[j] + 0.5 + q.points[:, j]) * mesh.h
        phi = flux(axis, side, x)
        f[ids] += area * (q.weights * phi) @ V
    return f


def fractional_norms(spectrum: SurfaceSpectrum, load, exponents=(-0.5, -1.0)):
    """Squared H^s norms sum_i (1 + lambda_i)^s c_i^2 with c_i = v_i^T load."""
    c = spectrum.eigenvectors.T @ np.asarray(load, dtype=float)
    return [float(np.sum((1 + spectrum.eigenvalues) ** s * c**2)) for s in exponents]


def frequency_from_load(spectrum: SurfaceSpectrum, load) -> float:
    n_half, n_one = fractional_norms(spectrum, load)
    if n_one <= 0:
        raise ValueError("boundary data is identically zero")
    return math.sqrt(n_half / n_one)


def frequency(mesh: StructuredMesh, spec, spectrum: SurfaceSpectrum | None = None) -> float:
    """F[phi] = ||phi||_{H^-1/2} / ||phi||_{H^-1} on the boundary of the mesh."""
    spectrum = surface_spectrum(mesh) if spectrum is None else spectrum
    load = surface_load(mesh, spec.flux(mesh), spectrum)
    if not np.any(np.abs(load) > 0):
        raise ValueError("boundary data is identically zero")
    return frequency_from_load(spectrum, load)
