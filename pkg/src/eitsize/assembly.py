"""Element matrices and global assembly into symmetric band storage."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .hc_basis import QuadratureRule, make_quadrature, tensor_basis
from .mesh import InclusionMask, StructuredMesh

log = logging.getLogger(__name__)


class IncompatibleDataError(ValueError):
    """Boundary current data does not integrate to zero."""


@dataclass
class BandedSymmetricMatrix:
    """Symmetric matrix in LAPACK lower band storage.

    ``ab[d, j]`` holds ``A[j + d, j]``; ``ab`` has shape (b, m) where b is the
    half-bandwidth counting the diagonal.  Storage is Fortran-ordered so the
    LAPACK band routines can work on it in place.
    """

    ab: np.ndarray

    @classmethod
    def zeros(cls, m: int, b: int) -> "BandedSymmetricMatrix":
        return cls(np.zeros((b, m), order="F"))

    @property
    def m(self) -> int:
        return self.ab.shape[1]

    @property
    def b(self) -> int:
        return self.ab.shape[0]

    def copy(self) -> "BandedSymmetricMatrix":
        return BandedSymmetricMatrix(np.asfortranarray(self.ab.copy(order="F")))

    def add(self, rows, cols, vals):
        """Accumulate entries; only the lower triangle (rows >= cols) is used.

        Callers must not pass duplicate (row, col) pairs in one call.
        """
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        keep = rows >= cols
        d = rows[keep] - cols[keep]
        if d.size and d.max() >= self.b:
            raise ValueError("entry outside the band")
        self.ab[d, cols[keep]] += np.asarray(vals)[keep]

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.m
        y = self.ab[0] * x
        for d in range(1, self.b):
            band = self.ab[d, : m - d]
            y[d:] += band * x[: m - d]
            y[: m - d] += band * x[d:]
        return y

    def to_sparse(self):
        """CSR copy holding only the structurally nonzero diagonals."""
        m = self.m
        lower = sparse.dia_array((self.ab, np.arange(0, -self.b, -1)), shape=(m, m))
        lower = sparse.csr_array(lower)
        lower.eliminate_zeros()
        return (lower + sparse.triu(lower.T, 1, format="csr")).tocsr()

    def to_dense(self) -> np.ndarray:
        m = self.m
        A = np.zeros((m, m))
        for d in range(self.b):
            idx = np.arange(m - d)
            A[idx + d, idx] = self.ab[d, : m - d]
            A[idx, idx + d] = self.ab[d, : m - d]
        return A


# -- element level ----------------------------------------------------------

def _signature_variants(dim: int, sig: int):
    return tuple((sig // 3**a) % 3 for a in range(dim))


@lru_cache(maxsize=None)
def _stiffness_table(dim: int, h: float, npts: int) -> np.ndarray:
    """Unit-conductivity element stiffness for every variant signature."""
    q = make_quadrature(dim, npts)
    table = np.empty((3**dim, 3**dim, 3**dim))
    for sig in range(3**dim):
        _, dN = tensor_basis(_signature_variants(dim, sig), q.points, h)
        table[sig] = h**dim * np.einsum("q,qai,qaj->ij", q.weights, dN, dN)
    table.setflags(write=False)
    return table


def element_stiffness(mesh: StructuredMesh, element, quad: QuadratureRule | None = None):
    """Unit-conductivity stiffness K_e = int grad N_e^T grad N_e over one element."""
    npts = 3 if quad is None else quad.points_per_axis
    idx = element if np.ndim(element) == 0 else mesh.element_index(element)
    table = _stiffness_table(mesh.dim, mesh.h, npts)
    return table[mesh.element_signature[idx]].copy()


def stiffness_table(mesh: StructuredMesh, quad: QuadratureRule | None = None):
    return _stiffness_table(mesh.dim, mesh.h, 3 if quad is None else quad.points_per_axis)


@lru_cache(maxsize=16)
def _signature_groups(mesh: StructuredMesh):
    """(signature, element indices, their parameter blocks) per variant signature."""
    sig = mesh.element_signature
    out = []
    for s in np.unique(sig):
        sel = np.flatnonzero(sig == s)
        out.append((int(s), sel, mesh.element_params[sel]))
    return out


def apply_stiffness(mesh: StructuredMesh, w, coeff=None, quad=None) -> np.ndarray:
    """Matrix-free product K(sigma) w, element by element."""
    w = np.asarray(w, dtype=float)
    table = stiffness_table(mesh, quad)
    out = np.zeros(mesh.n_params)
    for s, sel, params in _signature_groups(mesh):
        y = w[params] @ table[s]  # K_e symmetric
        if coeff is not None:
            y *= np.asarray(coeff)[sel, None]
        out += np.bincount(params.ravel(), weights=y.ravel(), minlength=mesh.n_params)
    return out


def _scatter(band: BandedSymmetricMatrix, mesh, elements, scale, quad):
    """Add scale_e * K_e for the given elements into the band."""
    elements = np.asarray(elements, dtype=np.int64)
    if elements.size == 0:
        return
    table = stiffness_table(mesh, quad)
    params = mesh.element_params[elements]
    sig = mesh.element_signature[elements]
    scale = np.broadcast_to(np.asarray(scale, dtype=float), elements.shape)
    n = params.shape[1]
    # local and global orderings agree, so a >= b selects the lower triangle
    for a in range(n):
        for b in range(a + 1):
            vals = table[sig, a, b] * scale
            band.ab[params[:, a] - params[:, b], params[:, b]] += vals


def assemble_stiffness(mesh: StructuredMesh, coeff=None, quad=None) -> BandedSymmetricMatrix:
    """Global stiffness from scratch with per-element conductivity ``coeff``."""
    band = BandedSymmetricMatrix.zeros(mesh.n_params, mesh.half_bandwidth)
    scale = 1.0 if coeff is None else np.asarray(coeff, dtype=float)
    _scatter(band, mesh, np.arange(mesh.n_elements), scale, quad)
    return band


def add_inclusion(band: BandedSymmetricMatrix, inclusion: InclusionMask, quad=None):
    """In-place update K <- K + (k - 1) sum_{e in D} K_e."""
    if inclusion.n_elements and inclusion.k != 1.0:
        _scatter(band, inclusion.mesh, inclusion.indices, inclusion.k - 1.0, quad)
    return band


def inclusion_update(inclusion: InclusionMask, quad=None):
    """Dense local form of (k - 1) sum_{e in D} K_e.

    Returns ``(support, C)`` with ``support`` the sorted global parameter
    indices touched by D and ``C`` the matching dense block.
    """
    mesh = inclusion.mesh
    idx = inclusion.indices
    params = mesh.element_params[idx]
    support, local = np.unique(params, return_inverse=True)
    local = local.reshape(params.shape)
    table = stiffness_table(mesh, quad)
    C = np.zeros((support.size, support.size))
    n = params.shape[1]
    rows = np.repeat(local, n, axis=1).ravel()
    cols = np.tile(local, (1, n)).ravel()
    vals = table[mesh.element_signature[idx]].reshape(len(idx), -1).ravel()
    np.add.at(C, (rows, cols), (inclusion.k - 1.0) * vals)
    return support, C


# -- boundary integrals -----------------------------------------------------

@lru_cache(maxsize=None)
def _face_trace_table(dim: int, npts: int):
    """Basis traces on each element face for every variant signature.

    Returns (points, weights, table) where table[sig, face] has shape
    (q_face, 3^dim) and points[face] are reference coordinates.
    """
    qf = make_quadrature(dim - 1, npts)
    pts, tables = [], np.empty((3**dim, 2 * dim, len(qf.weights), 3**dim))
    for face in range(2 * dim):
        axis, side = divmod(face, 2)
        p = np.insert(qf.points, axis, -0.5 if side == 0 else 0.5, axis=1)
        pts.append(p)
        for sig in range(3**dim):
            N, _ = tensor_basis(_signature_variants(dim, sig), p)
            tables[sig, face] = N
    return np.array(pts), qf.weights, tables


def face_quadrature(mesh: StructuredMesh, axis: int, side: int, quad=None):
    """Quadrature data for every boundary face on one side of the domain.

    Returns
    -------
    elements : (F,) element indices
    xq : (F, q, dim) physical quadrature points
    wq : (q,) physical weights (face area included)
    N : (F, q, 3^dim) basis traces
    """
    from .mesh import face_elements

    npts = 3 if quad is None else quad.points_per_axis
    pts, w, table = _face_trace_table(mesh.dim, npts)
    face = 2 * axis + side
    els = face_elements(mesh, axis, side)
    centers = (mesh.element_coords[els] + 0.5) * mesh.h
    xq = centers[:, None, :] + mesh.h * pts[face][None, :, :]
    N = table[mesh.element_signature[els], face]
    return els, xq, w * mesh.h ** (mesh.dim - 1), N


def neumann_load(mesh: StructuredMesh, flux, quad=None, check=True) -> np.ndarray:
    """Load vector p = int_{dOmega} phi N^T for a boundary current density.

    ``flux(axis, side, points)`` returns phi at physical points on that face.
    """
    p = np.zeros(mesh.n_params)
    total_abs = 0.0
    for axis in range(mesh.dim):
        for side in (0, 1):
            els, xq, wq, N = face_quadrature(mesh, axis, side, quad)
            phi = np.asarray(flux(axis, side, xq.reshape(-1, mesh.dim)), dtype=float)
            phi = phi.reshape(xq.shape[:2])
            total_abs += float(np.abs(phi) @ wq @ np.ones(len(els))) if len(els) else 0.0
            contrib = np.einsum("fq,q,fqi->fi", phi, wq, N)
            p += np.bincount(mesh.element_params[els].ravel(), weights=contrib.ravel(),
                             minlength=mesh.n_params)
    if check and abs(p.sum()) > 1e-10 * max(total_abs, 1e-300):
        raise IncompatibleDataError(
            f"boundary current does not integrate to zero: {p.sum():.3e}")
    return p


def assemble_global(mesh: StructuredMesh, inclusion: InclusionMask | None, flux, quad=None):
    """Stiffness of 1 + (k - 1) chi_D in band form and the Neumann load vector."""
    p = neumann_load(mesh, flux, quad)
    band = assemble_stiffness(mesh, quad=quad)
    if inclusion is not None and inclusion.n_elements:
        if inclusion.d0_elems == 0:
            log.warning("inclusion touches the boundary (d0 = 0)")
        add_inclusion(band, inclusion, quad)
    return band, p


@dataclass
class ElectrodeBlocks:
    """Boundary integrals of one electrode: mass of traces, trace integral, area."""

    mass_rows: np.ndarray
    mass_cols: np.ndarray
    mass_vals: np.ndarray
    vector: np.ndarray  # int_{e_l} N^T, dense over all parameters
    area: float


def electrode_blocks(mesh: StructuredMesh, faces, quad=None) -> ElectrodeBlocks:
    """Integrals over the union of boundary faces ``faces``.

    ``faces`` is an iterable of (axis, side, element) triples.
    """
    npts = 3 if quad is None else quad.points_per_axis
    pts, w, table = _face_trace_table(mesh.dim, npts)
    wq = w * mesh.h ** (mesh.dim - 1)
    n = 3**mesh.dim
    rows, cols, vals = [], [], []
    vec = np.zeros(mesh.n_params)
    faces = list(faces)
    for axis, side, e in faces:
        N = table[mesh.element_signature[e], 2 * axis + side]
        params = mesh.element_params[e]
        Me = np.einsum("q,qi,qj->ij", wq, N, N)
        rows.append(np.repeat(params, n))
        cols.append(np.tile(params, n))
        vals.append(Me.ravel())
        vec[params] += wq @ N
    cat = (lambda a: np.concatenate(a)) if faces else (lambda a: np.zeros(0))
    return ElectrodeBlocks(cat(rows).astype(np.int64), cat(cols).astype(np.int64),
                           cat(vals), vec, len(faces) * mesh.h ** (mesh.dim - 1))


@dataclass
class CemSystem:
    """Block system [[K_ww, -K_wU], [-K_wU^T, K_UU]] [w; U] = [0; I]."""

    K_ww: BandedSymmetricMatrix
    K_wU: np.ndarray  # (m, L)
    K_UU: np.ndarray  # (L,) diagonal
    currents: np.ndarray
    blocks: list
    impedances: np.ndarray

    @property
    def m(self) -> int:
        return self.K_ww.m

    @property
    def L(self) -> int:
        return len(self.currents)

    def rhs(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.m), self.currents])

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.m + self.L, self.m + self.L))
        A[: self.m, : self.m] = self.K_ww.to_dense()
        A[: self.m, self.m:] = -self.K_wU
        A[self.m:, : self.m] = -self.K_wU.T
        A[self.m:, self.m:] = np.diag(self.K_UU)
        return A

    def matvec(self, x, K_ww_matvec=None) -> np.ndarray:
        w, U = x[: self.m], x[self.m:]
        Kw = self.K_ww.matvec(w) if K_ww_matvec is None else K_ww_matvec(w)
        return np.concatenate([Kw - self.K_wU @ U, -self.K_wU.T @ w + self.K_UU * U])


def electrode_mass_band(mesh, blocks, impedances, band: BandedSymmetricMatrix):
    """Add sum_l (1/z_l) int_{e_l} N^T N into a band matrix in place."""
    for blk, z in zip(blocks, impedances):
        keep = blk.mass_rows >= blk.mass_cols
        r, c, v = blk.mass_rows[keep], blk.mass_cols[keep], blk.mass_vals[keep] / z
        np.add.at(band.ab, (r - c, c), v)
    return band


def assemble_cem(mesh: StructuredMesh, inclusion: InclusionMask | None, electrodes,
                 impedances, currents, quad=None) -> CemSystem:
    """Assemble the complete-electrode-model block system.

    ``electrodes`` is a list of face collections (see :func:`electrode_blocks`).
    """
    if len(electrodes) == 0:
        raise ValueError("at least one electrode is required to inject current")
    impedances = np.asarray(impedances, dtype=float)
    currents = np.asarray(currents, dtype=float)
    if impedances.shape != (len(electrodes),) or currents.shape != (len(electrodes),):
        raise ValueError("one impedance and one current per electrode required")
    if np.any(impedances <= 0):
        raise ValueError("surface impedances must be positive")
    if abs(currents.sum()) > 1e-12 * max(1.0, np.abs(currents).sum()):
        raise ValueError(f"current pattern must sum to zero, got {currents.sum():.3e}")
    seen = set()
    for faces in electrodes:
        keys = {tuple(int(v) for v in f) for f in faces}
        if seen & keys:
            raise ValueError("electrodes overlap")
        seen |= keys

    band = assemble_stiffness(mesh, quad=quad)
    if inclusion is not None and inclusion.n_elements:
        add_inclusion(band, inclusion, quad)
    blocks = [electrode_blocks(mesh, f, quad) for f in electrodes]
    electrode_mass_band(mesh, blocks, impedances, band)
    K_wU = np.stack([b.vector / z for b, z in zip(blocks, impedances)], axis=1)
    K_UU = np.array([b.area / z for b, z in zip(blocks, impedances)])
    return CemSystem(band, K_wU, K_UU, currents, blocks, impedances)


def count_inclusions(n_cells: int, n_i: int) -> int:
    """Number of distinct n_i-element subsets of n_cells elements (exact)."""
    if not 0 <= n_i <= n_cells:
        raise ValueError("need 0 <= n_i <= n_cells")
    return math.comb(n_cells, n_i)


def count_inclusions_up_to(n_cells: int, n_max: int) -> int:
    return sum(math.comb(n_cells, i) for i in range(1, n_max + 1))
