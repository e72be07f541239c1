"""Structured square/cube meshes of HC elements and element-aligned inclusions.

Elements and HC parameters are numbered lexicographically with the x index
running fastest.  An element with multi-index ``(i, j[, l])`` owns the
parameter block ``[i:i+3] x [j:j+3] (x [l:l+3])`` of the parameter grid,
which has ``n_e + 2`` entries per axis.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# per-axis shape-function variant codes
LEFT, INTERIOR, RIGHT = 0, 1, 2


@dataclass(frozen=True)
class StructuredMesh:
    dim: int
    n_e: int
    side_l: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n_e) != self.n_e or self.n_e < 3:
            raise ValueError(f"n_e must be an integer >= 3, got {self.n_e}")
        if not self.side_l > 0:
            raise ValueError(f"side_l must be positive, got {self.side_l}")

    @property
    def h(self) -> float:
        return self.side_l / self.n_e

    @property
    def n_elements(self) -> int:
        return self.n_e**self.dim

    @property
    def n_params_axis(self) -> int:
        return self.n_e + 2

    @property
    def n_params(self) -> int:
        return self.n_params_axis**self.dim

    @property
    def volume(self) -> float:
        return self.side_l**self.dim

    @property
    def half_bandwidth(self) -> int:
        """Half-bandwidth (diagonal included) of the lexicographic HC system."""
        q = self.n_params_axis
        return sum(2 * q**a for a in range(self.dim)) + 1

    @property
    def key(self) -> str:
        return f"{self.dim}d-n{self.n_e}-l{self.side_l!r}"

    # -- indexing -----------------------------------------------------------

    def element_index(self, multi) -> int:
        multi = tuple(int(c) for c in multi)
        if len(multi) != self.dim or not all(0 <= c < self.n_e for c in multi):
            raise IndexError(f"element {multi} outside {self.n_e}^{self.dim} grid")
        return sum(c * self.n_e**a for a, c in enumerate(multi))

    def element_multi(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_elements:
            raise IndexError(f"element index {index} out of range")
        return tuple((index // self.n_e**a) % self.n_e for a in range(self.dim))

    @cached_property
    def element_coords(self) -> np.ndarray:
        """(n_elements, dim) integer multi-indices in lexicographic order."""
        grids = np.meshgrid(*[np.arange(self.n_e)] * self.dim, indexing="ij")
        # x fastest: reverse axes so that axis 0 varies fastest in C order
        cols = [g.transpose(tuple(range(self.dim))[::-1]).ravel() for g in grids]
        return np.stack(cols, axis=1)

    @cached_property
    def local_offsets(self) -> np.ndarray:
        """Global parameter offsets of the 3^dim local parameters (x fastest)."""
        q = self.n_params_axis
        offs = []
        for loc in itertools.product(range(3), repeat=self.dim):
            loc = loc[::-1]
            offs.append(sum(c * q**a for a, c in enumerate(loc)))
        return np.array(offs, dtype=np.int64)

    @cached_property
    def element_params(self) -> np.ndarray:
        """(n_elements, 3^dim) global parameter indices of each element."""
        q = self.n_params_axis
        base = sum(self.element_coords[:, a] * q**a for a in range(self.dim))
        return base[:, None] + self.local_offsets[None, :]

    @cached_property
    def element_variants(self) -> np.ndarray:
        """(n_elements, dim) per-axis variant codes (LEFT/INTERIOR/RIGHT)."""
        c = self.element_coords
        v = np.full(c.shape, INTERIOR, dtype=np.int64)
        v[c == 0] = LEFT
        v[c == self.n_e - 1] = RIGHT
        return v

    @cached_property
    def element_signature(self) -> np.ndarray:
        """Integer code of the per-axis variant tuple, sum(v_a * 3^a)."""
        v = self.element_variants
        return sum(v[:, a] * 3**a for a in range(self.dim))

    def param_coords(self, index) -> np.ndarray:
        index = np.asarray(index)
        q = self.n_params_axis
        return np.stack([(index // q**a) % q for a in range(self.dim)], axis=-1)

    def is_boundary_element(self, multi) -> bool:
        return any(c == 0 or c == self.n_e - 1 for c in multi)


@dataclass(frozen=True)
class BoundaryFace:
    element: int
    local_face: int  # 2 * axis + (0 lower, 1 upper)
    axis: int
    sign: int
    centroid: tuple[float, ...]


def build_mesh(dim: int, n_e: int, side_l: float = 1.0) -> StructuredMesh:
    return StructuredMesh(dim, n_e, float(side_l))


def layer_distance(mesh: StructuredMesh, coords) -> np.ndarray:
    """Chebyshev-style element-layer distance of each element to the boundary."""
    c = np.atleast_2d(np.asarray(coords))
    return np.minimum(c, mesh.n_e - 1 - c).min(axis=1)


def inclusion_d0(mesh: StructuredMesh, elements) -> int:
    """Minimum number of element layers separating ``elements`` from the boundary.

    ``elements`` may hold multi-indices or flat element indices.  The physical
    distance is the returned value times ``mesh.h``.
    """
    coords = _as_coords(mesh, elements)
    if len(coords) == 0:
        raise ValueError("empty inclusion has no distance to the boundary")
    return int(layer_distance(mesh, coords).min())


def face_distance(mesh: StructuredMesh, elements, axis: int, side: int) -> int:
    """Element layers between ``elements`` and one face of the domain."""
    coords = _as_coords(mesh, elements)
    if len(coords) == 0:
        raise ValueError("empty inclusion")
    c = coords[:, axis]
    return int((c if side == 0 else mesh.n_e - 1 - c).min())


def boundary_faces(mesh: StructuredMesh) -> list[BoundaryFace]:
    faces = []
    h = mesh.h
    for axis in range(mesh.dim):
        for side in (0, 1):
            fixed = 0 if side == 0 else mesh.n_e - 1
            for e, c in enumerate(mesh.element_coords):
                if c[axis] != fixed:
                    continue
                centroid = [(ci + 0.5) * h for ci in c]
                centroid[axis] = 0.0 if side == 0 else mesh.side_l
                faces.append(
                    BoundaryFace(e, 2 * axis + side, axis, -1 if side == 0 else 1,
                                 tuple(centroid))
                )
    return faces


def face_elements(mesh: StructuredMesh, axis: int, side: int) -> np.ndarray:
    """Flat indices of the elements touching the domain face (axis, side)."""
    fixed = 0 if side == 0 else mesh.n_e - 1
    return np.flatnonzero(mesh.element_coords[:, axis] == fixed)


@dataclass(frozen=True)
class InclusionMask:
    """Element-aligned inclusion D with conductivity contrast k."""

    mesh: StructuredMesh
    elements: frozenset
    k: float
    d0_elems: int = field(init=False)

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"conductivity k must be positive, got {self.k}")
        flat = frozenset(int(e) for e in _as_flat(self.mesh, self.elements))
        object.__setattr__(self, "elements", flat)
        object.__setattr__(
            self, "d0_elems", inclusion_d0(self.mesh, sorted(flat)) if flat else -1
        )

    @property
    def indices(self) -> np.ndarray:
        return np.array(sorted(self.elements), dtype=np.int64)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def volume(self) -> float:
        return self.n_elements * self.mesh.h**self.mesh.dim

    @property
    def volume_fraction(self) -> float:
        return self.n_elements / self.mesh.n_elements

    @property
    def shape_hash(self) -> str:
        data = ",".join(map(str, sorted(self.elements))).encode()
        return hashlib.sha1(data).hexdigest()[:12]

    def coefficient(self) -> np.ndarray:
        """Per-element conductivity 1 + (k - 1) chi_D."""
        sigma = np.ones(self.mesh.n_elements)
        sigma[self.indices] = self.k
        return sigma


def block_elements(mesh: StructuredMesh, origin, side: int) -> list[int]:
    """Flat indices of the axis-aligned ``side``^dim block at ``origin``."""
    ranges = [range(o, o + side) for o in origin]
    return [mesh.element_index(c[::-1]) for c in itertools.product(*ranges[::-1])]


def _as_coords(mesh, elements) -> np.ndarray:
    elements = list(elements)
    if not elements:
        return np.zeros((0, mesh.dim), dtype=np.int64)
    if np.ndim(elements[0]) == 0:
        return mesh.element_coords[np.asarray(elements, dtype=np.int64)]
    coords = np.asarray(elements, dtype=np.int64)
    if coords.shape[1] != mesh.dim or coords.min() < 0 or coords.max() >= mesh.n_e:
        raise IndexError("inclusion element outside the mesh")
    return coords


def _as_flat(mesh, elements) -> list[int]:
    elements = list(elements)
    if not elements:
        return []
    if np.ndim(elements[0]) == 0:
        idx = [int(e) for e in elements]
        if min(idx) < 0 or max(idx) >= mesh.n_elements:
            raise IndexError("inclusion element outside the mesh")
        return idx
    return [mesh.element_index(c) for c in elements]
