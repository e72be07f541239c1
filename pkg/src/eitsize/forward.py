"""Forward problems: boundary excitations, powers W / W0 and the power gap."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import assembly
from .assembly import (
    apply_stiffness,
    assemble_cem,
    assemble_global,
    assemble_stiffness,
    inclusion_update,
    neumann_load,
)
from .hc_basis import tensor_basis
from .linsolve import InclusionUpdater, SolverError, solve_cem, solve_neumann
from .mesh import InclusionMask, StructuredMesh, face_distance

ENERGY_RTOL = 1e-9


# -- excitations ------------------------------------------------------------

@dataclass(frozen=True)
class NeumannSpec:
    """Boundary current density phi for the standard (Neumann) model.

    kind ``uniform``: phi = -A on the lower face of ``axis``, +A on the upper.
    kind ``patch``: the same, restricted to a rectangle of faces given by
    element index ranges ``patch`` (one [start, stop) per tangential axis).
    kind ``cosine``: phi = -/+ A cos(n pi x / l) on the lower/upper face of
    ``axis``, x running along ``along``; ``sign="same"`` uses +cos on both.
    """

    kind: str
    amplitude: float = 1.0
    axis: int = 0
    n: int = 0
    along: int = 0
    sign: str = "opposite"
    patch: tuple | None = None
    test_id: str = ""

    def __post_init__(self):
        if self.kind not in ("uniform", "patch", "cosine"):
            raise ValueError(f"unknown Neumann data kind {self.kind!r}")
        if self.sign not in ("opposite", "same"):
            raise ValueError("sign must be 'opposite' or 'same'")
        if self.kind == "cosine":
            if self.n < 0:
                raise ValueError("cosine frequency n must be >= 0")
            if self.sign == "same" and self.n == 0:
                raise ValueError("n = 0 with equal signs injects net current")
            if self.along == self.axis:
                raise ValueError("cosine must vary along a tangential axis")
        if self.kind == "patch" and self.patch is None:
            raise ValueError("patch data needs index ranges")

    @property
    def reference_face(self) -> tuple[int, int]:
        return (self.axis, 1)

    @property
    def descriptor(self) -> str:
        if self.kind == "cosine":
            return f"cosine(n={self.n},{self.sign})"
        if self.kind == "patch":
            return f"patch(axis={self.axis},{list(map(list, self.patch))})"
        return f"uniform(axis={self.axis})"

    def flux(self, mesh: StructuredMesh):
        """phi as a function ``(axis, side, points) -> values``."""
        A, l, h = self.amplitude, mesh.side_l, mesh.h
        tangential = [a for a in range(mesh.dim) if a != self.axis]

        def phi(axis, side, pts):
            pts = np.asarray(pts, dtype=float)
            out = np.zeros(len(pts))
            if axis != self.axis:
                return out
            s = 1.0 if side == 1 else -1.0
            if self.kind == "uniform":
                out[:] = s * A
            elif self.kind == "patch":
                inside = np.ones(len(pts), dtype=bool)
                for t, (lo, hi) in zip(tangential, self.patch):
                    inside &= (pts[:, t] >= lo * h) & (pts[:, t] <= hi * h)
                out[inside] = s * A
            else:
                if self.sign == "same":
                    s = 1.0
                out[:] = s * A * np.cos(self.n * math.pi * pts[:, self.along] / l)
            return out

        return phi


def neumann_t1(dim: int, amplitude=1.0) -> NeumannSpec:
    return NeumannSpec("uniform", amplitude, axis=0, test_id="T1")


def neumann_t2(mesh: StructuredMesh, width: int | None = None, amplitude=1.0) -> NeumannSpec:
    """Centred patches of ``width`` elements on the two x faces."""
    width = math.ceil(mesh.n_e / 3) if width is None else width
    lo = (mesh.n_e - width) // 2
    patch = tuple((lo, lo + width) for _ in range(mesh.dim - 1))
    return NeumannSpec("patch", amplitude, axis=0, patch=patch, test_id="T2")


def neumann_cosine(dim: int, n: int, amplitude=1.0, sign="opposite") -> NeumannSpec:
    return NeumannSpec("cosine", amplitude, axis=dim - 1, n=n, along=0, sign=sign,
                       test_id=f"cos{n}")


@dataclass(frozen=True)
class Electrode:
    """Rectangle of boundary faces on the domain face (axis, side)."""

    axis: int
    side: int
    ranges: tuple  # [start, stop) element ranges, one per tangential axis

    def faces(self, mesh: StructuredMesh):
        tang = [a for a in range(mesh.dim) if a != self.axis]
        if len(self.ranges) != len(tang):
            raise ValueError("one index range per tangential axis required")
        for lo, hi in self.ranges:
            if not 0 <= lo < hi <= mesh.n_e:
                raise ValueError(f"electrode range [{lo}, {hi}) outside the face")
        fixed = 0 if self.side == 0 else mesh.n_e - 1
        out = []
        grids = np.meshgrid(*[np.arange(lo, hi) for lo, hi in self.ranges], indexing="ij")
        for idx in zip(*[g.ravel() for g in grids]):
            multi = [0] * mesh.dim
            multi[self.axis] = fixed
            for t, v in zip(tang, idx):
                multi[t] = int(v)
            out.append((self.axis, self.side, mesh.element_index(multi)))
        return sorted(out)

    def area(self, mesh: StructuredMesh) -> float:
        return math.prod(hi - lo for lo, hi in self.ranges) * mesh.h ** (mesh.dim - 1)


@dataclass(frozen=True)
class ElectrodeLayout:
    electrodes: tuple
    impedances: tuple
    currents: tuple
    test_id: str = ""
    reference: tuple = (0, 1)
    metadata: tuple = ()  # (name, value) pairs: delta1, m, M ...

    @property
    def reference_face(self) -> tuple[int, int]:
        return tuple(self.reference)

    @property
    def descriptor(self) -> str:
        els = ";".join(f"{e.axis}{'-+'[e.side]}{list(map(list, e.ranges))}"
                       for e in self.electrodes)
        return f"cem({els};z={list(self.impedances)};I={list(self.currents)})"

    def validate(self, mesh: StructuredMesh):
        L = len(self.electrodes)
        if L == 0:
            raise ValueError("no electrodes: current cannot be injected")
        if len(self.impedances) != L or len(self.currents) != L:
            raise ValueError("one impedance and one current per electrode required")
        if any(not z > 0 for z in self.impedances):
            raise ValueError("surface impedances must be positive")
        if abs(sum(self.currents)) > 1e-12 * max(1.0, sum(map(abs, self.currents))):
            raise ValueError("current pattern must sum to zero")
        for i in range(L):
            for j in range(i + 1, L):
                a, b = self.electrodes[i], self.electrodes[j]
                if (a.axis, a.side) != (b.axis, b.side):
                    continue
                gaps = [max(lb - ha, la - hb)
                        for (la, ha), (lb, hb) in zip(a.ranges, b.ranges)]
                if max(gaps) < 1:
                    raise ValueError(
                        f"electrodes {i} and {j} overlap or touch (need >= 1 face gap)")
        for e in self.electrodes:
            e.faces(mesh)

    def face_sets(self, mesh: StructuredMesh):
        return [e.faces(mesh) for e in self.electrodes]


def _full_face(mesh, axis, side):
    return Electrode(axis, side, tuple((0, mesh.n_e) for _ in range(mesh.dim - 1)))


def _centred(mesh, axis, side, size):
    lo = (mesh.n_e - size) // 2
    return Electrode(axis, side, tuple((lo, lo + size) for _ in range(mesh.dim - 1)))


def cem_t1(mesh: StructuredMesh, zeta=0.2, currents=(1.0, -1.0)) -> ElectrodeLayout:
    """Electrodes covering the two x faces; z = zeta * l (unit conductivity)."""
    z = zeta * mesh.side_l
    return ElectrodeLayout((_full_face(mesh, 0, 0), _full_face(mesh, 0, 1)), (z, z),
                           tuple(currents), "T1", (0, 1))


def cem_t2(mesh: StructuredMesh, zeta=0.2, size=1, currents=(1.0, -1.0)) -> ElectrodeLayout:
    """Full x = 0 face against a centred size x size electrode on x = l."""
    z = zeta * mesh.side_l
    return ElectrodeLayout((_full_face(mesh, 0, 0), _centred(mesh, 0, 1, size)), (z, z),
                           tuple(currents), f"T2s{size}", (0, 1))


def cem_t3(mesh: StructuredMesh, zeta=0.2, size=1, gap=3, currents=(1.0, -1.0)):
    """Two electrodes on the top face, symmetric about its middle lines."""
    z = zeta * mesh.side_l
    top = mesh.dim - 1
    i1 = (mesh.n_e - 2 * size - gap) // 2
    i2 = i1 + size + gap
    mid = (mesh.n_e - size) // 2
    rest = tuple((mid, mid + size) for _ in range(mesh.dim - 2))
    e1 = Electrode(top, 1, ((i1, i1 + size),) + rest)
    e2 = Electrode(top, 1, ((i2, i2 + size),) + rest)
    return ElectrodeLayout((e1, e2), (z, z), tuple(currents), "T3", (top, 1))


# -- solutions --------------------------------------------------------------

@dataclass
class PowerResult:
    W: float
    w: np.ndarray
    energy: float
    stats: object
    U: np.ndarray | None = None


def _check_energy(W, energy):
    scale = max(abs(W), abs(energy), 1e-300)
    if abs(W - energy) > ENERGY_RTOL * scale:
        raise SolverError(f"power {W:.12g} and energy {energy:.12g} disagree")


def power_neumann(mesh: StructuredMesh, inclusion: InclusionMask | None, spec: NeumannSpec,
                  quad=None) -> PowerResult:
    """W = int u phi for the Neumann problem, cross-checked against the energy."""
    K, p = assemble_global(mesh, inclusion, spec.flux(mesh), quad)
    coeff = None if inclusion is None else inclusion.coefficient()

    def mv(x):
        return apply_stiffness(mesh, x, coeff, quad)

    w, stats = solve_neumann(K, p, matvec=mv, overwrite=True)
    del K
    W = float(p @ w)
    energy = float(w @ mv(w))
    _check_energy(W, energy)
    return PowerResult(W, w, energy, stats)


def cem_energy(system, w, U) -> float:
    """sum sigma|grad u|^2 + sum_l (1/z_l) int_{e_l} (u - U_l)^2 of a solution."""
    total = 0.0
    for blk, z, Ul in zip(system.blocks, system.impedances, U):
        Mw = np.bincount(blk.mass_rows, weights=blk.mass_vals * w[blk.mass_cols],
                         minlength=len(w))
        total += (w @ Mw - 2 * Ul * (blk.vector @ w) + Ul**2 * blk.area) / z
    return total


def power_cem(mesh: StructuredMesh, inclusion: InclusionMask | None,
              layout: ElectrodeLayout, quad=None) -> PowerResult:
    """W = sum_l I_l U^l for the complete electrode model."""
    layout.validate(mesh)
    system = assemble_cem(mesh, inclusion, layout.face_sets(mesh), layout.impedances,
                          layout.currents, quad)
    w, U, stats = solve_cem(system)
    W = float(np.dot(layout.currents, U))
    coeff = None if inclusion is None else inclusion.coefficient()
    energy = float(w @ apply_stiffness(mesh, w, coeff, quad)) + cem_energy(system, w, U)
    _check_energy(W, energy)
    return PowerResult(W, w, energy, stats, U)


@dataclass
class SolveRecord:
    test_id: str
    model: str
    dim: int
    n_e: int
    k: float
    d0_elems: int
    d03_elems: int
    n_elements: int
    volume_fraction: float
    W0: float
    W: float
    gap: float
    seed: int = 0
    status: str = "ok"
    mesh_key: str = ""
    shape_hash: str = ""
    excitation: str = ""
    generator: str = ""

    def to_dict(self):
        return asdict(self)


class ForwardModel:
    """Paired solves on one mesh with one excitation.

    The homogeneous solution is computed once.  Inclusions are handled as a
    low-rank update of the homogeneous system when the system is small
    enough to hold its inverse (``dense_limit`` unknowns), and by a fresh
    band factorization otherwise.
    """

    def __init__(self, mesh: StructuredMesh, excitation, quad=None, dense_limit=7000):
        self.mesh = mesh
        self.excitation = excitation
        self.quad = quad
        self.dense_limit = dense_limit
        self.model = "cem" if isinstance(excitation, ElectrodeLayout) else "neumann"
        self._K = assemble_stiffness(mesh, quad=quad)
        if self.model == "cem":
            excitation.validate(mesh)
            self._faces = excitation.face_sets(mesh)
            self._system = assemble_cem(mesh, None, self._faces, excitation.impedances,
                                        excitation.currents, quad)
        else:
            self._p = neumann_load(mesh, excitation.flux(mesh), quad)
        self._updater = None
        self._homog = None

    @property
    def n_unknowns(self) -> int:
        extra = len(self.excitation.electrodes) if self.model == "cem" else 0
        return self.mesh.n_params + extra

    def homogeneous(self) -> PowerResult:
        if self._homog is None:
            self._homog = self._solve_full(None)
        return self._homog

    @property
    def W0(self) -> float:
        return self.homogeneous().W

    def _solve_full(self, inclusion) -> PowerResult:
        if self.model == "cem":
            return power_cem(self.mesh, inclusion, self.excitation, self.quad)
        K = self._K.copy()
        if inclusion is not None:
            assembly.add_inclusion(K, inclusion, self.quad)
        coeff = None if inclusion is None else inclusion.coefficient()
        w, stats = solve_neumann(K, self._p)
        W = float(self._p @ w)
        energy = float(w @ apply_stiffness(self.mesh, w, coeff, self.quad))
        _check_energy(W, energy)
        return PowerResult(W, w, energy, stats)

    def _get_updater(self) -> InclusionUpdater:
        if self._updater is None:
            if self.model == "cem":
                s = self._system
                K_ww = s.K_ww.to_sparse()
                self._updater = InclusionUpdater(
                    s.to_dense(), s.rhs(), lambda x: s.matvec(x, K_ww.__matmul__))
            else:
                self._updater = InclusionUpdater(self._K.to_dense(), self._p,
                                                 self._K.to_sparse().__matmul__)
        return self._updater

    def solve(self, inclusion: InclusionMask) -> PowerResult:
        if inclusion.n_elements == 0 or inclusion.k == 1.0:
            return self.homogeneous()
        if self.n_unknowns > self.dense_limit:
            return self._solve_full(inclusion)
        upd = self._get_updater()
        support, C = inclusion_update(inclusion, self.quad)
        x, res, _ = upd.solve(support, C)
        m = self.mesh.n_params
        w = x[:m]
        energy = float(w @ apply_stiffness(self.mesh, w, inclusion.coefficient(), self.quad))
        if self.model == "cem":
            U = x[m:]
            W = float(np.dot(self.excitation.currents, U))
            energy += cem_energy(self._system, w, U)
            c = w.mean()
            w, U = w - c, U - c
        else:
            U = None
            W = float(self._p @ w)
            w = w - w.mean()
        _check_energy(W, energy)
        return PowerResult(W, w, energy, res, U)

    def run_pair(self, inclusion: InclusionMask, seed: int = 0) -> SolveRecord:
        if inclusion.n_elements == 0:
            raise ValueError("run_pair needs a non-empty inclusion")
        W0 = self.W0
        W = self.solve(inclusion).W
        axis, side = self.excitation.reference_face
        return SolveRecord(
            test_id=self.excitation.test_id,
            model=self.model,
            dim=self.mesh.dim,
            n_e=self.mesh.n_e,
            k=float(inclusion.k),
            d0_elems=inclusion.d0_elems,
            d03_elems=face_distance(self.mesh, inclusion.indices, axis, side),
            n_elements=inclusion.n_elements,
            volume_fraction=inclusion.volume_fraction,
            W0=W0,
            W=W,
            gap=abs(W - W0) / W0,
            seed=seed,
            mesh_key=self.mesh.key,
            shape_hash=inclusion.shape_hash,
            excitation=self.excitation.descriptor,
        )


@lru_cache(maxsize=8)
def forward_model(mesh: StructuredMesh, excitation) -> ForwardModel:
    """Shared model per (mesh, excitation); keeps the homogeneous solve cached."""
    return ForwardModel(mesh, excitation)


def run_pair(mesh: StructuredMesh, inclusion: InclusionMask, excitation, seed=0):
    return forward_model(mesh, excitation).run_pair(inclusion, seed)


# -- field evaluation and critical points -----------------------------------

def evaluate_field(mesh: StructuredMesh, w, points):
    """Interpolated potential and gradient at physical points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    e = np.clip(np.floor(pts / mesh.h).astype(np.int64), 0, mesh.n_e - 1)
    xi = pts / mesh.h - e - 0.5
    flat = sum(e[:, a] * mesh.n_e**a for a in range(mesh.dim))
    u = np.empty(len(pts))
    g = np.empty((len(pts), mesh.dim))
    sig = mesh.element_signature[flat]
    for s in np.unique(sig):
        sel = np.flatnonzero(sig == s)
        N, dN = tensor_basis(mesh.element_variants[flat[sel[0]]], xi[sel], mesh.h)
        wl = w[mesh.element_params[flat[sel]]]
        u[sel] = np.einsum("qi,qi->q", N, wl)
        g[sel] = np.einsum("qai,qi->qa", dN, wl)
    return u, g


def analytic_critical_lines(n: int, side_l: float = 1.0):
    """(x, z) positions of the lines where grad u0 vanishes for cosine data
    -/+cos(n pi x / l) on z = 0 / z = l: x = (l/n)(1/2 + i), z = l/2."""
    if n < 1:
        raise ValueError("no critical lines for n < 1")
    return [(side_l / n * (0.5 + i), side_l / 2) for i in range(n)]


def critical_points(mesh: StructuredMesh, spec: NeumannSpec, w0=None, probes_per_element=4):
    """Local minima of |grad u0| on a probe grid of the (along, axis) plane.

    The plane passes through the middle of the remaining axis (3-D).  Returns
    a list of (x, z) coordinates, one per cluster of minimal probes.
    """
    if spec.kind != "cosine":
        raise ValueError("critical points are defined for cosine data")
    if spec.n < 1:
        raise ValueError("n = 0: the gradient of u0 never vanishes")
    if w0 is None:
        w0 = power_neumann(mesh, None, spec).w
    P = probes_per_element * mesh.n_e
    t = (np.arange(P) + 0.5) * mesh.side_l / P
    X, Z = np.meshgrid(t, t, indexing="ij")
    pts = np.full((P * P, mesh.dim), mesh.side_l / 2)
    pts[:, spec.along] = X.ravel()
    pts[:, spec.axis] = Z.ravel()
    _, g = evaluate_field(mesh, w0, pts)
    mag = np.linalg.norm(g, axis=1).reshape(P, P)
    padded = np.pad(mag, 1, constant_values=np.inf)
    is_min = np.ones_like(mag, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                nb = padded[1 + di:1 + di + P, 1 + dj:1 + dj + P]
                is_min &= mag <= nb
    is_min[0, :] = is_min[-1, :] = is_min[:, 0] = is_min[:, -1] = False
    from scipy import ndimage

    labels, count = ndimage.label(is_min, structure=np.ones((3, 3)))
    out = []
    for lab in range(1, count + 1):
        ii, jj = np.nonzero(labels == lab)
        out.append((float(t[ii].mean()), float(t[jj].mean())))
    return sorted(out)
