"""Inclusion generators and the batch runner producing SolveRecords."""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .forward import ForwardModel, SolveRecord
from .linsolve import SolverError
from .mesh import InclusionMask, StructuredMesh, block_elements, layer_distance

log = logging.getLogger(__name__)

GENERATORS = ("blocks", "connected-exhaustive", "connected-sampled", "connected")
MAX_FAILURE_RATE = 0.01


class SweepAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepPlan:
    mesh: StructuredMesh
    excitation: object
    k_values: tuple = (0.1, 10.0)
    generator: str = "blocks"
    sizes: tuple = (1, 5)  # inclusive range of block sides / element counts
    d0_min: int = 1
    d03_min: int | None = None
    volume_cap: float = 0.06
    samples: int = 100
    exhaustive_max: int = 7
    octant: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if not 0 < self.volume_cap <= 1:
            raise ValueError("volume cap must lie in (0, 1]")
        lo, hi = self.sizes
        if not 1 <= lo <= hi:
            raise ValueError(f"empty or invalid size range {self.sizes}")
        for k in self.k_values:
            if not k > 0 or k == 1:
                raise ValueError(f"sweep contrasts must be positive and != 1, got {k}")


def gen_blocks(mesh: StructuredMesh, side_range, d0_min: int = 0, d03=None):
    """All axis-aligned s^dim blocks with s in ``side_range`` (inclusive pair or
    iterable) lying at least ``d0_min`` element layers inside the boundary.

    ``d03`` optionally adds ``(axis, side, min_layers)`` for one face.
    """
    sides = _size_list(side_range)
    out = []
    for s in sides:
        lo, hi = d0_min, mesh.n_e - d0_min - s
        if hi < lo:
            continue
        coords = range(lo, hi + 1)
        for origin in itertools.product(*[coords] * mesh.dim):
            origin = origin[::-1]  # x fastest
            if d03 is not None:
                axis, side, need = d03
                dist = origin[axis] if side == 0 else mesh.n_e - origin[axis] - s
                if dist < need:
                    continue
            out.append(block_elements(mesh, origin, s))
    return out


def _size_list(size_range):
    if isinstance(size_range, int):
        return [size_range]
    size_range = list(size_range)
    if len(size_range) == 2:
        return list(range(size_range[0], size_range[1] + 1))
    return size_range


def _allowed_cells(mesh: StructuredMesh, d0_min: int, d03=None) -> np.ndarray:
    coords = mesh.element_coords
    ok = layer_distance(mesh, coords) >= d0_min
    if d03 is not None:
        axis, side, need = d03
        c = coords[:, axis]
        ok &= (c if side == 0 else mesh.n_e - 1 - c) >= need
    return ok


def _octant_cells(mesh: StructuredMesh) -> np.ndarray:
    half = math.ceil(mesh.n_e / 2)
    return np.all(mesh.element_coords < half, axis=1)


def _neighbours(mesh: StructuredMesh, allowed: np.ndarray):
    coords = mesh.element_coords
    adj = {}
    for e in np.flatnonzero(allowed):
        nb = []
        for a in range(mesh.dim):
            for step in (-1, 1):
                c = coords[e, a] + step
                if 0 <= c < mesh.n_e:
                    f = e + step * mesh.n_e**a
                    if allowed[f]:
                        nb.append(int(f))
        adj[int(e)] = nb
    return adj


def enumerate_connected(adj: dict, size: int):
    """Every connected ``size``-subset of the graph exactly once (Redelmeier).

    Each subset is grown from its smallest node; yields sorted tuples.
    """
    for root in sorted(adj):
        marked = {root}
        poly = []

        def grow(untried):
            untried = list(untried)
            while untried:
                cell = untried.pop()
                poly.append(cell)
                if len(poly) == size:
                    yield tuple(sorted(poly))
                else:
                    new = [u for u in adj[cell] if u > root and u not in marked]
                    marked.update(new)
                    yield from grow(untried + new)
                    marked.difference_update(new)
                poly.pop()

        yield from grow([root])


def gen_connected(mesh: StructuredMesh, n_i: int, d0_min: int = 1, mode: str = "exhaustive",
                  seed: int = 0, sample_count: int = 100, octant: bool = False, d03=None,
                  max_attempts: int | None = None):
    """Face-connected element sets of ``n_i`` elements.

    mode ``exhaustive`` lists all of them; mode ``sampled`` grows random sets by
    repeatedly adding a uniformly chosen free neighbour, discarding repeats.
    The sampled sets are not uniform over all shapes.  With ``octant`` the
    set must contain an element of the first octant (seed element filter).
    """
    if n_i < 1:
        raise ValueError("n_i must be >= 1")
    allowed = _allowed_cells(mesh, d0_min, d03)
    adj = _neighbours(mesh, allowed)
    in_oct = _octant_cells(mesh) if octant else None
    if mode == "exhaustive":
        out = []
        for s in enumerate_connected(adj, n_i):
            if in_oct is None or in_oct[list(s)].any():
                out.append(list(s))
        return sorted(out)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    seeds = [e for e in sorted(adj) if in_oct is None or in_oct[e]]
    if not seeds:
        return []
    max_attempts = 50 * sample_count if max_attempts is None else max_attempts
    seen, out = set(), []
    for _ in range(max_attempts):
        if len(out) >= sample_count:
            break
        cell = seeds[rng.integers(len(seeds))]
        members = {cell}
        frontier = sorted(set(adj[cell]))
        while len(members) < n_i and frontier:
            nxt = frontier.pop(rng.integers(len(frontier)))
            members.add(nxt)
            frontier = sorted((set(frontier) | set(adj[nxt])) - members)
        if len(members) < n_i:
            continue
        key = frozenset(members)
        if key not in seen:
            seen.add(key)
            out.append(sorted(members))
    if len(out) < sample_count:
        log.warning("only %d distinct %d-element sets found (requested %d)",
                    len(out), n_i, sample_count)
    return out


@dataclass
class GeneratedSet:
    elements: list
    size: int
    mode: str


def generate_inclusions(plan: SweepPlan):
    """Element sets for a plan, in deterministic order, with volume cap applied."""
    mesh = plan.mesh
    d03 = None
    if plan.d03_min is not None:
        axis, side = plan.excitation.reference_face
        d03 = (axis, side, plan.d03_min)
    cap = math.floor(plan.volume_cap * mesh.n_elements + 1e-9)
    out = []
    lo, hi = plan.sizes
    if plan.generator == "blocks":
        for s in range(lo, hi + 1):
            if s**mesh.dim > cap:
                break
            out += [GeneratedSet(b, s, "blocks") for b in gen_blocks(mesh, s, plan.d0_min, d03)]
        return out
    for n_i in range(lo, hi + 1):
        if n_i > cap:
            break
        if plan.generator == "connected-exhaustive" or (
                plan.generator == "connected" and n_i <= plan.exhaustive_max):
            mode = "exhaustive"
        else:
            mode = "sampled"
        sets = gen_connected(mesh, n_i, plan.d0_min, mode, plan.seed + n_i, plan.samples,
                             plan.octant, d03)
        log.info("size %d: %d sets (%s)", n_i, len(sets), mode)
        out += [GeneratedSet(s, n_i, mode) for s in sets]
    return out


# -- runner -----------------------------------------------------------------

_WORKER_MODEL = None


def _init_worker(mesh, excitation):
    global _WORKER_MODEL
    _WORKER_MODEL = ForwardModel(mesh, excitation)


def _solve_chunk(args):
    tasks, seed = args
    return [_solve_one(_WORKER_MODEL, *task, seed) for task in tasks]


def _solve_one(model: ForwardModel, elements, k, generator, seed):
    inc = InclusionMask(model.mesh, elements, k)
    try:
        rec = model.run_pair(inc, seed)
    except (SolverError, np.linalg.LinAlgError) as exc:
        mesh = model.mesh
        rec = SolveRecord(model.excitation.test_id, model.model, mesh.dim, mesh.n_e, float(k),
                          inc.d0_elems, -1, inc.n_elements, inc.volume_fraction,
                          math.nan, math.nan, math.nan, seed, f"failed: {exc}",
                          mesh.key, inc.shape_hash, model.excitation.descriptor)
    rec.generator = generator
    return rec


def sweep_summary(plan: SweepPlan, sets) -> dict:
    """Per-size set counts and generation modes, for provenance files."""
    sizes = {}
    for g in sets:
        entry = sizes.setdefault(g.size, {"mode": g.mode, "sets": 0})
        entry["sets"] += 1
    return {
        "mesh": plan.mesh.key,
        "excitation": plan.excitation.descriptor,
        "generator": plan.generator,
        "k_values": list(plan.k_values),
        "seed": plan.seed,
        "samples_requested": plan.samples,
        "sizes": {str(s): v for s, v in sorted(sizes.items())},
    }


def run_sweep(plan: SweepPlan, workers: int | None = 1, progress=None, sets=None):
    """One SolveRecord per (inclusion, k), in generation order.

    ``workers`` > 1 fans the solves out over processes; the gather order is
    the generation order, so the output does not depend on the worker count.
    ``sets`` may pass a precomputed :func:`generate_inclusions` result.
    """
    sets = generate_inclusions(plan) if sets is None else sets
    tasks = [(g.elements, k, _provenance(g)) for g in sets for k in plan.k_values]
    if not tasks:
        return []
    workers = (os.cpu_count() or 1) if workers is None else max(1, workers)
    records = []
    if workers == 1:
        model = ForwardModel(plan.mesh, plan.excitation)
        failed = 0
        for i, task in enumerate(tasks):
            records.append(_solve_one(model, *task, plan.seed))
            failed += records[-1].status != "ok"
            _check_failures(failed, len(tasks))
            if progress is not None:
                progress(i + 1, len(tasks))
    else:
        n_chunks = min(len(tasks), 4 * workers)
        bounds = np.linspace(0, len(tasks), n_chunks + 1).astype(int)
        chunks = [(tasks[a:b], plan.seed) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(plan.mesh, plan.excitation)) as pool:
            for part in pool.map(_solve_chunk, chunks):
                records += part
                _check_failures(sum(r.status != "ok" for r in records), len(tasks))
                if progress is not None:
                    progress(len(records), len(tasks))
    return records


def _provenance(g: GeneratedSet) -> str:
    return "blocks" if g.mode == "blocks" else f"connected-{g.mode}"


def _check_failures(failed, total):
    if failed > MAX_FAILURE_RATE * total:
        raise SweepAborted(f"{failed} of {total} solves failed")
