"""Direct solvers for the singular Neumann system and the CEM block system.

Both systems have the constant field in their nullspace.  It is removed by
pinning the first parameter to zero (keeps the band intact); the returned
solutions are re-centred to zero parameter mean.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, lapack

from .assembly import BandedSymmetricMatrix, CemSystem

RTOL = 1e-10
PIN = 0


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class SolveStats:
    m: int
    b: int
    decomposition_mults: int
    decomposition_adds: int
    solve_mults: int
    residual: float
    wall_time: float
    method: str = "band-cholesky"


def flop_model(m: int, b: int) -> tuple[int, int, int]:
    """Simple operation-count model of a band decomposition and solve:
    ``(m(b-1), m b (b-1), m b)``."""
    if m < 1 or b < 1:
        raise ValueError("m and b must be >= 1")
    return m * (b - 1), m * b * (b - 1), m * b


def _stats(m, b, residual, t0, method="band-cholesky"):
    dm, da, sm = flop_model(m, b)
    return SolveStats(m, b, dm, da, sm, residual, time.perf_counter() - t0, method)


def pin_band(band: BandedSymmetricMatrix, index: int = PIN):
    """Replace row/column ``index`` by the identity (in place)."""
    ab = band.ab
    ab[:, index] = 0.0
    for d in range(1, min(band.b, index + 1)):
        ab[d, index - d] = 0.0
    ab[0, index] = 1.0
    return band


def band_factor(band: BandedSymmetricMatrix, overwrite=False) -> np.ndarray:
    try:
        return cholesky_banded(band.ab, overwrite_ab=overwrite, lower=True,
                               check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"band factorization failed: {exc}") from exc


def band_solve(factor: np.ndarray, rhs) -> np.ndarray:
    return cho_solve_banded((factor, True), rhs, check_finite=False)


def relative_residual(r, rhs) -> float:
    nr = float(np.linalg.norm(rhs))
    return float(np.linalg.norm(r)) / nr if nr > 0 else float(np.linalg.norm(r))


def solve_neumann(K: BandedSymmetricMatrix, p, *, matvec=None, overwrite=False, rtol=RTOL):
    """Solve K w = p for the pure-Neumann stiffness K (constant nullspace).

    Parameters
    ----------
    K : BandedSymmetricMatrix
        Unpinned stiffness.  Consumed when ``overwrite`` is true, in which
        case ``matvec`` (an independent product with K) is required for the
        residual check.
    p : array_like
        Load vector; must be orthogonal to the constant vector.
    """
    t0 = time.perf_counter()
    p = np.asarray(p, dtype=float)
    m, b = K.m, K.b
    scale = max(float(np.abs(p).sum()), 1e-300)
    if abs(p.sum()) > rtol * scale:
        raise SolverError(f"load not orthogonal to constants (sum = {p.sum():.3e})")
    if not np.any(p):
        return np.zeros(m), _stats(m, b, 0.0, t0)
    if overwrite and matvec is None:
        raise ValueError("overwrite=True needs an independent matvec for the residual")
    mv = matvec if matvec is not None else K.matvec
    work = K if overwrite else K.copy()
    pin_band(work)
    rhs = p.copy()
    rhs[PIN] = 0.0
    factor = band_factor(work, overwrite=True)
    del work
    w = band_solve(factor, rhs)
    res = relative_residual(mv(w) - p, p)
    if not res <= rtol:
        raise SolverError(f"relative residual {res:.3e} above {rtol:.0e}", res)
    w -= w.mean()
    return w, _stats(m, b, res, t0)


def solve_cem(system: CemSystem, *, rtol=RTOL):
    """Solve the CEM block system; returns (w, U, stats).

    K_ww is SPD (the electrode mass term removes the constant), so it is
    factored in band form and the electrode unknowns are eliminated through
    the L x L Schur complement, which is singular only along (1, ..., 1).
    """
    t0 = time.perf_counter()
    I = system.currents
    m, L = system.m, system.L
    if not np.any(I):
        return np.zeros(m), np.zeros(L), _stats(m, system.K_ww.b, 0.0, t0)
    factor = band_factor(system.K_ww)
    X = band_solve(factor, system.K_wU)
    S = np.diag(system.K_UU) - system.K_wU.T @ X
    S = 0.5 * (S + S.T)
    U = np.linalg.solve(S + np.ones((L, L)) / L, I)
    w = X @ U
    rhs = system.rhs()
    x = np.concatenate([w, U])
    res = relative_residual(system.matvec(x) - rhs, rhs)
    if not res <= rtol:
        raise SolverError(f"relative residual {res:.3e} above {rtol:.0e}", res)
    c = w.mean()
    return w - c, U - c, _stats(m, system.K_ww.b, res, t0)


class InclusionUpdater:
    """Repeated solves of (A0 + P C P^T) x = f for a fixed base A0.

    The base (homogeneous) system is pinned and inverted once; each
    inclusion then costs one dense solve of the size of its parameter
    support (capacitance form of the Sherman-Morrison-Woodbury identity).
    Every solution is checked against the unpinned residual.

    Parameters
    ----------
    A0 : ndarray
        Dense unpinned base matrix (n x n).  Row/column PIN is pinned.
    f : ndarray
        Right-hand side shared by all solves.
    base_matvec : callable
        Product with the unpinned base matrix, for residual checks.
    """

    def __init__(self, A0: np.ndarray, f, base_matvec, rtol=RTOL):
        t0 = time.perf_counter()
        A = np.array(A0, dtype=float, order="F")
        A[PIN, :] = 0.0
        A[:, PIN] = 0.0
        A[PIN, PIN] = 1.0
        c, info = lapack.dpotrf(A, lower=1, overwrite_a=1, clean=1)
        if info != 0:
            raise SolverError(f"base factorization failed (info={info})")
        inv, info = lapack.dpotri(c, lower=1, overwrite_c=1)
        if info != 0:
            raise SolverError(f"base inversion failed (info={info})")
        inv = np.tril(inv)
        inv += np.tril(inv, -1).T
        self.inv = inv
        self.f = np.asarray(f, dtype=float)
        rhs = self.f.copy()
        rhs[PIN] = 0.0
        self.x0 = inv @ rhs
        self.base_matvec = base_matvec
        self.rtol = rtol
        self.setup_time = time.perf_counter() - t0

    @property
    def n(self) -> int:
        return self.inv.shape[0]

    def solve(self, support, C):
        """Solution for the update P C P^T on parameter indices ``support``."""
        t0 = time.perf_counter()
        support = np.asarray(support, dtype=np.int64)
        keep = support != PIN
        S, Ck = support[keep], C[np.ix_(keep, keep)]
        G = self.inv[np.ix_(S, S)]
        y = np.linalg.solve(np.eye(len(S)) + G @ Ck, self.x0[S])
        x = self.x0 - self.inv[:, S] @ (Ck @ y)
        Ax = self.base_matvec(x)
        Ax[support] += C @ x[support]
        res = relative_residual(Ax - self.f, self.f)
        if not res <= self.rtol:
            raise SolverError(f"relative residual {res:.3e} above {self.rtol:.0e}", res)
        return x, res, time.perf_counter() - t0
