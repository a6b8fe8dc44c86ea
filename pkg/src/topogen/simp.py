"""Density-based compliance minimization with optimality-criteria updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from . import fea

# Multiplicative OC updates cannot leave zero, so densities are floored.
DENSITY_FLOOR = 1e-3


@dataclass(frozen=True)
class SimpParams:
    penal: float = 3.0
    filter_radius: float = 1.5
    move: float = 0.2
    max_iters: int = 100
    tol: float = 0.01  # max per-element density change

    def __post_init__(self):
        if self.penal <= 1.0:
            raise ValueError("penalization exponent must exceed 1")
        if self.filter_radius < 1.0:
            raise ValueError("filter radius must be at least one element")
        if not 0.0 < self.move <= 1.0:
            raise ValueError("move limit must lie in (0, 1]")


@dataclass
class SimpResult:
    densities: np.ndarray  # (ny, nx), continuous
    history: list = field(default_factory=list)  # compliance per iteration
    converged: bool = True
    iterations: int = 0


def sensitivity(domain: fea.GridDomain, bc: fea.BoundaryCondition, loads,
                densities: np.ndarray, penal: float = 3.0) -> np.ndarray:
    """dC/dx per element: -p x^(p-1) (e0 - e_min) u_e^T ke u_e, always <= 0."""
    mat = domain.material
    u = fea.solve_fea(domain, bc, loads, densities, penal)
    energies = fea.element_energies(domain, u)
    x = np.asarray(densities, dtype=np.float64)
    return -penal * x ** (penal - 1.0) * (mat.e0 - mat.e_min) * energies


def filter_matrix(nx: int, ny: int, radius: float):
    """Sparse distance-weighted smoothing matrix over element centroids.

    Row e holds weights max(0, radius - dist(e, i)); dividing by the row sum
    makes each filtered value a convex combination of its neighborhood.
    """
    span = int(np.ceil(radius)) - 1
    rows, cols, vals = [], [], []
    ey, ex = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    ex = ex.ravel()
    ey = ey.ravel()
    for dy in range(-span, span + 1):
        for dx in range(-span, span + 1):
            w = radius - np.hypot(dx, dy)
            if w <= 0:
                continue
            jx, jy = ex + dx, ey + dy
            ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
            rows.append((ey[ok] * nx + ex[ok]))
            cols.append((jy[ok] * nx + jx[ok]))
            vals.append(np.full(ok.sum(), w))
    n = nx * ny
    h = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    return h, np.asarray(h.sum(axis=1)).ravel()


def filter_sensitivities(dc: np.ndarray, h, row_sums) -> np.ndarray:
    ny, nx = dc.shape
    return ((h @ dc.ravel()) / row_sums).reshape(ny, nx)


def oc_update(x: np.ndarray, dc: np.ndarray, volfrac: float, move: float,
              vol_tol: float = 1e-6) -> np.ndarray:
    """Optimality-criteria step; bisects the multiplier to hit the volume."""
    lo, hi = 1e-12, 1e12
    xnew = x
    for _ in range(200):
        lam = np.sqrt(lo * hi)
        cand = x * np.sqrt(np.maximum(-dc, 0.0) / lam)
        cand = np.clip(cand, x - move, x + move)
        xnew = np.clip(cand, DENSITY_FLOOR, 1.0)
        mean = xnew.mean()
        if abs(mean - volfrac) <= vol_tol:
            break
        if mean > volfrac:
            lo = lam
        else:
            hi = lam
    return xnew


def optimize(problem, params: SimpParams | None = None) -> SimpResult:
    """Minimize compliance at the prescribed volume fraction.

    `problem` provides domain, bc, loads and volume_fraction (see
    topogen.problems.ProblemSpec).  Hitting max_iters without meeting the
    density-change tolerance is reported via `converged`, not an exception.
    """
    params = params or SimpParams()
    domain, bc, loads = problem.domain, problem.bc, problem.loads
    volfrac = problem.volume_fraction
    h, row_sums = filter_matrix(domain.nx, domain.ny, params.filter_radius)

    x = np.full((domain.ny, domain.nx), volfrac)
    history = []
    converged = False
    iterations = 0
    mat = domain.material
    # One solve per iteration: displacements of the current design feed the
    # sensitivities, and the solve after the update records its compliance
    # (so the last history entry always matches the returned densities).
    u = fea.solve_fea(domain, bc, loads, x, params.penal)
    for iterations in range(1, params.max_iters + 1):
        energies = fea.element_energies(domain, u)
        dc = -params.penal * x ** (params.penal - 1.0) * (mat.e0 - mat.e_min) * energies
        dc = filter_sensitivities(dc, h, row_sums)
        xnew = oc_update(x, dc, volfrac, params.move)
        change = float(np.max(np.abs(xnew - x)))
        x = xnew
        u = fea.solve_fea(domain, bc, loads, x, params.penal)
        history.append(float(fea.load_vector(domain, loads) @ u))
        if change <= params.tol:
            converged = True
            break
    return SimpResult(densities=x, history=history, converged=converged,
                      iterations=iterations)
