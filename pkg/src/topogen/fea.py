"""Plane-stress linear elasticity on a regular quadrilateral grid.

Conventions used throughout the package:

* The domain is an ``nx`` x ``ny`` grid of unit-size bilinear quadrilateral
  elements.  Nodes live on the ``(nx+1) x (ny+1)`` lattice and are numbered
  row-major with x varying fastest: ``node = iy * (nx + 1) + ix``.
* Degrees of freedom: ``2*node`` is the x displacement, ``2*node + 1`` the y
  displacement.  The y axis points up; element fields are stored as
  ``(ny, nx)`` arrays indexed ``[ey, ex]`` with row 0 at the bottom.
* Element corner nodes are ordered counter-clockwise starting at the
  bottom-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu


class SingularSystemError(RuntimeError):
    """Raised when the constrained stiffness system cannot be solved."""


@dataclass(frozen=True)
class Material:
    """Isotropic plane-stress material; `e_min` is the void stiffness floor."""

    e0: float = 1.0
    nu: float = 0.3
    e_min: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")
        if not 0.0 < self.e_min < self.e0:
            raise ValueError("need 0 < e_min < e0")


@dataclass(frozen=True)
class GridDomain:
    """Regular grid of unit quadrilateral elements."""

    nx: int
    ny: int
    material: Material = field(default_factory=Material)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one element per axis")

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def node_id(self, ix, iy):
        return iy * (self.nx + 1) + ix

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 8) dof indices, elements in row-major [ey, ex] order."""
        nx, ny = self.nx, self.ny
        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny))
        n_bl = (ey * (nx + 1) + ex).ravel()
        corners = np.stack([n_bl, n_bl + 1, n_bl + nx + 2, n_bl + nx + 1], axis=1)
        dofs = np.empty((nx * ny, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * corners
        dofs[:, 1::2] = 2 * corners + 1
        return dofs


class BoundaryCondition:
    """Set of fixed displacement dofs identified by (node, axis) pairs."""

    def __init__(self, scenario_id: int, fixed: np.ndarray):
        fixed = np.atleast_2d(np.asarray(fixed, dtype=np.int64))
        if fixed.shape[0] > 0:
            order = np.lexsort((fixed[:, 1], fixed[:, 0]))
            fixed = np.unique(fixed[order], axis=0)
        self.scenario_id = scenario_id
        self.fixed = fixed  # (k, 2) rows of (node, axis), axis 0=x 1=y

    @property
    def n_fixed(self) -> int:
        return self.fixed.shape[0]

    def fixed_dofs(self) -> np.ndarray:
        return 2 * self.fixed[:, 0] + self.fixed[:, 1]

    def dof_mask(self, domain: GridDomain) -> np.ndarray:
        mask = np.zeros(domain.n_dofs, dtype=bool)
        mask[self.fixed_dofs()] = True
        return mask

    def is_fixed(self, node: int, axis: int) -> bool:
        return bool(np.any((self.fixed[:, 0] == node) & (self.fixed[:, 1] == axis)))


@dataclass(frozen=True)
class FieldSet:
    """Element conditioning fields of the fully solid domain."""

    von_mises: np.ndarray  # (ny, nx)
    sed: np.ndarray  # (ny, nx)


# 2x2 Gauss rule on the bilinear reference square, mapped to a unit element.
_GAUSS = [(g1, g2) for g1 in (-1 / np.sqrt(3.0), 1 / np.sqrt(3.0))
          for g2 in (-1 / np.sqrt(3.0), 1 / np.sqrt(3.0))]


def _elasticity_matrix(e, nu):
    return e / (1.0 - nu * nu) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )


def _strain_displacement(xi, eta):
    """B matrix (3x8) of the unit square element at reference point (xi, eta)."""
    # dN/dxi and dN/deta for corners (bl, br, tr, tl); unit element Jacobian
    # is diag(1/2, 1/2), so physical derivatives are 2x the reference ones.
    dn_dxi = 0.5 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dn_deta = 0.5 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    b = np.zeros((3, 8))
    b[0, 0::2] = dn_dxi
    b[1, 1::2] = dn_deta
    b[2, 0::2] = dn_deta
    b[2, 1::2] = dn_dxi
    return b


@lru_cache(maxsize=None)
def element_stiffness(e: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """8x8 stiffness of one unit bilinear quadrilateral, plane stress."""
    d = _elasticity_matrix(e, nu)
    ke = np.zeros((8, 8))
    for xi, eta in _GAUSS:
        b = _strain_displacement(xi, eta)
        ke += 0.25 * b.T @ d @ b  # det J = 1/4, Gauss weights 1
    ke.setflags(write=False)
    return ke


def simp_modulus(densities: np.ndarray, material: Material, penal: float) -> np.ndarray:
    """Penalized modulus E(x) = e_min + x^p (e0 - e_min)."""
    x = np.asarray(densities, dtype=np.float64)
    return material.e_min + x**penal * (material.e0 - material.e_min)


def load_vector(domain: GridDomain, loads) -> np.ndarray:
    f = np.zeros(domain.n_dofs)
    for node, fx, fy in loads:
        f[2 * int(node)] += fx
        f[2 * int(node) + 1] += fy
    return f


def assemble_stiffness(domain: GridDomain, moduli: np.ndarray):
    """Global sparse stiffness for per-element moduli, plus the dof map."""
    ke = element_stiffness(1.0, domain.material.nu)
    edofs = domain.element_dofs()
    e = np.asarray(moduli, dtype=np.float64).reshape(-1)
    data = (e[:, None, None] * ke[None, :, :]).ravel()
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    k = coo_matrix((data, (rows, cols)), shape=(domain.n_dofs, domain.n_dofs))
    return k.tocsc(), edofs


def solve_fea(domain: GridDomain, bc: BoundaryCondition, loads,
              densities: np.ndarray, penal: float = 3.0) -> np.ndarray:
    """Nodal displacements (n_dofs,) with fixed dofs held at zero."""
    densities = np.asarray(densities, dtype=np.float64)
    if densities.shape != (domain.ny, domain.nx):
        raise ValueError(f"densities shape {densities.shape} does not match grid")
    moduli = simp_modulus(densities, domain.material, penal)
    k, _ = assemble_stiffness(domain, moduli)
    fixed = bc.dof_mask(domain)
    free = np.flatnonzero(~fixed)
    f = load_vector(domain, loads)
    kff = k[np.ix_(free, free)].tocsc()
    try:
        u_free = splu(kff).solve(f[free])
    except RuntimeError as exc:
        raise SingularSystemError(
            f"stiffness factorization failed (scenario {bc.scenario_id}): {exc}"
        ) from exc
    if not np.all(np.isfinite(u_free)):
        raise SingularSystemError(
            f"non-finite displacements; constraints of scenario {bc.scenario_id} "
            "do not eliminate rigid-body motion"
        )
    u = np.zeros(domain.n_dofs)
    u[free] = u_free
    return u


def compliance(domain: GridDomain, bc: BoundaryCondition, loads,
               densities: np.ndarray, penal: float = 3.0) -> float:
    """External work F . u of the loaded structure (equals u^T K u)."""
    u = solve_fea(domain, bc, loads, densities, penal)
    return float(load_vector(domain, loads) @ u)


def element_energies(domain: GridDomain, u: np.ndarray) -> np.ndarray:
    """Per-element u_e^T ke u_e at unit modulus, shaped (ny, nx)."""
    ke = element_stiffness(1.0, domain.material.nu)
    ue = u[domain.element_dofs()]
    return np.einsum("ei,ij,ej->e", ue, ke, ue).reshape(domain.ny, domain.nx)


def physical_fields(domain: GridDomain, bc: BoundaryCondition, loads) -> FieldSet:
    """Von Mises stress and strain-energy density of the fully solid domain.

    Stress is evaluated at element centroids.  The energy density is the
    exact element average (2x2 Gauss), so that twice its integral over the
    domain reproduces the compliance up to solver round-off.
    """
    mat = domain.material
    solid = np.ones((domain.ny, domain.nx))
    u = solve_fea(domain, bc, loads, solid, penal=1.0)
    ue = u[domain.element_dofs()]  # (n_el, 8)
    d = _elasticity_matrix(mat.e0, mat.nu)

    sig_c = ue @ _strain_displacement(0.0, 0.0).T @ d.T  # centroid stress (n_el, 3)
    s11, s22, s12 = sig_c[:, 0], sig_c[:, 1], sig_c[:, 2]
    von_mises = np.sqrt(s11**2 - s11 * s22 + s22**2 + 3.0 * s12**2)

    sed = np.zeros(ue.shape[0])
    for xi, eta in _GAUSS:
        eps = ue @ _strain_displacement(xi, eta).T  # (n_el, 3)
        sig = eps @ d.T
        # engineering shear strain: W = (s11 e11 + s22 e22 + 2 s12 e12) / 2
        sed += 0.5 * (sig[:, 0] * eps[:, 0] + sig[:, 1] * eps[:, 1]
                      + sig[:, 2] * eps[:, 2])
    sed *= 0.25  # Gauss average == exact element mean (unit element area)

    shape = (domain.ny, domain.nx)
    return FieldSet(von_mises=von_mises.reshape(shape), sed=sed.reshape(shape))
