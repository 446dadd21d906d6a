"""Periodic numerical homogenization of 2D density fields (plane stress, Q4)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._sparse import LowerPattern, NotPositiveDefinite, SPDSolver
from .voronoi import DensityField


class HomogenizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaseMaterial:
    E: float = 1.0
    nu: float = 0.3
    void_eps: float = 1e-6

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not 0 <= self.nu < 0.5:
            raise ValueError("nu must lie in [0, 0.5)")
        if not 0 < self.void_eps < 1:
            raise ValueError("void_eps must lie in (0, 1)")


def plane_stress_matrix(E: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """Isotropic plane-stress constitutive matrix in Voigt form (engineering shear)."""
    return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


# Local node order of a Q4 element: (0,0), (1,0), (1,1), (0,1); dofs interleaved x, y.
_KE_PATTERN = np.array(
    [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ]
)


def q4_element_stiffness(material: BaseMaterial = BaseMaterial()) -> np.ndarray:
    """Closed-form 8x8 plane-stress stiffness of a square bilinear element."""
    nu = material.nu
    k = np.array(
        [
            1 / 2 - nu / 6,
            1 / 8 + nu / 8,
            -1 / 4 - nu / 12,
            -1 / 8 + 3 * nu / 8,
            -1 / 4 + nu / 12,
            -1 / 8 - nu / 8,
            nu / 6,
            1 / 8 - 3 * nu / 8,
        ]
    )
    return material.E / (1 - nu**2) * k[_KE_PATTERN]


# Element nodal displacements reproducing unit macro strains exx, eyy, gxy
# on a unit square element.
UNIT_STRAIN_DISPLACEMENTS = np.array(
    [
        [0, 0, 1, 0, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 1, 0, 1],
        [0, 0, 0, 0.5, 0.5, 0.5, 0.5, 0],
    ],
    dtype=float,
).T


def volume_fraction(field) -> float:
    values = field.values if isinstance(field, DensityField) else np.asarray(field)
    return float(np.mean(values))


def periodic_edof(nx: int, ny: int) -> np.ndarray:
    """Element dof table on a periodic nx x ny grid; element e = i * ny + j."""
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")

    def node(a, b):
        return (a % nx) * ny + (b % ny)

    nodes = np.stack([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)], -1)
    nodes = nodes.reshape(-1, 4)
    return np.stack([2 * nodes, 2 * nodes + 1], -1).reshape(-1, 8)


class Homogenizer:
    """Reusable homogenization workspace for one micro-grid resolution.

    Holds the sparsity pattern and symbolic factorization; not thread-safe,
    use one instance per worker.
    """

    def __init__(self, nx: int = 120, ny: int = 120, material: BaseMaterial = BaseMaterial(),
                 backend: str | None = None):
        self.nx, self.ny = nx, ny
        self.material = material
        self.KE = q4_element_stiffness(material)
        self.edof = periodic_edof(nx, ny)
        ndof = 2 * nx * ny
        # pin node 0 to remove the two rigid translations
        self.free = np.arange(2, ndof)
        self.ndof = ndof
        self.pattern = LowerPattern(self.edof, ndof, self.free)
        self.solver = SPDSolver(self.pattern, backend)
        self._ke_chi0 = self.KE @ UNIT_STRAIN_DISPLACEMENTS  # (8, 3)

    def __call__(self, field) -> tuple[np.ndarray, float]:
        values = field.values if isinstance(field, DensityField) else np.asarray(field, dtype=float)
        if values.shape != (self.nx, self.ny):
            raise ValueError(f"field shape {values.shape} != ({self.nx}, {self.ny})")
        if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
            raise ValueError("density values must lie in [0, 1]")
        w = np.maximum(values.ravel(), self.material.void_eps)
        data = self.pattern.data(w[:, None, None] * self.KE[None])
        try:
            self.solver.factor(data)
        except NotPositiveDefinite as exc:
            raise HomogenizationError(f"periodic cell stiffness is singular: {exc}") from None
        F = np.zeros((self.ndof, 3))
        np.add.at(F, self.edof, w[:, None, None] * self._ke_chi0[None])
        chi = np.zeros((self.ndof, 3))
        chi[self.free] = self.solver.solve(F[self.free])
        U = UNIT_STRAIN_DISPLACEMENTS[None] - chi[self.edof]
        C = _kernels.energy(w, U, self.KE) / w.size
        return 0.5 * (C + C.T), float(values.mean())


_CACHE: dict = {}


def homogenize(field, material: BaseMaterial = BaseMaterial()) -> tuple[np.ndarray, float]:
    """Homogenized 3x3 elasticity matrix and volume fraction of ``field``.

    Solves the three unit-strain cell problems under periodic boundary
    conditions with element stiffness scaled by ``max(rho, void_eps) * E``.
    A :class:`Homogenizer` per (resolution, material) is cached.
    """
    values = field.values if isinstance(field, DensityField) else np.asarray(field)
    key = (values.shape, material)
    h = _CACHE.get(key)
    if h is None:
        h = _CACHE[key] = Homogenizer(values.shape[0], values.shape[1], material)
    return h(values)
