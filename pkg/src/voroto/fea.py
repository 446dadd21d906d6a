"""Macro-scale linear elasticity on a structured grid of unit Q4 elements.

Nodes are numbered ``i * (nely + 1) + j`` (x-index i, y-index j from the
bottom); element ``e = i * nely + j``; dofs ``2 * node`` (x) and
``2 * node + 1`` (y).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._sparse import LowerPattern, NotPositiveDefinite, SPDSolver


class SingularStiffness(RuntimeError):
    pass


@dataclass(frozen=True)
class MacroMesh:
    nelx: int = 40
    nely: int = 20

    def __post_init__(self):
        if self.nelx < 1 or self.nely < 1:
            raise ValueError("mesh needs at least one element in each direction")

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def ndof(self) -> int:
        return 2 * self.n_nodes

    def node(self, i, j):
        return np.asarray(i) * (self.nely + 1) + np.asarray(j)

    def element_index(self, i, j):
        return np.asarray(i) * self.nely + np.asarray(j)

    def edof(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nelx), np.arange(self.nely), indexing="ij")
        n = np.stack([self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1),
                      self.node(i, j + 1)], -1).reshape(-1, 4)
        return np.stack([2 * n, 2 * n + 1], -1).reshape(-1, 8)

    def centroids(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nelx), np.arange(self.nely), indexing="ij")
        return np.stack([i.ravel() + 0.5, j.ravel() + 0.5], axis=1)


@dataclass
class BoundaryConditions:
    fixed: np.ndarray
    load_dofs: np.ndarray
    load_values: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        self.fixed = np.unique(np.asarray(self.fixed, dtype=np.int64))
        self.load_dofs = np.asarray(self.load_dofs, dtype=np.int64)
        self.load_values = np.asarray(self.load_values, dtype=float)
        if not np.all(np.isfinite(self.load_values)):
            raise ValueError("loads must be finite")

    def force(self, mesh: MacroMesh) -> np.ndarray:
        f = np.zeros(mesh.ndof)
        np.add.at(f, self.load_dofs, self.load_values)
        return f

    def check(self, mesh: MacroMesh) -> None:
        """Reject supports that leave a rigid-body mode free."""
        if self.fixed.size and (self.fixed.min() < 0 or self.fixed.max() >= mesh.ndof):
            raise ValueError("fixed dof out of range")
        xs = self.fixed[self.fixed % 2 == 0]
        ys = self.fixed[self.fixed % 2 == 1]
        if xs.size == 0:
            raise SingularStiffness("unconstrained null mode: rigid translation in x")
        if ys.size == 0:
            raise SingularStiffness("unconstrained null mode: rigid translation in y")
        if self.fixed.size < 3 or np.unique(self.fixed // 2).size < 2:
            raise SingularStiffness("unconstrained null mode: rigid rotation")
        # a rotation about (xc, yc) moves node (x, y) by (-(y - yc), x - xc); it is
        # blocked unless every x-fixed node shares one y and every y-fixed node
        # shares one x with a consistent center
        nx_ = mesh.nely + 1
        y_of_xfixed = np.unique((xs // 2) % nx_)
        x_of_yfixed = np.unique((ys // 2) // nx_)
        if y_of_xfixed.size == 1 and x_of_yfixed.size == 1:
            raise SingularStiffness("unconstrained null mode: rigid rotation")


def _gauss_B():
    """Strain-displacement matrices and weights at 2x2 Gauss points of a unit square."""
    g = 1 / np.sqrt(3)
    xy = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    Bs, ws = [], []
    for xi, eta in [(-g, -g), (g, -g), (g, g), (-g, g)]:
        dN = 0.25 * np.array([[-(1 - eta), 1 - eta, 1 + eta, -(1 + eta)],
                              [-(1 - xi), -(1 + xi), 1 + xi, 1 - xi]])
        J = dN @ xy
        dNx = np.linalg.solve(J, dN)
        B = np.zeros((3, 8))
        B[0, 0::2] = dNx[0]
        B[1, 1::2] = dNx[1]
        B[2, 0::2] = dNx[1]
        B[2, 1::2] = dNx[0]
        Bs.append(B)
        ws.append(np.linalg.det(J))
    return np.array(Bs), np.array(ws)


GAUSS_B, GAUSS_W = _gauss_B()
# K_e = sum_ij C_ij * STIFFNESS_BASIS[i, j]
STIFFNESS_BASIS = np.einsum("g,gia,gjb->ijab", GAUSS_W, GAUSS_B, GAUSS_B)


def element_stiffness_from_C(C) -> np.ndarray:
    """8x8 element stiffness of a unit Q4 element (2x2 Gauss) for C of shape (..., 3, 3)."""
    C = np.asarray(C, dtype=float)
    scale = max(np.abs(C).max(), 1e-300)
    if np.abs(C - np.swapaxes(C, -1, -2)).max() > 1e-10 * scale:
        raise ValueError("constitutive matrix is not symmetric")
    return np.einsum("...ij,ijab->...ab", C, STIFFNESS_BASIS)


@dataclass
class SolveResult:
    u: np.ndarray
    compliance: float
    residual: float
    solver: SPDSolver = field(repr=False)


class MacroFEA:
    """Mesh + supports with a cached sparsity pattern and symbolic factorization."""

    def __init__(self, mesh: MacroMesh, bc: BoundaryConditions, backend: str | None = None):
        bc.check(mesh)
        self.mesh, self.bc = mesh, bc
        self.edof = mesh.edof()
        self.free = np.setdiff1d(np.arange(mesh.ndof), bc.fixed)
        self.f = bc.force(mesh)
        self.pattern = LowerPattern(self.edof, mesh.ndof, self.free)
        self.solver = SPDSolver(self.pattern, backend)

    def solve(self, Cs) -> SolveResult:
        Cs = np.asarray(Cs, dtype=float)
        if Cs.shape != (self.mesh.n_elements, 3, 3):
            raise ValueError(f"expected ({self.mesh.n_elements}, 3, 3) matrices, got {Cs.shape}")
        ke = element_stiffness_from_C(Cs)
        data = self.pattern.data(ke)
        try:
            self.solver.factor(data)
        except NotPositiveDefinite as exc:
            raise SingularStiffness(
                f"global stiffness is singular (void or disconnected material): {exc}"
            ) from None
        u = np.zeros(self.mesh.ndof)
        ff = self.f[self.free]
        u[self.free] = self.solver.solve(ff)
        K = self.pattern.full(data)
        res = np.linalg.norm(K @ u[self.free] - ff) / max(np.linalg.norm(ff), 1e-300)
        return SolveResult(u, float(self.f @ u), float(res), self.solver)

    def gradient(self, result: SolveResult) -> np.ndarray:
        return compliance_gradient_wrt_C(result, self.mesh)


def assemble_solve(mesh: MacroMesh, bc: BoundaryConditions, Cs) -> SolveResult:
    return MacroFEA(mesh, bc).solve(Cs)


def compliance_gradient_wrt_C(result: SolveResult, mesh: MacroMesh, bc=None) -> np.ndarray:
    """dJ/dC for every element, shape (n, 3, 3).

    Compliance is self-adjoint, so dJ/dC_ij = -u_e^T (dK_e/dC_ij) u_e, i.e.
    minus the Gauss-weighted sum of strain outer products.
    """
    ue = result.u[mesh.edof()]
    eps = np.einsum("gia,ea->egi", GAUSS_B, ue)
    return -np.einsum("g,egi,egj->eij", GAUSS_W, eps, eps)


def _locate(mesh: MacroMesh, fx: float, fy: float):
    return int(round(fx * mesh.nelx)), int(round(fy * mesh.nely))


_EDGES = {
    "left": lambda m: m.node(0, np.arange(m.nely + 1)),
    "right": lambda m: m.node(m.nelx, np.arange(m.nely + 1)),
    "bottom": lambda m: m.node(np.arange(m.nelx + 1), 0),
    "top": lambda m: m.node(np.arange(m.nelx + 1), m.nely),
}


def _dofs(nodes, comps: str):
    nodes = np.atleast_1d(nodes)
    out = []
    if "x" in comps:
        out.append(2 * nodes)
    if "y" in comps:
        out.append(2 * nodes + 1)
    return np.concatenate(out)


def parse_bc(mesh: MacroMesh, fixed: str, loads: str, name: str = "custom") -> BoundaryConditions:
    """Build supports and point loads from catalog strings.

    ``fixed``: ``;``-separated items ``edge <left|right|top|bottom> <x|y|xy>`` or
    ``node <fx> <fy> <x|y|xy>`` with fractional coordinates snapped to the
    nearest node.  ``loads``: items ``node <fx> <fy> <x|y> <value>``.
    """
    fixed_dofs = []
    for item in filter(None, (s.strip() for s in fixed.split(";"))):
        tok = item.split()
        if tok[0] == "edge":
            fixed_dofs.append(_dofs(_EDGES[tok[1]](mesh), tok[2]))
        elif tok[0] == "node":
            i, j = _locate(mesh, float(tok[1]), float(tok[2]))
            fixed_dofs.append(_dofs(mesh.node(i, j), tok[3]))
        else:
            raise ValueError(f"bad support item {item!r}")
    ldofs, lvals = [], []
    for item in filter(None, (s.strip() for s in loads.split(";"))):
        tok = item.split()
        if tok[0] != "node" or tok[3] not in ("x", "y"):
            raise ValueError(f"bad load item {item!r}")
        i, j = _locate(mesh, float(tok[1]), float(tok[2]))
        ldofs.append(int(_dofs(mesh.node(i, j), tok[3])[0]))
        lvals.append(float(tok[4]))
    return BoundaryConditions(np.concatenate(fixed_dofs) if fixed_dofs else [], ldofs, lvals, name)


def load_catalog(path=None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("voroto").joinpath("problems.cfg").read_text())
    else:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def problem(name: str, nelx: int | None = None, nely: int | None = None, catalog=None):
    """``(mesh, bc)`` for a catalog problem, optionally on another mesh size."""
    cp = catalog if isinstance(catalog, configparser.ConfigParser) else load_catalog(catalog)
    if name not in cp:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(cp.sections())}")
    sec = cp[name]
    mesh = MacroMesh(nelx or sec.getint("nelx"), nely or sec.getint("nely"))
    return mesh, parse_bc(mesh, sec["fixed"], sec["loads"], name)


def write_dump(path, mesh: MacroMesh, result: SolveResult) -> None:
    """Nodal displacement CSV with the compliance in a comment line."""
    with open(path, "w") as fh:
        fh.write(f"# compliance={result.compliance!r} residual={result.residual!r}\n")
        fh.write("node,i,j,ux,uy\n")
        for i in range(mesh.nelx + 1):
            for j in range(mesh.nely + 1):
                n = int(mesh.node(i, j))
                fh.write(f"{n},{i},{j},{result.u[2 * n]!r},{result.u[2 * n + 1]!r}\n")
