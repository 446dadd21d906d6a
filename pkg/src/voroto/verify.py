"""Ground-truth check of an optimized design.

Every macro element is rasterized from its own 9-neighborhood (the same
sites and filtered parameters the surrogate saw), homogenized, and the macro
problem is re-solved with the true matrices.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ._parallel import ordered_map
from .dataset import decode
from .fea import BoundaryConditions, MacroFEA, MacroMesh
from .homogenize import BaseMaterial, homogenize
from .optimize import DesignState, Neighborhood, RadialFilter, build_surrogate_inputs
from .surrogate import MlpModel, predict_properties
from .voronoi import DEFAULT_K, DensityField, rasterize

log = logging.getLogger(__name__)


def design_inputs(state: DesignState, filter_radius: float = 3.0) -> np.ndarray:
    mesh = state.mesh
    return build_surrogate_inputs(state, mesh, RadialFilter(mesh, filter_radius),
                                  Neighborhood.build(mesh))


def reconstruct(state: DesignState, resolution: int = 120, filter_radius: float = 3.0,
                k: float = DEFAULT_K) -> DensityField:
    """Stitched density field of shape (nelx * r, nely * r)."""
    mesh = state.mesh
    r = resolution
    X = design_inputs(state, filter_radius)
    out = np.empty((mesh.nelx * r, mesh.nely * r))
    for i in range(mesh.nelx):
        for j in range(mesh.nely):
            e = mesh.element_index(i, j)
            tile = rasterize(decode(X[e], k), (r, r)).values
            out[i * r : (i + 1) * r, j * r : (j + 1) * r] = tile
    return DensityField(out)


class HomogenizationPredictor:
    """Surrogate stand-in that rasterizes and homogenizes every input exactly."""

    def __init__(self, resolution: int = 120, k: float = DEFAULT_K,
                 material: BaseMaterial = BaseMaterial(), threads: int | None = 1):
        self.resolution, self.k, self.material, self.threads = resolution, k, material, threads

    def _one(self, x):
        fld = rasterize(decode(x, self.k), (self.resolution, self.resolution))
        return homogenize(fld, self.material)

    def __call__(self, X):
        res = list(ordered_map(self._one, list(np.atleast_2d(X)), self.threads))
        return np.array([c for c, _ in res]), np.array([v for _, v in res])


@dataclass
class VerificationReport:
    J_nn: float
    J_fe: float
    v_nn: float
    v_fe: float
    compliance_error: float
    volume_error: float
    C_error_mean: float
    C_error_median: float
    C_error_max: float
    resolution: int
    n_elements: int

    def as_dict(self) -> dict:
        return asdict(self)


def relative_error(a: float, b: float) -> float:
    """|a - b| / |b| with ``b`` the true value."""
    return abs(a - b) / abs(b)


def verify(state: DesignState, model, mesh: MacroMesh | None = None,
           bc: BoundaryConditions | None = None, filter_radius: float = 3.0,
           resolution: int = 120, k: float = DEFAULT_K, material: BaseMaterial = BaseMaterial(),
           threads: int | None = 1, truth=None) -> VerificationReport:
    """Compare the surrogate path against true homogenization for a design.

    ``model`` is an :class:`MlpModel` or any callable ``X -> (C, v)``.
    ``truth`` overrides the ground-truth predictor (defaults to exact
    homogenization at ``resolution``).
    """
    mesh = mesh or state.mesh
    if bc is None:
        raise ValueError("boundary conditions are required")
    X = design_inputs(state, filter_radius)
    if isinstance(model, MlpModel):
        C_nn, v_nn = predict_properties(model, X)
    else:
        C_nn, v_nn = model(X)
    truth = truth or HomogenizationPredictor(resolution, k, material, threads)
    log.info("homogenizing %d elements at %dx%d", len(X), resolution, resolution)
    C_fe, v_fe = truth(X)
    fea = MacroFEA(mesh, bc)
    J_nn = fea.solve(C_nn).compliance
    J_fe = fea.solve(C_fe).compliance
    cerr = np.linalg.norm(C_nn - C_fe, axis=(1, 2)) / np.linalg.norm(C_fe, axis=(1, 2))
    Vn, Vf = float(np.mean(v_nn)), float(np.mean(v_fe))
    return VerificationReport(
        J_nn, J_fe, Vn, Vf, relative_error(J_nn, J_fe), relative_error(Vn, Vf),
        float(cerr.mean()), float(np.median(cerr)), float(cerr.max()), resolution, len(X),
    )


def write_report(path, report: VerificationReport, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in sorted((header or {}).items()):
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh)
        d = report.as_dict()
        w.writerow(list(d))
        w.writerow([repr(v) for v in d.values()])
