"""Parametric anisotropic Voronoi density field.

Coordinates are in element-lengths, relative to the lower-left corner of the
center element of a 3x3 neighborhood, so center sites lie in [0, 1]^2 and
neighbor sites in [-1, 2]^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DEFAULT_K = 8.0
SITES_PER_ELEMENT = 4
MIN_SEPARATION = 0.1

# Neighborhood element order: bottom to top, then left to right.
NEIGHBOR_OFFSETS = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=float)
CENTER = 4
# 2x2 base grid of sites inside an element, same ordering convention.
BASE_GRID = np.array([(0.25 + 0.5 * a, 0.25 + 0.5 * b) for a in (0, 1) for b in (0, 1)])


@dataclass(frozen=True)
class CellParams:
    beta: float
    alpha: float
    theta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass
class MicrostructureSpec:
    """Sites of a 3x3 element neighborhood plus the center element's parameters.

    ``sites`` has shape (9 * S, 2) for canonical specs, element-major in
    ``NEIGHBOR_OFFSETS`` order and grid order within an element.  Any other
    number of sites is accepted for evaluation; :meth:`validate` checks the
    canonical layout.
    """

    sites: np.ndarray
    params: CellParams
    k: float = DEFAULT_K

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.sites)):
            raise ValueError("site coordinates must be finite")

    @property
    def sites_per_element(self) -> int:
        return self.sites.shape[0] // 9

    def validate(self, min_separation: float = MIN_SEPARATION) -> None:
        n = self.sites.shape[0]
        if n % 9 or n == 0:
            raise ValueError(f"expected 9*S sites, got {n}")
        per = self.sites.reshape(9, -1, 2)
        for idx, (off, pts) in enumerate(zip(NEIGHBOR_OFFSETS, per)):
            local = pts - off
            if np.any(local < 0) or np.any(local > 1):
                raise ValueError(f"site outside its element (element {idx})")
            diff = local[:, None, :] - local[None, :, :]
            dist = np.sqrt((diff**2).sum(-1))
            dist[np.diag_indices_from(dist)] = np.inf
            if dist.min() < min_separation:
                raise ValueError(
                    f"sites of element {idx} closer than {min_separation}: {dist.min():.4f}"
                )


@dataclass
class DensityField:
    """Cell-centered density grid; ``values[i, j]`` is x-index i, y-index j."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("density field must be two-dimensional")

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]


def rotated_offset(point, site, theta: float) -> np.ndarray:
    """Offset of ``point`` from ``site``, rotated counter-clockwise by theta."""
    x = np.asarray(point, dtype=float) - np.asarray(site, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1]]).T


def anisotropic_distance(point, site, params: CellParams) -> float:
    alpha = params.alpha
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    dx, dy = rotated_offset(point, site, params.theta).T
    return np.sqrt(alpha * dx * dx + dy * dy / alpha)


def _distances(point, spec: MicrostructureSpec) -> np.ndarray:
    p = spec.params
    off = rotated_offset(point, spec.sites, p.theta)
    return np.sqrt(p.alpha * off[:, 0] ** 2 + off[:, 1] ** 2 / p.alpha)


def site_weights(point, spec: MicrostructureSpec) -> np.ndarray:
    """Softmax of exp(-k d_s) over all sites, before the thickness exponent."""
    d = _distances(point, spec)
    e = np.exp(-spec.k * (d - d.min()))
    return e / e.sum()


def site_density(point, spec: MicrostructureSpec, s: int) -> float:
    """Density contribution of site ``s`` (0-based index into ``spec.sites``)."""
    return float(site_weights(point, spec)[s] ** spec.params.beta)


def raw_density(point, spec: MicrostructureSpec) -> float:
    return float(1.0 - np.sum(site_weights(point, spec) ** spec.params.beta))


def total_density(point, spec: MicrostructureSpec) -> float:
    """1 - sum of site densities, clamped to [0, 1]."""
    return min(max(raw_density(point, spec), 0.0), 1.0)


def density_gradient(point, spec: MicrostructureSpec):
    """Analytic derivatives of the unclamped density at ``point``.

    Returns ``(d_sites, d_beta, d_alpha, d_theta)`` with ``d_sites`` of shape
    (n_sites, 2).  The point must not coincide with a site.
    """
    p = spec.params
    a, th, k, beta = p.alpha, p.theta, spec.k, p.beta
    off = rotated_offset(point, spec.sites, th)
    dx, dy = off[:, 0], off[:, 1]
    d = np.sqrt(a * dx * dx + dy * dy / a)
    e = np.exp(-k * (d - d.min()))
    w = e / e.sum()
    wb = w**beta
    d_beta = -np.sum(wb * np.log(w))
    # d rho / d d_t
    g = k * beta * (wb - w * wb.sum())
    c, s = np.cos(th), np.sin(th)
    dd_alpha = (dx * dx - dy * dy / (a * a)) / (2 * d)
    dd_theta = dx * dy * (1 / a - a) / d
    dd_sx = (-a * dx * c - dy * s / a) / d
    dd_sy = (a * dx * s - dy * c / a) / d
    d_sites = np.stack([g * dd_sx, g * dd_sy], axis=1)
    return d_sites, float(d_beta), float(g @ dd_alpha), float(g @ dd_theta)


def cell_centers(nx: int, ny: int, origin=(0.0, 0.0), extent=(1.0, 1.0)):
    """Centroids of an nx x ny cell grid, as (nx, ny) arrays."""
    xs = origin[0] + (np.arange(nx) + 0.5) * extent[0] / nx
    ys = origin[1] + (np.arange(ny) + 0.5) * extent[1] / ny
    return np.meshgrid(xs, ys, indexing="ij")


def rasterize(spec: MicrostructureSpec, resolution=(120, 120)) -> DensityField:
    """Sample the density at the micro-element centroids of the center element."""
    nx, ny = resolution
    if nx < 1 or ny < 1:
        raise ValueError("resolution must be at least 1x1")
    X, Y = cell_centers(nx, ny)
    p = spec.params
    rho = _kernels.density(
        X.ravel(), Y.ravel(), spec.sites[:, 0], spec.sites[:, 1], p.beta, p.alpha, p.theta, spec.k
    )
    return DensityField(rho.reshape(nx, ny))


def base_sites() -> np.ndarray:
    """Unperturbed 9 * 4 site layout in the center-element frame."""
    return (NEIGHBOR_OFFSETS[:, None, :] + BASE_GRID[None, :, :]).reshape(-1, 2)
