"""Offline corpus: sample microstructures, homogenize, Cholesky-encode, persist.

Input vector layout (75 = 9 * 2 * 4 + 3): site coordinates of the nine
neighborhood elements (bottom to top, then left to right; sites in grid order;
x before y), then beta, alpha, theta of the center element.  Target layout
(7): L00, L10, L11, L20, L21, L22, volume fraction.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import ordered_map
from .artifacts import f64_array, f64_bytes, read_artifact, write_artifact
from .homogenize import BaseMaterial, homogenize
from .voronoi import (
    BASE_GRID,
    DEFAULT_K,
    MIN_SEPARATION,
    NEIGHBOR_OFFSETS,
    SITES_PER_ELEMENT,
    CellParams,
    MicrostructureSpec,
    rasterize,
)

log = logging.getLogger(__name__)

N_INPUT = 9 * 2 * SITES_PER_ELEMENT + 3
N_TARGET = 7
CHOL_INDEX = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
DIAG_SLOTS = (0, 2, 5)


class ConfigError(ValueError):
    pass


class DecompositionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SamplingRanges:
    delta: tuple = (-0.225, 0.225)
    beta: tuple = (0.3, 3.0)
    alpha: tuple = (1.0, 3.5)
    theta: tuple = (0.0, math.pi)
    min_separation: float = MIN_SEPARATION
    max_attempts: int = 100

    def check(self) -> None:
        for name in ("delta", "beta", "alpha", "theta"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} range is empty: [{lo}, {hi}]")
        lo, hi = self.delta
        if lo < -0.25 or hi > 0.25:
            raise ConfigError("perturbations beyond +-0.25 move sites out of their element")
        if 0.5 + (hi - lo) < self.min_separation:
            raise ConfigError(
                f"min separation {self.min_separation} unreachable with perturbations in [{lo}, {hi}]"
            )
        if self.beta[0] <= 0:
            raise ConfigError("beta must be positive")
        if self.alpha[0] < 1:
            raise ConfigError("alpha must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    ranges: SamplingRanges = SamplingRanges()
    k: float = DEFAULT_K
    resolution: int = 120
    material: BaseMaterial = BaseMaterial()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        r = {k: tuple(v) if isinstance(v, list) else v for k, v in d["ranges"].items()}
        return cls(SamplingRanges(**r), d["k"], d["resolution"], BaseMaterial(**d["material"]))


def sample_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    key = [seed, index] if attempt == 0 else [seed, index, attempt]
    return np.random.default_rng(key)


def sample_spec(rng, ranges: SamplingRanges = SamplingRanges(), k: float = DEFAULT_K,
                zero_perturbation: bool = False) -> MicrostructureSpec:
    """Random 3x3 neighborhood of perturbed 2x2 site grids plus cell parameters.

    ``rng`` is a Generator or an integer seed.  Each site perturbation is
    redrawn until it keeps ``min_separation`` from the sites already placed
    in its element.
    """
    ranges.check()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lo, hi = ranges.delta
    sites = np.empty((9, SITES_PER_ELEMENT, 2))
    for e in range(9):
        for s in range(SITES_PER_ELEMENT):
            for _ in range(ranges.max_attempts):
                d = np.zeros(2) if zero_perturbation else rng.uniform(lo, hi, size=2)
                p = BASE_GRID[s] + d
                if s == 0 or np.min(np.hypot(*(sites[e, :s] - p).T)) >= ranges.min_separation:
                    break
            else:
                raise ConfigError(
                    f"could not place site {s} of element {e} in {ranges.max_attempts} attempts"
                )
            sites[e, s] = p
    sites += NEIGHBOR_OFFSETS[:, None, :]
    params = CellParams(
        beta=rng.uniform(*ranges.beta),
        alpha=rng.uniform(*ranges.alpha),
        theta=rng.uniform(*ranges.theta),
    )
    return MicrostructureSpec(sites.reshape(-1, 2), params, k)


def encode(spec: MicrostructureSpec) -> np.ndarray:
    p = spec.params
    return np.concatenate([spec.sites.ravel(), [p.beta, p.alpha, p.theta]])


def decode(x, k: float = DEFAULT_K) -> MicrostructureSpec:
    x = np.asarray(x, dtype=float)
    return MicrostructureSpec(x[:-3].reshape(-1, 2), CellParams(*x[-3:]), k)


def cholesky(C) -> np.ndarray:
    """Lower Cholesky factor of a 3x3 SPD matrix as [L00, L10, L11, L20, L21, L22]."""
    C = np.asarray(C, dtype=float)
    if not np.allclose(C, C.T, rtol=1e-10, atol=1e-14):
        raise DecompositionError("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"matrix is not positive definite: {exc}") from None
    return np.array([L[i, j] for i, j in CHOL_INDEX])


def chol_matrix(l6) -> np.ndarray:
    """Lower-triangular matrix(es) from packed factors of shape (..., 6)."""
    l6 = np.asarray(l6, dtype=float)
    L = np.zeros(l6.shape[:-1] + (3, 3))
    for slot, (i, j) in enumerate(CHOL_INDEX):
        L[..., i, j] = l6[..., slot]
    return L


def reconstruct_C(l6) -> np.ndarray:
    L = chol_matrix(l6)
    return L @ np.swapaxes(L, -1, -2)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], dict(self.metadata))


def make_sample(seed: int, index: int, config: DataConfig) -> tuple[np.ndarray, np.ndarray]:
    """One (input, target) pair; redraws on a failed decomposition."""
    for attempt in range(10):
        spec = sample_spec(sample_rng(seed, index, attempt), config.ranges, config.k)
        fld = rasterize(spec, (config.resolution, config.resolution))
        C, v = homogenize(fld, config.material)
        try:
            l6 = cholesky(C)
        except DecompositionError as exc:
            log.warning("sample %d attempt %d dropped: %s", index, attempt, exc)
            continue
        return encode(spec), np.append(l6, v)
    raise DecompositionError(f"sample {index}: no decomposable draw in 10 attempts")


def _work(args):
    seed, index, config = args
    try:
        return make_sample(seed, index, config)
    except Exception as exc:
        raise RuntimeError(f"sample {index}: {exc}") from exc


def generate(count: int, config: DataConfig = DataConfig(), seed: int = 0,
             threads: int | None = 1) -> Dataset:
    """Generate ``count`` samples; deterministic in (seed, config) for any ``threads``.

    ``threads=None`` uses ``VOROTO_THREADS`` or all cores.
    """
    if count < 1:
        raise ConfigError("count must be at least 1")
    config.ranges.check()
    X = np.empty((count, N_INPUT))
    Y = np.empty((count, N_TARGET))
    jobs = ((seed, i, config) for i in range(count))
    for i, (x, y) in enumerate(ordered_map(_work, jobs, threads, chunksize=16)):
        X[i], Y[i] = x, y
        if (i + 1) % 500 == 0:
            log.info("generated %d / %d samples", i + 1, count)
    meta = {"seed": seed, "count": count, "config": config.to_dict()}
    return Dataset(X, Y, meta)


def split(dataset: Dataset, sizes=(10000, 1000, 1000), seed: int = 0):
    """Disjoint seeded (train, val, test) partition."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0 or sum(sizes) > len(dataset):
        raise ConfigError(f"split sizes {sizes} do not fit {len(dataset)} samples")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    a, b, c = sizes
    return (
        dataset.subset(perm[:a]),
        dataset.subset(perm[a : a + b]),
        dataset.subset(perm[a + b : a + b + c]),
    )


def save_corpus(path, dataset: Dataset, csv_path=None) -> None:
    header = dict(dataset.metadata)
    header.update(n_samples=len(dataset), n_input=N_INPUT, n_target=N_TARGET)
    payload = np.hstack([dataset.inputs, dataset.targets])
    write_artifact(path, "corpus", header, f64_bytes([payload]))
    if csv_path is not None:
        names = [f"site{s}_{c}" for s in range(9 * SITES_PER_ELEMENT) for c in "xy"]
        names += ["beta", "alpha", "theta", "L00", "L10", "L11", "L20", "L21", "L22", "v"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in payload:
                w.writerow([repr(float(x)) for x in row])


def load_corpus(path) -> Dataset:
    header, payload = read_artifact(path, "corpus")
    data = f64_array(payload).reshape(header["n_samples"], N_INPUT + N_TARGET)
    meta = {k: v for k, v in header.items() if k not in ("n_samples", "n_input", "n_target")}
    return Dataset(data[:, :N_INPUT].copy(), data[:, N_INPUT:].copy(), meta)
