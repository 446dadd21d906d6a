"""Multiscale compliance minimization over per-element Voronoi parameters.

Forward: latent variables -> bounded parameters -> radial filter on
(beta, alpha, theta) -> neighborhood surrogate inputs -> surrogate ->
C = L L^T -> macro FEA -> penalty loss.  The reverse pass chains the adjoint
compliance gradient, the surrogate input gradient, the filter transpose and
the bound maps by hand.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .artifacts import f64_array, f64_bytes, read_artifact, write_artifact
from .dataset import CHOL_INDEX, chol_matrix
from .fea import BoundaryConditions, MacroFEA, MacroMesh
from .surrogate import Adam, MlpModel, forward, vjp
from .voronoi import BASE_GRID, NEIGHBOR_OFFSETS, SITES_PER_ELEMENT

N_DELTA = 2 * SITES_PER_ELEMENT
N_VARS = N_DELTA + 3
BETA, ALPHA, THETA = N_DELTA, N_DELTA + 1, N_DELTA + 2


class OptimizationDiverged(FloatingPointError):
    def __init__(self, msg, last_good_state=None):
        super().__init__(msg)
        self.last_good_state = last_good_state


@dataclass(frozen=True)
class OptConfig:
    vmax: float = 0.5
    gamma0: float = 0.1
    dgamma: float = 0.25
    learning_rate: float = 2e-2
    filter_radius: float = 3.0
    tol: float = 1e-3
    feasibility_tol: float = 0.05
    max_iter: int = 300
    delta: tuple = (-0.225, 0.225)
    beta: tuple = (0.3, 3.0)
    alpha: tuple = (1.0, 3.5)
    theta: tuple = (0.0, math.pi)
    init_alpha_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.vmax <= 1:
            raise ValueError("vmax must lie in (0, 1]")
        if self.filter_radius < 0:
            raise ValueError("filter radius must be non-negative")
        for name in ("delta", "beta", "alpha", "theta"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty {name} bounds")

    def with_theta_fixed(self, value: float) -> "OptConfig":
        return replace(self, theta=(value, value))

    def bounds(self):
        lo = np.array([self.delta[0]] * N_DELTA + [self.beta[0], self.alpha[0], self.theta[0]])
        hi = np.array([self.delta[1]] * N_DELTA + [self.beta[1], self.alpha[1], self.theta[1]])
        return lo, hi

    def gamma(self, iteration: int) -> float:
        return self.gamma0 + self.dgamma * iteration


def _sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


def _logit(p):
    return np.log(p / (1 - p))


@dataclass
class DesignState:
    """Unconstrained latents ``z`` of shape (n, 11) plus their bounds.

    Columns: 8 site perturbations (site-major, x then y), beta, alpha, theta.
    Mapped values are ``lo + (hi - lo) * sigmoid(z)``.
    """

    mesh: MacroMesh
    z: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def initial(cls, mesh: MacroMesh, config: OptConfig) -> "DesignState":
        """Regular site grid, mid-range beta, alpha just above its minimum, mid-range theta."""
        lo, hi = config.bounds()
        z = np.zeros((mesh.n_elements, N_VARS))
        z[:, ALPHA] = _logit(config.init_alpha_fraction)
        return cls(mesh, z, lo, hi)

    def values(self) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * _sigmoid(self.z)

    def copy(self) -> "DesignState":
        return DesignState(self.mesh, self.z.copy(), self.lo.copy(), self.hi.copy())


def save_state(path, state: DesignState, extra: dict | None = None) -> None:
    header = {"nelx": state.mesh.nelx, "nely": state.mesh.nely, "n_vars": N_VARS,
              "lo": state.lo.tolist(), "hi": state.hi.tolist()}
    header.update(extra or {})
    write_artifact(path, "state", header, f64_bytes([state.z]))


def load_state(path) -> tuple[DesignState, dict]:
    header, payload = read_artifact(path, "state")
    mesh = MacroMesh(header["nelx"], header["nely"])
    z = f64_array(payload).reshape(mesh.n_elements, header["n_vars"])
    return DesignState(mesh, z, np.array(header["lo"]), np.array(header["hi"])), header


class RadialFilter:
    """Cone-weighted neighborhood average, w_ij = max(0, r - |c_i - c_j|), row-normalized."""

    def __init__(self, mesh: MacroMesh, radius: float):
        n = mesh.n_elements
        self.identity = radius <= 1
        if self.identity:
            # no neighbor lies inside the cone; keep the map exactly the identity
            self.H = sp.identity(n, format="csr")
        else:
            c = mesh.centroids()
            reach = int(math.ceil(radius))
            rows, cols, vals = [], [], []
            for di in range(-reach, reach + 1):
                for dj in range(-reach, reach + 1):
                    w = radius - math.hypot(di, dj)
                    if w <= 0:
                        continue
                    i = c[:, 0] - 0.5 + di
                    j = c[:, 1] - 0.5 + dj
                    ok = (i >= 0) & (i < mesh.nelx) & (j >= 0) & (j < mesh.nely)
                    rows.append(np.nonzero(ok)[0])
                    cols.append(mesh.element_index(i[ok].astype(int), j[ok].astype(int)))
                    vals.append(np.full(ok.sum(), w))
            self.H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                    np.concatenate(cols))), shape=(n, n))
        self.Hs = np.asarray(self.H.sum(axis=1)).ravel()

    def __call__(self, x):
        if self.identity:
            return np.array(x, dtype=float)
        # filter the deviation from the mean so constant fields pass through bit-exactly
        m = np.mean(x, axis=0)
        return m + (self.H @ (x - m)) / (self.Hs if np.ndim(x) == 1 else self.Hs[:, None])

    def transpose(self, y):
        return self.H.T @ (y / (self.Hs if np.ndim(y) == 1 else self.Hs[:, None]))


def radial_filter(values, mesh: MacroMesh, radius: float) -> np.ndarray:
    return RadialFilter(mesh, radius)(np.asarray(values, dtype=float))


def _reflect(k: int, n: int):
    if k < 0:
        return -k - 1, True
    if k >= n:
        return 2 * n - k - 1, True
    return k, False


@dataclass
class Neighborhood:
    """Affine map from all site perturbations to per-element site coordinates.

    ``coords[e, q] = offset[e, q] + sign[e, q] * delta.ravel()[src[e, q]]``
    for the 72 coordinate slots q of element e.  Out-of-domain neighbors
    are mirror images of the element across the domain edge.
    """

    src: np.ndarray
    sign: np.ndarray
    offset: np.ndarray

    @classmethod
    def build(cls, mesh: MacroMesh) -> "Neighborhood":
        n = mesh.n_elements
        nq = 9 * N_DELTA
        src = np.empty((n, nq), dtype=np.int64)
        sign = np.empty((n, nq))
        offset = np.empty((n, nq))
        for i in range(mesh.nelx):
            for j in range(mesh.nely):
                e = mesh.element_index(i, j)
                q = 0
                for di, dj in NEIGHBOR_OFFSETS.astype(int):
                    si, mx = _reflect(i + di, mesh.nelx)
                    sj, my = _reflect(j + dj, mesh.nely)
                    se = mesh.element_index(si, sj)
                    for s in range(SITES_PER_ELEMENT):
                        a, b = divmod(s, 2)
                        ss = 2 * (1 - a if mx else a) + (1 - b if my else b)
                        for c, (d, mirrored) in enumerate(((di, mx), (dj, my))):
                            src[e, q] = se * N_DELTA + 2 * ss + c
                            sign[e, q] = -1.0 if mirrored else 1.0
                            offset[e, q] = d + BASE_GRID[s, c]
                            q += 1
        return cls(src, sign, offset)

    def coords(self, delta: np.ndarray) -> np.ndarray:
        return self.offset + self.sign * delta.ravel()[self.src]

    def coords_transpose(self, g: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros(n * N_DELTA)
        np.add.at(out, self.src.ravel(), (self.sign * g).ravel())
        return out.reshape(n, N_DELTA)


def build_surrogate_inputs(state: DesignState, mesh: MacroMesh, filt: RadialFilter | None = None,
                           neighborhood: Neighborhood | None = None,
                           filter_radius: float = 3.0) -> np.ndarray:
    """Per-element 75-vectors: 9-neighborhood sites in the element frame + filtered params."""
    P = state.values()
    filt = filt or RadialFilter(mesh, filter_radius)
    nb = neighborhood or Neighborhood.build(mesh)
    smooth = filt(P[:, N_DELTA:])
    return np.hstack([nb.coords(P[:, :N_DELTA]), smooth])


def volume_constraint(vhat, vmax: float) -> float:
    if vmax <= 0:
        raise ValueError("vmax must be positive")
    return float(np.mean(vhat) / vmax - 1.0)


def penalty_loss(J: float, J0: float, gV: float, gamma: float) -> float:
    if J0 <= 0:
        raise ValueError("initial compliance must be positive")
    return J / J0 + gamma * gV * gV


@dataclass
class LogEntry:
    iteration: int
    compliance: float
    rel_compliance: float
    g_v: float
    gamma: float
    loss: float
    wall_time: float


@dataclass
class ConvergenceLog:
    entries: list = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.iteration != self.entries[-1].iteration + 1:
            raise ValueError("log iterations must be contiguous")
        self.entries.append(entry)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def write_csv(self, path) -> None:
        names = list(LogEntry.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for e in self.entries:
                w.writerow([repr(getattr(e, k)) for k in names])

    @classmethod
    def read_csv(cls, path) -> "ConvergenceLog":
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        log = cls()
        for r in rows:
            log.append(LogEntry(int(r["iteration"]), *(float(r[k]) for k in list(r)[1:])))
        return log


@dataclass
class Evaluation:
    loss: float
    compliance: float
    g_v: float
    vhat: np.ndarray
    C: np.ndarray
    grad: np.ndarray | None


class Optimizer:
    """Owns one optimization run: FEA workspace, filter, Adam state, J0 and the log."""

    def __init__(self, model: MlpModel, mesh: MacroMesh, bc: BoundaryConditions,
                 config: OptConfig = OptConfig(), state: DesignState | None = None):
        self.model, self.mesh, self.bc, self.config = model, mesh, bc, config
        self.fea = MacroFEA(mesh, bc)
        self.filter = RadialFilter(mesh, config.filter_radius)
        self.neighborhood = Neighborhood.build(mesh)
        self.state = state.copy() if state is not None else DesignState.initial(mesh, config)
        self.adam = Adam([self.state.z], config.learning_rate)
        self.J0 = None
        self.iteration = 0
        self.log = ConvergenceLog()

    def inputs(self, state: DesignState | None = None) -> np.ndarray:
        state = state or self.state
        return build_surrogate_inputs(state, self.mesh, self.filter, self.neighborhood)

    def evaluate(self, z: np.ndarray | None = None, gamma: float | None = None,
                 gradient: bool = True) -> Evaluation:
        """Loss (and its gradient w.r.t. the latents) at ``z``; J0 is set on first use."""
        st = self.state if z is None else DesignState(self.mesh, z, self.state.lo, self.state.hi)
        gamma = self.config.gamma(self.iteration) if gamma is None else gamma
        n = self.mesh.n_elements
        s = _sigmoid(st.z)
        P = st.lo + (st.hi - st.lo) * s
        X = np.hstack([self.neighborhood.coords(P[:, :N_DELTA]), self.filter(P[:, N_DELTA:])])
        pred = forward(self.model, X)
        C = pred.C
        result = self.fea.solve(C)
        J = result.compliance
        if self.J0 is None:
            self.J0 = J
        gV = volume_constraint(pred.vhat, self.config.vmax)
        loss = penalty_loss(J, self.J0, gV, gamma)
        grad = None
        if gradient:
            G = self.fea.gradient(result) / self.J0
            # C = L L^T  =>  dJ/dL = (G + G^T) L, lower entries only
            dL = (G + np.swapaxes(G, 1, 2)) @ chol_matrix(pred.Lhat)
            g_out = np.empty((n, 7))
            for slot, (i, j) in enumerate(CHOL_INDEX):
                g_out[:, slot] = dL[:, i, j]
            g_out[:, 6] = 2 * gamma * gV / (n * self.config.vmax)
            _, dX = vjp(self.model, X, g_out)
            dP = np.empty_like(P)
            dP[:, :N_DELTA] = self.neighborhood.coords_transpose(dX[:, : 9 * N_DELTA], n)
            dP[:, N_DELTA:] = self.filter.transpose(dX[:, 9 * N_DELTA :])
            grad = dP * (st.hi - st.lo) * s * (1 - s)
        return Evaluation(loss, J, gV, pred.vhat, C, grad)

    def step(self) -> LogEntry:
        """One forward/reverse pass and one Adam update of the latents."""
        entry, ev = self._evaluate_logged()
        self._update(ev.grad)
        return entry

    def _evaluate_logged(self):
        t0 = time.perf_counter()
        ev = self.evaluate()
        if not np.isfinite(ev.loss) or not np.all(np.isfinite(ev.grad)):
            raise OptimizationDiverged(
                f"non-finite loss or gradient at iteration {self.iteration}", self.state.copy()
            )
        entry = LogEntry(self.iteration, ev.compliance, ev.compliance / self.J0, ev.g_v,
                         self.config.gamma(self.iteration), ev.loss, time.perf_counter() - t0)
        self.log.append(entry)
        return entry, ev

    def _update(self, grad):
        self.adam.update([self.state.z], [grad])
        self.iteration += 1

    def run(self, callback=None) -> tuple[DesignState, ConvergenceLog]:
        """Iterate until the loss changes by less than ``tol`` with |g_V| below
        ``feasibility_tol``, or until ``max_iter`` is reached.

        The returned state is the one evaluated in the last log entry.
        """
        prev = None
        for _ in range(self.config.max_iter):
            entry, ev = self._evaluate_logged()
            if callback is not None:
                callback(entry)
            if (prev is not None and abs(entry.loss - prev) < self.config.tol
                    and abs(entry.g_v) < self.config.feasibility_tol):
                break
            prev = entry.loss
            if len(self.log) == self.config.max_iter:
                break
            self._update(ev.grad)
        return self.state.copy(), self.log


def step(opt: Optimizer) -> tuple[DesignState, LogEntry]:
    entry = opt.step()
    return opt.state.copy(), entry


def optimize(model: MlpModel, mesh: MacroMesh, bc: BoundaryConditions,
             config: OptConfig = OptConfig(), state0: DesignState | None = None,
             callback=None) -> tuple[DesignState, ConvergenceLog, Optimizer]:
    opt = Optimizer(model, mesh, bc, config, state0)
    state, log = opt.run(callback)
    return state, log, opt


def config_dict(config: OptConfig) -> dict:
    return asdict(config)
