"""Fully connected ReLU surrogate: 75 microstructure inputs -> Cholesky factor + volume.

Plain numpy forward/reverse passes.  The three diagonal Cholesky outputs are
clipped from below at ``diag_floor`` so every reconstructed matrix is PSD
with a strictly positive diagonal.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .artifacts import f64_array, f64_bytes, read_artifact, write_artifact
from .dataset import DIAG_SLOTS, Dataset, reconstruct_C

log = logging.getLogger(__name__)

LAYERS = (75, 50, 50, 50, 50, 7)
DIAG_FLOOR = 1e-6


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class MlpModel:
    weights: list
    biases: list
    diag_floor: float = DIAG_FLOOR
    meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, seed: int = 0, sizes=LAYERS) -> "MlpModel":
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        W, b = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / n_in)
            W.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            b.append(np.zeros(n_out))
        return cls(W, b)

    @classmethod
    def zeros(cls, sizes=LAYERS) -> "MlpModel":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


@dataclass
class Prediction:
    raw: np.ndarray
    output: np.ndarray

    @property
    def Lhat(self) -> np.ndarray:
        return self.output[..., :6]

    @property
    def vhat(self) -> np.ndarray:
        return self.output[..., 6]

    @property
    def C(self) -> np.ndarray:
        return reconstruct_C(self.Lhat)


def _forward(model: MlpModel, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, (acts, pre)


def _clip(model: MlpModel, raw: np.ndarray):
    out = raw.copy()
    diag = list(DIAG_SLOTS)
    out[..., diag] = np.maximum(raw[..., diag], model.diag_floor)
    return out


def _clip_mask(model: MlpModel, raw: np.ndarray) -> np.ndarray:
    mask = np.ones_like(raw)
    diag = list(DIAG_SLOTS)
    mask[..., diag] = (raw[..., diag] > model.diag_floor).astype(float)
    return mask


def forward(model: MlpModel, x) -> Prediction:
    """Evaluate the network on one 75-vector or a batch of shape (N, 75)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("surrogate input contains non-finite values")
    raw, _ = _forward(model, np.atleast_2d(x))
    out = _clip(model, raw)
    if x.ndim == 1:
        raw, out = raw[0], out[0]
    return Prediction(raw, out)


def _backward(model: MlpModel, cache, g_raw: np.ndarray, need_params: bool = True):
    acts, pre = cache
    gW, gb = [], []
    g = g_raw
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (pre[i] > 0)
        if need_params:
            gW.append(acts[i].T @ g)
            gb.append(g.sum(axis=0))
        g = g @ model.weights[i].T
    return gW[::-1], gb[::-1], g


def vjp(model: MlpModel, X: np.ndarray, g_out: np.ndarray):
    """Vector-Jacobian product of the clipped outputs w.r.t. the inputs.

    Returns ``(prediction, dX)`` where ``dX[n] = g_out[n] @ d out[n] / d X[n]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    raw, cache = _forward(model, X)
    g_raw = np.asarray(g_out, dtype=float) * _clip_mask(model, raw)
    _, _, dX = _backward(model, cache, g_raw, need_params=False)
    return Prediction(raw, _clip(model, raw)), dX


def input_gradient(model: MlpModel, x) -> np.ndarray:
    """Jacobian (7, 75) of the clipped outputs at a single input."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    n_out = model.sizes[-1]
    _, J = vjp(model, np.repeat(x, n_out, axis=0), np.eye(n_out))
    return J


def loss(predictions, targets) -> float:
    """Mean over samples of the summed squared error across the 7 outputs."""
    p = predictions.output if isinstance(predictions, Prediction) else np.asarray(predictions)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    diff = np.atleast_2d(p - t)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def predict_properties(model: MlpModel, X):
    """Reconstructed elasticity matrices (N, 3, 3) and volume fractions (N,)."""
    pred = forward(model, np.atleast_2d(X))
    return pred.C, pred.vhat


class Adam:
    def __init__(self, params: list, lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: list, grads: list) -> None:
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError(f"invalid training configuration {self}")


def _eval_loss(model, data: Dataset | None) -> float:
    if data is None or len(data) == 0:
        return float("nan")
    return loss(forward(model, data.inputs), data.targets)


def train(train_set: Dataset, val_set: Dataset, test_set: Dataset | None = None,
          config: TrainConfig = TrainConfig()):
    """Mini-batch Adam on the mean squared error with early stopping.

    Returns ``(model, history)``; the model is the best-validation snapshot and
    ``history`` holds rows ``(epoch, train, val, test)``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    model = MlpModel.initialize(config.seed)
    params = model.params()
    opt = Adam(params, config.learning_rate)
    X, Y = train_set.inputs, train_set.targets
    n = len(train_set)
    history = []
    best = (np.inf, 0, model.copy())
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            raw, cache = _forward(model, X[idx])
            g = 2.0 * (_clip(model, raw) - Y[idx]) / idx.size
            gW, gb, _ = _backward(model, cache, g * _clip_mask(model, raw))
            opt.update(params, [p for pair in zip(gW, gb) for p in pair])
        row = (epoch, _eval_loss(model, train_set), _eval_loss(model, val_set),
               _eval_loss(model, test_set))
        history.append(row)
        if not np.isfinite(row[1]) or not np.isfinite(row[2]):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: train={row[1]} val={row[2]}")
        if row[2] < best[0]:
            best = (row[2], epoch, model.copy())
        elif epoch - best[1] >= config.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best[1])
            break
        if epoch % 10 == 0:
            log.info("epoch %d train %.3e val %.3e", epoch, row[1], row[2])
    model = best[2]
    model.meta = {"best_epoch": best[1], "best_val": best[0], "epochs_run": len(history),
                  "train_config": asdict(config), "n_train": n}
    return model, history


def save_model(path, model: MlpModel) -> None:
    header = {"layers": list(model.sizes), "activation": "relu", "diag_floor": model.diag_floor,
              "diag_slots": list(DIAG_SLOTS), "meta": model.meta}
    write_artifact(path, "model", header, f64_bytes(model.params()))


def load_model(path) -> MlpModel:
    header, payload = read_artifact(path, "model")
    flat = f64_array(payload)
    sizes = header["layers"]
    W, b, pos = [], [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W.append(flat[pos : pos + n_in * n_out].reshape(n_in, n_out))
        pos += n_in * n_out
        b.append(flat[pos : pos + n_out].copy())
        pos += n_out
    if pos != flat.size:
        raise ValueError(f"{path}: weight payload size mismatch")
    return MlpModel(W, b, header["diag_floor"], header.get("meta", {}))


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train,val,test\n")
        for e, a, b, c in history:
            fh.write(f"{e},{a!r},{b!r},{c!r}\n")
