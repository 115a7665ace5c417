"""Two-hidden-layer feedforward classifier in numpy.

Affine -> LeakyReLU -> dropout, twice, then an affine softmax output. Trained
on mean cross-entropy with Adam; the parameters with the best validation
weighted F1 are kept.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .stats import weighted_f1

CHECKPOINT_MAGIC = b"MLPC"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class ClassifierError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1], self.W3.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    h1: int = 256
    h2: int = 128
    leaky_slope: float = 0.01
    dropout_p: float = 0.3
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    zero_init: bool = False  # all-zero parameters; with lr = 0 this is a constant predictor

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ClassifierError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.lr < 0:
            raise ClassifierError(f"lr must be >= 0, got {self.lr}")
        if self.h1 <= 0 or self.h2 <= 0 or self.batch <= 0 or self.epochs < 0:
            raise ClassifierError("h1, h2 and batch must be positive and epochs >= 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def init_params(D: int, H1: int, H2: int, C: int, seed) -> MlpParams:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    if min(D, H1, H2, C) <= 0:
        raise ClassifierError(f"all dimensions must be positive, got {(D, H1, H2, C)}")
    rng = np.random.default_rng(seed)

    def he(fan_in, fan_out):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    return MlpParams(he(D, H1), np.zeros(H1), he(H1, H2), np.zeros(H2), he(H2, C), np.zeros(C))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def dropout_masks(rng, n: int, H1: int, H2: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Inverted-dropout masks: entries are 0 or 1 / (1 - p)."""
    keep = 1.0 - p
    m1 = (rng.random((n, H1)) < keep) / keep
    m2 = (rng.random((n, H2)) < keep) / keep
    return m1, m2


def _forward(p: MlpParams, X: np.ndarray, slope: float, masks):
    z1 = X @ p.W1 + p.b1
    a1 = _leaky(z1, slope)
    if masks is not None:
        a1 = a1 * masks[0]
    z2 = a1 @ p.W2 + p.b2
    a2 = _leaky(z2, slope)
    if masks is not None:
        a2 = a2 * masks[1]
    logits = a2 @ p.W3 + p.b3
    return logits, (z1, a1, z2, a2)


def forward(p: MlpParams, x: np.ndarray, masks=None, leaky_slope: float = 0.01) -> np.ndarray:
    """Class probabilities for one vector (D,) or a batch (n, D).

    ``masks=None`` is inference mode (no dropout); a pair of fixed masks from
    :func:`dropout_masks` reproduces a training-mode pass.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != p.W1.shape[0]:
        raise ClassifierError(f"input dim {X.shape[1]} != model dim {p.W1.shape[0]}")
    logits, _ = _forward(p, X, leaky_slope, masks)
    probs = softmax(logits)
    return probs[0] if single else probs


def loss_and_grad(p: MlpParams, X: np.ndarray, y: np.ndarray, masks=None,
                  leaky_slope: float = 0.01) -> tuple[float, MlpParams]:
    """Mean cross-entropy over the batch and its exact gradient."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    C = p.W3.shape[1]
    if n == 0:
        raise ClassifierError("empty batch")
    if y.min() < 0 or y.max() >= C:
        raise ClassifierError(f"label out of range [0, {C})")
    logits, (z1, a1, z2, a2) = _forward(p, X, leaky_slope, masks)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), y]))
    dlogits = np.exp(shifted - logz[:, None])
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    gW3 = a2.T @ dlogits
    gb3 = dlogits.sum(axis=0)
    da2 = dlogits @ p.W3.T
    if masks is not None:
        da2 = da2 * masks[1]
    dz2 = da2 * np.where(z2 > 0, 1.0, leaky_slope)
    gW2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ p.W2.T
    if masks is not None:
        da1 = da1 * masks[0]
    dz1 = da1 * np.where(z1 > 0, 1.0, leaky_slope)
    gW1 = X.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2, gW3, gb3)


def grad(p: MlpParams, X, y, masks=None, leaky_slope: float = 0.01) -> MlpParams:
    return loss_and_grad(p, X, y, masks, leaky_slope)[1]


def predict(p: MlpParams, X: np.ndarray, leaky_slope: float = 0.01) -> np.ndarray:
    logits, _ = _forward(p, np.asarray(X, dtype=np.float64), leaky_slope, None)
    return logits.argmax(axis=1)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_weighted_f1: float


@dataclass
class TrainResult:
    params: MlpParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def train(config: TrainConfig, X_train, y_train, X_val, y_val, n_classes: int | None = None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation weighted F1.

    Epoch 0 in the history is the untrained model. Training stops after
    ``patience`` epochs without improvement; the best parameters are returned.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ClassifierError("train and validation sets must be nonempty")
    if X_train.shape[1] != X_val.shape[1]:
        raise ClassifierError(f"train dim {X_train.shape[1]} != val dim {X_val.shape[1]}")
    C = n_classes if n_classes is not None else int(max(y_train.max(), y_val.max())) + 1
    rng = np.random.default_rng(config.seed)
    params = init_params(X_train.shape[1], config.h1, config.h2, C, rng)
    if config.zero_init:
        params = MlpParams(*(np.zeros_like(a) for a in params.arrays()))
    # standardize with training statistics; folded into W1/b1 at the end
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd[sd < 1e-8] = 1.0
    Xt = (X_train - mu) / sd
    Xv = (X_val - mu) / sd
    slope = config.leaky_slope
    m = [np.zeros_like(a) for a in params.arrays()]
    v = [np.zeros_like(a) for a in params.arrays()]
    step = 0

    def evaluate(pr):
        loss, _ = loss_and_grad(pr, Xt, y_train, None, slope)
        return loss, weighted_f1(y_val.tolist(), predict(pr, Xv, slope).tolist())

    loss0, f1_0 = evaluate(params)
    history = [EpochRecord(0, loss0, f1_0)]
    best, best_f1, best_epoch, stale = params.copy(), f1_0, 0, 0
    n = len(y_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            masks = dropout_masks(rng, len(idx), config.h1, config.h2, config.dropout_p) if config.dropout_p > 0 else None
            loss, g = loss_and_grad(params, Xt[idx], y_train[idx], masks, slope)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step} (lr={config.lr}); lower the learning rate")
            step += 1
            b1c = 1.0 - config.beta1 ** step
            b2c = 1.0 - config.beta2 ** step
            for k, (a, ga) in enumerate(zip(params.arrays(), g.arrays())):
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * ga
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * ga * ga
                a -= config.lr * (m[k] / b1c) / (np.sqrt(v[k] / b2c) + config.eps)
        train_loss, val_f1 = evaluate(params)
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite loss after epoch {epoch} (lr={config.lr})")
        history.append(EpochRecord(epoch, train_loss, val_f1))
        if val_f1 > best_f1:
            best, best_f1, best_epoch, stale = params.copy(), val_f1, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best.W1 = best.W1 / sd[:, None]
    best.b1 = best.b1 - mu @ best.W1
    return TrainResult(best, history, best_epoch)


def save_checkpoint(p: MlpParams, path) -> None:
    """Versioned blob: magic, version, array count, then per array ndim, shape and float32 data."""
    arrays = p.arrays()
    parts = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(arrays))]
    for a in arrays:
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, count = struct.unpack_from("<4sII", data, 0)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION or count != len(PARAM_NAMES):
        raise ClassifierError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    off = 12
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 4 * size
    return MlpParams(*arrays)


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_weighted_f1"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_weighted_f1)])
