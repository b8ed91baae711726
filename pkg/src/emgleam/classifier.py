"""Small convolutional classifier built from first principles on numpy.

The stack is the classic small-CNN recipe adapted to the reconstructed
crop sizes: conv 5x5 -> pool 2x2 -> conv 5x5 -> pool 2x2 -> three dense
layers, rectifier nonlinearities throughout, trained with minibatch Adam
on softmax cross-entropy.  Forward, backward and the optimizer are
implemented here directly; a finite-difference gradient check validates
the backward pass.

Flatten sizes per standard input (channels 6/16, dense 120/84):
31x21 -> 128, 31x20 -> 128, 45x21 -> 256.

Training runs in float32 with a fixed sample order per seed; gradient
checks run in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ValidationError
from .util import dump_json

_MAGIC = b"EMGL"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CnnSpec:
    input_hw: tuple[int, int]
    n_classes: int
    conv_channels: tuple[int, int] = (6, 16)
    fc_sizes: tuple[int, int] = (120, 84)
    kernel: int = 5

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if min(self.conv_channels) < 1 or min(self.fc_sizes) < 1:
            raise ValidationError("zero-sized layer")
        h, w = self.input_hw
        for _ in range(2):
            h, w = h - self.kernel + 1, w - self.kernel + 1
            if h < 1 or w < 1:
                raise ValidationError(f"input {self.input_hw} too small for two {self.kernel}x{self.kernel} convolutions")
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValidationError(f"input {self.input_hw} pools away to nothing")

    def as_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "n_classes": self.n_classes,
            "conv_channels": list(self.conv_channels),
            "fc_sizes": list(self.fc_sizes),
            "kernel": self.kernel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CnnSpec":
        return cls(
            input_hw=tuple(d["input_hw"]),
            n_classes=int(d["n_classes"]),
            conv_channels=tuple(d["conv_channels"]),
            fc_sizes=tuple(d["fc_sizes"]),
            kernel=int(d.get("kernel", 5)),
        )


class _Conv:
    """Valid 5x5 convolution as an im2col matrix product.

    Patches copy into a (C*k*k, N*OH*OW) matrix once per pass (contiguous
    row writes); the same matrix serves the weight gradient, and the input
    gradient scatters the column gradient back with the mirrored loop.
    """

    def __init__(self, c_in: int, c_out: int, k: int, dtype):
        self.w = np.zeros((c_out, c_in, k, k), dtype=dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.k = k

    params = property(lambda self: [self.w, self.b])
    fan_in = property(lambda self: self.w.shape[1] * self.k * self.k)

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.k
        oh, ow = h - k + 1, w - k + 1
        self._x_shape = x.shape
        cols = np.empty((c * k * k, n * oh * ow), dtype=x.dtype)
        row = 0
        for ci in range(c):
            for u in range(k):
                for v in range(k):
                    cols[row] = x[:, ci, u : u + oh, v : v + ow].reshape(-1)
                    row += 1
        self._cols = cols
        out = self.w.reshape(self.w.shape[0], -1) @ cols  # (F, N*OH*OW)
        out += self.b[:, None]
        return np.ascontiguousarray(out.reshape(-1, n, oh, ow).transpose(1, 0, 2, 3))

    def backward(self, g):
        n, f, oh, ow = g.shape
        k = self.k
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        self.gw = (gm @ self._cols.T).reshape(self.w.shape)
        self.gb = gm.sum(axis=1)
        dcols = self.w.reshape(f, -1).T @ gm  # (C*k*k, N*OH*OW)
        dx = np.zeros(self._x_shape, dtype=g.dtype)
        row = 0
        c = self._x_shape[1]
        for ci in range(c):
            for u in range(k):
                for v in range(k):
                    dx[:, ci, u : u + oh, v : v + ow] += dcols[row].reshape(n, oh, ow)
                    row += 1
        return dx

    @property
    def grads(self):
        return [self.gw, self.gb]


class _MaxPool2:
    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        self._in_shape = x.shape
        blocks = x[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        self._arg = blocks.argmax(axis=-1)
        return blocks.max(axis=-1)

    def backward(self, g):
        n, c, h2, w2 = g.shape
        flat = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(flat, self._arg[..., None], g[..., None], axis=-1)
        flat = flat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros(self._in_shape, dtype=g.dtype)
        gx[:, :, : h2 * 2, : w2 * 2] = flat.reshape(n, c, h2 * 2, w2 * 2)
        return gx


class _Relu:
    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class _Flatten:
    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class _Dense:
    def __init__(self, n_in: int, n_out: int, dtype):
        self.w = np.zeros((n_in, n_out), dtype=dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    params = property(lambda self: [self.w, self.b])
    fan_in = property(lambda self: self.w.shape[0])

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, g):
        self.gw = self._x.T @ g
        self.gb = g.sum(axis=0)
        return g @ self.w.T

    @property
    def grads(self):
        return [self.gw, self.gb]


class CnnModel:
    """Layer stack with a flat parameter-vector view."""

    def __init__(self, spec: CnnSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.meta: dict = {}
        k = spec.kernel
        c1, c2 = spec.conv_channels
        f1, f2 = spec.fc_sizes
        h, w = spec.input_hw
        h, w = (h - k + 1) // 2, (w - k + 1) // 2
        h, w = (h - k + 1) // 2, (w - k + 1) // 2
        self.flatten_size = c2 * h * w
        self.layers = [
            _Conv(1, c1, k, self.dtype),
            _Relu(),
            _MaxPool2(),
            _Conv(c1, c2, k, self.dtype),
            _Relu(),
            _MaxPool2(),
            _Flatten(),
            _Dense(self.flatten_size, f1, self.dtype),
            _Relu(),
            _Dense(f1, f2, self.dtype),
            _Relu(),
            _Dense(f2, spec.n_classes, self.dtype),
        ]
        self.n_params = sum(p.size for lay in self.layers for p in lay.params)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != tuple(self.spec.input_hw):
            raise ValidationError(f"batch shape {x.shape} does not match input {self.spec.input_hw}")
        return x[:, None, :, :]  # single luminance channel

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = self._check_input(x)
        for lay in self.layers:
            out = lay.forward(out)
        return out

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Mean cross-entropy over the batch; returns (loss, flat grads, logits)."""
        logits = self.forward(x)
        y = np.asarray(y)
        n = logits.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsumexp
        loss = float(-logp[np.arange(n), y].mean())
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        g = (g / n).astype(self.dtype)
        for lay in reversed(self.layers):
            g = lay.backward(g)
        return loss, self.flat_grads(), logits

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for lay in self.layers for p in lay.params])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([g.ravel() for lay in self.layers for g in lay.grads])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=self.dtype)
        if flat.size != self.n_params:
            raise ValidationError(f"expected {self.n_params} parameters, got {flat.size}")
        if not np.all(np.isfinite(flat)):
            raise ValidationError("non-finite parameters")
        pos = 0
        for lay in self.layers:
            for p in lay.params:
                p[...] = flat[pos : pos + p.size].reshape(p.shape)
                pos += p.size

    def softmax(self, x: np.ndarray) -> np.ndarray:
        logits = self.forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        probs = self.softmax(x)
        return probs.argmax(axis=1), probs


def init_model(spec: CnnSpec, seed: int = 0, dtype=np.float32) -> CnnModel:
    """Fan-in-scaled uniform weights (limit sqrt(6/fan_in)), zero biases."""
    model = CnnModel(spec, dtype)
    rng = np.random.default_rng(seed)
    for lay in model.layers:
        if isinstance(lay, (_Conv, _Dense)):
            limit = np.sqrt(6.0 / lay.fan_in)
            lay.w[...] = rng.uniform(-limit, limit, size=lay.w.shape).astype(model.dtype)
            lay.b[...] = 0.0
    return model


def predict(model: CnnModel, image: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax class of a single image; ties break toward the lower index."""
    labels, probs = model.predict_batch(np.asarray(image)[None])
    return int(labels[0]), probs[0]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be non-negative")


@dataclass
class TrainResult:
    model: CnnModel
    history: list[dict]
    best_epoch: int
    best_val_accuracy: float

    def save_history(self, path) -> None:
        dump_json(path, {
            "history": self.history,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
        })


def accuracy(model: CnnModel, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    return evaluate(model, x, y, batch_size)[1]


def evaluate(model: CnnModel, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a labeled set, batched."""
    y = np.asarray(y)
    hits = 0
    loss_sum = 0.0
    for i in range(0, len(x), batch_size):
        yb = y[i : i + batch_size]
        logits = model.forward(x[i : i + batch_size])
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss_sum += float(-logp[np.arange(len(yb)), yb].sum())
        hits += int((logits.argmax(axis=1) == yb).sum())
    return loss_sum / len(x), hits / len(x)


def train(model: CnnModel, train_set, val_set, config: TrainConfig) -> TrainResult:
    """Seeded-shuffle minibatch Adam; keeps the best-validation checkpoint.

    train_set and val_set are (images, labels) pairs.  The returned model
    carries the epoch with the highest validation accuracy (first such
    epoch on ties) and meta["val_accuracy"] records it.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValidationError("empty training or validation set")
    x_train = np.asarray(x_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=np.int64)
    x_val = np.asarray(x_val, dtype=model.dtype)
    y_val = np.asarray(y_val, dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    params = model.flat_params().astype(np.float64)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0
    best_params = params.copy()
    best_key = (-1.0, -np.inf)  # (val accuracy, -train loss)
    best_epoch = -1
    history: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x_train))
        losses = []
        hits = 0
        for i in range(0, len(order), config.batch_size):
            batch = order[i : i + config.batch_size]
            loss, grads, logits = model.loss_and_grads(x_train[batch], y_train[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            losses.append(loss)
            hits += int((logits.argmax(axis=1) == y_train[batch]).sum())
            t += 1
            g = grads.astype(np.float64)
            m = config.beta1 * m + (1 - config.beta1) * g
            v = config.beta2 * v + (1 - config.beta2) * g * g
            m_hat = m / (1 - config.beta1**t)
            v_hat = v / (1 - config.beta2**t)
            params -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
            model.set_flat_params(params)
        val_loss, val_acc = evaluate(model, x_val, y_val)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_accuracy": hits / len(x_train),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
        })
        # ties in validation accuracy resolve to the lower validation loss
        # (then the earlier epoch): small validation sets saturate their
        # accuracy early, but the loss keeps tracking convergence
        key = (val_acc, -val_loss)
        if key > best_key:
            best_key = key
            best_epoch = epoch
            best_params = params.copy()

    model.set_flat_params(best_params)
    model.meta["val_accuracy"] = best_key[0]
    model.meta["best_epoch"] = best_epoch
    return TrainResult(model, history, best_epoch, best_key[0])


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    spec: CnnSpec,
    tolerance: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    step: float = 1e-4,
) -> GradCheckReport:
    """Analytic gradient vs central finite differences on sampled coordinates.

    Runs in float64.  Specs are kept small (<= 5k parameters) so the
    numeric sweep stays cheap.  Coordinates whose +/-step interval crosses
    a rectifier kink (detected by the one-sided differences disagreeing)
    are resampled: the loss is not differentiable there, so a finite
    difference says nothing about the analytic gradient.
    """
    model = init_model(spec, seed=seed, dtype=np.float64)
    if model.n_params > 5000:
        raise ValidationError(f"grad check wants small specs, got {model.n_params} parameters")
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((2, *spec.input_hw))
    y = rng.integers(0, spec.n_classes, size=2)

    base_loss, analytic, _ = model.loss_and_grads(x, y)
    params = model.flat_params()
    n = min(n_coords, params.size)
    coords = rng.permutation(params.size)

    worst = 0.0
    checked = 0
    for idx in coords:
        if checked >= n:
            break
        saved = params[idx]
        params[idx] = saved + step
        model.set_flat_params(params)
        lp, _, _ = model.loss_and_grads(x, y)
        params[idx] = saved - step
        model.set_flat_params(params)
        lm, _, _ = model.loss_and_grads(x, y)
        params[idx] = saved
        d_fwd = (lp - base_loss) / step
        d_bwd = (base_loss - lm) / step
        scale = max(abs(d_fwd), abs(d_bwd), 1e-8)
        if abs(d_fwd - d_bwd) > 0.1 * scale:
            continue  # kink inside the interval; not a valid probe point
        checked += 1
        numeric = (lp - lm) / (2 * step)
        denom = max(abs(analytic[idx]), abs(numeric), 1e-8)
        worst = max(worst, float(abs(analytic[idx] - numeric) / denom))
    model.set_flat_params(params)
    return GradCheckReport(max_rel_error=worst, n_checked=int(checked), tolerance=tolerance)


def save_model(model: CnnModel, path) -> None:
    """Binary weight file: magic, format version, spec block, f32 params."""
    spec_block = json.dumps({"spec": model.spec.as_dict(), "meta": model.meta}, sort_keys=True).encode()
    params = model.flat_params().astype("<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(spec_block)))
        fh.write(spec_block)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def load_model(path, dtype=np.float32) -> CnnModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValidationError(f"{path}: not a model file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported format version {version}")
        (spec_len,) = struct.unpack("<I", fh.read(4))
        block = json.loads(fh.read(spec_len).decode())
        (count,) = struct.unpack("<Q", fh.read(8))
        params = np.frombuffer(fh.read(count * 4), dtype="<f4")
    if params.size != count:
        raise ValidationError(f"{path}: truncated parameter block")
    model = CnnModel(CnnSpec.from_dict(block["spec"]), dtype)
    model.meta = dict(block.get("meta", {}))
    model.set_flat_params(params.astype(dtype))
    return model
