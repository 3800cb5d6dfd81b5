"""Small differentiable CNN: forward inference, exact backprop, SGD training.

All arithmetic is float64 and every stochastic choice (init, shuffling) runs
through the package PRNG, so a (seed, data, config) triple reproduces
parameters bit-for-bit. Layer vocabulary: 3x3 stride-1 pad-1 convolutions,
ReLU, 2x2 max pooling (first-index tie break in the row-major window scan),
flatten, dense, terminal softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Xoshiro256
from .tensor import ImageTensor, ShapeMismatchError

CONV, RELU, MAXPOOL, FLATTEN, DENSE, SOFTMAX = 1, 2, 3, 4, 5, 6

CHECKPOINT_MAGIC = b"RSCK"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid architecture, training, or label configuration."""


@dataclass(frozen=True)
class LayerSpec:
    kind: int
    arg: int = 0  # conv: out_channels; dense: out_features


def reference_layers(num_classes: int, conv1: int = 8, conv2: int = 16) -> list[LayerSpec]:
    """Conv-ReLU-Pool-Conv-ReLU-Pool-Flatten-Dense-Softmax reference stack."""
    return [
        LayerSpec(CONV, conv1),
        LayerSpec(RELU),
        LayerSpec(MAXPOOL),
        LayerSpec(CONV, conv2),
        LayerSpec(RELU),
        LayerSpec(MAXPOOL),
        LayerSpec(FLATTEN),
        LayerSpec(DENSE, num_classes),
        LayerSpec(SOFTMAX),
    ]


class Prediction(NamedTuple):
    probs: np.ndarray
    top_class: int


# ---------------------------------------------------------------------------
# layer implementations; x batches are (N, channels, w, h)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, w, h = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, w * h, c * 9)


def _col2im(dcols: np.ndarray, shape: tuple) -> np.ndarray:
    n, c, w, h = shape
    dpadded = np.zeros((n, c, w + 2, h + 2))
    blocks = dcols.reshape(n, w, h, c, 3, 3)
    for di in range(3):
        for dj in range(3):
            dpadded[:, :, di:di + w, dj:dj + h] += blocks[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return dpadded[:, :, 1:w + 1, 1:h + 1]


class _ConvLayer:
    def __init__(self, in_channels: int, out_channels: int):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight_shape = (out_channels, in_channels, 3, 3)
        self.bias_shape = (out_channels,)

    def bind(self, params: np.ndarray, grads: np.ndarray, offset: int) -> int:
        wn = int(np.prod(self.weight_shape))
        bn = self.out_channels
        self.w = params[offset:offset + wn].reshape(self.weight_shape)
        self.dw = grads[offset:offset + wn].reshape(self.weight_shape)
        self.b = params[offset + wn:offset + wn + bn]
        self.db = grads[offset + wn:offset + wn + bn]
        return offset + wn + bn

    def fan_in(self) -> int:
        return self.in_channels * 9

    def forward(self, x):
        n, c, w, h = x.shape
        cols = _im2col(x)
        out = cols @ self.w.reshape(self.out_channels, -1).T + self.b
        return out.reshape(n, w, h, self.out_channels).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, dy, cache):
        x_shape, cols = cache
        n, _, w, h = x_shape
        dyf = dy.transpose(0, 2, 3, 1).reshape(n, w * h, self.out_channels)
        self.dw += np.einsum("npo,npf->of", dyf, cols).reshape(self.weight_shape)
        self.db += dyf.sum(axis=(0, 1))
        dcols = dyf @ self.w.reshape(self.out_channels, -1)
        return _col2im(dcols, x_shape)


class _ReluLayer:
    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, dy, cache):
        return dy * (cache > 0.0)


class _MaxPoolLayer:
    def forward(self, x):
        n, c, w, h = x.shape
        if w % 2 or h % 2:
            raise ShapeMismatchError(f"max pool needs even spatial dims, got {w}x{h}")
        windows = x.reshape(n, c, w // 2, 2, h // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = windows.reshape(n, c, w // 2, h // 2, 4)
        idx = flat.argmax(axis=-1)  # argmax takes the first maximum: row-major tie break
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, dy, cache):
        x_shape, idx = cache
        n, c, w, h = x_shape
        dflat = np.zeros((n, c, w // 2, h // 2, 4))
        np.put_along_axis(dflat, idx[..., None], dy[..., None], axis=-1)
        return dflat.reshape(n, c, w // 2, h // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


class _FlattenLayer:
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache)


class _DenseLayer:
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.weight_shape = (out_features, in_features)
        self.bias_shape = (out_features,)

    def bind(self, params, grads, offset):
        wn = self.out_features * self.in_features
        self.w = params[offset:offset + wn].reshape(self.weight_shape)
        self.dw = grads[offset:offset + wn].reshape(self.weight_shape)
        self.b = params[offset + wn:offset + wn + self.out_features]
        self.db = grads[offset + wn:offset + wn + self.out_features]
        return offset + wn + self.out_features

    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x):
        return x @ self.w.T + self.b, x

    def backward(self, dy, cache):
        self.dw += dy.T @ cache
        self.db += dy.sum(axis=0)
        return dy @ self.w


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------


class Model:
    """Layer stack over one flat float64 parameter vector.

    `input_shape` is (w, h, c); batches are passed as (N, c, w, h) arrays.
    """

    def __init__(self, layer_specs: list[LayerSpec], input_shape: tuple[int, int, int], num_classes: int):
        if not layer_specs or layer_specs[-1].kind != SOFTMAX:
            raise ConfigError("layer stack must end with a softmax layer")
        self.layer_specs = list(layer_specs)
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        w, h, c = self.input_shape
        self._runtime: list = []
        shape: tuple = ("spatial", c, w, h)
        for spec in layer_specs[:-1]:
            if spec.kind == CONV:
                if shape[0] != "spatial":
                    raise ConfigError("convolution after flatten is not supported")
                layer = _ConvLayer(shape[1], spec.arg)
                shape = ("spatial", spec.arg, shape[2], shape[3])
            elif spec.kind == RELU:
                layer = _ReluLayer()
            elif spec.kind == MAXPOOL:
                if shape[0] != "spatial":
                    raise ConfigError("max pool after flatten is not supported")
                if shape[2] % 2 or shape[3] % 2:
                    raise ConfigError(f"max pool needs even spatial dims, got {shape[2]}x{shape[3]}")
                layer = _MaxPoolLayer()
                shape = ("spatial", shape[1], shape[2] // 2, shape[3] // 2)
            elif spec.kind == FLATTEN:
                layer = _FlattenLayer()
                shape = ("flat", shape[1] * shape[2] * shape[3])
            elif spec.kind == DENSE:
                if shape[0] != "flat":
                    raise ConfigError("dense layer requires flattened input")
                layer = _DenseLayer(shape[1], spec.arg)
                shape = ("flat", spec.arg)
            else:
                raise ConfigError(f"unknown layer kind {spec.kind}")
            self._runtime.append(layer)
        if shape != ("flat", self.num_classes):
            raise ConfigError(f"stack produces {shape}, expected {self.num_classes} logits")
        total = sum(
            int(np.prod(l.weight_shape)) + int(np.prod(l.bias_shape))
            for l in self._runtime
            if hasattr(l, "weight_shape")
        )
        self.params = np.zeros(total)
        self.grads = np.zeros(total)
        offset = 0
        for layer in self._runtime:
            if hasattr(layer, "bind"):
                offset = layer.bind(self.params, self.grads, offset)

    @property
    def n_params(self) -> int:
        return self.params.size

    def initialize(self, seed: int) -> "Model":
        """He-style init: weights uniform in +-sqrt(6/fan_in), biases zero."""
        gen = Xoshiro256(seed)
        for layer in self._runtime:
            if hasattr(layer, "fan_in"):
                bound = np.sqrt(6.0 / layer.fan_in())
                layer.w[...] = gen.uniform_array(layer.weight_shape, -bound, bound)
                layer.b[...] = 0.0
        return self

    # -- forward / backward ------------------------------------------------

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        w, h, c = self.input_shape
        if x.ndim != 4 or x.shape[1:] != (c, w, h):
            raise ShapeMismatchError(
                f"batch shape {x.shape} does not match input shape (N, {c}, {w}, {h})"
            )
        return x

    def logits_batch(self, x: np.ndarray, want_caches: bool = False):
        x = self._check_batch(x)
        caches = []
        for layer in self._runtime:
            x, cache = layer.forward(x)
            caches.append(cache)
        return (x, caches) if want_caches else x

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits_batch(x))

    def backward_from_logits(self, dlogits: np.ndarray, caches: list) -> np.ndarray:
        """Propagate a logit-space gradient to the input; accumulates into self.grads."""
        dx = dlogits
        for layer, cache in zip(reversed(self._runtime), reversed(caches)):
            dx = layer.backward(dx, cache)
        return dx

    def loss_and_gradients(self, x: np.ndarray, labels: np.ndarray) -> float:
        """Mean cross-entropy over the batch; parameter gradients land in self.grads."""
        logits, caches = self.logits_batch(x, want_caches=True)
        probs = softmax(logits)
        n = x.shape[0]
        rows = np.arange(n)
        loss = float(-np.log(probs[rows, labels]).mean())
        dlogits = probs.copy()
        dlogits[rows, labels] -= 1.0
        dlogits /= n
        self.grads[...] = 0.0
        self.backward_from_logits(dlogits, caches)
        return loss


def image_batch(x: ImageTensor) -> np.ndarray:
    return x.data[None, :, :, :]


def forward(model: Model, x: ImageTensor) -> Prediction:
    """Softmax prediction for a single image; ties break to the lowest index."""
    probs = model.forward_batch(image_batch(x))[0]
    return Prediction(probs=probs, top_class=int(np.argmax(probs)))


def input_gradient(model: Model, x: ImageTensor, class_index: int, of_softmax: bool = True) -> np.ndarray:
    """Gradient of output `class_index` (softmax prob, or logit) w.r.t. the input.

    Returned array has the image's (c, w, h) layout.
    """
    if not 0 <= class_index < model.num_classes:
        raise ConfigError(f"class index {class_index} out of range [0, {model.num_classes})")
    logits, caches = model.logits_batch(image_batch(x), want_caches=True)
    if of_softmax:
        p = softmax(logits)[0]
        dlogits = (-p[class_index] * p)[None, :]
        dlogits[0, class_index] += p[class_index]
    else:
        dlogits = np.zeros((1, model.num_classes))
        dlogits[0, class_index] = 1.0
    model.grads[...] = 0.0
    return model.backward_from_logits(dlogits, caches)[0]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_drop_epochs: tuple[int, ...] = ()
    lr_drop_factor: float = 0.1
    batch_size: int = 32
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "lr_drop_epochs", tuple(self.lr_drop_epochs))


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    test_accuracy: float | None


def train(model: Model, data, cfg: TrainConfig, eval_data=None) -> list[EpochMetrics]:
    """SGD with momentum: v <- m*v - lr*(grad + wd*param); param <- param + v.

    Shuffling is a per-epoch Fisher-Yates permutation from the config seed.
    Mutates `model` in place and returns one metrics row per epoch.
    """
    batches = data.batch_arrays()
    x_all, y_all = batches
    n = x_all.shape[0]
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    if int(y_all.max()) >= model.num_classes:
        raise ConfigError(
            f"label {int(y_all.max())} out of range for {model.num_classes} classes"
        )
    gen = Xoshiro256(cfg.seed)
    velocity = np.zeros_like(model.params)
    lr = cfg.lr
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        if epoch in cfg.lr_drop_epochs:
            lr *= cfg.lr_drop_factor
        order = gen.permutation(n)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = model.loss_and_gradients(x_all[idx], y_all[idx])
            total_loss += loss * idx.size
            velocity *= cfg.momentum
            velocity -= lr * (model.grads + cfg.weight_decay * model.params)
            model.params += velocity
        acc = evaluate(model, eval_data) if eval_data is not None else None
        metrics.append(
            EpochMetrics(epoch=epoch, lr=lr, train_loss=total_loss / n, test_accuracy=acc)
        )
    return metrics


def predict_batch(model: Model, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    preds = [
        model.forward_batch(x[s:s + chunk]).argmax(axis=1)
        for s in range(0, x.shape[0], chunk)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, data) -> float:
    """Fraction of samples whose top class equals the label."""
    x_all, y_all = data.batch_arrays()
    if x_all.shape[0] == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return float((predict_batch(model, x_all) == y_all).mean())


def write_metrics_csv(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,lr,train_loss,test_accuracy\n")
        for m in metrics:
            acc = "" if m.test_accuracy is None else repr(m.test_accuracy)
            fh.write(f"{m.epoch},{m.lr!r},{m.train_loss!r},{acc}\n")


# ---------------------------------------------------------------------------
# checkpoints: magic, u32 version, input shape, class count, layer table, params


class CheckpointError(ValueError):
    """Malformed or version-incompatible checkpoint file."""


def save_model(model: Model, path) -> None:
    head = bytearray()
    head += CHECKPOINT_MAGIC
    head += struct.pack("<I", CHECKPOINT_VERSION)
    w, h, c = model.input_shape
    head += struct.pack("<IIII", w, h, c, model.num_classes)
    head += struct.pack("<I", len(model.layer_specs))
    for spec in model.layer_specs:
        head += struct.pack("<II", spec.kind, spec.arg)
    head += struct.pack("<Q", model.n_params)
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(model.params.astype("<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    w, h, c, num_classes = struct.unpack_from("<IIII", blob, 8)
    (n_layers,) = struct.unpack_from("<I", blob, 24)
    offset = 28
    specs = []
    for _ in range(n_layers):
        kind, arg = struct.unpack_from("<II", blob, offset)
        specs.append(LayerSpec(kind, arg))
        offset += 8
    (n_params,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    expected = offset + 8 * n_params
    if len(blob) != expected:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes, expected {expected}")
    model = Model(specs, (w, h, c), num_classes)
    if model.n_params != n_params:
        raise CheckpointError(
            f"parameter count {n_params} does not match architecture ({model.n_params})"
        )
    model.params[...] = np.frombuffer(blob, dtype="<f8", count=n_params, offset=offset)
    return model
