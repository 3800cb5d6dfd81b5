"""Saliency maps: vanilla input gradients and rank-integrated gradients.

The rank-integrated map accumulates, for k = 1..w, the input gradient taken
on the rank-k reconstruction of the image, reduced per pixel by the maximum
over channels and weighted by (w - k) / w. The weight schedule is pluggable;
the default gives the heaviest weight to the lowest rank and weight zero to
the full-rank term.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cnn import ConfigError, Model, forward, input_gradient
from .svd import image_factors, reconstruct
from .tensor import ImageTensor, clamp_array

VANILLA = "vanilla"
RIG = "rig"

_METHOD_CODES = {VANILLA: 1, RIG: 2}

SALIENCY_MAGIC = b"RSAL"


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # (w, h), already reduced over channels
    method: str
    class_index: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"saliency values must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("saliency map contains non-finite values")
        if self.method not in _METHOD_CODES:
            raise ValueError(f"unknown saliency method {self.method!r}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def w(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]


def _channel_max(grad: np.ndarray) -> np.ndarray:
    return grad.max(axis=0)


def _resolve_class(model: Model, x: ImageTensor, class_index: int | None) -> int:
    if class_index is None:
        return forward(model, x).top_class
    if not 0 <= class_index < model.num_classes:
        raise ConfigError(f"class index {class_index} out of range [0, {model.num_classes})")
    return class_index


def vanilla_gradient(model: Model, x: ImageTensor, class_index: int | None = None,
                     of_softmax: bool = True) -> SaliencyMap:
    """Input gradient of the chosen class output, max-reduced over channels."""
    i = _resolve_class(model, x, class_index)
    grad = input_gradient(model, x, i, of_softmax=of_softmax)
    return SaliencyMap(values=_channel_max(grad), method=VANILLA, class_index=i)


def default_weight(k: int, w: int) -> float:
    return (w - k) / w


def rig(model: Model, x: ImageTensor, class_index: int | None = None,
        of_softmax: bool = True,
        weight_fn: Callable[[int, int], float] = default_weight) -> SaliencyMap:
    """Rank-integrated gradients for the top (or given) class of the full-rank image.

    The image's per-channel SVD is factored once; each rank-k input is
    rebuilt from those factors. Accumulation runs in ascending k so results
    are bit-reproducible.
    """
    i = _resolve_class(model, x, class_index)
    w = x.w
    factors = image_factors(x)
    acc = np.zeros((x.w, x.h))
    for k in range(1, w + 1):
        channels = np.empty_like(x.data)
        for c, f in enumerate(factors):
            channels[c] = reconstruct(f, k)
        xk = ImageTensor(clamp_array(channels), x.transposed_on_load)
        grad = input_gradient(model, xk, i, of_softmax=of_softmax)
        acc += weight_fn(k, w) * _channel_max(grad)
    return SaliencyMap(values=acc, method=RIG, class_index=i)


# ---------------------------------------------------------------------------
# rendering


def normalized_bytes(m: SaliencyMap) -> np.ndarray:
    """Min-max normalize to 8-bit gray; a constant map renders mid-gray."""
    lo = m.values.min()
    hi = m.values.max()
    if hi == lo:
        norm = np.full_like(m.values, 0.5)
    else:
        norm = (m.values - lo) / (hi - lo)
    return np.rint(norm * 255.0).astype(np.uint8)


def write_pgm(m: SaliencyMap, path) -> None:
    """Binary P5, 8-bit, min-max normalized."""
    gray = normalized_bytes(m)
    rows, cols = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(gray.tobytes())


def write_raw(m: SaliencyMap, path) -> None:
    """16-byte header (magic, u32 w, u32 h, u32 method code) + float64 LE values."""
    with open(path, "wb") as fh:
        fh.write(SALIENCY_MAGIC)
        fh.write(struct.pack("<III", m.w, m.h, _METHOD_CODES[m.method]))
        fh.write(m.values.astype("<f8").tobytes())


def read_raw(path) -> SaliencyMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SALIENCY_MAGIC:
        raise ValueError(f"bad saliency magic {blob[:4]!r}")
    w, h, code = struct.unpack_from("<III", blob, 4)
    values = np.frombuffer(blob, dtype="<f8", count=w * h, offset=16).reshape(w, h)
    method = {v: k for k, v in _METHOD_CODES.items()}[code]
    return SaliencyMap(values=values.copy(), method=method, class_index=-1)
