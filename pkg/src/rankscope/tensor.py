"""Dense float64 matrix helpers and the unit-interval image tensor type.

Matrices are plain 2-D numpy arrays (row-major float64). Images hold one
w-by-h matrix per channel with every entry in [0, 1]; the first matrix
dimension is kept <= the second, transposing at ingestion when needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeMismatchError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check naming both shapes."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise ValueError("matrix product overflowed to non-finite entries")
    return out


def spectral_norm(a) -> float:
    """Largest singular value of `a`."""
    from .svd import svd as _svd  # local import avoids a module cycle

    a = as_matrix(a)
    if a.shape[0] > a.shape[1]:
        a = a.T
    return float(_svd(a).sigma[0])


@dataclass(frozen=True)
class ImageTensor:
    """Image with `channels` w-by-h unit-interval matrices, w <= h.

    `transposed_on_load` records that a reader swapped the axes to satisfy
    the w <= h convention, so writers can restore the original orientation.
    """

    data: np.ndarray  # (channels, w, h) float64 in [0, 1]
    transposed_on_load: bool = field(default=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 3:
            raise ShapeMismatchError(f"image data must be (channels, w, h), got shape {arr.shape}")
        c, w, h = arr.shape
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if w < 1 or h < 1 or w > h:
            raise ShapeMismatchError(f"image matrices must satisfy 1 <= w <= h, got {w}x{h}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite entries")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image entries must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        c, w, h = self.data.shape
        return (w, h, c)

    def channel(self, i: int) -> np.ndarray:
        return self.data[i]


def image_from_array(arr, transposed_on_load: bool = False) -> ImageTensor:
    """Build an ImageTensor from a (channels, w, h) array already in [0, 1]."""
    return ImageTensor(np.array(arr, dtype=np.float64), transposed_on_load)


def clamp_unit(t: ImageTensor | np.ndarray) -> ImageTensor:
    """Clip every entry into [0, 1].

    Accepts either an ImageTensor or a raw (channels, w, h) array, since
    reconstructions may exit the unit interval before they become images.
    """
    if isinstance(t, ImageTensor):
        return ImageTensor(np.clip(t.data, 0.0, 1.0), t.transposed_on_load)
    return ImageTensor(np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0))


def clamp_array(arr: np.ndarray) -> np.ndarray:
    """Array-level clip used by batch pipelines before wrapping as images."""
    return np.clip(arr, 0.0, 1.0)
