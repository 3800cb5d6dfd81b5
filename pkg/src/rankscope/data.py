"""Dataset ingestion (PPM, IDX), synthetic rank-structured data, truncation, caching.

The synthetic generator builds each class prototype as a sum of
`prototype_rank` outer products of seeded Gaussian-derived factors, scaled
into [0, 1]. Components are arranged hierarchically so that classifier
accuracy over input rank ramps up and then saturates: one strong background
component shared by every class, medium components shared within class
pairs, and one weak class-specific component. Directions are orthogonalized
within each prototype, which pins the prototype's singular structure to the
construction amplitudes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256
from .svd import image_rank_k
from .tensor import ImageTensor, clamp_array

SHARED_AMP = 3.0
PAIR_AMP = 1.2
PAIR_RATIO = 0.75
CLASS_AMP = 0.45
BACKGROUND_FLOOR = 0.3


class FormatError(ValueError):
    """Malformed file; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class LabeledDataset:
    images: tuple[ImageTensor, ...]
    labels: np.ndarray
    num_classes: int
    name: str

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.images),):
            raise ValueError(
                f"{labels.size} labels for {len(self.images)} images"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), got "
                f"[{labels.min()}, {labels.max()}]"
            )
        shapes = {img.data.shape for img in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images have mixed shapes: {sorted(shapes)}")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "images", tuple(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(zip(self.images, self.labels))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images[0].shape if self.images else (0, 0, 0)

    def batch_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (N, c, w, h) pixel array plus the label vector."""
        if not self.images:
            c, w, h = 0, 0, 0
            return np.zeros((0, c, w, h)), self.labels
        return np.stack([img.data for img in self.images]), self.labels


# ---------------------------------------------------------------------------
# PPM (P6 binary, maxval 255)


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        ch = blob[pos:pos + 1]
        if ch == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("unexpected end of header", pos)
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def _header_int(blob: bytes, pos: int, what: str) -> tuple[int, int]:
    token, end = _next_token(blob, pos)
    try:
        value = int(token)
    except ValueError:
        raise FormatError(f"invalid {what} {token!r}", end - len(token)) from None
    if value <= 0:
        raise FormatError(f"{what} must be positive, got {value}", end - len(token))
    return value, end


def read_ppm(path) -> ImageTensor:
    """Read a binary P6 PPM with maxval 255 into a unit-interval image."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise FormatError(f"bad PPM magic {blob[:2]!r}", 0)
    width, pos = _header_int(blob, 2, "width")
    height, pos = _header_int(blob, pos, "height")
    maxval, pos = _header_int(blob, pos, "maxval")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", pos)
    pos += 1  # single whitespace byte separating header and raster
    expected = width * height * 3
    raster = blob[pos:pos + expected]
    if len(raster) != expected:
        raise FormatError(
            f"truncated raster: {len(raster)} of {expected} bytes", pos + len(raster)
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    channels = pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
    if height > width:
        return ImageTensor(channels.transpose(0, 2, 1), transposed_on_load=True)
    return ImageTensor(channels)


def write_ppm(x: ImageTensor, path) -> None:
    """Write as binary P6; single-channel images are replicated to gray RGB."""
    channels = x.data
    if x.transposed_on_load:
        channels = channels.transpose(0, 2, 1)
    if channels.shape[0] == 1:
        channels = np.repeat(channels, 3, axis=0)
    raster = np.rint(channels.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    rows, cols, _ = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode())
        fh.write(raster.tobytes())


# ---------------------------------------------------------------------------
# IDX (big-endian MNIST container)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx(images_path, labels_path, num_classes: int | None = None,
             name: str = "idx") -> LabeledDataset:
    """Read an IDX image/label file pair of grayscale u8 images."""
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lab_blob = fh.read()
    if len(img_blob) < 16:
        raise FormatError("image file too short for IDX header", len(img_blob))
    magic, count, rows, cols = struct.unpack_from(">IIII", img_blob, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}", 0)
    if len(lab_blob) < 8:
        raise FormatError("label file too short for IDX header", len(lab_blob))
    lab_magic, lab_count = struct.unpack_from(">II", lab_blob, 0)
    if lab_magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{lab_magic:08x}", 0)
    if lab_count != count:
        raise FormatError(
            f"label count {lab_count} does not match image count {count}", 4
        )
    expected = 16 + count * rows * cols
    if len(img_blob) != expected:
        raise FormatError(
            f"truncated image payload: {len(img_blob)} bytes, expected {expected}",
            min(len(img_blob), expected),
        )
    if len(lab_blob) != 8 + count:
        raise FormatError(
            f"truncated label payload: {len(lab_blob)} bytes, expected {8 + count}",
            min(len(lab_blob), 8 + count),
        )
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if count else 0
    elif count and labels.max() >= num_classes:
        raise ValueError(
            f"label {int(labels.max())} out of range for {num_classes} classes"
        )
    raw = np.frombuffer(img_blob, dtype=np.uint8, offset=16)
    planes = raw.reshape(count, rows, cols).astype(np.float64) / 255.0
    transpose = rows > cols
    images = tuple(
        ImageTensor(
            (plane.T if transpose else plane)[None, :, :],
            transposed_on_load=transpose,
        )
        for plane in planes
    )
    return LabeledDataset(images=images, labels=labels, num_classes=num_classes, name=name)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    samples_per_class: int
    side: int
    prototype_rank: int
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.side < 1:
            raise ValueError("class count, samples per class, and side must be positive")
        if not 1 <= self.prototype_rank <= self.side:
            raise ValueError(
                f"prototype rank {self.prototype_rank} out of range [1, {self.side}]"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def _positive_unit(gen: Xoshiro256, n: int) -> np.ndarray:
    v = BACKGROUND_FLOOR + np.abs(gen.normal_array(n))
    return v / np.linalg.norm(v)


def _orthogonal_unit(gen: Xoshiro256, n: int, against: list[np.ndarray]) -> np.ndarray:
    while True:
        v = gen.normal_array(n)
        for u in against:
            v = v - (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm


def _component_amplitudes(rank: int) -> list[float]:
    """Shared amplitude, then decaying pair-level amplitudes, then the class amplitude."""
    if rank == 1:
        return [SHARED_AMP]
    pair_amps = [PAIR_AMP * PAIR_RATIO**m for m in range(rank - 2)]
    return [SHARED_AMP, *pair_amps, CLASS_AMP]


def make_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Generate the hierarchical rank-structured dataset described in the module docstring.

    Class pairs (2j, 2j+1) share the middle components; only the weakest
    component is class-specific, so low-rank truncations of samples from
    paired classes are nearly indistinguishable.
    """
    gen = Xoshiro256(spec.seed)
    n = spec.side
    r = spec.prototype_rank
    amps = _component_amplitudes(r)
    a0 = _positive_unit(gen, n)
    b0 = _positive_unit(gen, n)
    n_pairs = (spec.num_classes + 1) // 2
    pair_dirs: list[tuple[list[np.ndarray], list[np.ndarray]]] = []
    for _ in range(n_pairs):
        us, vs = [a0], [b0]
        for _ in range(max(r - 2, 0)):
            us.append(_orthogonal_unit(gen, n, us))
            vs.append(_orthogonal_unit(gen, n, vs))
        pair_dirs.append((us, vs))
    prototypes = []
    for j in range(spec.num_classes):
        us, vs = pair_dirs[j // 2]
        us, vs = list(us), list(vs)
        if r >= 2:
            us.append(_orthogonal_unit(gen, n, us))
            vs.append(_orthogonal_unit(gen, n, vs))
        proto = np.zeros((n, n))
        for amp, u, v in zip(amps, us, vs):
            proto += amp * np.outer(u, v)
        proto = clamp_array(proto / proto.max())
        prototypes.append(proto)
    images = []
    labels = []
    for j in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            sample = prototypes[j]
            if spec.noise_sigma > 0:
                sample = sample + spec.noise_sigma * gen.normal_array((n, n))
            images.append(ImageTensor(clamp_array(sample)[None, :, :]))
            labels.append(j)
    return LabeledDataset(
        images=tuple(images),
        labels=np.array(labels, dtype=np.int64),
        num_classes=spec.num_classes,
        name=f"synthetic-r{r}-n{n}-seed{spec.seed}",
    )


def synthetic_prototypes(spec: SyntheticSpec) -> list[np.ndarray]:
    """The noiseless class prototypes for `spec` (same stream as make_synthetic)."""
    noiseless = SyntheticSpec(
        num_classes=spec.num_classes,
        samples_per_class=1,
        side=spec.side,
        prototype_rank=spec.prototype_rank,
        noise_sigma=0.0,
        seed=spec.seed,
    )
    return [img.data[0].copy() for img, _ in make_synthetic(noiseless)]


def split_by_class(data: LabeledDataset, train_per_class: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic split: first `train_per_class` samples of each class train, rest test."""
    counts = {j: 0 for j in range(data.num_classes)}
    train_idx, test_idx = [], []
    for i, label in enumerate(data.labels):
        j = int(label)
        if counts[j] < train_per_class:
            train_idx.append(i)
            counts[j] += 1
        else:
            test_idx.append(i)
    def take(indices, suffix):
        return LabeledDataset(
            images=tuple(data.images[i] for i in indices),
            labels=data.labels[indices],
            num_classes=data.num_classes,
            name=f"{data.name}-{suffix}",
        )
    return take(train_idx, "train"), take(test_idx, "test")


def truncate_dataset(data: LabeledDataset, k: int, reverse: bool = False) -> LabeledDataset:
    """Apply the per-channel rank-k (or top-k-removed) map to every sample."""
    images = tuple(image_rank_k(img, k, reverse=reverse) for img in data.images)
    kind = "rev" if reverse else "rank"
    return LabeledDataset(
        images=images,
        labels=data.labels,
        num_classes=data.num_classes,
        name=f"{data.name}-{kind}{k}",
    )


# ---------------------------------------------------------------------------
# on-disk cache: JSONL manifest plus raw little-endian tensors


def _write_atomic(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_dataset(data: LabeledDataset, directory) -> None:
    """Write tensors plus a manifest of `index,label,file` JSON lines."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, (img, label) in enumerate(data):
        fname = f"t{i:06d}.bin"
        w, h, c = img.shape
        payload = struct.pack("<III", w, h, c) + img.data.astype("<f8").tobytes()
        _write_atomic(os.path.join(directory, fname), payload)
        lines.append(json.dumps({"index": i, "label": int(label), "file": fname}))
    manifest = "\n".join(lines) + ("\n" if lines else "")
    _write_atomic(os.path.join(directory, "manifest.jsonl"), manifest.encode())


def load_dataset(directory, num_classes: int | None = None,
                 name: str | None = None) -> LabeledDataset:
    manifest_path = os.path.join(directory, "manifest.jsonl")
    entries = []
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    entries.sort(key=lambda e: e["index"])
    images, labels = [], []
    for entry in entries:
        with open(os.path.join(directory, entry["file"]), "rb") as fh:
            blob = fh.read()
        w, h, c = struct.unpack_from("<III", blob, 0)
        count = c * w * h
        expected = 12 + 8 * count
        if len(blob) != expected:
            raise FormatError(
                f"tensor file {entry['file']} has {len(blob)} bytes, expected {expected}",
                min(len(blob), expected),
            )
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=12).reshape(c, w, h)
        images.append(ImageTensor(arr.copy()))
        labels.append(entry["label"])
    labels = np.array(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(
        images=tuple(images),
        labels=labels,
        num_classes=num_classes,
        name=name or os.path.basename(os.path.normpath(str(directory))),
    )
