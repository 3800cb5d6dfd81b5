"""Classifier accuracy/agreement as a function of input image rank.

For every rank k in 0..w each image is rebuilt from its k leading singular
triplets and re-classified. The per-image SVD is factored once and reused
across ranks, which is mathematically identical to re-decomposing at each k
and w times faster.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cnn import ConfigError, Model, predict_batch
from .data import LabeledDataset
from .svd import image_factors, reconstruct
from .tensor import clamp_array

AGREEMENT = "agreement"
ACCURACY = "accuracy"


@dataclass(frozen=True)
class RankSpectrum:
    values: np.ndarray  # index k -> value, length w + 1
    mode: str
    model_id: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError(f"spectrum values must be a non-empty vector, got {values.shape}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("spectrum values must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def max_rank(self) -> int:
        return self.values.size - 1


def compute_spectrum(model: Model, data: LabeledDataset, mode: str = AGREEMENT,
                     model_id: str = "", threads: int = 1) -> RankSpectrum:
    """Mean agreement with full-rank predictions (or accuracy vs labels) per rank."""
    if mode not in (AGREEMENT, ACCURACY):
        raise ConfigError(f"mode must be '{AGREEMENT}' or '{ACCURACY}', got {mode!r}")
    if len(data) == 0:
        raise ConfigError("cannot compute a spectrum on an empty dataset")
    x_all, labels = data.batch_arrays()
    w = data.images[0].w
    full_preds = predict_batch(model, x_all)
    reference = full_preds if mode == AGREEMENT else labels

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            factors = list(pool.map(image_factors, data.images))
    else:
        factors = [image_factors(img) for img in data.images]

    values = np.empty(w + 1)
    for k in range(w):
        batch = np.empty_like(x_all)
        for i, channel_factors in enumerate(factors):
            for c, f in enumerate(channel_factors):
                batch[i, c] = reconstruct(f, k)
        batch = clamp_array(batch)
        values[k] = float((predict_batch(model, batch) == reference).mean())
    # at k == w the reconstruction is the image itself, so reuse the originals
    values[w] = float((full_preds == reference).mean())
    return RankSpectrum(values=values, mode=mode, model_id=model_id)


def spectrum_gap(a: RankSpectrum, b: RankSpectrum) -> np.ndarray:
    """Elementwise difference a - b of two spectra over the same ranks and mode."""
    if a.values.size != b.values.size:
        raise ValueError(
            f"spectra cover different rank ranges: {a.max_rank} vs {b.max_rank}"
        )
    if a.mode != b.mode:
        raise ValueError(f"spectra use different modes: {a.mode} vs {b.mode}")
    return a.values - b.values


def write_spectrum_csv(spectrum: RankSpectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("rank,value,mode,model_id\n")
        for k, v in enumerate(spectrum.values):
            fh.write(f"{k},{v!r},{spectrum.mode},{spectrum.model_id}\n")
