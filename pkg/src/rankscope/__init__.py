"""rankscope: classifier robustness through the singular values of images."""

from .attack import (
    AttackConfig,
    AttackReport,
    adversarial_dataset,
    evaluate_attack,
    pgd_attack,
)
from .cnn import (
    Model,
    Prediction,
    TrainConfig,
    evaluate,
    forward,
    input_gradient,
    load_model,
    reference_layers,
    save_model,
    train,
)
from .data import (
    LabeledDataset,
    SyntheticSpec,
    load_dataset,
    make_synthetic,
    read_idx,
    read_ppm,
    save_dataset,
    split_by_class,
    truncate_dataset,
    write_ppm,
)
from .fourier import (
    DftPlan,
    LowPassReport,
    complex_numerical_rank,
    dft_plan,
    lowpass_spatial,
    verify_bound,
)
from .rng import Xoshiro256, splitmix64_stream
from .saliency import SaliencyMap, rig, vanilla_gradient
from .spectrum import RankSpectrum, compute_spectrum, spectrum_gap
from .svd import (
    SvdFactors,
    TruncationTiming,
    benchmark_truncation,
    image_rank_k,
    numerical_rank,
    svd,
    truncate_rank,
    truncate_reverse,
)
from .tensor import ImageTensor, clamp_unit, matmul, spectral_norm

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackReport",
    "DftPlan",
    "ImageTensor",
    "LabeledDataset",
    "LowPassReport",
    "Model",
    "Prediction",
    "RankSpectrum",
    "SaliencyMap",
    "SvdFactors",
    "SyntheticSpec",
    "TrainConfig",
    "TruncationTiming",
    "Xoshiro256",
    "adversarial_dataset",
    "benchmark_truncation",
    "clamp_unit",
    "complex_numerical_rank",
    "compute_spectrum",
    "dft_plan",
    "evaluate",
    "evaluate_attack",
    "forward",
    "image_rank_k",
    "input_gradient",
    "load_dataset",
    "load_model",
    "lowpass_spatial",
    "make_synthetic",
    "matmul",
    "numerical_rank",
    "pgd_attack",
    "read_idx",
    "read_ppm",
    "reference_layers",
    "rig",
    "save_dataset",
    "save_model",
    "spectral_norm",
    "spectrum_gap",
    "splitmix64_stream",
    "split_by_class",
    "svd",
    "train",
    "truncate_dataset",
    "truncate_rank",
    "truncate_reverse",
    "vanilla_gradient",
    "verify_bound",
    "write_ppm",
]
