"""Projected gradient descent attacks in L-inf and L2, plus batch evaluation metrics.

Every iterate stays inside both the epsilon ball around the clean image and
the [0, 1] box. Untargeted attacks ascend the cross-entropy of the true
label; targeted attacks descend the cross-entropy of the target class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import ConfigError, Model, predict_batch, softmax
from .data import LabeledDataset
from .rng import Xoshiro256
from .tensor import ImageTensor

LINF = "linf"
L2 = "l2"


@dataclass(frozen=True)
class AttackConfig:
    norm: str = LINF
    epsilon: float = 8 / 255
    steps: int = 20
    step_size: float | None = None  # default 2.5 * epsilon / steps
    targeted: bool = False
    random_start: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.norm not in (LINF, L2):
            raise ConfigError(f"norm must be '{LINF}' or '{L2}', got {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0 and self.steps > 0:
            raise ConfigError(f"step size must be positive, got {self.step_size}")

    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps if self.steps else 0.0


@dataclass(frozen=True)
class AttackReport:
    attack_success_rate: float
    recovery_rate: float
    mean_linf: float
    mean_l2: float
    n_samples: int


@dataclass(frozen=True)
class AttackSample:
    sample_id: int
    label: int
    target: int | None
    pred_clean: int
    pred_adv: int
    linf: float
    l2: float
    success: bool
    recovered: bool


def _project(delta: np.ndarray, norm: str, epsilon: float) -> np.ndarray:
    if norm == LINF:
        return np.clip(delta, -epsilon, epsilon)
    flat = delta.reshape(delta.shape[0], -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    scale = np.where(norms > epsilon, np.where(norms > 0, epsilon / np.maximum(norms, 1e-300), 1.0), 1.0)
    return delta * scale[:, None, None, None]


def _random_start(shape: tuple, norm: str, epsilon: float, gen: Xoshiro256) -> np.ndarray:
    n = shape[0]
    d = int(np.prod(shape[1:]))
    if norm == LINF:
        return gen.uniform_array(shape, -epsilon, epsilon)
    directions = gen.normal_array((n, d))
    lengths = np.sqrt((directions * directions).sum(axis=1))
    lengths = np.maximum(lengths, 1e-300)
    radii = epsilon * gen.uniforms(n) ** (1.0 / d)
    return ((directions / lengths[:, None]) * radii[:, None]).reshape(shape)


def _loss_input_gradients(model: Model, x: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the cross-entropy of `classes` w.r.t. the input."""
    logits, caches = model.logits_batch(x, want_caches=True)
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(x.shape[0]), classes] -= 1.0
    model.grads[...] = 0.0
    return model.backward_from_logits(dlogits, caches)


def pgd_attack_batch(model: Model, x: np.ndarray, labels: np.ndarray,
                     targets: np.ndarray | None, cfg: AttackConfig,
                     gen: Xoshiro256) -> np.ndarray:
    """PGD on a (N, c, w, h) batch; returns the adversarial batch."""
    x = np.asarray(x, dtype=np.float64)
    adv = x.copy()
    if cfg.random_start:
        adv = np.clip(x + _random_start(x.shape, cfg.norm, cfg.epsilon, gen), 0.0, 1.0)
    step = cfg.resolved_step_size()
    loss_classes = targets if cfg.targeted else labels
    direction = -1.0 if cfg.targeted else 1.0
    for _ in range(cfg.steps):
        grad = _loss_input_gradients(model, adv, loss_classes)
        if cfg.norm == LINF:
            adv = adv + direction * step * np.sign(grad)
        else:
            flat = grad.reshape(grad.shape[0], -1)
            norms = np.maximum(np.sqrt((flat * flat).sum(axis=1)), 1e-300)
            adv = adv + direction * step * grad / norms[:, None, None, None]
        adv = np.clip(x + _project(adv - x, cfg.norm, cfg.epsilon), 0.0, 1.0)
    return adv


def pgd_attack(model: Model, x: ImageTensor, label: int,
               target: int | None = None, cfg: AttackConfig = AttackConfig()) -> ImageTensor:
    """Adversarial version of one image under the epsilon-ball and box constraints."""
    if cfg.targeted:
        if target is None:
            raise ConfigError("targeted attack requires a target class")
        if target == label:
            raise ConfigError(f"target class {target} equals the true label")
    elif target is not None:
        raise ConfigError("target class given but config is untargeted")
    gen = Xoshiro256(cfg.seed)
    targets = None if target is None else np.array([target], dtype=np.int64)
    adv = pgd_attack_batch(
        model, x.data[None], np.array([label], dtype=np.int64), targets, cfg, gen
    )
    return ImageTensor(adv[0], x.transposed_on_load)


def draw_targets(labels: np.ndarray, num_classes: int, gen: Xoshiro256) -> np.ndarray:
    """Per-sample targets uniform over the classes different from the label."""
    targets = np.empty_like(labels)
    for i, label in enumerate(labels):
        t = gen.randint(num_classes - 1)
        targets[i] = t + 1 if t >= label else t
    return targets


def attack_details(model: Model, data: LabeledDataset,
                   cfg: AttackConfig) -> tuple[AttackReport, list[AttackSample]]:
    """Attack every sample and tabulate success/recovery plus perturbation norms."""
    x_all, labels = data.batch_arrays()
    n = x_all.shape[0]
    if n == 0:
        raise ConfigError("cannot attack an empty dataset")
    gen = Xoshiro256(cfg.seed)
    targets = draw_targets(labels, data.num_classes, gen) if cfg.targeted else None
    pred_clean = predict_batch(model, x_all)
    adv = pgd_attack_batch(model, x_all, labels, targets, cfg, gen)
    pred_adv = predict_batch(model, adv)
    delta = (adv - x_all).reshape(n, -1)
    linf = np.abs(delta).max(axis=1)
    l2 = np.sqrt((delta * delta).sum(axis=1))
    if cfg.targeted:
        success = pred_adv == targets
    else:
        success = pred_adv != labels
    recovered = pred_adv == labels
    samples = [
        AttackSample(
            sample_id=i,
            label=int(labels[i]),
            target=None if targets is None else int(targets[i]),
            pred_clean=int(pred_clean[i]),
            pred_adv=int(pred_adv[i]),
            linf=float(linf[i]),
            l2=float(l2[i]),
            success=bool(success[i]),
            recovered=bool(recovered[i]),
        )
        for i in range(n)
    ]
    report = AttackReport(
        attack_success_rate=float(success.mean()),
        recovery_rate=float(recovered.mean()),
        mean_linf=float(linf.mean()),
        mean_l2=float(l2.mean()),
        n_samples=n,
    )
    return report, samples


def evaluate_attack(model: Model, data: LabeledDataset, cfg: AttackConfig) -> AttackReport:
    report, _ = attack_details(model, data, cfg)
    return report


def adversarial_dataset(model: Model, data: LabeledDataset, cfg: AttackConfig) -> LabeledDataset:
    """Attacked copy of a dataset, e.g. for trainers consuming adversarial batches."""
    x_all, labels = data.batch_arrays()
    if x_all.shape[0] == 0:
        raise ConfigError("cannot attack an empty dataset")
    gen = Xoshiro256(cfg.seed)
    targets = draw_targets(labels, data.num_classes, gen) if cfg.targeted else None
    adv = pgd_attack_batch(model, x_all, labels, targets, cfg, gen)
    images = tuple(ImageTensor(adv[i]) for i in range(adv.shape[0]))
    return LabeledDataset(
        images=images,
        labels=labels,
        num_classes=data.num_classes,
        name=f"{data.name}-adv",
    )


def write_attack_csv(samples: list[AttackSample], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("sample_id,label,target,pred_clean,pred_adv,linf,l2,success,recovered\n")
        for s in samples:
            target = "" if s.target is None else s.target
            fh.write(
                f"{s.sample_id},{s.label},{target},{s.pred_clean},{s.pred_adv},"
                f"{s.linf!r},{s.l2!r},{1 if s.success else 0},{1 if s.recovered else 0}\n"
            )
