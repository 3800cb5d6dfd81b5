"""Command-line harness: truncation, spectra, saliency, attacks, training, checks.

Exit codes: 0 success, 1 domain errors (missing/malformed files, range and
convergence failures), 2 usage errors (unknown flags, missing arguments).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import attack as attack_mod
from . import cnn, data, fourier, saliency, spectrum, svd


def _positive_int(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def _epoch_list(value: str) -> tuple[int, ...]:
    if not value.strip():
        return ()
    return tuple(int(tok) for tok in value.split(","))


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def _load_model(path: str) -> cnn.Model:
    return cnn.load_model(path)


def _default_threads() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_truncate(args) -> None:
    image = data.read_ppm(args.input)
    out = svd.image_rank_k(image, args.rank, reverse=args.reverse)
    _ensure_parent(args.output)
    data.write_ppm(out, args.output)


def cmd_synth(args) -> None:
    spec = data.SyntheticSpec(
        num_classes=args.classes,
        samples_per_class=args.per_class,
        side=args.side,
        prototype_rank=args.rank,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    dataset = data.make_synthetic(spec)
    if args.train_per_class is not None:
        train_set, test_set = data.split_by_class(dataset, args.train_per_class)
        data.save_dataset(train_set, os.path.join(args.out, "train"))
        data.save_dataset(test_set, os.path.join(args.out, "test"))
    else:
        data.save_dataset(dataset, args.out)


def cmd_train(args) -> None:
    train_set = data.load_dataset(args.data)
    eval_set = data.load_dataset(args.eval) if args.eval else None
    num_classes = train_set.num_classes if args.classes is None else args.classes
    w, h, c = train_set.image_shape
    model = cnn.Model(
        cnn.reference_layers(num_classes, conv1=args.conv1, conv2=args.conv2),
        (w, h, c),
        num_classes,
    )
    model.initialize(args.seed)
    cfg = cnn.TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_drop_epochs=args.lr_drop_epochs,
        lr_drop_factor=args.lr_drop_factor,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    metrics = cnn.train(model, train_set, cfg, eval_data=eval_set) if args.epochs else []
    _ensure_parent(args.out)
    cnn.save_model(model, args.out)
    if args.metrics:
        _ensure_parent(args.metrics)
        cnn.write_metrics_csv(metrics, args.metrics)


def cmd_spectrum(args) -> None:
    dataset = data.load_dataset(args.data)
    model = _load_model(args.model)
    model_id = args.model_id or os.path.splitext(os.path.basename(args.model))[0]
    result = spectrum.compute_spectrum(
        model, dataset, mode=args.mode, model_id=model_id, threads=args.threads
    )
    _ensure_parent(args.out)
    spectrum.write_spectrum_csv(result, args.out)


def cmd_rig(args) -> None:
    if args.input:
        image = data.read_ppm(args.input)
    else:
        dataset = data.load_dataset(args.data)
        if not 0 <= args.index < len(dataset):
            raise ValueError(f"sample index {args.index} out of range [0, {len(dataset)})")
        image = dataset.images[args.index]
    model = _load_model(args.model)
    of_softmax = not args.logit
    if args.method == saliency.RIG:
        result = saliency.rig(model, image, class_index=args.class_index, of_softmax=of_softmax)
    else:
        result = saliency.vanilla_gradient(
            model, image, class_index=args.class_index, of_softmax=of_softmax
        )
    _ensure_parent(args.out)
    saliency.write_pgm(result, args.out)
    if args.raw:
        _ensure_parent(args.raw)
        saliency.write_raw(result, args.raw)


def cmd_attack(args) -> None:
    dataset = data.load_dataset(args.data)
    if args.limit is not None and args.limit < len(dataset):
        dataset = data.LabeledDataset(
            images=dataset.images[: args.limit],
            labels=dataset.labels[: args.limit],
            num_classes=dataset.num_classes,
            name=dataset.name,
        )
    model = _load_model(args.model)
    cfg = attack_mod.AttackConfig(
        norm=args.norm,
        epsilon=args.eps,
        steps=args.steps,
        step_size=args.step_size,
        targeted=args.targeted,
        random_start=not args.no_random_start,
        seed=args.seed,
    )
    report, samples = attack_mod.attack_details(model, dataset, cfg)
    _ensure_parent(args.out)
    attack_mod.write_attack_csv(samples, args.out)
    print(
        f"samples={report.n_samples} success_rate={report.attack_success_rate:.4f} "
        f"recovery_rate={report.recovery_rate:.4f} mean_linf={report.mean_linf:.6f} "
        f"mean_l2={report.mean_l2:.6f}"
    )


def cmd_fourier_check(args) -> None:
    reports = fourier.verify_bound(args.size, args.trials, seed=args.seed, threads=args.threads)
    _ensure_parent(args.out)
    fourier.write_reports_csv(reports, args.out)
    violations = sum(not r.bound_satisfied for r in reports)
    print(f"checks={len(reports)} violations={violations}")
    if violations:
        raise ValueError(f"low-pass rank bound violated in {violations} checks")


def cmd_bench_svd(args) -> None:
    timings = svd.benchmark_truncation(
        args.width, args.height, args.channels, args.trials, seed=args.seed
    )
    _ensure_parent(args.out)
    svd.write_timings_csv(timings, args.out)
    means = np.array([t.seconds for t in timings])
    cv = float(means.std() / means.mean()) if means.mean() > 0 else 0.0
    print(f"ranks={len(timings)} mean_seconds={means.mean():.6f} cv={cv:.4f}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankscope",
        description="Rank-based robustness toolkit over truncated SVD image approximations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("truncate", help="write the rank-k approximation of a PPM image")
    p.add_argument("--input", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--reverse", action="store_true", help="remove the k largest triplets instead")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("synth", help="generate the synthetic rank-structured dataset")
    p.add_argument("--classes", type=_positive_int, default=10)
    p.add_argument("--per-class", type=_positive_int, default=250)
    p.add_argument("--side", type=_positive_int, default=16)
    p.add_argument("--rank", type=_positive_int, default=5)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--train-per-class", type=_positive_int, default=None,
                   help="also split into train/ and test/ subdirectories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the reference CNN on a cached dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest.jsonl")
    p.add_argument("--eval", default=None, help="held-out dataset directory")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--lr-drop-epochs", type=_epoch_list, default=())
    p.add_argument("--lr-drop-factor", type=float, default=0.1)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--conv1", type=_positive_int, default=8)
    p.add_argument("--conv2", type=_positive_int, default=16)
    p.add_argument("--classes", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="per-epoch metrics CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("spectrum", help="accuracy/agreement across every input rank")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=(spectrum.AGREEMENT, spectrum.ACCURACY),
                   default=spectrum.AGREEMENT)
    p.add_argument("--model-id", default=None)
    p.add_argument("--threads", type=_positive_int, default=_default_threads())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("rig", help="saliency map (rank-integrated or vanilla gradients)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="PPM image path")
    src.add_argument("--data", help="dataset directory (use with --index)")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.add_argument("--method", choices=(saliency.RIG, saliency.VANILLA), default=saliency.RIG)
    p.add_argument("--logit", action="store_true",
                   help="differentiate the pre-softmax logit instead of the probability")
    p.add_argument("--out", required=True, help="PGM output path")
    p.add_argument("--raw", default=None, help="optional raw float64 dump path")
    p.set_defaults(func=cmd_rig)

    p = sub.add_parser("attack", help="PGD attack over a dataset, per-sample CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--norm", choices=(attack_mod.LINF, attack_mod.L2), default=attack_mod.LINF)
    p.add_argument("--eps", type=float, default=8 / 255)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--targeted", action="store_true")
    p.add_argument("--no-random-start", action="store_true")
    p.add_argument("--limit", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("fourier-check", help="verify the low-pass spatial rank bound")
    p.add_argument("--size", type=_positive_int, default=16)
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=_positive_int, default=_default_threads())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fourier_check)

    p = sub.add_parser("bench-svd", help="time image truncation across every rank")
    p.add_argument("--width", type=_positive_int, default=32)
    p.add_argument("--height", type=_positive_int, default=32)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--trials", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_svd)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
