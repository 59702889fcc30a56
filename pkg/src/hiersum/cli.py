"""Command-line pipeline: train, evaluate, summarize, gradcheck, cost, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every tunable is a flag; `--config FILE` reads `key=value` lines (keys are
flag names without the leading dashes, '#' starts a comment) and explicit
flags win over the file. All randomness flows from `--seed`.

Model checkpoints are auto-detected on load: hierarchical models use the
"HRNN1" format, flat baselines a "FLAT1" container (variant byte, dims,
arrays, epoch).
"""

import argparse
import os
import struct
import sys

import numpy as np

from . import data as data_mod
from . import evaluation as eval_mod
from . import model as model_mod
from . import training as training_mod
from .numerics import ShapeError
from .recurrent import LstmParameters
from .training import NumericError, TrainingConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

HRNN_VARIANTS = ("hrnn-bi", "hrnn-single")
ALL_VARIANTS = HRNN_VARIANTS + eval_mod.FLAT_VARIANTS

FLAT_MAGIC = b"FLAT1"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {text}")
    return value


def _build_parser():
    parser = _Parser(prog="hiersum", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value file of flag defaults")
        p.add_argument("--seed", type=int, default=0)

    def add_model_shape(p):
        p.add_argument("--subshot-length", type=_positive_int, default=40)
        p.add_argument("--d1", type=_positive_int, default=128)
        p.add_argument("--d2", type=_positive_int, default=128)
        p.add_argument("--hidden", type=_positive_int, default=128,
                       help="flat-baseline hidden size")
        p.add_argument("--flat-length", type=_positive_int, default=80)
        p.add_argument("--max-frames", type=int, default=1600,
                       help="fixed-shape frame count; 0 keeps native lengths")
        p.add_argument("--stride", type=_positive_int, default=None)
        p.add_argument("--masked", action=argparse.BooleanOptionalAction,
                       default=False,
                       help="encode padded subshots at their last real frame")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("dataset")
    p.add_argument("out_model")
    add_common(p)
    add_model_shape(p)
    p.add_argument("--variant", choices=ALL_VARIANTS, default="hrnn-bi")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--init-scale", type=float, default=0.08)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--shuffle", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--metrics-log", default=None,
                   help="default: <out_model>.log")

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("model")
    p.add_argument("dataset")
    add_common(p)
    add_model_shape(p)
    p.add_argument("--variant", choices=ALL_VARIANTS, default="hrnn-bi",
                   help="hrnn-single disables the backward stream; ignored "
                        "for flat checkpoints")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--budget", type=_fraction, default=0.15)
    p.add_argument("--threshold", type=float, default=None,
                   help="select p_key > threshold instead of the budget rule")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", default=None, help="also write the report here")

    p = sub.add_parser("summarize", help="select key subshots for one video")
    p.add_argument("model")
    p.add_argument("video", help="a .hrnf frame-feature file")
    add_common(p)
    add_model_shape(p)
    p.add_argument("--variant", choices=ALL_VARIANTS, default="hrnn-bi")
    p.add_argument("--budget", type=_fraction, default=0.15)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("gradcheck", help="compare BPTT against finite differences")
    add_common(p)
    p.add_argument("--instances", type=_positive_int, default=20)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--d-feat", type=_positive_int, default=3)
    p.add_argument("--d1", type=_positive_int, default=4)
    p.add_argument("--d2", type=_positive_int, default=3)
    p.add_argument("--subshot-length", type=_positive_int, default=4)
    p.add_argument("--subshots", type=_positive_int, default=3)

    p = sub.add_parser("cost", help="hierarchical vs flat sequential step counts")
    p.add_argument("total_frames", type=_positive_int)
    p.add_argument("subshot_length", type=_positive_int)

    p = sub.add_parser("synth", help="write a planted-signal synthetic dataset")
    p.add_argument("out_dir")
    add_common(p)
    p.add_argument("--n-videos", type=_positive_int, default=250)
    p.add_argument("--frames", type=_positive_int, default=400)
    p.add_argument("--subshot-length", type=_positive_int, default=20)
    p.add_argument("--d-feat", type=_positive_int, default=16)
    p.add_argument("--key-fraction", type=_fraction, default=0.2)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--train-fraction", type=_fraction, default=0.8)
    return parser


def _read_config_file(path):
    tokens = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {number}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            lowered = value.lower()
            if lowered in ("true", "false"):
                tokens.append(flag if lowered == "true" else
                              "--no-" + key.replace("_", "-"))
            else:
                tokens.extend([flag, value])
    return tokens


def _inject_config(argv):
    """Splice config-file tokens right after the subcommand so flags win."""
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if token.startswith("--config="):
            path = token.split("=", 1)[1]
            break
    if path is None:
        return argv
    if not os.path.exists(path):
        raise UsageError(f"config file {path} does not exist")
    return [argv[0]] + _read_config_file(path) + argv[1:]


def _maybe_max_frames(value):
    return None if value in (None, 0) else value


def _save_flat_checkpoint(path, baseline, epoch):
    with open(path, "wb") as fh:
        fh.write(FLAT_MAGIC)
        fh.write(struct.pack("<B", eval_mod.FLAT_VARIANTS.index(baseline.variant)))
        fh.write(
            struct.pack(
                "<III",
                baseline.fwd.input_size,
                baseline.fwd.hidden_size,
                baseline.flat_length,
            )
        )
        for _, array in eval_mod.flat_named_arrays(baseline):
            fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", epoch))


def _load_flat_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = len(FLAT_MAGIC)
    (variant_index,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if variant_index >= len(eval_mod.FLAT_VARIANTS):
        raise data_mod.DatasetError(
            f"{path}: offset {offset - 1}: unknown baseline variant "
            f"{variant_index}"
        )
    variant = eval_mod.FLAT_VARIANTS[variant_index]
    d_feat, hidden, flat_length = struct.unpack_from("<III", blob, offset)
    offset += 12
    template = eval_mod.init_flat_baseline(
        variant, d_feat, hidden, flat_length, init_scale=0.0, seed=0
    )
    for _, array in eval_mod.flat_named_arrays(template):
        count = array.size
        nbytes = 8 * count
        if len(blob) < offset + nbytes:
            raise data_mod.DatasetError(
                f"{path}: offset {offset}: truncated baseline checkpoint"
            )
        array[...] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=offset
        ).reshape(array.shape)
        offset += nbytes
    if len(blob) - offset != 4:
        raise data_mod.DatasetError(
            f"{path}: offset {offset}: expected a 4-byte epoch counter"
        )
    (epoch,) = struct.unpack_from("<I", blob, offset)
    return template, epoch


def _load_any_checkpoint(path):
    """Returns ("hrnn", model, epoch) or ("flat", baseline, epoch)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(5)
        if magic == FLAT_MAGIC:
            baseline, epoch = _load_flat_checkpoint(path)
            return "flat", baseline, epoch
        model, epoch = model_mod.load_checkpoint(path)
        return "hrnn", model, epoch
    except ValueError as exc:
        raise data_mod.DatasetError(str(exc)) from exc


def _training_config(args):
    return TrainingConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        init_scale=args.init_scale,
        grad_clip=args.grad_clip,
        shuffle=args.shuffle,
    ).validate()


def _cmd_train(args):
    config = _training_config(args)
    max_frames = _maybe_max_frames(args.max_frames)
    dataset = data_mod.load_dataset(
        args.dataset, args.subshot_length, split="train", max_frames=max_frames
    )
    if not dataset:
        raise data_mod.DatasetError(f"{args.dataset}: train split is empty")
    d_feat = dataset[0].sequence.feature_size
    if args.variant in HRNN_VARIANTS:
        model = training_mod.init_model(
            d_feat, args.d1, args.d2, args.subshot_length,
            init_scale=args.init_scale, seed=args.seed,
        )
        trained, history = training_mod.sgd_train(
            model,
            dataset,
            config,
            use_backward=args.variant == "hrnn-bi",
            stride=args.stride,
            masked=args.masked,
        )
        model_mod.save_checkpoint(args.out_model, trained, args.epochs)
    else:
        baseline = eval_mod.init_flat_baseline(
            args.variant, d_feat, args.hidden, args.flat_length,
            init_scale=args.init_scale, seed=args.seed,
        )
        trained, history = eval_mod.train_flat_baseline(baseline, dataset, config)
        _save_flat_checkpoint(args.out_model, trained, args.epochs)
    log_path = args.metrics_log or args.out_model + ".log"
    lines = [f"{epoch} {value:.17g}" for epoch, value in enumerate(history, start=1)]
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return EXIT_OK


def _make_predictor(kind, loaded, args):
    if kind == "flat":
        return eval_mod.make_flat_predictor(loaded, args.subshot_length), args.subshot_length
    predictor = eval_mod.make_hrnn_predictor(
        loaded,
        use_backward=args.variant != "hrnn-single",
        stride=args.stride,
        masked=args.masked,
    )
    return predictor, loaded.subshot_length


def _cmd_evaluate(args):
    kind, loaded, _epoch = _load_any_checkpoint(args.model)
    predictor, subshot_length = _make_predictor(kind, loaded, args)
    split = None if args.split == "all" else args.split
    dataset = data_mod.load_dataset(
        args.dataset, subshot_length,
        split=split, max_frames=_maybe_max_frames(args.max_frames),
    )
    if not dataset:
        raise data_mod.DatasetError(f"{args.dataset}: split {args.split!r} is empty")
    report = eval_mod.evaluate_dataset(
        predictor, dataset,
        budget_fraction=args.budget, threshold=args.threshold,
        workers=args.workers,
    )
    text = eval_mod.format_report(report)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_summarize(args):
    kind, loaded, _epoch = _load_any_checkpoint(args.model)
    predictor, subshot_length = _make_predictor(kind, loaded, args)
    seq = data_mod.read_features(args.video)
    max_frames = _maybe_max_frames(args.max_frames)
    if max_frames is not None:
        seq = data_mod.normalize_length(seq, max_frames, subshot_length)
    predictions = predictor(seq)
    selection = eval_mod.select_key_subshots(
        predictions, budget_fraction=args.budget, threshold=args.threshold
    )
    for index in selection.selected:
        print(index)
    return EXIT_OK


def _cmd_gradcheck(args):
    worst, overall = training_mod.run_gradient_checks(
        instances=args.instances,
        d_feat=args.d_feat,
        d1=args.d1,
        d2=args.d2,
        s=args.subshot_length,
        m=args.subshots,
        step=args.step,
        seed_base=args.seed,
    )
    for name in sorted(worst):
        print(f"{name}\t{worst[name]:.3e}")
    status = "PASS" if overall < args.tol else "FAIL"
    print(f"max\t{overall:.3e}\t{status} (tolerance {args.tol:g})")
    return EXIT_OK if overall < args.tol else EXIT_NUMERIC


def _cmd_cost(args):
    hierarchical, flat = model_mod.step_cost(args.total_frames, args.subshot_length)
    reduction = 100.0 * (1.0 - hierarchical / flat)
    print(f"hierarchical\t{hierarchical}")
    print(f"flat\t{flat}")
    print(f"reduction\t{reduction:.1f}%")
    return EXIT_OK


def _cmd_synth(args):
    videos = data_mod.generate_synthetic(
        n_videos=args.n_videos,
        total_frames=args.frames,
        subshot_length=args.subshot_length,
        d_feat=args.d_feat,
        key_fraction=args.key_fraction,
        signal=args.signal,
        seed=args.seed,
    )
    n_train = max(1, min(len(videos), round(args.train_fraction * len(videos))))
    splits = {
        video.sequence.video_id: ("train" if i < n_train else "test")
        for i, video in enumerate(videos)
    }
    data_mod.save_dataset(args.out_dir, videos, splits)
    print(f"wrote {len(videos)} videos ({n_train} train) to {args.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "summarize": _cmd_summarize,
    "gradcheck": _cmd_gradcheck,
    "cost": _cmd_cost,
    "synth": _cmd_synth,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _inject_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data_mod.DatasetError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
