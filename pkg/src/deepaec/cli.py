"""Command-line surface: scene generation, training, enhancement,
evaluation, and parameter counting.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import dsp
from .errors import DataError, InvalidArgumentError, NumericalError
from .network import MaskNet, load_config
from .objectives import LossWeights
from .scenes import ScenePlan, load_scene_dir, make_scene, save_scene_dir
from .training import (TrainPlan, evaluate, load_model, save_model, train,
                       write_history, write_report)

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERICAL_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser():
    parser = _Parser(prog="deepaec",
                     description="Joint echo cancellation, noise suppression "
                                 "and speech enhancement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", parents=[], help="synthesize scene directories")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ser-db", type=float, default=None,
                   help="fix the speech-to-echo ratio (default: random per scene)")
    p.add_argument("--snr-db", type=float, default=None,
                   help="fix the speech-to-noise ratio (default: random per scene)")
    p.add_argument("--delay-max", type=int, default=256)
    p.add_argument("--doubletalk", action="store_true",
                   help="include farend speech and echo in every scene")
    p.add_argument("--duration", type=float, default=1.0)

    p = sub.add_parser("train", help="train a model on scene directories")
    p.add_argument("--config", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--augment", default="",
                   help="comma list from {shift,scale}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes-per-epoch", type=int, default=0,
                   help="scenes drawn per epoch (default: whole pool)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-6)
    p.add_argument("--precision", choices=("double", "single"), default="double")
    p.add_argument("--accum", type=int, default=1,
                   help="gradient accumulation factor")

    p = sub.add_parser("enhance", help="enhance one recording")
    p.add_argument("--model", required=True)
    p.add_argument("--mic", required=True)
    p.add_argument("--lpb", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a model over scene directories")
    p.add_argument("--model", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("param-count", help="print trainable parameter count")
    p.add_argument("--config", required=True)

    return parser


def _load_scene_pool(root):
    if not os.path.isdir(root):
        raise FileNotFoundError(f"no such scene directory: {root}")
    subdirs = sorted(
        os.path.join(root, d) for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d))
    )
    if not subdirs:
        raise DataError(f"{root}: contains no scene directories")
    return [load_scene_dir(d) for d in subdirs]


def _cmd_gen_scenes(args):
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        plan = ScenePlan.sample(
            seed=args.seed * 1_000_003 + i,
            duration=args.duration,
            ser_db=args.ser_db,
            snr_db=args.snr_db,
            delay_max=args.delay_max,
            doubletalk=args.doubletalk,
        )
        save_scene_dir(os.path.join(args.out, f"scene_{i:05d}"), make_scene(plan))
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def _cmd_train(args):
    config = load_config(args.config)
    train_pool = _load_scene_pool(args.scenes)
    val_pool = _load_scene_pool(args.val)
    augment = {tok.strip() for tok in args.augment.split(",") if tok.strip()}
    unknown = augment - {"shift", "scale"}
    if unknown:
        raise InvalidArgumentError(f"unknown augmentations: {sorted(unknown)}")
    plan = TrainPlan(
        epochs=args.epochs,
        scenes_per_epoch=args.scenes_per_epoch or len(train_pool),
        batch_size=args.batch,
        weights=LossWeights(args.alpha, args.beta),
        augment_shift="shift" in augment,
        augment_scale="scale" in augment,
        lr0=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        precision=args.precision,
        accum=args.accum,
    )
    model, _, history = train(plan, config, train_pool, val_pool)
    save_model(args.out, model)
    write_history(os.path.join(args.out, "history.txt"), history)
    last = history[-1]
    print(f"trained {args.epochs} epochs; final train {last[1]:.4f} "
          f"val {last[2]:.4f} lr {last[3]:.2e}; model saved to {args.out}")
    return 0


def _cmd_enhance(args):
    from .enhancement import enhance

    model = load_model(args.model)
    mic = dsp.read_wav(args.mic)
    lpb = dsp.read_wav(args.lpb)
    out = enhance(mic, lpb, model)
    if not np.all(np.isfinite(out)):
        raise NumericalError("enhanced output contains non-finite samples")
    dsp.write_wav(args.out, np.clip(out, -1.0, 1.0 - 1.0 / 32768))
    print(f"wrote {args.out} ({len(out)} samples)")
    return 0


def _cmd_eval(args):
    model = load_model(args.model)
    scenes = _load_scene_pool(args.scenes)
    report = evaluate(model, scenes)
    write_report(args.report, report)
    mean_impr = report["summary"]["si_sdr_impr"][0]
    print(f"evaluated {len(report['rows'])} scenes "
          f"({len(report['errors'])} failed); "
          f"mean SI-SDR improvement {mean_impr:.2f} dB; report at {args.report}")
    return 0


def _cmd_param_count(args):
    config = load_config(args.config)
    print(MaskNet(config).param_count())
    return 0


_COMMANDS = {
    "gen-scenes": _cmd_gen_scenes,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "eval": _cmd_eval,
    "param-count": _cmd_param_count,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InvalidArgumentError as exc:
        print(f"deepaec: invalid argument: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"deepaec: data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except NumericalError as exc:
        print(f"deepaec: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
