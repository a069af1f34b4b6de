"""Command-line entry point: simulate, make-bench, train, eval, diagnose, render.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines whose keys are the long flag names (dashes or underscores); explicit
flags override the file. Exit status: 0 ok, 2 invalid input, 1 other errors.
"""

import argparse
import logging
import os
import sys

from . import datasets
from .degradation import MODES, SCALES, parse_key_values
from .diagnostics import evaluate_space, summarize, torch_extractor
from .imagecore import load_disparity, render_disparity
from .losses import LossConfig
from .network import NetworkConfig, StereoNet, covering_d_max, load_checkpoint
from .trainer import TrainConfig, evaluate, self_boost, train_stage

log = logging.getLogger("asymstereo")

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _build_parser():
    p = argparse.ArgumentParser(prog="asymstereo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key = value file; flags override it")
        return sp

    sp = cmd("simulate", "degrade the right views of an HR stereo dataset")
    sp.add_argument("--src", help="directory of scene/{left,right}.png [+ disp.pfm]")
    sp.add_argument("--out")
    sp.add_argument("--mode", choices=MODES, default="BIC")
    sp.add_argument("--scale", type=int, choices=SCALES, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--name")
    sp.add_argument("--split", choices=("train", "test"), default="train")
    sp.add_argument("--d-max", type=int, default=64)

    sp = cmd("make-bench", "generate the random-dot benchmark")
    sp.add_argument("--out")
    sp.add_argument("--n-scenes", type=int, default=20)
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--d-max", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=MODES, default="BIC")
    sp.add_argument("--scale", type=int, choices=SCALES, default=4)
    sp.add_argument("--split", choices=("train", "test"), default="train")

    sp = cmd("train", "self-boosting training; writes stage_k.ckpt and train_log.tsv")
    sp.add_argument("--train", help="training manifest")
    sp.add_argument("--val", help="validation manifest (enables best-checkpointing)")
    sp.add_argument("--out")
    sp.add_argument("--init", help="checkpoint to start from instead of a fresh network")
    sp.add_argument("--K", type=int, default=3, help="boosting stages after stage 0 (0 trains stage 0 only)")
    sp.add_argument("--setting", choices=("S1", "S2", "S3", "S4"), default="S1")
    sp.add_argument("--epochs-per-stage", type=int, default=30)
    sp.add_argument("--batch-size", type=int, default=2)
    sp.add_argument("--crop-h", type=int, default=128)
    sp.add_argument("--crop-w", type=int, default=256)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--adam-beta1", type=float, default=0.9)
    sp.add_argument("--adam-beta2", type=float, default=0.999)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=3.0)
    sp.add_argument("--lam", type=float, default=0.1)
    sp.add_argument("--use-warp-mask", type=_bool, default=True)
    sp.add_argument("--early-stop", type=_bool, default=False)
    sp.add_argument("--d-max", type=int, help="network d_max; defaults to one stride above the manifest's d_max")
    sp.add_argument("--feature-channels", type=int, default=16)
    sp.add_argument("--feature-stride", type=int, choices=(1, 2, 4), default=4)
    sp.add_argument("--num-extractor-blocks", type=int, default=4)
    sp.add_argument("--matcher-channels", type=int, default=16)
    sp.add_argument("--norm", choices=("none", "group"), default="group")

    sp = cmd("eval", "per-scene and mean 3PE/EPE of a checkpoint")
    sp.add_argument("--ckpt")
    sp.add_argument("--data", help="manifest with ground truth")
    sp.add_argument("--setting", choices=("S1", "S2", "S3", "S4"), default="S1")
    sp.add_argument("--out", help="also write the table to this file")

    sp = cmd("diagnose", "feature PSNR and WTA 3PE of the image space and checkpoint feature spaces")
    sp.add_argument("--data", help="manifest with HR right views and ground truth")
    sp.add_argument("--ckpt", action="append", default=[], help="repeatable")
    sp.add_argument("--d-max", type=int, help="defaults to the manifest's d_max")
    sp.add_argument("--patch", type=int, default=5)
    sp.add_argument("--out", help="also write the table to this file")

    sp = cmd("render", "colorize a disparity map")
    sp.add_argument("--disp", help=".pfm or 16-bit KITTI .png")
    sp.add_argument("--out")
    sp.add_argument("--d-max", type=float)
    sp.add_argument("--colormap", default="viridis")
    return p


def _apply_config(parser, argv):
    """Parse ``argv``; values from a --config file become the subcommand's defaults."""
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        with open(args.config) as f:
            values = parse_key_values(f.read())
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
            if isinstance(known[dest], argparse._AppendAction):
                defaults[dest] = [v.strip() for v in value.split(",") if v.strip()]
            else:
                defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = ["--" + d.replace("_", "-") for d in _REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        raise ConfigError(f"missing required options: {', '.join(missing)}")
    return args


_REQUIRED = {
    "simulate": ("src", "out"), "make-bench": ("out",), "train": ("train", "out"),
    "eval": ("ckpt", "data"), "diagnose": ("data",), "render": ("disp", "out"),
}


def _emit(rows, out=None):
    text = "".join("\t".join(str(v) for v in r) + "\n" for r in rows)
    sys.stdout.write(text)
    if out:
        with open(out, "w") as f:
            f.write(text)


def _fmt(x):
    return f"{x:.4f}"


def cmd_simulate(a):
    m = datasets.simulate_dataset(a.src, a.out, a.mode, a.scale, a.seed, a.name, a.split, a.d_max)
    print(f"wrote {len(m)} scenes to {m.path}")


def cmd_make_bench(a):
    if min(a.height, a.width) < 64:
        raise ValueError("benchmark size must be at least 64 in both dimensions")
    m = datasets.make_random_dot_benchmark(a.out, a.n_scenes, (a.height, a.width), a.d_max, a.seed,
                                           a.mode, a.scale, a.split)
    print(f"wrote {len(m)} scenes to {m.path}")


def cmd_train(a):
    manifest = datasets.load_manifest(a.train)
    data = datasets.load_samples(manifest)
    val = datasets.load_samples(a.val) if a.val else None
    cfg = TrainConfig(learning_rate=a.learning_rate, adam_beta1=a.adam_beta1, adam_beta2=a.adam_beta2,
                      epochs_per_stage=a.epochs_per_stage, batch_size=a.batch_size,
                      crop_size=(a.crop_h, a.crop_w), seed=a.seed, K=max(a.K, 1),
                      loss=LossConfig(alpha=a.alpha, lam=a.lam, use_warp_mask=a.use_warp_mask),
                      setting=a.setting, early_stop=a.early_stop)
    if a.init:
        init, _ = load_checkpoint(a.init)
    else:
        d_max = a.d_max or covering_d_max(manifest.d_max, a.feature_stride)
        init = StereoNet(NetworkConfig(d_max=d_max, feature_channels=a.feature_channels,
                                       feature_stride=a.feature_stride,
                                       num_extractor_blocks=a.num_extractor_blocks,
                                       matcher_channels=a.matcher_channels, norm=a.norm, seed=a.seed))
    os.makedirs(a.out, exist_ok=True)
    if a.K == 0:
        states = [train_stage(init, None, data, cfg, 0, val, a.out, os.path.join(a.out, "train_log.tsv"))]
    else:
        states = self_boost(data, cfg, init=init, val_data=val, out_dir=a.out)
    rows = [("stage", "final_loss", "checkpoint")]
    rows += [(s.k, _fmt(s.history[-1]["loss"]) if s.history else "nan",
              os.path.join(a.out, f"stage_{s.k}.ckpt")) for s in states]
    _emit(rows)


def cmd_eval(a):
    net, _ = load_checkpoint(a.ckpt)
    samples = datasets.load_samples(a.data)
    m = evaluate(net, samples, a.setting)
    rows = [("scene_id", "3pe_percent", "epe_px")]
    gt_samples = [s for s in samples if s.gt_disparity is not None]
    rows += [(s.scene_id, _fmt(p), _fmt(e)) for s, p, e in zip(gt_samples, m["per_scene_3pe"], m["per_scene_epe"])]
    rows.append(("mean", _fmt(m["3pe"]), _fmt(m["epe"])))
    _emit(rows, a.out)


def cmd_diagnose(a):
    manifest = datasets.load_manifest(a.data)
    samples = datasets.load_samples(manifest)
    d_max = a.d_max or manifest.d_max
    spaces = [("image", None)]
    for path in a.ckpt:
        net, _ = load_checkpoint(path)
        spaces.append((os.path.splitext(os.path.basename(path))[0], torch_extractor(net.extractor)))
    reports = [evaluate_space(ext, s, d_max, label=label, patch=a.patch) for label, ext in spaces for s in samples]
    rows = [("space", "scene_id", "psnr_db", "wta_3pe_percent")]
    rows += [r.row().split("\t") for r in reports]
    rows += [r.row().split("\t") for r in summarize(reports).values()]
    _emit(rows, a.out)


def cmd_render(a):
    fmt = "kitti_png16" if a.disp.lower().endswith(".png") else "pfm"
    render_disparity(load_disparity(a.disp, fmt), a.out, a.d_max, a.colormap)
    print(f"wrote {a.out}")


COMMANDS = {
    "simulate": cmd_simulate, "make-bench": cmd_make_bench, "train": cmd_train,
    "eval": cmd_eval, "diagnose": cmd_diagnose, "render": cmd_render,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as e:  # argparse usage errors
        return EXIT_INVALID if e.code else EXIT_OK
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, datasets.IngestionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
