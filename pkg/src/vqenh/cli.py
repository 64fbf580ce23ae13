"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 I/O or format error,
4 configuration or input-contract error, 5 numeric error,
6 metric-plugin error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import (AblationMask, ModelConfig, TrainConfig, encode_qp,
                   load_config, save_config)
from .data import (build_samples, parse_manifest, read_sequence,
                   synthetic_training_set, write_sequence)
from .errors import (ConfigError, FormatError, InvalidInputError, NumericError,
                     PluginError, UnknownQPError)
from .metrics import PluginRegistry, psnr, ssim, temporal_profile
from .pipeline import build_generator, count_parameters, enhance_sequence
from .train import cross_qp_eval, resolve_eval_qp, run_ablation_grid, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5
EXIT_PLUGIN = 6

_ROWS = "ABCDEFGHI"


def _global_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("model options")
    g.add_argument("--config", help="YAML configuration file")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--qp", type=int, help="quantization parameter of the input")
    g.add_argument("--qp-as", type=int, dest="qp_as",
                   help="feed the one-hot code of this trained QP instead "
                        "(required for QPs outside the vocabulary)")
    g.add_argument("--tile", type=int, help="tile size in pixels (multiple of 16)")
    g.add_argument("--tile-context", type=int, dest="tile_context",
                   help="true-content margin around each tile; default is the "
                        "convolutional receptive field, 0 gives hard splits")
    g.add_argument("--attn-downsample", type=int, choices=(1, 2, 4, 6),
                   dest="attn_downsample", help="attention input downsampling factor")
    g.add_argument("--ablation", choices=list(_ROWS), help="ablation ladder row")
    g.add_argument("--backbone", choices=("pretrained", "test-stub"),
                   help="feature extraction backbone")
    g.add_argument("--backbone-weights", dest="backbone_weights",
                   help="path to the pretrained backbone checkpoint")


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    if getattr(args, "config", None):
        model, train_cfg = load_config(args.config)
    else:
        model, train_cfg = ModelConfig(), TrainConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "tile", None) is not None:
        overrides["tile_size"] = args.tile if args.tile > 0 else None
    if getattr(args, "tile_context", None) is not None:
        overrides["tile_context"] = args.tile_context
    if getattr(args, "attn_downsample", None) is not None:
        overrides["attention_downsample_factor"] = args.attn_downsample
    if getattr(args, "ablation", None):
        overrides["ablation_mask"] = AblationMask.table_row(args.ablation)
    if getattr(args, "backbone", None):
        overrides["backbone"] = args.backbone
    if getattr(args, "backbone_weights", None):
        overrides["backbone_weights"] = args.backbone_weights
    if overrides:
        model = replace(model, **overrides)
    return model, train_cfg


def _load_or_build(args, model_config: ModelConfig):
    if getattr(args, "checkpoint", None):
        from .checkpoint import load_checkpoint

        generator, _, _ = load_checkpoint(args.checkpoint)
        return generator
    return build_generator(model_config)


def _read_input(args):
    return read_sequence(args.input, getattr(args, "format", None),
                         getattr(args, "width", None), getattr(args, "height", None))


def _training_samples(args, model: ModelConfig):
    if getattr(args, "manifest", None):
        pairs = parse_manifest(args.manifest)
        qps = ([int(q) for q in args.qps.split(",")] if getattr(args, "qps", None)
               else list(model.qp_vocabulary))
        return build_samples(pairs, qps, crop_size=args.crop_size, seed=model.seed,
                             qp_vocabulary=model.qp_vocabulary)
    if getattr(args, "synthetic_clips", 0):
        samples, _ = synthetic_training_set(
            num_clips=args.synthetic_clips, frames_per_clip=3,
            size=args.synthetic_size, qps=model.qp_vocabulary, seed=model.seed)
        return samples
    raise ConfigError("provide --manifest or --synthetic-clips for training data")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    model, train_cfg = _configs(args)
    if args.steps is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    if args.batch_size is not None:
        train_cfg = replace(train_cfg, batch_size=args.batch_size)
    if args.learning_rate is not None:
        train_cfg = replace(train_cfg, learning_rate=args.learning_rate)
    if args.checkpoint_every is not None:
        train_cfg = replace(train_cfg, checkpoint_every=args.checkpoint_every)
    samples = _training_samples(args, model)
    generator = build_generator(model)
    result = train(generator, samples, train_cfg, out_dir=args.out)
    save_config(Path(args.out) / "config.yaml", model, train_cfg)
    print(f"trained {result.steps} steps on {len(samples)} samples")
    if result.last_bundle is not None:
        print(f"final losses: l_g_total={result.last_bundle.l_g_total:.6f} "
              f"l_d={result.last_bundle.l_d:.6f}")
    print(f"loss log: {result.loss_log_path}")
    print(f"checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    model, _ = _configs(args)
    generator = _load_or_build(args, model)
    vocab = generator.config.qp_vocabulary
    if args.qp is None:
        raise ConfigError("enhance requires --qp")
    code = resolve_eval_qp(args.qp, vocab, qp_as=args.qp_as)
    seq = _read_input(args)
    tile = args.tile if args.tile is not None else generator.config.tile_size
    enhanced = enhance_sequence(
        seq.frames, code, generator,
        tile_size=tile if tile else None,
        tile_context=args.tile_context,
    )
    write_sequence(args.output, seq.with_frames(enhanced))
    print(f"enhanced {len(enhanced)} frames -> {args.output}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    model, train_cfg = _configs(args)
    rows = list(_ROWS) if args.rows in (None, "all") else [
        r.strip().upper() for r in args.rows.split(",") if r.strip()]
    if args.steps is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    samples = None
    eval_samples = None
    if args.manifest or args.synthetic_clips:
        samples = _training_samples(args, model)
        eval_samples = samples[: min(8, len(samples))]
    report = run_ablation_grid(model, rows, train_cfg if samples else None,
                               samples=samples, eval_samples=eval_samples,
                               out_dir=args.out)
    for entry in report:
        line = f"row {entry['row']}: parameters={entry['parameters']}"
        if "psnr" in entry:
            line += f" psnr={entry['psnr']:.3f} l_vgg={entry['l_vgg']:.5f}"
        line += f" speed={entry['speed_fps']:.2f}fps"
        print(line)
    if not report:
        print("no rows requested; empty report")
    return EXIT_OK


def cmd_cross_qp(args) -> int:
    model, _ = _configs(args)
    models = {}
    for item in args.model:
        if "=" not in item:
            raise ConfigError(f"--model expects tag=checkpoint, got {item!r}")
        tag, path = item.split("=", 1)
        models[tag] = path
    pairs = parse_manifest(args.manifest)
    qps = [int(q) for q in args.qps.split(",")]
    test_sets = {}
    for qp in qps:
        entries = []
        for pair in pairs:
            entries.append((pair.read_compressed(qp).frames, pair.read_raw().frames))
        test_sets[qp] = entries
    result = cross_qp_eval(models, test_sets, out_path=args.out)
    header = "model" + "".join(f"\tqp{q}" for q in result["qps"])
    print(header)
    for tag in result["tags"]:
        cells = "".join(f"\t{result['matrix'][(tag, q)]:.4f}" for q in result["qps"])
        print(tag + cells)
    return EXIT_OK


def cmd_visualize_attention(args) -> int:
    from .visualize import visualize_attention

    model, _ = _configs(args)
    generator = _load_or_build(args, model)
    seq = _read_input(args)
    queries = []
    for q in args.query:
        try:
            y, x = (int(v) for v in q.split(","))
        except ValueError as exc:
            raise InvalidInputError(f"--query expects 'row,col', got {q!r}") from exc
        queries.append((y, x))
    paths = visualize_attention(generator, seq.frames, args.frame, queries,
                                block=args.block, k=args.k, out_dir=args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_profile(args) -> int:
    seq = _read_input(args)
    profile = temporal_profile(seq.frames, args.row)
    from PIL import Image
    import numpy as np

    img = Image.fromarray(
        np.clip(np.rint(profile * 255.0), 0, 255).astype(np.uint8), mode="L")
    img.save(args.out)
    print(f"temporal profile ({profile.shape[0]} frames x {profile.shape[1]} px) "
          f"-> {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref = read_sequence(args.ref, getattr(args, "format", None),
                        getattr(args, "width", None), getattr(args, "height", None))
    test = read_sequence(args.test, getattr(args, "format", None),
                         getattr(args, "width", None), getattr(args, "height", None))
    if len(ref) != len(test):
        raise InvalidInputError(f"frame counts differ: {len(ref)} vs {len(test)}")
    registry = PluginRegistry()
    plugin_names = []
    for item in args.plugin or []:
        if "=" not in item:
            raise ConfigError(f"--plugin expects name=command, got {item!r}")
        name, command = item.split("=", 1)
        registry.register(name, command.split())
        plugin_names.append(name)
    header = ["frame", "psnr", "ssim"] + plugin_names
    print("\t".join(header))
    sums = {"psnr": [], "ssim": []}
    plugin_sums = {n: [] for n in plugin_names}
    for i, (r, t) in enumerate(zip(ref.frames, test.frames)):
        p = psnr(r, t)
        s = ssim(r, t)
        row = [str(i), f"{p:.4f}", f"{s:.6f}"]
        if p != float("inf"):
            sums["psnr"].append(p)
        sums["ssim"].append(s)
        for name in plugin_names:
            res = registry.evaluate(name, r, t)
            row.append(f"{res.value:.6f}" if res.status == "ok" else res.status)
            if res.status == "ok":
                plugin_sums[name].append(res.value)
        print("\t".join(row))
    mean_row = [
        "mean",
        f"{sum(sums['psnr']) / len(sums['psnr']):.4f}" if sums["psnr"] else "inf",
        f"{sum(sums['ssim']) / len(sums['ssim']):.6f}",
    ]
    for name in plugin_names:
        vals = plugin_sums[name]
        mean_row.append(f"{sum(vals) / len(vals):.6f}" if vals else "unavailable")
    print("\t".join(mean_row))
    return EXIT_OK


def cmd_count_params(args) -> int:
    model, _ = _configs(args)
    generator = _load_or_build(args, model)
    counts = count_parameters(generator, granularity=args.granularity)
    width = max(len(k) for k in counts)
    for name, value in counts.items():
        print(f"{name.ljust(width)}  {value}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqenh",
        description="QP-adaptive perceptual enhancement of compressed video",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run adversarial training")
    _global_flags(p)
    p.add_argument("--manifest", help="dataset manifest file")
    p.add_argument("--qps", help="comma-separated QPs to draw from the manifest")
    p.add_argument("--synthetic-clips", type=int, default=0, dest="synthetic_clips",
                   help="train on N synthetic clips instead of a manifest")
    p.add_argument("--synthetic-size", type=int, default=64, dest="synthetic_size")
    p.add_argument("--crop-size", type=int, default=128, dest="crop_size")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a video sliding-window")
    _global_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint (omit for an "
                                        "untrained identity-initialized model)")
    p.add_argument("--format", choices=("y4m", "yuv420p", "gray"),
                   help="input pixel format (raw files)")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("ablate", help="run the component ablation grid")
    _global_flags(p)
    p.add_argument("--rows", help="comma-separated rows A..I (default: all)")
    p.add_argument("--manifest")
    p.add_argument("--qps")
    p.add_argument("--synthetic-clips", type=int, default=0, dest="synthetic_clips")
    p.add_argument("--synthetic-size", type=int, default=64, dest="synthetic_size")
    p.add_argument("--crop-size", type=int, default=64, dest="crop_size")
    p.add_argument("--steps", type=int, help="training steps per row (0 = none)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cross-qp", help="evaluate models across test QPs")
    _global_flags(p)
    p.add_argument("--model", action="append", required=True,
                   metavar="TAG=CHECKPOINT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--qps", required=True, help="comma-separated test QPs")
    p.add_argument("--out", help="TSV output path")
    p.set_defaults(func=cmd_cross_qp)

    p = sub.add_parser("visualize-attention", help="render correlation maps")
    _global_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--format", choices=("y4m", "yuv420p", "gray"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frame", type=int, default=1, help="target frame index")
    p.add_argument("--query", action="append", required=True, metavar="ROW,COL")
    p.add_argument("--block", type=int, default=1, choices=range(1, 7))
    p.add_argument("-k", type=int, default=16, dest="k")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_visualize_attention)

    p = sub.add_parser("profile", help="export a temporal profile image")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("y4m", "yuv420p", "gray"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("metrics", help="PSNR/SSIM (and plugin) tables")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("y4m", "yuv420p", "gray"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--plugin", action="append", metavar="NAME=COMMAND",
                   help="external scorer: command gets two PNG paths, prints a float")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("count-params", help="learnable parameter counts")
    _global_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--granularity", choices=("component", "tensor"),
                   default="component")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UnknownQPError, ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PluginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLUGIN


if __name__ == "__main__":
    sys.exit(main())
