"""Command-line harness: train | eval | detect | synth | ablate | render."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from .data import parse_visdrone, load_image, synth_generate
from .errors import InvalidArgumentError
from .model import Detector, save_checkpoint
from .render import render_to_file
from .report import ablation_json, ablation_report, parse_runs_file
from .train import (detections_to_lines, evaluate, evaluate_from_file,
                    parse_detection_lines, run_detection, train)


def _add_config_flags(parser: argparse.ArgumentParser, prefixes: tuple[str, ...]) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--preset", choices=sorted(cfgmod.PRESETS),
                        help="named configuration preset")
    for key in cfgmod.SCHEMA:
        if key.startswith(prefixes):
            parser.add_argument(f"--{key}", dest=key, metavar="V")


def _resolve(args: argparse.Namespace, aliases: dict[str, str] | None = None) -> dict:
    overrides = {key: getattr(args, key) for key in cfgmod.SCHEMA
                 if getattr(args, key, None) is not None}
    for flag, key in (aliases or {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return cfgmod.resolve(args.preset, args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sodyolo",
        description="Small-object detector harness: scale-sequence fusion neck, "
                    "stride-4 head, Soft-NMS, full evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p, ("synth.",))
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", dest="alias_seed", metavar="N")
    p.add_argument("--images", dest="alias_images", metavar="N")

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_flags(p, ("model.", "train."))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", dest="alias_seed", metavar="N")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a detection dump")
    _add_config_flags(p, ("model.", "suppress.", "eval."))
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--dets", help="stored detection dump to evaluate instead")
    p.add_argument("--suppression", dest="alias_mode", metavar="MODE",
                   help="suppression mode: hard | soft-linear")
    p.add_argument("--nt", dest="alias_nt", metavar="X", help="overlap threshold")
    p.add_argument("--out-report", help="write the plain-text report here")
    p.add_argument("--out-json", help="write the machine-readable report here")

    p = sub.add_parser("detect", help="run detection and dump one record per box")
    _add_config_flags(p, ("model.", "suppress."))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="detection dump path")
    p.add_argument("--suppression", dest="alias_mode", metavar="MODE")
    p.add_argument("--nt", dest="alias_nt", metavar="X")

    p = sub.add_parser("ablate", help="format stored metric rows as an ablation table")
    p.add_argument("--in", dest="runs", required=True, help="rows file")
    p.add_argument("--out-json", help="write the machine-readable table here")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--preset", help=argparse.SUPPRESS)

    p = sub.add_parser("render", help="draw detections onto an image")
    p.add_argument("--image", required=True)
    p.add_argument("--dets", required=True, help="detection dump path")
    p.add_argument("--ann", help="optional annotation file to overlay")
    p.add_argument("--out", required=True)
    p.add_argument("--no-labels", action="store_true")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--preset", help=argparse.SUPPRESS)
    return parser


def _cmd_synth(args) -> int:
    cfg = _resolve(args, {"alias_seed": "synth.seed", "alias_images": "synth.images"})
    index = synth_generate(cfgmod.synth_config(cfg), args.out)
    print(f"wrote {len(index.entries)} image/annotation pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    aliases = {}
    if getattr(args, "alias_seed", None) is not None:
        aliases = {"alias_seed": "train.seed"}
    cfg = _resolve(args, aliases)
    if getattr(args, "alias_seed", None) is not None:
        cfg["model.seed"] = cfg["train.seed"]
    model = Detector(cfgmod.model_config(cfg), seed=cfg["model.seed"])
    train(model, args.data, cfgmod.train_config(cfg), log=print)
    save_checkpoint(args.out, model)
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve(args, {"alias_mode": "suppress.mode", "alias_nt": "suppress.nt"})
    if bool(args.ckpt) == bool(args.dets):
        raise InvalidArgumentError("eval: pass exactly one of --ckpt or --dets")
    if args.ckpt:
        report = evaluate(args.ckpt, args.data, cfgmod.suppression_config(cfg),
                          conf_threshold=cfg["model.conf_threshold"],
                          operating_score=cfg["eval.operating_score"])
    else:
        report = evaluate_from_file(args.dets, args.data,
                                    operating_score=cfg["eval.operating_score"])
    text = report.to_text()
    print(text, end="")
    if args.out_report:
        Path(args.out_report).write_text(text)
    if args.out_json:
        payload = {
            "map50": report.map50, "map5095": report.map5095,
            "precision": report.precision, "recall": report.recall,
            "per_class_ap50": {report.class_label(c): ap[0.5]
                               for c, ap in report.per_class_ap.items()},
            "suppression": report.suppression_mode,
        }
        Path(args.out_json).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_detect(args) -> int:
    cfg = _resolve(args, {"alias_mode": "suppress.mode", "alias_nt": "suppress.nt"})
    dets = run_detection(args.ckpt, args.data, cfgmod.suppression_config(cfg),
                         conf_threshold=cfg["model.conf_threshold"])
    Path(args.out).write_text(detections_to_lines(dets))
    total = sum(len(v) for v in dets.values())
    print(f"wrote {total} detections for {len(dets)} images to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    rows = parse_runs_file(Path(args.runs).read_text(), base_dir=Path(args.runs).parent)
    print(ablation_report(rows), end="")
    if args.out_json:
        Path(args.out_json).write_text(ablation_json(rows))
    return 0


def _cmd_render(args) -> int:
    image = load_image(args.image)
    stem = Path(args.image).stem
    dets = parse_detection_lines(Path(args.dets).read_text()).get(stem, [])
    gts = parse_visdrone(Path(args.ann).read_text()) if args.ann else None
    render_to_file(args.out, image, dets, gts, labels=not args.no_labels)
    print(f"rendered {len(dets)} detections to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "detect": _cmd_detect,
    "ablate": _cmd_ablate,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InvalidArgumentError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
