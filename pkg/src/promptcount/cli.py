"""Command-line front end.

Exit codes: 0 success, 1 pipeline error, 2 usage or I/O error.  Failures
print a JSON object ``{"error": {"kind": ..., "message": ...}}`` on stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .backend import MockBackend, ModelFileBackend, PrecomputedBackend
from .backend.mock import DEFAULT_CHANNELS
from .core import Box
from .counter import FUSIONS, CountingConfig, iterate_count
from .errors import ConfigError, CountingError, ParseError
from .evaluation import DEFAULT_EDGES, load_annotations, run_eval
from .io import load_image, write_flat
from .synth import generate_dataset

DEFAULTS = CountingConfig()
ABLATIONS = {
    "background": "enable_background",
    "multiround": "enable_multiround",
    "residual": "enable_residual",
}


class UsageError(Exception):
    kind = "usage"


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": {"kind": kind, "message": message}}, sort_keys=True))
    return code


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _range(text: str):
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _box(text: str) -> Box:
    try:
        return Box.from_seq([float(v) for v in text.split(",")])
    except (ValueError, CountingError) as exc:
        raise argparse.ArgumentTypeError(f"bad box {text!r}: {exc}") from None


def _sign(text: str) -> int:
    if text in ("+", "+1", "1"):
        return 1
    if text in ("-", "-1"):
        return -1
    raise argparse.ArgumentTypeError(f"bg sign must be + or -, got {text!r}")


def _ablate(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, _, value = item.partition("=")
        if key not in ABLATIONS or value not in ("on", "off", "true", "false"):
            raise argparse.ArgumentTypeError(
                f"bad ablation {item!r}; use {'/'.join(ABLATIONS)}=on|off")
        out[ABLATIONS[key]] = value in ("on", "true")
    return out


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--backend", choices=("mock", "model-file", "embedding-file"), default="mock",
                   help="segmentation backend")
    g.add_argument("--model-config", help="JSON sidecar describing the ONNX encoder/decoder")
    g.add_argument("--embedding", help="flat-binary embedding file, or a directory of "
                   "<image-stem>.emb files (embedding-file backend)")
    g.add_argument("--channels", type=int, default=DEFAULT_CHANNELS,
                   help="feature channels of the mock backend")


def _add_counting_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("counting")
    g.add_argument("--lambda", dest="lam", type=float, default=DEFAULTS.lam,
                   help="background similarity weight")
    g.add_argument("--t1", type=float, default=DEFAULTS.t1, help="background mask threshold")
    g.add_argument("--t2", type=float, default=DEFAULTS.t2, help="composite map foreground threshold")
    g.add_argument("--fusion", choices=FUSIONS, default=DEFAULTS.fusion,
                   help="fusion of per-exemplar foreground maps")
    g.add_argument("--bg-sign", type=_sign, default="+" if DEFAULTS.bg_sign > 0 else "-",
                   help="sign of the background term (+ or -)")
    g.add_argument("--rounds", type=int, default=DEFAULTS.rounds_cap, help="iteration cap")
    g.add_argument("--novelty-iou", type=float, default=DEFAULTS.novelty_iou,
                   help="a box is new if its IoU with every prompt box is below this")
    g.add_argument("--dedup-iou", type=float, default=DEFAULTS.dedup_iou,
                   help="masks at or above this IoU with a kept mask are duplicates")
    g.add_argument("--stride", type=int, default=DEFAULTS.matrix_stride,
                   help="matrix prompt lattice stride in embedding cells")
    g.add_argument("--batch", type=int, default=DEFAULTS.batch_size,
                   help="point prompts per decoder call")
    g.add_argument("--ablate", type=_ablate, default={},
                   help="component toggles, e.g. background=off,residual=off "
                        "(background, multiround, residual; all on by default)")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="promptcount", formatter_class=fmt,
                                     description="Exemplar-prompted, training-free object counting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", formatter_class=fmt, help="count objects in one image")
    p.add_argument("image")
    p.add_argument("--box", type=_box, action="append", default=[],
                   help="exemplar box x1,y1,x2,y2 (repeatable)")
    p.add_argument("--boxes-json", help="JSON file holding a list of [x1,y1,x2,y2] boxes")
    p.add_argument("--overlay", action="store_true", help="also write overlay.png")
    p.add_argument("--diagnostics", action="store_true",
                   help="write per-round composite maps and a JSON trace")
    _add_backend_args(p)
    _add_counting_args(p)
    _add_out(p)

    p = sub.add_parser("eval", formatter_class=fmt, help="evaluate on an annotation file")
    p.add_argument("annotations")
    p.add_argument("--sweep-lambda", type=_floats, help="comma-separated lambda values")
    p.add_argument("--edges", type=_floats, default=list(DEFAULT_EDGES),
                   help="density bucket edges (append 'inf' for an open last bucket)")
    p.add_argument("--workers", type=int, default=1, help="parallel image workers")
    _add_backend_args(p)
    _add_counting_args(p)
    _add_out(p)

    p = sub.add_parser("gen-synthetic", formatter_class=fmt,
                       help="write synthetic label-map scenes with annotations")
    p.add_argument("--n", type=int, default=10, help="number of scenes")
    p.add_argument("--count-range", type=_range, default="1..30", help="objects per scene LO..HI")
    p.add_argument("--size-range", type=_range, default="4..12", help="object side length LO..HI")
    p.add_argument("--canvas", type=_range, default="128..128", metavar="H..W",
                   help="canvas height..width")
    p.add_argument("--separation", type=int, default=2, help="minimum gap between objects")
    p.add_argument("--distractors", type=int, default=0, help="non-target objects per scene")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    _add_out(p)
    return parser


def config_from_args(args) -> CountingConfig:
    cfg = replace(DEFAULTS, lam=args.lam, t1=args.t1, t2=args.t2, fusion=args.fusion,
                  bg_sign=args.bg_sign, rounds_cap=args.rounds, novelty_iou=args.novelty_iou,
                  dedup_iou=args.dedup_iou, matrix_stride=args.stride, batch_size=args.batch)
    return replace(cfg, **args.ablate)


def backend_from_args(args):
    if args.backend == "mock":
        return MockBackend(args.channels)
    if args.backend == "model-file":
        if not args.model_config:
            raise UsageError("--backend model-file needs --model-config")
        if not os.path.exists(args.model_config):
            raise FileNotFoundError(args.model_config)
        return ModelFileBackend(args.model_config)
    if not args.embedding:
        raise UsageError("--backend embedding-file needs --embedding")
    if not os.path.exists(args.embedding):
        raise FileNotFoundError(args.embedding)
    decoder = ModelFileBackend(args.model_config) if args.model_config else MockBackend(args.channels)
    if os.path.isdir(args.embedding):
        root = args.embedding

        def lookup(image_id):
            stem = os.path.splitext(os.path.basename(image_id))[0]
            return os.path.join(root, stem + ".emb")

        return PrecomputedBackend(lookup, decoder)
    return PrecomputedBackend(args.embedding, decoder)


def _exemplars(args):
    boxes = list(args.box)
    if args.boxes_json:
        with open(args.boxes_json) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("exemplar_boxes", [])
        boxes += [Box.from_seq(b) for b in data]
    if not boxes:
        raise UsageError("at least one exemplar box is required (--box or --boxes-json)")
    return boxes


def cmd_count(args) -> int:
    cfg = config_from_args(args)
    backend = backend_from_args(args)
    boxes = _exemplars(args)
    image = load_image(args.image)
    result = iterate_count(image, boxes, cfg, backend)
    os.makedirs(args.out, exist_ok=True)
    payload = {"image": args.image, "exemplar_boxes": [b.as_list() for b in boxes],
               "config": cfg.to_dict(), **result.to_dict()}
    _dump(payload, os.path.join(args.out, "result.json"))
    if args.overlay:
        from .overlay import render_overlay
        render_overlay(image, result, boxes, os.path.join(args.out, "overlay.png"))
    if args.diagnostics:
        for r, csim in enumerate(result.csims):
            write_flat(csim, os.path.join(args.out, f"csim_round{r}.bin"))
        _dump(payload["trace"], os.path.join(args.out, "trace.json"))
    print(json.dumps({"count": result.count, "rounds_run": result.rounds_run}, sort_keys=True))
    return 0


def _tag(lam: float) -> str:
    return f"{lam:g}"


def cmd_eval(args) -> int:
    cfg = config_from_args(args)
    backend = backend_from_args(args)
    records = load_annotations(args.annotations)
    os.makedirs(args.out, exist_ok=True)
    result = run_eval(records, cfg, backend, sweep=args.sweep_lambda,
                      workers=args.workers, edges=args.edges)
    if args.sweep_lambda:
        summary = []
        for lam, report in zip(args.sweep_lambda, result):
            report.write_json(os.path.join(args.out, f"report_lambda_{_tag(lam)}.json"))
            report.write_csv(os.path.join(args.out, f"per_image_lambda_{_tag(lam)}.csv"))
            summary.append({"lambda": lam, "n": report.n, "mae": report.mae, "rmse": report.rmse})
        print(json.dumps(summary, sort_keys=True))
    else:
        result.write_json(os.path.join(args.out, "report.json"))
        result.write_csv(os.path.join(args.out, "per_image.csv"))
        print(json.dumps({"n": result.n, "mae": result.mae, "rmse": result.rmse,
                          "errors": len(result.errors)}, sort_keys=True))
    return 0


def cmd_gen_synthetic(args) -> int:
    records = generate_dataset(args.n, args.count_range, args.size_range, args.seed, args.out,
                               canvas=args.canvas, separation=args.separation,
                               distractors=args.distractors)
    print(json.dumps({"scenes": len(records), "out": args.out}, sort_keys=True))
    return 0


COMMANDS = {"count": cmd_count, "eval": cmd_eval, "gen-synthetic": cmd_gen_synthetic}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ParseError) as exc:
        return _fail(getattr(exc, "kind", "usage"), str(exc), 2)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail("io", str(exc), 2)
    except CountingError as exc:
        return _fail(exc.kind, str(exc), 1)


def run() -> None:
    sys.exit(main())
