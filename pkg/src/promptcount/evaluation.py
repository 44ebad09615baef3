"""Counting benchmarks: annotations, MAE/RMSE, density buckets, lambda sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

from .backend.base import Backend
from .core import Box
from .counter import CountingConfig, iterate_count
from .errors import ConfigError, CountingError, EvalError, ParseError, ShapeError
from .io import load_image

DEFAULT_EDGES = (0, 10, 30, 70, math.inf)


def _check_pair(gt, pred):
    if len(gt) != len(pred):
        raise EvalError(f"length mismatch: {len(gt)} ground truths vs {len(pred)} predictions")
    if len(gt) == 0:
        raise EvalError("no images to score")


def mae(gt: Sequence[int], pred: Sequence[int]) -> float:
    _check_pair(gt, pred)
    return math.fsum(abs(c - p) for c, p in zip(gt, pred)) / len(gt)


def rmse(gt: Sequence[int], pred: Sequence[int]) -> float:
    _check_pair(gt, pred)
    return math.sqrt(math.fsum((c - p) ** 2 for c, p in zip(gt, pred)) / len(gt))


@dataclass
class AnnotationRecord:
    image_path: str
    exemplar_boxes: List[Box]
    gt_points: List[List[float]]
    id: str = ""

    @property
    def gt_count(self) -> int:
        return len(self.gt_points)


def _parse_record(i: int, raw, root: str) -> AnnotationRecord:
    if not isinstance(raw, dict):
        raise ParseError("record must be an object", i)
    try:
        image, boxes, points = raw["image"], raw["exemplar_boxes"], raw["points"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", i) from None
    if not isinstance(image, str) or not image:
        raise ParseError("'image' must be a non-empty string", i)
    if not isinstance(boxes, list) or not boxes:
        raise ParseError("'exemplar_boxes' must be a non-empty list", i)
    parsed = []
    for b in boxes:
        if not isinstance(b, (list, tuple)) or len(b) != 4:
            raise ParseError(f"box {b!r} must have 4 coordinates", i)
        try:
            coords = [float(v) for v in b]
        except (TypeError, ValueError):
            raise ParseError(f"box {b!r} has non-numeric coordinates", i) from None
        if min(coords) < 0:
            raise ParseError(f"box {b!r} has negative coordinates", i)
        try:
            parsed.append(Box.from_seq(coords))
        except ShapeError:
            raise ParseError(f"box {b!r} has inverted corners", i) from None
    if not isinstance(points, list):
        raise ParseError("'points' must be a list", i)
    pts = []
    for p in points:
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ParseError(f"point {p!r} must be an (x, y) pair", i)
        try:
            x, y = float(p[0]), float(p[1])
        except (TypeError, ValueError):
            raise ParseError(f"point {p!r} has non-numeric coordinates", i) from None
        if x < 0 or y < 0:
            raise ParseError(f"point {p!r} has negative coordinates", i)
        pts.append([x, y])
    path = image if os.path.isabs(image) else os.path.join(root, image)
    return AnnotationRecord(path, parsed, pts, str(raw.get("id", image)))


def load_annotations(path) -> List[AnnotationRecord]:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: top level must be a list of records")
    root = os.path.dirname(os.path.abspath(path))
    return [_parse_record(i, raw, root) for i, raw in enumerate(data)]


@dataclass
class ImageResult:
    id: str
    gt: int
    pred: int

    @property
    def abs_err(self) -> int:
        return abs(self.gt - self.pred)


def density_buckets(per_image: Sequence[ImageResult], edges=DEFAULT_EDGES) -> List[dict]:
    """Half-open ``[lo, hi)`` ground-truth count buckets with per-bucket MAE."""
    edges = list(edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"bucket edges must be strictly increasing, got {edges}")
    out = []
    for lo, hi in zip(edges, edges[1:]):
        members = [r for r in per_image if lo <= r.gt < hi]
        out.append({
            "lo": lo,
            "hi": None if math.isinf(hi) else hi,
            "n": len(members),
            "mae": mae([r.gt for r in members], [r.pred for r in members]) if members else None,
        })
    return out


@dataclass
class EvalReport:
    n: int
    mae: float
    rmse: float
    buckets: List[dict]
    per_image: List[ImageResult]
    errors: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae,
            "rmse": self.rmse,
            "buckets": self.buckets,
            "per_image": [{"id": r.id, "gt": r.gt, "pred": r.pred, "abs_err": r.abs_err}
                          for r in self.per_image],
            "errors": self.errors,
            "config": self.config,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "gt", "pred", "abs_err"])
            for r in self.per_image:
                writer.writerow([r.id, r.gt, r.pred, r.abs_err])


def _count_image(record: AnnotationRecord, configs: Sequence[CountingConfig],
                 backend: Backend, loader: Callable):
    try:
        image = loader(record.image_path)
        embedding = backend.encode(image)
        return [iterate_count(image, record.exemplar_boxes, cfg, backend, embedding).count
                for cfg in configs]
    except (CountingError, OSError, ValueError) as exc:
        kind = getattr(exc, "kind", "io" if isinstance(exc, OSError) else "pipeline")
        return {"id": record.id, "kind": kind, "message": str(exc)}


def build_report(records, preds, cfg: CountingConfig, errors, edges=DEFAULT_EDGES) -> EvalReport:
    per_image = [ImageResult(r.id, r.gt_count, p) for r, p in zip(records, preds)]
    if not per_image:
        raise EvalError("every image failed; nothing to score")
    gt = [r.gt for r in per_image]
    pred = [r.pred for r in per_image]
    return EvalReport(len(per_image), mae(gt, pred), rmse(gt, pred),
                      density_buckets(per_image, edges), per_image, list(errors), cfg.to_dict())


def run_eval(records: Sequence[AnnotationRecord], cfg: CountingConfig, backend: Backend,
             sweep: Optional[Sequence[float]] = None, workers: int = 1,
             edges=DEFAULT_EDGES, loader: Callable = load_image):
    """Count every record; returns one report, or one per lambda when sweeping.

    Failing images are excluded from the metrics and listed in ``errors``.
    Results are reduced in record order, so worker count never changes them.
    """
    if not records:
        raise EvalError("no annotation records")
    configs = [replace(cfg, lam=float(lam)) for lam in sweep] if sweep else [cfg]
    if workers > 1 and backend.concurrent:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda r: _count_image(r, configs, backend, loader), records))
    else:
        outcomes = [_count_image(r, configs, backend, loader) for r in records]

    ok = [(rec, out) for rec, out in zip(records, outcomes) if isinstance(out, list)]
    errors = [out for out in outcomes if isinstance(out, dict)]
    reports = [build_report([rec for rec, _ in ok], [out[j] for _, out in ok], c, errors, edges)
               for j, c in enumerate(configs)]
    return reports if sweep else reports[0]
