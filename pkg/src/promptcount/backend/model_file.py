"""ONNX-backed encoder/decoder pair described by a JSON sidecar.

Sidecar layout (paths resolve relative to the sidecar file)::

    {
      "encoder": {"path": "encoder.onnx", "input": "image", "output": "embeddings",
                  "input_size": [1024, 1024], "mean": [123.675, 116.28, 103.53],
                  "std": [58.395, 57.12, 57.375], "embedding_shape": [256, 64, 64]},
      "decoder": {"path": "decoder.onnx", "embedding_input": "image_embeddings",
                  "coords_input": "point_coords", "labels_input": "point_labels",
                  "mask_output": "masks", "score_output": "iou_predictions",
                  "orig_size_input": "orig_im_size", "coord_frame": "input",
                  "mask_threshold": 0.0, "box_labels": [2, 3],
                  "extra_inputs": {"mask_input": {"shape": [1, 1, 256, 256], "value": 0.0},
                                   "has_mask_input": {"shape": [1], "value": 0.0}}}
    }

Mask logits are binarized at ``mask_threshold`` and resized to the source
image with nearest-neighbour sampling.
"""

from __future__ import annotations

import json
import os
from typing import List, Sequence

import numpy as np
from PIL import Image

from ..core import Box, PointPrompt, upsample_mask
from ..errors import BackendError, ConfigError, EmptyExemplar
from .base import EXEMPLAR, Backend, ImageEmbedding, MaskRecord, SourceImage


def _session(path):
    try:
        import onnxruntime as ort
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise BackendError("the model-file backend needs onnxruntime installed") from exc
    try:
        return ort.InferenceSession(path, providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise BackendError(f"cannot load model {path}: {exc}") from exc


class ModelFileBackend(Backend):
    def __init__(self, config_path):
        config_path = os.fspath(config_path)
        try:
            with open(config_path) as fh:
                cfg = json.load(fh)
            enc, dec = cfg["encoder"], cfg["decoder"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad model config {config_path}: {exc}") from exc
        root = os.path.dirname(os.path.abspath(config_path))
        self.enc = dict(enc)
        self.dec = dict(dec)
        self.enc_path = os.path.join(root, enc["path"])
        self.dec_path = os.path.join(root, dec["path"])
        self._encoder = None
        self._decoder = None

    @property
    def encoder(self):
        if self._encoder is None:
            self._encoder = _session(self.enc_path)
        return self._encoder

    @property
    def decoder(self):
        if self._decoder is None:
            self._decoder = _session(self.dec_path)
        return self._decoder

    def _input_size(self, image: SourceImage):
        size = self.enc.get("input_size")
        return tuple(size) if size else (image.height, image.width)

    def _preprocess(self, image: SourceImage) -> np.ndarray:
        if image.is_label_map:
            raise BackendError(f"model-file backend needs an RGB image, got label map {image.id!r}")
        in_h, in_w = self._input_size(image)
        im = Image.fromarray(image.rgb)
        if (in_h, in_w) != image.shape:
            im = im.resize((in_w, in_h), Image.BILINEAR)
        x = np.asarray(im, dtype=np.float32)
        mean = np.asarray(self.enc.get("mean", [0.0, 0.0, 0.0]), dtype=np.float32)
        std = np.asarray(self.enc.get("std", [1.0, 1.0, 1.0]), dtype=np.float32)
        x = (x - mean) / std
        return np.ascontiguousarray(x.transpose(2, 0, 1)[None])

    def encode(self, image: SourceImage) -> ImageEmbedding:
        x = self._preprocess(image)
        try:
            out = self.encoder.run([self.enc["output"]], {self.enc["input"]: x})[0]
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"encoder failed on {image.id!r}: {exc}") from exc
        values = np.asarray(out, dtype=np.float64)
        if values.ndim == 4:
            values = values[0]
        declared = self.enc.get("embedding_shape")
        if declared and list(values.shape) != list(declared):
            raise BackendError(f"encoder produced {values.shape}, config declares {declared}")
        return ImageEmbedding(values, image.height, image.width)

    def _scale_coords(self, coords: np.ndarray, image: SourceImage) -> np.ndarray:
        if self.dec.get("coord_frame", "input") != "input":
            return coords
        in_h, in_w = self._input_size(image)
        scale = np.array([in_w / image.width, in_h / image.height], dtype=np.float32)
        return coords * scale

    def _run_decoder(self, embedding: ImageEmbedding, image: SourceImage,
                     coords: np.ndarray, labels: np.ndarray):
        feed = {
            self.dec["embedding_input"]: embedding.values[None].astype(np.float32),
            self.dec["coords_input"]: self._scale_coords(coords, image)[None].astype(np.float32),
            self.dec["labels_input"]: labels[None].astype(np.float32),
        }
        if self.dec.get("orig_size_input"):
            feed[self.dec["orig_size_input"]] = np.array(image.shape, dtype=np.float32)
        for name, extra in self.dec.get("extra_inputs", {}).items():
            feed[name] = np.full(extra["shape"], extra.get("value", 0.0),
                                 dtype=extra.get("dtype", "float32"))
        names = [self.dec["mask_output"]]
        if self.dec.get("score_output"):
            names.append(self.dec["score_output"])
        try:
            outs = self.decoder.run(names, feed)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"decoder failed on {image.id!r}: {exc}") from exc
        logits = np.asarray(outs[0])
        while logits.ndim > 2:
            logits = logits[0]
        mask = logits > float(self.dec.get("mask_threshold", 0.0))
        if mask.shape != image.shape:
            mask = upsample_mask(mask, image.height, image.width)
        score = float(np.ravel(outs[1])[0]) if len(outs) > 1 else None
        return mask, score

    def decode_box(self, embedding: ImageEmbedding, image: SourceImage,
                   box: Box) -> MaskRecord:
        coords = np.array([[box.x1, box.y1], [box.x2, box.y2]], dtype=np.float32)
        labels = np.asarray(self.dec.get("box_labels", [2, 3]), dtype=np.float32)
        mask, score = self._run_decoder(embedding, image, coords, labels)
        if not mask.any():
            raise EmptyExemplar(f"decoder returned an empty mask for box {box.as_list()}")
        return MaskRecord(mask, EXEMPLAR, score=score)

    def decode_points(self, embedding: ImageEmbedding, image: SourceImage,
                      points: Sequence[PointPrompt]) -> List[MaskRecord]:
        out = []
        for p in points:
            coords = np.array([[p.x, p.y]], dtype=np.float32)
            mask, score = self._run_decoder(embedding, image, coords, np.ones(1, dtype=np.float32))
            if mask.any():
                out.append(MaskRecord(mask, p.kind, score=score))
        return out
