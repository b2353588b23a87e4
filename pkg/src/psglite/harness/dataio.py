"""Dataset file format: schema-validated JSON with RLE masks.

Masks are run-length encoded (alternating run lengths starting with zeros,
row-major) because inline bitmaps at 640 x 640 would bloat fixtures by three
orders of magnitude. Images are stored as a compact render spec (background
color plus shape list) that reconstructs pixels exactly; a raw `pixels_u8`
escape hatch exists for images that did not come from the generator. Files
are dumped with sorted keys and fixed separators, so the same seed produces
byte-identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import jsonschema
import numpy as np

from .. import kernels
from ..backbone import CLASS_NAMES, PREDICATES, render_pixels, synth_scene
from ..mask_embed import BinaryMask
from ..sgeval import GTSceneGraph

_SHAPE_SCHEMA = {
    "type": "object",
    "required": ["kind", "bbox", "color"],
    "properties": {
        "kind": {"enum": ["rect", "ellipse"]},
        "bbox": {"type": "array", "items": {"type": "integer"},
                 "minItems": 4, "maxItems": 4},
        "color": {"type": "array", "items": {"type": "number"},
                  "minItems": 3, "maxItems": 3},
        "class": {"type": "integer", "minimum": 0},
    },
}

DATASET_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema", "image_hw", "vocabulary", "scenes"],
    "properties": {
        "schema": {"const": 1},
        "seed": {"type": "integer"},
        "image_hw": {"type": "integer", "minimum": 8},
        "vocabulary": {
            "type": "object",
            "required": ["thing_classes", "predicate_classes"],
            "properties": {
                "thing_classes": {"type": "array", "minItems": 1,
                                  "items": {"type": "string"}},
                "predicate_classes": {"type": "array", "minItems": 1,
                                      "items": {"type": "string"}},
            },
        },
        "scenes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["image", "instances", "relations"],
                "properties": {
                    "image": {
                        "type": "object",
                        "oneOf": [
                            {"required": ["render"]},
                            {"required": ["pixels_u8"]},
                        ],
                        "properties": {
                            "render": {
                                "type": "object",
                                "required": ["background", "shapes"],
                                "properties": {
                                    "background": {"type": "array",
                                                   "items": {"type": "number"},
                                                   "minItems": 3, "maxItems": 3},
                                    "shapes": {"type": "array",
                                               "items": _SHAPE_SCHEMA},
                                },
                            },
                            "pixels_u8": {"type": "array",
                                          "items": {"type": "integer",
                                                    "minimum": 0, "maximum": 255}},
                        },
                    },
                    "instances": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["instance_id", "class", "rle"],
                            "properties": {
                                "instance_id": {"type": "integer", "minimum": 0},
                                "class": {"type": "integer", "minimum": 0},
                                "rle": {"type": "array",
                                        "items": {"type": "integer", "minimum": 0}},
                            },
                        },
                    },
                    "relations": {
                        "type": "array",
                        "items": {"type": "array",
                                  "items": {"type": "integer", "minimum": 0},
                                  "minItems": 3, "maxItems": 3},
                    },
                },
            },
        },
    },
}


@dataclass
class SceneRecord:
    raw: dict
    image_hw: int

    @cached_property
    def masks(self) -> list[BinaryMask]:
        out = []
        n = self.image_hw * self.image_hw
        for inst in self.raw["instances"]:
            flat = kernels.rle_decode(np.asarray(inst["rle"], dtype=np.int64), n)
            bits = flat.reshape(self.image_hw, self.image_hw).astype(bool)
            if not bits.any():
                raise ValueError("instance mask decodes to empty")
            out.append(BinaryMask(bits, inst["instance_id"], inst["class"]))
        return out

    @cached_property
    def pixels(self) -> np.ndarray:
        img = self.raw["image"]
        if "render" in img:
            return render_pixels(img["render"], self.image_hw)
        arr = np.asarray(img["pixels_u8"], dtype=np.float64) / 255.0
        return arr.reshape(self.image_hw, self.image_hw, 3)

    @property
    def relations(self) -> list[tuple[int, int, int]]:
        return [tuple(r) for r in self.raw["relations"]]

    def graph(self) -> GTSceneGraph:
        return GTSceneGraph([(m, m.class_label) for m in self.masks],
                            self.relations)


@dataclass
class Dataset:
    doc: dict

    @property
    def image_hw(self) -> int:
        return self.doc["image_hw"]

    @property
    def vocabulary(self) -> dict:
        return self.doc["vocabulary"]

    @property
    def n_predicates(self) -> int:
        return len(self.doc["vocabulary"]["predicate_classes"])

    @cached_property
    def scenes(self) -> list[SceneRecord]:
        return [SceneRecord(s, self.image_hw) for s in self.doc["scenes"]]


def validate_dataset(doc: dict) -> None:
    jsonschema.validate(doc, DATASET_SCHEMA)
    n_cls = len(doc["vocabulary"]["thing_classes"])
    n_pred = len(doc["vocabulary"]["predicate_classes"])
    pixels = doc["image_hw"] * doc["image_hw"]
    for si, scene in enumerate(doc["scenes"]):
        n_inst = len(scene["instances"])
        for inst in scene["instances"]:
            if inst["class"] >= n_cls:
                raise ValueError(f"scene {si}: class index out of range")
            if sum(inst["rle"]) != pixels:
                raise ValueError(f"scene {si}: RLE does not cover the image")
        for s, o, p in scene["relations"]:
            if s >= n_inst or o >= n_inst or p >= n_pred:
                raise ValueError(f"scene {si}: relation index out of range")


def generate_dataset(seed: int, n_scenes: int, n_instances: int = 4,
                     n_classes: int = 6, n_predicates: int = 6,
                     image_hw: int = 64, mode: str = "priority",
                     skew: tuple[float, ...] | None = None,
                     p_rel: float = 0.9) -> dict:
    scenes = []
    for i in range(n_scenes):
        _, panoptic, graph, render = synth_scene(
            [seed, i], n_instances, n_classes, n_predicates, image_hw,
            mode=mode, skew=skew, p_rel=p_rel)
        instances = []
        for m in panoptic.masks:
            instances.append({
                "instance_id": m.instance_id,
                "class": m.class_label,
                "rle": kernels.rle_encode(m.bits.ravel().astype(np.uint8)).tolist(),
            })
        scenes.append({
            "image": {"render": render},
            "instances": instances,
            "relations": [list(r) for r in graph.relations],
        })
    doc = {
        "schema": 1,
        "seed": seed,
        "image_hw": image_hw,
        "vocabulary": {
            "thing_classes": list(CLASS_NAMES[:n_classes]),
            "predicate_classes": list(PREDICATES[:n_predicates]),
        },
        "scenes": scenes,
    }
    validate_dataset(doc)
    return doc


def save_dataset(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_dataset(path: str) -> Dataset:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    validate_dataset(doc)
    return Dataset(doc)


def append_jsonl(path: str, obj: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(obj, sort_keys=True) + "\n")


METRIC_COLUMNS = ["protocol", "k", "R@k", "mR@k", "mR@inf",
                  "latency_ms_mean", "rps", "head_passes", "flops"]


def write_metrics_csv(path: str, rows: list[dict]) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in METRIC_COLUMNS})


def write_per_class_csv(path: str, predicate_names: list[str],
                        tables: dict[int, np.ndarray], gt_counts: np.ndarray,
                        inf_per_class: np.ndarray) -> None:
    import csv
    ks = sorted(tables)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["predicate", "gt_count"]
                        + [f"recall@{k}" for k in ks] + ["recall@inf"])
        for ci, name in enumerate(predicate_names):
            row = [name, int(gt_counts[ci])]
            for k in ks:
                v = tables[k][ci]
                row.append("" if np.isnan(v) else f"{v:.4f}")
            v = inf_per_class[ci]
            row.append("" if np.isnan(v) else f"{v:.4f}")
            writer.writerow(row)
