"""Axis-aligned 3D boxes, scenes, and their JSON serialization.

Scene file schema (one JSON document per scene):

    {
      "scene_id": "scene_000042",
      "boxes": [
        {"center": [x, y, z], "size": [sx, sy, sz],
         "category": "chair", "instance_id": 0},
        ...
      ],
      "point_count_hint": 20000
    }

Box categories are stored as strings in scene files and resolved to
integer ids through a category table (JSON: {"categories": [...]}) kept
next to the dataset manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError

# Name pool for synthetic category tables; category_count > len(pool)
# falls back to generated names.
CATEGORY_NAME_POOL = (
    "chair", "table", "sofa", "bed", "desk", "cabinet", "bookshelf",
    "sink", "toilet", "bin", "lamp", "fridge", "dresser", "nightstand",
    "counter", "door", "window", "curtain",
)


def default_category_table(category_count):
    names = list(CATEGORY_NAME_POOL[:category_count])
    for k in range(len(names), category_count):
        names.append(f"class_{k:02d}")
    return names


@dataclass
class Box3D:
    center: np.ndarray  # (3,) meters
    size: np.ndarray    # (3,) positive extents, meters
    category: int
    instance_id: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        if self.center.shape != (3,) or self.size.shape != (3,):
            raise UsageError("Box3D center and size must be 3-vectors")
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.size))):
            raise UsageError("Box3D fields must be finite")
        if np.any(self.size <= 0.0):
            raise UsageError(f"Box3D extents must be positive, got {self.size}")

    @property
    def min_corner(self):
        return self.center - 0.5 * self.size

    @property
    def max_corner(self):
        return self.center + 0.5 * self.size

    @property
    def volume(self):
        return float(np.prod(self.size))


@dataclass
class Scene:
    scene_id: str
    ground_truth: list[Box3D] = field(default_factory=list)
    point_count_hint: int = 0

    def __post_init__(self):
        ids = [b.instance_id for b in self.ground_truth]
        if len(set(ids)) != len(ids):
            raise UsageError(f"scene {self.scene_id}: duplicate instance ids")

    def __len__(self):
        return len(self.ground_truth)


@dataclass
class BoxArrays:
    """Column layout of a box list, the form the geometry kernels consume."""

    mins: np.ndarray       # (n, 3)
    maxs: np.ndarray       # (n, 3)
    centers: np.ndarray    # (n, 3)
    categories: np.ndarray  # (n,) int64
    instances: np.ndarray   # (n,) int64

    def __len__(self):
        return self.mins.shape[0]


def boxes_to_arrays(boxes) -> BoxArrays:
    n = len(boxes)
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, dtype=np.int64)
        return BoxArrays(z3, z3.copy(), z3.copy(), zi, zi.copy())
    centers = np.stack([b.center for b in boxes])
    sizes = np.stack([b.size for b in boxes])
    return BoxArrays(
        mins=centers - 0.5 * sizes,
        maxs=centers + 0.5 * sizes,
        centers=centers,
        categories=np.array([b.category for b in boxes], dtype=np.int64),
        instances=np.array([b.instance_id for b in boxes], dtype=np.int64),
    )


def scene_to_dict(scene: Scene, category_names):
    return {
        "scene_id": scene.scene_id,
        "boxes": [
            {
                "center": [float(v) for v in b.center],
                "size": [float(v) for v in b.size],
                "category": category_names[b.category],
                "instance_id": int(b.instance_id),
            }
            for b in scene.ground_truth
        ],
        "point_count_hint": int(scene.point_count_hint),
    }


def scene_from_dict(doc, category_names):
    index = {name: k for k, name in enumerate(category_names)}
    boxes = []
    for entry in doc["boxes"]:
        name = entry["category"]
        if name not in index:
            raise UsageError(
                f"scene {doc.get('scene_id')!r}: category {name!r} not in table")
        boxes.append(Box3D(np.array(entry["center"]), np.array(entry["size"]),
                           index[name], int(entry["instance_id"])))
    return Scene(doc["scene_id"], boxes, int(doc.get("point_count_hint", 0)))


def save_scene(scene: Scene, path, category_names):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene, category_names), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scene(path, category_names) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh), category_names)
