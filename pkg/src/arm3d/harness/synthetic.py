"""Procedural indoor-style scenes with controllable relation structure.

Each scene is a room floor plan populated with axis-aligned boxes. Three
kinds of structure can be injected, each with its own per-scene
probability:

* cluster  -- 2..3 objects of one category (semantic-relation signal);
* stack    -- a smaller box resting on a larger one, footprint fully
              inside, zero vertical gap (vertical spatial relation);
* adjacent -- two boxes side by side with a small horizontal gap and
              nested side projections (horizontal spatial relation).

Stacks and adjacencies pair correlated categories (top category t sits
on support_category(t)), so spatial context carries class information.
The generator records every pair it injected; the labeler must recover
all of them, which the audit and the test suite check.

Scenes also drive the ambiguity mechanism: a fraction of objects is
marked ambiguous, and the proposal stub later corrupts their category
evidence toward a fixed confusable category. Relation context is what
disambiguates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError
from ..geometry.boxes import Box3D, Scene
from ..labeling import LabelThresholds, label_spatial


@dataclass(frozen=True)
class SyntheticConfig:
    category_count: int = 10
    objects_min: int = 4
    objects_max: int = 9
    cluster_prob: float = 0.75
    stack_prob: float = 0.5
    adjacent_prob: float = 0.5
    feature_noise: float = 0.1
    ambiguity_rate: float = 0.3
    room_extent: float = 8.0
    point_count_hint: int = 20000
    max_placement_retries: int = 200

    def __post_init__(self):
        for name in ("cluster_prob", "stack_prob", "adjacent_prob",
                     "ambiguity_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GenerationError(f"{name} must be in [0, 1], got {v}")
        if self.feature_noise < 0:
            raise GenerationError("feature_noise must be >= 0")
        if not 1 <= self.objects_min <= self.objects_max:
            raise GenerationError("need 1 <= objects_min <= objects_max")

    @property
    def spatial_scene_rate_target(self):
        """Probability a scene receives at least one injected spatial pair."""
        return 1.0 - (1.0 - self.stack_prob) * (1.0 - self.adjacent_prob)


def confusable_category(category, category_count):
    """Fixed confusion partner used by the ambiguity corruption.

    Pairs are mutual ((0,1), (2,3), ...), so a corrupted evidence mix is
    symmetric between the two categories and carries no hint which one is
    real; only scene context can disambiguate. With an odd category
    count, the last category has no partner and is never corrupted.
    """
    partner = category ^ 1
    return partner if partner < category_count else category


def support_category(top_category, category_count):
    """Fixed support partner for stacked/adjacent placements."""
    return (top_category + category_count // 2) % category_count


@dataclass
class IntendedPair:
    kind: str        # "semantic" | "spatial"
    instance_a: int
    instance_b: int


@dataclass
class GeneratedScene:
    scene: Scene
    intended: list[IntendedPair]
    ambiguous_instances: list[int] = field(default_factory=list)


def _footprints_clash(center, size, placed, limit=0.25):
    """Reject placements whose xy footprint overlaps an existing one by
    more than `limit` of the smaller footprint."""
    for c, s in placed:
        ix = max(0.0, min(center[0] + size[0] / 2, c[0] + s[0] / 2)
                 - max(center[0] - size[0] / 2, c[0] - s[0] / 2))
        iy = max(0.0, min(center[1] + size[1] / 2, c[1] + s[1] / 2)
                 - max(center[1] - size[1] / 2, c[1] - s[1] / 2))
        smaller = min(size[0] * size[1], s[0] * s[1])
        if ix * iy > limit * smaller:
            return True
    return False


class _Placer:
    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.placed = []  # (center, size) xy-footprint registry

    def random_size(self, lo=0.5, hi=1.2):
        return self.rng.uniform(lo, hi, size=3)

    def place_on_floor(self, size, clash_check=True):
        cfg = self.config
        margin = 0.5 * max(size[0], size[1])
        for _ in range(cfg.max_placement_retries):
            xy = self.rng.uniform(margin, cfg.room_extent - margin, size=2)
            center = np.array([xy[0], xy[1], size[2] / 2.0])
            if not clash_check or not _footprints_clash(center, size, self.placed):
                self.placed.append((center.copy(), size.copy()))
                return center
        raise GenerationError(
            f"could not place a {size} box after {cfg.max_placement_retries} retries")

    def register(self, center, size):
        self.placed.append((np.asarray(center, float), np.asarray(size, float)))


def generate_scene(config: SyntheticConfig, rng, scene_id="scene",
                   thresholds: LabelThresholds = LabelThresholds()) -> GeneratedScene:
    """Build one scene; raises GenerationError when placement becomes
    infeasible. The returned record lists the injected relation pairs
    for cross-checking against the labeler."""
    n_objects = int(rng.integers(config.objects_min, config.objects_max + 1))
    placer = _Placer(config, rng)
    boxes: list[Box3D] = []
    intended: list[IntendedPair] = []

    def add_box(center, size, category):
        instance = len(boxes)
        boxes.append(Box3D(np.asarray(center, float), np.asarray(size, float),
                           int(category), instance))
        return instance

    def remaining():
        return n_objects - len(boxes)

    # cluster: 2-3 same-category objects scattered in the room
    if remaining() >= 2 and rng.random() < config.cluster_prob:
        count = min(int(rng.integers(2, 4)), remaining())
        category = int(rng.integers(config.category_count))
        members = []
        for _ in range(count):
            size = placer.random_size()
            members.append(add_box(placer.place_on_floor(size), size, category))
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                intended.append(IntendedPair("semantic", a, b))

    # stack: top box fully inside the base footprint, zero vertical gap
    if remaining() >= 2 and rng.random() < config.stack_prob:
        top_cat = int(rng.integers(config.category_count))
        base_cat = support_category(top_cat, config.category_count)
        base_size = placer.random_size(0.7, 1.3)
        base_center = placer.place_on_floor(base_size)
        top_size = np.array([
            base_size[0] * rng.uniform(0.4, 0.8),
            base_size[1] * rng.uniform(0.4, 0.8),
            rng.uniform(0.25, 0.5),
        ])
        slack = 0.5 * (base_size[:2] - top_size[:2])
        offset = rng.uniform(-0.9, 0.9, size=2) * slack
        top_center = np.array([base_center[0] + offset[0],
                               base_center[1] + offset[1],
                               base_size[2] + top_size[2] / 2.0])
        base = add_box(base_center, base_size, base_cat)
        top = add_box(top_center, top_size, top_cat)
        placer.register(top_center, top_size)
        intended.append(IntendedPair("spatial", base, top))

    # adjacent: smaller box beside a larger one, nested side projections
    if remaining() >= 2 and rng.random() < config.adjacent_prob:
        cat_a = int(rng.integers(config.category_count))
        cat_b = support_category(cat_a, config.category_count)
        size_a = placer.random_size(0.7, 1.3)
        center_a = placer.place_on_floor(size_a)
        size_b = np.array([
            rng.uniform(0.3, 0.8),
            size_a[1] * rng.uniform(0.5, 0.95),
            size_a[2] * rng.uniform(0.5, 0.95),
        ])
        gap = rng.uniform(0.0, 0.8) * thresholds.tau_d
        along = rng.choice([-1.0, 1.0])
        center_b = np.array([
            center_a[0] + along * (0.5 * size_a[0] + gap + 0.5 * size_b[0]),
            center_a[1] + rng.uniform(-0.4, 0.4) * (size_a[1] - size_b[1]) / 2.0,
            size_b[2] / 2.0,
        ])
        a = add_box(center_a, size_a, cat_a)
        b = add_box(center_b, size_b, cat_b)
        placer.register(center_b, size_b)
        intended.append(IntendedPair("spatial", a, b))

    while remaining() > 0:
        size = placer.random_size(0.4, 1.2)
        add_box(placer.place_on_floor(size), size,
                int(rng.integers(config.category_count)))

    ambiguous = [b.instance_id for b in boxes
                 if rng.random() < config.ambiguity_rate]
    scene = Scene(scene_id, boxes, config.point_count_hint)

    for pair in intended:  # construction guarantee, cheap to assert
        if pair.kind == "spatial":
            a, b = boxes[pair.instance_a], boxes[pair.instance_b]
            if not label_spatial(a, b, thresholds.tau_d, thresholds.tau_r):
                raise GenerationError(
                    f"{scene_id}: injected spatial pair not recoverable")
    return GeneratedScene(scene, intended, ambiguous)


def generate_dataset(config: SyntheticConfig, count, seed, prefix="scene"):
    """Deterministic list of GeneratedScene; scene k uses rng seeded by
    (seed, k)."""
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        out.append(generate_scene(config, rng, scene_id=f"{prefix}_{k:05d}"))
    return out


def audit_dataset(generated: list[GeneratedScene], config: SyntheticConfig,
                  thresholds: LabelThresholds = LabelThresholds()):
    """Recovery and rate statistics for a generated dataset."""
    recovered = 0
    injected = 0
    scenes_with_spatial_injection = 0
    scenes_with_positive_spatial = 0
    positive_pairs = 0
    total_pairs = 0
    for gen in generated:
        boxes = gen.scene.ground_truth
        spatial_injected = False
        for pair in gen.intended:
            injected += 1
            a, b = boxes[pair.instance_a], boxes[pair.instance_b]
            if pair.kind == "semantic":
                ok = a.category == b.category and a.instance_id != b.instance_id
            else:
                ok = bool(label_spatial(a, b, thresholds.tau_d, thresholds.tau_r))
                spatial_injected = True
            recovered += int(ok)
        scenes_with_spatial_injection += int(spatial_injected)
        any_positive = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                total_pairs += 1
                if label_spatial(boxes[i], boxes[j], thresholds.tau_d, thresholds.tau_r):
                    positive_pairs += 1
                    any_positive = True
        scenes_with_positive_spatial += int(any_positive)
    n = max(len(generated), 1)
    return {
        "scene_count": len(generated),
        "injected_pairs": injected,
        "recovered_pairs": recovered,
        "recovery_rate": recovered / injected if injected else 1.0,
        "spatial_injection_scene_rate": scenes_with_spatial_injection / n,
        "positive_spatial_scene_rate": scenes_with_positive_spatial / n,
        "positive_spatial_pair_fraction": positive_pairs / max(total_pairs, 1),
        "spatial_scene_rate_target": config.spatial_scene_rate_target,
    }
