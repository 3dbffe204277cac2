"""Run configuration: every knob of the pipeline in one place.

Defaults follow the reference hyperparameters (feature width 128, eight
matched pairs, objectness distance threshold 0.3, adjacency thresholds
0.1/0.5, objectness/relation class weights 0.2/0.8, loss weights
1.0/0.5/1.0/0.1/0.1). CLI flags override config-file values, which
override these defaults; the resolved config is echoed into every run
manifest.

Config files are plain ``key = value`` lines (``#`` comments allowed);
values are parsed as JSON literals when possible, else kept as strings.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import UsageError
from .harness.backbone import BackboneConfig
from .harness.synthetic import SyntheticConfig
from .labeling import LabelThresholds
from .relation import ModelConfig

RELATION_CHOICES = ("all", "semantic", "spatial")


@dataclass
class RunConfig:
    # model
    feature_width: int = 128
    nk: int = 8
    category_count: int = 10
    # labeling thresholds
    xi: float = 0.3
    tau_d: float = 0.1
    tau_r: float = 0.5
    # loss weights
    w0: float = 0.2
    w1: float = 0.8
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda4: float = 0.1
    lambda5: float = 0.1
    # synthetic data
    train_scenes: int = 200
    val_scenes: int = 50
    objects_min: int = 4
    objects_max: int = 9
    cluster_prob: float = 0.75
    stack_prob: float = 0.5
    adjacent_prob: float = 0.5
    feature_noise: float = 0.1
    ambiguity_rate: float = 0.3
    room_extent: float = 8.0
    # backbone stub
    proposal_count: int = 64
    anchors_per_gt: int = 2
    center_jitter: float = 0.12
    size_jitter: float = 0.10
    # training
    epochs: int = 60
    learning_rate: float = 1e-3
    nms_iou: float = 0.25
    seeds: list[int] = field(default_factory=lambda: [0])
    # ablation switches
    no_arm3d: bool = False
    no_obm: bool = False
    equal_attention: bool = False
    relations: str = "all"
    teacher_forcing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.relations not in RELATION_CHOICES:
            raise UsageError(
                f"relations must be one of {RELATION_CHOICES}, got "
                f"{self.relations!r} (semantic-only and spatial-only cannot "
                f"be combined)")
        if self.feature_width % 4 != 0:
            raise UsageError("feature_width must be divisible by 4")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if self.no_arm3d and (self.no_obm or self.equal_attention
                              or self.teacher_forcing):
            raise UsageError("--no-arm3d cannot be combined with other "
                             "relation-module flags")
        for name in ("xi", "tau_d", "w0", "w1", "learning_rate"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if not 0 < self.tau_r <= 1:
            raise UsageError("tau_r must be in (0, 1]")
        if self.epochs < 0 or self.train_scenes < 0 or self.val_scenes < 0:
            raise UsageError("counts must be non-negative")

    # derived sub-configs -------------------------------------------------
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.feature_width, self.nk, self.category_count)

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            category_count=self.category_count,
            objects_min=self.objects_min, objects_max=self.objects_max,
            cluster_prob=self.cluster_prob, stack_prob=self.stack_prob,
            adjacent_prob=self.adjacent_prob,
            feature_noise=self.feature_noise,
            ambiguity_rate=self.ambiguity_rate,
            room_extent=self.room_extent)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(self.proposal_count, self.anchors_per_gt,
                              self.center_jitter, self.size_jitter)

    def thresholds(self) -> LabelThresholds:
        return LabelThresholds(self.xi, self.tau_d, self.tau_r)

    @property
    def lambdas(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4,
                self.lambda5)

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides) -> "RunConfig":
        merged = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in merged:
                raise UsageError(f"unknown config key: {key!r}")
            merged[key] = value
        return RunConfig(**merged)


def parse_config_file(path) -> dict:
    """Parse a ``key = value`` document into an override dict."""
    overrides = {}
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in valid:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            value = value.strip()
            try:
                overrides[key] = json.loads(value)
            except json.JSONDecodeError:
                overrides[key] = value
    return overrides


def load_config(path=None, **flag_overrides) -> RunConfig:
    """Defaults, then config file, then flags; validates the result."""
    base = RunConfig()
    if path is not None:
        base = base.with_overrides(**parse_config_file(path))
    return base.with_overrides(**flag_overrides)
