"""Proposal stub standing in for a real detector backbone.

Each scene yields a fixed set of proposals: every ground-truth object
anchors `anchors_per_gt` candidates with jittered centers/sizes and
noisy category evidence, and the remainder are background candidates
with random geometry and evidence that is pure noise. Ambiguous objects
(marked by the generator) have their evidence mixed 50/50 with a fixed
confusable category, which is what the relation context later resolves.

Besides the seed box, every anchored proposal carries an independent,
tighter geometric observation of its object (the stand-in for aggregated
point evidence); the regression heads learn to move the seed toward it.
Background proposals observe nothing better than their own seed.

The raw descriptor per proposal is
    [seed center / room (3), log seed size (3),
     scaled center residual obs - seed (3),
     scaled log-size residual (3), category evidence (K)]
with residuals scaled to O(1) so they survive the embedding's batch
normalization. Descriptors are a pure function of (scene, seed):
deterministic and cached across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry.boxes import Scene
from .synthetic import SyntheticConfig, confusable_category

# residual channels are ~0.1 m; this brings them to O(1) for batchnorm
RESIDUAL_SCALE = 5.0


@dataclass(frozen=True)
class BackboneConfig:
    proposal_count: int = 64
    anchors_per_gt: int = 2
    center_jitter: float = 0.12
    size_jitter: float = 0.10
    obs_center_noise: float = 0.03
    obs_size_noise: float = 0.05

    def descriptor_width(self, category_count):
        return 12 + category_count


@dataclass
class ProposalSeeds:
    """Data-side proposal state for one scene (no learned content)."""

    descriptors: np.ndarray   # (N, D)
    centers: np.ndarray       # (N, 3) seed centers
    seed_sizes: np.ndarray    # (N, 3)
    gt_anchored: np.ndarray   # (N,) bool, True for ground-truth anchors
    geo: np.ndarray = None    # (N, 6) scaled observation residuals

    def __len__(self):
        return self.descriptors.shape[0]


def backbone_stub(scene: Scene, synth: SyntheticConfig, backbone: BackboneConfig,
                  rng, ambiguous_instances=()) -> ProposalSeeds:
    k = synth.category_count
    n = backbone.proposal_count
    ambiguous = set(ambiguous_instances)
    centers = np.empty((n, 3))
    sizes = np.empty((n, 3))
    obs_centers = np.empty((n, 3))
    obs_sizes = np.empty((n, 3))
    evidence = np.empty((n, k))
    anchored = np.zeros(n, dtype=bool)

    row = 0
    for obj in scene.ground_truth:
        for _ in range(backbone.anchors_per_gt):
            if row >= n:
                break
            centers[row] = obj.center + rng.normal(0.0, backbone.center_jitter, 3)
            sizes[row] = obj.size * np.exp(rng.normal(0.0, backbone.size_jitter, 3))
            obs_centers[row] = obj.center + rng.normal(0.0, backbone.obs_center_noise, 3)
            obs_sizes[row] = obj.size * np.exp(
                rng.normal(0.0, backbone.obs_size_noise, 3))
            ev = np.zeros(k)
            if obj.instance_id in ambiguous:
                ev[obj.category] = 0.5
                ev[confusable_category(obj.category, k)] = 0.5
            else:
                ev[obj.category] = 1.0
            evidence[row] = ev + rng.normal(0.0, synth.feature_noise, k)
            anchored[row] = True
            row += 1

    while row < n:  # background candidates observe only themselves
        centers[row] = rng.uniform(0.0, synth.room_extent, 3) * [1, 1, 0.25]
        sizes[row] = rng.uniform(0.3, 1.3, 3)
        obs_centers[row] = centers[row] + rng.normal(0.0, backbone.obs_center_noise, 3)
        obs_sizes[row] = sizes[row] * np.exp(
            rng.normal(0.0, backbone.obs_size_noise, 3))
        evidence[row] = rng.normal(0.0, synth.feature_noise, k)
        row += 1

    geo = np.concatenate(
        [RESIDUAL_SCALE * (obs_centers - centers),
         RESIDUAL_SCALE * (np.log(obs_sizes) - np.log(sizes))], axis=1)
    descriptors = np.concatenate(
        [centers / synth.room_extent, np.log(sizes), geo, evidence], axis=1)
    return ProposalSeeds(descriptors, centers, sizes, anchored, geo)
