"""Coarse anomaly scoring and fine-grained instance extraction.

Instances are inclusive frame-index intervals [start, end] with an anomaly
category (never 0, the normal class) and an outer-inner confidence: mean
score inside the interval minus mean score in a margin around it.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np


@dataclasses.dataclass
class AnomalyInstance:
    """One detected anomaly span; frame indices are inclusive."""

    start: int
    end: int
    category: int
    confidence: float | None = None

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad interval [{self.start}, {self.end}]")
        if self.category < 1:
            raise ValueError("instances describe anomaly categories (>= 1)")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def coarse_scores(fused_scores: np.ndarray, binary_scores: np.ndarray) -> np.ndarray:
    """Per-frame abnormality: average of (1 - normal score) and abnormal score."""
    return ((1.0 - fused_scores[:, 0]) + binary_scores[:, 1]) / 2.0


def _runs(mask: np.ndarray, merge_gap: int) -> list[tuple[int, int]]:
    """Maximal runs of True, merging runs separated by <= merge_gap frames."""
    indices = np.flatnonzero(mask)
    if indices.size == 0:
        return []
    runs: list[tuple[int, int]] = []
    start = prev = int(indices[0])
    for i in indices[1:]:
        i = int(i)
        if i - prev - 1 <= merge_gap:
            prev = i
        else:
            runs.append((start, prev))
            start = prev = i
    runs.append((start, prev))
    return runs


def extract_instances(
    video_scores: np.ndarray,
    frame_scores: np.ndarray,
    video_threshold: float,
    frame_threshold: float,
    merge_gap: int = 0,
) -> list[AnomalyInstance]:
    """Two-step thresholding: gate categories at the video level, then take
    maximal runs of frames scoring above the frame threshold (both strict)."""
    instances = []
    for category in range(1, frame_scores.shape[1]):
        if video_scores[category] <= video_threshold:
            continue
        for start, end in _runs(frame_scores[:, category] > frame_threshold, merge_gap):
            instances.append(AnomalyInstance(start, end, category))
    return instances


def outer_inner_confidence(scores: np.ndarray, instance: AnomalyInstance) -> float:
    """Mean score inside the instance minus the mean in a margin around it.

    The margin is a quarter of the instance length (at least one frame) per
    side, clipped to the sequence; if nothing remains outside, the inner
    mean alone is the confidence.
    """
    t = scores.shape[0]
    if instance.end >= t:
        raise ValueError("instance extends past the score vector")
    inner = float(scores[instance.start : instance.end + 1].mean())
    margin = max(1, math.ceil(0.25 * instance.length))
    left = scores[max(instance.start - margin, 0) : instance.start]
    right = scores[instance.end + 1 : min(instance.end + margin, t - 1) + 1]
    outer = np.concatenate([left, right])
    if outer.size == 0:
        return inner
    return inner - float(outer.mean())


def score_instances(
    instances: list[AnomalyInstance], frame_scores: np.ndarray
) -> list[AnomalyInstance]:
    """Attach outer-inner confidences, each from its own category's column."""
    return [
        dataclasses.replace(
            inst,
            confidence=outer_inner_confidence(frame_scores[:, inst.category], inst),
        )
        for inst in instances
    ]


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Intersection over union of inclusive frame intervals."""
    intersection = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if intersection <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - intersection
    return intersection / union


def nms(
    instances: list[AnomalyInstance], iou_threshold: float
) -> list[AnomalyInstance]:
    """Per-category greedy suppression of overlapping instances.

    Within each category the highest-confidence instance is kept and any
    instance overlapping it with IoU strictly above the threshold is
    discarded. Output is sorted by descending confidence, ties broken by
    (start, end, category).
    """
    kept: list[AnomalyInstance] = []
    order = sorted(
        instances, key=lambda i: (-i.confidence, i.start, i.end, i.category)
    )
    for candidate in order:
        suppressed = any(
            kept_inst.category == candidate.category
            and temporal_iou(
                (kept_inst.start, kept_inst.end), (candidate.start, candidate.end)
            )
            > iou_threshold
            for kept_inst in kept
        )
        if not suppressed:
            kept.append(candidate)
    return kept
