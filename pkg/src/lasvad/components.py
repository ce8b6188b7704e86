"""Similarity-graph pseudo-labeling.

Frames of one video are linked when their rectified cosine similarity
clears a threshold; connected components of that graph pool features and
fused scores into per-component prototypes, and every frame inherits a
one-hot pseudo-label from its nearest prototype. Everything here runs on
numpy — pseudo-labels are training targets, never differentiated through.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise DegenerateInputError("zero feature row has no direction")
    return x / norms


def frame_similarity(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine matrix of the frame features (symmetric, unit diagonal)."""
    unit = _unit_rows(np.asarray(features, dtype=np.float64))
    sim = unit @ unit.T
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


def rectify(
    similarity: np.ndarray, align_scores: np.ndarray, strength: float
) -> np.ndarray:
    """Boost pairs whose alignment distributions agree on some category.

    The consistency of frames i and j is max_c min(q[i, c], q[j, c]); the
    similarity is scaled by (1 + strength * consistency).
    """
    if strength < 0:
        raise ValueError(f"rectify strength must be >= 0, got {strength}")
    q = np.asarray(align_scores, dtype=np.float64)
    consistency = np.minimum(q[:, None, :], q[None, :, :]).max(axis=-1)
    return similarity * (1.0 + strength * consistency)


def binarize(similarity: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean adjacency: strict similarity > threshold."""
    return similarity > threshold


def connected_components(adjacency: np.ndarray) -> list[list[int]]:
    """Maximal connected components of an undirected graph, iterative DFS.

    The adjacency is symmetrized by logical OR to absorb floating-point
    asymmetry upstream. Components are sorted internally and ordered by
    their smallest member.
    """
    adj = np.asarray(adjacency, dtype=bool)
    adj = adj | adj.T
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    components: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            node = stack.pop()
            members.append(node)
            neighbors = np.flatnonzero(adj[node] & ~seen)
            seen[neighbors] = True
            stack.extend(int(i) for i in neighbors)
        components.append(sorted(members))
    return components


@dataclasses.dataclass
class ComponentSet:
    """A partition of frames with per-component feature and score prototypes."""

    components: list[list[int]]
    feature_prototypes: np.ndarray  # r x D mean features
    score_prototypes: np.ndarray  # r x (C+1) mean fused scores

    def __post_init__(self):
        counts = np.zeros(sum(len(c) for c in self.components), dtype=int)
        for members in self.components:
            counts[members] += 1
        if (counts != 1).any():
            raise ValueError("components must partition the frame indices")


def build_component_set(
    features: np.ndarray,
    fused_scores: np.ndarray,
    align_scores: np.ndarray,
    rectify_strength: float,
    graph_threshold: float,
) -> ComponentSet:
    """Full pipeline: cosine graph -> rectify -> binarize -> DFS -> prototypes."""
    similarity = frame_similarity(features)
    rectified = rectify(similarity, align_scores, rectify_strength)
    parts = connected_components(binarize(rectified, graph_threshold))
    feats = np.stack([features[members].mean(axis=0) for members in parts])
    scores = np.stack([fused_scores[members].mean(axis=0) for members in parts])
    return ComponentSet(parts, feats, scores)


def pseudo_labels(
    component_set: ComponentSet, features: np.ndarray, soft: bool = False
) -> np.ndarray:
    """Per-frame targets from the nearest component prototype (cosine).

    Hard labels are one-hot at the argmax of the prototype's mean score; the
    soft variant returns the prototype's score row renormalized to sum 1.
    Similarity ties go to the lowest component index.
    """
    unit_features = _unit_rows(np.asarray(features, dtype=np.float64))
    unit_prototypes = _unit_rows(component_set.feature_prototypes)
    similarity = unit_features @ unit_prototypes.T
    nearest = similarity.argmax(axis=1)  # argmax takes the first (lowest) tie
    rows = component_set.score_prototypes[nearest]
    if soft:
        return rows / rows.sum(axis=1, keepdims=True)
    labels = np.zeros_like(rows)
    labels[np.arange(rows.shape[0]), rows.argmax(axis=1)] = 1.0
    return labels


def acc_pseudo_labels(
    features: np.ndarray,
    fused_scores: np.ndarray,
    align_scores: np.ndarray,
    rectify_strength: float,
    graph_threshold: float,
    soft: bool = False,
) -> np.ndarray:
    """Convenience wrapper: component set + pseudo-labels in one call."""
    component_set = build_component_set(
        features, fused_scores, align_scores, rectify_strength, graph_threshold
    )
    return pseudo_labels(component_set, features, soft=soft)


def dump_components(
    path: Path, video_id: str, component_set: ComponentSet
) -> None:
    """Append one JSON-lines debug record of a video's component assignment."""
    record = {"video_id": video_id, "components": component_set.components}
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(json.dumps(record) + "\n")
