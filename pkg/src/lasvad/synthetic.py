"""Synthetic corpus generation for desk-scale end-to-end runs.

Stands in for real pre-extracted video features: each category gets a
unit-norm centroid near a shared base direction, frames wander around their
centroid under temporally smoothed noise, abnormal videos contain 1-3
contiguous segments drawn around their category centroid, and the text bank
is built from lightly perturbed copies of the centroids so that cross-modal
cosine alignment is informative but imperfect.

Anomalies are marked by motion, not by per-frame appearance: normal
stretches and anomalous segments wander with the same per-frame marginal
distribution (the centroid offsets are small relative to the noise, and the
smoothing used below preserves per-frame variance exactly), differing only
in coherence timescale — the background decorrelates within a few frames
while an anomalous segment holds its direction over a long category-specific
window. Any per-frame statistic is therefore nearly category-blind, which
keeps a frozen random pipeline near chance; the signal lives in frame-to-
frame differences, where slow segments move much less per step than the
fast background, a contrast the learned kinematic stream reads directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    FeatureSequence,
    TextBank,
    VideoRecord,
    save_text_bank,
    write_feature_file,
    write_manifest,
)
from .errors import ValidationError

# Row norm of generated features. Real frame embeddings (I3D/C3D style) are
# unnormalized activations with norms well above 1; the large scale also
# keeps linear heads responsive at the small step counts of desk-scale runs.
FEATURE_SCALE = 600.0

# Moving-average window for the noise of normal stretches: short, so the
# background wander decorrelates within a few frames.
NORMAL_SMOOTHING = 7

# Scale of text-bank perturbations relative to 1/snr.
TEXT_PERTURBATION = 0.1

# Asymptotic pre-normalization magnitude of the per-category centroid
# offsets from the shared base direction; the effective offset grows with
# snr as 2*snr/(snr+8) of this (see category_centroids).
CATEGORY_SEPARATION = 2.0

# Signed weight on the shared base direction per anomalous category (cycled
# when there are more categories than entries). Categories relate to normal
# motion differently: some keep a with-the-flow component, some are purely
# orthogonal, some push against it. Because background shots flip the sign
# of the base direction, any category with a nonzero entry here has its
# background affinity oscillate shot by shot, while frames inside a true
# segment (which never flips) hold a steady affinity.
BASE_LADDER = (0.6, 0.0, -0.6)

# Per-coordinate noise std at the reference snr of 8; scales as 8/snr.
NOISE_LEVEL = 0.45

# How far the text-bank rows keep the centroid offsets: the text rows sit
# between the shared base and their category centroid. Damping keeps the
# alignment stream's per-frame softmax nearly flat, so categories are read
# from it at the aggregate level rather than frame by frame.
TEXT_DAMPING = 0.3
# Background "shot" structure: sign blocks of this many frames, flipped to
# the negative direction with this probability.
SHOT_LENGTH = 3
SHOT_FLIP = 0.45


def category_window(category: int) -> int:
    """Noise smoothing window for anomalous category c >= 1.

    One long odd window, far above the NORMAL_SMOOTHING-window background
    wander: anomalous segments of every category hold a near-frozen coherent
    direction, so slowness is a purely binary signature while the categories
    are separated by their direction alone.
    """
    return 111


@dataclass
class SynthConfig:
    """Parameters of the synthetic corpus generator."""

    n_videos: int
    n_categories: int
    feature_dim: int
    t_min: int
    t_max: int
    anomaly_ratio: float = 0.5
    snr: float = 8.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_videos < 2:
            raise ValidationError("n_videos must be >= 2")
        if self.n_categories < 1:
            raise ValidationError("n_categories must be >= 1")
        if self.feature_dim < 3:
            raise ValidationError("feature_dim must be >= 3")
        if not (1 <= self.t_min <= self.t_max):
            raise ValidationError("need 1 <= t_min <= t_max")
        if not (0.0 < self.anomaly_ratio < 1.0):
            raise ValidationError("anomaly_ratio must lie in (0, 1)")
        if self.snr <= 0:
            raise ValidationError("snr must be positive")
        if self.feature_dim < self.n_categories + 1:
            raise ValidationError(
                "feature_dim must be >= n_categories + 1 for orthonormal centroids"
            )


def category_centroids(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """(C+1) unit rows; row 0 is the normal category.

    Anomalous centroid c is the normalized sum of a signed fraction of the
    shared base direction (BASE_LADDER) and an offset along an orthonormal
    direction unique to c, so the offsets are mutually orthogonal and
    linearly recoverable while the categories differ in how much of normal
    motion they retain. The offset magnitude grows with snr (saturating at
    2x CATEGORY_SEPARATION), so higher snr means wider angular separation
    as well as less noise.
    """
    gauss = rng.standard_normal((config.feature_dim, config.feature_dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity of the decomposition
    base = q[0]
    separation = CATEGORY_SEPARATION * 2.0 * config.snr / (config.snr + 8.0)
    centroids = np.repeat(base[None, :], config.n_categories + 1, axis=0)
    for c in range(1, config.n_categories + 1):
        ladder = BASE_LADDER[(c - 1) % len(BASE_LADDER)]
        shifted = ladder * base + separation * q[c]
        centroids[c] = shifted / np.linalg.norm(shifted)
    return centroids


def _smoothed_noise(rng: np.random.Generator, t: int, d: int, window: int) -> np.ndarray:
    """Temporally smoothed Gaussian noise (T x D) with unit marginal variance.

    A moving average over `window` frames followed by a sqrt(window) rescale:
    every frame is marginally N(0, 1) per coordinate regardless of the
    window, only the temporal correlation length changes.
    """
    if window == 1:
        return rng.standard_normal((t, d))
    pad = window // 2
    raw = rng.standard_normal((t + 2 * pad, d))
    kernel = np.ones(window) / window
    smooth = np.apply_along_axis(
        lambda col: np.convolve(col, kernel, mode="valid"), 0, raw
    )
    return smooth * np.sqrt(window)


def _abnormal_flags(n_videos: int, anomaly_ratio: float) -> np.ndarray:
    """Spread round(n * ratio) abnormal videos evenly across the index range,
    so contiguous manifest slices stay roughly label-balanced."""
    n_abnormal = int(round(n_videos * anomaly_ratio))
    marks = np.floor(np.arange(1, n_videos + 1) * n_abnormal / n_videos)
    return np.diff(marks, prepend=0.0) > 0


def _sample_segments(
    rng: np.random.Generator, t: int, max_segments: int = 1
) -> list[tuple[int, int]]:
    """1 (default) or more non-overlapping inclusive index ranges in [0, t)."""
    n_target = int(rng.integers(1, max_segments + 1))
    lo = max(2, 2 * t // 5)
    hi = max(lo + 1, 3 * t // 5)
    segments: list[tuple[int, int]] = []
    for _ in range(50):
        if len(segments) == n_target:
            break
        length = int(rng.integers(lo, hi + 1))
        if length > t:
            length = t
        start = int(rng.integers(0, t - length + 1))
        end = start + length - 1
        if all(end < s or start > e for s, e in segments):
            segments.append((start, end))
    segments.sort()
    return segments


def generate_synthetic_corpus(
    config: SynthConfig, out_dir: str | Path
) -> tuple[Path, list[VideoRecord], TextBank]:
    """Generate feature files, a manifest and a text bank under ``out_dir``.

    Deterministic given the config: the same seed produces byte-identical
    output. Returns (manifest path, records, text bank).
    """
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    centroids = category_centroids(config, rng)
    noise_scale = NOISE_LEVEL * 8.0 / config.snr
    abnormal = _abnormal_flags(config.n_videos, config.anomaly_ratio)

    records = []
    n_abnormal_seen = 0
    for i in range(config.n_videos):
        video_id = f"video_{i:04d}"
        t = int(rng.integers(config.t_min, config.t_max + 1))
        # Cycle categories over the abnormal videos so every contiguous
        # manifest slice is close to category-balanced; skewed category
        # counts would starve the rare categories' classifier columns.
        if abnormal[i]:
            category = n_abnormal_seen % config.n_categories + 1
            n_abnormal_seen += 1
        else:
            category = 0

        # Background frames flip the base direction in short blocks: the
        # mean keeps a positive bias while consecutive shots move a lot;
        # anomalous segments hold a fixed category direction instead.
        # Block-wise flips add velocity contrast for the kinematic stream,
        # and the surviving background mean keeps background frames
        # pointing somewhere other than the segment direction, so the
        # similarity graph can tell the two populations apart.
        n_blocks = t // SHOT_LENGTH + 1
        signs = np.repeat(
            rng.choice(np.array([-1.0, 1.0]), size=n_blocks, p=[SHOT_FLIP, 1.0 - SHOT_FLIP]),
            SHOT_LENGTH,
        )[:t]
        directions = signs[:, None] * centroids[0][None, :]
        noise = _smoothed_noise(rng, t, config.feature_dim, NORMAL_SMOOTHING)
        instances: list[tuple[int, int, int]] = []
        if category > 0:
            window = category_window(category)
            for start, end in _sample_segments(rng, t):
                directions[start : end + 1] = centroids[category]
                noise[start : end + 1] = _smoothed_noise(
                    rng, end - start + 1, config.feature_dim, window
                )
                instances.append((start, end, category))

        rows = directions + noise_scale * noise
        rows = rows / np.linalg.norm(rows, axis=1, keepdims=True) * FEATURE_SCALE

        path = feature_dir / f"{video_id}.lasf"
        write_feature_file(path, FeatureSequence(video_id, rows))
        records.append(
            VideoRecord(
                video_id=video_id,
                feature_path=path,
                binary_label=int(category > 0),
                category_label=category,
                instances=instances,
            )
        )

    text_scale = TEXT_PERTURBATION / config.snr
    text_dirs = centroids[0] + TEXT_DAMPING * (centroids - centroids[0])
    text_dirs = text_dirs / np.linalg.norm(text_dirs, axis=1, keepdims=True)
    names = text_dirs + text_scale * rng.standard_normal(centroids.shape)
    attrs = text_dirs + text_scale * rng.standard_normal(centroids.shape)
    names = names / np.linalg.norm(names, axis=1, keepdims=True)
    attrs = attrs / np.linalg.norm(attrs, axis=1, keepdims=True)
    category_names = ["normal"] + [
        f"anomaly_{c}" for c in range(1, config.n_categories + 1)
    ]
    bank = TextBank(names, attrs, category_names)
    save_text_bank(out_dir / "text_bank", bank)

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path, records, bank
