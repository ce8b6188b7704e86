"""Evaluation metrics: frame-level AUC/AP and detection mAP over IoU thresholds.

The implementations are self-contained so tie handling and interpolation
are pinned down exactly: AUC averages ranks across ties (the normalized
Mann-Whitney statistic), AP is the area of the raw precision/recall
staircase with descending-score order and ties broken by original index,
and detection AP uses greedy best-IoU matching against each video's
unmatched ground truth.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import UndefinedMetricError
from .inference import AnomalyInstance, temporal_iou

DEFAULT_IOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


def frame_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve with rank-averaged ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1)
    # average the ranks within each group of tied scores
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    for group in np.split(order, boundaries):
        ranks[group] = ranks[group].mean()
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def frame_ap(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision: sum of (recall step) x (precision) at each positive.

    Scores are ranked descending with ties broken by original index; no
    precision envelope is applied.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if ((labels != 0) & (labels != 1)).any():
        raise ValueError("labels must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AP needs at least one positive frame")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] == 1
    cumulative = np.cumsum(hits)
    precision = cumulative / np.arange(1, labels.size + 1)
    return float(precision[hits].sum() / n_pos)


def _detection_ap(
    predictions: list[tuple[str, AnomalyInstance]],
    ground_truth: dict[str, list[AnomalyInstance]],
    n_gt: int,
    iou_threshold: float,
) -> float:
    """AP for one category: greedy best-IoU matching, then the AP staircase."""
    order = sorted(
        predictions,
        key=lambda vi: (-vi[1].confidence, vi[0], vi[1].start, vi[1].end),
    )
    matched: dict[str, set[int]] = {vid: set() for vid in ground_truth}
    hits = np.zeros(len(order), dtype=bool)
    for rank, (video_id, pred) in enumerate(order):
        candidates = ground_truth.get(video_id, [])
        best_iou, best_index = 0.0, -1
        for index, gt in enumerate(candidates):
            if index in matched[video_id]:
                continue
            iou = temporal_iou((pred.start, pred.end), (gt.start, gt.end))
            if iou > best_iou:
                best_iou, best_index = iou, index
        if best_index >= 0 and best_iou >= iou_threshold:
            matched[video_id].add(best_index)
            hits[rank] = True
    if len(order) == 0:
        return 0.0
    cumulative = np.cumsum(hits)
    precision = cumulative / np.arange(1, len(order) + 1)
    return float(precision[hits].sum() / n_gt)


def map_at_iou(
    predictions: dict[str, list[AnomalyInstance]],
    ground_truth: dict[str, list[AnomalyInstance]],
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
) -> dict[float, float]:
    """Mean AP over anomaly categories at each IoU threshold.

    Only categories with at least one ground-truth instance contribute to
    the mean; a prediction is a true positive when it matches a previously
    unmatched same-category instance of the same video with IoU at or above
    the threshold.
    """
    categories = sorted(
        {inst.category for insts in ground_truth.values() for inst in insts}
    )
    if not categories:
        raise UndefinedMetricError("mAP needs at least one ground-truth instance")
    by_category_preds: dict[int, list[tuple[str, AnomalyInstance]]] = {
        c: [] for c in categories
    }
    for video_id, insts in predictions.items():
        for inst in insts:
            if inst.confidence is None:
                raise ValueError("predictions must carry confidences")
            if inst.category in by_category_preds:
                by_category_preds[inst.category].append((video_id, inst))
    result = {}
    for threshold in thresholds:
        ap_values = []
        for category in categories:
            gt_category = {
                vid: [i for i in insts if i.category == category]
                for vid, insts in ground_truth.items()
            }
            n_gt = sum(len(v) for v in gt_category.values())
            ap_values.append(
                _detection_ap(
                    by_category_preds[category], gt_category, n_gt, threshold
                )
            )
        result[threshold] = float(np.mean(ap_values))
    return result


@dataclasses.dataclass
class EvalReport:
    """Bundle of the frame-level and detection metrics for one evaluation."""

    frame_auc: float
    frame_ap: float
    map_at: dict[float, float]
    avg_map: float

    def as_dict(self) -> dict:
        return {
            "frame_auc": self.frame_auc,
            "frame_ap": self.frame_ap,
            "map": {f"{t:g}": v for t, v in sorted(self.map_at.items())},
            "avg_map": self.avg_map,
        }

    def render(self) -> str:
        lines = [
            f"{'frame AUC':<12} {self.frame_auc:.4f}",
            f"{'frame AP':<12} {self.frame_ap:.4f}",
        ]
        for threshold in sorted(self.map_at):
            lines.append(f"{f'mAP@{threshold:g}':<12} {self.map_at[threshold]:.4f}")
        lines.append(f"{'AVG':<12} {self.avg_map:.4f}")
        return "\n".join(lines)


def build_report(
    frame_scores: np.ndarray,
    frame_labels: np.ndarray,
    predictions: dict[str, list[AnomalyInstance]],
    ground_truth: dict[str, list[AnomalyInstance]],
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
) -> EvalReport:
    map_values = map_at_iou(predictions, ground_truth, thresholds)
    return EvalReport(
        frame_auc=frame_auc(frame_scores, frame_labels),
        frame_ap=frame_ap(frame_scores, frame_labels),
        map_at=map_values,
        avg_map=float(np.mean(list(map_values.values()))),
    )
