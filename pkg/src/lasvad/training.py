"""Training loop, optimizer, checkpointing, and the run-level pipelines.

Everything downstream of the model is deliberately explicit: a hand-rolled
decoupled-weight-decay Adam step over named parameters; per-step JSON-lines
loss logs whose components always satisfy
``l_all = l_ags + l_fg + l_aux + reg_weight*l_reg + contrastive_weight*l_cst``;
and checkpoint files that embed the config so inference needs no side
channel. All arithmetic is 64-bit and seeded, so training traces and
prediction files are reproducible byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import torch

from .components import build_component_set, dump_components, pseudo_labels
from .config import TrainConfig
from .data import (
    TextBank,
    load_text_bank_prefix,
    read_feature_file,
    read_manifest,
    VideoRecord,
)
from .errors import ConfigurationError, FormatError, NumericError, ValidationError
from .heads import fuse_text_bank, loss_ags, loss_aux, loss_fg, loss_reg, video_scores
from .inference import (
    AnomalyInstance,
    coarse_scores,
    extract_instances,
    nms,
    score_instances,
)
from .intention import loss_cst, sample_contrastive_pairs, update_prototypes
from .metrics import DEFAULT_IOU_THRESHOLDS, EvalReport, build_report
from .model import LasVad

CHECKPOINT_VERSION = 1
LOSS_KEYS = ("l_ags", "l_fg", "l_aux", "l_reg", "l_cst", "l_all")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class AdamWState:
    """First/second moment estimates plus the shared step counter."""

    step: int
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]

    @classmethod
    def initialize(cls, params: dict[str, torch.Tensor]) -> "AdamWState":
        return cls(
            step=0,
            exp_avg={name: torch.zeros_like(p) for name, p in params.items()},
            exp_avg_sq={name: torch.zeros_like(p) for name, p in params.items()},
        )


def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor | None],
    state: AdamWState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay adaptive-moment update, in place.

    Weight decay multiplies parameters by (1 - lr * weight_decay) before the
    gradient-driven update; moments are bias-corrected by the shared step
    count.
    """
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if weight_decay != 0.0:
                param.mul_(1.0 - lr * weight_decay)
            if grad is None:
                continue
            m = state.exp_avg[name]
            v = state.exp_avg_sq[name]
            m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
            denom = (v / correction2).sqrt().add_(eps)
            param.addcdiv_(m / correction1, denom, value=-lr)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def subsample_indices(num_frames: int, max_frames: int) -> np.ndarray:
    """Uniformly spaced frame indices capping a sequence at max_frames."""
    if num_frames <= max_frames:
        return np.arange(num_frames)
    return np.floor(np.linspace(0, num_frames - 1, max_frames)).astype(np.int64)


def collate_batch(
    clips: list[np.ndarray], max_frames: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length clips into a padded tensor plus validity mask.

    Longer clips are uniformly subsampled to max_frames; shorter ones are
    zero-padded. The mask marks real frames; padded rows must never reach
    a loss, pooling, graph, or contrastive pool.
    """
    trimmed = [clip[subsample_indices(clip.shape[0], max_frames)] for clip in clips]
    width = max(clip.shape[0] for clip in trimmed)
    batch = torch.zeros(len(trimmed), width, trimmed[0].shape[1], dtype=torch.float64)
    mask = torch.zeros(len(trimmed), width, dtype=torch.bool)
    for i, clip in enumerate(trimmed):
        batch[i, : clip.shape[0]] = torch.as_tensor(clip, dtype=torch.float64)
        mask[i, : clip.shape[0]] = True
    return batch, mask


# ---------------------------------------------------------------------------
# Loss composition
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class StepOutputs:
    """Scalar loss tensors for one batch plus the pooled intention state."""

    losses: dict[str, torch.Tensor]
    intention_pool: torch.Tensor
    intention_scores_pool: torch.Tensor


def video_losses(
    model: LasVad,
    features: torch.Tensor,
    binary_label: int,
    category_label: int,
    config: TrainConfig,
    aux_active: bool,
    frozen_pseudo: torch.Tensor | None = None,
):
    """Forward one video and compute its four per-video loss terms."""
    out = model.forward_video(features)
    pooled_binary = video_scores(out.binary)
    pooled_fused = video_scores(out.fused)
    terms = {
        "l_ags": loss_ags(pooled_binary, binary_label),
        "l_fg": loss_fg(pooled_fused, category_label),
        "l_reg": loss_reg(out.fused, out.binary),
    }
    if aux_active:
        if frozen_pseudo is None:
            targets = acc_targets(model, out, config)
        else:
            targets = frozen_pseudo
        terms["l_aux"] = loss_aux(targets, out.multiclass)
    else:
        terms["l_aux"] = out.multiclass.sum() * 0.0
    return out, terms


def acc_targets(model: LasVad, out, config: TrainConfig) -> torch.Tensor:
    """Pseudo-label matrix for one video from its current predictions."""
    labels = pseudo_labels(
        build_component_set(
            out.features.detach().numpy(),
            out.fused.detach().numpy(),
            out.align.detach().numpy(),
            config.rectify_strength,
            config.graph_threshold,
        ),
        out.features.detach().numpy(),
        soft=config.soft_pseudo_labels,
    )
    return torch.as_tensor(labels, dtype=torch.float64)


def step_losses(
    model: LasVad,
    clips: list[tuple[torch.Tensor, int, int]],
    config: TrainConfig,
    aux_active: bool,
    frozen_pseudo: list[torch.Tensor] | None = None,
    frozen_pairs: list[tuple[int, int, list[int]]] | None = None,
) -> StepOutputs:
    """All loss components for one batch of (features, y, g_vid) clips.

    The contrastive pool spans every frame of every clip in the batch; frame
    labels for pair mining are the argmax of the current intention scores,
    forced to 0 (normal) for clips whose video label is 0. Passing
    frozen_pseudo/frozen_pairs pins the discrete choices, which makes the
    total loss a smooth function of the parameters (used by gradient checks).
    """
    per_video = {"l_ags": [], "l_fg": [], "l_aux": [], "l_reg": []}
    intention_rows = []
    score_rows = []
    frame_labels = []
    for index, (features, binary_label, category_label) in enumerate(clips):
        out, terms = video_losses(
            model,
            features,
            binary_label,
            category_label,
            config,
            aux_active,
            frozen_pseudo[index] if frozen_pseudo is not None else None,
        )
        for key, value in terms.items():
            per_video[key].append(value)
        intention_rows.append(out.intention)
        score_rows.append(out.intention_scores)
        if binary_label == 0:
            labels = np.zeros(out.intention.shape[0], dtype=np.int64)
        else:
            labels = out.intention_scores.detach().numpy().argmax(axis=1)
        frame_labels.append(labels)
    intention_pool = torch.cat(intention_rows)
    scores_pool = torch.cat(score_rows)
    if frozen_pairs is None:
        pairs = sample_contrastive_pairs(
            intention_pool.detach().numpy(),
            np.concatenate(frame_labels),
            config.num_negatives,
        )
    else:
        pairs = frozen_pairs
    losses = {key: torch.stack(values).mean() for key, values in per_video.items()}
    losses["l_cst"] = loss_cst(intention_pool, pairs)
    losses["l_all"] = (
        losses["l_ags"]
        + losses["l_fg"]
        + losses["l_aux"]
        + config.reg_weight * losses["l_reg"]
        + config.contrastive_weight * losses["l_cst"]
    )
    return StepOutputs(losses, intention_pool, scores_pool)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: LasVad,
    state: AdamWState,
    epoch: int,
    config: TrainConfig,
) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "epoch": epoch,
            "dim": model.dim,
            "n_categories": model.n_categories,
            "config": dataclasses.asdict(config),
            "model_state": model.state_dict(),
            "optimizer_step": state.step,
            "optimizer_exp_avg": state.exp_avg,
            "optimizer_exp_avg_sq": state.exp_avg_sq,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[LasVad, AdamWState, int, TrainConfig]:
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise FormatError(f"{path}: unreadable checkpoint ({exc})")
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise FormatError(f"{path}: not a checkpoint file")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {payload['format_version']}"
        )
    config = TrainConfig(**payload["config"])
    model = build_model(
        payload["dim"],
        payload["n_categories"],
        torch.zeros(payload["n_categories"] + 1, payload["dim"], dtype=torch.float64),
        config,
    )
    model.load_state_dict(payload["model_state"])
    state = AdamWState(
        step=payload["optimizer_step"],
        exp_avg=payload["optimizer_exp_avg"],
        exp_avg_sq=payload["optimizer_exp_avg_sq"],
    )
    return model, state, payload["epoch"], config


def build_model(
    dim: int, n_categories: int, text_matrix: torch.Tensor, config: TrainConfig
) -> LasVad:
    return LasVad(
        dim,
        n_categories,
        text_matrix,
        window_length=config.window_length,
        align_temperature=config.align_temperature,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _load_corpus(
    manifest_path: str | Path, bank: TextBank | None = None
) -> tuple[list[VideoRecord], dict[str, np.ndarray]]:
    records = read_manifest(manifest_path)
    if not records:
        raise ValidationError(f"{manifest_path}: empty manifest")
    clips: dict[str, np.ndarray] = {}
    dim = bank.dim if bank is not None else None
    for record in records:
        sequence = read_feature_file(record.feature_path, record.video_id)
        if dim is None:
            dim = sequence.dim
        if sequence.dim != dim:
            raise ConfigurationError(
                f"{record.video_id}: feature dim {sequence.dim} != expected {dim}"
            )
        clips[record.video_id] = sequence.features
    if bank is not None:
        n_categories = bank.num_anomaly_categories
        for record in records:
            if record.category_label > n_categories:
                raise ConfigurationError(
                    f"{record.video_id}: category {record.category_label} "
                    f"outside the text bank's {n_categories} anomaly categories"
                )
    return records, clips


def _check_losses_finite(losses: dict[str, torch.Tensor]) -> dict[str, float]:
    values = {}
    for key, tensor in losses.items():
        value = float(tensor.detach())
        if not math.isfinite(value):
            raise NumericError(f"loss component {key} is non-finite ({value})")
        values[key] = value
    return values


def train(
    config: TrainConfig,
    manifest_path: str | Path,
    text_bank_prefix: str | Path,
    out_dir: str | Path,
) -> Path:
    """Train a model on a manifest; returns the checkpoint path.

    Writes ``train_log.jsonl`` (one JSON object per optimizer step with every
    loss component) and ``checkpoint.pt`` into out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank = load_text_bank_prefix(text_bank_prefix)
    records, clips = _load_corpus(manifest_path, bank)

    torch.manual_seed(config.seed)
    model = build_model(
        bank.dim,
        bank.num_anomaly_categories,
        fuse_text_bank(bank),
        config,
    )
    params = dict(model.named_parameters())
    state = AdamWState.initialize(params)
    rng = np.random.default_rng(config.seed)

    log_path = out_dir / "train_log.jsonl"
    step_index = 0
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(1, config.epochs + 1):
            aux_active = epoch > config.acc_warmup_epochs
            order = rng.permutation(len(records))
            for lo in range(0, len(records), config.batch_size):
                batch = [records[i] for i in order[lo : lo + config.batch_size]]
                prepared = []
                for record in batch:
                    raw = clips[record.video_id]
                    raw = raw[subsample_indices(raw.shape[0], config.max_frames)]
                    prepared.append(
                        (
                            torch.as_tensor(raw, dtype=torch.float64),
                            record.binary_label,
                            record.category_label,
                        )
                    )
                outputs = step_losses(model, prepared, config, aux_active)
                logged = _check_losses_finite(outputs.losses)

                model.zero_grad(set_to_none=True)
                outputs.losses["l_all"].backward()
                grads = {name: p.grad for name, p in params.items()}
                adamw_step(
                    params, grads, state, config.learning_rate, config.weight_decay
                )
                with torch.no_grad():
                    model.intention.prototypes.copy_(
                        update_prototypes(
                            model.intention.prototypes,
                            outputs.intention_pool,
                            outputs.intention_scores_pool,
                            config.prototype_threshold,
                            config.prototype_momentum,
                        )
                    )
                log.write(
                    json.dumps(
                        {"epoch": epoch, "step": step_index, **logged},
                        sort_keys=True,
                    )
                    + "\n"
                )
                step_index += 1

    checkpoint_path = out_dir / "checkpoint.pt"
    save_checkpoint(checkpoint_path, model, state, config.epochs, config)
    return checkpoint_path


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict_video(
    model: LasVad, features: np.ndarray, config: TrainConfig
) -> tuple[np.ndarray, list[AnomalyInstance]]:
    """Coarse scores and final instances for one full-length video."""
    with torch.no_grad():
        out = model.forward_video(torch.as_tensor(features, dtype=torch.float64))
        fused = out.fused.numpy()
        binary = out.binary.numpy()
        pooled = video_scores(out.fused).numpy()
    coarse = coarse_scores(fused, binary)
    instances = extract_instances(
        pooled, fused, config.video_threshold, config.frame_threshold
    )
    instances = score_instances(instances, fused)
    return coarse, nms(instances, config.nms_iou)


def infer(
    checkpoint_path: str | Path,
    manifest_path: str | Path,
    out_path: str | Path,
    components_path: str | Path | None = None,
) -> Path:
    """Write one predictions line per manifest video, in manifest order."""
    model, _, _, config = load_checkpoint(checkpoint_path)
    model.eval()
    records, clips = _load_corpus(manifest_path)
    for record in records:
        if clips[record.video_id].shape[1] != model.dim:
            raise ConfigurationError(
                f"{record.video_id}: feature dim {clips[record.video_id].shape[1]} "
                f"!= model dim {model.dim}"
            )
    out_path = Path(out_path)
    if components_path is not None:
        Path(components_path).write_text("")
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            features = clips[record.video_id]
            coarse, instances = predict_video(model, features, config)
            if components_path is not None:
                with torch.no_grad():
                    out = model.forward_video(
                        torch.as_tensor(features, dtype=torch.float64)
                    )
                dump_components(
                    Path(components_path),
                    record.video_id,
                    build_component_set(
                        out.features.numpy(),
                        out.fused.numpy(),
                        out.align.numpy(),
                        config.rectify_strength,
                        config.graph_threshold,
                    ),
                )
            fh.write(
                json.dumps(
                    {
                        "video_id": record.video_id,
                        "coarse": [float(v) for v in coarse],
                        "instances": [
                            [i.start, i.end, i.category, float(i.confidence)]
                            for i in instances
                        ],
                    }
                )
                + "\n"
            )
    return out_path


def read_predictions(
    path: str | Path,
) -> dict[str, tuple[np.ndarray, list[AnomalyInstance]]]:
    predictions = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                coarse = np.asarray(obj["coarse"], dtype=np.float64)
                instances = [
                    AnomalyInstance(int(s), int(e), int(c), float(u))
                    for s, e, c, u in obj["instances"]
                ]
                predictions[str(obj["video_id"])] = (coarse, instances)
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: bad predictions ({exc})")
    return predictions


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _ground_truth(
    records: list[VideoRecord], clips: dict[str, np.ndarray]
) -> tuple[dict[str, np.ndarray], dict[str, list[AnomalyInstance]]]:
    """Frame labels (1 inside any instance) and instance lists per video."""
    frame_labels = {}
    instances = {}
    for record in records:
        t = clips[record.video_id].shape[0]
        labels = np.zeros(t, dtype=np.int64)
        gt = []
        for start, end, category in record.instances:
            if end >= t:
                raise ValidationError(
                    f"{record.video_id}: instance ({start}, {end}) exceeds {t} frames"
                )
            labels[start : end + 1] = 1
            gt.append(AnomalyInstance(start, end, category))
        frame_labels[record.video_id] = labels
        instances[record.video_id] = gt
    return frame_labels, instances


def evaluate(
    predictions_path: str | Path,
    manifest_path: str | Path,
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
) -> EvalReport:
    """Score a predictions file against the manifest's ground truth."""
    records, clips = _load_corpus(manifest_path)
    predictions = read_predictions(predictions_path)
    missing = [r.video_id for r in records if r.video_id not in predictions]
    if missing:
        raise ValidationError(f"predictions missing videos: {', '.join(missing)}")
    frame_labels, gt_instances = _ground_truth(records, clips)
    scores = []
    labels = []
    pred_instances = {}
    for record in records:
        coarse, instances = predictions[record.video_id]
        t = clips[record.video_id].shape[0]
        if coarse.shape[0] != t:
            raise ValidationError(
                f"{record.video_id}: coarse length {coarse.shape[0]} != {t} frames"
            )
        scores.append(coarse)
        labels.append(frame_labels[record.video_id])
        pred_instances[record.video_id] = instances
    return build_report(
        np.concatenate(scores),
        np.concatenate(labels),
        pred_instances,
        gt_instances,
        thresholds,
    )


def write_curves(
    predictions_path: str | Path, manifest_path: str | Path, out_dir: str | Path
) -> list[Path]:
    """One CSV per video: frame index, coarse score, ground-truth label."""
    records, clips = _load_corpus(manifest_path)
    predictions = read_predictions(predictions_path)
    missing = [r.video_id for r in records if r.video_id not in predictions]
    if missing:
        raise ValidationError(f"predictions missing videos: {', '.join(missing)}")
    frame_labels, _ = _ground_truth(records, clips)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in records:
        coarse, _ = predictions[record.video_id]
        labels = frame_labels[record.video_id]
        if coarse.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"{record.video_id}: coarse length {coarse.shape[0]} != "
                f"{labels.shape[0]} frames"
            )
        path = out_dir / f"{record.video_id}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("frame,score,label\n")
            for i, (score, label) in enumerate(zip(coarse, labels)):
                fh.write(f"{i},{float(score)},{int(label)}\n")
        written.append(path)
    return written
