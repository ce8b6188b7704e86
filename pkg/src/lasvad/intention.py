"""Kinematic intention features, momentum prototypes, and the contrastive loss.

Frame features are projected to a low-dimensional "position" trajectory; the
gated absolute differences of that trajectory (velocity, acceleration) are
concatenated back on, and a small classifier scores each frame's intention.
Per-category prototypes track the mean intention feature of confidently
scored frames and in turn weight the scores by how prototypical each frame
looks.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import cosine_rows
from .heads import LOGIT_SCALE

# Initial scale multiplier of the position projection. The discriminative
# part of the kinematic features is a small fluctuation riding on a large
# shared offset; starting the projection large keeps that fluctuation's
# gradient contribution significant at short training budgets. Downstream
# consumers are scale-free (cosines, normalized contrastive features).
POSITION_GAIN = 8.0


def _gated_diff(conv: nn.Conv1d, trajectory: torch.Tensor) -> torch.Tensor:
    """Absolute adjacent differences, gated by a sigmoid depthwise convolution.

    A single zero row is prepended so the output keeps T rows; the gate
    multiplies that zero row by a scalar, so the first row stays zero.
    """
    diff = (trajectory[1:] - trajectory[:-1]).abs()
    diff = torch.cat([torch.zeros_like(trajectory[:1]), diff], dim=0)
    gate = torch.sigmoid(conv(diff.T.unsqueeze(0)).squeeze(0).T)
    return gate * diff


class IntentionModule(nn.Module):
    """Kinematic feature extractor, intention classifier, and prototype bank."""

    def __init__(
        self,
        dim: int,
        n_categories: int,
        hidden_dim: int | None = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if dim < 3:
            raise ValueError("feature dim must be >= 3 to carve out a position slice")
        self.dim_position = dim // 3
        self.dim_intention = 3 * self.dim_position
        # Default classifier width: 4x the intention dim. The discriminative
        # part of X_int is a small fluctuation on a large shared component, so
        # a wide random hidden layer makes it linearly recoverable sooner.
        hidden_dim = hidden_dim if hidden_dim is not None else 4 * self.dim_intention
        factory = {"dtype": dtype}
        self.position = nn.Linear(dim, self.dim_position, **factory)
        with torch.no_grad():
            self.position.weight.mul_(POSITION_GAIN)
            self.position.bias.mul_(POSITION_GAIN)
        self.velocity_gate = nn.Conv1d(
            self.dim_position,
            self.dim_position,
            kernel_size=3,
            padding=1,
            groups=self.dim_position,
            **factory,
        )
        self.acceleration_gate = nn.Conv1d(
            self.dim_position,
            self.dim_position,
            kernel_size=3,
            padding=1,
            groups=self.dim_position,
            **factory,
        )
        self.classifier = nn.Sequential(
            nn.Linear(self.dim_intention, hidden_dim, **factory),
            nn.ReLU(),
            nn.Linear(hidden_dim, n_categories + 1, **factory),
        )
        # Zero output layer: intention scores start exactly uniform, so an
        # untrained model expresses no category preference through q_a.
        nn.init.zeros_(self.classifier[2].weight)
        nn.init.zeros_(self.classifier[2].bias)
        prototypes = torch.randn(n_categories + 1, self.dim_intention, dtype=dtype)
        prototypes = prototypes / prototypes.norm(dim=-1, keepdim=True)
        self.register_buffer("prototypes", prototypes)

    def kinematic_features(self, features: torch.Tensor) -> torch.Tensor:
        """T x D frame features -> T x D_int (position | velocity | acceleration)."""
        position = self.position(features)
        velocity = _gated_diff(self.velocity_gate, position)
        acceleration = _gated_diff(self.acceleration_gate, velocity)
        return torch.cat([position, velocity, acceleration], dim=-1)

    def intention_logits(self, intention: torch.Tensor) -> torch.Tensor:
        # Same fixed logit gain as the score heads (see heads.LOGIT_SCALE):
        # scaled zero logits are still zero, so q_a starts exactly uniform.
        return LOGIT_SCALE * self.classifier(intention)

    def confidence_weight(
        self, intention: torch.Tensor, logits: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Cosine of each frame to the prototype of its argmax category.

        Returns (w: T, q_a: T x (C+1)) with q_a[t] = softmax(logits[t] * w[t]);
        frames with a zero intention vector get w = 0 (uniform q_a).
        """
        best = logits.argmax(dim=-1)
        norms = intention.norm(dim=-1, keepdim=True)
        safe = intention / norms.clamp(min=1e-12)
        weight = (cosine_rows(self.prototypes)[best] * safe).sum(dim=-1)
        weight = torch.where(norms.squeeze(-1) > 0, weight, torch.zeros_like(weight))
        return weight, torch.softmax(logits * weight.unsqueeze(-1), dim=-1)

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (X_int, w, q_a) for a T x D feature sequence."""
        intention = self.kinematic_features(features)
        logits = self.intention_logits(intention)
        weight, scores = self.confidence_weight(intention, logits)
        return intention, weight, scores


def update_prototypes(
    prototypes: torch.Tensor,
    intention: torch.Tensor,
    scores: torch.Tensor,
    threshold: float,
    momentum: float,
) -> torch.Tensor:
    """Momentum update Z[c] <- (1-beta) Z[c] + beta * mean of confident frames.

    A category with no frame scoring above the threshold keeps its prototype.
    Pure function of detached inputs; never part of the autograd graph.
    """
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    updated = prototypes.detach().clone()
    intention = intention.detach()
    scores = scores.detach()
    for c in range(prototypes.shape[0]):
        selected = scores[:, c] > threshold
        if selected.any():
            center = intention[selected].mean(dim=0)
            updated[c] = (1.0 - momentum) * updated[c] + momentum * center
    return updated


def sample_contrastive_pairs(
    intention: np.ndarray, frame_labels: np.ndarray, num_negatives: int
) -> list[tuple[int, int, list[int]]]:
    """Mine (anchor, hardest positive, hardest negatives) triples per frame.

    The positive is the same-label frame with the *lowest* cosine to the
    anchor; negatives are the up-to-M different-label frames with the
    *highest* cosine. Frames with no same-label peer or no different-label
    frame are skipped.
    """
    if intention.shape[0] != frame_labels.shape[0]:
        raise ValueError("frame_labels must align with intention rows")
    norms = np.linalg.norm(intention, axis=-1, keepdims=True)
    unit = intention / np.clip(norms, 1e-12, None)
    cosines = unit @ unit.T
    pairs: list[tuple[int, int, list[int]]] = []
    for t in range(intention.shape[0]):
        same = np.flatnonzero(frame_labels == frame_labels[t])
        same = same[same != t]
        other = np.flatnonzero(frame_labels != frame_labels[t])
        if same.size == 0 or other.size == 0:
            continue
        positive = int(same[np.argmin(cosines[t, same])])
        order = np.argsort(-cosines[t, other], kind="stable")
        negatives = [int(i) for i in other[order][:num_negatives]]
        pairs.append((t, positive, negatives))
    return pairs


def loss_cst(
    intention: torch.Tensor,
    pairs: list[tuple[int, int, list[int]]],
    temperature: float = 1.0,
) -> torch.Tensor:
    """Contrastive loss over mined pairs on L2-normalized intention features.

    Each term is -log(exp(x.pos/temp) / sum_i exp(x.neg_i/temp)); the
    denominator deliberately contains negatives only, so the loss can be
    negative. No valid pairs -> 0.
    """
    if not pairs:
        return intention.sum() * 0.0
    unit = F.normalize(intention, dim=-1, eps=1e-12)
    terms = []
    for anchor, positive, negatives in pairs:
        pos = (unit[anchor] * unit[positive]).sum() / temperature
        neg = (unit[negatives] * unit[anchor]).sum(dim=-1) / temperature
        terms.append(-(pos - torch.logsumexp(neg, dim=0)))
    return torch.stack(terms).mean()
