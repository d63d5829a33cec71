"""Contrastive and pseudo-label losses.

The contrastive term is a normalised temperature-scaled cross entropy
over in-batch negatives: for anchor i with positive partner j,

    L_i = -log( exp(sim(z_i, z_j) / tau) / sum_{k != i} exp(sim(z_i, z_k) / tau) )

averaged over all 2N anchors (both directions of every pair). sim is the
cosine similarity; embeddings arrive unit-normalised, similarities are
clipped to [-1, 1] and the log-sum-exp is computed with max subtraction.

The two pseudo-label terms are plain softmax cross entropies over the ROI
and stride targets of all 2N views. The combined objective is their
unweighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

NORM_TOLERANCE = 1e-5


@dataclass
class EmbeddingBatch:
    """2N projected views ordered so rows (2k, 2k+1) are video k's pair."""

    z: torch.Tensor
    tau: float

    def __post_init__(self):
        if self.z.dim() != 2 or self.z.shape[0] < 2 or self.z.shape[0] % 2 != 0:
            raise ValueError(f"z must be (2N, dim) with N >= 1, got {tuple(self.z.shape)}")
        if not (self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        norms = self.z.detach().double().norm(dim=1)
        worst = float((norms - 1.0).abs().max())
        if worst > NORM_TOLERANCE:
            raise ValueError(f"embeddings must be unit-norm (max |norm-1| = {worst:.2e})")

    @property
    def n_videos(self) -> int:
        return self.z.shape[0] // 2


def contrastive_loss(batch: EmbeddingBatch) -> torch.Tensor:
    """Mean per-anchor contrastive loss over all 2N anchors."""
    z = batch.z
    m = z.shape[0]
    sim = (z @ z.T).clamp(-1.0, 1.0) / batch.tau
    eye = torch.eye(m, dtype=torch.bool, device=z.device)
    sim = sim.masked_fill(eye, float("-inf"))
    # Partner of row i is i+1 for even i, i-1 for odd i.
    partner = torch.arange(m, device=z.device) ^ 1
    positive = sim[torch.arange(m, device=z.device), partner]
    return (torch.logsumexp(sim, dim=1) - positive).mean()


@dataclass
class PseudoLabelBatch:
    """Classifier logits and targets for the 2N views of a batch."""

    roi_logits: torch.Tensor
    stride_logits: torch.Tensor
    roi_targets: torch.Tensor
    stride_targets: torch.Tensor

    def __post_init__(self):
        n = self.roi_logits.shape[0]
        if self.roi_logits.dim() != 2 or self.stride_logits.dim() != 2:
            raise ValueError("logits must be 2-D (views x classes)")
        if self.stride_logits.shape[0] != n or self.roi_targets.shape != (n,) or (
            self.stride_targets.shape != (n,)
        ):
            raise ValueError("logits and targets must agree on the number of views")
        for targets, logits, name in (
            (self.roi_targets, self.roi_logits, "roi"),
            (self.stride_targets, self.stride_logits, "stride"),
        ):
            if targets.numel() and (
                int(targets.min()) < 0 or int(targets.max()) >= logits.shape[1]
            ):
                raise ValueError(f"{name} target index out of range")


def roi_ce(batch: PseudoLabelBatch) -> torch.Tensor:
    return F.cross_entropy(batch.roi_logits, batch.roi_targets)


def stride_ce(batch: PseudoLabelBatch) -> torch.Tensor:
    return F.cross_entropy(batch.stride_logits, batch.stride_targets)


def combined_loss(contrastive, roi, stride):
    """Unweighted sum of the three terms."""
    return contrastive + roi + stride
