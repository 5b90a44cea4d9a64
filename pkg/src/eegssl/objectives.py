"""Pre-training objectives: cosine reconstruction, band-power L1, combination.

Both terms share one code path; the vanilla variant is just lambda = 0, so
comparisons between the two objectives are structural rather than accidental.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateInputError, ShapeError

DEFAULT_LAMBDA = 5.0
_NORM_EPS = 1e-8


@dataclass(frozen=True)
class LossReport:
    """Float snapshot of one loss evaluation; combined = cos + lam * knowledge."""

    cos_sim_loss: float
    knowledge_loss: float
    combined: float
    lam: float


def cosine_reconstruction_loss(x_input: torch.Tensor, x_recon: torch.Tensor) -> torch.Tensor:
    """1 minus the mean per-channel cosine similarity, in [0, 2].

    x_input channels must have nonzero norm; pre-training data is
    standardized, so a zero channel here means an upstream bug.
    """
    if x_input.shape != x_recon.shape:
        raise ShapeError(f"shape mismatch: {tuple(x_input.shape)} vs {tuple(x_recon.shape)}")
    input_norm = torch.linalg.vector_norm(x_input, dim=-1)
    if torch.any(input_norm == 0):
        raise DegenerateInputError("x_input contains a zero-norm channel")
    recon_norm = torch.linalg.vector_norm(x_recon, dim=-1).clamp_min(_NORM_EPS)
    cos = (x_input * x_recon).sum(-1) / (input_norm * recon_norm)
    return 1.0 - cos.mean()


def knowledge_loss(p_gt: torch.Tensor, p_est: torch.Tensor) -> torch.Tensor:
    """L1 distance summed over channels/bands/windows, averaged over the batch."""
    if p_gt.shape != p_est.shape:
        raise ShapeError(f"shape mismatch: {tuple(p_gt.shape)} vs {tuple(p_est.shape)}")
    per_item = (p_gt - p_est).abs().flatten(start_dim=1).sum(dim=1)
    return per_item.mean()


def combined_loss(
    x_input: torch.Tensor,
    x_recon: torch.Tensor,
    p_gt: torch.Tensor,
    p_est: torch.Tensor,
    lam: float = DEFAULT_LAMBDA,
) -> tuple[torch.Tensor, LossReport]:
    """Differentiable total loss plus its float report.

    With lam = 0 the knowledge term is still evaluated and reported, but
    contributes exactly zero gradient.
    """
    cos_term = cosine_reconstruction_loss(x_input, x_recon)
    knowledge_term = knowledge_loss(p_gt, p_est)
    total = cos_term + lam * knowledge_term
    cos_f, knowledge_f = float(cos_term.detach()), float(knowledge_term.detach())
    return total, LossReport(cos_f, knowledge_f, cos_f + lam * knowledge_f, lam)
