"""Shared fixtures-in-code for the test suite: tiny model configs and a
central-finite-difference gradient checker independent of autograd."""

from __future__ import annotations

import numpy as np
import torch

from eegssl.network import ModelConfig

# smallest geometry the projector supports: 2^6 downsampling, 16 embeddings,
# one pooled window of 1024 samples
TINY_CONFIG = ModelConfig(
    n_channels=2,
    n_timesteps=1024,
    encoder=((4, 7, 2), (4, 5, 2), (8, 5, 2), (8, 3, 2), (8, 3, 2), (8, 3, 2)),
    d_model=8,
    n_s4_layers=2,
    d_state=4,
    dropout=0.0,
)

# mid-size config for desk-scale end-to-end runs on canonical chunks
DESK_CONFIG = ModelConfig(
    n_channels=19,
    n_timesteps=15360,
    encoder=((8, 7, 2), (16, 5, 2), (32, 5, 2), (64, 3, 2), (64, 3, 2), (64, 3, 2)),
    d_model=64,
    n_s4_layers=2,
    d_state=16,
    dropout=0.1,
)


def finite_difference_max_rel_error(
    loss_fn,
    parameters: list[tuple[str, torch.nn.Parameter]],
    indices_per_tensor: int = 6,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    loss_fn() must rebuild the forward pass from the current parameter values
    and return a scalar. Parameters are perturbed in place, double precision
    assumed. A fixed-seed sample of entries per tensor keeps the cost linear.
    """
    for _, p in parameters:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, param in parameters:
        assert param.grad is not None
        flat = param.detach().reshape(-1)
        grad = param.grad.detach().reshape(-1)
        n = flat.numel()
        picks = rng.choice(n, size=min(indices_per_tensor, n), replace=False)
        for i in picks:
            step = h * max(1.0, float(flat[i].abs()))
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + step
                loss_plus = float(loss_fn())
                flat[i] = original - step
                loss_minus = float(loss_fn())
                flat[i] = original
            fd = (loss_plus - loss_minus) / (2.0 * step)
            an = float(grad[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    return worst
