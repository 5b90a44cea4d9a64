"""Diagonal state-space sequence layer (long-convolution form).

Each feature channel owns an independent linear system with diagonal
complex state. Continuous parameters (A, B, C, D, dt) are discretized by
zero-order hold, giving the convolution kernel

    K[l] = Re( sum_n C_n * exp(dt * A_n)^l * B_n * (exp(dt * A_n) - 1) / A_n )

applied causally via FFT, plus the instantaneous skip D * u. A slow
step-by-step recurrence (`reference_scan`) realizes the same map and serves
as the numerical oracle for the FFT path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class S4BlockConfig:
    n_layers: int = 8
    d_model: int = 512
    d_state: int = 64
    dropout: float = 0.3

    def __post_init__(self):
        if self.n_layers < 1 or self.d_model < 1:
            raise ParameterError("n_layers and d_model must be >= 1")
        if self.d_state % 2 != 0:
            raise ParameterError(f"state size must be even, got {self.d_state}")


class DiagonalSSM(nn.Module):
    """One SSM per feature channel; parameters [d_model, d_state].

    Stability is structural: Re(A) = -exp(rho) stays negative under any
    update of the raw parameter rho. Stored modes come in conjugate pairs at
    init, which makes the kernel real up to rounding; the explicit Re() in
    the kernel keeps it exactly real as training breaks the pairing.
    """

    def __init__(
        self,
        d_model: int,
        d_state: int = 64,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
        seed: int | None = None,
    ):
        super().__init__()
        if d_state % 2 != 0:
            raise ParameterError(f"state size must be even, got {d_state}")
        self.d_model = d_model
        self.d_state = d_state
        gen = None
        if seed is not None:
            gen = torch.Generator()
            gen.manual_seed(seed)

        half = torch.arange(d_state // 2, dtype=torch.float32)
        a_imag_half = math.pi * half
        self.log_neg_a_real = nn.Parameter(
            torch.full((d_model, d_state), math.log(0.5))
        )
        self.a_imag = nn.Parameter(
            torch.cat([a_imag_half, -a_imag_half]).expand(d_model, d_state).clone()
        )
        b = torch.zeros(d_model, d_state, 2)
        b[..., 0] = 1.0
        self.b = nn.Parameter(b)
        c_half = torch.randn(d_model, d_state // 2, 2, generator=gen)
        c_conj = c_half.clone()
        c_conj[..., 1] *= -1.0
        self.c = nn.Parameter(torch.cat([c_half, c_conj], dim=1))
        self.d = nn.Parameter(torch.randn(d_model, generator=gen))
        self.log_dt = nn.Parameter(
            torch.rand(d_model, generator=gen) * (math.log(dt_max) - math.log(dt_min))
            + math.log(dt_min)
        )

    @classmethod
    def from_modes(
        cls,
        a: torch.Tensor,
        b: torch.Tensor,
        c: torch.Tensor,
        d: torch.Tensor,
        dt: torch.Tensor,
    ) -> "DiagonalSSM":
        """Build a layer from explicit complex modes a, b, c [H, N], skip d [H]
        and timescale dt [H]. Used for hand-computed oracles."""
        a, b, c = (torch.as_tensor(t, dtype=torch.complex128) for t in (a, b, c))
        d = torch.as_tensor(d, dtype=torch.float64)
        dt = torch.as_tensor(dt, dtype=torch.float64)
        if torch.any(a.real >= 0):
            raise ParameterError("all modes must have Re(a) < 0")
        layer = cls.__new__(cls)
        nn.Module.__init__(layer)
        layer.d_model, layer.d_state = a.shape
        layer.log_neg_a_real = nn.Parameter(torch.log(-a.real))
        layer.a_imag = nn.Parameter(a.imag.clone())
        layer.b = nn.Parameter(torch.view_as_real(b.clone()))
        layer.c = nn.Parameter(torch.view_as_real(c.clone()))
        layer.d = nn.Parameter(d.clone())
        layer.log_dt = nn.Parameter(torch.log(dt.clone()))
        return layer

    def _discretize(self):
        """Materialize (pole, dt*A, b_bar, c): the discrete-time system."""
        a = -torch.exp(self.log_neg_a_real) + 1j * self.a_imag
        dt_a = torch.exp(self.log_dt)[:, None] * a
        pole = torch.exp(dt_a)
        b = torch.view_as_complex(self.b.contiguous())
        c = torch.view_as_complex(self.c.contiguous())
        b_bar = (pole - 1.0) / a * b
        return pole, dt_a, b_bar, c

    def kernel(self, length: int) -> torch.Tensor:
        """Convolution kernel [d_model, length] (skip term D excluded)."""
        if length < 1:
            raise ParameterError(f"kernel length must be >= 1, got {length}")
        _, dt_a, b_bar, c = self._discretize()
        steps = torch.arange(length, dtype=dt_a.real.dtype)
        powers = torch.exp(dt_a.unsqueeze(-1) * steps)  # [H, N, L]
        # explicit sum keeps the reduction order independent of L, so a short
        # kernel is exactly the prefix of a longer one
        return ((c * b_bar).unsqueeze(-1) * powers).sum(dim=1).real

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """Causal convolution with the kernel plus D * u; u is [B, H, L]."""
        if u.dim() != 3 or u.shape[1] != self.d_model:
            raise ShapeError(f"expected [batch, {self.d_model}, length], got {tuple(u.shape)}")
        length = u.shape[-1]
        k = self.kernel(length)
        n_fft = 2 * length
        y = torch.fft.irfft(
            torch.fft.rfft(u, n=n_fft) * torch.fft.rfft(k, n=n_fft), n=n_fft
        )[..., :length]
        return y + self.d[:, None] * u


def init_ssm(d_model: int, d_state: int = 64, seed: int = 0) -> DiagonalSSM:
    """Freshly initialized layer; equal seeds give equal parameters."""
    return DiagonalSSM(d_model, d_state, seed=seed)


@torch.no_grad()
def reference_scan(ssm: DiagonalSSM, u: torch.Tensor) -> torch.Tensor:
    """Step-by-step recurrence equivalent of `ssm(u)`, O(L * N) per channel.

    The state absorbs u_l before being read, so an impulse produces the
    kernel instantly: y = [K[0] + D, K[1], ...] for u = [1, 0, ...].
    """
    pole, _, b_bar, c = ssm._discretize()
    batch, _, length = u.shape
    uc = u.to(pole.dtype)
    x = torch.zeros(batch, ssm.d_model, ssm.d_state, dtype=pole.dtype)
    ys = []
    for l in range(length):
        x = pole * x + b_bar * uc[..., l, None]
        ys.append((c * x).sum(-1).real + ssm.d * u[..., l])
    return torch.stack(ys, dim=-1)


class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis, independently at each position."""

    def __init__(self, d_model: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class S4Module(nn.Module):
    """SSM -> GLU -> dropout -> residual add -> layer norm."""

    def __init__(self, d_model: int, d_state: int, dropout: float):
        super().__init__()
        self.ssm = DiagonalSSM(d_model, d_state)
        self.glu_proj = nn.Conv1d(d_model, 2 * d_model, kernel_size=1)
        self.dropout = nn.Dropout(dropout)
        self.norm = ChannelLayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ssm(x)
        h = F.glu(self.glu_proj(h), dim=1)
        h = self.dropout(h)
        return self.norm(x + h)


class S4Block(nn.Module):
    """Stack of S4 modules; shape-preserving on [B, d_model, L]."""

    def __init__(self, config: S4BlockConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(
            S4Module(config.d_model, config.d_state, config.dropout)
            for _ in range(config.n_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.d_model:
            raise ShapeError(
                f"expected [batch, {self.config.d_model}, length], got {tuple(x.shape)}"
            )
        for layer in self.layers:
            x = layer(x)
        return x
