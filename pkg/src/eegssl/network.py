"""Backbone assembly: conv encoder, temporal block, decoder, projector, head.

Geometry is rigid by construction: with stride-2 convolutions and odd
kernels the encoder maps n_timesteps to n_timesteps / 2^6 positions exactly,
and the decoder mirrors the same shapes back. The default configuration
takes [B, 19, 15360] to embeddings [B, 512, 240], reconstructions
[B, 19, 15360] and band-power estimates [B, 19, 5, 15].
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import ParameterError, ShapeError
from .ssm import ChannelLayerNorm, S4Block, S4BlockConfig

CHECKPOINT_FORMAT_VERSION = 1

#: (out_channels, kernel, stride) per encoder module
DEFAULT_ENCODER = ((64, 7, 2), (128, 5, 2), (256, 5, 2), (512, 3, 2), (512, 3, 2), (512, 3, 2))


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 19
    n_timesteps: int = 15360
    encoder: tuple[tuple[int, int, int], ...] = DEFAULT_ENCODER
    d_model: int = 512
    n_s4_layers: int = 8
    d_state: int = 64
    dropout: float = 0.3
    pool_group: int = 16
    n_bands: int = 5
    head_hidden: int = 256

    def __post_init__(self):
        stride_product = math.prod(s for _, _, s in self.encoder)
        if self.n_timesteps % stride_product != 0:
            raise ParameterError(
                f"n_timesteps {self.n_timesteps} not divisible by stride product {stride_product}"
            )
        if any(k % 2 == 0 for _, k, _ in self.encoder):
            raise ParameterError("kernel sizes must be odd so the decoder mirrors them exactly")
        if self.encoder[-1][0] != self.d_model:
            raise ParameterError("last encoder width must equal d_model")
        if self.n_embeddings % self.pool_group != 0:
            raise ParameterError(
                f"{self.n_embeddings} embeddings not divisible by pool group {self.pool_group}"
            )

    @property
    def n_embeddings(self) -> int:
        return self.n_timesteps // math.prod(s for _, _, s in self.encoder)

    @property
    def n_windows(self) -> int:
        return self.n_embeddings // self.pool_group

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["encoder"] = tuple(tuple(m) for m in raw["encoder"])
        return cls(**raw)


def _conv_module(in_ch: int, out_ch: int, kernel: int, stride: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv1d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2),
        nn.Dropout(dropout),
        ChannelLayerNorm(out_ch),
        nn.GELU(),
    )


def _deconv_module(in_ch: int, out_ch: int, kernel: int, stride: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose1d(
            in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, output_padding=stride - 1
        ),
        nn.Dropout(dropout),
        ChannelLayerNorm(out_ch),
        nn.GELU(),
    )


class ConvEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        modules, in_ch = [], config.n_channels
        for out_ch, kernel, stride in config.encoder:
            modules.append(_conv_module(in_ch, out_ch, kernel, stride, config.dropout))
            in_ch = out_ch
        self.blocks = nn.Sequential(*modules)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 3 or x.shape[1:] != (cfg.n_channels, cfg.n_timesteps):
            raise ShapeError(
                f"expected [batch, {cfg.n_channels}, {cfg.n_timesteps}], got {tuple(x.shape)}"
            )
        return self.blocks(x)


class ConvDecoder(nn.Module):
    """Transpose-convolution mirror of the encoder, back to signal shape."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = [config.n_channels] + [out for out, _, _ in config.encoder]
        modules = []
        for i in reversed(range(len(config.encoder))):
            _, kernel, stride = config.encoder[i]
            modules.append(_deconv_module(widths[i + 1], widths[i], kernel, stride, config.dropout))
        self.blocks = nn.Sequential(*modules)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if e.dim() != 3 or e.shape[1:] != (cfg.d_model, cfg.n_embeddings):
            raise ShapeError(
                f"expected [batch, {cfg.d_model}, {cfg.n_embeddings}], got {tuple(e.shape)}"
            )
        return self.blocks(e)


class TemporalBlock(nn.Module):
    """Pointwise linear followed by the S4 stack; shape-preserving."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.input_linear = nn.Conv1d(config.d_model, config.d_model, kernel_size=1)
        self.s4 = S4Block(
            S4BlockConfig(
                n_layers=config.n_s4_layers,
                d_model=config.d_model,
                d_state=config.d_state,
                dropout=config.dropout,
            )
        )

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if c.dim() != 3 or c.shape[1] != cfg.d_model:
            raise ShapeError(f"expected [batch, {cfg.d_model}, length], got {tuple(c.shape)}")
        return self.s4(self.input_linear(c))


class BandPowerProjector(nn.Module):
    """Mean-pool embeddings in groups, then a shared linear map to band powers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.linear = nn.Linear(config.d_model, config.n_channels * config.n_bands)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if e.dim() != 3 or e.shape[1:] != (cfg.d_model, cfg.n_embeddings):
            raise ShapeError(
                f"expected [batch, {cfg.d_model}, {cfg.n_embeddings}], got {tuple(e.shape)}"
            )
        batch = e.shape[0]
        pooled = e.reshape(batch, cfg.d_model, cfg.n_windows, cfg.pool_group).mean(-1)
        out = self.linear(pooled.transpose(1, 2))  # [B, n_windows, C * n_bands]
        out = out.view(batch, cfg.n_windows, cfg.n_channels, cfg.n_bands)
        return out.permute(0, 2, 3, 1)  # [B, C, n_bands, n_windows]


class ClassificationHead(nn.Module):
    """Mean over embeddings, then 1 or 2 fully connected layers to logits."""

    def __init__(self, config: ModelConfig, n_classes: int, n_fc: int = 1):
        super().__init__()
        if n_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {n_classes}")
        if n_fc not in (1, 2):
            raise ParameterError(f"n_fc must be 1 or 2, got {n_fc}")
        self.n_classes = n_classes
        self.n_fc = n_fc
        if n_fc == 1:
            self.fc = nn.Linear(config.d_model, n_classes)
        else:
            self.fc = nn.Sequential(
                nn.Linear(config.d_model, config.head_hidden),
                nn.GELU(),
                nn.Linear(config.head_hidden, n_classes),
            )

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.fc(e.mean(dim=-1))


class PretrainOutputs(NamedTuple):
    conv_embeddings: torch.Tensor
    embeddings: torch.Tensor
    recon: torch.Tensor
    bandpower_est: torch.Tensor


class EEGModel(nn.Module):
    """Encoder + temporal block, with optional decoder/projector/head."""

    def __init__(
        self,
        config: ModelConfig,
        with_decoder: bool = True,
        with_projector: bool = True,
        n_classes: int | None = None,
        n_fc: int = 1,
    ):
        super().__init__()
        self.config = config
        self.encoder = ConvEncoder(config)
        self.temporal = TemporalBlock(config)
        self.decoder = ConvDecoder(config) if with_decoder else None
        self.projector = BandPowerProjector(config) if with_projector else None
        self.head = ClassificationHead(config, n_classes, n_fc) if n_classes else None

    @property
    def flags(self) -> dict:
        return {
            "with_decoder": self.decoder is not None,
            "with_projector": self.projector is not None,
            "n_classes": self.head.n_classes if self.head is not None else None,
            "n_fc": self.head.n_fc if self.head is not None else 1,
        }

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def embed(self, c: torch.Tensor) -> torch.Tensor:
        return self.temporal(c)

    def decode(self, e: torch.Tensor) -> torch.Tensor:
        if self.decoder is None:
            raise ParameterError("model was built without a decoder")
        return self.decoder(e)

    def project_bandpower(self, e: torch.Tensor) -> torch.Tensor:
        if self.projector is None:
            raise ParameterError("model was built without a projector")
        return self.projector(e)

    def classify(self, e: torch.Tensor) -> torch.Tensor:
        if self.head is None:
            raise ParameterError("model was built without a classification head")
        return self.head(e)

    def forward(self, x: torch.Tensor) -> PretrainOutputs:
        c = self.encode(x)
        e = self.embed(c)
        return PretrainOutputs(c, e, self.decode(e), self.project_bandpower(e))


def build_model(
    config: ModelConfig,
    seed: int = 0,
    with_decoder: bool = True,
    with_projector: bool = True,
    n_classes: int | None = None,
    n_fc: int = 1,
) -> EEGModel:
    """Construct with a private RNG stream so equal seeds give equal weights."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return EEGModel(config, with_decoder, with_projector, n_classes, n_fc)


def count_parameters(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def parameter_breakdown(model: nn.Module, trainable_only: bool = False) -> dict[str, int]:
    """Parameter count per direct submodule (plus any direct parameters)."""
    out = {name: count_parameters(child, trainable_only) for name, child in model.named_children()}
    direct = sum(p.numel() for p in model.parameters(recurse=False))
    if direct:
        out["(direct)"] = direct
    return {name: n for name, n in out.items() if n > 0}


@dataclass
class Checkpoint:
    """Serializable training snapshot; config travels as structured text."""

    model_config: ModelConfig
    model_state: dict
    flags: dict
    optimizer_state: dict | None = None
    iteration: int = 0
    seed: int = 0
    train_config: dict | None = None
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format_version": self.format_version,
                "model_config_json": self.model_config.to_json(),
                "model_state": self.model_state,
                "flags": dict(self.flags),
                "optimizer_state": self.optimizer_state,
                "iteration": self.iteration,
                "seed": self.seed,
                "train_config": self.train_config,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        payload = torch.load(path, weights_only=True)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ParameterError(
                f"checkpoint format version {version} not supported (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        return cls(
            model_config=ModelConfig.from_json(payload["model_config_json"]),
            model_state=payload["model_state"],
            flags=payload["flags"],
            optimizer_state=payload["optimizer_state"],
            iteration=payload["iteration"],
            seed=payload["seed"],
            train_config=payload["train_config"],
        )


def checkpoint_from_model(
    model: EEGModel,
    optimizer: torch.optim.Optimizer | None = None,
    iteration: int = 0,
    seed: int = 0,
    train_config: dict | None = None,
) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        flags=model.flags,
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        iteration=iteration,
        seed=seed,
        train_config=train_config,
    )


def model_from_checkpoint(
    ckpt: Checkpoint,
    seed: int | None = None,
    with_decoder: bool | None = None,
    with_projector: bool | None = None,
    n_classes: int | None = None,
    n_fc: int | None = None,
) -> EEGModel:
    """Rebuild a model from a checkpoint, optionally changing its parts.

    Dropping the decoder/projector or attaching a fresh head is allowed;
    any other weight mismatch is an error.
    """
    flags = ckpt.flags
    model = build_model(
        ckpt.model_config,
        seed=ckpt.seed if seed is None else seed,
        with_decoder=flags["with_decoder"] if with_decoder is None else with_decoder,
        with_projector=flags["with_projector"] if with_projector is None else with_projector,
        n_classes=flags["n_classes"] if n_classes is None else n_classes,
        n_fc=flags["n_fc"] if n_fc is None else n_fc,
    )
    missing, unexpected = model.load_state_dict(ckpt.model_state, strict=False)
    bad_missing = [k for k in missing if not k.startswith("head.")]
    bad_unexpected = [
        k for k in unexpected if not (k.startswith("decoder.") or k.startswith("projector.") or k.startswith("head."))
    ]
    if bad_missing or bad_unexpected:
        raise ParameterError(
            f"checkpoint does not match model: missing {bad_missing}, unexpected {bad_unexpected}"
        )
    return model
