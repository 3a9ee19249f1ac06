"""Convolutional feature encoder + pre-LN transformer backbone.

The backbone follows the wav2vec 2.0 / WavLM layout at desk scale: a stack of
strided 1-D convolutions turns raw 16 kHz audio into frame features ``z``, a
linear projection lifts them to ``model_dim`` and a stack of transformer
layers produces one contextual matrix per layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .corpus import AudioSegment

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    conv_blocks: tuple[tuple[int, int, int], ...] = ((64, 10, 5), (64, 8, 4), (64, 8, 4))
    model_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if not self.conv_blocks:
            raise ValueError("at least one conv block is required")

    @property
    def receptive_field(self) -> int:
        """Samples seen by one output frame."""
        rf, jump = 1, 1
        for _, kernel, stride in self.conv_blocks:
            rf += (kernel - 1) * jump
            jump *= stride
        return rf

    @property
    def hop(self) -> int:
        return int(np.prod([s for _, _, s in self.conv_blocks]))

    def n_frames(self, n_samples: int) -> int:
        """Valid-convolution frame count; 0 if the input is too short."""
        t = n_samples
        for _, kernel, stride in self.conv_blocks:
            if t < kernel:
                return 0
            t = (t - kernel) // stride + 1
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        return cls(**d)


# wav2vec 2.0 base: 7 conv blocks, 12 x 768-d layers
BASE_CONFIG = EncoderConfig(
    conv_blocks=((512, 10, 5),) + ((512, 3, 2),) * 4 + ((512, 2, 2),) * 2,
    model_dim=768,
    n_layers=12,
    n_heads=12,
    ffn_dim=3072,
)


def layer_param_count(model_dim: int, ffn_dim: int) -> int:
    """Parameters in one pre-LN transformer layer.

    q/k/v/out projections (4 d^2 + 4 d), feed-forward (2 d ffn + ffn + d) and
    two layer norms (4 d).
    """
    d = model_dim
    return 4 * d * d + 2 * d * ffn_dim + 9 * d + ffn_dim


@dataclass
class EncoderOutput:
    z: torch.Tensor
    layers: list[torch.Tensor] = field(default_factory=list)

    @property
    def final(self) -> torch.Tensor:
        return self.layers[-1]

    @property
    def n_frames(self) -> int:
        return self.z.shape[-2]


@dataclass(frozen=True)
class FreezePolicy:
    trainable_top_k: int


class ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride=stride)
        self.norm = nn.LayerNorm(out_ch, eps=LN_EPS)

    def forward(self, x):
        # x: (batch, channels, time); norm is per frame so windows are shift-consistent
        x = self.conv(x)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        return F.gelu(x)


class FeatureEncoder(nn.Module):
    """Raw waveform -> frame features z of width ``model_dim``."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        blocks = []
        in_ch = 1
        for ch, k, s in config.conv_blocks:
            blocks.append(ConvBlock(in_ch, ch, k, s))
            in_ch = ch
        self.blocks = nn.ModuleList(blocks)
        self.proj_norm = nn.LayerNorm(in_ch, eps=LN_EPS)
        self.proj = nn.Linear(in_ch, config.model_dim)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        x = wav.unsqueeze(1)
        for block in self.blocks:
            x = block(x)
        return self.proj(self.proj_norm(x.transpose(1, 2)))


class TransformerLayer(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.ff1 = nn.Linear(dim, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.norm1(x)

        def heads(proj):
            return proj(h).view(b, t, self.n_heads, d // self.n_heads).transpose(1, 2)

        attn = F.scaled_dot_product_attention(heads(self.q), heads(self.k), heads(self.v))
        x = x + self.out(attn.transpose(1, 2).reshape(b, t, d))
        return x + self.ff2(F.gelu(self.ff1(self.norm2(x))))


def sinusoidal_positions(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(n, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: dim // 2])
    return pe.float()


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        c = self.config
        self.feature_encoder = FeatureEncoder(c)
        self.layers = nn.ModuleList(TransformerLayer(c.model_dim, c.n_heads, c.ffn_dim) for _ in range(c.n_layers))
        self.freeze_policy = FreezePolicy(c.n_layers)

    def features(self, wav: torch.Tensor) -> torch.Tensor:
        """Batched z for waveforms shaped (batch, samples)."""
        n = wav.shape[-1]
        if self.config.n_frames(n) < 1:
            raise ValueError(
                f"waveform of {n} samples is shorter than the receptive field; "
                f"need at least {self.config.receptive_field} samples"
            )
        return self.feature_encoder(wav)

    def contextualize(self, z: torch.Tensor) -> list[torch.Tensor]:
        """Transformer layer outputs for frame features shaped (batch, T, d)."""
        x = z + sinusoidal_positions(z.shape[1], z.shape[2]).to(z)
        outs = []
        for layer in self.layers:
            x = layer(x)
            outs.append(x)
        return outs

    def forward(self, wav: torch.Tensor) -> EncoderOutput:
        z = self.features(wav)
        return EncoderOutput(z=z, layers=self.contextualize(z))


def init_encoder(seed: int, config: EncoderConfig | None = None) -> Encoder:
    """Randomly initialized backbone; the same seed always gives the same weights."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Encoder(config)


def encode(model: Encoder, waveform: AudioSegment | np.ndarray | torch.Tensor) -> EncoderOutput:
    """Inference-mode encoding of a single waveform.

    Returned tensors are unbatched: ``z`` and each layer are (T, model_dim).
    """
    samples = waveform.samples if isinstance(waveform, AudioSegment) else waveform
    wav = torch.as_tensor(np.asarray(samples), dtype=torch.float32).reshape(1, -1)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(wav)
    finally:
        model.train(was_training)
    return EncoderOutput(z=out.z[0], layers=[c[0] for c in out.layers])


def pool(frames: torch.Tensor) -> torch.Tensor:
    """Mean over the frame axis (second to last)."""
    if frames.shape[-2] == 0:
        raise ValueError("cannot pool an empty frame sequence")
    return frames.mean(dim=-2)


def set_freeze_policy(model: Encoder, k: int) -> FreezePolicy:
    """Make exactly the top-``k`` transformer layers trainable."""
    n = model.config.n_layers
    if not 0 <= k <= n:
        raise ValueError(f"trainable_top_k must be in [0, {n}], got {k}")
    for p in model.parameters():
        p.requires_grad_(False)
    for layer in model.layers[n - k:]:
        for p in layer.parameters():
            p.requires_grad_(True)
    model.freeze_policy = FreezePolicy(k)
    return model.freeze_policy


def count_trainable(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def trainable_count_for(config: EncoderConfig, k: int) -> int:
    """Trainable parameter count under FreezePolicy(k), built without allocating weights."""
    with torch.device("meta"):
        model = Encoder(config)
    set_freeze_policy(model, k)
    return count_trainable(model)


def layer_weighted_sum(output: EncoderOutput | Sequence[torch.Tensor], weights) -> torch.Tensor:
    """Softmax-weighted sum of the per-layer representations."""
    layers = output.layers if isinstance(output, EncoderOutput) else list(output)
    w = torch.as_tensor(weights)
    if w.ndim != 1 or w.shape[0] != len(layers):
        raise ValueError(f"expected {len(layers)} layer weights, got shape {tuple(w.shape)}")
    stacked = torch.stack(list(layers), dim=0)
    w = torch.softmax(w.to(stacked.dtype), dim=0)
    return torch.tensordot(w, stacked, dims=1)
