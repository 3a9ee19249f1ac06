"""Downstream child/adult classifier heads.

Both heads end in a self-attention projector and a two-layer output block
that emits one logit per segment (positive = child).

    >>> head = build_head(HeadConfig(kind="cnn"))
    >>> logits = head(layer_stack)   # (batch, n_layers, frames, dim) -> (batch,)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal, Sequence

import mpmath
import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .encoder import layer_weighted_sum

DROPOUT = 0.3


@dataclass(frozen=True)
class HeadConfig:
    kind: Literal["rnn", "cnn"] = "rnn"
    input_dim: int = 64
    n_layers: int = 4
    hidden_dim: int = 128
    dropout: float = DROPOUT
    conv_channels: tuple[int, int, int] = (128, 128, 128)
    conv_kernels: tuple[int, int, int] = (5, 5, 5)

    def __post_init__(self):
        if self.kind not in ("rnn", "cnn"):
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.dropout != DROPOUT:
            raise ValueError(f"dropout is fixed at {DROPOUT}")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "conv_kernels", tuple(self.conv_kernels))
        if len(self.conv_channels) != 3 or len(self.conv_kernels) != 3:
            raise ValueError("the CNN head has exactly three conv layers")

    @property
    def min_frames(self) -> int:
        if self.kind == "rnn":
            return 1
        return sum(k - 1 for k in self.conv_kernels) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["conv_kernels"] = list(self.conv_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        return cls(**d)


@dataclass(frozen=True)
class SegmentLogit:
    logit: float
    probability: float
    label: Literal["child", "adult"]

    @classmethod
    def from_logit(cls, logit: float) -> "SegmentLogit":
        prob = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))
        return cls(float(logit), prob, "child" if prob > 0.5 else "adult")


class AttentionProjector(nn.Module):
    """Single-head scaled dot-product self-attention, then mean over frames."""

    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] == 0:
            raise ValueError("attention projector needs at least one frame")
        scores = self.q(x) @ self.k(x).transpose(-1, -2) / math.sqrt(x.shape[-1])
        return (torch.softmax(scores, dim=-1) @ self.v(x)).mean(dim=-2)


class _Head(nn.Module):
    def __init__(self, config: HeadConfig):
        super().__init__()
        self.config = config
        self.drop = nn.Dropout(config.dropout)

    def _check(self, x: torch.Tensor) -> None:
        c = self.config
        if x.ndim != 4:
            raise ValueError(f"expected a layer stack (batch, layers, frames, dim), got shape {tuple(x.shape)}")
        if x.shape[-1] != c.input_dim:
            raise ValueError(f"feature width {x.shape[-1]} does not match head input_dim {c.input_dim}")
        if x.shape[-2] < c.min_frames:
            raise ValueError(f"{c.kind} head needs at least {c.min_frames} frames, got {x.shape[-2]}")


class RNNHead(_Head):
    """FFL -> biLSTM -> attention projector -> FFL -> ReLU -> FFL on the final encoder layer."""

    def __init__(self, config: HeadConfig):
        super().__init__(config)
        h = config.hidden_dim
        self.inp = nn.Linear(config.input_dim, h)
        self.lstm = nn.LSTM(h, h, batch_first=True, bidirectional=True)
        self.project = AttentionProjector(2 * h)
        self.fc1 = nn.Linear(2 * h, h)
        self.fc2 = nn.Linear(h, 1)

    def forward(self, layers: torch.Tensor) -> torch.Tensor:
        self._check(layers)
        x = self.drop(F.relu(self.inp(layers[:, -1])))
        x, _ = self.lstm(x)
        x = self.drop(self.project(self.drop(x)))
        return self.fc2(self.drop(F.relu(self.fc1(x)))).squeeze(-1)


class CNNHead(_Head):
    """Learnable layer weighting -> 3 x Conv1d -> attention projector -> FFL -> ReLU -> FFL."""

    def __init__(self, config: HeadConfig):
        super().__init__(config)
        self.layer_weights = nn.Parameter(torch.zeros(config.n_layers))
        convs = []
        in_ch = config.input_dim
        for ch, k in zip(config.conv_channels, config.conv_kernels):
            convs.append(nn.Conv1d(in_ch, ch, k))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        self.project = AttentionProjector(in_ch)
        self.fc1 = nn.Linear(in_ch, config.hidden_dim)
        self.fc2 = nn.Linear(config.hidden_dim, 1)

    def forward(self, layers: torch.Tensor) -> torch.Tensor:
        self._check(layers)
        if layers.shape[1] != self.config.n_layers:
            raise ValueError(f"expected {self.config.n_layers} encoder layers, got {layers.shape[1]}")
        x = layer_weighted_sum(layers.unbind(1), self.layer_weights).transpose(1, 2)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = self.drop(F.relu(x))
        x = self.drop(self.project(x.transpose(1, 2)))
        return self.fc2(self.drop(F.relu(self.fc1(x)))).squeeze(-1)


def build_head(config: HeadConfig) -> _Head:
    return RNNHead(config) if config.kind == "rnn" else CNNHead(config)


def classify(head: nn.Module, layers: torch.Tensor) -> list[SegmentLogit]:
    """Inference-mode decisions for a batch of layer stacks."""
    was_training = head.training
    head.eval()
    try:
        with torch.no_grad():
            logits = head(layers)
    finally:
        head.train(was_training)
    return [SegmentLogit.from_logit(float(v)) for v in logits.reshape(-1)]


def bce_loss(logits, labels) -> torch.Tensor:
    """Mean binary cross-entropy in the stable logit form."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=logits.dtype)
    if logits.shape != labels.shape or logits.numel() == 0:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} must match and be non-empty")
    return F.binary_cross_entropy_with_logits(logits, labels)


def bce_oracle(logits: Sequence[float], labels: Sequence[int], dps: int = 40) -> float:
    """Loop evaluation of the mean BCE directly from the sigmoid."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if logits.shape != labels.shape or logits.size == 0:
        raise ValueError("logits and labels must match and be non-empty")
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for l, y in zip(logits, labels):
            s = 1 / (1 + mpmath.exp(-mpmath.mpf(float(l))))
            total -= y * mpmath.log(s) + (1 - y) * mpmath.log(1 - s)
        return float(total / len(logits))
