"""Contrastive pre-training and downstream head fine-tuning loops."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

from ..corpus import Demographics, SessionManifest, read_wav
from ..encoder import Encoder, EncoderConfig, init_encoder, pool, set_freeze_policy
from ..heads import HeadConfig, bce_loss, build_head
from ..objective import ContrastiveEmbeddings, ntxent_loss
from ..pairing import DEFAULT_SEGMENT, SegmentPairBatch, build_batch
from .metrics import macro_f1

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-5
    batch_size: int = 32
    temperature: float = 0.1
    max_epochs: int = 30
    patience: int = 5
    trainable_top_k: int = 2
    steps_per_epoch: int = 100
    val_batches: int = 4
    segment_duration: float = DEFAULT_SEGMENT
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)


@dataclass
class FinetuneConfig:
    optimizer: str = "adam"
    lr: float = 2e-4
    weight_decay: float = 1e-4
    max_epochs: int = 50
    batch_size: int = 32
    head: HeadConfig = field(default_factory=HeadConfig)
    seed: int = 0
    # stop after this many epochs without a better validation macro-F1; None runs every epoch
    patience: int | None = None


# ---------------------------------------------------------------------------
# early stopping


@dataclass(frozen=True)
class EarlyStopState:
    best_value: float = math.inf
    best_epoch: int = -1
    strikes: int = 0
    epoch: int = -1


IMPROVEMENT_TOL = 1e-8


def early_stop_update(state: EarlyStopState, value: float, patience: int = 5) -> tuple[EarlyStopState, bool]:
    """Feed one validation loss; returns the new state and whether to stop."""
    epoch = state.epoch + 1
    if value < state.best_value - IMPROVEMENT_TOL:
        new = EarlyStopState(best_value=value, best_epoch=epoch, strikes=0, epoch=epoch)
    else:
        new = replace(state, strikes=state.strikes + 1, epoch=epoch)
    return new, new.strikes >= patience


# ---------------------------------------------------------------------------
# pre-training


def session_frames(encoder: Encoder, session: SessionManifest, chunk_frames: int = 4000) -> torch.Tensor:
    """Frame features ``z`` of a whole session, shape (frames, model_dim).

    The conv front-end is valid-padded and normalized per frame, so the
    frames of any window that starts on the hop grid are a slice of this.
    """
    cfg = encoder.config
    wav, _ = read_wav(session.audio_path)
    total = cfg.n_frames(len(wav))
    out = []
    with torch.no_grad():
        for first in range(0, total, chunk_frames):
            m = min(chunk_frames, total - first)
            a = first * cfg.hop
            chunk = torch.from_numpy(wav[a:a + (m - 1) * cfg.hop + cfg.receptive_field])
            out.append(encoder.features(chunk[None])[0])
    return torch.cat(out)


class FrameCache:
    """Precomputed frozen front-end features keyed by session id."""

    def __init__(self, encoder: Encoder, sessions: Sequence[SessionManifest]):
        if any(p.requires_grad for p in encoder.feature_encoder.parameters()):
            raise ValueError("frame caching needs a frozen feature encoder")
        self.hop = encoder.config.hop
        self.frames = {s.session_id: session_frames(encoder, s) for s in sessions}

    def window(self, session_id: str, start: float, n_frames: int, sample_rate: int) -> torch.Tensor:
        offset = round(start * sample_rate)
        if offset % self.hop:
            raise ValueError(f"window start {start} s is not on the {self.hop}-sample hop grid")
        first = offset // self.hop
        return self.frames[session_id][first:first + n_frames]


def batch_embeddings(encoder: Encoder, batch: SegmentPairBatch, cache: FrameCache | None = None):
    """Pooled final-layer embeddings for anchors and positives, each (B, model_dim)."""
    if cache is None:
        wav = torch.from_numpy(np.concatenate([batch.anchors(), batch.positives()]))
        layers = encoder(wav).layers
    else:
        seg = batch.pairs[0].anchor
        t = encoder.config.n_frames(len(seg.samples))
        segs = [p.anchor for p in batch.pairs] + [p.positive for p in batch.pairs]
        z = torch.stack([cache.window(s.source_session, s.start, t, s.sample_rate) for s in segs])
        layers = encoder.contextualize(z)
    e = pool(layers[-1])
    b = len(batch)
    return e[:b], e[b:]


@dataclass
class PretrainResult:
    encoder: Encoder
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    initial_val_loss: float


def pretrain(sessions: Sequence[SessionManifest], config: PretrainConfig,
             val_sessions: Sequence[SessionManifest] | None = None,
             encoder: Encoder | None = None) -> PretrainResult:
    """Contrastive continued pre-training of the top-k transformer layers.

    Starts from ``encoder`` (default: the seed's random initialization), keeps
    the weights of the epoch with the lowest validation loss and stops once
    ``patience`` epochs pass without improvement.
    """
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    n_layers = (encoder.config if encoder is not None else config.encoder).n_layers
    if not 1 <= config.trainable_top_k <= n_layers:
        raise ValueError(f"trainable_top_k must be in [1, {n_layers}] for pre-training, got {config.trainable_top_k}")
    encoder = encoder if encoder is not None else init_encoder(config.seed, config.encoder)
    set_freeze_policy(encoder, config.trainable_top_k)
    val_sessions = list(val_sessions) if val_sessions else list(sessions)

    torch.manual_seed(config.seed)
    hop = encoder.config.hop
    cache = FrameCache(encoder, {s.session_id: s for s in [*sessions, *val_sessions]}.values())
    train_rng = np.random.default_rng([config.seed, 1])
    val_rng = np.random.default_rng([config.seed, 2])
    val_set = [build_batch(val_sessions, config.batch_size, config.segment_duration, val_rng, grid=hop)
               for _ in range(config.val_batches)]

    def loss_of(batch):
        anchors, positives = batch_embeddings(encoder, batch, cache)
        return ntxent_loss(ContrastiveEmbeddings(anchors, positives, config.temperature))

    def validate():
        encoder.eval()
        with torch.no_grad():
            return float(np.mean([loss_of(b).item() for b in val_set]))

    params = [p for p in encoder.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr)
    initial = validate()
    logger.info("pretrain: initial validation loss %.4f", initial)
    state = EarlyStopState()
    best_state = copy.deepcopy(encoder.state_dict())
    train_losses, val_losses = [], []
    for epoch in range(config.max_epochs):
        encoder.train()
        running = []
        for _ in range(config.steps_per_epoch):
            batch = build_batch(sessions, config.batch_size, config.segment_duration, train_rng, grid=hop)
            loss = loss_of(batch)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite contrastive loss at epoch {epoch}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
        train_losses.append(float(np.mean(running)))
        val_losses.append(validate())
        if not math.isfinite(val_losses[-1]):
            raise TrainingDivergence(f"non-finite validation loss at epoch {epoch}")
        state, stop = early_stop_update(state, val_losses[-1], config.patience)
        if state.best_epoch == epoch:
            best_state = copy.deepcopy(encoder.state_dict())
        logger.info("pretrain epoch %d: train %.4f val %.4f", epoch, train_losses[-1], val_losses[-1])
        if stop:
            logger.info("pretrain: early stop at epoch %d (best %d)", epoch, state.best_epoch)
            break
    encoder.load_state_dict(best_state)
    encoder.eval()
    return PretrainResult(encoder, train_losses, val_losses, state.best_epoch, initial)


# ---------------------------------------------------------------------------
# downstream segments


@dataclass
class LabeledSegments:
    waveforms: np.ndarray          # (N, samples)
    labels: np.ndarray             # (N,), 1 = child
    session_ids: list[str]
    demographics: list[Demographics]

    def __len__(self):
        return len(self.labels)


def fit_window(samples: np.ndarray, n: int) -> np.ndarray:
    """Center-crop or symmetrically zero-pad to exactly ``n`` samples."""
    if len(samples) >= n:
        off = (len(samples) - n) // 2
        return samples[off:off + n]
    pad = n - len(samples)
    return np.pad(samples, (pad // 2, pad - pad // 2))


def extract_segments(sessions: Sequence[SessionManifest], segment_duration: float = DEFAULT_SEGMENT) -> LabeledSegments:
    """One fixed-length window per labeled utterance, centered on its midpoint."""
    waves, labels, ids, demos = [], [], [], []
    for s in sessions:
        if not s.utterances:
            continue
        wav, _ = read_wav(s.audio_path)
        n = round(segment_duration * s.sample_rate)
        for u in s.utterances:
            a, b = round(u.start * s.sample_rate), round(u.end * s.sample_rate)
            waves.append(fit_window(wav[a:b], n))
            labels.append(1 if u.speaker == "child" else 0)
            ids.append(s.session_id)
            demos.append(s.demographics)
    if not waves:
        raise ValueError("no labeled utterances in the given sessions")
    return LabeledSegments(np.stack(waves).astype(np.float32), np.array(labels, dtype=np.int64), ids, demos)


def encode_segments(encoder: Encoder, waveforms: np.ndarray, batch_size: int = 32) -> torch.Tensor:
    """Layer stacks for frozen-backbone training, shape (N, n_layers, frames, model_dim)."""
    encoder.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(waveforms), batch_size):
            layers = encoder(torch.from_numpy(np.ascontiguousarray(waveforms[i:i + batch_size]))).layers
            out.append(torch.stack(layers, dim=1))
    return torch.cat(out)


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneResult:
    head: torch.nn.Module
    best_epoch: int
    best_val_f1: float
    train_losses: list[float]
    val_f1: list[float]


def predict_logits(head: torch.nn.Module, features: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    head.eval()
    with torch.no_grad():
        return torch.cat([head(features[i:i + batch_size]) for i in range(0, len(features), batch_size)])


def _require_both_classes(labels, split: str) -> None:
    present = set(np.asarray(labels).tolist())
    if present != {0, 1}:
        missing = {0: "adult", 1: "child"}
        raise ValueError(f"{split} split lacks class(es): {sorted(missing[c] for c in {0, 1} - present)}")


def finetune(train_x: torch.Tensor, train_y, val_x: torch.Tensor, val_y, config: FinetuneConfig) -> FinetuneResult:
    """Train a head on frozen-backbone features; keep the best validation macro-F1."""
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    _require_both_classes(train_y, "training")
    _require_both_classes(val_y, "validation")
    train_y = torch.as_tensor(np.asarray(train_y), dtype=torch.float32)
    val_y = np.asarray(val_y)

    torch.manual_seed(config.seed)
    head = build_head(config.head)
    opt = torch.optim.Adam(head.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    order = torch.Generator().manual_seed(config.seed)

    best_f1, best_epoch = -1.0, -1
    best_state = copy.deepcopy(head.state_dict())
    losses, f1s = [], []
    for epoch in range(config.max_epochs):
        head.train()
        perm = torch.randperm(len(train_x), generator=order)
        running = []
        for i in range(0, len(perm), config.batch_size):
            idx = perm[i:i + config.batch_size]
            loss = bce_loss(head(train_x[idx]), train_y[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite BCE loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
        losses.append(float(np.mean(running)))
        pred = (predict_logits(head, val_x) > 0).numpy().astype(int)
        f1s.append(macro_f1(pred, val_y).macro_f1)
        if f1s[-1] > best_f1:
            best_f1, best_epoch = f1s[-1], epoch
            best_state = copy.deepcopy(head.state_dict())
        logger.info("finetune %s epoch %d: loss %.4f val macro-F1 %.4f", config.head.kind, epoch, losses[-1], f1s[-1])
        if config.patience is not None and epoch - best_epoch >= config.patience:
            break
    head.load_state_dict(best_state)
    head.eval()
    return FinetuneResult(head, best_epoch, best_f1, losses, f1s)
