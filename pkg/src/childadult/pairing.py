"""Anchor/positive segment pairs for contrastive pre-training.

A positive is the same session shifted by 0.1-0.5 s; every other segment in
the batch acts as a negative for a given anchor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import AudioSegment, SegmentRangeError, SessionManifest, slice_segment

MIN_SHIFT = 0.1
MAX_SHIFT = 0.5
DEFAULT_SEGMENT = 2.0


@dataclass
class SegmentPair:
    anchor: AudioSegment
    positive: AudioSegment
    shift: float


@dataclass
class SegmentPairBatch:
    pairs: list[SegmentPair]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a batch needs at least one pair")
        lengths = {len(p.anchor.samples) for p in self.pairs} | {len(p.positive.samples) for p in self.pairs}
        if len(lengths) != 1:
            raise ValueError(f"segments differ in length: {sorted(lengths)}")

    def __len__(self):
        return len(self.pairs)

    def anchors(self) -> np.ndarray:
        return np.stack([p.anchor.samples for p in self.pairs])

    def positives(self) -> np.ndarray:
        return np.stack([p.positive.samples for p in self.pairs])


def _window_offsets(session: SessionManifest, anchor_start: float, segment_duration: float,
                    rng: np.random.Generator, grid: int | None) -> tuple[int, int]:
    sr = session.sample_rate
    a = round(anchor_start * sr)
    n = round(segment_duration * sr)
    total = session.n_samples
    max_shift = round(MAX_SHIFT * sr)
    if a < 0 or a + n > total:
        raise SegmentRangeError(f"anchor [{anchor_start}, {anchor_start + segment_duration}] s outside session")
    left_ok = a - max_shift >= 0
    right_ok = a + n + max_shift <= total
    if not (left_ok or right_ok):
        raise SegmentRangeError(
            f"session {session.session_id!r} ({session.duration} s) cannot hold a {segment_duration} s "
            f"anchor at {anchor_start} s plus a {MAX_SHIFT} s shift"
        )
    shift = round(rng.uniform(MIN_SHIFT, MAX_SHIFT) * sr)
    if grid:
        shift = round(shift / grid) * grid
    sign = 1 if rng.random() < 0.5 else -1
    if (sign > 0 and not right_ok) or (sign < 0 and not left_ok):
        sign = -sign
    return a, a + sign * shift


def sample_pair(session: SessionManifest, anchor_start: float, segment_duration: float,
                rng: np.random.Generator, grid: int | None = None) -> SegmentPair:
    """Pair the anchor window with a neighbour shifted by 0.1-0.5 s.

    ``grid`` (in samples) snaps the shift to a multiple of the encoder hop so
    cached frame features can be reused; anchors must already be on it.
    """
    a, p = _window_offsets(session, anchor_start, segment_duration, rng, grid)
    sr = session.sample_rate
    anchor = slice_segment(session, a / sr, segment_duration)
    positive = slice_segment(session, p / sr, segment_duration)
    return SegmentPair(anchor, positive, (p - a) / sr)


def feasible_sessions(sessions: Sequence[SessionManifest], segment_duration: float) -> list[SessionManifest]:
    return [s for s in sessions if s.duration >= segment_duration + MAX_SHIFT]


def build_batch(sessions: Sequence[SessionManifest], B: int = 32, segment_duration: float = DEFAULT_SEGMENT,
                rng: np.random.Generator | None = None, grid: int | None = None) -> SegmentPairBatch:
    """Draw ``B`` pairs; sessions are chosen with probability proportional to duration."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    rng = rng if rng is not None else np.random.default_rng()
    pool = feasible_sessions(sessions, segment_duration)
    if not pool:
        raise ValueError(f"no session is long enough for {segment_duration} s segments plus a {MAX_SHIFT} s shift")
    durations = np.array([s.duration for s in pool])
    picks = rng.choice(len(pool), size=B, p=durations / durations.sum())
    pairs = []
    for idx in picks:
        session = pool[idx]
        sr = session.sample_rate
        n = round(segment_duration * sr)
        max_shift = round(MAX_SHIFT * sr)
        hi = session.n_samples - n
        while True:
            a = int(rng.integers(0, hi + 1))
            if grid:
                a -= a % grid
            if a >= max_shift or a + n + max_shift <= session.n_samples:
                break
        pairs.append(sample_pair(session, a / sr, segment_duration, rng, grid))
    return SegmentPairBatch(pairs)
