"""Session manifests, WAV access, synthetic two-speaker corpora and session splits."""

from __future__ import annotations

import json
import logging
import math
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
MIN_UTTERANCE = 0.05
SPEAKERS = ("child", "adult")
GENDERS = ("male", "female")
MALE_PROBABILITY = 244 / (244 + 84)
AGE_RANGE_MONTHS = (43, 158)

Speaker = Literal["child", "adult"]


class CorpusError(Exception):
    """Base class for corpus problems."""


class ManifestFormatError(CorpusError, ValueError):
    pass


class ManifestValidationError(CorpusError, ValueError):
    def __init__(self, session_id: str, field_name: str, message: str):
        self.session_id = session_id
        self.field = field_name
        super().__init__(f"session {session_id!r}, field {field_name}: {message}")


class UnsupportedRateError(CorpusError, ValueError):
    pass


class SegmentRangeError(CorpusError, ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    start: float
    end: float
    speaker: Speaker

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Demographics:
    age_months: int | None = None
    gender: Literal["male", "female"] | None = None


@dataclass
class SessionManifest:
    session_id: str
    audio_path: str
    sample_rate: int
    duration: float
    utterances: list[Utterance] = field(default_factory=list)
    demographics: Demographics = field(default_factory=Demographics)

    @property
    def n_samples(self) -> int:
        return round(self.duration * self.sample_rate)

    def validate(self) -> None:
        sid = self.session_id
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedRateError(
                f"session {sid!r}: sample_rate {self.sample_rate} Hz unsupported (only {SAMPLE_RATE} Hz)"
            )
        if not self.duration > 0:
            raise ManifestValidationError(sid, "duration", f"must be positive, got {self.duration}")
        for i, u in enumerate(self.utterances):
            where = f"utterances[{i}]"
            if u.speaker not in SPEAKERS:
                raise ManifestValidationError(sid, f"{where}.speaker", f"unknown speaker {u.speaker!r}")
            if u.end < u.start:
                raise ManifestValidationError(sid, f"{where}.end", f"end {u.end} precedes start {u.start}")
            if not 0 <= u.start < u.end <= self.duration:
                raise ManifestValidationError(
                    sid, where, f"[{u.start}, {u.end}] outside [0, {self.duration}]"
                )
            if u.end - u.start < MIN_UTTERANCE - 1e-9:
                raise ManifestValidationError(sid, where, f"shorter than {MIN_UTTERANCE} s")
        age = self.demographics.age_months
        if age is not None and age <= 0:
            raise ManifestValidationError(sid, "demographics.age_months", f"must be > 0, got {age}")
        if self.demographics.gender not in (None, *GENDERS):
            raise ManifestValidationError(sid, "demographics.gender", f"unknown gender {self.demographics.gender!r}")

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "audio_path": self.audio_path,
            "sample_rate": self.sample_rate,
            "duration": self.duration,
            "demographics": {"age_months": self.demographics.age_months, "gender": self.demographics.gender},
            "utterances": [{"start": u.start, "end": u.end, "speaker": u.speaker} for u in self.utterances],
        }


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int
    source_session: str
    start: float

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def __getitem__(self, name: str) -> frozenset[str]:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)

    def to_json(self) -> dict:
        return {k: sorted(self[k]) for k in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# manifest I/O


def _require(obj: dict, key: str, types, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestFormatError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ManifestFormatError(f"{where}.{key}: expected {types}, got {type(value).__name__}")
    return value


def _parse_session(raw: dict, where: str, base: Path) -> SessionManifest:
    sid = _require(raw, "session_id", str, where)
    audio_path = _require(raw, "audio_path", str, where)
    rate = _require(raw, "sample_rate", int, where)
    duration = float(_require(raw, "duration", (int, float), where))
    demo_raw = raw.get("demographics") or {}
    if not isinstance(demo_raw, dict):
        raise ManifestFormatError(f"{where}.demographics: expected object")
    age = demo_raw.get("age_months")
    if age is not None and (not isinstance(age, int) or isinstance(age, bool)):
        raise ManifestFormatError(f"{where}.demographics.age_months: expected int or null")
    utts = []
    raw_utts = raw.get("utterances", [])
    if not isinstance(raw_utts, list):
        raise ManifestFormatError(f"{where}.utterances: expected list")
    for j, u in enumerate(raw_utts):
        uw = f"{where}.utterances[{j}]"
        utts.append(Utterance(
            float(_require(u, "start", (int, float), uw)),
            float(_require(u, "end", (int, float), uw)),
            _require(u, "speaker", str, uw),
        ))
    path = Path(audio_path)
    if not path.is_absolute():
        path = base / path
    return SessionManifest(
        session_id=sid,
        audio_path=str(path),
        sample_rate=rate,
        duration=duration,
        utterances=utts,
        demographics=Demographics(age, demo_raw.get("gender")),
    )


def load_manifest(path: str | Path) -> list[SessionManifest]:
    """Parse and validate a corpus manifest.

    Relative ``audio_path`` entries are resolved against the manifest's
    directory. Utterances come back sorted by start time and sessions sorted
    by ``session_id``.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("sessions"), list):
        raise ManifestFormatError(f"{path}: top level must be an object with a 'sessions' list")
    sessions = []
    seen = set()
    for i, raw in enumerate(doc["sessions"]):
        s = _parse_session(raw, f"sessions[{i}]", path.parent)
        if s.session_id in seen:
            raise ManifestValidationError(s.session_id, "session_id", "duplicate id")
        seen.add(s.session_id)
        # validate before sorting so errors name the utterance index as written
        s.validate()
        s.utterances.sort(key=lambda u: (u.start, u.end))
        sessions.append(s)
    sessions.sort(key=lambda s: s.session_id)
    return sessions


def write_manifest(sessions: Sequence[SessionManifest], path: str | Path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    entries = []
    for s in sessions:
        entry = s.to_json()
        audio = Path(s.audio_path)
        if audio.is_absolute() and audio.resolve().is_relative_to(base):
            entry["audio_path"] = audio.resolve().relative_to(base).as_posix()
        entries.append(entry)
    path.write_text(json.dumps({"sessions": entries}, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# audio


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """16-bit PCM mono; input is float in [-1, 1]."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path: str | Path, offset: int = 0, count: int | None = None) -> tuple[np.ndarray, int]:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise CorpusError(f"{path}: expected 16-bit mono PCM")
            rate = w.getframerate()
            total = w.getnframes()
            if count is None:
                count = total - offset
            if offset < 0 or offset + count > total:
                raise SegmentRangeError(f"{path}: samples [{offset}, {offset + count}) outside [0, {total})")
            w.setpos(offset)
            raw = w.readframes(count)
    except (wave.Error, EOFError) as exc:
        raise OSError(f"cannot read audio {path}: {exc}") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0, rate


def slice_segment(session: SessionManifest, start: float, duration: float) -> AudioSegment:
    """Read ``duration`` seconds of audio beginning at ``start``."""
    sr = session.sample_rate
    offset = round(start * sr)
    count = round(duration * sr)
    if start < 0 or duration <= 0 or offset + count > session.n_samples:
        raise SegmentRangeError(
            f"window [{start}, {start + duration}] s outside session {session.session_id!r} "
            f"of {session.duration} s"
        )
    samples, rate = read_wav(session.audio_path, offset, count)
    if rate != sr:
        raise UnsupportedRateError(f"{session.audio_path}: file rate {rate} Hz, manifest says {sr} Hz")
    return AudioSegment(samples=samples, sample_rate=sr, source_session=session.session_id, start=start)


def child_fraction(sessions: Sequence[SessionManifest]) -> float:
    """Child utterance time over total utterance time, pooled over sessions."""
    child = sum(u.duration for s in sessions for u in s.utterances if u.speaker == "child")
    total = sum(u.duration for s in sessions for u in s.utterances)
    return child / total if total else float("nan")


# ---------------------------------------------------------------------------
# synthetic corpus

CHILD_F0 = (250.0, 400.0)
ADULT_F0 = (85.0, 180.0)
SNR_DB = 20.0
MAX_HARMONIC_HZ = 4000.0


def _voice(rng: np.random.Generator, f0_range: tuple[float, float]) -> dict:
    f0 = rng.uniform(*f0_range)
    n_harm = int(MAX_HARMONIC_HZ // f0)
    weights = rng.uniform(0.1, 1.0, n_harm) / np.arange(1, n_harm + 1) ** rng.uniform(0.5, 1.5)
    return {"f0": f0, "weights": weights / np.linalg.norm(weights)}


def _render_utterance(rng: np.random.Generator, voice: dict, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    # per-utterance pitch level and a linear glide
    f_start = voice["f0"] * rng.uniform(0.93, 1.07)
    f_end = f_start * rng.uniform(0.9, 1.1)
    inst_f = f_start + (f_end - f_start) * t / max(t[-1], 1e-9)
    phase = 2 * np.pi * np.cumsum(inst_f) / sr
    x = np.zeros(n)
    for h, w in enumerate(voice["weights"], start=1):
        x += w * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllable-rate amplitude modulation under a short fade in/out
    am = 1.0 + rng.uniform(0.3, 0.7) * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    fade = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
    return x * am * fade * rng.uniform(0.5, 1.0)


def _session_plan(rng: np.random.Generator, duration: float) -> list[Utterance]:
    frac = rng.uniform(0.3, 0.6)
    mean = {"child": 2.0 * frac, "adult": 2.0 * (1.0 - frac)}
    speaker = "child" if rng.random() < 0.5 else "adult"
    t = round(rng.uniform(0.2, 1.0), 3)
    utts = []
    while True:
        length = round(mean[speaker] * rng.uniform(0.4, 1.6), 3)
        if t + length > duration - 0.1:
            break
        utts.append(Utterance(t, round(t + length, 3), speaker))
        t = round(t + length + rng.uniform(0.15, 0.8), 3)
        speaker = "adult" if speaker == "child" else "child"
    return utts


def synth_session(session_id: str, duration: float, rng: np.random.Generator,
                  sample_rate: int = SAMPLE_RATE) -> tuple[SessionManifest, np.ndarray]:
    """One synthetic child/adult session; returns the manifest and float audio."""
    voices = {"child": _voice(rng, CHILD_F0), "adult": _voice(rng, ADULT_F0)}
    utts = _session_plan(rng, duration)
    n_total = round(duration * sample_rate)
    audio = np.zeros(n_total)
    for u in utts:
        a, b = round(u.start * sample_rate), round(u.end * sample_rate)
        audio[a:b] += _render_utterance(rng, voices[u.speaker], b - a, sample_rate)
    speech = np.concatenate([audio[round(u.start * sample_rate):round(u.end * sample_rate)] for u in utts])
    noise_power = np.mean(speech ** 2) / 10 ** (SNR_DB / 10)
    audio += rng.normal(0.0, math.sqrt(noise_power), n_total)
    audio *= 0.9 / np.max(np.abs(audio))
    demo = Demographics(
        age_months=int(rng.integers(AGE_RANGE_MONTHS[0], AGE_RANGE_MONTHS[1] + 1)),
        gender="male" if rng.random() < MALE_PROBABILITY else "female",
    )
    manifest = SessionManifest(session_id, "", sample_rate, n_total / sample_rate, utts, demo)
    return manifest, audio


def synth_corpus(out_dir: str | Path, n_sessions: int, session_duration: float, seed: int) -> list[SessionManifest]:
    """Write a deterministic synthetic corpus (WAVs + ``manifest.json``) to ``out_dir``.

    Each session gets its own random stream spawned from ``seed``, so the
    same arguments always produce byte-identical files.
    """
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    if session_duration < 10:
        raise ValueError(f"session_duration must be >= 10 s, got {session_duration}")
    out = Path(out_dir)
    audio_dir = out / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(seed).spawn(n_sessions)
    sessions = []
    for i, ss in enumerate(streams):
        sid = f"synth{seed:04d}_{i:04d}"
        manifest, audio = synth_session(sid, session_duration, np.random.default_rng(ss))
        wav_path = audio_dir / f"{sid}.wav"
        write_wav(wav_path, audio)
        manifest.audio_path = str(wav_path.resolve())
        sessions.append(manifest)
        logger.debug("synthesized %s: %d utterances", sid, len(manifest.utterances))
    write_manifest(sessions, out / "manifest.json")
    return sessions


# ---------------------------------------------------------------------------
# splits


def split_sizes(n: int, ratios: Sequence[float] = (0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    fr = [Fraction(str(r)) for r in ratios]
    n_train = math.floor(fr[0] * n)
    n_val = math.floor(fr[1] * n)
    return n_train, n_val, n - n_train - n_val


def split_sessions(manifests: Sequence[SessionManifest], ratios: Sequence[float] = (0.70, 0.15, 0.15),
                   seed: int = 0) -> SplitAssignment:
    """Seeded session-level train/val/test partition (floor, floor, remainder)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = sorted(m.session_id for m in manifests)
    if len(ids) < 3:
        raise ValueError(f"need at least 3 sessions to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate session ids")
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return SplitAssignment(
        train=frozenset(shuffled[:n_train]),
        val=frozenset(shuffled[n_train:n_train + n_val]),
        test=frozenset(shuffled[n_train + n_val:]),
    )
