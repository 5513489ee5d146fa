"""Audio de-identification over a word-timestamped transcript.

Two sources of PHI time ranges are combined: mentions found in the
transcript text (mapped back to word timings and padded by a margin), and
voiced stretches the recogniser produced no words for, which an LLM judges
from the surrounding words. Everything selected is muted (zeroed).
"""

from __future__ import annotations

import enum
import logging
import time
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .errors import ClassifierFailure, UnsupportedAudioFormat
from .extraction import ExtractionConfig, Extractor, run_autodeid
from .facts import FactDictionary
from .redaction import resolve_all
from .retry import call_with_retries

logger = logging.getLogger(__name__)

_EPS = 1e-9


class Label(str, enum.Enum):
    PHI = "PHI"
    GAP_CANDIDATE = "GapCandidate"
    VOICED = "Voiced"
    MUTE = "Mute"


@dataclass(frozen=True)
class TimedWord:
    word: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise ValueError("word timing must satisfy 0 <= start < end")


@dataclass(frozen=True)
class TimeInterval:
    start_s: float
    end_s: float
    label: Label = Label.PHI
    reason: str = ""

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError("interval must satisfy start < end")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def as_tuple(self) -> tuple[float, float]:
        return (self.start_s, self.end_s)


@dataclass
class AudioBuffer:
    sample_rate: int
    samples: np.ndarray
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.channels != 1 or self.samples.ndim != 1:
            raise UnsupportedAudioFormat("only mono audio is supported")
        if self.samples.dtype != np.int16:
            raise UnsupportedAudioFormat("only 16-bit linear PCM samples are supported")
        if self.sample_rate <= 0:
            raise UnsupportedAudioFormat("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.sample_rate, self.samples.copy(), self.channels)


def read_wav(path: str | Path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise UnsupportedAudioFormat("compressed WAV is not supported")
            if w.getsampwidth() != 2:
                raise UnsupportedAudioFormat("only 16-bit PCM is supported")
            if w.getnchannels() != 1:
                raise UnsupportedAudioFormat("only mono audio is supported")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedAudioFormat(f"not a PCM WAV file ({exc})") from None
    return AudioBuffer(rate, np.frombuffer(raw, dtype="<i2").astype(np.int16))


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(audio.samples.astype("<i2").tobytes())


def _r(t: float) -> float:
    # microsecond grid keeps margin arithmetic free of float dust
    return round(t, 6)


def clamp_words(words: Sequence[TimedWord], duration_s: float) -> list[TimedWord]:
    out = []
    clamped = 0
    for w in words:
        if w.start_s >= duration_s:
            clamped += 1
            continue
        if w.end_s > duration_s:
            clamped += 1
            w = TimedWord(w.word, w.start_s, duration_s)
        out.append(w)
    if clamped:
        logger.warning("%d transcript word(s) extend past the audio and were clamped", clamped)
    return out


def transcript_text(words: Sequence[TimedWord]) -> tuple[str, list[tuple[int, int]]]:
    """Words joined by single spaces, plus the character range of each word."""
    parts, offsets, pos = [], [], 0
    for w in words:
        offsets.append((pos, pos + len(w.word)))
        parts.append(w.word)
        pos += len(w.word) + 1
    return " ".join(parts), offsets


def expand(interval: TimeInterval, margin_s: float, duration_s: float | None = None) -> TimeInterval:
    lo = max(0.0, _r(interval.start_s - margin_s))
    hi = _r(interval.end_s + margin_s)
    if duration_s is not None:
        hi = min(hi, duration_s)
    return replace(interval, start_s=lo, end_s=hi)


def phi_intervals_from_transcript(
    words: Sequence[TimedWord],
    facts: FactDictionary,
    margin_s: float,
    duration_s: float | None = None,
    unresolved: list | None = None,
) -> list[TimeInterval]:
    text, offsets = transcript_text(words)
    spans, missing, _ = resolve_all(text, facts)
    if missing:
        logger.warning("%d transcript mention(s) could not be located", len(missing))
        if unresolved is not None:
            unresolved.extend(missing)
    out = []
    for s in spans:
        covered = [i for i, (a, b) in enumerate(offsets) if a < s.end and s.start < b]
        if not covered:
            continue
        base = TimeInterval(words[covered[0]].start_s, words[covered[-1]].end_s, Label.PHI, "transcript-phi")
        out.append(expand(base, margin_s, duration_s))
    return out


def merge_intervals(intervals: Sequence[TimeInterval]) -> list[TimeInterval]:
    out: list[TimeInterval] = []
    for iv in sorted(intervals, key=lambda i: (i.start_s, i.end_s)):
        if out and iv.start_s <= out[-1].end_s:
            last = out[-1]
            if iv.end_s > last.end_s:
                out[-1] = replace(last, end_s=iv.end_s)
        else:
            out.append(iv)
    return out


def missing_regions(duration_s: float, words: Sequence[TimedWord], min_gap_s: float = 0.05) -> list[TimeInterval]:
    """Stretches of ``[0, duration]`` not covered by any word, at least ``min_gap_s`` long."""
    covered = merge_intervals([TimeInterval(w.start_s, min(w.end_s, duration_s)) for w in words if w.start_s < duration_s])
    gaps, cursor = [], 0.0
    for iv in covered:
        if iv.start_s > cursor:
            gaps.append((cursor, iv.start_s))
        cursor = max(cursor, iv.end_s)
    if cursor < duration_s:
        gaps.append((cursor, duration_s))
    return [TimeInterval(a, b, Label.GAP_CANDIDATE) for a, b in gaps if b - a >= min_gap_s - _EPS]


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 30.0
    hop_ms: float = 10.0
    k: float = 2.0
    floor: float = 100.0
    voiced_fraction: float = 0.5


def vad_filter(audio: AudioBuffer, regions: Sequence[TimeInterval], config: VadConfig = VadConfig()) -> list[TimeInterval]:
    """Keep regions in which more than ``voiced_fraction`` of the frames are above the
    adaptive energy threshold ``max(floor, k * median frame RMS)``."""
    if not isinstance(audio, AudioBuffer):
        raise UnsupportedAudioFormat("expected an AudioBuffer")
    sr = audio.sample_rate
    frame = max(1, int(round(config.frame_ms * sr / 1000)))
    hop = max(1, int(round(config.hop_ms * sr / 1000)))
    rms = kernels.frame_rms(audio.samples, frame, hop)
    if rms.size == 0:
        return []
    threshold = max(config.floor, config.k * float(np.median(rms)))
    starts = np.arange(rms.size) * hop
    kept = []
    for reg in regions:
        lo, hi = int(round(reg.start_s * sr)), int(round(reg.end_s * sr))
        idx = np.nonzero((starts >= lo) & (starts + frame <= hi))[0]
        if idx.size == 0:
            mid = (lo + hi) / 2
            idx = np.array([min(rms.size - 1, max(0, int(round((mid - frame / 2) / hop))))])
        fraction = float(np.mean(rms[idx] > threshold))
        if fraction > config.voiced_fraction:
            kept.append(replace(reg, label=Label.VOICED))
    return kept


def format_timestamp(t: float) -> str:
    m = int(t // 60)
    return f"{m:02d}:{t - 60 * m:05.2f}"


def gap_marker(gap: TimeInterval) -> str:
    return f"<human_timestamp_({format_timestamp(gap.start_s)} - {format_timestamp(gap.end_s)})>"


def marked_transcript(words: Sequence[TimedWord], gaps: Sequence[TimeInterval]) -> str:
    items = [(w.start_s, 1, w.word) for w in words] + [(g.start_s, 0, gap_marker(g)) for g in gaps]
    return " ".join(tok for _, _, tok in sorted(items, key=lambda t: (t[0], t[1])))


class GapClassifier(Protocol):
    def classify(self, transcript: str, markers: Sequence[str]) -> Mapping[str, object]:
        """Map each marker to a verdict (``"PHI"``/``"NON-PHI"`` or a bool)."""


def _is_phi(verdict) -> bool:
    if isinstance(verdict, bool):
        return verdict
    v = str(verdict).strip().upper().replace("_", "-")
    if v in ("NON-PHI", "NON-PHI/PII", "NONPHI", "NO", "FALSE"):
        return False
    # anything else, including unrecognised labels, counts as PHI
    return True


class GapVerdicts(list):
    """List of ``(gap, is_phi)``; ``failed`` is set when the classifier gave up."""

    failed: bool = False


def classify_gap_phi(
    words: Sequence[TimedWord],
    voiced_gaps: Sequence[TimeInterval],
    classifier: GapClassifier,
    *,
    retries: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> GapVerdicts:
    out = GapVerdicts()
    if not voiced_gaps:
        return out
    markers = [gap_marker(g) for g in voiced_gaps]
    text = marked_transcript(words, voiced_gaps)
    try:
        verdicts = call_with_retries(
            lambda: classifier.classify(text, markers), retries, backoff_s, sleep, ClassifierFailure, "gap classification"
        )
    except ClassifierFailure:
        logger.error("gap classifier failed; muting all %d voiced gap(s)", len(voiced_gaps))
        out.failed = True
        verdicts = {}
    missing = 0
    for g, marker in zip(voiced_gaps, markers):
        if marker in verdicts:
            out.append((g, _is_phi(verdicts[marker])))
        else:
            missing += 1
            out.append((g, True))
    if missing and not out.failed:
        logger.warning("classifier gave no verdict for %d gap(s); treated as PHI", missing)
    return out


def mute(audio: AudioBuffer, intervals: Sequence[TimeInterval]) -> AudioBuffer:
    """Zero every sample ``i`` with ``start <= i / sample_rate < end`` for some interval."""
    out = audio.copy()
    n = len(out.samples)
    if not n:
        return out
    t = np.arange(n) / audio.sample_rate
    for iv in merge_intervals(intervals):
        lo = int(np.searchsorted(t, iv.start_s, side="left"))
        hi = int(np.searchsorted(t, iv.end_s, side="left"))
        out.samples[lo:hi] = 0
    return out


@dataclass(frozen=True)
class AudioConfig:
    margin_s: float = 0.2
    min_gap_s: float = 0.05
    vad: VadConfig = VadConfig()
    extraction: ExtractionConfig = ExtractionConfig()
    retries: int = 3
    backoff_s: float = 0.5


@dataclass
class AudioDeidResult:
    audio: AudioBuffer
    intervals: list[TimeInterval]
    gaps: list[TimeInterval] = field(default_factory=list)
    voiced_gaps: list[TimeInterval] = field(default_factory=list)
    verdicts: GapVerdicts = field(default_factory=GapVerdicts)
    facts: FactDictionary = field(default_factory=FactDictionary)
    unresolved: int = 0

    @property
    def classifier_failed(self) -> bool:
        return self.verdicts.failed

    def __iter__(self):
        return iter((self.audio, self.intervals))

    def report(self) -> dict:
        return {
            "duration_s": self.audio.duration_s,
            "intervals": [{"start_s": i.start_s, "end_s": i.end_s, "reason": i.reason} for i in self.intervals],
            "gaps": [[g.start_s, g.end_s] for g in self.gaps],
            "voiced_gaps": [[g.start_s, g.end_s] for g in self.voiced_gaps],
            "classifier_failed": self.classifier_failed,
            "unresolved_mentions": self.unresolved,
        }


def run_audio_deid(
    audio: AudioBuffer,
    words: Sequence[TimedWord],
    config: AudioConfig,
    extractor: Extractor,
    classifier: GapClassifier,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> AudioDeidResult:
    duration = audio.duration_s
    words = clamp_words(sorted(words, key=lambda w: w.start_s), duration)
    text, _ = transcript_text(words)
    facts = run_autodeid(text, config.extraction, extractor, sleep=sleep)
    unresolved: list = []
    phi = phi_intervals_from_transcript(words, facts, config.margin_s, duration, unresolved)
    gaps = missing_regions(duration, words, config.min_gap_s)
    voiced = vad_filter(audio, gaps, config.vad)
    verdicts = classify_gap_phi(
        words, voiced, classifier, retries=config.retries, backoff_s=config.backoff_s, sleep=sleep
    )
    gap_phi = [
        expand(replace(g, label=Label.PHI, reason="gap-phi"), config.margin_s, duration) for g, is_phi in verdicts if is_phi
    ]
    intervals = sorted(phi + gap_phi, key=lambda i: (i.start_s, i.end_s))
    muted = mute(audio, intervals)
    return AudioDeidResult(muted, intervals, gaps, voiced, verdicts, facts, len(unresolved))
