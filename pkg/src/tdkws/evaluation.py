"""Detection metrics, ROC sweeps, and evaluation dataset construction.

Scoring matches detection events to annotated keyword spans: an event
matches a span of the same keyword when it fires inside the span
extended by a tolerance, and each span absorbs at most one event.
Unmatched spans are false rejects; unmatched events are false alarms.
Continuous test streams are built by concatenating isolated clips in
seeded random order at varying gain, optionally mixed with noise at a
requested SNR.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, UndefinedRateError, UndefinedSnrError
from .features import AudioStream
from .inference import (
    DEFAULT_REFRACTORY,
    DEFAULT_THRESHOLD,
    DetectionEvent,
    PosteriorTrace,
    batch_forward,
    candidates_from_trace,
)
from .model import TdnnModel

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE_FRAMES = 50


@dataclass(frozen=True)
class GroundTruth:
    """Keyword annotation for one stream.

    spans: (keyword_index, start_frame, end_frame) with end exclusive,
    keyword_index addressing the keywords tuple.  Spans must not overlap.
    """

    keywords: tuple
    spans: tuple
    total_audio_seconds: float

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        spans = tuple((int(k), int(s), int(e)) for k, s, e in self.spans)
        object.__setattr__(self, "spans", spans)
        if self.total_audio_seconds < 0:
            raise InputError("total_audio_seconds must be nonnegative")
        last_end = None
        for k, start, end in sorted(spans, key=lambda s: s[1]):
            if not 0 <= k < len(self.keywords):
                raise InputError(f"span keyword index {k} out of range")
            if start < 0 or end <= start:
                raise InputError(f"bad span bounds ({start}, {end})")
            if last_end is not None and start < last_end:
                raise InputError("keyword spans must not overlap")
            last_end = end

    def to_json(self) -> dict:
        return {
            "keywords": list(self.keywords),
            "total_audio_seconds": self.total_audio_seconds,
            "spans": [list(span) for span in self.spans],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruth":
        try:
            return cls(
                keywords=tuple(data["keywords"]),
                spans=tuple(tuple(span) for span in data["spans"]),
                total_audio_seconds=float(data["total_audio_seconds"]),
            )
        except KeyError as exc:
            raise InputError(f"truth record is missing {exc}") from None

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path) as f:
            return cls.from_json(json.load(f))


def score_detections(events, truth: GroundTruth,
                     tolerance_frames: int = DEFAULT_TOLERANCE_FRAMES):
    """(frr_percent, fa_per_hour) for events against annotated spans.

    An event is eligible for a span when keywords agree and the event
    frame lies in [start, end + tolerance).  Events are taken in time
    order and greedily matched to the eligible unmatched span that ends
    earliest, which maximizes the number of matches.  With no annotated
    spans the FRR is 0 (nothing to miss).
    """
    if truth.total_audio_seconds <= 0:
        raise UndefinedRateError("cannot rate false alarms on zero-duration audio")
    matched, false_alarms = match_events(events, truth, tolerance_frames)
    n_spans = len(truth.spans)
    frr = 100.0 * (n_spans - len(matched)) / n_spans if n_spans else 0.0
    fa_per_hour = len(false_alarms) / (truth.total_audio_seconds / 3600.0)
    return frr, fa_per_hour


def match_events(events, truth: GroundTruth,
                 tolerance_frames: int = DEFAULT_TOLERANCE_FRAMES):
    """Greedy maximum matching of events to spans.

    Returns (matched span indices, unmatched events).
    """
    if tolerance_frames < 0:
        raise ConfigError("tolerance_frames must be nonnegative")
    by_keyword = {}
    for i, (k, start, end) in enumerate(truth.spans):
        by_keyword.setdefault(truth.keywords[k], []).append((end, start, i))
    for spans in by_keyword.values():
        spans.sort()
    matched = set()
    false_alarms = []
    for ev in sorted(events, key=lambda e: e.frame):
        best = None
        for end, start, i in by_keyword.get(ev.keyword, ()):
            if i in matched:
                continue
            if start <= ev.frame < end + tolerance_frames:
                best = i
                break  # spans sorted by end: first hit ends earliest
        if best is None:
            false_alarms.append(ev)
        else:
            matched.add(best)
    return matched, false_alarms


@dataclass(frozen=True)
class RocCurve:
    """Operating points from a threshold sweep, thresholds descending."""

    points: tuple  # (threshold, frr_percent, fa_per_hour)

    def __post_init__(self):
        object.__setattr__(
            self, "points",
            tuple((float(t), float(frr), float(fa)) for t, frr, fa in self.points),
        )

    def frr_at(self, fa_per_hour: float) -> float:
        """FRR at the given false-alarm rate, linearly interpolated.

        Outside the swept range, the nearest endpoint's FRR is returned.
        """
        if not self.points:
            raise InputError("empty ROC curve")
        pts = sorted(self.points, key=lambda p: p[2])
        if fa_per_hour <= pts[0][2]:
            return pts[0][1]
        if fa_per_hour >= pts[-1][2]:
            return pts[-1][1]
        for (_, frr_lo, fa_lo), (_, frr_hi, fa_hi) in zip(pts, pts[1:]):
            if fa_lo <= fa_per_hour <= fa_hi:
                if fa_hi == fa_lo:
                    return min(frr_lo, frr_hi)
                w = (fa_per_hour - fa_lo) / (fa_hi - fa_lo)
                return frr_lo + w * (frr_hi - frr_lo)
        raise AssertionError("unreachable: target inside sorted range")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "frr_percent", "fa_per_hour"])
            for t, frr, fa in self.points:
                writer.writerow([repr(t), repr(frr), repr(fa)])

    @classmethod
    def from_csv(cls, path) -> "RocCurve":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["threshold", "frr_percent", "fa_per_hour"]:
                raise InputError(f"{path}: not an ROC file")
            points = tuple((float(t), float(frr), float(fa))
                           for t, frr, fa in reader)
        return cls(points=points)


def _check_thresholds(thresholds) -> list:
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise InputError("threshold sweep needs at least one threshold")
    if any(b > a for a, b in zip(thresholds, thresholds[1:])):
        raise InputError("thresholds must be sorted descending")
    return thresholds


def roc_sweep_pooled(pairs, thresholds,
                     refractory: int = DEFAULT_REFRACTORY,
                     tolerance_frames: int = DEFAULT_TOLERANCE_FRAMES) -> RocCurve:
    """ROC over (trace, truth) pairs, pooling counts across streams.

    The trigger's threshold-independent candidates are computed once per
    stream; each threshold only re-filters them.
    """
    thresholds = _check_thresholds(thresholds)
    prepared = []
    total_spans = 0
    total_seconds = 0.0
    for trace, truth in pairs:
        if len(trace) == 0:
            raise InputError("cannot sweep an empty posterior trace")
        cands = []
        for name, merged in candidates_from_trace(trace, refractory).items():
            cands += [(frame, score, name) for frame, score in merged]
        prepared.append((cands, trace.hop_s, truth))
        total_spans += len(truth.spans)
        total_seconds += truth.total_audio_seconds
    if total_seconds <= 0:
        raise UndefinedRateError("cannot rate false alarms on zero-duration audio")
    points = []
    for threshold in thresholds:
        n_matched = 0
        n_false = 0
        for cands, hop_s, truth in prepared:
            events = [
                DetectionEvent(keyword=name, frame=frame,
                               time_s=frame * hop_s, score=score)
                for frame, score, name in cands if score >= threshold
            ]
            matched, false_alarms = match_events(events, truth, tolerance_frames)
            n_matched += len(matched)
            n_false += len(false_alarms)
        frr = 100.0 * (total_spans - n_matched) / total_spans if total_spans else 0.0
        fa = n_false / (total_seconds / 3600.0)
        points.append((threshold, frr, fa))
    return RocCurve(points=tuple(points))


def roc_sweep(trace: PosteriorTrace, truth: GroundTruth, thresholds,
              refractory: int = DEFAULT_REFRACTORY,
              tolerance_frames: int = DEFAULT_TOLERANCE_FRAMES) -> RocCurve:
    """ROC for one stream; see roc_sweep_pooled."""
    return roc_sweep_pooled([(trace, truth)], thresholds,
                            refractory=refractory,
                            tolerance_frames=tolerance_frames)


def classify_utterance(model: TdnnModel, features, skip="none",
                       threshold: float = DEFAULT_THRESHOLD,
                       smooth_width: int = None) -> int:
    """Output-slot index for a single-command clip.

    Slots follow the network output order: keyword k is slot k and the
    last slot, len(model.keywords), is filler.  Each slot scores its
    maximum smoothed posterior over the clip; the best slot wins, and a
    winning keyword must also clear the threshold or the clip falls
    back to filler.  Clips too short for the context window classify as
    filler.
    """
    filler = len(model.keywords)
    kwargs = {} if smooth_width is None else {"smooth_width": smooth_width}
    trace = batch_forward(model, features, skip=skip, **kwargs)
    if len(trace) == 0:
        logger.warning("clip too short for the context window; classifying filler")
        return filler
    peak = trace.smoothed.max(axis=0)  # per slot, filler last
    best = int(np.argmax(peak))
    if best == filler:
        return filler
    return best if peak[best] >= threshold else filler


@dataclass(frozen=True)
class Clip:
    """An isolated command clip: samples, class label (0 = filler)."""

    samples: np.ndarray
    label: int
    sample_rate: int = 16000

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.samples.ndim != 1:
            raise InputError("clip samples must be 1-D")
        if self.label < 0:
            raise InputError("clip label must be nonnegative")


@dataclass(frozen=True)
class MixSpec:
    """Randomized stream construction parameters."""

    snr_db: float = None  # None: no noise mixing
    amplitude_range_db: tuple = (-10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        low, high = self.amplitude_range_db
        if low > high:
            raise ConfigError("amplitude range low bound exceeds high bound")


def make_derivative_stream(clips, spec: MixSpec, keywords,
                           gap_range_s=(0.1, 0.4)):
    """Concatenate clips in seeded random order at varying gain.

    Returns (AudioStream, GroundTruth).  Clip order, per-clip gain, and
    inter-clip silence lengths all come from the seed.  Spans cover
    keyword clips only (label >= 1 maps to keywords[label - 1]).
    """
    clips = list(clips)
    if not clips:
        raise InputError("need at least one clip")
    rate = clips[0].sample_rate
    if any(c.sample_rate != rate for c in clips):
        raise ConfigError("all clips must share one sample rate")
    lo_gap, hi_gap = gap_range_s
    if lo_gap < 0 or lo_gap > hi_gap:
        raise ConfigError("bad gap range")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(clips))
    low_db, high_db = spec.amplitude_range_db

    hop = rate // 100  # frame hop for span bookkeeping, 10 ms
    pieces = []
    spans = []
    offset = 0
    for idx in order:
        clip = clips[idx]
        gain_db = rng.uniform(low_db, high_db)
        gain = 10.0 ** (gain_db / 20.0)
        pieces.append(clip.samples * gain)
        if clip.label >= 1:
            if clip.label > len(keywords):
                raise InputError(f"clip label {clip.label} exceeds keyword count")
            start = offset // hop
            end = max(start + 1, (offset + len(clip.samples)) // hop)
            spans.append((clip.label - 1, start, end))
        offset += len(clip.samples)
        gap = int(round(rng.uniform(lo_gap, hi_gap) * rate))
        pieces.append(np.zeros(gap))
        offset += gap
    samples = np.concatenate(pieces)
    stream = AudioStream(samples=samples, sample_rate=rate)
    truth = GroundTruth(
        keywords=tuple(keywords),
        spans=tuple(spans),
        total_audio_seconds=len(samples) / rate,
    )
    return stream, truth


def measured_snr_db(clean: AudioStream, mixed: AudioStream) -> float:
    """SNR implied by a clean stream and its noisy mix."""
    clean_power = float(np.mean(clean.samples**2))
    noise = mixed.samples - clean.samples
    noise_power = float(np.mean(noise**2))
    if clean_power == 0.0 or noise_power == 0.0:
        raise UndefinedSnrError("SNR is undefined for a silent component")
    return 10.0 * np.log10(clean_power / noise_power)


def mix_noise(clean: AudioStream, noise: AudioStream, snr_db: float,
              rng=None) -> AudioStream:
    """Add noise scaled for the requested SNR over the whole stream.

    Noise shorter than the speech is looped from a seeded random offset.
    Output samples are clipped to [-1, 1]; clipping is reported as a
    warning with the affected fraction.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ConfigError("clean and noise sample rates differ")
    clean_power = float(np.mean(clean.samples**2)) if len(clean.samples) else 0.0
    if clean_power == 0.0:
        raise UndefinedSnrError("clean stream has zero power")
    if len(noise.samples) == 0:
        raise UndefinedSnrError("noise stream is empty")
    rng = rng or np.random.default_rng(0)
    n = len(clean.samples)
    if len(noise.samples) >= n:
        start = int(rng.integers(0, len(noise.samples) - n + 1))
        track = noise.samples[start : start + n]
    else:
        start = int(rng.integers(0, len(noise.samples)))
        reps = int(np.ceil((start + n) / len(noise.samples)))
        track = np.tile(noise.samples, reps)[start : start + n]
    noise_power = float(np.mean(track**2))
    if noise_power == 0.0:
        raise UndefinedSnrError("noise stream has zero power")
    scale = np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    mixed = clean.samples + scale * track
    clipped = np.clip(mixed, -1.0, 1.0)
    n_clipped = int(np.sum(mixed != clipped))
    if n_clipped:
        logger.warning("mix_noise clipped %.3f%% of samples",
                       100.0 * n_clipped / n)
    return AudioStream(samples=clipped, sample_rate=clean.sample_rate)


def white_noise(num_samples: int, rng, amplitude: float = 0.1) -> np.ndarray:
    """Gaussian white noise."""
    return rng.normal(0.0, amplitude, size=num_samples)


def pink_noise(num_samples: int, rng, amplitude: float = 0.1) -> np.ndarray:
    """1/f-shaped noise with the requested RMS amplitude."""
    spectrum = np.fft.rfft(rng.normal(0.0, 1.0, size=num_samples))
    freqs = np.fft.rfftfreq(num_samples)
    shape = np.zeros_like(freqs)
    shape[1:] = 1.0 / np.sqrt(freqs[1:])
    samples = np.fft.irfft(spectrum * shape, n=num_samples)
    rms = np.sqrt(np.mean(samples**2))
    return samples * (amplitude / rms)
