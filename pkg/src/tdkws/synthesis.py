"""Seeded synthetic speech-like data for desk-scale training and tests.

A toy language gives each phone a fixed pair of sinusoid frequencies, so
phones are spectrally distinct and learnable from filterbank features.
Words are short phone sequences; two-stage models train on a rendered
phone corpus (frame labels) and rendered word clips (word labels).  All
generation is driven by explicit seeds: identical seeds give identical
samples, labels, and truths.

Real datasets in the Speech Commands layout (one folder per label
containing WAV clips) load through load_clip_directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .evaluation import Clip
from .features import AudioStream, FrontendConfig, extract_fbank, read_wav, write_wav
from .model import TdnnModel
from .training import LabeledFrameSet, word_labels_from_truth

# The public Speech Commands ten-command split; remaining labels are filler.
GSC10_KEYWORDS = ("yes", "no", "up", "down", "left", "right",
                  "on", "off", "stop", "go")

RAMP_MS = 5.0  # fade at phone edges, suppresses spectral splatter


@dataclass(frozen=True)
class ToyLanguage:
    """Phone inventory and lexicon for synthetic data."""

    phone_freqs: tuple  # per phone, (low_hz, high_hz)
    keyword_names: tuple
    keyword_phones: tuple  # one phone-id tuple per keyword
    filler_phones: tuple  # phone-id tuples for non-keyword words
    sample_rate: int = 16000

    @property
    def num_phones(self) -> int:
        return len(self.phone_freqs)

    @property
    def silence_id(self) -> int:
        return len(self.phone_freqs)

    @property
    def num_phone_classes(self) -> int:
        """Phones plus one silence class."""
        return len(self.phone_freqs) + 1


def make_language(num_phones: int = 24, num_keywords: int = 2,
                  num_fillers: int = 12, word_len: int = 4,
                  keyword_len: int = 6, seed: int = 7) -> ToyLanguage:
    """Build a toy language of distinct words.

    Keywords are keyword_len phones, fillers word_len; keywords longer
    than fillers mirror spotting a fixed phrase among short commands.
    """
    if num_phones < 3 or word_len < 1 or keyword_len < 1:
        raise ConfigError("language needs at least 3 phones and 1-phone words")
    rng = np.random.default_rng(seed)
    low = np.linspace(300.0, 2400.0, num_phones)
    high = np.linspace(2800.0, 6800.0, num_phones)[rng.permutation(num_phones)]
    freqs = tuple((float(a), float(b)) for a, b in zip(low, high))

    def draw_words(count: int, length: int, seen: set) -> list:
        words = []
        while len(words) < count:
            word = tuple(int(p) for p in rng.integers(0, num_phones, size=length))
            if len(set(word)) < min(length, 3) or word in seen:
                continue  # avoid degenerate or duplicate words
            seen.add(word)
            words.append(word)
        return words

    seen = set()
    keywords = draw_words(num_keywords, keyword_len, seen)
    fillers = draw_words(num_fillers, word_len, seen)
    return ToyLanguage(
        phone_freqs=freqs,
        keyword_names=tuple(f"kw{i + 1}" for i in range(num_keywords)),
        keyword_phones=tuple(keywords),
        filler_phones=tuple(fillers),
    )


def _phone_wave(freq_pair, num_samples: int, rng, sample_rate: int) -> np.ndarray:
    """Two jittered tones with random phase and a gentle edge ramp."""
    t = np.arange(num_samples) / sample_rate
    wave = np.zeros(num_samples)
    for freq, amp in zip(freq_pair, (0.12, 0.09)):
        jitter = rng.uniform(0.98, 1.02)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += amp * np.sin(2.0 * np.pi * freq * jitter * t + phase)
    wave *= rng.uniform(0.7, 1.3)
    ramp = min(int(sample_rate * RAMP_MS / 1000.0), num_samples // 2)
    if ramp > 0:
        env = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        wave[:ramp] *= env
        wave[-ramp:] *= env[::-1]
    return wave


def render_phone_ids(language: ToyLanguage, phone_ids, rng,
                     frames_per_phone=(7, 11), hop_len: int = 160):
    """(samples, per-sample phone ids) for a phone sequence.

    Each phone lasts a whole number of frame hops; silence_id renders
    as zeros.  Durations are drawn uniformly from frames_per_phone.
    """
    lo, hi = frames_per_phone
    if lo < 1 or lo > hi:
        raise ConfigError("bad frames_per_phone range")
    pieces = []
    ids = []
    for pid in phone_ids:
        frames = int(rng.integers(lo, hi + 1))
        n = frames * hop_len
        if pid == language.silence_id:
            pieces.append(np.zeros(n))
        elif 0 <= pid < language.num_phones:
            pieces.append(_phone_wave(language.phone_freqs[pid], n, rng,
                                      language.sample_rate))
        else:
            raise InputError(f"phone id {pid} out of range")
        ids.append(np.full(n, pid, dtype=np.int64))
    return np.concatenate(pieces), np.concatenate(ids)


def frame_labels(sample_ids: np.ndarray, frame_len: int = 400,
                 hop_len: int = 160) -> np.ndarray:
    """Per-frame phone labels: the phone at each analysis-window midpoint."""
    n = len(sample_ids)
    if n < frame_len:
        return np.zeros(0, dtype=np.int64)
    count = (n - frame_len) // hop_len + 1
    centers = np.arange(count) * hop_len + frame_len // 2
    return sample_ids[centers]


def phone_corpus(language: ToyLanguage, num_frames: int, seed: int,
                 frontend: FrontendConfig | None = None) -> LabeledFrameSet:
    """Random phone stream with silence gaps, as features plus frame labels."""
    frontend = frontend or FrontendConfig()
    if frontend.sample_rate != language.sample_rate:
        raise ConfigError("frontend and language sample rates differ")
    if num_frames < 1:
        raise InputError("num_frames must be positive")
    rng = np.random.default_rng(seed)
    need = (num_frames - 1) * frontend.hop_len + frontend.frame_len
    sil = language.silence_id
    pieces, ids = [], []
    total = 0
    while total < need:
        word_len = int(rng.integers(3, 7))
        seq = [int(p) for p in rng.integers(0, language.num_phones, size=word_len)]
        seq.append(sil)  # inter-word gap
        samples, sample_ids = render_phone_ids(language, seq, rng,
                                               hop_len=frontend.hop_len)
        pieces.append(samples)
        ids.append(sample_ids)
        total += len(samples)
    samples = np.concatenate(pieces)
    sample_ids = np.concatenate(ids)
    features = extract_fbank(AudioStream(samples=samples,
                                         sample_rate=language.sample_rate),
                             frontend)[:num_frames]
    labels = frame_labels(sample_ids, frontend.frame_len,
                          frontend.hop_len)[:num_frames]
    return LabeledFrameSet(features=features, phone_labels=labels)


def make_clip(language: ToyLanguage, label: int, rng,
              pad_s: float = 1.0, frontend: FrontendConfig | None = None):
    """One padded clip: (Clip, span) with span None for filler.

    label 0 draws a random filler word; label k >= 1 renders keyword k.
    The word sits at a seeded random frame offset inside pad_s of silence.
    The span is (keyword_index, start_frame, end_frame), end exclusive.
    """
    frontend = frontend or FrontendConfig()
    if label == 0:
        word = language.filler_phones[int(rng.integers(0, len(language.filler_phones)))]
    elif 1 <= label <= len(language.keyword_names):
        word = language.keyword_phones[label - 1]
    else:
        raise InputError(f"clip label {label} out of range")
    samples, _ = render_phone_ids(language, word, rng, hop_len=frontend.hop_len)
    total = int(round(pad_s * language.sample_rate))
    word_frames = len(samples) // frontend.hop_len
    total_frames = total // frontend.hop_len
    if word_frames + 4 > total_frames:
        raise InputError("clip padding too short for the rendered word")
    offset = int(rng.integers(2, total_frames - word_frames - 1))
    out = np.zeros(total)
    out[offset * frontend.hop_len : offset * frontend.hop_len + len(samples)] = samples
    clip = Clip(samples=out, label=label, sample_rate=language.sample_rate)
    span = None if label == 0 else (label - 1, offset, offset + word_frames)
    return clip, span


def clip_set(language: ToyLanguage, per_keyword: int, num_fillers: int,
             seed: int, pad_s: float = 1.0, num_silence: int = None):
    """(clips, spans) with per_keyword clips per keyword plus fillers.

    num_silence all-zero clips (default: one per four fillers) are mixed
    in as label 0 so silence regions are represented, not just words.
    """
    rng = np.random.default_rng(seed)
    if num_silence is None:
        num_silence = num_fillers // 4
    labels = [0] * num_fillers
    for k in range(len(language.keyword_names)):
        labels += [k + 1] * per_keyword
    clips, spans = [], []
    for label in labels:
        clip, span = make_clip(language, label, rng, pad_s=pad_s)
        clips.append(clip)
        spans.append(span)
    n = int(round(pad_s * language.sample_rate))
    for _ in range(num_silence):
        clips.append(Clip(samples=np.zeros(n), label=0,
                          sample_rate=language.sample_rate))
        spans.append(None)
    return clips, spans


def word_training_set(model: TdnnModel, clips, spans) -> list:
    """LabeledFrameSets with word targets from clip spans."""
    if len(clips) != len(spans):
        raise InputError("clips and spans must align")
    out = []
    for clip, span in zip(clips, spans):
        features = extract_fbank(
            AudioStream(samples=clip.samples, sample_rate=clip.sample_rate),
            model.frontend,
        )
        labels = word_labels_from_truth(len(features),
                                        [span] if span else [], model)
        out.append(LabeledFrameSet(features=features, word_labels=labels))
    return out


def load_clip_directory(root, keywords) -> list:
    """Clips from label-named folders of WAV files.

    Folder names present in keywords become labels 1..K in keyword
    order; every other folder is filler (0).  Files are read in sorted
    order so the result is stable.
    """
    keywords = tuple(keywords)
    if not os.path.isdir(root):
        raise InputError(f"{root}: not a directory")
    clips = []
    for folder in sorted(os.listdir(root)):
        path = os.path.join(root, folder)
        if not os.path.isdir(path):
            continue
        label = keywords.index(folder) + 1 if folder in keywords else 0
        for name in sorted(os.listdir(path)):
            if not name.lower().endswith(".wav"):
                continue
            stream = read_wav(os.path.join(path, name))
            clips.append(Clip(samples=stream.samples, label=label,
                              sample_rate=stream.sample_rate))
    if not clips:
        raise InputError(f"{root}: no WAV clips under label folders")
    return clips


def write_clip_directory(root, language: ToyLanguage, clips) -> None:
    """Write clips as label-named folders of WAV files."""
    os.makedirs(root, exist_ok=True)
    counters = {}
    for clip in clips:
        name = "filler" if clip.label == 0 else language.keyword_names[clip.label - 1]
        folder = os.path.join(root, name)
        os.makedirs(folder, exist_ok=True)
        idx = counters.get(name, 0)
        counters[name] = idx + 1
        write_wav(os.path.join(folder, f"{name}_{idx:04d}.wav"),
                  AudioStream(samples=clip.samples, sample_rate=clip.sample_rate))
