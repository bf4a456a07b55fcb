"""Log-Mel filterbank frontend.

Converts mono PCM audio into 41-dimensional log-Mel feature frames at a
10 ms hop, plus the corpus-level mean/variance normalizer applied before
the network.  A streaming extractor with carry-over state produces frame
sequences identical to one-shot extraction regardless of chunking.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, InputError, InsufficientDataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrontendConfig:
    """Feature extraction parameters.

    Defaults: 16 kHz mono input, 25 ms Hamming windows at a 10 ms hop,
    41 triangular mel filters from 20 Hz to Nyquist, natural log with an
    energy floor.
    """

    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    num_filters: int = 41
    preemphasis: float = 0.97
    low_hz: float = 20.0
    high_hz: float = 0.0  # 0 means Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.frame_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("frame_ms and hop_ms must be positive")
        if self.hop_ms > self.frame_ms:
            raise ConfigError("hop_ms must not exceed frame_ms")
        if self.num_filters < 1:
            raise ConfigError("num_filters must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError("preemphasis must be in [0, 1)")
        nyquist = self.sample_rate / 2.0
        high = self.high_hz or nyquist
        if not 0.0 <= self.low_hz < high <= nyquist:
            raise ConfigError("mel band must satisfy 0 <= low_hz < high_hz <= Nyquist")

    @property
    def frame_len(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def fft_size(self) -> int:
        n = 1
        while n < self.frame_len:
            n *= 2
        return n

    def frame_count(self, num_samples: int) -> int:
        """Number of full frames in a signal of the given length."""
        if num_samples < self.frame_len:
            return 0
        return (num_samples - self.frame_len) // self.hop_len + 1

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"frontend.{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, pairs: dict) -> "FrontendConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"frontend.{f.name}"
            if key in pairs:
                kwargs[f.name] = _parse_scalar(pairs[key])
        return cls(**kwargs)


def _parse_scalar(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


@dataclass(frozen=True)
class AudioStream:
    """Mono PCM audio: float samples in [-1, 1] plus the sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InputError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioStream:
    """Read a RIFF WAV file (16-bit PCM, mono, little-endian)."""
    with wave.open(str(path), "rb") as wf:
        channels = wf.getnchannels()
        width = wf.getsampwidth()
        rate = wf.getframerate()
        n = wf.getnframes()
        if channels != 1:
            raise ConfigError(f"{path}: expected mono audio, got {channels} channels")
        if width != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
        raw = wf.readframes(n)
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioStream(samples=samples, sample_rate=rate)


def write_wav(path, stream: AudioStream) -> None:
    """Write an AudioStream as 16-bit mono PCM WAV."""
    clipped = np.clip(stream.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(stream.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int, fft_size: int, sample_rate: int,
                   low_hz: float, high_hz: float) -> np.ndarray:
    """Triangular mel filter weights, shape (fft_size // 2 + 1, num_filters).

    Filter centers are spaced uniformly on the mel scale between low_hz
    and high_hz; each filter is a triangle over FFT bin frequencies.
    """
    num_bins = fft_size // 2 + 1
    bin_hz = np.arange(num_bins, dtype=np.float64) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), num_filters + 2))
    weights = np.zeros((num_bins, num_filters), dtype=np.float64)
    for k in range(num_filters):
        left, center, right = edges[k], edges[k + 1], edges[k + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        weights[:, k] = np.maximum(0.0, np.minimum(up, down))
    return weights


class StreamingExtractor:
    """Incremental FBANK extraction with chunk carry-over.

    Feeding a signal in arbitrary chunk sizes yields the exact frame
    sequence of one-shot extraction.  Instances hold mutable state and
    are single-threaded; use one per audio stream.
    """

    def __init__(self, config: FrontendConfig | None = None):
        self.config = config or FrontendConfig()
        c = self.config
        high = c.high_hz or c.sample_rate / 2.0
        self._mel = mel_filterbank(c.num_filters, c.fft_size, c.sample_rate, c.low_hz, high)
        self._window = np.hamming(c.frame_len)
        self._buf = np.empty(0, dtype=np.float64)  # pre-emphasized pending samples
        self._carry = 0.0  # last raw sample of the previous chunk
        self._started = False
        self.frames_emitted = 0

    def process(self, samples) -> np.ndarray:
        """Consume a chunk of raw samples, return any completed frames (n, num_filters)."""
        c = self.config
        chunk = np.asarray(samples, dtype=np.float64)
        if chunk.size:
            prev = np.concatenate(([self._carry if self._started else 0.0], chunk[:-1]))
            emphasized = chunk - c.preemphasis * prev
            if not self._started:
                emphasized[0] = chunk[0]  # no sample before the stream start
                self._started = True
            self._carry = chunk[-1]
            self._buf = np.concatenate((self._buf, emphasized))
        n_frames = c.frame_count(len(self._buf))
        if n_frames == 0:
            return np.empty((0, c.num_filters), dtype=np.float32)
        frames = np.lib.stride_tricks.sliding_window_view(self._buf, c.frame_len)[
            : n_frames * c.hop_len : c.hop_len
        ]
        feats = self._filterbank_log(frames)
        self._buf = self._buf[n_frames * c.hop_len :].copy()
        self.frames_emitted += n_frames
        return feats

    def _filterbank_log(self, frames: np.ndarray) -> np.ndarray:
        c = self.config
        spectrum = np.fft.rfft(frames * self._window, n=c.fft_size, axis=1)
        power = spectrum.real**2 + spectrum.imag**2
        energy = power @ self._mel
        return np.log(np.maximum(energy, c.log_floor)).astype(np.float32)


def extract_fbank(audio: AudioStream, config: FrontendConfig | None = None) -> np.ndarray:
    """One-shot FBANK extraction: (num_frames, num_filters) float32, un-normalized.

    Audio shorter than one frame yields an empty (0, num_filters) array.
    """
    config = config or FrontendConfig()
    if audio.sample_rate != config.sample_rate:
        raise ConfigError(
            f"audio is {audio.sample_rate} Hz but the frontend expects "
            f"{config.sample_rate} Hz; resampling is not supported"
        )
    return StreamingExtractor(config).process(audio.samples)


@dataclass(frozen=True)
class FeatureNormalizer:
    """Per-dimension affine normalization fitted on a feature corpus."""

    mean: np.ndarray
    inv_std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        inv_std = np.asarray(self.inv_std, dtype=np.float64)
        if mean.shape != inv_std.shape or mean.ndim != 1:
            raise InputError("normalizer mean/inv_std must be 1-D with equal shape")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(inv_std))):
            raise InputError("normalizer statistics must be finite")
        if np.any(inv_std <= 0):
            raise InputError("inv_std entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "inv_std", inv_std)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, dim: int) -> "FeatureNormalizer":
        return cls(mean=np.zeros(dim), inv_std=np.ones(dim))

    def apply(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.shape[-1] != self.dim:
            raise InputError(f"expected {self.dim}-dim frames, got {frames.shape[-1]}")
        return (frames - self.mean) * self.inv_std

    def invert(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.shape[-1] != self.dim:
            raise InputError(f"expected {self.dim}-dim frames, got {frames.shape[-1]}")
        return frames / self.inv_std + self.mean


def fit_normalizer(frames: np.ndarray, eps: float = 1e-8) -> FeatureNormalizer:
    """Fit per-dimension mean and 1/sqrt(var + eps) over a feature corpus.

    Uses the population variance; requires at least 2 frames.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise InsufficientDataError(
            f"normalizer needs at least 2 frames, got shape {frames.shape}"
        )
    mean = frames.mean(axis=0)
    var = frames.var(axis=0)
    return FeatureNormalizer(mean=mean, inv_std=1.0 / np.sqrt(var + eps))
