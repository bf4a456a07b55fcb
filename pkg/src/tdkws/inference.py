"""Streaming and offline inference for the two-stage spotter.

The engine consumes feature frames one at a time.  Each arriving frame
may trigger a phone network step (every stride-th frame once context is
available), which may complete a pooled block, which advances the word
network's input window.  Once that window is full the word network is
evaluated at every phone step, so the multiplication counter matches the
analytic per-second cost; a posterior row is recorded only when the
window content actually moved, which happens every fourth input frame in
every skip mode.

Detection smooths the keyword posteriors with a causal moving average
and fires on local maxima.  Maxima within the refractory distance are
merged keeping the taller one, and the decision threshold filters
candidates only when they are flushed, so the event set at a higher
threshold is always a subset of the set at a lower one.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, CounterDisabledError, InputError
from .model import TdnnModel

logger = logging.getLogger(__name__)

SKIP_MODES = ("none", "2", "4")
DEFAULT_THRESHOLD = 0.5
DEFAULT_REFRACTORY = 30
DEFAULT_SMOOTH_WIDTH = 9


def parse_skip(skip) -> int:
    """Map a skip mode name ("none", "2", "4") to the phone step stride."""
    names = {"none": 1, "1": 1, "2": 2, "4": 4}
    key = str(skip)
    if key not in names:
        raise ConfigError(f"unknown skip mode {skip!r}; choose from none, 2, 4")
    return names[key]


def skip_name(stride: int) -> str:
    return "none" if stride == 1 else str(stride)


@dataclass(frozen=True)
class SkipGeometry:
    """Word-stage geometry after frame skipping.

    stride: input frames between phone network steps.
    pool_window: phone steps combined into one pooled block (1 = no pooling).
    pool_step: phone steps between consecutive pooled blocks.
    """

    stride: int
    pool_window: int
    pool_step: int

    @classmethod
    def from_model(cls, model: TdnnModel, skip) -> "SkipGeometry":
        stride = parse_skip(skip)
        if model.pool_stride % stride != 0:
            raise ConfigError(
                f"skip stride {stride} must divide the pool stride {model.pool_stride}"
            )
        pool_step = model.pool_stride // stride
        # Once steps land pool_stride frames apart, pooling degenerates to
        # passing each phone output through.
        pool_window = model.pool_size if pool_step > 1 else 1
        return cls(stride=stride, pool_window=pool_window, pool_step=pool_step)

    def output_frame(self, model: TdnnModel, k: int) -> int:
        """Input frame index at which word output k becomes available."""
        last_step = self.pool_step * (k + model.pool_count - 1) + self.pool_window - 1
        return self.stride * last_step + model.context_frames - 1

    def min_frames(self, model: TdnnModel) -> int:
        """Fewest input frames that yield one word output."""
        return self.output_frame(model, 0) + 1


def _check_vector(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape != (dim,):
        raise InputError(f"{what} must have shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{what} contains non-finite values")
    return x


def phone_forward(model: TdnnModel, spliced: np.ndarray) -> np.ndarray:
    """Run the phone network on one spliced context block."""
    x = _check_vector(spliced, model.splice_dim, "spliced input")
    for layer in model.phone_layers:
        x = layer.forward(x)
    return x


def pool_max(window, size: int = None) -> np.ndarray:
    """Elementwise maximum over a full pooling window of vectors."""
    vectors = list(window)
    if size is not None and len(vectors) != size:
        raise InputError(f"pooling window must hold {size} vectors, got {len(vectors)}")
    if not vectors:
        raise InputError("pooling window is empty")
    return np.maximum.reduce(vectors)


def word_forward(model: TdnnModel, window: np.ndarray) -> np.ndarray:
    """Run the word network on one concatenated pooled window."""
    x = _check_vector(window, model.word_input_dim, "pooled window")
    for layer in model.word_layers:
        x = layer.forward(x)
    return x


def smooth_scores(raw: np.ndarray, width: int = DEFAULT_SMOOTH_WIDTH) -> np.ndarray:
    """Causal moving average over posterior rows, float64 output.

    Row i averages rows max(0, i - width + 1) .. i, so early rows use
    however much history exists.
    """
    raw = np.asarray(raw)
    if width < 1:
        raise ConfigError(f"smoothing width must be >= 1, got {width}")
    out = np.empty(raw.shape, dtype=np.float64)
    for i in range(raw.shape[0]):
        out[i] = np.mean(raw[max(0, i - width + 1) : i + 1], axis=0, dtype=np.float64)
    return out


@dataclass(frozen=True)
class DetectionEvent:
    """One keyword firing: frame/time of the posterior peak and its score."""

    keyword: str
    frame: int
    time_s: float
    score: float


@dataclass(frozen=True)
class TraceEntry:
    frame_index: int
    raw: np.ndarray       # float32, one score per class, filler first
    smoothed: np.ndarray  # float64, same layout


@dataclass(frozen=True)
class PosteriorTrace:
    """Word posterior history: one row per advancement of the word window.

    Rows carry the full class posterior in network output order
    (keywords first, filler in the last column), raw and smoothed.
    """

    classes: tuple
    frame_indices: np.ndarray  # int64 (n,)
    raw: np.ndarray            # float32 (n, K + 1)
    smoothed: np.ndarray       # float64 (n, K + 1)
    hop_s: float = 0.01

    def __len__(self) -> int:
        return len(self.frame_indices)

    @property
    def keywords(self) -> tuple:
        return self.classes[:-1]

    def keyword_column(self, keyword: str) -> int:
        try:
            return self.classes.index(keyword)
        except ValueError:
            raise InputError(f"trace has no keyword {keyword!r}") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            header = ["frame_index"]
            header += [f"raw_{c}" for c in self.classes]
            header += [f"smoothed_{c}" for c in self.classes]
            writer.writerow(header)
            for i in range(len(self)):
                row = [int(self.frame_indices[i])]
                row += [repr(float(v)) for v in self.raw[i]]
                row += [repr(float(v)) for v in self.smoothed[i]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, hop_s: float = 0.01) -> "PosteriorTrace":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty trace file") from None
            if not header or header[0] != "frame_index":
                raise InputError(f"{path}: not a posterior trace file")
            classes = tuple(h[len("raw_"):] for h in header if h.startswith("raw_"))
            expect = 1 + 2 * len(classes)
            if not classes or len(header) != expect:
                raise InputError(f"{path}: malformed trace header")
            frames, raws, smooths = [], [], []
            for row in reader:
                if len(row) != expect:
                    raise InputError(f"{path}: malformed trace row {row!r}")
                frames.append(int(row[0]))
                c = len(classes)
                raws.append([float(v) for v in row[1 : 1 + c]])
                smooths.append([float(v) for v in row[1 + c :]])
        c = len(classes)
        return cls(
            classes=classes,
            frame_indices=np.array(frames, dtype=np.int64),
            raw=np.array(raws, dtype=np.float32).reshape(len(frames), c),
            smoothed=np.array(smooths, dtype=np.float64).reshape(len(frames), c),
            hop_s=hop_s,
        )


def write_events_jsonl(events, path) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps({
                "keyword": ev.keyword,
                "frame": int(ev.frame),
                "time_s": float(ev.time_s),
                "score": float(ev.score),
            }) + "\n")


def read_events_jsonl(path) -> list:
    events = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            events.append(DetectionEvent(
                keyword=rec["keyword"],
                frame=int(rec["frame"]),
                time_s=float(rec["time_s"]),
                score=float(rec["score"]),
            ))
    return events


def peak_candidates(frames, scores) -> list:
    """Local maxima of one keyword's smoothed scores as (frame, score) pairs.

    A peak rises (or starts the trace) and strictly falls afterwards, so a
    plateau yields its rightmost element.  The final entry is a peak if it
    did not fall from its predecessor.
    """
    n = len(scores)
    cands = []
    for i in range(n):
        rising = i == 0 or scores[i] >= scores[i - 1]
        if not rising:
            continue
        if i + 1 == n or scores[i] > scores[i + 1]:
            cands.append((int(frames[i]), float(scores[i])))
    return cands


def merge_candidates(cands, refractory: int = DEFAULT_REFRACTORY) -> list:
    """Collapse candidates within the refractory distance, keeping the taller.

    Ties keep the earlier candidate.  Input must be in frame order.
    """
    merged = []
    pending = None
    for cand in cands:
        if pending is None:
            pending = cand
        elif cand[0] - pending[0] > refractory:
            merged.append(pending)
            pending = cand
        elif cand[1] > pending[1]:
            pending = cand
    if pending is not None:
        merged.append(pending)
    return merged


def candidates_from_trace(trace: PosteriorTrace,
                          refractory: int = DEFAULT_REFRACTORY) -> dict:
    """Merged threshold-independent candidates per keyword."""
    out = {}
    for k, name in enumerate(trace.keywords):
        cands = peak_candidates(trace.frame_indices, trace.smoothed[:, k])
        out[name] = merge_candidates(cands, refractory)
    return out


def events_from_trace(trace: PosteriorTrace, threshold: float = DEFAULT_THRESHOLD,
                      refractory: int = DEFAULT_REFRACTORY) -> list:
    """Detection events from a posterior trace, sorted by frame then keyword."""
    order = {name: k for k, name in enumerate(trace.keywords)}
    events = []
    for name, cands in candidates_from_trace(trace, refractory).items():
        for frame, score in cands:
            if score >= threshold:
                events.append(DetectionEvent(
                    keyword=name,
                    frame=frame,
                    time_s=frame * trace.hop_s,
                    score=score,
                ))
    events.sort(key=lambda ev: (ev.frame, order[ev.keyword]))
    return events


class _KeywordTrigger:
    """Incremental peak detection and merging for one keyword."""

    def __init__(self, keyword: str, threshold: float, refractory: int, hop_s: float):
        self.keyword = keyword
        self.threshold = threshold
        self.refractory = refractory
        self.hop_s = hop_s
        self._count = 0
        self._prev_frame = 0
        self._prev_score = 0.0
        self._rising = True
        self._pending = None

    def _flush(self) -> list:
        cand, self._pending = self._pending, None
        if cand[1] >= self.threshold:
            return [DetectionEvent(
                keyword=self.keyword,
                frame=cand[0],
                time_s=cand[0] * self.hop_s,
                score=cand[1],
            )]
        return []

    def _offer(self, cand) -> list:
        out = []
        if self._pending is None:
            self._pending = cand
        elif cand[0] - self._pending[0] > self.refractory:
            out = self._flush()
            self._pending = cand
        elif cand[1] > self._pending[1]:
            self._pending = cand
        return out

    def update(self, frame: int, score: float) -> list:
        events = []
        if self._count > 0 and self._rising and self._prev_score > score:
            events += self._offer((self._prev_frame, self._prev_score))
        if self._count > 0:
            self._rising = score >= self._prev_score
        self._prev_frame = frame
        self._prev_score = float(score)
        self._count += 1
        # Any later candidate would land beyond the refractory distance, so
        # the pending peak is final: flush for bounded latency.
        if self._pending is not None and frame - self._pending[0] > self.refractory:
            events += self._flush()
        return events

    def finish(self) -> list:
        events = []
        if self._count > 0 and self._rising:
            events += self._offer((self._prev_frame, self._prev_score))
        if self._pending is not None:
            events += self._flush()
        return events


@dataclass
class StageCount:
    evals: int = 0
    mults: int = 0
    first_frame: int = -1


class MultCounter:
    """Running multiplication counts per network stage."""

    def __init__(self):
        self.stages = {}

    def add(self, stage: str, mults: int, frame: int) -> None:
        sc = self.stages.setdefault(stage, StageCount())
        if sc.evals == 0:
            sc.first_frame = frame
        sc.evals += 1
        sc.mults += mults

    def total_mults(self) -> int:
        return sum(sc.mults for sc in self.stages.values())


@dataclass(frozen=True)
class StepResult:
    """What happened while absorbing one feature frame."""

    frame_index: int
    phone_evaluated: bool = False
    word_evaluated: bool = False
    word_probs: np.ndarray = None
    trace_entry: TraceEntry = None
    events: tuple = ()


class StreamState:
    """Incremental spotting over a single feature stream.

    Feed un-normalized filterbank frames with push_frame; call finalize
    once the stream ends to flush trailing detections.  Instances are
    single-use and single-threaded.
    """

    def __init__(self, model: TdnnModel, skip="none",
                 threshold: float = DEFAULT_THRESHOLD,
                 refractory: int = DEFAULT_REFRACTORY,
                 smooth_width: int = DEFAULT_SMOOTH_WIDTH,
                 count_mults: bool = True):
        if refractory < 0:
            raise ConfigError("refractory must be non-negative")
        if smooth_width < 1:
            raise ConfigError("smoothing width must be >= 1")
        self.model = model
        self.geometry = SkipGeometry.from_model(model, skip)
        self.skip = skip_name(self.geometry.stride)
        self.threshold = float(threshold)
        self.refractory = int(refractory)
        self.hop_s = model.frontend.hop_ms / 1000.0
        self._phone_mults = sum(l.weight_count for l in model.phone_layers)
        self._word_mults = sum(l.weight_count for l in model.word_layers)
        self._features = deque(maxlen=model.context_frames)
        self._pool_buf = deque(maxlen=self.geometry.pool_window)
        self._window = deque(maxlen=model.pool_count)
        self._smooth_buf = deque(maxlen=smooth_width)
        self._triggers = [
            _KeywordTrigger(name, self.threshold, self.refractory, self.hop_s)
            for name in model.keywords
        ]
        self._order = {name: k for k, name in enumerate(model.keywords)}
        self._entries = []
        self._events = []
        self._counter = MultCounter() if count_mults else None
        self._steps = 0
        self._frames = 0
        self._finalized = False

    @property
    def frames_pushed(self) -> int:
        return self._frames

    @property
    def events(self) -> tuple:
        return tuple(self._events)

    @property
    def mult_counter(self) -> MultCounter:
        if self._counter is None:
            raise CounterDisabledError("this stream was opened with count_mults=False")
        return self._counter

    def push_frame(self, frame) -> StepResult:
        if self._finalized:
            raise InputError("stream already finalized")
        model = self.model
        frame = np.asarray(frame, dtype=np.float32)
        if frame.shape != (model.num_mel,):
            raise InputError(
                f"expected a ({model.num_mel},) feature frame, got shape {frame.shape}"
            )
        if not np.all(np.isfinite(frame)):
            raise InputError(f"non-finite feature frame at index {self._frames}")
        normalized = model.normalizer.apply(frame).astype(np.float32)
        self._features.append(normalized)
        t = self._frames
        self._frames += 1

        g = self.geometry
        leftmost = t - (model.context_frames - 1)
        if leftmost < 0 or leftmost % g.stride != 0:
            return StepResult(frame_index=t)

        spliced = np.concatenate(self._features)
        phone_out = phone_forward(model, spliced)
        if self._counter is not None:
            self._counter.add("phone", self._phone_mults, t)
        self._steps += 1
        self._pool_buf.append(phone_out)

        advanced = False
        if (self._steps >= g.pool_window
                and (self._steps - g.pool_window) % g.pool_step == 0):
            pooled = pool_max(self._pool_buf, g.pool_window)
            self._window.append(pooled)
            advanced = True

        if len(self._window) < model.pool_count:
            return StepResult(frame_index=t, phone_evaluated=True)

        word_in = np.concatenate(self._window)
        probs = word_forward(model, word_in)
        if self._counter is not None:
            self._counter.add("word", self._word_mults, t)
        if not np.all(np.isfinite(probs)):
            raise DivergenceError(f"non-finite word posterior at frame {t}")

        entry = None
        new_events = ()
        if advanced:
            self._smooth_buf.append(probs)
            smoothed = np.mean(np.stack(self._smooth_buf), axis=0, dtype=np.float64)
            entry = TraceEntry(frame_index=t, raw=probs, smoothed=smoothed)
            self._entries.append(entry)
            events = []
            for k, trig in enumerate(self._triggers):
                events += trig.update(t, smoothed[k])
            events.sort(key=lambda ev: (ev.frame, self._order[ev.keyword]))
            self._events += events
            new_events = tuple(events)

        return StepResult(
            frame_index=t,
            phone_evaluated=True,
            word_evaluated=True,
            word_probs=probs,
            trace_entry=entry,
            events=new_events,
        )

    def finalize(self) -> list:
        """Flush trailing detections; the stream accepts no more frames."""
        if self._finalized:
            return []
        self._finalized = True
        events = []
        for trig in self._triggers:
            events += trig.finish()
        events.sort(key=lambda ev: (ev.frame, self._order[ev.keyword]))
        self._events += events
        return events

    def trace(self) -> PosteriorTrace:
        n = len(self._entries)
        c = self.model.num_outputs
        frames = np.array([e.frame_index for e in self._entries], dtype=np.int64)
        raw = np.array([e.raw for e in self._entries], dtype=np.float32).reshape(n, c)
        smoothed = np.array([e.smoothed for e in self._entries],
                            dtype=np.float64).reshape(n, c)
        return PosteriorTrace(
            classes=self.model.output_names,
            frame_indices=frames,
            raw=raw,
            smoothed=smoothed,
            hop_s=self.hop_s,
        )


def set_skip_mode(state: StreamState, skip) -> None:
    """Select a stream's frame-skipping mode before any frame is pushed.

    Switching mid-stream would leave the pooling windows misaligned, so
    it is rejected rather than silently resynchronized.
    """
    g = SkipGeometry.from_model(state.model, skip)
    if g == state.geometry:
        return
    if state.frames_pushed > 0:
        raise InputError("skip mode can only change before streaming starts")
    state.geometry = g
    state.skip = skip_name(g.stride)
    state._pool_buf = deque(maxlen=g.pool_window)


def stream_detect(model: TdnnModel, features, skip="none",
                  threshold: float = DEFAULT_THRESHOLD,
                  refractory: int = DEFAULT_REFRACTORY,
                  smooth_width: int = DEFAULT_SMOOTH_WIDTH,
                  count_mults: bool = False):
    """Run the streaming engine over a whole feature array.

    Returns (trace, events, state) with the stream finalized.
    """
    state = StreamState(model, skip=skip, threshold=threshold,
                        refractory=refractory, smooth_width=smooth_width,
                        count_mults=count_mults)
    features = np.asarray(features, dtype=np.float32)
    for frame in features:
        state.push_frame(frame)
    state.finalize()
    return state.trace(), list(state.events), state


def batch_forward(model: TdnnModel, features, skip="none",
                  smooth_width: int = DEFAULT_SMOOTH_WIDTH) -> PosteriorTrace:
    """Offline pass over a complete feature array.

    Produces exactly the trace the streaming engine yields on the same
    frames: the two paths share the per-vector kernels and differ only
    in window bookkeeping.
    """
    g = SkipGeometry.from_model(model, skip)
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[1] != model.num_mel:
        raise InputError(
            f"expected (n, {model.num_mel}) features, got shape {features.shape}"
        )
    classes = model.output_names
    hop_s = model.frontend.hop_ms / 1000.0
    empty = PosteriorTrace(
        classes=classes,
        frame_indices=np.empty(0, dtype=np.int64),
        raw=np.empty((0, len(classes)), dtype=np.float32),
        smoothed=np.empty((0, len(classes)), dtype=np.float64),
        hop_s=hop_s,
    )
    n = features.shape[0]
    ctx = model.context_frames
    if n < ctx:
        return empty
    normalized = model.normalizer.apply(features).astype(np.float32)

    blocks = np.lib.stride_tricks.sliding_window_view(normalized, ctx, axis=0)
    # window axis comes last: (n - ctx + 1, num_mel, ctx) -> step, frame, dim
    blocks = blocks.transpose(0, 2, 1)[:: g.stride]
    spliced = np.ascontiguousarray(blocks).reshape(blocks.shape[0], ctx * model.num_mel)
    phone_out = np.stack([phone_forward(model, row) for row in spliced])

    steps = phone_out.shape[0]
    if steps < g.pool_window:
        return empty
    windows = np.lib.stride_tricks.sliding_window_view(phone_out, g.pool_window, axis=0)
    pooled = windows[:: g.pool_step].max(axis=-1)

    n_out = pooled.shape[0] - model.pool_count + 1
    if n_out < 1:
        return empty
    raw = np.empty((n_out, len(classes)), dtype=np.float32)
    frames = np.empty(n_out, dtype=np.int64)
    for k in range(n_out):
        word_in = np.ascontiguousarray(pooled[k : k + model.pool_count]).reshape(-1)
        raw[k] = word_forward(model, word_in)
        frames[k] = g.output_frame(model, k)
    return PosteriorTrace(
        classes=classes,
        frame_indices=frames,
        raw=raw,
        smoothed=smooth_scores(raw, smooth_width),
        hop_s=hop_s,
    )
