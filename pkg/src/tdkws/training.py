"""Two-stage supervised training.

Stage one trains the phone network on per-frame phone targets with a
softmax over its final linear layer; that layer is kept and only the
softmax is dropped for inference.  Stage two builds a fresh word network
on top of the pretrained phone layers and fine-tunes the whole model on
keyword targets (the phone layers can be frozen instead).

All gradients are derived here by reverse mode through the dense chain,
the time max-pool (subgradient to the argmax element, ties to the lowest
time index), and the softmax cross-entropy.  A 64-bit mode exists for
finite-difference verification; training runs in 32-bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, InputError
from .model import DenseLayer, TdnnModel, build_default, init_layer, softmax

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    freeze_phone_nn: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")


@dataclass
class LabeledFrameSet:
    """One utterance: feature frames plus whichever labels a stage needs.

    phone_labels gives one target per frame.  word_labels gives one
    target per word output position (stride 4 over frames, receptive
    field per the model geometry); the last class index, equal to the
    keyword count, means filler.
    """

    features: np.ndarray
    phone_labels: np.ndarray = None
    word_labels: np.ndarray = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.features.shape}")
        if self.phone_labels is not None:
            self.phone_labels = np.asarray(self.phone_labels, dtype=np.int64)
            if self.phone_labels.shape != (len(self.features),):
                raise InputError("phone_labels must give one label per frame")
        if self.word_labels is not None:
            self.word_labels = np.asarray(self.word_labels, dtype=np.int64)
            if self.word_labels.ndim != 1:
                raise InputError("word_labels must be 1-D")


def receptive_field_frames(model: TdnnModel) -> int:
    """Input frames feeding one word output (no frame skipping)."""
    last_step = model.pool_stride * (model.pool_count - 1) + model.pool_size - 1
    return last_step + model.context_frames


def word_output_count(model: TdnnModel, num_frames: int) -> int:
    rf = receptive_field_frames(model)
    if num_frames < rf:
        return 0
    return (num_frames - rf) // model.pool_stride + 1


def word_labels_from_truth(num_frames: int, spans, model: TdnnModel) -> np.ndarray:
    """Per-output targets from keyword spans.

    spans: (keyword_index, start_frame, end_frame) with end exclusive.
    An output whose receptive field covers at least half of a span is
    labeled with that keyword's output slot (largest overlap wins, then
    the earlier span); everything else is the filler slot, index
    len(model.keywords).
    """
    rf = receptive_field_frames(model)
    filler = len(model.keywords)
    n_out = word_output_count(model, num_frames)
    labels = np.full(n_out, filler, dtype=np.int64)
    for k in range(n_out):
        lo = k * model.pool_stride
        hi = lo + rf
        best = (0.0, filler)
        for ki, start, end in spans:
            if end <= start:
                raise InputError(f"empty keyword span ({ki}, {start}, {end})")
            overlap = min(hi, end) - max(lo, start)
            if overlap >= 0.5 * (end - start) and overlap > best[0]:
                best = (overlap, ki)
        labels[k] = best[1]
    return labels


def phone_samples(datasets, model: TdnnModel):
    """Normalized spliced inputs and center-frame targets for stage one."""
    ctx = model.context_frames
    xs, ys = [], []
    for item in datasets:
        if item.phone_labels is None:
            raise InputError("phone training needs phone_labels on every utterance")
        n = len(item.features)
        if n < ctx:
            continue
        if item.phone_labels.min() < 0 or item.phone_labels.max() >= model.num_phones:
            raise InputError(
                f"phone labels must lie in [0, {model.num_phones})"
            )
        normalized = model.normalizer.apply(item.features).astype(np.float32)
        view = np.lib.stride_tricks.sliding_window_view(normalized, ctx, axis=0)
        spliced = np.ascontiguousarray(view.transpose(0, 2, 1))
        xs.append(spliced.reshape(n - ctx + 1, ctx * model.num_mel))
        ys.append(item.phone_labels[model.context_past : n - model.context_future])
    if not xs:
        raise InputError("no utterance is long enough for the context window")
    return np.concatenate(xs), np.concatenate(ys)


def word_samples(datasets, model: TdnnModel):
    """Raw receptive-field windows and their targets for stage two."""
    rf = receptive_field_frames(model)
    xs, ys = [], []
    for item in datasets:
        if item.word_labels is None:
            raise InputError("word training needs word_labels on every utterance")
        n_out = word_output_count(model, len(item.features))
        if len(item.word_labels) != n_out:
            raise InputError(
                f"utterance of {len(item.features)} frames yields {n_out} word "
                f"outputs but has {len(item.word_labels)} labels"
            )
        if n_out and (item.word_labels.min() < 0
                      or item.word_labels.max() > len(model.keywords)):
            raise InputError(
                f"word labels must lie in [0, {len(model.keywords)}]"
            )
        for k in range(n_out):
            lo = k * model.pool_stride
            xs.append(item.features[lo : lo + rf])
            ys.append(item.word_labels[k])
    if not xs:
        raise InputError("no utterance is long enough for one word output")
    return np.stack(xs), np.array(ys, dtype=np.int64)


def _params(layers, dtype):
    return [(np.asarray(l.weights, dtype=dtype), np.asarray(l.bias, dtype=dtype),
             l.activation) for l in layers]


def _chain_forward(params, x):
    acts = [x]
    for weights, bias, act in params:
        x = x @ weights + bias
        if act == "relu":
            x = np.maximum(x, 0.0)
        acts.append(x)
    return acts


def _chain_backward(params, acts, dout):
    grads = [None] * len(params)
    for i in reversed(range(len(params))):
        weights, _, act = params[i]
        if act == "relu":
            dout = dout * (acts[i + 1] > 0)
        grads[i] = (acts[i].T @ dout, dout.sum(axis=0))
        dout = dout @ weights.T
    return grads, dout


def _softmax_ce(logits, labels):
    probs = softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise DivergenceError("non-finite network output in the forward pass")
    picked = probs[np.arange(len(labels)), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    return loss, dlogits, correct


def _zero_grads(layers, dtype):
    return [(np.zeros_like(l.weights, dtype=dtype), np.zeros_like(l.bias, dtype=dtype))
            for l in layers]


def _word_graph_forward(model: TdnnModel, features, dtype):
    """Shared forward pass for the full network on receptive-field windows."""
    features = np.asarray(features)
    if features.ndim != 3:
        raise InputError(f"expected (batch, frames, dims) features, got {features.shape}")
    batch, frames, dims = features.shape
    if batch < 1:
        raise InputError("batch must be nonempty")
    if dims != model.num_mel:
        raise InputError(f"expected {model.num_mel}-dim frames, got {dims}")
    rf = receptive_field_frames(model)
    if frames != rf:
        raise InputError(f"windows must span {rf} frames, got {frames}")
    x = (model.normalizer.apply(features.astype(np.float64))).astype(dtype)

    ctx = model.context_frames
    positions = frames - ctx + 1
    view = np.lib.stride_tricks.sliding_window_view(x, ctx, axis=1)
    spliced = np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(
        batch * positions, ctx * dims
    )
    phone_params = _params(model.phone_layers, dtype)
    phone_acts = _chain_forward(phone_params, spliced)
    phone_out = phone_acts[-1].reshape(batch, positions, model.num_phones)

    windows = np.lib.stride_tricks.sliding_window_view(
        phone_out, model.pool_size, axis=1
    )[:, :: model.pool_stride]
    pool_idx = windows.argmax(axis=-1)  # first maximum: lowest time index
    pooled = np.take_along_axis(windows, pool_idx[..., None], axis=-1)[..., 0]
    concat = pooled.reshape(batch, model.pool_count * model.num_phones)

    word_params = _params(model.word_layers, dtype)
    word_acts = _chain_forward(word_params, concat)
    return {
        "batch": batch,
        "positions": positions,
        "phone_params": phone_params,
        "phone_acts": phone_acts,
        "pool_idx": pool_idx,
        "word_params": word_params,
        "word_acts": word_acts,
    }


def _word_batch_step(model: TdnnModel, features, labels, dtype,
                     freeze_phone_nn: bool):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or (len(labels) and
                            (labels.min() < 0 or labels.max() >= model.num_outputs)):
        raise InputError(f"labels must lie in [0, {model.num_outputs})")
    cache = _word_graph_forward(model, features, dtype)
    if labels.shape != (cache["batch"],):
        raise InputError("labels must give one target per window")
    loss, dlogits, correct = _softmax_ce(cache["word_acts"][-1], labels)
    dlogits = dlogits.astype(dtype)
    word_grads, dconcat = _chain_backward(
        cache["word_params"], cache["word_acts"], dlogits
    )
    if freeze_phone_nn:
        phone_grads = _zero_grads(model.phone_layers, dtype)
    else:
        batch = cache["batch"]
        positions = cache["positions"]
        nph = model.num_phones
        pool_idx = cache["pool_idx"]
        dpooled = dconcat.reshape(batch, model.pool_count, nph)
        dphone = np.zeros((batch, positions, nph), dtype=dtype)
        time_idx = (np.arange(model.pool_count) * model.pool_stride)[None, :, None] \
            + pool_idx
        b_idx = np.arange(batch)[:, None, None]
        d_idx = np.arange(nph)[None, None, :]
        np.add.at(dphone, (b_idx, time_idx, d_idx), dpooled)
        phone_grads, _ = _chain_backward(
            cache["phone_params"], cache["phone_acts"],
            dphone.reshape(batch * positions, nph),
        )
    return loss, phone_grads + word_grads, correct


def loss_and_gradients(model: TdnnModel, features, labels,
                       dtype=np.float32, freeze_phone_nn: bool = False):
    """Mean cross-entropy and per-parameter gradients on one batch.

    features: (batch, rf_frames, num_mel) raw filterbank windows.
    labels: (batch,) output-slot targets, len(model.keywords) = filler.
    Returns (loss, grads) with grads ordered phone layers then word
    layers as (dweights, dbias) pairs.
    """
    loss, grads, _ = _word_batch_step(model, features, labels, dtype,
                                      freeze_phone_nn)
    return loss, grads


def word_predict(model: TdnnModel, features) -> np.ndarray:
    """Class predictions for receptive-field windows."""
    cache = _word_graph_forward(model, features, np.float32)
    return np.argmax(cache["word_acts"][-1], axis=1)


def word_accuracy(model: TdnnModel, features, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(word_predict(model, features) == labels))


def sgd_step(layers, grads, learning_rate: float) -> None:
    """One step of W <- W - lr * dW per layer, in 32-bit arithmetic."""
    lr = np.float32(learning_rate)
    for layer, (dw, db) in zip(layers, grads):
        layer.weights = layer.weights - lr * np.asarray(dw, dtype=np.float32)
        layer.bias = layer.bias - lr * np.asarray(db, dtype=np.float32)


def _log_epoch(history, log_path, record) -> None:
    history.append(record)
    logger.info("epoch %d loss %.4f accuracy %.4f",
                record["epoch"], record["loss"], record["accuracy"])
    if log_path is not None:
        with open(log_path, "a") as f:
            f.write(json.dumps(record) + "\n")


def _phone_batch_step(layers, x, labels):
    params = _params(layers, np.float32)
    acts = _chain_forward(params, x)
    loss, dlogits, correct = _softmax_ce(acts[-1], labels)
    grads, _ = _chain_backward(params, acts, dlogits.astype(np.float32))
    return loss, grads, correct


def phone_predict(model: TdnnModel, spliced) -> np.ndarray:
    """Phone class predictions for normalized spliced inputs."""
    params = _params(model.phone_layers, np.float32)
    return np.argmax(_chain_forward(params, np.asarray(spliced, np.float32))[-1], axis=1)


def train_phone_stage(data, config: TrainConfig, template: TdnnModel = None,
                      log_path=None) -> TdnnModel:
    """Stage one: fit the phone layers on per-frame phone targets.

    data: a LabeledFrameSet or a sequence of them with phone_labels set.
    template supplies the architecture, frontend, and normalizer
    (default: the reference model).  The returned model has trained
    phone layers; its word layers are untouched initialization.  The
    classification head is the final phone layer itself, trained through
    a softmax that inference afterwards omits.
    """
    datasets = [data] if isinstance(data, LabeledFrameSet) else list(data)
    if not datasets:
        raise InputError("no training data")
    model = (template or build_default(1, seed=config.seed)).clone()
    x, y = phone_samples(datasets, model)
    if len(x) < config.batch_size:
        logger.warning("only %d phone samples for batch size %d",
                       len(x), config.batch_size)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(x))
        total_loss = 0.0
        total_correct = 0
        for start in range(0, len(x), config.batch_size):
            idx = perm[start : start + config.batch_size]
            try:
                loss, grads, correct = _phone_batch_step(
                    model.phone_layers, x[idx], y[idx]
                )
            except DivergenceError as exc:
                raise DivergenceError(
                    f"phone stage diverged at epoch {epoch}, sample {start}: {exc}"
                ) from None
            sgd_step(model.phone_layers, grads, config.learning_rate)
            total_loss += loss * len(idx)
            total_correct += correct
        _log_epoch(history, log_path, {
            "epoch": epoch,
            "loss": total_loss / len(x),
            "accuracy": total_correct / len(x),
        })
    return model


def train_word_stage(phone_model: TdnnModel, data, keywords,
                     config: TrainConfig, word_hidden=(64,),
                     log_path=None) -> TdnnModel:
    """Stage two: fresh word layers on top of the given phone layers,
    then fine-tune the whole network (phone layers frozen on request).

    data: sequence of LabeledFrameSet with word_labels set.
    """
    keywords = tuple(keywords)
    if not keywords:
        raise ConfigError("word stage needs at least one keyword")
    rng = np.random.default_rng(config.seed)
    word_layers = []
    fan_in = phone_model.pool_count * phone_model.num_phones
    for width in word_hidden:
        word_layers.append(init_layer(rng, fan_in, width, "relu"))
        fan_in = width
    word_layers.append(init_layer(rng, fan_in, len(keywords) + 1, "softmax"))
    model = TdnnModel(
        phone_layers=[l.clone() for l in phone_model.phone_layers],
        word_layers=word_layers,
        keywords=keywords,
        frontend=phone_model.frontend,
        normalizer=phone_model.normalizer,
        context_past=phone_model.context_past,
        context_future=phone_model.context_future,
        pool_size=phone_model.pool_size,
        pool_stride=phone_model.pool_stride,
        pool_count=phone_model.pool_count,
    )
    datasets = list(data)
    if not datasets:
        raise InputError("no training data")
    x, y = word_samples(datasets, model)
    history = []
    n_phone = len(model.phone_layers)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(x))
        total_loss = 0.0
        total_correct = 0
        for start in range(0, len(x), config.batch_size):
            idx = perm[start : start + config.batch_size]
            try:
                loss, grads, correct = _word_batch_step(
                    model, x[idx], y[idx],
                    dtype=np.float32, freeze_phone_nn=config.freeze_phone_nn,
                )
            except DivergenceError as exc:
                raise DivergenceError(
                    f"word stage diverged at epoch {epoch}, sample {start}: {exc}"
                ) from None
            if not config.freeze_phone_nn:
                sgd_step(model.phone_layers, grads[:n_phone], config.learning_rate)
            sgd_step(model.word_layers, grads[n_phone:], config.learning_rate)
            total_loss += loss * len(idx)
            total_correct += correct
        _log_epoch(history, log_path, {
            "epoch": epoch,
            "loss": total_loss / len(x),
            "accuracy": total_correct / len(x),
        })
    return model
