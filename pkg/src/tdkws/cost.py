"""Analytic and instrumented multiplication accounting.

Cost is measured as multiplications per second of input audio.  Only
multiplications count: bias adds, max-pool comparisons, and the softmax
are free.  The cached model runs each network stage once per phone step;
the naive model recomputes every patch in the word network's receptive
field at every step, which is what output caching avoids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import ConfigError
from .inference import SkipGeometry, parse_skip, skip_name
from .model import TdnnModel

logger = logging.getLogger(__name__)


def format_count(value: float) -> str:
    """Render a count with 3 significant figures and a magnitude suffix."""
    value = float(value)
    if value < 0:
        raise ConfigError("counts are nonnegative")
    if value >= 1e9:
        return f"{value / 1e9:.3g}G"
    if value >= 1e6:
        return f"{value / 1e6:.3g}M"
    if value >= 1e3:
        return f"{value / 1e3:.3g}K"
    return f"{value:.3g}"


@dataclass(frozen=True)
class StageCost:
    """One network stage: cost per evaluation and evaluation rate."""

    name: str
    layer_mults: tuple      # (layer name, multiplications per evaluation)
    evals_per_s: float

    @property
    def mults_per_eval(self) -> int:
        return sum(m for _, m in self.layer_mults)

    @property
    def mulps(self) -> float:
        return self.mults_per_eval * self.evals_per_s


@dataclass(frozen=True)
class CostReport:
    """Multiplications per second of audio for one configuration."""

    skip: str
    params: int
    stages: tuple

    @property
    def total_mulps(self) -> float:
        return sum(stage.mulps for stage in self.stages)

    @property
    def display_total(self) -> str:
        return format_count(self.total_mulps)

    def render_table(self) -> str:
        lines = [f"{'stage':<10}{'mults/eval':>12}{'evals/s':>10}{'Mul/s':>10}"]
        for stage in self.stages:
            lines.append(
                f"{stage.name:<10}{stage.mults_per_eval:>12}"
                f"{stage.evals_per_s:>10.2f}{format_count(stage.mulps):>10}"
            )
        lines.append(
            f"{'total':<10}{'':>12}{'':>10}{self.display_total:>10}"
        )
        lines.append(f"params {self.params}  skip {self.skip}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "skip": self.skip,
            "params": self.params,
            "total_mulps": self.total_mulps,
            "display": self.display_total,
            "stages": [
                {
                    "name": stage.name,
                    "mults_per_eval": stage.mults_per_eval,
                    "evals_per_s": stage.evals_per_s,
                    "mulps": stage.mulps,
                    "layers": [
                        {"name": name, "mults": mults}
                        for name, mults in stage.layer_mults
                    ],
                }
                for stage in self.stages
            ],
        }


def _frame_rate(model: TdnnModel, frame_rate) -> float:
    if frame_rate is None:
        return 1000.0 / model.frontend.hop_ms
    if frame_rate <= 0:
        raise ConfigError("frame_rate must be positive")
    return float(frame_rate)


def _layer_mults(prefix: str, layers) -> tuple:
    return tuple((f"{prefix}-{i + 1}", layer.weight_count)
                 for i, layer in enumerate(layers))


def mulps(model: TdnnModel, skip="none", frame_rate=None) -> CostReport:
    """Analytic cost with output caching: each stage runs once per phone step.

    The word network is evaluated at every phone step over the most
    recent pooled window, so both stages share the rate frame_rate/stride.
    """
    rate = _frame_rate(model, frame_rate)
    stride = parse_skip(skip)
    step_rate = rate / stride
    stages = (
        StageCost("phone-nn", _layer_mults("phone", model.phone_layers), step_rate),
        StageCost("word-nn", _layer_mults("word", model.word_layers), step_rate),
    )
    return CostReport(skip=skip_name(stride), params=model.total_weights(), stages=stages)


def naive_mulps(model: TdnnModel, skip="none", frame_rate=None) -> CostReport:
    """Analytic cost without caching: every phone step recomputes all
    phone patches inside the word network's receptive field.

    Strictly exceeds the cached cost whenever that field spans more than
    one patch.
    """
    rate = _frame_rate(model, frame_rate)
    g = SkipGeometry.from_model(model, skip)
    step_rate = rate / g.stride
    patches = g.pool_step * (model.pool_count - 1) + g.pool_window
    stages = (
        StageCost("phone-nn", _layer_mults("phone", model.phone_layers),
                  patches * step_rate),
        StageCost("word-nn", _layer_mults("word", model.word_layers), step_rate),
    )
    return CostReport(skip=skip_name(g.stride), params=model.total_weights(),
                      stages=stages)


def measured_mulps(state) -> CostReport:
    """Empirical cost from an instrumented streaming run.

    The rate of each stage is amortized from its first evaluation: the
    warm-up frames before a stage can run are excluded from its clock, so
    a long stream measures the steady-state rate rather than diluting it.
    Raises CounterDisabledError if the stream did not count.
    """
    counter = state.mult_counter
    model = state.model
    rate = 1000.0 / model.frontend.hop_ms
    total_frames = state.frames_pushed
    named_layers = {
        "phone": _layer_mults("phone", model.phone_layers),
        "word": _layer_mults("word", model.word_layers),
    }
    stages = []
    for name in ("phone", "word"):
        sc = counter.stages.get(name)
        if sc is None or sc.evals == 0:
            stages.append(StageCost(f"{name}-nn", named_layers[name], 0.0))
            continue
        active_s = (total_frames - sc.first_frame) / rate
        evals_per_s = sc.evals / active_s if active_s > 0 else 0.0
        stages.append(StageCost(f"{name}-nn", named_layers[name], evals_per_s))
    return CostReport(skip=state.skip, params=model.total_weights(),
                      stages=tuple(stages))
