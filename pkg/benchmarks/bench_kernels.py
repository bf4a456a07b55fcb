"""Benchmark the compiled kernel backend against the numpy fallback.

Times dense_forward on every layer shape of the reference model, then
measures end-to-end streaming throughput with each backend.  Run as:

    python benchmarks/bench_kernels.py [--seconds 60]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tdkws import _kernels_py
from tdkws.features import FeatureNormalizer
from tdkws.inference import StreamState
from tdkws.model import build_default

try:
    from tdkws import _kernels_cy
except ImportError:
    _kernels_cy = None


def bench_layer(impl, x, weights, bias, relu, repeats: int) -> float:
    """Median seconds per call over several timing rounds."""
    times = []
    for _ in range(7):
        t0 = time.perf_counter()
        for _ in range(repeats):
            impl.dense_forward(x, weights, bias, relu)
        times.append((time.perf_counter() - t0) / repeats)
    return float(np.median(times))


def layer_shapes(model):
    rng = np.random.default_rng(0)
    for group, layers in (("phone", model.phone_layers),
                          ("word", model.word_layers)):
        for i, layer in enumerate(layers):
            x = rng.normal(0, 1, layer.weights.shape[0]).astype(np.float32)
            yield (f"{group}-{i + 1}", x, layer.weights, layer.bias,
                   layer.activation == "relu")


def bench_streaming(model, features, backend_module) -> float:
    """Frames processed per second with the given kernel backend."""
    import tdkws.kernels as kernels

    saved = kernels.dense_forward
    kernels.dense_forward = backend_module.dense_forward
    try:
        state = StreamState(model, count_mults=False)
        t0 = time.perf_counter()
        for frame in features:
            state.push_frame(frame)
        elapsed = time.perf_counter() - t0
    finally:
        kernels.dense_forward = saved
    return len(features) / elapsed


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seconds", type=float, default=30.0,
                        help="audio length for the streaming benchmark")
    parser.add_argument("--repeats", type=int, default=2000,
                        help="calls per layer timing round")
    args = parser.parse_args()

    backends = [("numpy", _kernels_py)]
    if _kernels_cy is not None:
        backends.append(("cython", _kernels_cy))
    else:
        print("compiled extension not built; benchmarking numpy only\n")

    model = build_default(1, normalizer=FeatureNormalizer.identity(41))

    print(f"{'layer':<10}", *(f"{name:>12}" for name, _ in backends),
          f"{'speedup':>10}" if len(backends) == 2 else "")
    for name, x, w, b, relu in layer_shapes(model):
        per_call = [bench_layer(impl, x, w, b, relu, args.repeats)
                    for _, impl in backends]
        row = [f"{name:<10}"] + [f"{t * 1e6:>10.2f}us" for t in per_call]
        if len(per_call) == 2:
            row.append(f"{per_call[0] / per_call[1]:>9.2f}x")
        print(*row)

    frames = int(args.seconds * 100)
    rng = np.random.default_rng(1)
    features = rng.normal(0, 1, (frames, 41)).astype(np.float32)
    print(f"\nstreaming {args.seconds:.0f}s of audio ({frames} frames):")
    rates = []
    for name, impl in backends:
        rate = bench_streaming(model, features, impl)
        rates.append(rate)
        print(f"  {name:<8} {rate:>10.0f} frames/s "
              f"({rate / 100.0:>6.1f}x real time)")
    if len(rates) == 2:
        print(f"  compiled speedup: {rates[1] / rates[0]:.2f}x")


if __name__ == "__main__":
    main()
