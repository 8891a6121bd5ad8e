"""Benchmark the numba and numpy convolution backends against each other.

Runs the three conv kernels (forward, input gradient, weight gradient) at
shapes representative of the mask network, in both precisions, and prints
a throughput table.  Also times one full training step per backend.

Usage: python benchmarks/bench_backends.py [--quick]
"""

import argparse
import time

import numpy as np

from deepaec import backend, packaged_config
from deepaec.network import MaskNet
from deepaec.objectives import LossWeights
from deepaec.scenes import ScenePlan, make_scene
from deepaec.training import TrainState, adam_step, scene_loss

SHAPES = [
    # (cin, cout, F, K, dilation) - stem, dense layer, wide concat layer
    (8, 28, 257, 48, 1),
    (28, 9, 257, 48, 2),
    (100, 9, 257, 48, 8),
]


def time_call(fn, repeats):
    fn()  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    header = f"{'kernel':<16}{'shape':<22}{'dtype':<8}" + "".join(
        f"{name:>14}" for name in backend.available_backends())
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for cin, cout, F, K, d in SHAPES:
        for dtype in (np.float32, np.float64):
            x = rng.standard_normal((cin, F, K)).astype(dtype)
            w = (rng.standard_normal((cout, cin, 3, 3)) * 0.1).astype(dtype)
            gy = rng.standard_normal((cout, F, K)).astype(dtype)
            macs = cout * cin * 9 * F * K
            calls = {
                "forward": lambda: backend.conv_forward(x, w, (d, d), (d, d)),
                "grad_input": lambda: backend.conv_backward_input(
                    gy, w, x.shape, (d, d), (d, d)),
                "grad_weights": lambda: backend.conv_backward_weights(
                    gy, x, (3, 3), (d, d), (d, d)),
            }
            for name, fn in calls.items():
                row = f"{name:<16}{f'{cin}x{cout} {F}x{K} d{d}':<22}" \
                      f"{np.dtype(dtype).name:<8}"
                for bk in backend.available_backends():
                    backend.set_backend(bk)
                    dt = time_call(fn, repeats)
                    row += f"{2 * macs / dt / 1e9:>11.2f} GF"
                print(row)


def bench_training_step(repeats):
    print("\nfull training step (tiny config, one 0.6 s scene, fwd+bwd+adam)")
    scene = make_scene(ScenePlan.sample(seed=0, duration=0.6))
    weights = LossWeights(1.0, 0.0)
    for bk in backend.available_backends():
        backend.set_backend(bk)
        for dtype, label in ((np.float32, "single"), (np.float64, "double")):
            model = MaskNet(packaged_config("tiny")).set_precision(dtype)
            params = list(model.named_params())
            state = TrainState(lr=1e-3)

            def step():
                for _, p in params:
                    p.zero_grad()
                scene_loss(model, scene, weights, "train").backward()
                adam_step(params, state)

            dt = time_call(step, repeats)
            print(f"  {bk:<7} {label:<7} {dt * 1e3:8.1f} ms/step")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="fewer repeats")
    args = parser.parse_args()
    repeats = 3 if args.quick else 10
    print(f"available backends: {backend.available_backends()}")
    bench_kernels(repeats)
    bench_training_step(max(2, repeats // 3))


if __name__ == "__main__":
    main()
