"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32]

Times each hot kernel on autoencoder-sized tensors, then one full
forward/backward/ADAM step of the 32x32 network, under both backends.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from radiomap.autoencoder import AutoencoderConfig, build_network
from radiomap.neuralcore import AdamState, _pykernels, adam_step, use_kernels

try:
    from radiomap.neuralcore import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(batch, rng):
    x = rng.standard_normal((batch, 32, 32, 64)).astype(np.float32)
    small = rng.standard_normal((batch, 16, 16, 64)).astype(np.float32)
    cols = rng.standard_normal((batch * 32 * 32, 9 * 64)).astype(np.float32)
    return {
        "im2col 32x32x64": lambda k: k.im2col3x3(x),
        "col2im 32x32x64": lambda k: k.col2im3x3(cols, batch, 32, 32, 64),
        "avgpool fwd": lambda k: k.avgpool2_forward(x),
        "avgpool bwd": lambda k: k.avgpool2_backward(small),
        "upsample fwd 16->32": lambda k: k.upsample2_forward(small),
        "upsample bwd 32->16": lambda k: k.upsample2_backward(x),
        "plrelu fwd": lambda k: k.plrelu_forward(x, 0.25),
        "plrelu bwd": lambda k: k.plrelu_backward(x, x, 0.25),
    }


def train_step_case(batch, rng):
    net = build_network(AutoencoderConfig(), seed=0)
    x = rng.standard_normal((batch, 32, 32, 2)).astype(np.float32)
    y = rng.standard_normal((batch, 32, 32, 1)).astype(np.float32)
    state = AdamState.zeros_like(net.params)

    def step(_k):
        pred = net.forward(x)
        net.backward(2.0 * (pred - y) / batch)
        adam_step(net.params, net.grads, state)
    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
    if _ckernels is None:
        print("compiled kernels not available; timing the numpy backend only")
    cases = kernel_cases(args.batch, rng)
    cases[f"train step (batch {args.batch})"] = train_step_case(args.batch, rng)
    names = [b.BACKEND for b in backends]
    print(f"{'case':28s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases.items():
        times = []
        for k in backends:
            prev = use_kernels(k)
            try:
                fn(k)  # warm up
                times.append(best_of(lambda: fn(k), args.repeat))
            finally:
                use_kernels(prev)
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
