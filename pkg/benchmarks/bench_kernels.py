"""Compare the compiled and pure-numpy kernel backends on model-sized tensors.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 16]

Prints the best-of-N wall time per kernel and backend, and the speedup.
"""
import argparse
import timeit

import numpy as np

from ppmn import ops


def cases(batch):
    """(label, callable(kernels)) at the shapes the desk model hits."""
    rng = np.random.default_rng(0)
    out = []
    for label, (c, h, w), spec in (
        ("stage1 conv 3x3/2", (3, 160, 80), ops.ConvSpec(16, 3, 2, 1, 1)),
        ("stage2 conv 3x3/2", (16, 80, 40), ops.ConvSpec(32, 3, 2, 1, 1)),
        ("branch conv 3x3 r=3", (128, 10, 5), ops.ConvSpec(64, 3, 1, 3, 3)),
    ):
        x = rng.uniform(-1, 1, (batch, c, h, w)).astype(np.float32)
        wt = rng.uniform(-1, 1, (spec.out_channels, c, 3, 3)).astype(np.float32)
        b = np.zeros(spec.out_channels, np.float32)
        y, cols = ops.conv2d_forward(x, wt, b, spec, return_cols=True)
        g = rng.uniform(-1, 1, y.shape).astype(np.float32)
        out.append((f"{label} im2col", lambda k, x=x, spec=spec: ops.im2col(x, spec, kernels=k)))
        out.append((f"{label} forward", lambda k, x=x, wt=wt, b=b, spec=spec: ops.conv2d_forward(x, wt, b, spec, kernels=k)))
        out.append((f"{label} backward",
                    lambda k, x=x, wt=wt, spec=spec, g=g, cols=cols: ops.conv2d_backward(x, wt, spec, g, kernels=k, cols=cols)))
    x = rng.uniform(-1, 1, (batch, 64, 10, 5)).astype(np.float32)
    pooled, index = ops.maxpool_forward(x)
    g = rng.uniform(-1, 1, pooled.shape).astype(np.float32)
    out.append(("maxpool 2x2 forward", lambda k: ops.maxpool_forward(x, kernels=k)))
    out.append(("maxpool 2x2 backward", lambda k: ops.maxpool_backward(index, g, kernels=k)))
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=16)
    args = parser.parse_args(argv)

    backends = ops.available_backends()
    print(f"backends: {', '.join(backends)} (selected at import: {ops.BACKEND}), batch {args.batch}")
    header = f"{'kernel':<34}" + "".join(f"{name + ' ms':>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, fn in cases(args.batch):
        times = []
        for name in backends:
            k = ops.get_backend(name)
            fn(k)  # warm up
            times.append(min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3)
        row = f"{label:<34}" + "".join(f"{t:>12.2f}" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
