"""Compare the numba and numpy kernel backends on conv4-sized workloads.

Times the convolution and pooling kernels both ways, checks that the two
backends agree numerically, and prints per-call milliseconds plus the
numba speedup. Run as:

    python3 benchmarks/bench_kernels.py [--batch 16] [--size 28] [--repeat 5]
"""

import argparse
import time

import numpy as np

from fsocc.kernels import _numpy as knp

try:
    from fsocc.kernels import _numba as knb
except ImportError:
    knb = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best * 1e3


def workloads(batch, size, filters):
    rng = np.random.Generator(np.random.Philox(key=0))
    x1 = rng.standard_normal((batch, size, size, 1))
    w1 = rng.standard_normal((3, 3, 1, filters))
    xf = rng.standard_normal((batch, size // 2, size // 2, filters))
    wf = rng.standard_normal((3, 3, filters, filters))
    b = rng.standard_normal(filters)
    cases = []
    for label, x, w in ((f"conv 3x3 1->{filters} @{size}", x1, w1),
                        (f"conv 3x3 {filters}->{filters} @{size // 2}", xf, wf)):
        g = rng.standard_normal(x.shape[:3] + (filters,))
        cases.append((f"{label} fwd", lambda k, x=x, w=w: k.conv2d_forward(x, w, b)))
        cases.append((f"{label} bwd", lambda k, g=g, x=x, w=w: k.conv2d_backward(g, x, w)))

    out, arg = knp.maxpool2x2_forward(xf)
    gp = rng.standard_normal(out.shape)
    cases.append((f"maxpool 2x2 @{size // 2}x{filters} fwd",
                  lambda k, xf=xf: k.maxpool2x2_forward(xf)))
    cases.append((f"maxpool 2x2 @{size // 2}x{filters} bwd",
                  lambda k, gp=gp, arg=arg, xf=xf: k.maxpool2x2_backward(gp, arg, xf.shape)))
    return cases


def agreement(a, b):
    if isinstance(a, tuple):
        return max(agreement(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                               - np.asarray(b, dtype=np.float64))))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--size", type=int, default=28)
    parser.add_argument("--filters", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    cases = workloads(args.batch, args.size, args.filters)
    if knb is None:
        print("numba unavailable; timing the numpy backend only")

    width = max(len(label) for label, _ in cases)
    header = f"{'kernel':<{width}}  {'numpy ms':>9}"
    if knb is not None:
        header += f"  {'numba ms':>9}  {'speedup':>7}  {'max |diff|':>10}"
    print(header)
    print("-" * len(header))

    for label, fn in cases:
        if knb is not None:
            fn(knb)  # trigger jit compilation outside the timed region
        t_np = best_of(lambda: fn(knp), args.repeat)
        row = f"{label:<{width}}  {t_np:9.3f}"
        if knb is not None:
            t_nb = best_of(lambda: fn(knb), args.repeat)
            diff = agreement(fn(knp), fn(knb))
            row += f"  {t_nb:9.3f}  {t_np / t_nb:6.1f}x  {diff:10.2e}"
        print(row)


if __name__ == "__main__":
    main()
