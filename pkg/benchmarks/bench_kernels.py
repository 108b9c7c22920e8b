"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also checks that both backends agree on every benchmarked input.
"""
import argparse
import timeit

import numpy as np

from oaag import _kernels_py, kernels


def _inputs(L, n, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    xw = rng.normal(size=(L, 4 * n)).astype(dtype)
    wh = (rng.normal(size=(n, 4 * n)) / np.sqrt(n)).astype(dtype)
    return xw, wh, np.zeros(n, dtype), np.zeros(n, dtype)


def _cases():
    for L, n in ((20, 64), (50, 128), (100, 150)):
        xw, wh, h0, c0 = _inputs(L, n)
        H, C, G = _kernels_py.lstm_forward(xw, wh, h0, c0)
        dH = np.random.default_rng(1).normal(size=H.shape)
        yield f"lstm_forward  L={L:3d} n={n:3d}", "lstm_forward", (xw, wh, h0, c0)
        yield f"lstm_backward L={L:3d} n={n:3d}", "lstm_backward", (dH, wh, h0, c0, H, C, G)
    rng = np.random.default_rng(2)
    for n in (20, 100, 400):
        a, b = (rng.integers(0, 30, size=n).astype(np.int64) for _ in range(2))
        yield f"lcs_length    n={n:3d}      ", "lcs_length", (a, b)


def _same(x, y):
    if isinstance(x, tuple):
        return all(_same(u, v) for u, v in zip(x, y))
    return np.allclose(x, y, rtol=1e-10, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not available; build it with `pip install -e .`")
        return
    from oaag import _kernels
    print(f"{'kernel':28s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}  agree")
    for label, name, inputs in _cases():
        py, cc = getattr(_kernels_py, name), getattr(_kernels, name)
        agree = _same(py(*inputs), cc(*inputs))
        t_py = min(timeit.repeat(lambda: py(*inputs), number=3, repeat=args.repeat)) / 3 * 1e3
        t_cc = min(timeit.repeat(lambda: cc(*inputs), number=3, repeat=args.repeat)) / 3 * 1e3
        print(f"{label:28s} {t_py:10.3f} {t_cc:12.3f} {t_py / t_cc:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
