"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes match a desk-scale training step (batch 32, length 11, width 64,
vocabulary 50) plus a larger setting. Each kernel is checked for agreement
before it is timed. Numba compile time is excluded by a warm-up call.
"""
import argparse
import timeit

import numpy as np

from attnbench import _kernels as K


def cases(rng, batch, length, width, vocab):
    rows = batch * length
    x = rng.standard_normal((batch, length, width))
    ids = rng.integers(0, vocab, size=rows)
    logits = rng.standard_normal((rows, vocab))
    targets = rng.integers(0, vocab, size=rows)
    cols = K.NUMPY["unfold1d"](x, 3, 2, 0)
    return {
        "scatter_add_rows": lambda impl: _scatter(impl, vocab, ids, x.reshape(rows, width)),
        "unfold1d": lambda impl: impl["unfold1d"](x, 3, 2, 0),
        "fold1d": lambda impl: impl["fold1d"](cols, 3, 2, 0, length),
        "softmax_rows": lambda impl: impl["softmax_rows"](logits),
        "nll_rows": lambda impl: impl["nll_rows"](logits, targets, 0),
    }


def _scatter(impl, vocab, ids, rows):
    out = np.zeros((vocab, rows.shape[1]))
    impl["scatter_add_rows"](out, ids, rows)
    return out


def _result(fn, impl):
    out = fn(impl)
    return out[-1] if isinstance(out, tuple) else out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
        return
    rng = np.random.default_rng(0)
    print(f"{'shape':<18}{'kernel':<18}{'numpy us':>10}{'numba us':>10}{'speedup':>9}")
    for label, dims in (("desk 32x11x64", (32, 11, 64, 50)), ("big 128x41x512", (128, 41, 512, 8000))):
        for name, fn in cases(rng, *dims).items():
            a, b = _result(fn, K.NUMPY), _result(fn, K.NUMBA)
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
            t_np = min(timeit.repeat(lambda: fn(K.NUMPY), number=1, repeat=args.repeat)) * 1e6
            t_nb = min(timeit.repeat(lambda: fn(K.NUMBA), number=1, repeat=args.repeat)) * 1e6
            print(f"{label:<18}{name:<18}{t_np:>10.1f}{t_nb:>10.1f}{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
