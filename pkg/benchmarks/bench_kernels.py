"""Compare the compiled kernels with the numpy fallback on the shapes the pipeline uses.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row reports the best wall time over ``--repeat`` runs for every available backend
and the speed-up of the compiled one. Results from the two backends are cross-checked.
"""
import argparse
import json
import time

import numpy as np

from neurostream import kernels
from neurostream.autoencoder import AutoencoderModel
from neurostream.dsp import PreprocessChain
from neurostream.nn import functional as F

KERNEL_NAMES = ("sosfilt", "vol2col", "col2vol", "maxpool3d", "maxunpool3d")


def use_backend(mod):
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(mod, name))


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    sos = PreprocessChain(512.0).bandpass.sections
    frame = rng.standard_normal((32, 61))
    block = rng.standard_normal((5120, 61))
    xp = rng.standard_normal((8, 16, 18, 12, 11)).astype(np.float32)
    col_shape = (8, 16 * 27, 16 * 10 * 9)
    col = rng.standard_normal(col_shape).astype(np.float32)
    act = rng.standard_normal((8, 32, 16, 10, 10)).astype(np.float32)
    pooled = rng.standard_normal((8, 32, 8, 5, 5)).astype(np.float32)
    model = AutoencoderModel(seed=0)
    chunks = rng.standard_normal((8, 16, 10, 9)).astype(np.float32)

    def train_step():
        model.train()
        model.zero_grad()
        _, ctx = model.forward_loss(chunks)
        model.backward(ctx)
        return model.encoder["enc_conv1"].grads["weight"].copy()

    return {
        "sosfilt 32x61 frame": lambda: kernels.sosfilt(sos, frame, np.zeros((len(sos), 2, 61))),
        "sosfilt 10 s x 61": lambda: kernels.sosfilt(sos, block, np.zeros((len(sos), 2, 61))),
        "vol2col conv2 input": lambda: kernels.vol2col(xp, (3, 3, 3), (1, 1, 1), (16, 10, 9)),
        "col2vol conv2 grad": lambda: kernels.col2vol(col, xp.shape, (3, 3, 3), (1, 1, 1), (16, 10, 9)),
        "maxpool 8x32x16x10x10": lambda: kernels.maxpool3d(act, (2, 2, 2), (2, 2, 2), (8, 5, 5)),
        "maxunpool to 16x10x10": lambda: kernels.maxunpool3d(
            pooled, F.maxpool3d(act, 2)[1], (16, 10, 10)),
        "encode one chunk": lambda: model.eval().encode_batch(chunks[:1])[0],
        "train step batch 8": train_step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the results to this file")
    args = ap.parse_args()

    backends = kernels.available()
    original = {n: getattr(kernels, n) for n in KERNEL_NAMES}
    results = {}
    try:
        for bname, mod in backends.items():
            use_backend(mod)
            for cname, fn in cases(np.random.default_rng(0)).items():
                seconds, out = best_of(fn, args.repeat)
                results.setdefault(cname, {})[bname] = (seconds, out)
    finally:
        for n, f in original.items():
            setattr(kernels, n, f)

    names = list(backends)
    print(f"{'case':<26}" + "".join(f"{n:>14}" for n in names) + ("   speed-up" if len(names) > 1 else ""))
    table = {}
    for cname, per in results.items():
        row = f"{cname:<26}" + "".join(f"{per[n][0] * 1e3:>11.3f} ms" for n in names)
        table[cname] = {n: per[n][0] for n in names}
        if len(names) > 1:
            ref = per["numpy"]
            other = [n for n in names if n != "numpy"][0]
            a, b = ref[1], per[other][1]
            a = a[0] if isinstance(a, tuple) else a
            b = b[0] if isinstance(b, tuple) else b
            assert np.allclose(a, b, rtol=1e-4, atol=1e-4), f"{cname}: backends disagree"
            row += f"   {ref[0] / per[other][0]:8.1f}x"
        print(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
