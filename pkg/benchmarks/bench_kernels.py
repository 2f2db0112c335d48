"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--rows 200000] [--repeat 5]

Each kernel is run once per backend to warm up (numba compiles on first
use), then timed as the best of ``--repeat`` runs.  The last rows time a few
end-to-end operations that mix kernels with BLAS matmuls.
"""
import argparse
import time

import numpy as np

from popsyn import _kernels
from popsyn.codec import EncodedMatrix, build_layout, decode, encode
from popsyn.eval_stats import bootstrap_resample
from popsyn.generators import TrainConfig, gan_init, gan_train
from popsyn.rng import Rng
from popsyn.survey_data import generate_surrogate


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rows):
    rng = Rng(1)
    raw = rng.raw(rows * 4)
    probs = rng.uniform((rows, 4))
    u = rng.uniform(rows)
    ages = rng.uniform(rows) * 90 + 5
    z = rng.normal((rows, 10)) * 3
    g = rng.normal((rows, 10))
    offsets, widths = [1, 3, 6], [2, 3, 4]
    s = _kernels.block_softmax(z, offsets, widths)
    table = generate_surrogate(rows, 2)
    layout = build_layout(table.schema)
    soft = EncodedMatrix(layout, _kernels.block_softmax(z, offsets, widths))
    small = encode(generate_surrogate(2000, 3), layout)
    cfg = TrainConfig(epochs=1, batch_size=500)
    return [
        ("uniform", lambda: _kernels.uniform(raw)),
        ("box_muller", lambda: _kernels.box_muller(raw)),
        ("categorical", lambda: _kernels.categorical(probs, u)),
        ("drawn_mask", lambda: _kernels.drawn_mask(Rng(3).integers(rows, rows), rows)),
        ("bin_index", lambda: _kernels.bin_index(ages, 5.0, 95.0, 10)),
        ("block_softmax", lambda: _kernels.block_softmax(z, offsets, widths)),
        ("block_softmax_backward", lambda: _kernels.block_softmax_backward(s, g, offsets, widths)),
        ("surrogate rows", lambda: generate_surrogate(rows, 4)),
        ("decode sample", lambda: decode(soft, "sample", 5)),
        ("bootstrap resample", lambda: bootstrap_resample(np.arange(rows), 6)),
        ("gan epoch (2000 rows)", lambda: gan_train(gan_init(layout, cfg), small, cfg)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if _kernels.numba_available() else [])
    results = {}
    for name in backends:
        prev = _kernels.set_backend(name)
        try:
            for label, fn in cases(args.rows):
                results[(label, name)] = best_of(fn, args.repeat)
        finally:
            _kernels.set_backend(prev)

    labels = [label for label, _ in cases(1000)]
    print(f"rows={args.rows} repeat={args.repeat} (best time, ms)")
    print(f"{'case':<24}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for label in labels:
        row = [results[(label, b)] * 1e3 for b in backends]
        speed = f"{row[0] / row[1]:>10.2f}x" if len(row) == 2 and row[1] > 0 else ""
        print(f"{label:<24}" + "".join(f"{t:>12.2f}" for t in row) + speed)


if __name__ == "__main__":
    main()
