"""Compiled kernels vs the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--epoch]

Times conv1d forward/backward at the shapes the attention scorer uses (a batch of
alignment histories through the 3/7/15-wide filter bank) and edit distance at
long-test lengths. Prints one JSON line per case. ``--epoch`` also times one
training epoch of the long-input task under each backend (separate processes,
since the backend is chosen at import).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from seqattn import _kernels_py

try:
    from seqattn import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    for B, S, width, Cout in [(48, 30, 3, 8), (48, 30, 15, 8), (48, 200, 15, 8), (48, 200, 201, 8)]:
        x = rng.random((B, S, 1))
        F = rng.normal(size=(1, width, Cout))
        gy = rng.normal(size=(B, S, Cout))
        tag = f"B={B} S={S} w={width} C={Cout}"
        yield f"conv1d_forward {tag}", lambda m, x=x, F=F: m.conv1d_same_forward(x, F)
        yield f"conv1d_backward {tag}", lambda m, x=x, F=F, gy=gy: m.conv1d_same_backward(x, F, gy)
    for n in (20, 100, 400):
        a = rng.integers(0, 8, size=n).tolist()
        b = rng.integers(0, 8, size=n + n // 10).tolist()
        yield f"edit_distance n={n}", lambda m, a=a, b=b: m.edit_distance(a, b)


def best_of(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


EPOCH_SCRIPT = """
import json, tempfile, time
from seqattn import kernels
from seqattn.config import config_from_dict
from seqattn.train import train
cfg = config_from_dict({
    "task": {"kind": "frames-to-symbols", "min_len": 10, "max_len": 40, "rate": 4, "noise": 0.3},
    "model": {"embed_dim": 16, "enc_hidden": 64, "enc_layers": 2, "reduction": 2, "dec_hidden": 64,
              "scorer": "mlp_ma_c", "order": 3, "filter_widths": [3, 7, 15], "filter_channels": [8, 8, 8]},
    "epochs": 1, "train_size": 160, "dev_size": 0, "batch_size": 16, "output_dir": tempfile.mkdtemp()})
start = time.perf_counter()
train(cfg)
print(json.dumps({"case": "train epoch (160 long inputs)", "backend": kernels.BACKEND,
                  "seconds": round(time.perf_counter() - start, 2)}))
"""


def time_epoch():
    for pure in ("0", "1"):
        env = dict(os.environ, SEQATTN_PURE_PYTHON=pure)
        subprocess.run([sys.executable, "-c", EPOCH_SCRIPT], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epoch", action="store_true", help="also time a training epoch per backend")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    for name, call in cases(rng):
        rec = {"case": name, "numpy_us": round(1e6 * best_of(lambda: call(_kernels_py), args.repeat), 2)}
        if _ckernels is not None:
            rec["cython_us"] = round(1e6 * best_of(lambda: call(_ckernels), args.repeat), 2)
            rec["speedup"] = round(rec["numpy_us"] / rec["cython_us"], 2)
        print(json.dumps(rec), flush=True)
    if args.epoch:
        time_epoch()


if __name__ == "__main__":
    main()
