"""Time each hot kernel under the numba and pure-numpy backends.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Inputs are sized like one 256x256 inference pass: a few thousand anchor
boxes for NMS/IoU, four variant masks for voting, 64x64 RoI probabilities
resized to box size. The first numba call (compilation) is excluded.
"""

import argparse
import json
import timeit

import numpy as np

from latentseg.kernels import numba_backend, numpy_backend


def workloads(rng):
    xy = rng.uniform(0, 256, (3000, 2))
    boxes = np.concatenate([xy, xy + rng.uniform(8, 128, (3000, 2))], axis=1)
    order = np.argsort(-rng.random(3000))
    regions = np.concatenate([xy[:6], xy[:6] + rng.uniform(10, 90, (6, 2))], axis=1)
    stack = rng.random((4, 256, 256)) < 0.5
    pixels = rng.integers(0, 256, (256, 256)).astype(np.uint8)
    probs = rng.random((64, 64))
    return {
        "iou_matrix": lambda k: k.iou_matrix(boxes[:300], boxes),
        "nms_keep": lambda k: k.nms_keep(boxes, order, 0.5),
        "covered_area": lambda k: k.covered_area(boxes[0], regions),
        "bilinear_resize": lambda k: k.bilinear_resize(probs, 180, 120),
        "vote_count": lambda k: k.vote_count(stack),
        "overlap_counts": lambda k: k.overlap_counts(stack[0], stack[1]),
        "equalize_lut": lambda k: k.equalize_lut(pixels),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rows = []
    for name, fn in workloads(np.random.default_rng(0)).items():
        fn(numba_backend)  # compile
        times = {}
        for label, k in (("numpy", numpy_backend), ("numba", numba_backend)):
            times[label] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "numpy_ms": times["numpy"], "numba_ms": times["numba"],
                     "speedup": times["numpy"] / times["numba"]})

    print(f"{'kernel':<18}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<18}{r['numpy_ms']:>11.3f}{r['numba_ms']:>11.3f}{r['speedup']:>8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
