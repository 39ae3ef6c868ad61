"""Compiled vs pure-Python range coder throughput.

Times both backends on two workloads: DCT block coefficients from the toy
codec and analytic-feature symbols against a factorised entropy model.
Every run also checks that the two backends emit identical bytes.

    python benchmarks/bench_coder.py [--repeat 3] [--json out.json]
"""

import argparse
import json
import sys
import time

import numpy as np

from uvc import _coder_py
from uvc.codec import toy_dct
from uvc.data import make_clips
from uvc.entropy import ALPHABET_LO, FactorizedEntropyModel

try:
    from uvc import _coder
except ImportError:
    _coder = None


def block_workload(n_clips, q):
    clips, _ = make_clips(0, n_clips)
    rows = []
    for clip in clips:
        stream = toy_dct.encode(clip, q)
        t, c, h, w = clip.shape
        n = t * c * (h // toy_dct.BLOCK) * (w // toy_dct.BLOCK)
        rows.append(_coder_py.decode_blocks(stream[toy_dct._HEADER.size:], n))
    return np.concatenate(rows)


def symbol_workload(n_symbols, channels=64, seed=0):
    rng = np.random.default_rng(seed)
    model = FactorizedEntropyModel(channels)
    cdfs = model.quantized_cdfs()
    index = np.repeat(np.arange(channels, dtype=np.int32), n_symbols // channels)
    values = np.round(rng.laplace(0, 2.0, index.size)).astype(np.int32)
    values[:: 997] = 150  # a few escapes
    return values, index, cdfs


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeat, n_clips, n_symbols):
    coeffs = block_workload(n_clips, 43)
    values, index, cdfs = symbol_workload(n_symbols)
    backends = {"python": _coder_py}
    if _coder is not None:
        backends["cython"] = _coder
    cases = {
        "blocks/encode": (lambda m: m.encode_blocks(coeffs), coeffs.shape[0]),
        "symbols/encode": (lambda m: m.encode_symbols(values, index, cdfs, ALPHABET_LO), values.size),
    }
    results = []
    for case, (fn, units) in cases.items():
        outputs = {}
        for name, mod in backends.items():
            secs, outputs[name] = best_of(lambda: fn(mod), repeat)
            results.append({"case": case, "backend": name, "seconds": secs, "units": units})
        if len(set(outputs.values())) != 1:
            raise SystemExit(f"{case}: backends disagree")
        stream = outputs["python"]
        for name, mod in backends.items():
            if case.startswith("blocks"):
                dec = lambda m=mod: m.decode_blocks(stream, coeffs.shape[0])  # noqa: E731
            else:
                dec = lambda m=mod: m.decode_symbols(stream, index, cdfs, ALPHABET_LO)  # noqa: E731
            secs, back = best_of(dec, repeat)
            ref = coeffs if case.startswith("blocks") else values
            if not np.array_equal(back, ref):
                raise SystemExit(f"{case}: {name} decode mismatch")
            results.append({"case": case.replace("encode", "decode"), "backend": name, "seconds": secs,
                            "units": units})
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--clips", type=int, default=20)
    ap.add_argument("--symbols", type=int, default=200_000)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if _coder is None:
        print("compiled backend not built; timing the Python fallback only", file=sys.stderr)
    results = run(args.repeat, args.clips, args.symbols)
    by_case = {}
    for r in results:
        by_case.setdefault(r["case"], {})[r["backend"]] = r
    print(f"{'case':<16}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for case, row in by_case.items():
        py = row["python"]["seconds"]
        cy = row.get("cython", {}).get("seconds")
        speed = f"{py / cy:8.1f}x" if cy else "       -"
        cy_s = f"{cy:10.4f}" if cy else f"{'-':>10}"
        print(f"{case:<16}{py:10.4f}{cy_s}{speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
