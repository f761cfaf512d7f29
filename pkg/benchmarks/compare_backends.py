"""Compare the compiled kernel backend against the pure-numpy fallback.

Times the two hot kernels (row-wise FWHT, fused softmax column-sum) and one
end-to-end compactor scoring pass per backend, printing a CSV to stdout.

Usage: python benchmarks/compare_backends.py [--ns 16384,65536] [--repeats 9]
"""

import argparse
import time

import numpy as np

from kvcompactor import EvictionPolicy, _kernels as kern
from kvcompactor.harness import bench_scaling


def median_time(fn, repeats, warmup=2):
    times = []
    for _ in range(warmup + repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times[warmup:]))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ns", default="16384,65536,262144")
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--chunk", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=9)
    args = parser.parse_args()
    ns = [int(x) for x in args.ns.split(",")]
    backends = kern.available_backends()
    if "compiled" not in backends:
        print("# compiled backend not built; showing python only")

    rng = np.random.default_rng(0)
    rows = []
    for n in ns:
        fwht_input = rng.standard_normal((n, args.d))
        logits = rng.standard_normal((args.chunk, args.chunk))
        for name in backends:
            impl = kern._BACKENDS[name]

            def run_fwht():
                impl.fwht_rows(fwht_input.copy())

            out = np.zeros(args.chunk)

            def run_softmax():
                for _ in range(max(1, n // args.chunk)):
                    impl.softmax_colsum(logits, out)

            rows.append((n, name, "fwht_rows", median_time(run_fwht, args.repeats)))
            rows.append((n, name, "softmax_colsum", median_time(run_softmax, args.repeats)))

    policy = EvictionPolicy(kind="compactor", retention=0.5)
    for name in backends:
        result = bench_scaling(policy, ns, repeats=args.repeats, warmup=2, d=args.d, backend=name)
        for row in result["rows"]:
            rows.append((row["n"], name, "compactor_scoring", row["median_s"]))

    print("n,backend,kernel,median_s")
    for n, name, kernel, med in rows:
        print(f"{n},{name},{kernel},{med:.6f}")

    for kernel in ("fwht_rows", "softmax_colsum", "compactor_scoring"):
        if "compiled" in backends:
            py = sum(m for n, b, k, m in rows if b == "python" and k == kernel)
            cc = sum(m for n, b, k, m in rows if b == "compiled" and k == kernel)
            print(f"# {kernel}: compiled is {py / cc:.2f}x the python backend")


if __name__ == "__main__":
    main()
