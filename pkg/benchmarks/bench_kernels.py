"""Time the hot kernels under the numba and pure-numpy backends.

The script re-runs itself once per backend (``IQFM_NO_NUMBA`` selects the
numpy path), prints a table of best-of-N timings, and checks that both
backends return the same numbers.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up (includes jit compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_cases(repeat):
    from iqfm import kernels
    from iqfm._accel import backend_name
    from iqfm.qfm import ModelConfig, forward_quantum_batch, init_model
    from iqfm.statevector import random_state

    rng = np.random.default_rng(7)
    model = init_model(ModelConfig(L=5), rng)
    amps = np.stack([random_state(8, rng).amplitudes for _ in range(200)])
    codes = rng.integers(0, 6, size=(200, 8)).astype(np.int8)
    Q = rng.normal(size=(80, 80))
    Q = Q @ Q.T
    y = np.where(rng.random(80) < 0.5, -1.0, 1.0)
    Qy = np.ascontiguousarray(Q * np.outer(y, y))

    out = {"backend": backend_name(), "timings": {}, "checks": {}}

    def forward():
        return np.concatenate(forward_quantum_batch(model, amps), axis=1)

    def pairs():
        return kernels.shadow_pair_sum(codes, codes[::-1].copy(), False)

    def coeffs():
        return kernels.shadow_pauli_coefficients(codes, 8)

    def smo():
        a = np.zeros(80)
        g = -np.ones(80)
        kernels.smo_solve(Qy, y, 1.0, 1e-6, 100000, a, g)
        return a

    for name, fn in (("iqfm_forward_200x5", forward), ("shadow_pairs_200x200", pairs),
                     ("pauli_coefficients_200", coeffs), ("smo_80", smo)):
        out["timings"][name] = _best(fn, repeat)
        v = np.asarray(fn())
        out["checks"][name] = [float(np.real(v).sum()), float(np.abs(v).sum())]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the combined results here")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_cases(args.repeat)))
        return 0
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, IQFM_NO_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        r = json.loads(proc.stdout.strip().splitlines()[-1])
        results[r["backend"]] = r
    names = list(next(iter(results.values()))["timings"])
    print(f"{'kernel':26s}" + "".join(f"{b:>12s}" for b in results) + f"{'speedup':>10s}")
    ok = True
    for name in names:
        t = [results[b]["timings"][name] for b in results]
        print(f"{name:26s}" + "".join(f"{x * 1e3:10.2f}ms" for x in t)
              + (f"{t[-1] / t[0]:9.1f}x" if len(t) == 2 else ""))
        c = [results[b]["checks"][name] for b in results]
        if len(c) == 2 and not np.allclose(c[0], c[1], rtol=1e-9, atol=1e-9):
            ok = False
            print(f"  mismatch between backends: {c}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
