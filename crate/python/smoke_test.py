#!/usr/bin/env python3
"""Smoke test for the perinc Python extension.

Builds the cdylib with cargo, stages it as an importable module, and checks
a few end-to-end invariants against the native solvers.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_stage() -> Path:
    subprocess.run(["cargo", "build", "-p", "perinc-py"], cwd=REPO, check=True)
    lib = REPO / "target" / "debug" / "libperinc.so"
    if not lib.exists():  # e.g. macOS
        lib = REPO / "target" / "debug" / "libperinc.dylib"
    stage = Path(tempfile.mkdtemp(prefix="perinc-py-"))
    shutil.copy(lib, stage / "perinc.so")
    return stage


def binomial(n: int, k: int) -> int:
    return math.comb(n, k)


def main() -> int:
    sys.path.insert(0, str(build_and_stage()))
    import perinc

    spec = perinc.IncrementSpec(d=2, tau=1, period=1.0)
    assert spec.d == 2 and spec.tau == 1 and spec.period == 1.0

    # composition weights match the binomial closed form
    comp = perinc.composition_coeffs(3, 10)
    assert comp == [binomial(k + 2, 2) for k in range(len(comp))], comp
    strided = perinc.strided_coeffs(3, 2, 10)
    assert all(
        (c == comp[k // 2] if k % 2 == 0 else c == 0) for k, c in enumerate(strided)
    ), strided

    # forward and inverse kernels are reciprocal and positive
    spec1 = perinc.IncrementSpec(d=1, tau=1, period=1.0)
    fwd = perinc.kernel_eval(spec1, 256, "forward")
    inv = perinc.kernel_eval(spec1, 256, "inverse")
    assert all(v > 0 for v in fwd)
    assert max(abs(a * b - 1.0) for a, b in zip(fwd, inv)) < 1e-12

    f = perinc.DensityModel.diagonal_ar1([0.5], [1.0])
    g = perinc.DensityModel.white(1, 0.2)
    assert f.dim == 1 and g.dim == 1
    a = [[complex(0.6**j, 0.0)] for j in range(6)]

    # spectral solve agrees with its dual form and with the covariance oracle
    res = perinc.predict(f, g, a, spec1, m=2048, l=14)
    assert res["mse"] > 0
    assert abs(res["mse"] - res["mse_integral"]) <= 1e-6 * res["mse"]
    oracle = perinc.oracle_mse(f, g, a, spec1, m=2048, l=14, lp=48)
    assert abs(res["mse"] - oracle["mse"]) <= 1e-4 * res["mse"], (res, oracle)

    # the finite-horizon solve with full support reproduces the same value
    fin = perinc.predict_finite(f, g, a, spec1, m=2048, n=5, l=14)
    assert abs(fin["mse"] - res["mse"]) <= 1e-8 * (1.0 + res["mse"]), (fin, res)

    # factorized route on a kernel-compatible moving-average noise
    g_ma = [[[complex(math.sqrt(0.2), 0.0)]]]
    fact = perinc.predict_factorized(f, g_ma, a, spec1, m=2048, l=14, q_max=12)
    assert abs(fact["mse"] - res["mse"]) <= 1e-6 * res["mse"], (fact, res)

    # validation errors surface as ValueError
    try:
        perinc.IncrementSpec(d=0, tau=1, period=1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("d=0 should be rejected")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
