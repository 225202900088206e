"""Compare the numba scatter kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--n 32] [--repeat 20]

The end-to-end section times a full assembly in subprocesses with
DPGSCHWARZ_DISABLE_NUMBA=0 and =1. A scipy CSR matvec is timed next to a
plain numba CSR loop to document why CG uses scipy for the product.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dpgschwarz import kernels
from dpgschwarz.dpg_core import assemble, local_dpg
from dpgschwarz.mesh import build_mesh

_E2E = """
import time
from dpgschwarz import kernels
from dpgschwarz.dpg_core import assemble, manufactured_problem
from dpgschwarz.mesh import build_mesh
f = manufactured_problem()[2]
assemble(build_mesh(2), f=f)
mesh = build_mesh({n})
t = time.perf_counter(); s = assemble(mesh, f=f); dt = time.perf_counter() - t
print(kernels.BACKEND, s.A.nnz, dt)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _numba_csr_matvec():
    from numba import njit

    @njit
    def matvec(indptr, indices, data, x):
        out = np.empty(indptr.size - 1)
        for i in range(out.size):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] = acc
        return out

    return matvec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    s = assemble(build_mesh(args.n))
    A, dm = s.A, s.dofmap
    loc = local_dpg(s.mesh.h).A_local
    vecs = np.random.default_rng(1).standard_normal(dm.l2g.shape)
    x = np.random.default_rng(0).standard_normal(s.N)
    l2g = np.ascontiguousarray(dm.l2g, dtype=np.int64)
    signs = np.ascontiguousarray(dm.signs, dtype=float)

    rows = [("scatter_triplets", "numpy", best(lambda: kernels.scatter_triplets_numpy(l2g, signs, loc), args.repeat)),
            ("scatter_vector", "numpy", best(lambda: kernels.scatter_vector_numpy(l2g, signs, vecs, s.N), args.repeat)),
            ("csr_matvec", "scipy", best(lambda: A @ x, args.repeat))]
    if kernels.HAVE_NUMBA:
        mv = _numba_csr_matvec()
        mv(A.indptr, A.indices, A.data, x)
        rows += [("scatter_triplets", "numba", best(lambda: kernels._scatter_triplets_nb(l2g, signs, loc), args.repeat)),
                 ("scatter_vector", "numba", best(lambda: kernels._scatter_vector_nb(l2g, signs, vecs, s.N), args.repeat)),
                 ("csr_matvec", "numba", best(lambda: mv(A.indptr, A.indices, A.data, x), args.repeat))]
    else:
        print("numba unavailable; only the numpy path is timed")

    print(f"n={args.n} N={s.N} nnz={A.nnz}")
    print(f"{'kernel':18s} {'backend':8s} {'best [ms]':>10s}")
    for name, backend, t in sorted(rows):
        print(f"{name:18s} {backend:8s} {1e3 * t:10.3f}")

    print("\nassembly, end to end")
    for disable in ("0", "1"):
        env = dict(os.environ, DPGSCHWARZ_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", _E2E.format(n=args.n)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  backend={out[0]:6s} nnz={out[1]} time={float(out[2]):.3f} s")


if __name__ == "__main__":
    main()
