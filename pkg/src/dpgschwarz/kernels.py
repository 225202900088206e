"""Element scatter kernels used by global assembly.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The fallback is used when numba is missing or when the environment variable
``DPGSCHWARZ_DISABLE_NUMBA`` is set to a truthy value at import time. Sparse
matrix-vector products are left to scipy's compiled CSR matvec.
"""
import os

import numpy as np

_DISABLE = os.environ.get("DPGSCHWARZ_DISABLE_NUMBA", "").lower() in ("1", "true", "yes", "on")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference versions (always importable, used by the benchmark and
# tests to cross-check the compiled path)
# ---------------------------------------------------------------------------

def scatter_triplets_numpy(l2g, signs, local):
    """Global (row, col, value) triplets of ``S_e A S_e`` for every element.

    ``l2g`` is (nel, nloc) with -1 marking eliminated dofs; ``signs`` has the
    same shape. ``local`` is the (nloc, nloc) matrix shared by all elements.
    """
    nel, nloc = l2g.shape
    rows = np.repeat(l2g, nloc, axis=1).ravel()
    cols = np.tile(l2g, (1, nloc)).ravel()
    vals = (signs[:, :, None] * signs[:, None, :] * local[None, :, :]).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], vals[keep]


def scatter_vector_numpy(l2g, signs, local_vecs, size):
    keep = l2g >= 0
    return np.bincount(l2g[keep], weights=(signs * local_vecs)[keep], minlength=size)


if HAVE_NUMBA:

    @njit(cache=True)
    def _scatter_triplets_nb(l2g, signs, local):
        nel, nloc = l2g.shape
        count = 0
        for e in range(nel):
            nkeep = 0
            for a in range(nloc):
                if l2g[e, a] >= 0:
                    nkeep += 1
            count += nkeep * nkeep
        rows = np.empty(count, dtype=np.int64)
        cols = np.empty(count, dtype=np.int64)
        vals = np.empty(count)
        k = 0
        for e in range(nel):
            for a in range(nloc):
                ga = l2g[e, a]
                if ga < 0:
                    continue
                for b in range(nloc):
                    gb = l2g[e, b]
                    if gb < 0:
                        continue
                    rows[k] = ga
                    cols[k] = gb
                    vals[k] = signs[e, a] * signs[e, b] * local[a, b]
                    k += 1
        return rows, cols, vals

    @njit(cache=True)
    def _scatter_vector_nb(l2g, signs, local_vecs, size):
        out = np.zeros(size)
        nel, nloc = l2g.shape
        for e in range(nel):
            for a in range(nloc):
                g = l2g[e, a]
                if g >= 0:
                    out[g] += signs[e, a] * local_vecs[e, a]
        return out


def scatter_triplets(l2g, signs, local):
    l2g = np.ascontiguousarray(l2g, dtype=np.int64)
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    local = np.ascontiguousarray(local, dtype=np.float64)
    if HAVE_NUMBA:
        return _scatter_triplets_nb(l2g, signs, local)
    return scatter_triplets_numpy(l2g, signs, local)


def scatter_vector(l2g, signs, local_vecs, size):
    """Sum signed per-element vectors into a global vector of length ``size``."""
    l2g = np.ascontiguousarray(l2g, dtype=np.int64)
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    local_vecs = np.ascontiguousarray(local_vecs, dtype=np.float64)
    if HAVE_NUMBA:
        return _scatter_vector_nb(l2g, signs, local_vecs, size)
    return scatter_vector_numpy(l2g, signs, local_vecs, size)
