"""1D Lagrange bases and Gauss rules on [0, 1], and their tensor products."""
import functools

import numpy as np


@functools.lru_cache(maxsize=None)
def gauss(npts):
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def equispaced(degree):
    return np.linspace(0.0, 1.0, degree + 1)


def lagrange(nodes, x):
    """Values and first derivatives of the Lagrange basis on ``nodes`` at points ``x``.

    Returns two arrays of shape (len(nodes), len(x)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(nodes)
    vals = np.ones((k, len(x)))
    ders = np.zeros((k, len(x)))
    for i in range(k):
        others = [j for j in range(k) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others])
        for j in others:
            vals[i] *= x - nodes[j]
        for m in others:
            term = np.ones(len(x))
            for j in others:
                if j != m:
                    term *= x - nodes[j]
            ders[i] += term
        vals[i] /= denom
        ders[i] /= denom
    return vals, ders


def tensor_basis(degree, npts):
    """Tensor Lagrange basis of degree ``degree`` on the unit square at an ``npts``^2 Gauss grid.

    Basis index ``i + (degree+1) * j`` pairs x-factor ``i`` with y-factor ``j``;
    quadrature point index ``qx + npts * qy`` likewise. Returns
    ``(values, dx, dy, weights, points)``.
    """
    q, w = gauss(npts)
    v, d = lagrange(equispaced(degree), q)
    # [j, i, b, a] -> basis i + p*j, point a + npts*b
    values = np.einsum("ia,jb->jiba", v, v).reshape((degree + 1) ** 2, npts * npts)
    dx = np.einsum("ia,jb->jiba", d, v).reshape((degree + 1) ** 2, npts * npts)
    dy = np.einsum("ia,jb->jiba", v, d).reshape((degree + 1) ** 2, npts * npts)
    weights = np.outer(w, w).ravel()  # w[qy] * w[qx] is symmetric anyway
    qy, qx = np.meshgrid(q, q, indexing="ij")
    points = np.column_stack([qx.ravel(), qy.ravel()])
    return values, dx, dy, weights, points


def tensor_eval(degree, points):
    """Tensor Lagrange basis (index ``i + (degree+1) j``) and gradient at reference points (npts, 2)."""
    points = np.atleast_2d(points)
    nodes = equispaced(degree)
    vx, dx = lagrange(nodes, points[:, 0])
    vy, dy = lagrange(nodes, points[:, 1])
    p = degree + 1
    values = np.einsum("ia,ja->jia", vx, vy).reshape(p * p, -1)
    gx = np.einsum("ia,ja->jia", dx, vy).reshape(p * p, -1)
    gy = np.einsum("ia,ja->jia", vx, dy).reshape(p * p, -1)
    return values, gx, gy
