"""Test-only utilities: brute-force references and finite differences."""

import numpy as np


def fd_grad(f, z, eps=1e-6):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = eps
        out[k] = (f(z + e) - f(z - e)) / (2 * eps)
    return out


def fd_jac(F, z, eps=1e-6):
    """Columns are d F / d z_k; returns shape (N, m) to match Gamma_i = dg_i^T."""
    z = np.asarray(z, dtype=float)
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = eps
        cols.append((np.atleast_1d(F(z + e)) - np.atleast_1d(F(z - e))) / (2 * eps))
    return np.array(cols)


def _quadratic_batch_cost(p, Z):
    C = np.asarray(p.params["targets"])
    W = np.asarray(p.params["weights"])
    total = np.zeros(Z.shape[0])
    for c, Wi in zip(C, W):
        D = Z - c
        total += 0.5 * np.einsum("ki,ij,kj->k", D, Wi, D)
    return total


def _feasible(p, Z):
    A = np.vstack([np.reshape(a, (-1, p.N)) for a in p.params["A"]])
    b = np.concatenate([np.reshape(v, -1) for v in p.params["b"]])
    return np.all(Z @ A.T - b <= 0.0, axis=1)


def grid_search(p, lo, hi, step=1e-4, coarse=1e-2, window=5e-2):
    """Feasible grid minimizer of a constrained quadratic instance.

    Runs a coarse pass over the box ``[lo, hi]^N`` and a fine pass at
    resolution ``step`` around the coarse winner (the cost is convex, so
    the fine window contains the true grid optimum).
    """
    N = p.N

    def best(axes):
        mesh = np.meshgrid(*axes, indexing="ij")
        Z = np.column_stack([m.ravel() for m in mesh])
        f = _quadratic_batch_cost(p, Z)
        f[~_feasible(p, Z)] = np.inf
        return Z[np.argmin(f)]

    z0 = best([np.arange(lo, hi + coarse / 2, coarse)] * N)
    axes = [np.arange(z0[k] - window, z0[k] + window + step / 2, step) for k in range(N)]
    return best(axes)
