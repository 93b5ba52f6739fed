"""Vectorized numpy versions of the pair sums (fallback backend).

Same signatures and kernel codes as ``_numba_kernels``; memory is O(N^2).
"""
import numpy as np

NAME = "numpy"


def pair_values(r2, kind, s):
    r2 = np.asarray(r2, dtype=float)
    with np.errstate(divide="ignore"):
        if kind == 0:
            if s == 1.0:
                return 1.0 / np.sqrt(r2)
            if s == 2.0:
                return 1.0 / r2
            return np.where(r2 == 0.0, np.inf, r2 ** (-0.5 * s))
        if kind == 1:
            return -0.5 * np.log(r2)
    return -np.sqrt(r2)


def pair_coefs(r2, kind, s):
    r2 = np.asarray(r2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == 0:
            c = -s * pair_values(r2, kind, s) / r2
        elif kind == 1:
            c = -1.0 / r2
        else:
            c = -1.0 / np.sqrt(r2)
    return np.where(r2 == 0.0, np.nan, c)


def _upper_r2(x):
    n = x.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    diff = x[iu] - x[ju]
    return iu, ju, diff, np.einsum("ij,ij->i", diff, diff)


def pair_energy(x, kind, s):
    if x.shape[0] < 2:
        return 0.0
    _, _, _, r2 = _upper_r2(x)
    return float(np.sum(pair_values(r2, kind, s)))


pair_energy_parallel = pair_energy


def pair_energy_grad(x, kind, s, g):
    n, d = x.shape
    g[:] = 0.0
    if n < 2:
        return 0.0
    diff = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    off = ~np.eye(n, dtype=bool)
    c = np.zeros((n, n))
    c[off] = pair_coefs(r2[off], kind, s)
    g[:] = np.einsum("ij,ijk->ik", c, diff)
    iu = np.triu_indices(n, k=1)
    return float(np.sum(pair_values(r2[iu], kind, s)))


def pair_delta(x, i, y, kind, s):
    others = np.delete(x, i, axis=0)
    if others.shape[0] == 0:
        return 0.0
    dn = others - y
    do = others - x[i]
    new = pair_values(np.einsum("ij,ij->i", dn, dn), kind, s)
    old = pair_values(np.einsum("ij,ij->i", do, do), kind, s)
    tot_new = float(np.sum(new))
    if tot_new == np.inf:
        return np.inf
    return tot_new - float(np.sum(old))
