"""Empirical-measure diagnostics: rate functional, Fortet-Mourier distance, radial KS."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, sparse
from scipy.spatial.distance import cdist

from .errors import MethodUnavailableError, UsageError
from .kernel import GasModel, canonical_order

LP_MAX_ATOMS = 500


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] != self.weights.size:
            raise UsageError("one weight per atom is required")
        if np.any(self.weights < 0) or not np.isfinite(self.weights).all():
            raise UsageError("weights must be finite and >= 0")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise UsageError(f"weights sum to {self.weights.sum()!r}, expected 1")

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.weights.size

    @property
    def support_radius(self):
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))


def empirical_measure(x) -> DiscreteMeasure:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    return DiscreteMeasure(x.copy(), np.full(n, 1.0 / n))


def discrete_rate_I(measure: DiscreteMeasure, model: GasModel) -> float:
    """sum_i w_i V(x_i) + (beta/2) sum_{i != j} w_i w_j k(x_i - x_j)."""
    pts, w = measure.points, measure.weights
    field = float(np.dot(w, model.field.value(pts)))
    n = pts.shape[0]
    if n < 2:
        return field
    iu, ju = np.triu_indices(n, k=1)
    diff = pts[iu] - pts[ju]
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    ww = w[iu] * w[ju]
    live = ww > 0
    if np.any(r[live] == 0) and model.kernel.code[0] != 2:
        return math.inf
    with np.errstate(divide="ignore"):
        k = model.kernel.value_r(r[live])
    return field + model.coupling * float(np.dot(ww[live], k))


# --------------------------------------------------------- Fortet-Mourier

def _subsample(m: DiscreteMeasure, k, rng):
    idx = rng.choice(m.size, size=k, replace=True, p=m.weights)
    return empirical_measure(m.points[idx])


def _union(mu, nu):
    pts = np.concatenate([mu.points, nu.points])
    signed = np.concatenate([mu.weights, -nu.weights])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    c = np.zeros(uniq.shape[0])
    np.add.at(c, inv.reshape(-1), signed)
    return uniq, c


def _fm_lp(mu, nu):
    pts, c = _union(mu, nu)
    n = c.size
    if n == 1 or not np.any(c):
        return 0.0
    dist = cdist(pts, pts)
    # constraints with d_ij >= 2 are implied by |f| <= 1
    i, j = np.nonzero((dist < 2.0) & ~np.eye(n, dtype=bool))
    rows = np.arange(i.size)
    A = sparse.csr_matrix((np.concatenate([np.ones(i.size), -np.ones(i.size)]),
                           (np.concatenate([rows, rows]), np.concatenate([i, j]))),
                          shape=(i.size, n))
    res = optimize.linprog(-c, A_ub=A if i.size else None, b_ub=dist[i, j] if i.size else None,
                           bounds=[(-1.0, 1.0)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(min(2.0, max(0.0, -res.fun)))


def _truncated_assignment(mu, nu):
    if mu.size != nu.size or not (mu.is_uniform() and nu.is_uniform()):
        raise MethodUnavailableError(
            "truncated-transport needs equal atom counts and uniform weights; use exact-lp")
    cost = np.minimum(cdist(mu.points, nu.points), 2.0)
    r, c = optimize.linear_sum_assignment(cost)
    return float(cost[r, c].sum() / mu.size)


def fortet_mourier(mu: DiscreteMeasure, nu: DiscreteMeasure, method="exact-lp", seed=0) -> float:
    """sup of int f d(mu - nu) over f with |f| <= 1 and Lip(f) <= 1.

    ``exact-lp`` solves the finite LP over the values of f on the union of
    supports; when the two measures carry more than 500 atoms in total each
    is resampled (seeded) to 250 atoms first. ``truncated-transport`` is the
    assignment problem with cost min(|x - y|, 2).
    """
    if mu.d != nu.d:
        raise UsageError("dimension mismatch")
    if method == "truncated-transport":
        return _truncated_assignment(mu, nu)
    if method != "exact-lp":
        raise UsageError(f"unknown method {method!r}")
    if mu.size + nu.size > LP_MAX_ATOMS:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        half = LP_MAX_ATOMS // 2
        mu, nu = _subsample(mu, half, rng), _subsample(nu, half, rng)
    return _fm_lp(mu, nu)


def wasserstein1(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact W1 for Euclidean cost (assignment when possible, transport LP otherwise)."""
    if mu.d != nu.d:
        raise UsageError("dimension mismatch")
    cost = cdist(mu.points, nu.points)
    if mu.size == nu.size and mu.is_uniform() and nu.is_uniform():
        r, c = optimize.linear_sum_assignment(cost)
        return float(cost[r, c].sum() / mu.size)
    m, n = cost.shape
    rows_a = sparse.kron(sparse.eye(m), np.ones((1, n)))
    rows_b = sparse.kron(np.ones((1, m)), sparse.eye(n))
    A = sparse.vstack([rows_a, rows_b]).tocsr()
    res = optimize.linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
                           bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------- radial KS

@dataclass
class RadialCDF:
    """Radial distribution function r -> F(r), clipped to [0, 1]."""

    func: Callable
    support: tuple = (0.0, math.inf)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.clip(np.asarray(self.func(r), dtype=float), 0.0, 1.0)

    @classmethod
    def power(cls, radius, exponent):
        """F(r) = (r / radius)^exponent on [0, radius]."""
        return cls(lambda r: np.minimum(np.maximum(r, 0.0) / radius, 1.0) ** exponent,
                   (0.0, float(radius)))


def radial_cdf_of_density(density) -> RadialCDF:
    return RadialCDF(density.cdf, (density.r0, density.R0))


def _radii(x):
    return np.linalg.norm(np.atleast_2d(np.asarray(x, dtype=float)), axis=1)


def ks_statistic(samples, cdf) -> float:
    """sup |F_n - F| for one-dimensional samples (right-continuous F_n)."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = s.size
    if n == 0:
        raise UsageError("need at least one sample")
    f = np.asarray(cdf(s), dtype=float)
    k = np.arange(1, n + 1)
    return float(max(np.max(k / n - f), np.max(f - (k - 1) / n)))


def radial_ks(x, cdf) -> float:
    return ks_statistic(_radii(x), cdf)


def max_radius(x) -> float:
    r = _radii(x)
    if r.size == 0:
        raise UsageError("empty configuration")
    return float(r.max())


# -------------------------------------------------------------------- output

def radial_histogram(x, bins=50, r_max=None):
    r = _radii(x)
    hi = float(r.max()) if r_max is None else float(r_max)
    counts, edges = np.histogram(r, bins=bins, range=(0.0, hi if hi > 0 else 1.0))
    return edges, counts


def write_histogram_csv(path, x, bins=50, r_max=None):
    edges, counts = radial_histogram(x, bins, r_max)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])


def diagnostics(x, cdf=None, reference=None, fm_method="truncated-transport", seed=0):
    """Summary dict {ks, max_radius, fm_distance, fm_method, N, seed}.

    ``reference`` is a configuration (e.g. an equal-size sample of the
    equilibrium measure); the truncated-transport fast path falls back to
    exact-lp when the sizes differ.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x = x[canonical_order(x)]
    out = {"N": int(x.shape[0]), "seed": int(seed), "ks": None, "max_radius": max_radius(x),
           "fm_distance": None, "fm_method": None}
    if cdf is not None:
        out["ks"] = radial_ks(x, cdf)
    if reference is not None:
        mu, nu = empirical_measure(x), empirical_measure(reference)
        try:
            out["fm_distance"] = fortet_mourier(mu, nu, fm_method, seed)
            out["fm_method"] = fm_method
        except MethodUnavailableError:
            out["fm_distance"] = fortet_mourier(mu, nu, "exact-lp", seed)
            out["fm_method"] = "exact-lp"
    return out


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
