"""Equilibrium measures of radial Coulomb gases and related potential theory.

Radial densities are written dmu = M(r) dsigma_r dr, so the mass in the shell
[a, b] is sigma_d * int_a^b M(t) t^(d-1) dt. Potentials use the unscaled
kernel |x|^-(d-alpha); a model with coupling beta sees beta times them.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import (FieldTooWeakError, UnsupportedFieldError, UnsupportedModelError,
                     UsageError)
from .kernel import GasModel, KernelSpec, PrescribedField, RadialField, unit_sphere_area
from .measures import DiscreteMeasure

QUAD_OPTS = {"epsabs": 1e-13, "epsrel": 1e-12, "limit": 200}


def _quad(f, a, b):
    if b <= a:
        return 0.0
    return integrate.quad(f, a, b, **QUAD_OPTS)[0]


def _random_directions(n, d, rng):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1)[:, None]


@dataclass
class RadialDensity:
    """Radial profile M on [r0, R0] in dimension d >= 3."""

    d: int
    r0: float
    R0: float
    profile: Callable
    _cdf_table: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.r0 < self.R0:
            raise UsageError(f"need 0 <= r0 < R0, got r0={self.r0}, R0={self.R0}")

    @property
    def support_radius(self):
        return self.R0

    def M(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r0) & (r <= self.R0)
        vals = np.asarray(self.profile(np.where(inside, r, self.r0)), dtype=float) * np.ones_like(r)
        return np.where(inside, vals, 0.0)

    def _shell(self, t):
        return float(self.M(t)) * unit_sphere_area(self.d) * t ** (self.d - 1)

    def mass(self, a=None, b=None):
        """Mass of the shell a <= |x| <= b (whole support by default)."""
        a = self.r0 if a is None else max(a, self.r0)
        b = self.R0 if b is None else min(b, self.R0)
        return _quad(self._shell, a, b)

    def cdf_table(self, n=2049):
        """(radii, cumulative mass) with panels integrated separately."""
        if self._cdf_table is None or self._cdf_table[0].size != n:
            r = np.linspace(self.r0, self.R0, n)
            pieces = [_quad(self._shell, r[k], r[k + 1]) for k in range(n - 1)]
            self._cdf_table = (r, np.concatenate([[0.0], np.cumsum(pieces)]))
        return self._cdf_table

    def cdf(self, r):
        """Mass of the ball of radius r, by cumulative quadrature."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        grid, cum = self.cdf_table()
        out = np.empty_like(r)
        for k, rk in enumerate(r):
            if rk <= self.r0:
                out[k] = 0.0
            elif rk >= self.R0:
                out[k] = cum[-1]
            else:
                j = int(np.searchsorted(grid, rk, side="right") - 1)
                out[k] = cum[j] + _quad(self._shell, grid[j], rk)
        return out

    def radial_quantile(self, u):
        grid, cum = self.cdf_table()
        return np.interp(np.asarray(u, dtype=float) * cum[-1], cum, grid)

    def sample(self, n, rng):
        r = self.radial_quantile(rng.random(n))
        return _random_directions(n, self.d, rng) * r[:, None]


def uniform_ball_density(d, radius=1.0):
    """Uniform probability on the centred ball of the given radius."""
    m = d / (unit_sphere_area(d) * radius**d)
    return RadialDensity(d, 0.0, float(radius), lambda r: np.full_like(np.asarray(r, dtype=float), m))


@dataclass
class UniformSphere:
    """Normalized surface measure on the sphere of radius ``radius``."""

    radius: float
    d: int

    @property
    def support_radius(self):
        return self.radius

    def radial_quantile(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.radius)

    def sample(self, n, rng):
        return _random_directions(n, self.d, rng) * self.radius


@dataclass
class GridDensity:
    """Piecewise-constant density on cubic cells of side ``h`` centred at ``centers``."""

    centers: np.ndarray
    weights: np.ndarray
    h: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.isfinite(w).all():
            raise UsageError("grid weights must be finite and >= 0")
        self.weights = w / w.sum()

    @property
    def d(self):
        return self.centers.shape[1]

    @property
    def support_radius(self):
        return float(np.max(np.linalg.norm(self.centers, axis=1)) + 0.5 * self.h * math.sqrt(self.d))

    def sample(self, n, rng):
        idx = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.centers[idx] + self.h * (rng.random((n, self.d)) - 0.5)


@dataclass
class Mixture:
    """Convex combination of sources that can be sampled."""

    sources: list
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        self.weights = w / w.sum()

    @property
    def d(self):
        return self.sources[0].d

    def sample(self, n, rng):
        counts = rng.multinomial(n, self.weights)
        pts = np.concatenate([s.sample(int(c), rng) for s, c in zip(self.sources, counts)])
        return pts[rng.permutation(n)]


@dataclass
class EquilibriumResult:
    density: RadialDensity
    robin: float
    beta: float
    R_star: Optional[float] = None
    mass_error: float = 0.0

    @property
    def r0(self):
        return self.density.r0

    @property
    def R0(self):
        return self.density.R0

    def summary(self):
        return {"d": self.density.d, "beta": self.beta, "r0": self.r0, "R0": self.R0,
                "C_star": self.robin, "R_star": self.R_star, "mass_error": self.mass_error}


# ------------------------------------------------------------ radial solver

def _find_R0(w, target):
    f = lambda r: float(w(r)) - target
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e8:
            raise FieldTooWeakError(
                f"w(r) = r^(d-1) v'(r) stays below beta(d-2) = {target:g} for r <= 1e8")
    lo = 0.0
    return optimize.brentq(lambda r: -target if r == 0 else f(r), lo, hi,
                           xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _check_hypotheses(v: RadialField, d, R0):
    r = np.linspace(0.0, 1.5 * R0, 3001)[1:]
    scale = max(1.0, float(np.max(np.abs(v.profile(r)))))
    convex = bool(np.all(np.asarray(v.d2profile(r)) >= -1e-9 * scale / R0**2))
    wr = v.w(r, d)
    w_incr = bool(np.all(np.diff(wr) >= -1e-12 * max(1.0, float(np.max(np.abs(wr))))))
    if not (convex or w_incr):
        raise UnsupportedFieldError(
            "field violates both hypotheses on [0, 1.5*R0]: v is not convex and "
            "w(r) = r^(d-1) v'(r) is not increasing")
    return convex, w_incr


def _find_r0(v: RadialField, R0):
    grid = np.unique(np.concatenate([np.geomspace(R0 * 1e-12, R0, 400),
                                     np.linspace(0.0, R0, 4001)[1:]]))
    pos = np.asarray(v.dprofile(grid)) > 0
    if not pos.any():
        raise FieldTooWeakError("v' is not positive anywhere below R0")
    k = int(np.argmax(pos))
    if k == 0:
        return 0.0
    lo, hi = grid[k - 1], grid[k]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if float(v.dprofile(mid)) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def solve_radial_coulomb(d, v: RadialField, beta=1.0) -> EquilibriumResult:
    """Equilibrium measure for V(x) = v(|x|), W = beta/|x-y|^(d-2), d >= 3.

    The support is the ring r0 <= |x| <= R0 with w(R0) = beta (d-2) and
    r0 = inf{r > 0 : v'(r) > 0}; the profile is
    M(r) = w'(r) / (beta (d-2) sigma_d r^(d-1)).
    """
    if d < 3:
        raise UnsupportedModelError("radial Coulomb solver needs d >= 3")
    if not beta > 0:
        raise UsageError("beta must be > 0")
    target = beta * (d - 2)
    R0 = _find_R0(lambda r: v.w(r, d), target)
    _check_hypotheses(v, d, R0)
    r0 = _find_r0(v, R0)
    sigma = unit_sphere_area(d)
    denom = beta * (d - 2) * sigma

    if v.has_second_derivative:
        def profile(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(r > 0, r, 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                m = np.where(r > 0, (d - 1) * v.dprofile(safe) / safe + v.d2profile(r),
                             d * v.d2profile(r))
            return m / denom
    else:
        def profile(r):
            r = np.asarray(r, dtype=float)
            h = 1e-6 * np.maximum(1.0, r)
            wp = (v.w(r + h, d) - v.w(np.abs(r - h), d)) / (r + h - np.abs(r - h))
            return wp / (denom * np.maximum(r, 1e-300) ** (d - 1))

    dens = RadialDensity(d, r0, R0, profile)
    mass = dens.mass()
    robin = beta / R0 ** (d - 2) + float(v.profile(R0))
    R_star = None
    probe = dens.M(np.linspace(r0, R0, 17))
    if r0 == 0 and np.allclose(probe, probe[0], rtol=1e-9, atol=0):
        R_star = R0
    return EquilibriumResult(dens, robin, float(beta), R_star, abs(mass - 1.0))


def uniform_ball_radius(d, beta=1.0):
    """Radius (beta (d-2) / 2)^(1/d) of the equilibrium ball for v(r) = r^2."""
    if d < 3:
        raise UnsupportedModelError("uniform-ball equilibrium needs d >= 3")
    return (beta * (d - 2) / 2) ** (1.0 / d)


# ------------------------------------------------------------------ potentials

def sphere_potential(r_sphere, x_radius, d):
    """Coulomb potential at radius x_radius of the uniform unit-mass sphere."""
    if d < 3:
        raise UnsupportedModelError("sphere potential needs d >= 3")
    return 1.0 / max(float(r_sphere), float(x_radius)) ** (d - 2)


def _radial_potential_scalar(density: RadialDensity, r):
    d, r0, R0 = density.d, density.r0, density.R0
    sigma = unit_sphere_area(d)
    M = lambda t: float(density.M(t))
    outer = sigma * _quad(lambda t: M(t) * t, max(r, r0), R0)
    if r <= r0:
        return outer
    inner = sigma * _quad(lambda t: M(t) * t ** (d - 1), r0, min(r, R0))
    return inner / r ** (d - 2) + outer


def radial_coulomb_potential(density: RadialDensity, r):
    """U(r) = int |x-y|^-(d-2) dmu(y) at |x| = r, via the shell formula."""
    r_arr = np.asarray(r, dtype=float)
    vals = np.array([_radial_potential_scalar(density, float(t)) for t in r_arr.ravel()])
    return float(vals[0]) if r_arr.ndim == 0 else vals.reshape(r_arr.shape)


def radial_coulomb_potential_derivative(density: RadialDensity, r):
    """dU/dr = -sigma_d (d-2) r^(1-d) int_0^r M(t) t^(d-1) dt."""
    d = density.d
    sigma = unit_sphere_area(d)
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros_like(r_arr)
    for k, t in enumerate(r_arr):
        if t > density.r0:
            inner = _quad(lambda s: float(density.M(s)) * s ** (d - 1), density.r0, min(t, density.R0))
            out[k] = -sigma * (d - 2) * inner / t ** (d - 1)
    return float(out[0]) if np.ndim(r) == 0 else out.reshape(np.shape(r))


@dataclass(frozen=True)
class PotentialEstimate:
    value: float
    stderr: float


def riesz_potential_estimate(source, alpha, x, budget=100_000, seed=0, method="auto",
                             strata=64) -> PotentialEstimate:
    """U_alpha of ``source`` at the point x.

    Exact summation for a :class:`DiscreteMeasure`, the radial shell
    formula for a :class:`RadialDensity` with alpha = 2, and Monte Carlo
    otherwise (radially stratified when the source exposes a radial
    quantile). ``method="mc"`` forces Monte Carlo.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    if not 0 < alpha < d:
        raise UsageError(f"need 0 < alpha < d, got alpha={alpha}, d={d}")
    s = d - alpha
    if isinstance(source, DiscreteMeasure):
        if source.d != d:
            raise UsageError("dimension mismatch")
        r = np.linalg.norm(source.points - x, axis=1)
        if np.any((r == 0) & (source.weights > 0)):
            return PotentialEstimate(math.inf, 0.0)
        return PotentialEstimate(float(np.sum(source.weights * r ** (-s))), 0.0)
    if method == "auto" and isinstance(source, RadialDensity) and alpha == 2:
        return PotentialEstimate(radial_coulomb_potential(source, float(np.linalg.norm(x))), 0.0)
    if method == "auto" and isinstance(source, UniformSphere) and alpha == 2:
        return PotentialEstimate(sphere_potential(source.radius, float(np.linalg.norm(x)), d), 0.0)
    if method not in ("auto", "mc"):
        raise UsageError(f"unknown method {method!r}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    budget = int(budget)
    if hasattr(source, "radial_quantile") and budget >= 2 * strata:
        per = budget // strata
        means = np.empty(strata)
        varis = np.empty(strata)
        for k in range(strata):
            u = (k + rng.random(per)) / strata
            pts = _random_directions(per, d, rng) * source.radial_quantile(u)[:, None]
            vals = np.linalg.norm(pts - x, axis=1) ** (-s)
            means[k] = vals.mean()
            varis[k] = vals.var(ddof=1)
        return PotentialEstimate(float(means.mean()), float(math.sqrt(np.sum(varis / per)) / strata))
    pts = source.sample(budget, rng)
    vals = np.linalg.norm(pts - x, axis=1) ** (-s)
    return PotentialEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(budget)))


# ------------------------------------------------------- optimality checks

def _require_alpha2(model: GasModel):
    if model.kernel.effective_alpha != 2 or model.d < 3:
        raise UnsupportedModelError("radial potential checks need the Coulomb kernel in d >= 3")
    if not model.field.radial:
        raise UnsupportedModelError("radial potential checks need a radial field")


def robin_constant(density: RadialDensity, model: GasModel) -> float:
    """C = int (beta U + V) dmu by nested radial quadrature."""
    _require_alpha2(model)
    d = density.d
    sigma = unit_sphere_area(d)
    beta = model.coupling

    def integrand(t):
        u = _radial_potential_scalar(density, t)
        return (beta * u + float(model.field.profile(t))) * float(density.M(t)) * sigma * t ** (d - 1)

    return _quad(integrand, density.r0, density.R0)


@dataclass(frozen=True)
class ELResidual:
    on_support_max_dev: float
    off_support_min_excess: float
    fitted_C: float


def euler_lagrange_residual(candidate: RadialDensity, model: GasModel, grid) -> ELResidual:
    """Grid check of beta U + V = C on the support and >= C off it."""
    _require_alpha2(model)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise UsageError("empty verification grid")
    total = model.coupling * radial_coulomb_potential(candidate, grid) + model.field.profile(grid)
    on = (grid >= candidate.r0) & (grid <= candidate.R0)
    if not on.any():
        raise UsageError("no grid point lies on the candidate's support")
    c = float(np.mean(total[on]))
    dev = float(np.max(np.abs(total[on] - c)))
    off = total[~on] - c
    excess = float(np.min(off)) if off.size else math.inf
    return ELResidual(dev, excess, c)


def prescribed_field(target, alpha, d, R, potential=None, coupling=1.0) -> PrescribedField:
    """V = -U_alpha(target) + [|x|^2 - R]_+, whose equilibrium is ``target``.

    For alpha = 2 and a :class:`RadialDensity` the potential comes from the
    shell formula; otherwise pass ``potential`` (points -> values).
    """
    if not 0 < alpha < d:
        raise UsageError(f"need 0 < alpha < d, got alpha={alpha}, d={d}")
    if not R > 0:
        raise UsageError("R must be > 0")
    support = getattr(target, "support_radius", None)
    if support is None:
        raise UsageError("target must expose support_radius")
    if support > R:
        raise UsageError(f"target support radius {support:g} is not inside B(0, R={R:g})")
    if support > math.sqrt(R):
        warnings.warn(f"support radius {support:g} exceeds sqrt(R) = {math.sqrt(R):g}; "
                      "the hinge term is active on part of the support", stacklevel=2)
    if potential is not None:
        return PrescribedField(potential, R, coupling=coupling)
    if alpha == 2 and isinstance(target, RadialDensity) and d >= 3 and target.d == d:
        u = lambda r: radial_coulomb_potential(target, r)
        du = lambda r: radial_coulomb_potential_derivative(target, r)
        return PrescribedField(lambda x: u(np.linalg.norm(np.atleast_2d(x), axis=1)), R,
                               radial_potential=u, radial_potential_derivative=du,
                               coupling=coupling)
    raise UsageError("no closed-form potential for this target; pass potential=")


# ---------------------------------------------------------- nice partitions

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise UsageError("box needs lo < hi on every axis")

    @classmethod
    def cube(cls, d, half_width=1.0):
        return cls(tuple([-float(half_width)] * d), tuple([float(half_width)] * d))

    @property
    def d(self):
        return len(self.lo)

    @property
    def edges(self):
        return np.array(self.hi) - np.array(self.lo)

    @property
    def volume(self):
        return float(np.prod(self.edges))

    def min_edge(self):
        return float(np.min(self.edges))

    def max_edge(self):
        return float(np.max(self.edges))


class UniformDensity:
    """Constant density on a box; masses and quantiles in closed form."""

    def __init__(self, box: Box, total=1.0):
        self.box = box
        self.level = total / box.volume

    def __call__(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.level)

    def box_mass(self, lo, hi):
        return self.level * float(np.prod(np.asarray(hi) - np.asarray(lo)))

    def axis_quantile(self, lo, hi, axis, fraction):
        return lo[axis] + fraction * (hi[axis] - lo[axis])


def _box_mass(density, lo, hi):
    if hasattr(density, "box_mass"):
        return density.box_mass(lo, hi)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size == 1:
        return _quad(lambda t: float(density(np.array([[t]]))[0]), lo[0], hi[0])
    res = integrate.cubature(lambda pts: np.asarray(density(pts), dtype=float), lo, hi,
                             rtol=1e-13, atol=1e-14, max_subdivisions=20000)
    return float(res.estimate)


def _cut_points(density, lo, hi, axis, fractions):
    """Cut points t_k on ``axis`` with mass(lo..t_k) = fractions[k] * mass(lo..hi)."""
    lo = list(lo)
    hi = list(hi)
    if hasattr(density, "axis_quantile"):
        return [density.axis_quantile(lo, hi, axis, f) for f in fractions]
    total = _box_mass(density, lo, hi)
    cuts = []
    a = lo[axis]
    for f in fractions:
        def g(t):
            h2 = hi.copy()
            h2[axis] = t
            return _box_mass(density, lo, h2) - f * total if t > lo[axis] else -f * total
        t = optimize.brentq(g, a, hi[axis], xtol=1e-15 * (hi[axis] - lo[axis]), rtol=1e-15)
        cuts.append(t)
        a = t
    return cuts


def _iroot(n, k):
    b = int(round(n ** (1.0 / k)))
    while b**k > n:
        b -= 1
    while (b + 1) ** k <= n:
        b += 1
    return b


def _slices(density, lo, hi, axis, counts, n):
    cum = np.cumsum(counts)[:-1] / n
    cuts = _cut_points(density, lo, hi, axis, list(cum))
    edges = [lo[axis]] + cuts + [hi[axis]]
    out = []
    for k in range(len(counts)):
        l2 = list(lo)
        h2 = list(hi)
        l2[axis] = edges[k]
        h2[axis] = edges[k + 1]
        out.append((tuple(l2), tuple(h2), counts[k]))
    return out


def _partition(density, lo, hi, axis, n, d):
    if n == 1:
        return [Box(tuple(lo), tuple(hi))]
    dd = d - axis
    if dd == 1:
        return [Box(l2, h2) for l2, h2, _ in _slices(density, lo, hi, axis, [1] * n, n)]
    b = _iroot(n, dd)
    b0 = 1.0 / (2 ** (1.0 / dd) - 1)
    if b <= b0:
        return [Box(l2, h2) for l2, h2, _ in _slices(density, lo, hi, axis, [1] * n, n)]
    digits = []
    m = n
    for _ in range(dd + 1):
        digits.append(m % b)
        m //= b
    assert m == 0 and digits[dd] == 1, "base-b expansion must have leading digit 1"
    counts = [b ** (dd - 1) + sum(b**k for k in range(dd) if i <= digits[k]) for i in range(1, b + 1)]
    assert sum(counts) == n
    out = []
    for l2, h2, ni in _slices(density, lo, hi, axis, counts, n):
        out.extend(_partition(density, l2, h2, axis + 1, ni, d))
    return out


def nice_partition(box: Box, density, n, delta=None):
    """Split ``box`` into ``n`` sub-boxes of equal ``density`` mass.

    Recursive quantile construction: along the first axis the box is cut
    into b = floor(n^(1/d)) slabs holding n_i cells each (from the base-b
    digits of n), and each slab is split recursively along the remaining
    axes. ``density`` is a callable on (M, d) arrays, or any object with
    ``box_mass``/``axis_quantile``. ``delta`` (optional) is checked as a
    lower/upper density bound at a few probe points.
    """
    n = int(n)
    if n < 1:
        raise UsageError("n must be >= 1")
    if delta is not None:
        rng = np.random.default_rng(0)
        probe = np.array(box.lo) + box.edges * rng.random((256, box.d))
        h = np.asarray(density(probe), dtype=float)
        if not np.all(np.isfinite(h)):
            raise UsageError("density is not finite on the box")
        if np.any(h < delta * (1 - 1e-12)) or np.any(h > (1 + 1e-12) / delta):
            raise UsageError(f"density violates delta <= h <= 1/delta with delta={delta}")
    return _partition(density, list(box.lo), list(box.hi), 0, n, box.d)


def partition_constant(d, delta):
    """Edge-length constant C(d, delta) that the recursive construction satisfies."""
    if d == 1:
        return delta**-2
    b0 = 1.0 / (2 ** (1.0 / d) - 1)
    return max(2 ** (d - 1) * delta**-2, 2 * partition_constant(d - 1, delta),
               (b0 + 1) ** (d - 1) * delta**-2, b0 + 1)


def measured_partition_constant(box: Box, cells, n):
    """Smallest C for which every cell meets the edge-length bounds."""
    root = n ** (1.0 / box.d)
    lower = max(box.min_edge() / (root * c.min_edge()) for c in cells)
    upper = max(root * c.max_edge() / box.max_edge() for c in cells)
    return max(lower, upper)
