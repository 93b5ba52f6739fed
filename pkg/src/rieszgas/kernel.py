"""Interaction kernels, external fields and the configuration energy.

A configuration is an ``(N, d)`` float array of particle positions. The
energy of a configuration under a :class:`GasModel` is

    H_N(x) = (1/N) sum_i V(x_i) + (beta/N^2) sum_{i<j} k(x_i - x_j)

where ``beta`` is the model's coupling constant.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma

from ._accel import get_backend
from .errors import SingularityError, UsageError

KIND_POWER, KIND_LOG, KIND_LINEAR = 0, 1, 2
FIELD_POWER, FIELD_TABLE = 0, 1


def unit_ball_volume(d):
    return math.pi ** (d / 2) / gamma(1 + d / 2)


def unit_sphere_area(d):
    """Surface area sigma_d of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / gamma(d / 2)


@dataclass(frozen=True)
class KernelSpec:
    """Riesz kernel |x|^-(d-alpha) or Coulomb kernel in dimension ``d``."""

    family: str
    d: int
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.d < 1:
            raise UsageError(f"dimension must be >= 1, got {self.d}")
        if self.family == "riesz":
            if self.alpha is None or not 0 < self.alpha < self.d:
                raise UsageError(f"Riesz kernel needs 0 < alpha < d, got alpha={self.alpha}, d={self.d}")
        elif self.family == "coulomb":
            if self.alpha is not None and self.alpha != 2:
                raise UsageError("Coulomb kernel has alpha = 2")
        else:
            raise UsageError(f"unknown kernel family {self.family!r}")

    @classmethod
    def riesz(cls, d, alpha):
        return cls("riesz", int(d), float(alpha))

    @classmethod
    def coulomb(cls, d):
        return cls("coulomb", int(d))

    @property
    def code(self):
        """(kind, s) as understood by the compiled pair kernels."""
        if self.family == "riesz":
            return KIND_POWER, float(self.d - self.alpha)
        if self.d >= 3:
            return KIND_POWER, float(self.d - 2)
        if self.d == 2:
            return KIND_LOG, 0.0
        return KIND_LINEAR, 0.0

    @property
    def effective_alpha(self):
        return 2.0 if self.family == "coulomb" else self.alpha

    @property
    def fundamental_constant(self):
        """Constant c with -c Delta_alpha k = delta_0."""
        d = self.d
        if self.family == "coulomb":
            if d == 1:
                return 0.5
            if d == 2:
                return 1 / (2 * math.pi)
            return 1 / (d * (d - 2) * unit_ball_volume(d))
        a = self.alpha
        return math.pi ** (a - d / 2) / (4 * math.pi**2) * gamma((d - a) / 2) / gamma(a / 2)

    def value_r(self, r):
        """Kernel as a function of the distance (vectorized)."""
        kind, s = self.code
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            if kind == KIND_POWER:
                return np.where(r == 0, np.inf, r ** (-s))
            if kind == KIND_LOG:
                return -np.log(r)
        return -r


def _as_points(x, d=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise UsageError(f"expected an (N, d) array, got shape {x.shape}")
    if d is not None and x.shape[1] != d:
        raise UsageError(f"dimension mismatch: expected d={d}, got {x.shape[1]}")
    return x


class ExternalField:
    """Confining potential V acting on each particle."""

    radial = False

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def compiled(self):
        """(fkind, fparams, tab_r, tab_v) for the fused kernels, or None."""
        return None


class RadialField(ExternalField):
    """V(x) = v(|x|) from a profile ``v`` and its derivative ``dv``."""

    radial = True

    def __init__(self, v, dv, d2v=None, name="radial"):
        self._v = v
        self._dv = dv
        self._d2v = d2v
        self.name = name

    def profile(self, r):
        return self._v(np.asarray(r, dtype=float))

    def dprofile(self, r):
        return self._dv(np.asarray(r, dtype=float))

    def d2profile(self, r):
        r = np.asarray(r, dtype=float)
        if self._d2v is not None:
            return self._d2v(r)
        h = 1e-6 * np.maximum(1.0, r)
        return (self.dprofile(r + h) - self.dprofile(np.abs(r - h))) / (r + h - np.abs(r - h))

    @property
    def has_second_derivative(self):
        return self._d2v is not None

    def w(self, r, d):
        """r^(d-1) v'(r)."""
        r = np.asarray(r, dtype=float)
        return r ** (d - 1) * self.dprofile(r)

    def value(self, x):
        x = _as_points(x)
        return self.profile(np.linalg.norm(x, axis=1))

    def gradient(self, x):
        x = _as_points(x)
        r = np.linalg.norm(x, axis=1)
        dv = np.asarray(self.dprofile(r), dtype=float) * np.ones_like(r)
        out = np.zeros_like(x)
        pos = r > 0
        out[pos] = (dv[pos] / r[pos])[:, None] * x[pos]
        at0 = ~pos
        if np.any(at0) and np.any(dv[at0] != 0):
            raise SingularityError("grad V undefined at the origin: v'(0) != 0")
        if not np.all(np.isfinite(out)):
            raise SingularityError("non-finite field gradient")
        return out


class PowerField(RadialField):
    """v(r) = scale * r**p, p > 0."""

    def __init__(self, p, scale=1.0):
        p = float(p)
        if p <= 0:
            raise UsageError(f"power must be > 0, got {p}")
        self.p = p
        self.scale = float(scale)
        super().__init__(
            lambda r: self.scale * r**p,
            self._deriv,
            lambda r: self.scale * p * (p - 1) * r ** (p - 2) if p != 2 else np.full_like(r, 2 * self.scale),
            name="quadratic" if p == 2 and scale == 1 else f"power{p:g}",
        )

    def _deriv(self, r):
        p = self.p
        if p > 1:
            return self.scale * p * r ** (p - 1)
        with np.errstate(divide="ignore"):
            return self.scale * p * r ** (p - 1)

    def compiled(self):
        return FIELD_POWER, np.array([self.p, self.scale]), np.zeros(2), np.zeros(2)


def quadratic():
    return PowerField(2.0)


class TableField(RadialField):
    """Piecewise-linear profile on a radial grid, optionally plus ``[r^2 - R]_+``.

    Beyond the last grid radius the last slope is extended linearly and a
    warning is emitted.
    """

    def __init__(self, r, values, hinge=None, name="table"):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != values.shape or r.size < 2:
            raise UsageError("table needs matching 1-d radius/value arrays of length >= 2")
        if np.any(np.diff(r) <= 0):
            raise UsageError("table radii must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise UsageError("table values must be finite")
        self.r = r
        self.values = values
        self.hinge = None if hinge is None else float(hinge)
        super().__init__(self._interp, self._slope, name=name)

    def _segments(self, r):
        idx = np.clip(np.searchsorted(self.r, r, side="right") - 1, 0, self.r.size - 2)
        slope = (self.values[idx + 1] - self.values[idx]) / (self.r[idx + 1] - self.r[idx])
        return idx, slope

    def _interp(self, r):
        if np.any(r > self.r[-1]):
            warnings.warn("radius beyond tabulated range; extrapolating linearly", stacklevel=3)
        idx, slope = self._segments(r)
        val = self.values[idx] + slope * (r - self.r[idx])
        if self.hinge is not None:
            val = val + np.maximum(r * r - self.hinge, 0.0)
        return val

    def _slope(self, r):
        _, slope = self._segments(r)
        if self.hinge is not None:
            slope = slope + np.where(r * r > self.hinge, 2 * r, 0.0)
        return np.where(r == 0, 0.0, slope)

    def compiled(self):
        hinge = -1.0 if self.hinge is None else self.hinge
        return FIELD_TABLE, np.array([hinge, 0.0]), self.r, self.values


class PrescribedField(ExternalField):
    """V(x) = -coupling * U(x) + [|x|^2 - R]_+ for a target potential U.

    ``potential`` maps an ``(M, d)`` array to ``(M,)``. When
    ``radial_potential`` (a function of r) is given the field can be
    tabulated for the fused kernels via :meth:`tabulate`.
    """

    def __init__(self, potential, R, potential_gradient=None, radial_potential=None,
                 radial_potential_derivative=None, coupling=1.0):
        self.potential = potential
        self.R = float(R)
        self.potential_gradient = potential_gradient
        self.radial_potential = radial_potential
        self.radial_potential_derivative = radial_potential_derivative
        self.coupling = float(coupling)
        self.radial = radial_potential is not None

    def value(self, x):
        x = _as_points(x)
        r2 = np.einsum("ij,ij->i", x, x)
        return -self.coupling * np.asarray(self.potential(x), dtype=float) + np.maximum(r2 - self.R, 0.0)

    def _potential_gradient(self, x):
        if self.potential_gradient is not None:
            return np.asarray(self.potential_gradient(x), dtype=float)
        if self.radial_potential_derivative is not None:
            r = np.linalg.norm(x, axis=1)
            du = np.asarray(self.radial_potential_derivative(r), dtype=float)
            out = np.zeros_like(x)
            pos = r > 0
            out[pos] = (du[pos] / r[pos])[:, None] * x[pos]
            return out
        # central differences, one axis at a time
        out = np.empty_like(x)
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        for k in range(x.shape[1]):
            e = np.zeros_like(x)
            e[:, k] = h[:, k]
            out[:, k] = (np.asarray(self.potential(x + e)) - np.asarray(self.potential(x - e))) / (2 * h[:, k])
        return out

    def gradient(self, x):
        x = _as_points(x)
        r2 = np.einsum("ij,ij->i", x, x)
        hinge = np.where(r2 > self.R, 2.0, 0.0)[:, None] * x
        return -self.coupling * self._potential_gradient(x) + hinge

    def profile(self, r):
        if self.radial_potential is None:
            raise UsageError("field has no radial profile")
        r = np.asarray(r, dtype=float)
        return -self.coupling * self.radial_potential(r) + np.maximum(r * r - self.R, 0.0)

    def tabulate(self, r_max, n=4001):
        """Linear table of -coupling*U(r) on [0, r_max] with the exact hinge term."""
        if self.radial_potential is None:
            raise UsageError("only radial targets can be tabulated")
        r = np.linspace(0.0, float(r_max), int(n))
        vals = -self.coupling * np.asarray(self.radial_potential(r), dtype=float)
        return TableField(r, vals, hinge=self.R, name="prescribed-table")


class CustomField(ExternalField):
    """Arbitrary V with user-supplied vectorized value and gradient."""

    def __init__(self, value, gradient, name="custom"):
        self._value = value
        self._gradient = gradient
        self.name = name

    def value(self, x):
        return np.asarray(self._value(_as_points(x)), dtype=float)

    def gradient(self, x):
        return np.asarray(self._gradient(_as_points(x)), dtype=float)


@dataclass
class GasModel:
    """Kernel, external field and coupling beta (W = beta * k)."""

    kernel: KernelSpec
    field: ExternalField = field(default_factory=quadratic)
    coupling: float = 1.0

    def __post_init__(self):
        if not self.coupling > 0:
            raise UsageError(f"coupling must be > 0, got {self.coupling}")

    @property
    def d(self):
        return self.kernel.d

    def compiled_args(self):
        """Arguments for the fused numba kernels, or None for Python fields."""
        comp = self.field.compiled()
        if comp is None:
            return None
        kind, s = self.kernel.code
        fkind, fparams, tab_r, tab_v = comp
        return kind, s, float(self.coupling), fkind, fparams, tab_r, tab_v


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """k(x - y); +inf on the diagonal for the singular kernels."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != spec.d or y.size != spec.d:
        raise UsageError(f"points must have dimension {spec.d}")
    return float(spec.value_r(math.sqrt(float(np.dot(x - y, x - y)))))


def eval_kernel_gradient(spec: KernelSpec, x, y):
    """grad_x k(x - y)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != spec.d or y.size != spec.d:
        raise UsageError(f"points must have dimension {spec.d}")
    diff = x - y
    r2 = float(np.dot(diff, diff))
    if r2 == 0.0:
        raise SingularityError("kernel gradient is singular at x = y")
    kind, s = spec.code
    if kind == KIND_POWER:
        c = -s * r2 ** (-0.5 * s - 1)
    elif kind == KIND_LOG:
        c = -1.0 / r2
    else:
        c = -1.0 / math.sqrt(r2)
    return c * diff


def canonical_order(x):
    """Lexicographic row order; label-independent summation order."""
    return np.lexsort(x.T[::-1])


def check_configuration(x, model: GasModel):
    x = _as_points(x, model.d)
    if x.shape[0] < 1:
        raise UsageError("configuration needs N >= 1")
    if not np.all(np.isfinite(x)):
        raise UsageError("configuration has non-finite coordinates")
    return x


def total_energy(x, model: GasModel, summation="deterministic", backend=None) -> float:
    """H_N of the configuration; +inf when two particles coincide.

    ``summation="deterministic"`` sums in canonical (sorted) order so any
    relabelling gives a bit-identical result; ``"parallel"`` uses the
    threaded reduction.
    """
    x = check_configuration(x, model)
    be = get_backend(backend)
    n = x.shape[0]
    kind, s = model.kernel.code
    if summation == "deterministic":
        xs = np.ascontiguousarray(x[canonical_order(x)])
        pair = be.pair_energy(xs, kind, s)
    elif summation == "parallel":
        xs = np.ascontiguousarray(x)
        pair = be.pair_energy_parallel(xs, kind, s)
    else:
        raise UsageError(f"unknown summation mode {summation!r}")
    vsum = float(np.sum(model.field.value(xs)))
    if pair == math.inf:
        return math.inf
    return vsum / n + model.coupling / n**2 * pair


def energy_gradient(x, model: GasModel, backend=None):
    """grad H_N as an ``(N, d)`` array."""
    x = np.ascontiguousarray(check_configuration(x, model))
    be = get_backend(backend)
    n = x.shape[0]
    kind, s = model.kernel.code
    g = np.empty_like(x)
    be.pair_energy_grad(x, kind, s, g)
    if not np.all(np.isfinite(g)):
        raise SingularityError("coincident particles: gradient undefined")
    g *= model.coupling / n**2
    g += model.field.gradient(x) / n
    return g


def energy_delta(x, model: GasModel, i, newpos, backend=None) -> float:
    """H_N(x with x_i -> newpos) - H_N(x), in O(N)."""
    x = np.ascontiguousarray(check_configuration(x, model))
    n = x.shape[0]
    if not 0 <= i < n:
        raise UsageError(f"particle index {i} out of range for N={n}")
    y = np.asarray(newpos, dtype=float).reshape(-1)
    if y.size != model.d:
        raise UsageError(f"new position must have dimension {model.d}")
    be = get_backend(backend)
    kind, s = model.kernel.code
    dp = be.pair_delta(x, int(i), y, kind, s)
    if dp == math.inf:
        return math.inf
    v = model.field.value(np.vstack([y, x[i]]))
    return float(v[0] - v[1]) / n + model.coupling / n**2 * dp
