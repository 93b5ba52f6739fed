"""MCMC sampling of the Gibbs law exp(-beta_N H_N) / Z_N.

Random-walk Metropolis (sequential single-particle moves), MALA
(whole-configuration Langevin proposals with exact correction) and an
unadjusted Euler-Maruyama integrator of the Langevin diffusion. When the
model's field has a compiled form and the numba backend is active, whole
blocks of sweeps run inside one fused kernel; otherwise a Python driver
calls the backend's pair kernels.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._accel import get_backend
from .errors import InitializationError, SingularityError, StepSizeError, UsageError
from .kernel import GasModel, check_configuration, total_energy

TARGET_ACCEPT = {"metropolis": 0.234, "mala": 0.574}
TRACE_HEADER = ("sweep", "beta_N", "energy", "accept_rate_rw", "accept_rate_mala", "max_radius")


@dataclass(frozen=True)
class AnnealSchedule:
    """beta_N as a function of N."""

    kind: str = "nsquared"
    value: Optional[float] = None
    func: Optional[Callable[[int], float]] = None

    @classmethod
    def nsquared(cls):
        return cls("nsquared")

    @classmethod
    def fixed(cls, beta):
        return cls("fixed", value=float(beta))

    @classmethod
    def custom(cls, func):
        return cls("custom", func=func)

    def beta(self, n):
        if self.kind == "nsquared":
            b = float(n) ** 2
        elif self.kind == "fixed":
            b = self.value
        elif self.kind == "custom":
            b = float(self.func(n))
        else:
            raise UsageError(f"unknown schedule {self.kind!r}")
        if not b > 0:
            raise UsageError(f"beta_N must be > 0, got {b}")
        return b


@dataclass
class SamplerParams:
    algorithm: str = "mala"
    step_size: float = 0.05
    adapt: bool = True
    target_accept: Optional[float] = None
    sweeps: int = 1000
    burn_in: int = 0
    seed: int = 0
    thin: int = 1
    grad_cap: float = 1e8
    resync_every: int = 100
    adapt_gain: float = 1.0
    adapt_t0: float = 10.0
    adapt_kappa: float = 0.6

    def __post_init__(self):
        if self.algorithm not in ("metropolis", "mala", "mixed"):
            raise UsageError(f"unknown algorithm {self.algorithm!r}")
        if not self.step_size > 0:
            raise UsageError("step_size must be > 0")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise UsageError("target_accept must lie in (0, 1)")
        if self.sweeps < 0 or self.burn_in < 0:
            raise UsageError("sweeps and burn_in must be >= 0")
        if self.burn_in > self.sweeps:
            raise UsageError("burn_in must not exceed sweeps")
        if self.thin < 1:
            raise UsageError("thin must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    def target(self, kind):
        if self.target_accept is not None:
            return self.target_accept
        return TARGET_ACCEPT[kind]


def _zero_counts():
    return {"rw_proposed": 0, "rw_accepted": 0, "mala_proposed": 0, "mala_accepted": 0,
            "mala_fallback": 0}


@dataclass
class ChainState:
    """Configuration plus the chain's cached energy, RNG and statistics."""

    x: np.ndarray
    energy: float
    beta_n: float
    rng: np.random.Generator
    log_step: dict = field(default_factory=dict)
    counts: dict = field(default_factory=_zero_counts)
    adapt_t: dict = field(default_factory=lambda: {"metropolis": 0, "mala": 0})
    sweep: int = 0
    grad: Optional[np.ndarray] = None
    vcache: Optional[np.ndarray] = None

    def acceptance_rate(self, kind):
        p = self.counts[f"{kind}_proposed"]
        return self.counts[f"{kind}_accepted"] / p if p else math.nan


@dataclass(frozen=True)
class TraceRow:
    sweep: int
    beta_N: float
    energy: float
    accept_rate_rw: float
    accept_rate_mala: float
    max_radius: float


@dataclass
class ChainResult:
    trace: list
    state: ChainState


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def chain_rngs(seed, n_chains):
    """Independent generators for parallel chains from one 64-bit seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(int(seed)).spawn(n_chains)]


def metropolis_accepts(beta_delta, u):
    """Metropolis rule: accept iff beta*Delta <= 0 or u < exp(-beta*Delta)."""
    beta_delta = np.asarray(beta_delta, dtype=float)
    with np.errstate(over="ignore"):
        return (beta_delta <= 0) | (np.asarray(u) < np.exp(-beta_delta))


# ---------------------------------------------------------------- initial states

def _uniform_ball(n, d, radius, rng):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return g * (radius * rng.random(n) ** (1.0 / d))[:, None]


def init_configuration(n, model: GasModel, strategy="uniform-ball", seed=0, radius=1.0,
                       box=None, density=None, delta=None, max_batches=1000):
    """Initial configuration of ``n`` particles.

    Strategies: ``uniform-ball`` (i.i.d. uniform in a ball of ``radius``),
    ``gibbs-field`` (i.i.d. with density proportional to exp(-V), by
    rejection in the cube of half-width ``radius``) and ``stratified`` (one
    uniform point in each cell of an equal-mass box partition).
    """
    if n < 1:
        raise UsageError("N must be >= 1")
    d = model.d
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    if strategy == "uniform-ball":
        return _uniform_ball(n, d, float(radius), rng)
    if strategy == "gibbs-field":
        return _gibbs_rejection(n, model, float(radius), rng, max_batches)
    if strategy == "stratified":
        from .equilibrium import Box, UniformDensity, nice_partition

        box = Box.cube(d, radius) if box is None else box
        density = UniformDensity(box) if density is None else density
        cells = nice_partition(box, density, n, delta=delta)
        lo = np.array([c.lo for c in cells])
        hi = np.array([c.hi for c in cells])
        return lo + (hi - lo) * rng.random((n, d))
    raise UsageError(f"unknown init strategy {strategy!r}")


def _gibbs_rejection(n, model, half_width, rng, max_batches):
    d = model.d
    probe = rng.uniform(-half_width, half_width, size=(4096, d))
    vmin = float(np.min(model.field.value(probe)))
    if model.field.radial and hasattr(model.field, "profile"):
        rr = np.linspace(0.0, half_width * math.sqrt(d), 4097)
        vmin = min(vmin, float(np.min(model.field.profile(rr))))
    out = []
    got = 0
    for _ in range(max_batches):
        cand = rng.uniform(-half_width, half_width, size=(max(64, 4 * n), d))
        keep = rng.random(cand.shape[0]) < np.exp(-(model.field.value(cand) - vmin))
        out.append(cand[keep])
        got += int(keep.sum())
        if got >= n:
            return np.concatenate(out)[:n]
    raise InitializationError(f"rejection sampler produced {got} < {n} points")


# ------------------------------------------------------------------ chain state

def _energy_grad_py(x, model, be):
    n = x.shape[0]
    kind, s = model.kernel.code
    g = np.empty_like(x)
    pair = be.pair_energy_grad(x, kind, s, g)
    g *= model.coupling / n**2
    try:
        g += model.field.gradient(x) / n
    except SingularityError:
        g[:] = np.nan
    vsum = float(np.sum(model.field.value(x)))
    h = math.inf if pair == math.inf else vsum / n + model.coupling / n**2 * pair
    return h, g


def _energy_grad(x, model, backend):
    comp = model.compiled_args()
    if backend == "numba" and comp is not None:
        from . import _numba_kernels as nk

        return nk.energy_and_gradient(x, *comp)
    return _energy_grad_py(x, model, get_backend(backend))


def _resolve_backend(backend):
    from ._accel import default_backend

    return default_backend() if backend is None else backend


def new_chain_state(x, model: GasModel, beta_n, rng, params: SamplerParams, backend=None):
    backend = _resolve_backend(backend)
    x = np.array(check_configuration(x, model), dtype=float, order="C")
    h, g = _energy_grad(x, model, backend)
    ls = math.log(params.step_size)
    return ChainState(x=x, energy=float(h), beta_n=float(beta_n), rng=rng,
                      log_step={"metropolis": ls, "mala": ls}, grad=g,
                      vcache=np.asarray(model.field.value(x), dtype=float).copy())


def resync(state: ChainState, model: GasModel, backend=None):
    """Recompute the cached energy, gradient and field values from scratch."""
    backend = _resolve_backend(backend)
    h, g = _energy_grad(state.x, model, backend)
    state.energy = float(h)
    state.grad = g
    state.vcache = np.asarray(model.field.value(state.x), dtype=float).copy()
    return state


# ---------------------------------------------------------------- move blocks

def _rm_gain(t, params):
    return params.adapt_gain / (t + params.adapt_t0) ** params.adapt_kappa


def _metropolis_block(state, model, params, nsweeps, adapt, backend):
    x = state.x
    n, d = x.shape
    normals = state.rng.standard_normal((nsweeps, n, d))
    uniforms = state.rng.random((nsweeps, n))
    target = params.target("metropolis")
    t_start = state.adapt_t["metropolis"]
    comp = model.compiled_args()
    if backend == "numba" and comp is not None:
        from . import _numba_kernels as nk

        counts = np.zeros(2, dtype=np.int64)
        energy, ls = nk.metropolis_block(
            x, state.vcache, state.energy, state.beta_n, *comp, normals, uniforms,
            state.log_step["metropolis"], adapt, target, t_start,
            params.adapt_gain, params.adapt_t0, params.adapt_kappa, counts)
        prop, acc = int(counts[0]), int(counts[1])
    else:
        be = get_backend(backend)
        kind, s = model.kernel.code
        w = model.coupling / n**2
        energy, ls = state.energy, state.log_step["metropolis"]
        prop = acc = 0
        for t in range(nsweeps):
            sigma = math.exp(ls)
            acc_t = 0
            for i in range(n):
                y = x[i] + sigma * normals[t, i]
                vy = float(model.field.value(y[None, :])[0])
                dp = be.pair_delta(x, i, y, kind, s)
                dh = math.inf if dp == math.inf else (vy - state.vcache[i]) / n + w * dp
                if metropolis_accepts(state.beta_n * dh, uniforms[t, i]):
                    x[i] = y
                    state.vcache[i] = vy
                    energy += dh
                    acc_t += 1
            prop += n
            acc += acc_t
            if adapt:
                ls += _rm_gain(t_start + t, params) * (acc_t / n - target)
    state.energy = float(energy)
    state.log_step["metropolis"] = float(ls)
    state.counts["rw_proposed"] += prop
    state.counts["rw_accepted"] += acc
    if adapt:
        state.adapt_t["metropolis"] += nsweeps
    state.grad = None


def _mala_block(state, model, params, nsteps, adapt, backend):
    if state.grad is None:
        resync(state, model, backend)
    x = state.x
    n, d = x.shape
    normals = state.rng.standard_normal((nsteps, n, d))
    uniforms = state.rng.random(nsteps)
    target = params.target("mala")
    t_start = state.adapt_t["mala"]
    comp = model.compiled_args()
    if backend == "numba" and comp is not None:
        from . import _numba_kernels as nk

        counts = np.zeros(4, dtype=np.int64)
        energy, ls = nk.mala_block(
            x, state.grad, state.energy, state.beta_n, *comp, normals, uniforms,
            state.log_step["mala"], adapt, target, t_start,
            params.adapt_gain, params.adapt_t0, params.adapt_kappa, params.grad_cap, counts)
        counts = [int(c) for c in counts]
    else:
        be = get_backend(backend)
        beta = state.beta_n
        cap2 = (params.grad_cap / beta) ** 2
        energy, ls, g = state.energy, state.log_step["mala"], state.grad
        counts = [0, 0, 0, 0]
        for t in range(nsteps):
            sigma = math.exp(ls)
            tau = 0.5 * sigma * sigma
            gx2 = float(np.sum(g * g))
            mala_x = math.isfinite(gx2) and gx2 <= cap2
            mx = x - tau * beta * g if mala_x else x
            y = mx + sigma * normals[t]
            ey, gy = _energy_grad_py(y, model, be)
            accepted = False
            if math.isfinite(ey):
                gy2 = float(np.sum(gy * gy))
                mala_y = math.isfinite(gy2) and gy2 <= cap2
                my = y - tau * beta * gy if mala_y else y
                log_a = (-beta * (ey - energy)
                         - (np.sum((x - my) ** 2) - np.sum((y - mx) ** 2)) / (4 * tau))
                accepted = bool(metropolis_accepts(-log_a, uniforms[t]))
            counts[0 if mala_x else 2] += 1
            if accepted:
                counts[1 if mala_x else 3] += 1
                x[:] = y
                g = gy
                energy = ey
            if adapt:
                ls += _rm_gain(t_start + t, params) * (float(accepted) - target)
        state.grad = g
    state.energy = float(energy)
    state.log_step["mala"] = float(ls)
    state.counts["mala_proposed"] += counts[0]
    state.counts["mala_accepted"] += counts[1]
    state.counts["rw_proposed"] += counts[2]
    state.counts["rw_accepted"] += counts[3]
    state.counts["mala_fallback"] += counts[2]
    if adapt:
        state.adapt_t["mala"] += nsteps
    state.vcache = None


def metropolis_sweep(state: ChainState, model: GasModel, params: SamplerParams,
                     adapt=False, backend=None) -> ChainState:
    """N sequential single-particle Gaussian random-walk moves (updates ``state``)."""
    backend = _resolve_backend(backend)
    if state.vcache is None:
        resync(state, model, backend)
    _metropolis_block(state, model, params, 1, adapt, backend)
    return state


def mala_step(state: ChainState, model: GasModel, params: SamplerParams,
              adapt=False, backend=None) -> ChainState:
    """One MALA move of the whole configuration (updates ``state``).

    Proposal y = x - tau * grad(beta_N H_N)(x) + sqrt(2 tau) xi with
    tau = step^2 / 2. Where |grad(beta_N H_N)| exceeds ``params.grad_cap``
    the proposal at that point is a plain random walk of the same variance;
    the acceptance ratio uses the matching density in each direction.
    """
    backend = _resolve_backend(backend)
    if not math.isfinite(state.energy):
        raise SingularityError("MALA needs a configuration without coincident particles")
    _mala_block(state, model, params, 1, adapt, backend)
    return state


def advance(state: ChainState, model: GasModel, params: SamplerParams, nsweeps,
            adapt=False, backend=None, block=1000) -> ChainState:
    """Run ``nsweeps`` sweeps of ``params.algorithm`` with periodic energy resync.

    For MALA one sweep is one whole-configuration move; for ``mixed`` a
    sweep is a Metropolis sweep followed by one MALA move.
    """
    backend = _resolve_backend(backend)
    done = 0
    every = params.resync_every if params.resync_every > 0 else nsweeps
    while done < nsweeps:
        to_sync = every - (state.sweep % every) if every else nsweeps
        m = min(block, nsweeps - done, to_sync)
        if params.algorithm == "metropolis":
            if state.vcache is None:
                resync(state, model, backend)
            _metropolis_block(state, model, params, m, adapt, backend)
        elif params.algorithm == "mala":
            _mala_block(state, model, params, m, adapt, backend)
        else:
            for _ in range(m):
                if state.vcache is None:
                    resync(state, model, backend)
                _metropolis_block(state, model, params, 1, adapt, backend)
                _mala_block(state, model, params, 1, adapt, backend)
        done += m
        state.sweep += m
        if params.resync_every > 0 and state.sweep % params.resync_every == 0:
            resync(state, model, backend)
    return state


def max_radius_of(x):
    return float(np.max(np.linalg.norm(x, axis=1)))


def run_chain(model: GasModel, n, schedule: Optional[AnnealSchedule] = None,
              params: Optional[SamplerParams] = None, observers=(), init=None,
              backend=None) -> ChainResult:
    """Burn-in (with optional step adaptation) then thinned sampling sweeps.

    ``init`` is an ``(N, d)`` array or an init strategy name. Observers are
    called as ``obs(row, positions_copy)`` at every recorded sweep. Step
    sizes are frozen after burn-in.
    """
    backend = _resolve_backend(backend)
    schedule = AnnealSchedule.nsquared() if schedule is None else schedule
    params = SamplerParams() if params is None else params
    beta_n = schedule.beta(n)
    init_ss, chain_ss = np.random.SeedSequence(int(params.seed)).spawn(2)
    if init is None or isinstance(init, str):
        x0 = init_configuration(n, model, strategy=init or "uniform-ball",
                                seed=np.random.Generator(np.random.PCG64(init_ss)))
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.shape[0] != n:
            raise UsageError(f"initial configuration has {x0.shape[0]} particles, expected {n}")
    rng = np.random.Generator(np.random.PCG64(chain_ss))
    state = new_chain_state(x0, model, beta_n, rng, params, backend)
    if params.burn_in:
        advance(state, model, params, params.burn_in, adapt=params.adapt, backend=backend)
    state.sweep = 0
    trace = []
    remaining = params.sweeps
    last = dict(state.counts)
    while remaining > 0:
        m = min(params.thin, remaining)
        advance(state, model, params, m, adapt=False, backend=backend)
        remaining -= m
        if m < params.thin:
            break
        c = state.counts
        drw = c["rw_proposed"] - last["rw_proposed"]
        dml = c["mala_proposed"] - last["mala_proposed"]
        row = TraceRow(
            sweep=state.sweep,
            beta_N=beta_n,
            energy=state.energy,
            accept_rate_rw=(c["rw_accepted"] - last["rw_accepted"]) / drw if drw else math.nan,
            accept_rate_mala=(c["mala_accepted"] - last["mala_accepted"]) / dml if dml else math.nan,
            max_radius=max_radius_of(state.x),
        )
        last = dict(c)
        trace.append(row)
        for obs in observers:
            obs(row, state.x.copy())
    return ChainResult(trace=trace, state=state)


# --------------------------------------------------------------- diffusion

def euler_maruyama(state: ChainState, model: GasModel, alpha_n, beta_n, dt, nsteps=1,
                   backend=None) -> ChainState:
    """X <- X - alpha_N grad H_N dt + sqrt(2 alpha_N dt / beta_N) xi, no correction.

    The discretization is biased; use it for exploration, not for exact
    sampling of P_N.
    """
    if not dt > 0:
        raise UsageError("dt must be > 0")
    backend = _resolve_backend(backend)
    x = state.x
    n, d = x.shape
    if not math.isfinite(total_energy(x, model, summation="parallel", backend=backend)):
        raise SingularityError("coincident particles")
    normals = state.rng.standard_normal((int(nsteps), n, d))
    comp = model.compiled_args()
    if backend == "numba" and comp is not None:
        from . import _numba_kernels as nk

        kind, s, coupling, fkind, fparams, tab_r, tab_v = comp
        ok = nk.euler_maruyama_block(x, float(alpha_n), float(beta_n), float(dt), kind, s,
                                     coupling, fkind, fparams, tab_r, tab_v, normals)
    else:
        be = get_backend(backend)
        noise = math.sqrt(2.0 * alpha_n * dt / beta_n)
        ok = True
        for t in range(int(nsteps)):
            _, g = _energy_grad_py(x, model, be)
            x += -alpha_n * dt * g + noise * normals[t]
            if not np.all(np.isfinite(x)):
                ok = False
                break
    if not ok:
        raise StepSizeError("Euler-Maruyama step produced non-finite coordinates; reduce dt")
    resync(state, model, backend)
    return state


def euler_maruyama_step(state: ChainState, model: GasModel, alpha_n, beta_n, dt,
                        backend=None) -> ChainState:
    return euler_maruyama(state, model, alpha_n, beta_n, dt, 1, backend=backend)


# ---------------------------------------------------------- discrete toy chain

def grid_metropolis_chain(v_values, beta, nsteps, seed=0, start=0):
    """Metropolis on grid points with +-1 neighbour proposals.

    Target is proportional to exp(-beta * v). Proposals leaving the grid are
    rejected, which keeps the proposal symmetric. Returns the visited states.
    """
    v = np.asarray(v_values, dtype=float)
    rng = make_rng(seed)
    steps = np.where(rng.random(nsteps) < 0.5, -1, 1)
    u = rng.random(nsteps)
    out = np.empty(nsteps + 1, dtype=np.int64)
    cur = int(start)
    out[0] = cur
    m = v.size
    for t in range(nsteps):
        prop = cur + steps[t]
        if 0 <= prop < m and metropolis_accepts(beta * (v[prop] - v[cur]), u[t]):
            cur = prop
        out[t + 1] = cur
    return out


# ------------------------------------------------------------------- file I/O

def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for row in trace:
            wr.writerow([_fmt(getattr(row, k)) for k in TRACE_HEADER])


def write_snapshot_csv(path, x):
    x = np.asarray(x, dtype=float)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x{k + 1}" for k in range(x.shape[1])])
        for row in x:
            wr.writerow([format(float(v), ".17g") for v in row])


def read_snapshot_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not all(h.startswith("x") for h in rows[0]):
        raise UsageError(f"{path}: missing x1,...,xd header")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
