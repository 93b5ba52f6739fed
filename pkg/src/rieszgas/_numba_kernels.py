"""numba-compiled pair sums and fused sampler loops.

Kernel codes: ``kind`` 0 is the power kernel |x|^-s, 1 is -log|x|, 2 is -|x|.
Field codes: 0 is ``scale * r**p``, 1 is a linear table in r with an
optional analytic hinge ``[r^2 - R]_+`` (``fparams[0] = R``, negative = off).
"""
import math

import numpy as np
from numba import njit, prange

NAME = "numba"


@njit(cache=True, inline="always")
def pair_value(r2, kind, s):
    if kind == 0:
        if r2 == 0.0:
            return np.inf
        if s == 1.0:
            return 1.0 / math.sqrt(r2)
        if s == 2.0:
            return 1.0 / r2
        return r2 ** (-0.5 * s)
    if kind == 1:
        if r2 == 0.0:
            return np.inf
        return -0.5 * math.log(r2)
    return -math.sqrt(r2)


@njit(cache=True, inline="always")
def pair_coef(r2, kind, s):
    # grad_x k(x - y) = coef * (x - y)
    if r2 == 0.0:
        return np.nan
    if kind == 0:
        return -s * pair_value(r2, kind, s) / r2
    if kind == 1:
        return -1.0 / r2
    return -1.0 / math.sqrt(r2)


@njit(cache=True)
def pair_energy(x, kind, s):
    n, d = x.shape
    tot = 0.0
    for i in range(n):
        row = 0.0
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                r2 += t * t
            row += pair_value(r2, kind, s)
        tot += row
    return tot


@njit(cache=True, parallel=True)
def pair_energy_parallel(x, kind, s):
    n, d = x.shape
    rows = np.zeros(n)
    for i in prange(n):
        row = 0.0
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                r2 += t * t
            row += pair_value(r2, kind, s)
        rows[i] = row
    tot = 0.0
    for i in range(n):
        tot += rows[i]
    return tot


# Fast paths: no inner-loop branches so LLVM can vectorize. The diagonal is
# masked by setting r2 = inf, which makes both the value and the gradient
# coefficient exactly zero for every power kernel.
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}


@njit(cache=True, fastmath=_FM, error_model="numpy")
def _power3_energy_grad(x, s, g):
    n = x.shape[0]
    xt = np.ascontiguousarray(x.T)
    x0 = xt[0]
    x1 = xt[1]
    x2 = xt[2]
    tot = 0.0
    for i in range(n):
        xi0 = x0[i]
        xi1 = x1[i]
        xi2 = x2[i]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        e = 0.0
        if s == 1.0:
            for j in range(n):
                d0 = xi0 - x0[j]
                d1 = xi1 - x1[j]
                d2 = xi2 - x2[j]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                r2 = r2 if j != i else np.inf
                inv = 1.0 / math.sqrt(r2)
                c = -inv * inv * inv
                e += inv
                a0 += c * d0
                a1 += c * d1
                a2 += c * d2
        else:
            for j in range(n):
                d0 = xi0 - x0[j]
                d1 = xi1 - x1[j]
                d2 = xi2 - x2[j]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                r2 = r2 if j != i else np.inf
                v = r2 ** (-0.5 * s)
                c = -s * v / r2
                e += v
                a0 += c * d0
                a1 += c * d1
                a2 += c * d2
        g[i, 0] = a0
        g[i, 1] = a1
        g[i, 2] = a2
        tot += e
    return 0.5 * tot


@njit(cache=True, fastmath=_FM, error_model="numpy")
def _power3_delta(x, i, y, s):
    n = x.shape[0]
    y0 = y[0]
    y1 = y[1]
    y2 = y[2]
    o0 = x[i, 0]
    o1 = x[i, 1]
    o2 = x[i, 2]
    new = 0.0
    old = 0.0
    for j in range(n):
        a0 = y0 - x[j, 0]
        a1 = y1 - x[j, 1]
        a2 = y2 - x[j, 2]
        b0 = o0 - x[j, 0]
        b1 = o1 - x[j, 1]
        b2 = o2 - x[j, 2]
        rn = a0 * a0 + a1 * a1 + a2 * a2
        ro = b0 * b0 + b1 * b1 + b2 * b2
        rn = rn if j != i else np.inf
        ro = ro if j != i else np.inf
        if s == 1.0:
            new += 1.0 / math.sqrt(rn)
            old += 1.0 / math.sqrt(ro)
        else:
            new += rn ** (-0.5 * s)
            old += ro ** (-0.5 * s)
    if new == np.inf:
        return np.inf
    return new - old


@njit(cache=True)
def _generic_energy_grad(x, kind, s, g):
    n, d = x.shape
    for i in range(n):
        for k in range(d):
            g[i, k] = 0.0
    tot = 0.0
    diff = np.empty(d)
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                diff[k] = x[i, k] - x[j, k]
                r2 += diff[k] * diff[k]
            tot += pair_value(r2, kind, s)
            c = pair_coef(r2, kind, s)
            for k in range(d):
                g[i, k] += c * diff[k]
                g[j, k] -= c * diff[k]
    return tot


@njit(cache=True)
def _generic_delta(x, i, y, kind, s):
    n, d = x.shape
    new = 0.0
    old = 0.0
    for j in range(n):
        if j == i:
            continue
        r2n = 0.0
        r2o = 0.0
        for k in range(d):
            t = y[k] - x[j, k]
            r2n += t * t
            u = x[i, k] - x[j, k]
            r2o += u * u
        new += pair_value(r2n, kind, s)
        old += pair_value(r2o, kind, s)
    if new == np.inf:
        return np.inf
    return new - old


@njit(cache=True)
def pair_energy_grad(x, kind, s, g):
    """Pair sum over i<j and its gradient (written into ``g``)."""
    if kind == 0 and x.shape[1] == 3:
        return _power3_energy_grad(x, s, g)
    return _generic_energy_grad(x, kind, s, g)


@njit(cache=True)
def pair_delta(x, i, y, kind, s):
    """sum_j k(y - x_j) - k(x_i - x_j) over j != i."""
    if kind == 0 and x.shape[1] == 3:
        return _power3_delta(x, i, y, s)
    return _generic_delta(x, i, y, kind, s)


@njit(cache=True, inline="always")
def _table_index(tab_r, r):
    m = tab_r.shape[0]
    idx = np.searchsorted(tab_r, r, side="right") - 1
    if idx < 0:
        idx = 0
    if idx > m - 2:
        idx = m - 2
    return idx


@njit(cache=True)
def field_profile(r, fkind, fparams, tab_r, tab_v):
    if fkind == 0:
        p = fparams[0]
        if p == 2.0:
            return fparams[1] * r * r
        return fparams[1] * r**p
    idx = _table_index(tab_r, r)
    slope = (tab_v[idx + 1] - tab_v[idx]) / (tab_r[idx + 1] - tab_r[idx])
    val = tab_v[idx] + slope * (r - tab_r[idx])
    hinge = fparams[0]
    if hinge >= 0.0 and r * r > hinge:
        val += r * r - hinge
    return val


@njit(cache=True)
def field_dprofile(r, fkind, fparams, tab_r, tab_v):
    if fkind == 0:
        p = fparams[0]
        if r == 0.0:
            return 0.0 if p > 1.0 else np.nan
        return fparams[1] * p * r ** (p - 1.0)
    if r == 0.0:
        return 0.0
    idx = _table_index(tab_r, r)
    slope = (tab_v[idx + 1] - tab_v[idx]) / (tab_r[idx + 1] - tab_r[idx])
    hinge = fparams[0]
    if hinge >= 0.0 and r * r > hinge:
        slope += 2.0 * r
    return slope


@njit(cache=True)
def _radius(x, i):
    r2 = 0.0
    for k in range(x.shape[1]):
        r2 += x[i, k] * x[i, k]
    return math.sqrt(r2)


@njit(cache=True)
def field_values(x, fkind, fparams, tab_r, tab_v, out):
    for i in range(x.shape[0]):
        out[i] = field_profile(_radius(x, i), fkind, fparams, tab_r, tab_v)


@njit(cache=True)
def _field_grad_into(x, fkind, fparams, tab_r, tab_v, g, scale):
    # g += scale * grad V(x_i); returns False on a singular gradient
    ok = True
    n, d = x.shape
    for i in range(n):
        r = _radius(x, i)
        dv = field_dprofile(r, fkind, fparams, tab_r, tab_v)
        if not math.isfinite(dv):
            ok = False
            continue
        if r == 0.0:
            continue
        c = scale * dv / r
        for k in range(d):
            g[i, k] += c * x[i, k]
    return ok


@njit(cache=True)
def _log_energy_grad(x, kind, s, coupling, fkind, fparams, tab_r, tab_v, g):
    # returns H_N and writes grad H_N into g
    n = x.shape[0]
    pe = pair_energy_grad(x, kind, s, g)
    w = coupling / (n * n)
    for i in range(n):
        for k in range(x.shape[1]):
            g[i, k] *= w
    vs = 0.0
    for i in range(n):
        vs += field_profile(_radius(x, i), fkind, fparams, tab_r, tab_v)
    ok = _field_grad_into(x, fkind, fparams, tab_r, tab_v, g, 1.0 / n)
    if not ok:
        g[0, 0] = np.nan
    return vs / n + w * pe


@njit(cache=True)
def energy_and_gradient(x, kind, s, coupling, fkind, fparams, tab_r, tab_v):
    g = np.empty_like(x)
    h = _log_energy_grad(x, kind, s, coupling, fkind, fparams, tab_r, tab_v, g)
    return h, g


@njit(cache=True)
def _rm_gain(t, gain, t0, kappa):
    return gain / (t + t0) ** kappa


@njit(cache=True)
def metropolis_block(x, vcache, energy, beta_n, kind, s, coupling,
                     fkind, fparams, tab_r, tab_v,
                     normals, uniforms, log_step, adapt, target, t_start,
                     gain, t0, kappa, counts):
    """Sequential single-particle random-walk sweeps.

    ``counts`` receives [proposals, accepts]. Returns (energy, log_step).
    """
    n, d = x.shape
    nsweeps = normals.shape[0]
    y = np.empty(d)
    inv_n = 1.0 / n
    w = coupling / (n * n)
    for t in range(nsweeps):
        sigma = math.exp(log_step)
        acc = 0
        for i in range(n):
            for k in range(d):
                y[k] = x[i, k] + sigma * normals[t, i, k]
            r2 = 0.0
            for k in range(d):
                r2 += y[k] * y[k]
            vy = field_profile(math.sqrt(r2), fkind, fparams, tab_r, tab_v)
            dh = (vy - vcache[i]) * inv_n + w * pair_delta(x, i, y, kind, s)
            if dh <= 0.0 or uniforms[t, i] < math.exp(-beta_n * dh):
                for k in range(d):
                    x[i, k] = y[k]
                vcache[i] = vy
                energy += dh
                acc += 1
        counts[0] += n
        counts[1] += acc
        if adapt:
            log_step += _rm_gain(t_start + t, gain, t0, kappa) * (acc / n - target)
    return energy, log_step


@njit(cache=True)
def _norm2(a):
    tot = 0.0
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            tot += a[i, k] * a[i, k]
    return tot


@njit(cache=True)
def mala_block(x, g, energy, beta_n, kind, s, coupling,
               fkind, fparams, tab_r, tab_v,
               normals, uniforms, log_step, adapt, target, t_start,
               gain, t0, kappa, cap, counts):
    """MALA steps on the log-density -beta_n * H_N.

    ``g`` holds grad H_N at ``x`` on entry and exit. ``counts`` receives
    [mala proposals, mala accepts, rw proposals, rw accepts].
    Returns (energy, log_step).
    """
    n, d = x.shape
    nsteps = normals.shape[0]
    y = np.empty_like(x)
    gy = np.empty_like(x)
    mx = np.empty_like(x)
    my = np.empty_like(x)
    cap2 = (cap / beta_n) ** 2
    for t in range(nsteps):
        sigma = math.exp(log_step)
        tau = 0.5 * sigma * sigma
        gx2 = _norm2(g)
        mala_x = math.isfinite(gx2) and gx2 <= cap2
        for i in range(n):
            for k in range(d):
                if mala_x:
                    mx[i, k] = x[i, k] - tau * beta_n * g[i, k]
                else:
                    mx[i, k] = x[i, k]
                y[i, k] = mx[i, k] + sigma * normals[t, i, k]
        ey = _log_energy_grad(y, kind, s, coupling, fkind, fparams, tab_r, tab_v, gy)
        accepted = False
        if math.isfinite(ey):
            gy2 = _norm2(gy)
            mala_y = math.isfinite(gy2) and gy2 <= cap2
            fwd = 0.0
            bwd = 0.0
            for i in range(n):
                for k in range(d):
                    if mala_y:
                        my[i, k] = y[i, k] - tau * beta_n * gy[i, k]
                    else:
                        my[i, k] = y[i, k]
                    a = y[i, k] - mx[i, k]
                    b = x[i, k] - my[i, k]
                    fwd += a * a
                    bwd += b * b
            log_a = -beta_n * (ey - energy) - (bwd - fwd) / (4.0 * tau)
            if log_a >= 0.0 or uniforms[t] < math.exp(log_a):
                accepted = True
        if mala_x:
            counts[0] += 1
        else:
            counts[2] += 1
        if accepted:
            if mala_x:
                counts[1] += 1
            else:
                counts[3] += 1
            for i in range(n):
                for k in range(d):
                    x[i, k] = y[i, k]
                    g[i, k] = gy[i, k]
            energy = ey
        if adapt:
            a_ind = 1.0 if accepted else 0.0
            log_step += _rm_gain(t_start + t, gain, t0, kappa) * (a_ind - target)
    return energy, log_step


@njit(cache=True)
def euler_maruyama_block(x, alpha_n, beta_n, dt, kind, s, coupling,
                         fkind, fparams, tab_r, tab_v, normals):
    """Unadjusted Langevin steps. Returns False if a step went non-finite."""
    n, d = x.shape
    g = np.empty_like(x)
    noise = math.sqrt(2.0 * alpha_n * dt / beta_n)
    for t in range(normals.shape[0]):
        _log_energy_grad(x, kind, s, coupling, fkind, fparams, tab_r, tab_v, g)
        for i in range(n):
            for k in range(d):
                x[i, k] += -alpha_n * g[i, k] * dt + noise * normals[t, i, k]
                if not math.isfinite(x[i, k]):
                    return False
    return True
