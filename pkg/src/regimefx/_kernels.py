"""Hot Monte Carlo kernels, each in a numba and a vectorised numpy flavour.

The two flavours consume the per-path random streams in the same order, so
for a given seed they produce the same paths up to last-ulp differences in
``log``/``exp``. Public callers go through the dispatchers at the bottom,
which pick the flavour from :data:`regimefx._accel.USE_NUMBA`.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, gammaln

from . import _accel
from ._accel import njit
from ._rng import (
    CHAIN_KEY,
    SPOT_KEY,
    nb_stream_state,
    nb_uniform,
    np_stream_state,
    np_uniform,
)

POISSON_CHUNK = 30.0
POISSON_MAX_TERMS = 1000
JUMP_GAMMA = 0
JUMP_POINT_MASS = 1
SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi


def chain_tables(pi: np.ndarray):
    """Exit rates, cumulative off-diagonal rates and fallback targets per row."""
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    n = pi.shape[0]
    off = pi.copy()
    np.fill_diagonal(off, 0.0)
    off = np.maximum(off, 0.0)
    rates = off.sum(axis=1)
    cum = np.cumsum(off, axis=1)
    last = np.arange(n, dtype=np.int64)
    for i in range(n):
        pos = np.nonzero(off[i] > 0.0)[0]
        if pos.size:
            last[i] = pos[-1]
    return rates, cum, last


def series_cap(x):
    """Series length so the neglected Poisson(x) tail is below 1e-12."""
    return np.ceil(x + 12.0 * np.sqrt(x)).astype(np.int64) + 20


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------


@njit
def _nb_pick(cum_row, target, fallback):
    for j in range(cum_row.shape[0]):
        if target < cum_row[j]:
            return j
    return fallback


@njit
def _nb_poisson_small(mu, state):
    if mu <= 0.0:
        return 0, state
    u, state = nb_uniform(state)
    p = math.exp(-mu)
    f = p
    n = 0
    while u > f and n < POISSON_MAX_TERMS:
        n += 1
        p *= mu / n
        f += p
    return n, state


@njit
def _nb_poisson(mu, state):
    k = 0
    while mu > POISSON_CHUNK:
        n, state = _nb_poisson_small(POISSON_CHUNK, state)
        k += n
        mu -= POISSON_CHUNK
    n, state = _nb_poisson_small(mu, state)
    return k + n, state


@njit
def _nb_normal(state):
    u1, state = nb_uniform(state)
    u2, state = nb_uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2), state


@njit
def _nb_log_gamma(shape, rate, state):
    """``log G`` for ``G ~ Gamma(shape, rate)`` (Marsaglia-Tsang)."""
    if shape == 1.0:
        u, state = nb_uniform(state)
        return math.log(-math.log(u)) - math.log(rate), state
    a = shape + 1.0 if shape < 1.0 else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x, state = _nb_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u, state = nb_uniform(state)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            break
    lg = math.log(d) + math.log(v)
    if shape < 1.0:
        u, state = nb_uniform(state)
        lg += math.log(u) / shape
    return lg - math.log(rate), state


@njit
def _nb_chain_batch(rates, cum, last, initial_state, horizon, seeds, key):
    n_paths = seeds.shape[0]
    n = rates.shape[0]
    occ = np.zeros((n_paths, n))
    n_trans = np.zeros(n_paths, dtype=np.int64)
    for p in range(n_paths):
        st = nb_stream_state(seeds[p], key)
        s = initial_state
        t = 0.0
        while True:
            remaining = horizon - t
            if rates[s] <= 0.0:
                occ[p, s] += remaining
                break
            u, st = nb_uniform(st)
            tau = -math.log(u) / rates[s]
            if tau >= remaining:
                occ[p, s] += remaining
                break
            occ[p, s] += tau
            t += tau
            n_trans[p] += 1
            u, st = nb_uniform(st)
            s = _nb_pick(cum[s], u * rates[s], last[s])
    return occ, n_trans


@njit
def _nb_spot_batch(
    rates, cum, last, initial_state, horizon, seeds,
    drift, sigma, intensity, jump_kind, jump_param, jump_shape,
    theta_c, theta_j, lam_phys, m_theta_j,
):
    n_paths = seeds.shape[0]
    n = rates.shape[0]
    log_s = np.zeros(n_paths)
    log_l = np.zeros(n_paths)
    n_jumps = np.zeros(n_paths, dtype=np.int64)
    occ = np.zeros((n_paths, n))
    for p in range(n_paths):
        cs = nb_stream_state(seeds[p], np.uint64(CHAIN_KEY))
        ss = nb_stream_state(seeds[p], np.uint64(SPOT_KEY))
        s = initial_state
        t = 0.0
        while True:
            tau = horizon - t
            final = True
            if rates[s] > 0.0:
                u, cs = nb_uniform(cs)
                draw = -math.log(u) / rates[s]
                if draw < tau:
                    tau = draw
                    final = False
            # diffusion over the sojourn
            u1, ss = nb_uniform(ss)
            u2, ss = nb_uniform(ss)
            z = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
            sd = sigma[s] * math.sqrt(tau)
            log_s[p] += (drift[s] - 0.5 * sigma[s] * sigma[s]) * tau
            log_s[p] += sd * z
            log_l[p] += theta_c[s] * sd * z
            log_l[p] -= 0.5 * (theta_c[s] * sigma[s]) ** 2 * tau
            log_l[p] -= lam_phys[s] * (m_theta_j[s] - 1.0) * tau
            # jumps over the sojourn
            count, ss = _nb_poisson(intensity[s] * tau, ss)
            for _ in range(count):
                if jump_kind == JUMP_GAMMA:
                    lz, ss = _nb_log_gamma(jump_shape[s], jump_param[s], ss)
                else:
                    lz = math.log(jump_param[s])
                log_s[p] += lz
                log_l[p] += theta_j[s] * lz
            n_jumps[p] += count
            occ[p, s] += tau
            if final:
                break
            t += tau
            u, cs = nb_uniform(cs)
            s = _nb_pick(cum[s], u * rates[s], last[s])
    return log_s, log_l, n_jumps, occ


@njit
def _nb_bs(s, k, t, var, r):
    vt = var * t
    if vt <= 0.0:
        return max(s - k * math.exp(-r * t), 0.0)
    sd = math.sqrt(vt)
    d1 = (math.log(s / k) + (r + 0.5 * var) * t) / sd
    d2 = d1 - sd
    return s * 0.5 * math.erfc(-d1 / SQRT2) - k * math.exp(-r * t) * 0.5 * math.erfc(-d2 / SQRT2)


@njit
def _nb_series_batch(s, k, t, r_bar, u_bar, lam_bar_star, drift_comp, log_gain, sigma_j_sq):
    n_paths = r_bar.shape[0]
    out = np.zeros(n_paths)
    for p in range(n_paths):
        x = lam_bar_star[p] * t
        m_max = int(math.ceil(x + 12.0 * math.sqrt(x))) + 20
        total = 0.0
        for m in range(m_max + 1):
            if x == 0.0:
                w = 1.0 if m == 0 else 0.0
            else:
                w = math.exp(-x + m * math.log(x) - math.lgamma(m + 1.0))
            if w == 0.0:
                continue
            var = u_bar[p] + m * sigma_j_sq[p] / t
            r = r_bar[p] - drift_comp[p] + m * log_gain[p] / t
            total += w * _nb_bs(s, k, t, var, r)
        out[p] = total
    return out


# ---------------------------------------------------------------------------
# numpy
# ---------------------------------------------------------------------------


def _np_pick(cum, last, s, target):
    rows = cum[s]
    hit = target[:, None] < rows
    j = np.argmax(hit, axis=1)
    return np.where(hit.any(axis=1), j, last[s])


def _np_poisson_small(mu, states, idx):
    out = np.zeros(idx.size, dtype=np.int64)
    live = np.nonzero(mu > 0.0)[0]
    if live.size == 0:
        return out
    m = mu[live]
    u = np_uniform(states, idx[live])
    p = np.exp(-m)
    f = p.copy()
    n = np.zeros(live.size, dtype=np.int64)
    more = np.nonzero(u > f)[0]
    while more.size:
        n[more] += 1
        p[more] *= m[more] / n[more]
        f[more] += p[more]
        sub = (u[more] > f[more]) & (n[more] < POISSON_MAX_TERMS)
        more = more[sub]
    out[live] = n
    return out


def _np_poisson(mu, states, idx):
    k = np.zeros(idx.size, dtype=np.int64)
    rem = mu.astype(np.float64).copy()
    pending = np.arange(idx.size)
    while pending.size:
        r = rem[pending]
        big = r > POISSON_CHUNK
        k[pending] += _np_poisson_small(np.where(big, POISSON_CHUNK, r), states, idx[pending])
        pending = pending[big]
        rem[pending] -= POISSON_CHUNK
    return k


def _np_normal(states, idx):
    u1 = np_uniform(states, idx)
    u2 = np_uniform(states, idx)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def _np_log_gamma(shape, rate, states, idx):
    """Vectorised :func:`_nb_log_gamma`; rejected rows redraw from their own streams."""
    out = np.empty(idx.size)
    unit = shape == 1.0
    if unit.any():
        u = np_uniform(states, idx[unit])
        out[unit] = np.log(-np.log(u)) - np.log(rate[unit])
    rest = np.nonzero(~unit)[0]
    if rest.size == 0:
        return out
    sh = shape[rest]
    a = np.where(sh < 1.0, sh + 1.0, sh)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    v_out = np.empty(rest.size)
    pending = np.arange(rest.size)
    while pending.size:
        x = _np_normal(states, idx[rest[pending]])
        v = 1.0 + c[pending] * x
        pos = v > 0.0
        accept = np.zeros(pending.size, dtype=bool)
        if pos.any():
            p_pos = pending[pos]
            vp = v[pos] * v[pos] * v[pos]
            u = np_uniform(states, idx[rest[p_pos]])
            dp = d[p_pos]
            ok = np.log(u) < 0.5 * x[pos] ** 2 + dp - dp * vp + dp * np.log(vp)
            v_out[p_pos[ok]] = vp[ok]
            accept[np.nonzero(pos)[0][ok]] = True
        pending = pending[~accept]
    lg = np.log(d) + np.log(v_out)
    small = np.nonzero(sh < 1.0)[0]
    if small.size:
        u = np_uniform(states, idx[rest[small]])
        lg[small] += np.log(u) / sh[small]
    out[rest] = lg - np.log(rate[rest])
    return out


def _np_chain_batch(rates, cum, last, initial_state, horizon, seeds, key):
    n_paths = seeds.shape[0]
    occ = np.zeros((n_paths, rates.shape[0]))
    n_trans = np.zeros(n_paths, dtype=np.int64)
    cs = np_stream_state(seeds, key)
    s = np.full(n_paths, initial_state, dtype=np.int64)
    t = np.zeros(n_paths)
    idx = np.arange(n_paths)
    while idx.size:
        sa = s[idx]
        remaining = horizon - t[idx]
        tau = remaining.copy()
        final = np.ones(idx.size, dtype=bool)
        moving = np.nonzero(rates[sa] > 0.0)[0]
        if moving.size:
            u = np_uniform(cs, idx[moving])
            draw = -np.log(u) / rates[sa[moving]]
            ok = draw < remaining[moving]
            tau[moving[ok]] = draw[ok]
            final[moving[ok]] = False
        occ[idx, sa] += tau
        go = ~final
        nxt = idx[go]
        t[nxt] += tau[go]
        n_trans[nxt] += 1
        if nxt.size:
            u = np_uniform(cs, nxt)
            s[nxt] = _np_pick(cum, last, sa[go], u * rates[sa[go]])
        idx = nxt
    return occ, n_trans


def _np_spot_batch(
    rates, cum, last, initial_state, horizon, seeds,
    drift, sigma, intensity, jump_kind, jump_param, jump_shape,
    theta_c, theta_j, lam_phys, m_theta_j,
):
    n_paths = seeds.shape[0]
    log_s = np.zeros(n_paths)
    log_l = np.zeros(n_paths)
    n_jumps = np.zeros(n_paths, dtype=np.int64)
    occ = np.zeros((n_paths, rates.shape[0]))
    cs = np_stream_state(seeds, CHAIN_KEY)
    ss = np_stream_state(seeds, SPOT_KEY)
    s = np.full(n_paths, initial_state, dtype=np.int64)
    t = np.zeros(n_paths)
    idx = np.arange(n_paths)
    while idx.size:
        sa = s[idx]
        tau = horizon - t[idx]
        final = np.ones(idx.size, dtype=bool)
        moving = np.nonzero(rates[sa] > 0.0)[0]
        if moving.size:
            u = np_uniform(cs, idx[moving])
            draw = -np.log(u) / rates[sa[moving]]
            ok = draw < tau[moving]
            tau[moving[ok]] = draw[ok]
            final[moving[ok]] = False

        u1 = np_uniform(ss, idx)
        u2 = np_uniform(ss, idx)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)
        sig = sigma[sa]
        sd = sig * np.sqrt(tau)
        tc = theta_c[sa]
        log_s[idx] += (drift[sa] - 0.5 * sig * sig) * tau
        log_s[idx] += sd * z
        log_l[idx] += tc * sd * z
        log_l[idx] -= 0.5 * (tc * sig) ** 2 * tau
        log_l[idx] -= lam_phys[sa] * (m_theta_j[sa] - 1.0) * tau

        count = _np_poisson(intensity[sa] * tau, ss, idx)
        for c in range(int(count.max(initial=0))):
            sel = np.nonzero(count > c)[0]
            st = sa[sel]
            if jump_kind == JUMP_GAMMA:
                lz = _np_log_gamma(jump_shape[st], jump_param[st], ss, idx[sel])
            else:
                lz = np.log(jump_param[st])
            log_s[idx[sel]] += lz
            log_l[idx[sel]] += theta_j[st] * lz
        n_jumps[idx] += count
        occ[idx, sa] += tau

        go = ~final
        nxt = idx[go]
        t[nxt] += tau[go]
        if nxt.size:
            u = np_uniform(cs, nxt)
            s[nxt] = _np_pick(cum, last, sa[go], u * rates[sa[go]])
        idx = nxt
    return log_s, log_l, n_jumps, occ


def np_bs(s, k, t, var, r):
    """Vectorised Black-Scholes call (broadcasts over ``var`` and ``r``)."""
    var = np.asarray(var, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    vt = var * t
    disc = np.exp(-r * t)
    intrinsic = np.maximum(s - k * disc, 0.0)
    pos = vt > 0.0
    sd = np.sqrt(np.where(pos, vt, 1.0))
    d1 = (np.log(s / k) + (r + 0.5 * var) * t) / sd
    d2 = d1 - sd
    val = s * 0.5 * erfc(-d1 / SQRT2) - k * disc * 0.5 * erfc(-d2 / SQRT2)
    return np.where(pos, val, intrinsic)


def _np_series_batch(s, k, t, r_bar, u_bar, lam_bar_star, drift_comp, log_gain, sigma_j_sq):
    x = lam_bar_star * t
    m_max = series_cap(x)
    total = np.zeros(r_bar.shape[0])
    zero = x == 0.0
    logx = np.log(np.where(zero, 1.0, x))
    for m in range(int(m_max.max(initial=0)) + 1):
        w = np.exp(-x + m * logx - gammaln(m + 1.0))
        w = np.where(zero, 1.0 if m == 0 else 0.0, w)
        w = np.where(m <= m_max, w, 0.0)
        live = np.nonzero(w != 0.0)[0]
        if live.size == 0:
            continue
        var = u_bar[live] + m * sigma_j_sq[live] / t
        r = r_bar[live] - drift_comp[live] + m * log_gain[live] / t
        total[live] += w[live] * np_bs(s, k, t, var, r)
    return total


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def chain_batch(pi, initial_state, horizon, seeds, use_numba=None):
    """Occupation times ``(n_paths, n)`` and transition counts per path."""
    rates, cum, last = chain_tables(pi)
    fn = _nb_chain_batch if _pick(use_numba) else _np_chain_batch
    key = np.uint64(CHAIN_KEY) if _pick(use_numba) else CHAIN_KEY
    return fn(rates, cum, last, int(initial_state), float(horizon),
              np.asarray(seeds, dtype=np.uint64), key)


def spot_batch(pi, initial_state, horizon, seeds, drift, sigma, intensity,
               jump_kind, jump_param, jump_shape, theta_c, theta_j, lam_phys, m_theta_j,
               use_numba=None):
    """Terminal log-spot, log-density, jump counts and occupation per path."""
    rates, cum, last = chain_tables(pi)
    n = rates.shape[0]
    arr = [np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=np.float64), (n,)))
           for a in (drift, sigma, intensity, jump_param, jump_shape,
                     theta_c, theta_j, lam_phys, m_theta_j)]
    fn = _nb_spot_batch if _pick(use_numba) else _np_spot_batch
    return fn(rates, cum, last, int(initial_state), float(horizon),
              np.asarray(seeds, dtype=np.uint64),
              arr[0], arr[1], arr[2], int(jump_kind), *arr[3:])


def series_batch(s, k, t, r_bar, u_bar, lam_bar_star, drift_comp, log_gain, sigma_j_sq,
                 use_numba=None):
    """Merton series price for each row of averaged regime quantities.

    ``sigma_j_sq`` is a scalar or one log-jump variance per row.
    """
    r_bar = np.ascontiguousarray(r_bar, dtype=np.float64)
    arr = [np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=np.float64), r_bar.shape))
           for a in (u_bar, lam_bar_star, drift_comp, log_gain, sigma_j_sq)]
    fn = _nb_series_batch if _pick(use_numba) else _np_series_batch
    return fn(float(s), float(k), float(t), r_bar, *arr)


def _pick(use_numba):
    if use_numba is None:
        return _accel.USE_NUMBA
    return bool(use_numba) and _accel.HAS_NUMBA
