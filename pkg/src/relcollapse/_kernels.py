"""Hot numerical kernels, each with a numba implementation and a numpy twin.

The public names at the bottom of the module are bound to one of the two
implementations according to :data:`relcollapse._backend.USE_NUMBA`.  Both
implementations are always importable so the benchmark and the parity tests
can call them side by side.

Spectral kernels are passed around as ``(kind, par, ts, tv)``:

* kind 0 - quartic exponential, ``par[0] = beta``: exp(-s^2/beta^4)
* kind 1 - constant, ``par[0] = amplitude``
* kind 2 - piecewise-linear table ``ts -> tv``, zero outside the table
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA, njit

KIND_QUARTIC = 0
KIND_CONSTANT = 1
KIND_TABLE = 2


# ---------------------------------------------------------------------------
# spectral function
# ---------------------------------------------------------------------------
@njit(inline="always")
def _gspec_nb(kind, par, ts, tv, s):
    if kind == 0:
        b2 = par[0] * par[0]
        u = s / b2
        return math.exp(-u * u)
    if kind == 1:
        return par[0]
    n = ts.size
    if s < ts[0] or s > ts[n - 1]:
        return 0.0
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ts[mid] <= s:
            lo = mid
        else:
            hi = mid
    h = ts[hi] - ts[lo]
    if h <= 0.0:
        return tv[lo]
    f = (s - ts[lo]) / h
    return tv[lo] + f * (tv[hi] - tv[lo])


def _gspec_np(kind, par, ts, tv, s):
    s = np.asarray(s, dtype=float)
    if kind == 0:
        u = s / (par[0] * par[0])
        return np.exp(-u * u)
    if kind == 1:
        return np.full_like(s, par[0])
    return np.interp(s, ts, tv, left=0.0, right=0.0)


# ---------------------------------------------------------------------------
# radial mode sums: sum_k wc_k cos(om_k t) K(q_k y),  sum_k ws_k sin(om_k t) K(q_k y)
# K = cos (d = 1, modes folded onto q >= 0) or sinc (d = 3, angle-averaged)
# ---------------------------------------------------------------------------
@njit
def _mode_sums_nb(t, y, q, om, wc, ws, radial):
    n = t.size
    C = np.zeros(n)
    S = np.zeros(n)
    for i in range(n):
        ti = t[i]
        yi = y[i]
        c = 0.0
        s = 0.0
        for k in range(q.size):
            arg = q[k] * yi
            if radial:
                kf = 1.0 if abs(arg) < 1e-8 else math.sin(arg) / arg
            else:
                kf = math.cos(arg)
            ph = om[k] * ti
            c += wc[k] * math.cos(ph) * kf
            s += ws[k] * math.sin(ph) * kf
        C[i] = c
        S[i] = s
    return C, S


def _mode_sums_np(t, y, q, om, wc, ws, radial, chunk=4096):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    C = np.empty(t.size)
    S = np.empty(t.size)
    for a in range(0, t.size, chunk):
        tt = t[a:a + chunk, None]
        yy = y[a:a + chunk, None]
        arg = yy * q[None, :]
        if radial:
            with np.errstate(invalid="ignore", divide="ignore"):
                kf = np.where(np.abs(arg) < 1e-8, 1.0, np.sin(arg) / arg)
        else:
            kf = np.cos(arg)
        ph = tt * om[None, :]
        C[a:a + chunk] = (np.cos(ph) * kf) @ wc
        S[a:a + chunk] = (np.sin(ph) * kf) @ ws
    return C, S


# ---------------------------------------------------------------------------
# Meijer G^{2,0}_{0,3}(z | 0, 0, 1/2) by its defining series
#   sum_k z^k / (k!^2 Gamma(k+1/2)) * (-ln z + psi(k+1/2) + 2 psi(k+1))
# returns value, |last term|, max |term|
# ---------------------------------------------------------------------------
_PSI_HALF = -1.9635100260214235  # psi(1/2)
_PSI_ONE = -0.5772156649015329   # psi(1)
_INV_SQRT_PI = 0.5641895835477563


@njit
def _meijer_nb(z, terms):
    n = z.size
    val = np.zeros(n)
    last = np.zeros(n)
    big = np.zeros(n)
    for i in range(n):
        zi = z[i]
        if zi <= 0.0:
            val[i] = np.inf
            continue
        lz = math.log(zi)
        c = _INV_SQRT_PI  # 1/(0!^2 Gamma(1/2))
        p_half = _PSI_HALF
        p_one = _PSI_ONE
        acc = 0.0
        comp = 0.0
        mx = 0.0
        tk = 0.0
        for k in range(terms):
            tk = c * (-lz + p_half + 2.0 * p_one)
            # Kahan-compensated accumulation
            yv = tk - comp
            tv = acc + yv
            comp = (tv - acc) - yv
            acc = tv
            if abs(tk) > mx:
                mx = abs(tk)
            kp = k + 1.0
            c = c * zi / (kp * kp * (k + 0.5))
            p_half += 1.0 / (k + 0.5)
            p_one += 1.0 / kp
            if k > 3 and abs(tk) < 1e-18 * mx and c < 1e-18 * mx:
                break
        val[i] = acc
        last[i] = abs(tk)
        big[i] = mx
    return val, last, big


def _meijer_np(z, terms):
    z = np.asarray(z, dtype=float)
    pos = z > 0
    # z = 0 is the light-cone singularity; its value is set to inf below
    lz = np.log(np.where(pos, z, 1.0))
    c = np.full(z.shape, _INV_SQRT_PI)
    p_half = _PSI_HALF
    p_one = _PSI_ONE
    acc = np.zeros(z.shape)
    comp = np.zeros(z.shape)
    mx = np.zeros(z.shape)
    tk = np.zeros(z.shape)
    for k in range(terms):
        tk = c * (-lz + p_half + 2.0 * p_one)
        yv = tk - comp
        tv = acc + yv
        comp = (tv - acc) - yv
        acc = tv
        mx = np.maximum(mx, np.abs(tk))
        kp = k + 1.0
        c = c * z / (kp * kp * (k + 0.5))
        p_half += 1.0 / (k + 0.5)
        p_one += 1.0 / kp
        if k > 3 and np.all((np.abs(tk) < 1e-18 * mx) & (c < 1e-18 * mx)):
            break
    return np.where(pos, acc, np.inf), np.where(pos, np.abs(tk), 0.0), np.where(pos, mx, 0.0)


# ---------------------------------------------------------------------------
# momentum-space rate integrand
#   B = (G(2m^2+2w) + G(2m^2-2w)) / (2 omega_q) + (G(2m^2+2w) - G(2m^2-2w)) / (2 omega_p)
# with w = omega_p omega_q - p.q (the Minkowski product of the two on-shell momenta).
# mode 0: full bracket;  mode 1: relativistic-limit bracket G(2w) (caller divides by |q|)
# ---------------------------------------------------------------------------
@njit(inline="always")
def _bracket_nb(kind, par, ts, tv, m, w, op, oq, mode):
    if mode == 1:
        return _gspec_nb(kind, par, ts, tv, 2.0 * w)
    gp = _gspec_nb(kind, par, ts, tv, 2.0 * m * m + 2.0 * w)
    gm = _gspec_nb(kind, par, ts, tv, 2.0 * m * m - 2.0 * w)
    return (gp + gm) / (2.0 * oq) + (gp - gm) / (2.0 * op)


def _bracket_np(kind, par, ts, tv, m, w, op, oq, mode):
    if mode == 1:
        return _gspec_np(kind, par, ts, tv, 2.0 * w)
    gp = _gspec_np(kind, par, ts, tv, 2.0 * m * m + 2.0 * w)
    gm = _gspec_np(kind, par, ts, tv, 2.0 * m * m - 2.0 * w)
    return (gp + gm) / (2.0 * oq) + (gp - gm) / (2.0 * op)


@njit
def _p_window(q, m, W, pmax, dims):
    """p-interval where the bracket can be non-negligible, plus the kink position."""
    oq = math.sqrt(q * q + m * m)
    if not math.isfinite(W):
        lo = 0.0 if dims == 3 else -pmax
        return lo, pmax, pmax
    r = math.sqrt(max(W * W - m ** 4, 0.0))
    m2 = m * m
    plo = (W * q - oq * r) / m2
    phi = (W * q + oq * r) / m2
    pk = (oq * r - W * q) / m2
    if dims == 3:
        plo = max(plo, 0.0)
    else:
        plo = max(plo, -pmax)
    phi = min(phi, pmax)
    return plo, phi, pk


@njit
def _rate_inner_nb(qs, m, W, pmax, kind, par, ts, tv, mode, pmin, xp, wp, xw, ww, npan, dims):
    out = np.zeros(qs.size)
    for iq in range(qs.size):
        q = qs[iq]
        oq = math.sqrt(q * q + m * m)
        plo, phi, pk = _p_window(q, m, W, pmax, dims)
        plo = max(plo, pmin)
        if phi <= plo:
            continue
        # segment edges: [plo, pk], [pk, q], [q, phi] clipped
        e0 = plo
        cuts = np.array([pk, q])
        cuts.sort()
        edges = np.empty(4)
        edges[0] = e0
        ne = 1
        for c in cuts:
            if c > e0 and c < phi:
                edges[ne] = c
                ne += 1
        edges[ne] = phi
        ne += 1
        acc = 0.0
        for seg in range(ne - 1):
            a = edges[seg]
            b = edges[seg + 1]
            h = (b - a) / npan
            for ip in range(npan):
                pa = a + ip * h
                for j in range(xp.size):
                    p = pa + 0.5 * h * (xp[j] + 1.0)
                    wpj = 0.5 * h * wp[j]
                    op = math.sqrt(p * p + m * m)
                    if dims == 1:
                        w = op * oq - p * q
                        acc += wpj * _bracket_nb(kind, par, ts, tv, m, w, op, oq, mode)
                    else:
                        wmin = op * oq - p * q
                        wmax = min(op * oq + p * q, W)
                        if wmax <= wmin:
                            continue
                        hw = 0.5 * (wmax - wmin)
                        inner = 0.0
                        for l in range(xw.size):
                            w = wmin + hw * (xw[l] + 1.0)
                            inner += ww[l] * _bracket_nb(kind, par, ts, tv, m, w, op, oq, mode)
                        acc += wpj * p * hw * inner
        out[iq] = acc
    return out


def _rate_inner_np(qs, m, W, pmax, kind, par, ts, tv, mode, pmin, xp, wp, xw, ww, npan, dims):
    out = np.zeros(len(qs))
    xp = np.asarray(xp)
    wp = np.asarray(wp)
    xw = np.asarray(xw)
    ww = np.asarray(ww)
    for iq, q in enumerate(qs):
        oq = math.sqrt(q * q + m * m)
        plo, phi, pk = _p_window_py(q, m, W, pmax, dims)
        plo = max(plo, pmin)
        if phi <= plo:
            continue
        edges = [plo] + sorted(c for c in (pk, q) if plo < c < phi) + [phi]
        nodes = []
        weights = []
        for a, b in zip(edges[:-1], edges[1:]):
            e = np.linspace(a, b, npan + 1)
            h = np.diff(e)[:, None]
            nodes.append((e[:-1, None] + 0.5 * h * (xp[None, :] + 1.0)).ravel())
            weights.append((0.5 * h * wp[None, :]).ravel())
        p = np.concatenate(nodes)
        wpn = np.concatenate(weights)
        op = np.sqrt(p * p + m * m)
        if dims == 1:
            w = op * oq - p * q
            vals = _bracket_np(kind, par, ts, tv, m, w, op, oq, mode)
            out[iq] = np.sum(wpn * vals)
            continue
        wmin = op * oq - p * q
        wmax = np.minimum(op * oq + p * q, W)
        ok = wmax > wmin
        hw = np.where(ok, 0.5 * (wmax - wmin), 0.0)
        w = wmin[:, None] + hw[:, None] * (xw[None, :] + 1.0)
        vals = _bracket_np(kind, par, ts, tv, m, w, op[:, None], oq, mode)
        inner = vals @ ww
        out[iq] = np.sum(np.where(ok, wpn * p * hw * inner, 0.0))
    return out


def _p_window_py(q, m, W, pmax, dims):
    oq = math.sqrt(q * q + m * m)
    if not math.isfinite(W):
        return (0.0 if dims == 3 else -pmax), pmax, pmax
    r = math.sqrt(max(W * W - m ** 4, 0.0))
    m2 = m * m
    plo = (W * q - oq * r) / m2
    phi = (W * q + oq * r) / m2
    pk = (oq * r - W * q) / m2
    plo = max(plo, 0.0) if dims == 3 else max(plo, -pmax)
    return plo, min(phi, pmax), pk


# ---------------------------------------------------------------------------
# Monte Carlo integrand for the full 2d-dimensional momentum integral
# ---------------------------------------------------------------------------
@njit
def _mc_bracket_nb(kind, par, ts, tv, m, qv, pv):
    n = qv.shape[0]
    out = np.empty(n)
    for i in range(n):
        q2 = 0.0
        p2 = 0.0
        dot = 0.0
        for a in range(qv.shape[1]):
            q2 += qv[i, a] * qv[i, a]
            p2 += pv[i, a] * pv[i, a]
            dot += qv[i, a] * pv[i, a]
        oq = math.sqrt(q2 + m * m)
        op = math.sqrt(p2 + m * m)
        out[i] = _bracket_nb(kind, par, ts, tv, m, op * oq - dot, op, oq, 0)
    return out


def _mc_bracket_np(kind, par, ts, tv, m, qv, pv):
    oq = np.sqrt(np.sum(qv * qv, axis=1) + m * m)
    op = np.sqrt(np.sum(pv * pv, axis=1) + m * m)
    dot = np.sum(qv * pv, axis=1)
    return _bracket_np(kind, par, ts, tv, m, op * oq - dot, op, oq, 0)


# ---------------------------------------------------------------------------
# public bindings
# ---------------------------------------------------------------------------
if USE_NUMBA:
    mode_sums = _mode_sums_nb
    meijer_series = _meijer_nb
    rate_inner = _rate_inner_nb
    mc_bracket = _mc_bracket_nb
else:
    mode_sums = _mode_sums_np
    meijer_series = _meijer_np
    rate_inner = _rate_inner_np
    mc_bracket = _mc_bracket_np

IMPLEMENTATIONS = {
    "mode_sums": (_mode_sums_nb, _mode_sums_np),
    "meijer_series": (_meijer_nb, _meijer_np),
    "rate_inner": (_rate_inner_nb, _rate_inner_np),
    "mc_bracket": (_mc_bracket_nb, _mc_bracket_np),
}
