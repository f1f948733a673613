"""Energy-increase rate of the field under the collapse dynamics.

All rates are reported per unit ``gamma alpha^2 V`` unless ``absolute=True``.
Four routes are provided:

* :func:`rate_position_space` - the space-time integral of the noise
  correlation against the time derivative of the product of the two field
  kernels (1+1D, quartic kernel).  The integral over the two hyperbolic
  angles is done analytically (Lorentz invariance), leaving a single integral
  over the invariant interval plus a closed-form light-cone term from the
  logarithmic singularity of the correlation.
* :func:`rate_momentum_space` - the normal-ordered double momentum integral,
  reduced by isotropy to ``(|q|, |p|, w)`` with ``w = omega_p omega_q - p.q``
  (deterministic), or sampled over the full ``2d``-dimensional domain
  (Monte Carlo cross-check).
* :func:`rate_nr_limit` and :func:`rate_rel_limit` - the non-relativistic and
  ultra-relativistic limit formulas.
* :func:`white_noise_divergence_scan` - white noise, where the rate is the
  regulated equal-time delta function times the field variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from . import _kernels as K
from .core import (ConvergenceError, InvalidInput, ModelParams, OccupancySpec, QuadratureConfig,
                   SpacetimePoint, derive_rng, gauss_legendre, make_edges, occupancy_eval,
                   occupancy_integral, panel_nodes)
from .field_kernel import TwoPointContext, dtau_pauli_jordan_origin, symmetric_two_point
from .noise_kernel import (KernelSpec, invariant_correlation_1d, lightcone_log_coefficient,
                           quartic_correlation_1d_transform)

# smallest accepted max/min cutoff ratio of a white-noise scan (three doublings)
MIN_SCAN_SPAN = 8.0
METHODS = ("position", "momentum_quad", "momentum_mc", "nr_limit", "rel_limit", "white_scan")


@dataclass(frozen=True)
class RateResult:
    """A rate value with its numerical error estimate.

    ``value`` is per unit ``gamma alpha^2 V`` unless ``absolute`` is set.
    ``extra`` carries method-specific diagnostics (e.g. a divergence slope or
    a quadrature/Monte Carlo comparison).
    """

    value: float
    stderr: float
    method: str
    cutoff: float
    absolute: bool = False
    flagged: bool = False
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "method": self.method,
                "cutoff": self.cutoff, "absolute": self.absolute, "flagged": self.flagged,
                **{f"extra_{k}": v for k, v in self.extra.items()}}


def _finish(value, err, method, cutoff, params: Optional[ModelParams], absolute, **extra):
    if absolute:
        if params is None:
            raise InvalidInput("absolute rates need ModelParams")
        scale = params.rate_scale
        value, err = value * scale, err * scale
    flagged = bool(extra.pop("flagged", False))
    return RateResult(float(value), float(abs(err)), method, float(cutoff), bool(absolute), flagged, extra)


def momentum_prefactor(dims: int) -> float:
    """Constant in front of the double momentum integral: 1/(2 (2 pi)^4) in d=3, 1/(2 pi) in d=1."""
    return 1.0 / (2.0 * (2.0 * math.pi) ** 4) if dims == 3 else 1.0 / (2.0 * math.pi)


def _check_pair(kernel: KernelSpec, occ: OccupancySpec):
    if kernel.dims != occ.dims:
        raise InvalidInput(f"kernel has d={kernel.dims}, occupancy has d={occ.dims}")


def _w_cap(kernel: KernelSpec, mass: float, mode: int) -> float:
    """Largest useful ``w``: beyond it every spectral argument is outside the kernel support."""
    if kernel.variant == "white":
        return math.inf
    s = kernel.support_radius(1e-30)
    if not math.isfinite(s):
        return math.inf
    return s / 2.0 if mode == 1 else s / 2.0 + mass * mass


# ---------------------------------------------------------------------------
# position space (1+1D)
# ---------------------------------------------------------------------------
def _quartic_correlation(beta: float, s: float) -> float:
    # the power series is exact to ~1e-15 up to z ~ 64; beyond, cancellation sets in
    if beta ** 4 * s * s / 256.0 <= 64.0:
        return float(invariant_correlation_1d(beta, s)[0])
    return quartic_correlation_1d_transform(beta, s)


def _interval_integral(beta: float, mass: float, tol: float):
    """``int_0^inf ds G(s) (J1^2 - J0^2)(m sqrt s)`` with the quartic-kernel correlation G."""
    # |G(s)| decays like exp(-1.5 z^(1/3)), z = beta^4 s^2 / 256; stop at z = 1e4 (~1e-14)
    smax = math.sqrt(256.0 * 1e4) / beta ** 2
    smid = math.sqrt(256.0 * 64.0) / beta ** 2

    def f(y):
        s = math.exp(y)
        a = mass * math.sqrt(s)
        return _quartic_correlation(beta, s) * s * (special.j1(a) ** 2 - special.j0(a) ** 2)

    lo = -40.0 - 2.0 * math.log(max(mass, 1e-300))
    v1, e1 = integrate.quad(f, lo, math.log(smid), limit=400, epsabs=tol * 1e-3, epsrel=tol)
    v2, e2 = integrate.quad(f, math.log(smid), math.log(smax), limit=400, epsabs=tol * 1e-3, epsrel=tol)
    tail = abs(f(math.log(smax))) * 2.0
    return v1 + v2, e1 + e2 + tail


def rate_position_space(params: Optional[ModelParams], kernel: KernelSpec, ctx: TwoPointContext,
                        cfg: Optional[QuadratureConfig] = None, absolute: bool = False) -> RateResult:
    """Rate from the position-space integral of G against d/dtau (N D), 1+1D quartic kernel.

    The occupancy only enters through ``int dq (n_q [+ 1/2])`` over the cutoff
    interval; the vacuum 1/2 is included iff ``ctx.vacuum_half`` (that choice
    makes the rate grow linearly with the cutoff).
    """
    cfg = cfg or ctx.cfg
    if kernel.variant == "white":
        raise InvalidInput("white kernel: use white_noise_divergence_scan")
    if ctx.dims != 1 or kernel.dims != 1:
        raise InvalidInput("the position-space route is implemented for d = 1")
    if kernel.variant != "quartic":
        raise InvalidInput("the position-space route needs the closed-form quartic correlation")
    if params is not None and params.gamma == 0 and absolute:
        return _finish(0.0, 0.0, "position", cfg.cutoff, params, absolute)
    occ = ctx.occupancy
    nint, nerr = occupancy_integral(occ, ctx.cfg) if not occ.is_zero() else (0.0, 0.0)
    if ctx.vacuum_half:
        top = ctx.cfg.momentum_extent
        vq, vw = panel_nodes(make_edges(0.0, top, 64), ctx.cfg.nodes)
        nint += math.fsum(ctx.cfg.regulator_factor(vq) * vw)  # int over R of 1/2
    if nint == 0.0:
        return _finish(0.0, 0.0, "position", cfg.cutoff, params, absolute, occupancy_integral=0.0)
    m = ctx.mass
    I, ierr = _interval_integral(kernel.beta, m, max(cfg.rel_tol, 1e-12))
    A = lightcone_log_coefficient(kernel.beta)
    value = nint * (I / 8.0 + A / (4.0 * m * m))
    err = abs(nint) * ierr / 8.0 + abs(value) * (nerr / abs(nint))
    return _finish(value, err, "position", cfg.cutoff, params, absolute,
                   occupancy_integral=nint, interval_integral=I)


# ---------------------------------------------------------------------------
# momentum space, deterministic reduction
# ---------------------------------------------------------------------------
def _q_range(occ: OccupancySpec, cutoff: float):
    sup = occ.support()
    if sup is None:
        hi = cutoff
        if occ.variant == "thermal":
            # Bose tail below 1e-300 of its peak is irrelevant
            hi = min(cutoff, max(occ.temperature * 700.0, occ.mass))
        return 0.0, hi
    return min(sup[0], cutoff), min(sup[1], cutoff)


def _q_nodes(occ: OccupancySpec, lo: float, hi: float, npan: int, nodes: int):
    breaks = [b for b in occ.breakpoints() if lo < b < hi]
    if occ.variant == "thermal" and occ.temperature > 0:
        breaks += [min(hi, k * occ.temperature) for k in (1, 5, 20)]
    q, w = panel_nodes(make_edges(lo, hi, npan, breaks), nodes)
    return q, w


def _momentum_quad(kernel: KernelSpec, occ: OccupancySpec, cfg: QuadratureConfig, mode: int,
                   pmin: float, q_npan: int, p_npan: int):
    m = occ.mass
    dims = occ.dims
    lo, hi = _q_range(occ, cfg.cutoff)
    if hi <= lo:
        return 0.0
    q, wq = _q_nodes(occ, lo, hi, q_npan, cfg.nodes)
    n = occupancy_eval(occ, q)
    keep = n != 0
    q, wq, n = q[keep], wq[keep], n[keep]
    if q.size == 0:
        return 0.0
    kind, par, ts, tv = kernel.args()
    W = _w_cap(kernel, m, mode)
    xp, wp = gauss_legendre(cfg.nodes)
    xw, ww = gauss_legendre(cfg.nodes)
    inner = K.rate_inner(np.ascontiguousarray(q), float(m), float(W), float(cfg.cutoff), kind, par, ts, tv,
                         int(mode), float(pmin), xp, wp, xw, ww, int(p_npan), int(dims))
    if dims == 1:
        # n is even in q: int_R dq = 2 int_0^inf dq
        return 2.0 * math.fsum(wq * n * inner)
    return 8.0 * math.pi ** 2 * math.fsum(wq * q * n * inner)


def _refined(fn, rel_tol: float, start=(16, 8), max_doublings: int = 5):
    """Run ``fn(q_npan, p_npan)`` with doubling until successive values agree."""
    qn, pn = start
    prev = fn(qn, pn)
    for _ in range(max_doublings):
        qn, pn = 2 * qn, 2 * pn
        cur = fn(qn, pn)
        err = abs(cur - prev)
        if err <= max(rel_tol * abs(cur), 1e-300):
            # successive estimates can coincide bitwise; keep a round-off floor in the error bar
            return cur, max(err, 16.0 * np.finfo(float).eps * abs(cur))
        prev = cur
    raise ConvergenceError("momentum-space quadrature did not converge", achieved=(cur, err))


def rate_momentum_space(params: Optional[ModelParams], kernel: KernelSpec, occ: OccupancySpec,
                        cfg: Optional[QuadratureConfig] = None, method: str = "quad",
                        absolute: bool = False, cross_check: bool = False) -> RateResult:
    """Normal-ordered rate from the double momentum integral.

    ``method='quad'`` uses the isotropic reduction; ``method='mc'`` samples the
    full domain.  With ``cross_check`` both are computed and the result is
    flagged when they differ by more than three combined standard errors.
    The real part of the integrand is taken as written (it is real for real,
    even spectral functions).  Both momenta are cut at ``cfg.cutoff``.
    """
    cfg = cfg or QuadratureConfig()
    _check_pair(kernel, occ)
    if method not in ("quad", "mc"):
        raise InvalidInput(f"unknown method {method!r}")
    tag = "momentum_quad" if method == "quad" else "momentum_mc"
    if params is not None and params.gamma == 0 and absolute:
        return _finish(0.0, 0.0, tag, cfg.cutoff, params, absolute)
    if occ.is_zero() or kernel.is_zero():
        return _finish(0.0, 0.0, tag, cfg.cutoff, params, absolute)
    pref = momentum_prefactor(occ.dims)
    extra = {}
    if method == "quad" or cross_check:
        qv, qe = _refined(lambda a, b: _momentum_quad(kernel, occ, cfg, 0, -math.inf, a, b),
                          max(cfg.rel_tol, 1e-10))
        qv, qe = pref * qv, pref * qe
    if method == "mc" or cross_check:
        mv, me = _momentum_mc(kernel, occ, cfg)
        mv, me = pref * mv, pref * me
    if cross_check:
        diff = abs(qv - mv)
        sig = math.hypot(qe, me)
        extra.update(mc_value=mv, mc_stderr=me, quad_value=qv, quad_stderr=qe,
                     disagreement_sigma=diff / sig if sig > 0 else math.inf)
        extra["flagged"] = diff > 3.0 * sig
    value, err = (qv, qe) if method == "quad" else (mv, me)
    return _finish(value, err, tag, cfg.cutoff, params, absolute, **extra)


def _momentum_mc(kernel: KernelSpec, occ: OccupancySpec, cfg: QuadratureConfig, chunk: int = 50_000):
    """Plain Monte Carlo over q in the occupancy ball and p in the kinematic window."""
    m = occ.mass
    d = occ.dims
    lo, hi = _q_range(occ, cfg.cutoff)
    W = _w_cap(kernel, m, 0)
    if math.isfinite(W):
        oq = math.sqrt(hi * hi + m * m)
        pr = min(cfg.cutoff, (W * hi + oq * math.sqrt(max(W * W - m ** 4, 0.0))) / m ** 2)
    else:
        pr = cfg.cutoff
    kind, par, ts, tv = kernel.args()
    vol_q = (2.0 * hi) if d == 1 else (4.0 / 3.0) * math.pi * hi ** 3
    vol_p = (2.0 * pr) if d == 1 else (4.0 / 3.0) * math.pi * pr ** 3
    total = cfg.mc_samples
    sums = []
    sq = []
    for c, start in enumerate(range(0, total, chunk)):
        k = min(chunk, total - start)
        rng = derive_rng(cfg.seed, 7, c)
        qv = _ball(rng, k, d, hi)
        pv = _ball(rng, k, d, pr)
        qn = np.sqrt(np.sum(qv * qv, axis=1))
        f = occupancy_eval(occ, qn) * K.mc_bracket(kind, par, ts, tv, float(m),
                                                   np.ascontiguousarray(qv), np.ascontiguousarray(pv))
        sums.append(math.fsum(f))
        sq.append(math.fsum(f * f))
    n = float(total)
    mean = math.fsum(sums) / n
    var = max(math.fsum(sq) / n - mean * mean, 0.0)
    scale = vol_q * vol_p
    return scale * mean, scale * math.sqrt(var / max(n - 1.0, 1.0))


def _ball(rng, n, d, r):
    if d == 1:
        return rng.uniform(-r, r, size=(n, 1))
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    rad = r * rng.random(n) ** (1.0 / 3.0)
    return v * rad[:, None]


def cutoff_convergence(params: Optional[ModelParams], kernel: KernelSpec, occ: OccupancySpec,
                       cfg: Optional[QuadratureConfig] = None, start: float = 2.0,
                       threshold: float = 0.01, max_doublings: int = 16):
    """Double the cutoff until the momentum-space rate changes by less than ``threshold``.

    Returns ``(lambda_star, rows)`` with rows ``(cutoff, value, stderr, rel_change)``;
    ``lambda_star`` is the smaller cutoff of the first converged pair.
    """
    cfg = cfg or QuadratureConfig()
    rows = []
    if occ.is_zero() or kernel.is_zero():
        return float(start), [(float(start), 0.0, 0.0, 0.0)]
    L = float(start)
    prev = None
    for _ in range(max_doublings + 1):
        r = rate_momentum_space(params, kernel, occ, cfg.with_cutoff(L))
        rel = math.nan if prev is None or prev.value == 0 else abs(r.value / prev.value - 1.0)
        rows.append((L, r.value, r.stderr, rel))
        # cutoffs below the occupancy support give 0; only compare non-zero pairs
        if prev is not None and prev.value != 0 and rel < threshold:
            return L / 2.0, rows
        prev = r
        L *= 2.0
    raise ConvergenceError("rate did not settle under cutoff doubling", achieved=rows)


# ---------------------------------------------------------------------------
# limit formulas (d = 3)
# ---------------------------------------------------------------------------
def _support_check(occ: OccupancySpec, cfg: QuadratureConfig, lo: float = 0.0, hi: float = math.inf):
    sup = occ.support()
    if sup is None:
        # unbounded support: use the 1e-12 quantile of the occupancy integral
        q = np.linspace(0.0, cfg.cutoff, 20001)
        n = occupancy_eval(occ, q) * q * q
        c = np.cumsum(n)
        c = c / c[-1] if c[-1] > 0 else c
        sup = (q[np.searchsorted(c, 1e-12)], q[min(np.searchsorted(c, 1 - 1e-12), q.size - 1)])
    if sup[1] > hi or sup[0] < lo:
        raise InvalidInput(f"occupancy support [{sup[0]:.4g}, {sup[1]:.4g}] outside the limit's regime "
                           f"[{lo:.4g}, {hi:.4g}]")
    return sup


def rate_nr_limit(params: Optional[ModelParams], kernel: KernelSpec, occ: OccupancySpec,
                  cfg: Optional[QuadratureConfig] = None, threshold: float = 0.1,
                  absolute: bool = False) -> RateResult:
    """Non-relativistic limit: total particle content times a q-independent bracket.

    The bracket is ``(4/3) pi m^3 G(4 m^2)/m + 4 pi int_m^Lambda p^2 G(2 p m)/m dp``.
    For white noise the second term grows as Lambda^3; the result is then
    reported as divergent (``inf``) with the fitted power in ``extra``.
    """
    cfg = cfg or QuadratureConfig()
    _check_pair(kernel, occ)
    if occ.dims != 3:
        raise InvalidInput("limit formulas are defined for d = 3")
    m = occ.mass
    if occ.is_zero() or kernel.is_zero():
        return _finish(0.0, 0.0, "nr_limit", cfg.cutoff, params, absolute)
    _support_check(occ, cfg, hi=threshold * m)
    nint, nerr = occupancy_integral(occ, cfg)
    pref = momentum_prefactor(3)
    kind, par, ts, tv = kernel.args()

    def bracket(L):
        first = (4.0 / 3.0) * math.pi * m ** 3 * float(K._gspec_np(kind, par, ts, tv, 4.0 * m * m)) / m
        top = L
        if kernel.variant != "white":
            top = min(L, max(m, kernel.support_radius(1e-30) / (2.0 * m)))
        if top <= m:
            return first, 0.0
        f = lambda p: 4.0 * math.pi * p * p * K._gspec_np(kind, par, ts, tv, 2.0 * p * m) / m
        sec, err = _gl(f, m, top, cfg)
        return first + sec, err

    if kernel.variant == "white":
        Ls = cfg.cutoff * np.array([1.0, 2.0, 4.0, 8.0])
        vals = np.array([bracket(L)[0] for L in Ls])
        slope = np.polyfit(np.log(Ls), np.log(vals), 1)[0]
        return _finish(math.inf, 0.0, "nr_limit", cfg.cutoff, params, absolute,
                       divergent=True, divergence_exponent=float(slope),
                       finite_cutoff_value=float(pref * nint * vals[0]))
    b, berr = bracket(cfg.cutoff)
    value = pref * nint * b
    err = pref * (abs(nint) * berr + nerr * abs(b))
    return _finish(value, err, "nr_limit", cfg.cutoff, params, absolute, occupancy_integral=nint)


def rate_rel_limit(params: Optional[ModelParams], kernel: KernelSpec, occ: OccupancySpec,
                   cfg: Optional[QuadratureConfig] = None, threshold: float = 1.0,
                   absolute: bool = False) -> RateResult:
    """Ultra-relativistic limit: ``int d^3q n/|q| [ (4/3) pi m^3 G(2 m |q|) + int_{p>m} d^3p G(2 w) ]``.

    ``w`` is the Minkowski product of the on-shell momenta, so the collinear
    region stays finite.
    """
    cfg = cfg or QuadratureConfig()
    _check_pair(kernel, occ)
    if occ.dims != 3:
        raise InvalidInput("limit formulas are defined for d = 3")
    m = occ.mass
    if occ.is_zero() or kernel.is_zero():
        return _finish(0.0, 0.0, "rel_limit", cfg.cutoff, params, absolute)
    _support_check(occ, cfg, lo=threshold * m)
    kind, par, ts, tv = kernel.args()
    pref = momentum_prefactor(3)
    if kernel.variant == "white":
        # constant kernel: the bracket is G0 (4/3) pi (m^3 + Lambda^3 - m^3) for every q
        g0 = float(kernel.amplitude)
        first, _ = occupancy_integral(occ, cfg, weight=lambda q: 1.0 / q)
        value = pref * first * g0 * (4.0 / 3.0) * math.pi * cfg.cutoff ** 3
        return _finish(value, abs(value) * cfg.rel_tol, "rel_limit", cfg.cutoff, params, absolute)

    def total(qn, pn):
        lo, hi = _q_range(occ, cfg.cutoff)
        q, wq = _q_nodes(occ, lo, hi, qn, cfg.nodes)
        n = occupancy_eval(occ, q)
        first = (4.0 / 3.0) * math.pi * m ** 3 * K._gspec_np(kind, par, ts, tv, 2.0 * m * q)
        xg, wg = gauss_legendre(cfg.nodes)
        inner = K.rate_inner(np.ascontiguousarray(q), float(m), float(_w_cap(kernel, m, 1)), float(cfg.cutoff),
                             kind, par, ts, tv, 1, float(m), xg, wg, xg, wg, int(pn), 3)
        # d^3q / |q| = 4 pi q dq ; int_{p>m} d^3p G(2w) = (2 pi / q) int p dp int dw G(2w)
        body = 4.0 * math.pi * q * n * (first + 2.0 * math.pi * inner / q)
        return math.fsum(wq * body)

    v, e = _refined(total, max(cfg.rel_tol, 1e-10))
    return _finish(pref * v, pref * e, "rel_limit", cfg.cutoff, params, absolute)


def _gl(f, a, b, cfg: QuadratureConfig, npan: int = 32):
    prev = None
    for _ in range(8):
        x, w = panel_nodes(make_edges(a, b, npan), cfg.nodes)
        cur = math.fsum(np.asarray(f(x)) * w)
        if prev is not None and abs(cur - prev) <= max(cfg.rel_tol * abs(cur), 1e-300):
            return cur, abs(cur - prev)
        prev = cur
        npan *= 2
    raise ConvergenceError("limit-formula quadrature did not converge", achieved=cur)


# ---------------------------------------------------------------------------
# white noise
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class WhiteScan:
    rows: tuple          # (cutoff, rate, regulated delta, field variance)
    exponent: float
    prefactor: float
    residual: float
    flagged: bool

    def as_dict(self):
        return {"rows": [list(r) for r in self.rows], "exponent": self.exponent,
                "prefactor": self.prefactor, "residual": self.residual, "flagged": self.flagged}


def white_noise_divergence_scan(params: Optional[ModelParams], ctx: TwoPointContext, cutoffs: Sequence[float],
                                amplitude: float = 1.0, residual_tol: float = 0.05,
                                absolute: bool = False) -> WhiteScan:
    """Rate for white noise, ``amplitude * delta_Lambda(0) * N(0) / 2``, over a set of cutoffs.

    The equal-time delta function is the cutoff-regulated time derivative of
    the commutator function at the origin (same regulator as the field
    kernels); ``N(0)`` is the field variance in the state of ``ctx``.  A
    power law ``rate = c * Lambda^p`` is fitted in log-log space.
    """
    cutoffs = sorted(float(c) for c in cutoffs)
    if len(cutoffs) < 4 or cutoffs[-1] < MIN_SCAN_SPAN * cutoffs[0] * (1 - 1e-12):
        raise InvalidInput(f"white-noise scan needs >= 4 cutoffs spanning a factor >= {MIN_SCAN_SPAN:g}")
    origin = SpacetimePoint(0.0, (0.0,) * ctx.dims)
    rows = []
    for L in cutoffs:
        c = TwoPointContext(ctx.mass, ctx.dims, ctx.occupancy, ctx.cfg.with_cutoff(L), ctx.vacuum_half)
        delta = dtau_pauli_jordan_origin(c)
        var = symmetric_two_point(c, origin).value
        rate = amplitude * delta * var / 2.0
        if absolute:
            if params is None:
                raise InvalidInput("absolute rates need ModelParams")
            rate *= params.rate_scale
        rows.append((L, rate, delta, var))
    arr = np.array(rows)
    if np.any(arr[:, 1] <= 0):
        return WhiteScan(tuple(map(tuple, arr.tolist())), math.nan, 0.0, math.inf, True)
    x = np.log(arr[:, 0])
    y = np.log(arr[:, 1])
    p, c = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (p * x + c))))
    return WhiteScan(tuple(map(tuple, arr.tolist())), float(p), float(math.exp(c)), resid, resid > residual_tol)
