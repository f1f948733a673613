"""Lorentz-invariant noise correlations.

A kernel is specified by its spectral function ``G~(s)`` of the invariant
``s = q_mu q^mu``.  The position-space correlation is the (1+d)-dimensional
transform

    G(x) = c_d * int d^{1+d}q  G~(q^2) exp(-i q.x),

with ``c_1 = 1/pi`` and ``c_3 = 1/(2 pi)^2``.  These constants are the ones
for which the closed 1+1D Meijer-G expression and the momentum-space energy
rate formula are reproduced; see :func:`fourier_constant`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import _kernels as K
from .core import (ConvergenceError, InvalidInput, QuadratureConfig, SpacetimePoint,
                   check_dims, derive_rng, gauss_legendre, make_edges, panel_nodes)

VARIANTS = ("quartic", "white", "tabulated")


@dataclass(frozen=True)
class KernelSpec:
    """Spectral noise kernel ``G~(s)``.

    variant ``quartic`` uses ``beta``: exp(-s^2/beta^4).
    variant ``white`` is a constant spectrum ``amplitude`` (a delta correlation
    in position space; never evaluated pointwise there).
    variant ``tabulated`` interpolates ``table_s -> table_v`` linearly and
    rejects queries outside the table.
    """

    variant: str = "quartic"
    beta: Optional[float] = 1.0
    amplitude: float = 1.0
    table_s: Optional[tuple] = None
    table_v: Optional[tuple] = None
    dims: int = 1

    def __post_init__(self):
        check_dims(self.dims)
        if self.variant not in VARIANTS:
            raise InvalidInput(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "quartic":
            if self.beta is None or not (self.beta > 0) or not np.isfinite(self.beta):
                raise InvalidInput("quartic kernel needs beta > 0")
        elif self.variant == "white":
            if not np.isfinite(self.amplitude):
                raise InvalidInput("white kernel amplitude must be finite")
        else:
            if self.table_s is None or self.table_v is None:
                raise InvalidInput("tabulated kernel needs table_s and table_v")
            ts = np.asarray(self.table_s, dtype=float)
            tv = np.asarray(self.table_v, dtype=float)
            if ts.ndim != 1 or ts.shape != tv.shape or ts.size < 2:
                raise InvalidInput("table_s/table_v must be 1-d arrays of equal length >= 2")
            if np.any(np.diff(ts) <= 0):
                raise InvalidInput("table_s must be strictly increasing")
            if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(tv))):
                raise InvalidInput("kernel table must be finite")
            object.__setattr__(self, "table_s", tuple(ts.tolist()))
            object.__setattr__(self, "table_v", tuple(tv.tolist()))

    def args(self):
        """``(kind, par, ts, tv)`` tuple understood by the compiled kernels."""
        empty = np.zeros(1)
        if self.variant == "quartic":
            return K.KIND_QUARTIC, np.array([float(self.beta)]), empty, empty
        if self.variant == "white":
            return K.KIND_CONSTANT, np.array([float(self.amplitude)]), empty, empty
        return (K.KIND_TABLE, np.zeros(1), np.asarray(self.table_s, dtype=float),
                np.asarray(self.table_v, dtype=float))

    def support_radius(self, tol: float = 1e-18) -> float:
        """``s_max`` with ``|G~(s)| <= tol * max|G~|`` for ``|s| > s_max``.

        Infinite for the white kernel.  A tabulated kernel is extended by zero
        outside its table for rate integrals, which is only accepted when the
        table already vanishes at both ends.
        """
        if self.variant == "quartic":
            return self.beta ** 2 * math.log(1.0 / tol) ** 0.5
        if self.variant == "white":
            return math.inf
        tv = np.asarray(self.table_v)
        peak = max(np.max(np.abs(tv)), 1e-300)
        if abs(tv[0]) > 1e-12 * peak or abs(tv[-1]) > 1e-12 * peak:
            raise InvalidInput("tabulated kernel must vanish at both table ends to be used in rate integrals")
        return float(max(abs(self.table_s[0]), abs(self.table_s[-1])))

    def is_zero(self) -> bool:
        if self.variant == "white":
            return self.amplitude == 0
        if self.variant == "tabulated":
            return not any(v != 0 for v in self.table_v)
        return False


def fourier_constant(dims: int) -> float:
    """Normalisation ``c_d`` of the position-space transform."""
    return 1.0 / math.pi if dims == 1 else 1.0 / (2.0 * math.pi) ** 2


def spectral_eval(k: KernelSpec, s):
    """Spectral function ``G~(s)`` at invariant(s) ``s`` (any sign)."""
    s_arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s_arr)):
        raise InvalidInput("invariant s must be finite")
    if k.variant == "tabulated":
        lo, hi = k.table_s[0], k.table_s[-1]
        if np.any(s_arr < lo) or np.any(s_arr > hi):
            raise InvalidInput(f"invariant outside tabulated range [{lo}, {hi}] (no extrapolation)")
    kind, par, ts, tv = k.args()
    out = K._gspec_np(kind, par, ts, tv, s_arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Meijer-G oracle (1+1D quartic kernel)
# ---------------------------------------------------------------------------
def meijer_g(z, terms: int = 400):
    """``G^{2,0}_{0,3}(z | 0, 0, 1/2)`` by its defining power-log series.

    Returns ``(value, error)`` arrays (scalars for scalar input).  The error
    combines the size of the last retained term with the round-off floor
    ``eps * max|term| * sqrt(n)`` from cancellation at large z.  Raises
    :class:`ConvergenceError` if the series has not converged after ``terms``.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(z_arr < 0):
        raise InvalidInput("Meijer-G argument must be >= 0")
    val, last, big = K.meijer_series(z_arr, int(terms))
    fin = np.isfinite(val)
    if np.any(fin & (last > 1e-15 * np.maximum(big, 1e-300))):
        bad = z_arr[fin & (last > 1e-15 * np.maximum(big, 1e-300))]
        raise ConvergenceError(f"Meijer-G series not converged in {terms} terms for z={bad[:3]}")
    err = np.where(fin, 2.0 * last + 4.0 * np.finfo(float).eps * big * math.sqrt(terms), np.inf)
    if np.ndim(z) == 0:
        return float(val[0]), float(err[0])
    return val, err


def meijer_g_oracle(beta: float, t, x, terms: int = 400):
    """1+1D position correlation of the quartic kernel in closed form.

    ``(beta^2/2) G^{2,0}_{0,3}(beta^4 (x^2 - t^2)^2 / 256 | 0, 0, 1/2)``; the
    value is ``inf`` on the light cone.  Returns ``(value, error)``.
    """
    if not beta > 0:
        raise InvalidInput("beta must be > 0")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    z = beta ** 4 * (x * x - t * t) ** 2 / 256.0
    val, err = meijer_g(z, terms)
    return 0.5 * beta ** 2 * val, 0.5 * beta ** 2 * err


def lightcone_log_coefficient(beta: float) -> float:
    """Coefficient A in G ~ -A ln|s| near the light cone (1+1D quartic kernel)."""
    return beta ** 2 / math.sqrt(math.pi)


def invariant_correlation_1d(beta: float, s, terms: int = 400):
    """Quartic-kernel 1+1D correlation as a function of the invariant s."""
    s = np.asarray(s, dtype=float)
    val, err = meijer_g(beta ** 4 * s * s / 256.0, terms)
    return 0.5 * beta ** 2 * val, 0.5 * beta ** 2 * err


def quartic_correlation_1d_transform(beta: float, s: float) -> float:
    """Quartic-kernel 1+1D correlation at invariant ``s`` by a single Fourier integral.

    In light-cone momentum coordinates the inner integral of exp(-w^2/beta^4)
    is a Gaussian in closed form, leaving one oscillatory integral.  Accurate
    to ~1e-14 absolute where the power series suffers cancellation (large |s|).
    """
    h = 0.5 * math.sqrt(abs(s))
    if h == 0.0:
        return math.inf
    # timelike: a = b = h; spacelike: a = h, b = -h (the kernel is even, so only b^2 enters)
    b2 = h * h
    pre = math.sqrt(math.pi) * beta ** 2

    def F(u):
        if u <= 0.0:
            return 0.0
        return pre / u * math.exp(-b2 * beta ** 4 / (4.0 * u * u))

    # full_output suppresses the cycle-convergence warning for values at the 1e-15 floor
    out = integrate.quad(F, 0.0, math.inf, weight="cos", wvar=h, limlst=200, limit=400, epsabs=1e-15,
                         full_output=1)
    return fourier_constant(1) * out[0]


# ---------------------------------------------------------------------------
# numerical position transform
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CorrelationValue:
    value: float
    error: float
    imag_residue: float = 0.0


def position_correlation(k: KernelSpec, x: SpacetimePoint, cfg: Optional[QuadratureConfig] = None,
                         imag_tol: float = 1e-8) -> CorrelationValue:
    """Numerical inverse Fourier transform of the spectral kernel at ``x``.

    d = 1: light-cone momentum coordinates ``u = q0 - q1``, ``v = q0 + q1``
    turn the transform into a nested pair of one-sided Fourier integrals.  The
    outer one uses an oscillatory-weight quadrature on [0, inf); the inner one
    (a finite Fourier integral of the kernel in the scaled variable ``u v``)
    uses cycle-resolved Gauss-Legendre panels.  No momentum cutoff is needed;
    the light cone itself returns ``inf``.

    d = 3: the angular integral is done analytically (sinc) and the
    remaining (q0, |k|) integral runs over |k| with the configured regulator.
    The spectrum does not decay along the null directions, so this value is
    cutoff-dependent; it is the regulated correlation, not a continuum limit.
    """
    if k.variant == "white":
        raise InvalidInput("white kernel is a delta distribution in position space; not evaluated pointwise")
    if x.dims != k.dims:
        raise InvalidInput(f"point dimension {x.dims} does not match kernel dimension {k.dims}")
    cfg = cfg or QuadratureConfig()
    if k.dims == 1:
        return _position_correlation_1d(k, x.t, x.x[0], cfg)
    res = _position_correlation_3d(k, x.t, x.r, cfg)
    if abs(res.imag_residue) > imag_tol * max(abs(res.value), 1e-300):
        raise ConvergenceError("imaginary residue of the transform exceeds tolerance", achieved=res)
    return res


def _even_odd(k: KernelSpec):
    kind, par, ts, tv = k.args()
    if k.variant == "quartic":
        return (lambda s: 2.0 * K._gspec_np(kind, par, ts, tv, s)), None

    def ev(s):
        return K._gspec_np(kind, par, ts, tv, s) + K._gspec_np(kind, par, ts, tv, -s)

    def od(s):
        return K._gspec_np(kind, par, ts, tv, s) - K._gspec_np(kind, par, ts, tv, -s)

    return ev, od


def _inner_transform(fn, freq, trig, smax, breaks, nodes=16, max_panels=20000):
    """int_0^smax fn(w) trig(freq w) dw by cycle-resolved Gauss-Legendre panels.

    ``fn`` is even in the invariant, so for very high frequencies the integral
    is negligibly small (all odd derivatives vanish at the origin); beyond
    ``max_panels`` it is returned as zero.
    """
    if trig == "sin" and freq == 0.0:
        return 0.0
    npan = int(math.ceil(freq * smax / math.pi)) + 8
    if npan > max_panels:
        return 0.0
    x, w = panel_nodes(make_edges(0.0, smax, npan, breaks), nodes)
    f = fn(x)
    osc = np.cos(freq * x) if trig == "cos" else np.sin(freq * x)
    return float(np.dot(f * osc, w))


def _position_correlation_1d(k: KernelSpec, t: float, x: float, cfg: QuadratureConfig) -> CorrelationValue:
    a = 0.5 * (t + x)
    b = 0.5 * (t - x)
    if a == 0.0 or b == 0.0:
        return CorrelationValue(math.inf, 0.0, 0.0)
    # the integrand is symmetric under (u, a) <-> (v, b); put the larger frequency outside
    if abs(b) > abs(a):
        a, b = b, a
    sgn = math.copysign(1.0, a) * math.copysign(1.0, b)
    a, b = abs(a), abs(b)
    ev, od = _even_odd(k)
    if k.variant == "quartic":
        smax = k.support_radius(1e-30)
        breaks = ()
    else:
        smax = k.support_radius()
        breaks = tuple(sorted({abs(v) for v in k.table_s}))
    epsabs = 1e-13

    # inner integral in the scaled variable w = u v:  (1/u) int_0^smax E(w) cos(w b/u) dw
    def inner(u, fn, trig):
        if u <= 0.0:
            return 0.0
        return _inner_transform(fn, b / u, trig, smax, breaks) / u

    c = fourier_constant(1)
    # full_output keeps quad's cycle diagnostics out of stderr; the error estimate is still returned
    val, err = integrate.quad(lambda u: inner(u, ev, "cos"), 0.0, math.inf, weight="cos", wvar=a,
                              epsabs=epsabs, limlst=200, limit=400, full_output=1)[:2]
    total = val
    total_err = err
    if od is not None:
        v2, e2 = integrate.quad(lambda u: inner(u, od, "sin"), 0.0, math.inf, weight="sin", wvar=a,
                                epsabs=epsabs, limlst=200, limit=400, full_output=1)[:2]
        total -= sgn * v2
        total_err += e2
    return CorrelationValue(c * total, c * total_err, 0.0)


def _position_correlation_3d(k: KernelSpec, t: float, r: float, cfg: QuadratureConfig) -> CorrelationValue:
    # The kernel depends on q0 only through q0^2, so the transform is real and
    # even in q0.  For each |k| the q0-integrand is a ridge of width ~smax/(2|k|)
    # around the mass shell; panel edges are placed on the ridge boundaries.
    L = cfg.momentum_extent
    kind, par, ts, tv = k.args()
    smax = k.support_radius(1e-30)

    def estimate(refine):
        nk = int(max(8, math.ceil(L * r / math.pi) + 8)) * refine
        kk, wk = panel_nodes(make_edges(0.0, L, nk), cfg.nodes)
        wk = wk * cfg.regulator_factor(kk)
        with np.errstate(invalid="ignore", divide="ignore"):
            kr = kk * r
            sinc = np.where(kr < 1e-12, 1.0, np.sin(kr) / np.where(kr == 0, 1.0, kr))
        total = []
        for kv, wv, sc in zip(kk, wk, sinc):
            lo = math.sqrt(max(kv * kv - smax, 0.0))
            hi = math.sqrt(kv * kv + smax)
            breaks = [b for b in (lo, kv, hi) if 0.0 < b < L]
            edges = [0.0] + breaks + [L]
            segs = []
            for a, b in zip(edges[:-1], edges[1:]):
                m = (int(math.ceil((b - a) * abs(t) / math.pi)) + 2) * refine
                segs.append(np.linspace(a, b, m + 1)[:-1])
            q0, w0 = panel_nodes(np.append(np.concatenate(segs), L), cfg.nodes)
            g = K._gspec_np(kind, par, ts, tv, q0 * q0 - kv * kv)
            inner = 2.0 * math.fsum(g * np.cos(q0 * t) * w0)
            total.append(4.0 * math.pi * kv * kv * sc * wv * inner)
        return fourier_constant(3) * math.fsum(total)

    v1 = estimate(1)
    v2 = estimate(2)
    return CorrelationValue(v2, abs(v2 - v1), 0.0)


def correlation_table(k: KernelSpec, ts: Sequence[float], xs: Sequence[float],
                      cfg: Optional[QuadratureConfig] = None):
    """Rows ``(t, x, transform, error, meijer, meijer_error)`` on a 1+1D grid."""
    if k.dims != 1:
        raise InvalidInput("correlation tables are defined for d = 1")
    rows = []
    for t in ts:
        for x in xs:
            cv = position_correlation(k, SpacetimePoint(t, (x,)), cfg)
            if k.variant == "quartic":
                mv, me = meijer_g_oracle(k.beta, t, x)
            else:
                mv, me = float("nan"), float("nan")
            rows.append((float(t), float(x), cv.value, cv.error, float(mv), float(me)))
    return rows


def ridge_offset(beta: float, t: float, xs: np.ndarray) -> float:
    """Distance between argmax_x |G(t, x)| over ``xs`` and the light cone |x| = |t|."""
    vals, _ = meijer_g_oracle(beta, np.full_like(xs, t), xs)
    i = int(np.argmax(np.abs(vals)))
    return abs(abs(xs[i]) - abs(t))


# ---------------------------------------------------------------------------
# stationary Gaussian sampling on a periodic spacetime grid
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class NoiseGrid:
    """Periodic spacetime lattice: ``shape = (nt, nx[, ny, nz])`` and matching spacings."""

    shape: tuple
    spacing: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        if len(shape) != len(spacing) or len(shape) - 1 not in (1, 3):
            raise InvalidInput("grid needs 1 + d axes with d in {1, 3}")
        if any(n < 2 for n in shape) or any(not h > 0 for h in spacing):
            raise InvalidInput("grid axes need >= 2 points and positive spacing")

    @property
    def dims(self) -> int:
        return len(self.shape) - 1

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        return [np.arange(n) * h for n, h in zip(self.shape, self.spacing)]

    def frequencies(self, half: bool = False):
        """Angular frequencies per axis; last axis halved when ``half`` (rfft layout)."""
        out = []
        for i, (n, h) in enumerate(zip(self.shape, self.spacing)):
            if half and i == len(self.shape) - 1:
                out.append(2 * math.pi * np.fft.rfftfreq(n, h))
            else:
                out.append(2 * math.pi * np.fft.fftfreq(n, h))
        return out


def default_grid(beta: float, dims: int = 1, points: int = 64, extent_factor: float = 8.0) -> NoiseGrid:
    """Grid covering +-extent_factor/beta on every axis (transform decayed there)."""
    L = 2.0 * extent_factor / beta
    h = L / points
    return NoiseGrid(tuple([points] * (1 + dims)), tuple([h] * (1 + dims)))


@dataclass(frozen=True)
class NoiseSample:
    grid: NoiseGrid
    values: np.ndarray = field(repr=False)
    seed: int = 0
    index: int = 0
    kernel: Optional[KernelSpec] = None


def _grid_spectrum(k: KernelSpec, grid: NoiseGrid, half: bool):
    if grid.dims != k.dims:
        raise InvalidInput("grid dimension does not match kernel dimension")
    freqs = grid.frequencies(half=half)
    mesh = np.meshgrid(*freqs, indexing="ij")
    s = mesh[0] ** 2 - sum(m ** 2 for m in mesh[1:])
    kind, par, ts, tv = k.args()
    if k.variant == "tabulated":
        lo, hi = k.table_s[0], k.table_s[-1]
        if np.any(s < lo) or np.any(s > hi):
            raise InvalidInput("grid invariants fall outside the tabulated kernel range")
    g = K._gspec_np(kind, par, ts, tv, s)
    neg = np.argwhere(g < 0)
    if neg.size:
        idx = tuple(neg[0])
        point = tuple(float(f[i]) for f, i in zip(freqs, idx))
        raise InvalidInput(f"negative spectral value {g[idx]:.3e} at grid frequency {point}; sampling refused")
    return fourier_constant(k.dims) * (2 * math.pi) ** (1 + k.dims) * g / grid.cell_volume


def sample_noise_field(k: KernelSpec, grid: NoiseGrid, seed: int, index: int = 0) -> NoiseSample:
    """One real stationary Gaussian field with the kernel's lattice covariance.

    White noise on the grid is filtered by the square root of the lattice power
    spectrum in the half-spectrum (rfft) layout, so the output is real by
    construction.
    """
    amp = np.sqrt(_grid_spectrum(k, grid, half=True))
    rng = derive_rng(seed, index)
    w = rng.standard_normal(grid.shape)
    xi = np.fft.irfftn(np.fft.rfftn(w) * amp, s=grid.shape, axes=tuple(range(len(grid.shape))))
    return NoiseSample(grid, xi, int(seed), int(index), k)


def sample_ensemble(k: KernelSpec, grid: NoiseGrid, seed: int, n: int, threads: int = 1):
    """``n`` independent samples with per-index derived streams (order-independent)."""
    from .parallel import ordered_map

    return ordered_map(lambda i: sample_noise_field(k, grid, seed, i), range(int(n)), threads)


def exact_grid_covariance(k: KernelSpec, grid: NoiseGrid) -> np.ndarray:
    """Exact lattice covariance C(lag), lag-indexed like the grid (periodic)."""
    S = _grid_spectrum(k, grid, half=False)
    return np.fft.ifftn(S).real


def empirical_covariance(samples: Sequence[NoiseSample], lag: Sequence[int]):
    """Unbiased estimate of E[xi(x) xi(x + lag)] with its standard error.

    Each sample contributes its spatial average of ``xi(x) xi(x + lag)``
    (periodic); the estimate is the mean over samples and the standard error
    is the sample standard deviation over sqrt(#samples).
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidInput("empirical covariance needs at least 2 samples")
    g0 = samples[0].grid
    if any(s.grid != g0 for s in samples):
        raise InvalidInput("samples are defined on different grids")
    lag = tuple(int(v) for v in lag)
    if len(lag) != len(g0.shape):
        raise InvalidInput("lag must have one entry per grid axis")
    shift = tuple(-v for v in lag)
    stats = np.array([np.mean(s.values * np.roll(s.values, shift, axis=tuple(range(len(lag)))))
                      for s in samples])
    est = float(np.mean(stats))
    se = float(np.std(stats, ddof=1) / math.sqrt(len(stats)))
    return est, se
