"""Conventions, parameters, spacetime geometry and numerical configuration.

Natural units (hbar = c = 1) are used throughout and no other unit system is
accepted.  The metric signature is (+, -, -, -), so the invariant interval
between two events is ``(t2 - t1)**2 - |x2 - x1|**2`` and the phase of a mode
with four-momentum ``q = (omega_q, q_vec)`` at ``x = (t, x_vec)`` is
``q.x = omega_q * t - q_vec . x_vec``.

Spatial dimension ``d`` is a runtime parameter restricted to 1 or 3.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

ALLOWED_DIMS = (1, 3)
DEFAULT_NORM_CONSTANT = (2.0 * math.pi) ** 1.5


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------
class ArtifactError(Exception):
    """Base class for all library errors."""


class InvalidInput(ArtifactError, ValueError):
    """Rejected input (violated precondition).  CLI exit code 2."""


class ConvergenceError(ArtifactError):
    """A numerical tolerance contract could not be met.  CLI exit code 1.

    ``achieved`` carries the best value/error pair obtained, if any.
    """

    def __init__(self, message: str, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NormalizationError(InvalidInput):
    """Occupancy normalisation impossible (zero integral with N > 0)."""


def check_dims(d: int) -> int:
    if int(d) != d or int(d) not in ALLOWED_DIMS:
        raise InvalidInput(f"spatial dimension must be one of {ALLOWED_DIMS}, got {d!r}")
    return int(d)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ModelParams:
    """Couplings and constants of the collapse model (natural units).

    gamma: noise coupling; alpha: collapse-operator strength; beta: kernel
    momentum scale; mass: field mass; vol: comoving volume.
    """

    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    mass: float = 1.0
    vol: float = 1.0

    def __post_init__(self):
        vals = dict(gamma=self.gamma, alpha=self.alpha, beta=self.beta,
                    mass=self.mass, vol=self.vol)
        for k, v in vals.items():
            if not np.isfinite(v):
                raise InvalidInput(f"{k} must be finite, got {v!r}")
        if self.gamma < 0:
            raise InvalidInput(f"gamma must be >= 0, got {self.gamma}")
        if self.mass <= 0:
            raise InvalidInput(f"mass must be > 0, got {self.mass}")
        if self.beta <= 0:
            raise InvalidInput(f"beta must be > 0, got {self.beta}")
        if self.vol <= 0:
            raise InvalidInput(f"vol must be > 0, got {self.vol}")

    @property
    def rate_scale(self) -> float:
        """Factor gamma * alpha**2 * V that converts per-unit rates to absolute."""
        return self.gamma * self.alpha ** 2 * self.vol


@dataclass(frozen=True)
class SpacetimePoint:
    """An event ``(t, x)`` with ``x`` a spatial vector of length 1 or 3."""

    t: float
    x: tuple = (0.0,)

    def __post_init__(self):
        xs = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "t", float(self.t))
        check_dims(len(xs))

    @property
    def dims(self) -> int:
        return len(self.x)

    def __sub__(self, other: "SpacetimePoint") -> "SpacetimePoint":
        _same_dims(self, other)
        return SpacetimePoint(self.t - other.t, tuple(a - b for a, b in zip(self.x, other.x)))

    def __neg__(self) -> "SpacetimePoint":
        return SpacetimePoint(-self.t, tuple(-a for a in self.x))

    @property
    def r(self) -> float:
        """Euclidean length of the spatial part."""
        return math.sqrt(math.fsum(a * a for a in self.x))


def _same_dims(a: SpacetimePoint, b: SpacetimePoint):
    if a.dims != b.dims:
        raise InvalidInput(f"dimension mismatch: {a.dims} vs {b.dims}")


def interval(z2: SpacetimePoint, z1: SpacetimePoint) -> float:
    """Invariant ``s(z2, z1) = (t2 - t1)^2 - |x2 - x1|^2``."""
    _same_dims(z2, z1)
    dt = z2.t - z1.t
    dx2 = math.fsum((a - b) ** 2 for a, b in zip(z2.x, z1.x))
    return dt * dt - dx2


def causal_classify(z2: SpacetimePoint, z1: SpacetimePoint, tol: float = 1e-12) -> str:
    """Return ``'timelike'``, ``'spacelike'`` or ``'lightlike'``.

    The lightlike band is relative: ``|s| <= tol * (dt^2 + |dx|^2)``, which
    stays meaningful for separations close to the origin.
    """
    _same_dims(z2, z1)
    dt = z2.t - z1.t
    dx2 = math.fsum((a - b) ** 2 for a, b in zip(z2.x, z1.x))
    s = dt * dt - dx2
    if abs(s) <= tol * (dt * dt + dx2):
        return "lightlike"
    return "timelike" if s > 0 else "spacelike"


@dataclass(frozen=True)
class QuadratureConfig:
    """Numerical knobs shared by all modules.

    cutoff: momentum cutoff Lambda; nodes: Gauss-Legendre points per panel
    (or per axis); mc_samples: Monte Carlo sample count; seed: 64-bit seed;
    rel_tol: target relative tolerance; regulator: ``'sharp'`` (hard cutoff at
    Lambda) or ``'gaussian'`` (smooth factor exp(-q^2/Lambda^2)).
    """

    cutoff: float = 50.0
    nodes: int = 24
    mc_samples: int = 200_000
    seed: int = 20240601
    rel_tol: float = 1e-8
    regulator: str = "sharp"

    def __post_init__(self):
        if not (self.cutoff > 0 and np.isfinite(self.cutoff)):
            raise InvalidInput(f"cutoff must be a positive finite number, got {self.cutoff}")
        if int(self.nodes) < 2:
            raise InvalidInput(f"nodes must be >= 2, got {self.nodes}")
        if int(self.mc_samples) < 1:
            raise InvalidInput("mc_samples must be >= 1")
        if not (0 < self.rel_tol < 1):
            raise InvalidInput(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.regulator not in ("sharp", "gaussian"):
            raise InvalidInput(f"unknown regulator {self.regulator!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise InvalidInput("seed must be a 64-bit unsigned integer")

    def with_cutoff(self, cutoff: float) -> "QuadratureConfig":
        return replace(self, cutoff=float(cutoff))

    def regulator_factor(self, q):
        q = np.asarray(q, dtype=float)
        if self.regulator == "sharp":
            return np.where(np.abs(q) <= self.cutoff, 1.0, 0.0)
        return np.exp(-(q / self.cutoff) ** 2)

    @property
    def momentum_extent(self) -> float:
        """Upper end of radial momentum integrals for the chosen regulator."""
        return self.cutoff if self.regulator == "sharp" else 6.5 * self.cutoff


def derive_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for work item ``index`` under master ``seed``.

    Streams depend only on ``(seed, index)``, never on scheduling order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------
@lru_cache(maxsize=64)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(int(n))
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_nodes(edges: Sequence[float], n: int):
    """Composite Gauss-Legendre nodes/weights on the panels given by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x0, w0 = gauss_legendre(n)
    a = edges[:-1, None]
    b = edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (half * x0[None, :] + 0.5 * (a + b)).ravel()
    weights = (half * w0[None, :]).ravel()
    return nodes, weights


def make_edges(a: float, b: float, npanels: int, breaks: Sequence[float] = ()) -> np.ndarray:
    """Uniform panel edges on [a, b] with extra breakpoints inserted."""
    base = np.linspace(a, b, max(1, int(npanels)) + 1)
    extra = [x for x in breaks if a < x < b]
    return np.unique(np.concatenate([base, np.asarray(extra, dtype=float)]))


def gl_integrate(f: Callable, a: float, b: float, npanels: int = 8, n: int = 24,
                 breaks: Sequence[float] = (), rel_tol: float = 1e-10,
                 abs_tol: float = 0.0, max_doublings: int = 8):
    """Composite Gauss-Legendre integral of a vectorised ``f`` on [a, b].

    The panel count is doubled until two successive estimates agree within
    ``max(rel_tol*|I|, abs_tol)``.  Returns ``(value, error_estimate)``; raises
    :class:`ConvergenceError` (carrying the best estimate) otherwise.
    """
    if b == a:
        return 0.0, 0.0
    prev = None
    val = err = float("inf")
    npan = max(1, int(npanels))
    for _ in range(max_doublings + 1):
        x, w = panel_nodes(make_edges(a, b, npan, breaks), n)
        val = math.fsum(np.asarray(f(x), dtype=float) * w)
        if prev is not None:
            err = abs(val - prev)
            if err <= max(rel_tol * abs(val), abs_tol):
                return val, err
        prev = val
        npan *= 2
    raise ConvergenceError(f"quadrature on [{a}, {b}] did not converge", achieved=(val, err))


# ---------------------------------------------------------------------------
# occupancy
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class OccupancySpec:
    """Isotropic mode occupancy n(|q|).

    Variants
    --------
    thermal : Bose-Einstein occupancy ``1/(exp(omega_q/T) - 1)``, parameter ``temperature``.
    shell   : smooth compact bump ``(1 - u^2)^2`` with ``u = (|q| - q0)/width``.
    tabulated : piecewise-linear table ``table_q -> table_n``, zero outside.

    Every variant is multiplied by ``scale``; :func:`occupancy_normalize`
    chooses it so that ``int d^dq n = norm_constant * N / V``.
    """

    variant: str = "shell"
    n_particles: float = 1.0
    vol: float = 1.0
    norm_constant: float = DEFAULT_NORM_CONSTANT
    mass: float = 1.0
    dims: int = 3
    temperature: Optional[float] = None
    q0: Optional[float] = None
    width: Optional[float] = None
    table_q: Optional[tuple] = None
    table_n: Optional[tuple] = None
    scale: float = 1.0

    def __post_init__(self):
        check_dims(self.dims)
        if self.variant not in ("thermal", "shell", "tabulated"):
            raise InvalidInput(f"unknown occupancy variant {self.variant!r}")
        if self.n_particles < 0:
            raise InvalidInput("n_particles must be >= 0")
        if self.vol <= 0:
            raise InvalidInput("vol must be > 0")
        if self.mass <= 0:
            raise InvalidInput("mass must be > 0")
        if self.scale < 0 or not np.isfinite(self.scale):
            raise InvalidInput("scale must be finite and >= 0")
        if self.variant == "thermal":
            if self.temperature is None or self.temperature < 0:
                raise InvalidInput("thermal occupancy needs temperature >= 0")
        elif self.variant == "shell":
            if self.q0 is None or self.width is None or self.width <= 0 or self.q0 < 0:
                raise InvalidInput("shell occupancy needs q0 >= 0 and width > 0")
        else:
            if self.table_q is None or self.table_n is None:
                raise InvalidInput("tabulated occupancy needs table_q and table_n")
            tq = np.asarray(self.table_q, dtype=float)
            tn = np.asarray(self.table_n, dtype=float)
            if tq.ndim != 1 or tq.shape != tn.shape or tq.size < 2:
                raise InvalidInput("table_q/table_n must be 1-d of equal length >= 2")
            if np.any(np.diff(tq) <= 0) or tq[0] < 0:
                raise InvalidInput("table_q must be increasing and non-negative")
            if np.any(tn < 0):
                raise InvalidInput("occupancy table must be non-negative")
            object.__setattr__(self, "table_q", tuple(tq.tolist()))
            object.__setattr__(self, "table_n", tuple(tn.tolist()))

    @property
    def target_integral(self) -> float:
        return self.norm_constant * self.n_particles / self.vol

    def support(self):
        """``(qmin, qmax)`` outside which n vanishes, or ``None`` if unbounded."""
        if self.variant == "shell":
            return max(0.0, self.q0 - self.width), self.q0 + self.width
        if self.variant == "tabulated":
            return self.table_q[0], self.table_q[-1]
        return None

    def breakpoints(self):
        sup = self.support()
        if sup is None:
            return ()
        pts = list(sup)
        if self.variant == "shell":
            pts.append(self.q0)
        elif self.variant == "tabulated":
            pts = list(self.table_q)
        return tuple(pts)

    def is_zero(self) -> bool:
        if self.scale == 0:
            return True
        if self.variant == "thermal":
            return self.temperature == 0
        if self.variant == "tabulated":
            return not any(v > 0 for v in self.table_n)
        return False

    def __call__(self, qmag):
        return occupancy_eval(self, qmag)


def _occupancy_shape(spec: OccupancySpec, q: np.ndarray) -> np.ndarray:
    if spec.variant == "thermal":
        T = spec.temperature
        if T == 0:
            return np.zeros_like(q)
        w = np.sqrt(q * q + spec.mass ** 2)
        with np.errstate(over="ignore"):
            return 1.0 / np.expm1(w / T)
    if spec.variant == "shell":
        u = (q - spec.q0) / spec.width
        return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
    tq = np.asarray(spec.table_q)
    tn = np.asarray(spec.table_n)
    return np.interp(q, tq, tn, left=0.0, right=0.0)


def occupancy_eval(spec: OccupancySpec, qmag):
    """Occupancy n at momentum magnitude ``qmag`` (scalar or array, >= 0)."""
    q = np.asarray(qmag, dtype=float)
    if np.any(q < 0) or np.any(~np.isfinite(q)):
        raise InvalidInput("momentum magnitude must be finite and >= 0")
    out = spec.scale * _occupancy_shape(spec, q)
    return float(out) if out.ndim == 0 else out


def radial_measure(dims: int, q):
    """Angular factor of ``d^dq`` for isotropic integrands: 2 (d=1) or 4 pi q^2 (d=3)."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.ones_like(q) if dims == 1 else 4.0 * math.pi * q * q


def occupancy_integral(spec: OccupancySpec, cfg: QuadratureConfig, weight=None):
    """``int_{|q|<=Lambda} d^dq n(|q|) * weight(|q|)``; returns (value, error)."""
    qmax = cfg.momentum_extent
    sup = spec.support()
    if sup is not None:
        qmax = min(qmax, sup[1])
        qmin = min(sup[0], qmax)
    else:
        qmin = 0.0
    if qmax <= qmin or spec.is_zero():
        return 0.0, 0.0

    def f(q):
        val = radial_measure(spec.dims, q) * occupancy_eval(spec, q) * cfg.regulator_factor(q)
        if weight is not None:
            val = val * weight(q)
        return val

    breaks = [b for b in spec.breakpoints() if qmin < b < qmax]
    if spec.variant == "thermal" and spec.temperature > 0:
        breaks += [min(qmax, k * spec.temperature) for k in (1, 5, 20)]
    npan = 16 if spec.variant != "tabulated" else 2
    return gl_integrate(f, qmin, qmax, npanels=npan, n=cfg.nodes, breaks=breaks,
                        rel_tol=max(cfg.rel_tol, 1e-13), abs_tol=1e-300)


def occupancy_normalize(spec: OccupancySpec, cfg: QuadratureConfig) -> OccupancySpec:
    """Rescale ``spec`` so ``int d^dq n = norm_constant * N / V`` (within rel_tol)."""
    target = spec.target_integral
    if target == 0:
        return replace(spec, scale=0.0) if spec.scale != 0 else spec
    unit = replace(spec, scale=1.0)
    val, _ = occupancy_integral(unit, cfg)
    if not val > 0:
        raise NormalizationError(
            f"occupancy integrates to {val!r} over the cutoff ball; cannot normalise to N={spec.n_particles}")
    return replace(spec, scale=target / val)


def zero_occupancy(dims: int = 3, mass: float = 1.0) -> OccupancySpec:
    return OccupancySpec(variant="shell", q0=1.0, width=0.5, n_particles=0.0,
                         scale=0.0, dims=dims, mass=mass)
