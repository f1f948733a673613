"""Free Klein-Gordon two-point kernels.

Conventions (natural units, signature (+,-,-,-), q.x = omega_q t - q.x):

* ``D(x) = int d^dq / ((2 pi)^d omega_q) sin(q.x)``, the c-number commutator
  with ``[phi(x), phi(y)] = -i D(x - y)``;
* ``N(x) = int d^dq / ((2 pi)^d omega_q) (n_q + 1/2) cos(q.x)``, half the
  expectation of the anticommutator.  The vacuum ``1/2`` is included only when
  :attr:`TwoPointContext.vacuum_half` is set; with it off the kernel is the
  normal-ordered one and vanishes for an empty occupancy.

Mode integrals are reduced by isotropy to one radial integral (``cos(q x)`` in
one dimension, ``sinc(q r)`` after the angular average in three) and
evaluated with composite Gauss-Legendre panels fine enough to resolve the
oscillation; the panel count is doubled until two estimates agree.
Closed forms for the one-dimensional continuum kernels and discrete
(periodic-box) mode sums are provided as oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import _kernels as K
from .core import (ConvergenceError, InvalidInput, OccupancySpec, QuadratureConfig, SpacetimePoint,
                   check_dims, make_edges, occupancy_eval, panel_nodes, zero_occupancy)


@dataclass(frozen=True)
class TwoPointContext:
    """Evaluator state for the field kernels N and D."""

    mass: float = 1.0
    dims: int = 1
    occupancy: Optional[OccupancySpec] = None
    cfg: QuadratureConfig = field(default_factory=QuadratureConfig)
    vacuum_half: bool = False

    def __post_init__(self):
        check_dims(self.dims)
        if not self.mass > 0:
            raise InvalidInput(f"mass must be > 0, got {self.mass}")
        if self.occupancy is None:
            object.__setattr__(self, "occupancy", zero_occupancy(self.dims, self.mass))
        if self.occupancy.dims != self.dims:
            raise InvalidInput("occupancy and context dimensions differ")

    def omega(self, q):
        q = np.asarray(q, dtype=float)
        return np.sqrt(q * q + self.mass * self.mass)

    @property
    def measure_constant(self) -> float:
        """Radial reduction of ``d^dq/(2 pi)^d``: 1/pi (d=1) or 1/(2 pi^2) (d=3)."""
        return 1.0 / math.pi if self.dims == 1 else 1.0 / (2.0 * math.pi ** 2)


@dataclass(frozen=True)
class KernelValue:
    value: float
    error: float


class ModeTable:
    """Radial quadrature nodes for evaluating N and D at many points at once.

    ``npanels`` uniform panels cover [0, momentum_extent]; a second node set
    covers the occupancy support so that narrow shells are resolved
    independently of the vacuum panels.
    """

    def __init__(self, ctx: TwoPointContext, npanels: int):
        cfg = ctx.cfg
        c = ctx.measure_constant
        top = cfg.momentum_extent
        radial = ctx.dims == 3
        # vacuum / commutator nodes
        q, w = panel_nodes(make_edges(0.0, top, npanels), cfg.nodes)
        jac = c * w * cfg.regulator_factor(q) / ctx.omega(q)
        if radial:
            jac = jac * q * q
        wc_vac = 0.5 * jac if ctx.vacuum_half else np.zeros_like(jac)
        # occupancy nodes
        occ = ctx.occupancy
        qs, wcs = [q], [wc_vac]
        wss = [jac]
        if not occ.is_zero():
            sup = occ.support()
            lo, hi = (0.0, top) if sup is None else (min(sup[0], top), min(sup[1], top))
            if hi > lo:
                breaks = [b for b in occ.breakpoints() if lo < b < hi]
                if occ.variant == "thermal":
                    breaks += [min(hi, k * occ.temperature) for k in (1, 5, 20)]
                nq = max(npanels * (hi - lo) / top, 16)
                qo, wo = panel_nodes(make_edges(lo, hi, int(math.ceil(nq)), breaks), cfg.nodes)
                jo = c * wo * cfg.regulator_factor(qo) / ctx.omega(qo) * occupancy_eval(occ, qo)
                if radial:
                    jo = jo * qo * qo
                qs.append(qo)
                wcs.append(jo)
                wss.append(np.zeros_like(jo))
        self.q = np.ascontiguousarray(np.concatenate(qs))
        self.om = np.ascontiguousarray(ctx.omega(self.q))
        self.wc = np.ascontiguousarray(np.concatenate(wcs))
        self.ws = np.ascontiguousarray(np.concatenate(wss))
        self.radial = radial

    def evaluate(self, t, y):
        """Return ``(N, D)`` arrays at times ``t`` and spatial distances ``y``."""
        t = np.ascontiguousarray(np.atleast_1d(np.asarray(t, dtype=float)))
        y = np.ascontiguousarray(np.atleast_1d(np.asarray(y, dtype=float)))
        t, y = np.broadcast_arrays(t, y)
        shape = t.shape
        C, S = K.mode_sums(np.ascontiguousarray(t.ravel()), np.ascontiguousarray(y.ravel()),
                           self.q, self.om, self.wc, self.ws, self.radial)
        return C.reshape(shape), S.reshape(shape)


def _spatial(ctx: TwoPointContext, x: SpacetimePoint) -> float:
    if x.dims != ctx.dims:
        raise InvalidInput(f"point has d={x.dims}, context has d={ctx.dims}")
    # in d = 1 the kernels are even in x, so only |x| matters
    return x.r


def default_panels(ctx: TwoPointContext, t: float, y: float) -> int:
    """Panel count resolving the oscillation of cos(omega t) K(q y) up to the cutoff."""
    top = ctx.cfg.momentum_extent
    cycles = top * (abs(t) + abs(y)) / math.pi
    return int(max(16, math.ceil(2 * cycles) + 16))


def _kernel_pair(ctx: TwoPointContext, t: float, y: float, max_doublings: int = 6):
    npan = default_panels(ctx, t, y)
    prev = None
    for _ in range(max_doublings + 1):
        tab = ModeTable(ctx, npan)
        C, S = tab.evaluate([t], [y])
        cur = np.array([C[0], S[0]])
        if prev is not None:
            err = np.abs(cur - prev)
            # absolute floor: round-off relative to the size of the mode integral itself, so
            # values that vanish (e.g. the regulated commutator far outside the cone) converge
            scale = max(np.max(np.abs(cur)), float(np.sum(np.abs(tab.wc)) + np.sum(np.abs(tab.ws))), 1e-300)
            if np.all(err <= np.maximum(ctx.cfg.rel_tol * np.abs(cur), 1e-13 * scale)):
                return cur, err
        prev = cur
        npan *= 2
    raise ConvergenceError("two-point mode integral did not converge", achieved=(cur, err))


def pauli_jordan(ctx: TwoPointContext, x: SpacetimePoint) -> KernelValue:
    """Commutator function D at separation ``x`` (cutoff-regulated mode integral)."""
    y = _spatial(ctx, x)
    if x.t == 0.0:
        return KernelValue(0.0, 0.0)
    cur, err = _kernel_pair(ctx, x.t, y)
    return KernelValue(float(cur[1]), float(err[1]))


def symmetric_two_point(ctx: TwoPointContext, x: SpacetimePoint) -> KernelValue:
    """Symmetric function N at separation ``x``; vacuum 1/2 iff ``ctx.vacuum_half``."""
    y = _spatial(ctx, x)
    if ctx.occupancy.is_zero() and not ctx.vacuum_half:
        return KernelValue(0.0, 0.0)
    cur, err = _kernel_pair(ctx, x.t, y)
    return KernelValue(float(cur[0]), float(err[0]))


def dtau_pauli_jordan_origin(ctx: TwoPointContext) -> float:
    """Time derivative of D at the origin: ``c_d int d|q| |q|^(d-1) R(q)``.

    For a sharp cutoff this is Lambda/pi (d=1) or Lambda^3/(6 pi^2) (d=3), the
    regulated value of the equal-time delta function at zero separation.
    """
    cfg = ctx.cfg
    q, w = panel_nodes(make_edges(0.0, cfg.momentum_extent, 64), cfg.nodes)
    f = cfg.regulator_factor(q) * (q * q if ctx.dims == 3 else 1.0)
    return ctx.measure_constant * math.fsum(f * w)


# ---------------------------------------------------------------------------
# one-dimensional continuum closed forms (no cutoff)
# ---------------------------------------------------------------------------
def pauli_jordan_closed_form_1d(mass: float, t, x):
    """(1/2) sgn(t) J0(m sqrt(t^2 - x^2)) inside the light cone, 0 outside."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = t * t - x * x
    out = np.where(s > 0, 0.5 * np.sign(t) * special.j0(mass * np.sqrt(np.abs(s))), 0.0)
    return float(out) if out.ndim == 0 else out


def vacuum_symmetric_closed_form_1d(mass: float, t, x):
    """Vacuum part of N: -Y0(m sqrt(s))/4 for timelike s, K0(m sqrt(-s))/(2 pi) for spacelike."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = t * t - x * x
    a = mass * np.sqrt(np.abs(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, -0.25 * special.y0(a), special.k0(a) / (2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


def vacuum_symmetric_origin_1d(mass: float, cutoff: float) -> float:
    """Sharp-cutoff vacuum N at the origin in d=1: asinh(Lambda/m)/(2 pi)."""
    return math.asinh(cutoff / mass) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# discrete periodic-box mode sums (same mode list as the Fock oracle)
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DiscreteModes:
    """Momenta of a periodic box of side ``box_length`` in ``dims`` dimensions.

    ``momenta`` has shape (n_modes, dims); ``occupation`` holds the mean
    occupation of each mode for the diagonal (Fock or thermal) state.
    """

    momenta: tuple
    box_length: float
    mass: float = 1.0
    occupation: tuple = ()

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.momenta, dtype=float))
        object.__setattr__(self, "momenta", tuple(map(tuple, k.tolist())))
        if not self.occupation:
            object.__setattr__(self, "occupation", tuple(0.0 for _ in range(k.shape[0])))
        if len(self.occupation) != k.shape[0]:
            raise InvalidInput("occupation must list one value per mode")

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.momenta, dtype=float)

    @property
    def dims(self) -> int:
        return self.k.shape[1]

    @property
    def omega(self) -> np.ndarray:
        k = self.k
        return np.sqrt(np.sum(k * k, axis=1) + self.mass ** 2)

    @property
    def norm(self) -> float:
        return self.box_length ** self.dims


def box_modes(indices: Sequence[int], box_length: float, mass: float = 1.0, dims: int = 1,
              occupation: Sequence[float] = ()) -> DiscreteModes:
    """Modes ``2 pi j / L`` along the first axis for each integer ``j`` in ``indices``."""
    k = np.zeros((len(indices), dims))
    k[:, 0] = 2.0 * math.pi * np.asarray(indices, dtype=float) / box_length
    return DiscreteModes(tuple(map(tuple, k.tolist())), box_length, mass, tuple(occupation))


def discrete_kernels(modes: DiscreteModes, t, x, vacuum_half: bool = True):
    """``(N, D)`` as finite mode sums on ``modes``; ``x`` has trailing axis ``dims``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == t.ndim:
        x = x[..., None]
    om = modes.omega
    ph = t[..., None] * om - x @ modes.k.T
    n = np.asarray(modes.occupation) + (0.5 if vacuum_half else 0.0)
    N = np.sum(n * np.cos(ph) / om, axis=-1) / modes.norm
    D = np.sum(np.sin(ph) / om, axis=-1) / modes.norm
    return N, D


def kernel_table(ctx: TwoPointContext, points: Sequence[SpacetimePoint]):
    """Rows ``(t, |x|, N, N_err, D, D_err)`` for CSV export."""
    rows = []
    for p in points:
        n = symmetric_two_point(ctx, p)
        d = pauli_jordan(ctx, p)
        rows.append((p.t, p.r, n.value, n.error, d.value, d.error))
    return rows
