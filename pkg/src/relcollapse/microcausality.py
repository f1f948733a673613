"""Second-order microcausality probes.

For a given noise realisation the order-gamma part of the commutator of an
observable at ``z2`` (evolved by the collapse dynamics) with the same
observable at ``z1`` is

    - int_{z1^0 <= x2^0 <= x1^0 <= z2^0} xi(x2) xi(x1) [[Q(x2), [Q(x1), O(z2)]], O(z1)].

Averaging over the noise replaces ``xi xi`` by the correlation ``G(x1 - x2)``.
Observables and collapse operators are at most quadratic in the field, so the
nested commutators reduce to c-number algebra.  The linear operators
``phi_+(p), phi_-(p)`` at the four points form a basis ``psi`` (8 entries); a
linear operator is a vector ``L`` (``L.psi``), a quadratic one a matrix ``M``
(``psi^T M psi``), and with ``c_ij = [psi_i, psi_j]`` (all built from the
vacuum Wightman function)::

    [M, L]  = (M + M^T) c L            (linear)
    [L, L'] = L^T c L'                 (c-number)
    [M, N]  = M c (N + N^T) - (N + N^T) c M   (quadratic)

Constants never enter a commutator, so normal ordering the evolved operator
(which only subtracts its vacuum expectation value) leaves the result
unchanged.  For ``O = phi`` the result is a c-number; for ``O = phi^2`` it is a
quadratic operator and its magnitude is reported as the modulus of its vacuum
expectation value.

The field kernels are regulated by ``exp(-q^2/Lambda^2)``, i.e. both fields
are smeared in space over ~1/Lambda; outside the light cone the commutator
function then falls off like ``exp(-Lambda^2 d^2 / 4)``.  The probe is
implemented in 1+1 dimensions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse, special

from .core import (InvalidInput, QuadratureConfig, SpacetimePoint, causal_classify, gauss_legendre,
                   interval)
from .field_kernel import DiscreteModes, pauli_jordan_closed_form_1d, vacuum_symmetric_closed_form_1d
from .fock import FockRep, protected_deviation
from .noise_kernel import (KernelSpec, NoiseSample, invariant_correlation_1d, lightcone_log_coefficient,
                           quartic_correlation_1d_transform)
from .parallel import ordered_map

OBSERVABLES = ("phi", "phi_squared")
COLLAPSE_OPS = ("local_quadratic", "nonlocal_pm")
SPACELIKE_RATIO = 1e-3


@dataclass(frozen=True)
class CommutatorProbe:
    """Configuration of one second-order commutator evaluation.

    ``z2.t >= z1.t`` is required.  ``cfg.cutoff`` is the field regulator
    scale, ``cfg.nodes`` the Gauss-Legendre nodes per axis and panel;
    ``panels`` splits every axis into that many panels.
    """

    z2: SpacetimePoint
    z1: SpacetimePoint
    observable: str = "phi"
    collapse_op: str = "local_quadratic"
    time_ordering: bool = True
    normal_order: bool = False
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("quartic", beta=1.5))
    cfg: QuadratureConfig = field(default_factory=lambda: QuadratureConfig(cutoff=20.0, nodes=12))
    mass: float = 1.0
    alpha: float = 1.0
    panels: int = 2

    def __post_init__(self):
        if self.z1.dims != self.z2.dims:
            raise InvalidInput("z1 and z2 have different dimensions")
        if self.z2.t < self.z1.t:
            raise InvalidInput(f"ordering convention requires z2.t >= z1.t (got {self.z2.t} < {self.z1.t})")
        if self.observable not in OBSERVABLES:
            raise InvalidInput(f"observable must be one of {OBSERVABLES}")
        if self.collapse_op not in COLLAPSE_OPS:
            raise InvalidInput(f"collapse_op must be one of {COLLAPSE_OPS}")
        if not self.mass > 0:
            raise InvalidInput("mass must be > 0")
        if self.panels < 1:
            raise InvalidInput("panels must be >= 1")

    @property
    def interval_class(self) -> str:
        return causal_classify(self.z2, self.z1)

    def swapped(self) -> "CommutatorProbe":
        """Probe with time and space separations exchanged (same |interval|, opposite sign)."""
        dt = self.z2.t - self.z1.t
        d = np.asarray(self.z2.x) - np.asarray(self.z1.x)
        r = float(np.linalg.norm(d))
        unit = d / r if r > 0 else np.eye(len(d))[0]
        z2 = SpacetimePoint(self.z1.t + r, tuple((np.asarray(self.z1.x) + dt * unit).tolist()))
        return replace(self, z2=z2)


@dataclass(frozen=True)
class MCCResult:
    magnitude: float
    error: float
    value: complex
    interval: float
    interval_class: str
    nodes: int

    def __iter__(self):
        yield self.magnitude
        yield self.error


# ---------------------------------------------------------------------------
# field kernels for the probe
# ---------------------------------------------------------------------------
class WightmanTable:
    """Regulated 1+1D vacuum Wightman function on a (t, x) lattice.

    ``W(t, x) = int dq exp(-q^2/L^2) exp(-i(w t - q x)) / (4 pi w)``, one FFT
    per time row, bilinear interpolation in between.  ``W(-t, x) = conj W(t, x)``
    and ``W(t, -x) = W(t, x)``.  Then ``N_vac = Re W`` and ``D = -2 Im W``.
    """

    def __init__(self, mass: float, cutoff: float, tmax: float, xmax: float, per_scale: int = 6):
        self.mass = float(mass)
        self.cutoff = float(cutoff)
        dx = 1.0 / (per_scale * cutoff)
        # period long enough that images (shifted by light-cone and mass tails) do not alias
        period = 2.0 * (xmax + tmax) + 40.0 / mass
        n = int(2 ** math.ceil(math.log2(period / dx)))
        dx = period / n
        q = np.fft.fftfreq(n, d=dx) * 2.0 * math.pi
        dq = 2.0 * math.pi / period
        om = np.sqrt(q * q + mass * mass)
        amp = np.exp(-(q / cutoff) ** 2) / om
        nx = int(math.ceil(xmax / dx)) + 2
        nt = int(math.ceil(tmax / dx)) + 2
        tab = np.empty((nt, nx), dtype=complex)
        for i in range(nt):
            f = amp * np.exp(-1j * om * (i * dx))
            tab[i] = (dq / (4.0 * math.pi)) * n * np.fft.ifft(f)[:nx]
        self.h = dx
        self.table = tab
        self.tmax = (nt - 1) * dx
        self.xmax = (nx - 1) * dx

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.abs(np.asarray(x, dtype=float))
        neg = t < 0
        ta = np.abs(t)
        if np.any(ta > self.tmax) or np.any(x > self.xmax):
            raise InvalidInput("separation outside the tabulated range")
        u = ta / self.h
        v = x / self.h
        i = np.minimum(u.astype(int), self.table.shape[0] - 2)
        j = np.minimum(v.astype(int), self.table.shape[1] - 2)
        fu = u - i
        fv = v - j
        T = self.table
        val = ((1 - fu) * (1 - fv) * T[i, j] + fu * (1 - fv) * T[i + 1, j]
               + (1 - fu) * fv * T[i, j + 1] + fu * fv * T[i + 1, j + 1])
        return np.where(neg, np.conj(val), val)


def closed_form_wightman_1d(mass: float) -> Callable:
    """Unregulated continuum Wightman function ``N_vac - (i/2) D`` (singular on the light cone)."""

    def W(t, x):
        return vacuum_symmetric_closed_form_1d(mass, t, x) - 0.5j * pauli_jordan_closed_form_1d(mass, t, x)

    return W


def discrete_wightman(modes: DiscreteModes) -> Callable:
    """Wightman function as a sum over the retained box modes (d = 1)."""
    k = modes.k[:, 0]
    om = modes.omega
    norm = modes.norm

    def W(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        ph = t[..., None] * om - x[..., None] * k
        return np.sum(np.exp(-1j * ph) / (2.0 * om), axis=-1) / norm

    return W


class CorrelationTable:
    """Quartic-kernel 1+1D correlation ``G(s)`` tabulated in the invariant.

    ``G + A ln|s|`` is smooth at ``s = 0`` and is interpolated linearly on a
    fine grid up to ``z = beta^4 s^2/256 = 64`` (power series) and on a coarser
    grid beyond (single Fourier integral), up to z = 1e4 where G < 1e-14.
    """

    def __init__(self, beta: float, fine: int = 20001, coarse: int = 600):
        self.beta = float(beta)
        self.A = lightcone_log_coefficient(beta)
        s_mid = math.sqrt(256.0 * 64.0) / beta ** 2
        s_hi = math.sqrt(256.0 * 1e4) / beta ** 2
        s1 = np.linspace(0.0, s_mid, fine)
        g1, _ = invariant_correlation_1d(beta, np.maximum(s1, 1e-300))
        h1 = g1 + self.A * np.log(np.maximum(s1, 1e-300))
        # exact limit at s = 0 from the leading term of the series:
        # G + A ln|s| -> (beta^2 / (2 sqrt(pi))) (psi(1/2) + 2 psi(1) - ln(beta^4 / 256))
        h1[0] = 0.5 * self.A * (special.digamma(0.5) + 2.0 * special.digamma(1.0) - math.log(beta ** 4 / 256.0))
        s2 = np.linspace(s_mid, s_hi, coarse)[1:]
        g2 = np.array([quartic_correlation_1d_transform(beta, s) for s in s2])
        self.s = np.concatenate([s1, s2])
        self.h = np.concatenate([h1, g2 + self.A * np.log(s2)])
        self.s_hi = s_hi

    def __call__(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        h = np.interp(a, self.s, self.h)
        with np.errstate(divide="ignore"):
            g = h - self.A * np.log(np.maximum(a, 1e-300))
        return np.where(a > self.s_hi, 0.0, g)


@lru_cache(maxsize=8)
def correlation_table(beta: float) -> CorrelationTable:
    return CorrelationTable(beta)


# ---------------------------------------------------------------------------
# c-number reduction
# ---------------------------------------------------------------------------
def _commutator_matrix(W: Callable, pts: np.ndarray) -> np.ndarray:
    """``c`` of shape (B, 8, 8) for points ``pts`` of shape (B, 4, 2) = (t, x)."""
    B = pts.shape[0]
    c = np.zeros((B, 8, 8), dtype=complex)
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            d = pts[:, i] - pts[:, j]
            w = W(d[:, 0], d[:, 1])
            c[:, 2 * i, 2 * j + 1] = w              # [phi_+(p_i), phi_-(p_j)] = W(p_i - p_j)
            c[:, 2 * j + 1, 2 * i] = -w             # [phi_-(p_j), phi_+(p_i)]
    return c


def _vacuum_contractions(W: Callable, pts: np.ndarray) -> np.ndarray:
    """``E_ij = <0| psi_i psi_j |0>``: only ``<phi_+(a) phi_-(b)> = W(a - b)`` survives."""
    B = pts.shape[0]
    E = np.zeros((B, 8, 8), dtype=complex)
    for i in range(4):
        for j in range(4):
            d = pts[:, i] - pts[:, j]
            E[:, 2 * i, 2 * j + 1] = W(d[:, 0], d[:, 1])
    return E


def _quadratic(slot: int, kind: str, coef: float = 1.0) -> np.ndarray:
    """8x8 coefficient matrix of a quadratic operator at point ``slot``."""
    M = np.zeros((8, 8), dtype=complex)
    a, b = 2 * slot, 2 * slot + 1
    if kind == "local":            # (phi_+ + phi_-)^2
        M[np.ix_([a, b], [a, b])] = coef
    elif kind == "pm":             # phi_- phi_+
        M[b, a] = coef
    return M


def _linear(slot: int) -> np.ndarray:
    L = np.zeros(8, dtype=complex)
    L[2 * slot] = L[2 * slot + 1] = 1.0
    return L


def _qq(M, N, c):
    S = N + np.swapaxes(N, -1, -2)
    return M @ c @ S - S @ c @ M


def reduce_nested_commutator(probe: CommutatorProbe, W: Callable, z2, z1, x1, x2) -> np.ndarray:
    """Vacuum value of ``[[Q(x2), [Q(x1), O(z2)]], O(z1)]`` for arrays of point pairs.

    Points are arrays of shape (B, 2) holding (t, x); returns complex (B,).
    """
    pts = np.stack(np.broadcast_arrays(z2, x1, x2, z1), axis=1).astype(float)
    c = _commutator_matrix(W, pts)
    kind = "local" if probe.collapse_op == "local_quadratic" else "pm"
    qc = 0.5 * probe.alpha if kind == "local" else probe.alpha
    M1 = _quadratic(1, kind, qc)
    M2 = _quadratic(2, kind, qc)
    if probe.observable == "phi":
        v = (M1 + M1.T) @ c @ _linear(0)          # [Q(x1), phi(z2)]
        v = np.einsum("ij,bjk,bk->bi", M2 + M2.T, c, v)   # [Q(x2), .]
        return np.einsum("bi,bij,j->b", v, c, _linear(3))
    N0 = _quadratic(0, "local")
    N3 = _quadratic(3, "local")
    K1 = _qq(M1[None], N0[None], c)
    K2 = _qq(M2[None], K1, c)
    # normal ordering K2 only removes its vacuum value, a constant that commutes with O(z1)
    P = _qq(K2, N3[None], c)
    E = _vacuum_contractions(W, pts)
    return np.einsum("bij,bij->b", P, E)


def _tx(p: SpacetimePoint):
    return np.array([p.t, p.x[0]], dtype=float)


def _domain_nodes(probe: CommutatorProbe, nodes: int, panels: int, pad: float):
    """Tensor Gauss-Legendre nodes over the (padded) causal domain; yields blocks per x1 time node."""
    T2, X2 = probe.z2.t, probe.z2.x[0]
    T1, X1 = probe.z1.t, probe.z1.x[0]
    xg, wg = gauss_legendre(nodes)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    ref_x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()  # nodes on [-1, 1]
    ref_w = (half[:, None] * wg[None, :]).ravel()
    span = T2 - T1
    t1 = T1 + 0.5 * span * (ref_x + 1.0)
    w1 = 0.5 * span * ref_w
    for a in range(t1.size):
        ta = t1[a]
        h1 = (T2 - ta) + pad
        xs1 = X2 + h1 * ref_x
        ws1 = h1 * ref_w
        top = ta if probe.time_ordering else T2
        t2 = T1 + 0.5 * (top - T1) * (ref_x + 1.0)
        wt2 = 0.5 * (top - T1) * ref_w
        h2 = (t2 - T1) + pad
        xs2 = X1 + h2[:, None] * ref_x[None, :]
        ws2 = h2[:, None] * ref_w[None, :]
        # arrays over (x1, t2, x2)
        X1a = np.broadcast_to(xs1[:, None, None], (xs1.size, t2.size, ref_x.size))
        T2a = np.broadcast_to(t2[None, :, None], X1a.shape)
        X2a = np.broadcast_to(xs2[None, :, :], X1a.shape)
        Wt = (w1[a] * ws1[:, None, None] * wt2[None, :, None] * ws2[None, :, :])
        yield ta, X1a.ravel(), T2a.ravel(), X2a.ravel(), Wt.ravel()


def _default_pad(probe: CommutatorProbe) -> float:
    if probe.collapse_op == "nonlocal_pm":
        return 10.0 / probe.mass
    return 12.0 / probe.cfg.cutoff


def _integrate(probe: CommutatorProbe, nodes: int, W: Callable, G: Callable, pad: float) -> complex:
    z2 = _tx(probe.z2)
    z1 = _tx(probe.z1)
    parts = []
    for ta, x1s, t2s, x2s, wts in _domain_nodes(probe, nodes, probe.panels, pad):
        x1 = np.stack([np.full_like(x1s, ta), x1s], axis=1)
        x2 = np.stack([t2s, x2s], axis=1)
        d = x1 - x2
        g = G(d[:, 0] ** 2 - d[:, 1] ** 2)
        val = reduce_nested_commutator(probe, W, z2[None], z1[None], x1, x2)
        parts.append(np.sum(wts * g * val))
    # second-order Dyson term carries (-i)^2 = -1
    return -complex(math.fsum(p.real for p in parts), math.fsum(p.imag for p in parts)) if parts else 0j


def _probe_kernels(probe: CommutatorProbe):
    if probe.z2.dims != 1:
        raise InvalidInput("the field-theoretic probe is implemented in 1+1 dimensions")
    if probe.kernel.variant != "quartic" or probe.kernel.dims != 1:
        raise InvalidInput("the probe needs the 1+1D quartic kernel (closed-form correlation)")
    pad = _default_pad(probe)
    span_t = probe.z2.t - probe.z1.t
    span_x = abs(probe.z2.x[0] - probe.z1.x[0]) + 2.0 * span_t + 2.0 * pad
    W = WightmanTable(probe.mass, probe.cfg.cutoff, span_t + 1e-9, span_x + 1e-9)
    G = correlation_table(float(probe.kernel.beta))
    return W, G, pad


def mcc_second_order(probe: CommutatorProbe) -> MCCResult:
    """Noise-averaged second-order commutator; magnitude with a resolution-change error estimate."""
    s = interval(probe.z2, probe.z1)
    cls = probe.interval_class
    if probe.z2.t == probe.z1.t:
        # the time-ordered domain has zero measure
        return MCCResult(0.0, 0.0, 0j, s, cls, 0)
    W, G, pad = _probe_kernels(probe)
    n = probe.cfg.nodes
    v_hi = _integrate(probe, n, W, G, pad)
    v_lo = _integrate(probe, max(2, n - 4), W, G, pad)
    return MCCResult(abs(v_hi), abs(v_hi - v_lo), v_hi, s, cls, (n * probe.panels) ** 4)


def spacelike_verdict(probe: CommutatorProbe, ratio: float = SPACELIKE_RATIO):
    """``(passed, magnitude, reference)``: spacelike magnitude against the swapped timelike probe."""
    res = mcc_second_order(probe)
    ref = mcc_second_order(probe.swapped())
    return res.magnitude < ratio * ref.magnitude, res, ref


def mcc_sweep(base: CommutatorProbe, grid: Sequence[tuple], ratio: float = SPACELIKE_RATIO,
              threads: Optional[int] = None, with_reference: bool = True):
    """Rows ``(dt, dx, class, magnitude, error, reference, passed)`` over separations ``(dt, |dx|)``.

    For spacelike rows the reference is the timelike probe with the
    separations exchanged and ``passed`` is ``magnitude < ratio * reference``;
    timelike and lightlike rows report ``passed = None``.
    """
    def one(item):
        dt, dx = float(item[0]), float(item[1])
        z1 = base.z1
        z2 = SpacetimePoint(z1.t + dt, (z1.x[0] + dx,))
        try:
            pr = replace(base, z2=z2)
            res = mcc_second_order(pr)
            ref = math.nan
            passed = None
            if res.interval_class == "spacelike":
                if dt == 0:
                    passed = True
                    ref = 0.0
                elif with_reference:
                    ref = mcc_second_order(pr.swapped()).magnitude
                    passed = bool(res.magnitude < ratio * ref)
            return (dt, dx, res.interval_class, res.magnitude, res.error, ref, passed)
        except InvalidInput as exc:  # per-row failure is reported, not raised
            return (dt, dx, "error", math.nan, math.nan, math.nan, str(exc))

    return ordered_map(one, list(grid), threads)


# ---------------------------------------------------------------------------
# Fock-matrix oracle and Wick check
# ---------------------------------------------------------------------------
def _probe_points_on_grid(probe: CommutatorProbe, noise: NoiseSample):
    """Grid points inside the time slab [z1^0, z2^0] with their noise values."""
    grid = noise.grid
    if grid.dims != 1:
        raise InvalidInput("the Fock oracle uses a 1+1D noise grid")
    t_ax, x_ax = grid.axes()
    sel = (t_ax >= probe.z1.t - 1e-12) & (t_ax <= probe.z2.t + 1e-12)
    return t_ax[sel], x_ax, noise.values[sel], grid.cell_volume


def _pairs(probe: CommutatorProbe, times, xs, vals, cell):
    """All (x1, x2) grid pairs in the probe domain and their weights xi(x1) xi(x2) dV^2."""
    T, X = np.meshgrid(times, xs, indexing="ij")
    P = np.stack([T.ravel(), X.ravel()], axis=1)
    V = vals.ravel() * cell
    i1, i2 = np.meshgrid(np.arange(len(P)), np.arange(len(P)), indexing="ij")
    i1 = i1.ravel()
    i2 = i2.ravel()
    if probe.time_ordering:
        keep = P[i2, 0] <= P[i1, 0]
        i1, i2 = i1[keep], i2[keep]
    return P[i1], P[i2], V[i1] * V[i2]


def discrete_second_order(probe: CommutatorProbe, modes: DiscreteModes, noise: NoiseSample) -> complex:
    """c-number reduction on the box modes of ``modes`` and the lattice of ``noise``."""
    times, xs, vals, cell = _probe_points_on_grid(probe, noise)
    x1, x2, w = _pairs(probe, times, xs, vals, cell)
    if w.size == 0:
        return 0j
    W = discrete_wightman(modes)
    val = reduce_nested_commutator(probe, W, _tx(probe.z2)[None], _tx(probe.z1)[None], x1, x2)
    tot = w * val
    return -complex(math.fsum(tot.real), math.fsum(tot.imag))


def _fock_observable(rep: FockRep, probe: CommutatorProbe, p: SpacetimePoint):
    f = rep.phi(p.t, p.x)
    return f if probe.observable == "phi" else (f @ f).tocsr()


def _fock_collapse(rep: FockRep, probe: CommutatorProbe, t, x):
    if probe.collapse_op == "local_quadratic":
        return rep.collapse_operator(t, x, probe.alpha)
    return (probe.alpha * (rep.phi_minus(t, x) @ rep.phi_plus(t, x))).tocsr()


def fock_mcc_value(probe: CommutatorProbe, rep: FockRep, noise: NoiseSample) -> complex:
    """Vacuum value of the noise-weighted nested commutator built from explicit matrices."""
    if rep.n_modes > 3 or rep.occ_cutoff > 10:
        raise InvalidInput("Fock oracle is limited to <= 3 modes")
    times, xs, vals, cell = _probe_points_on_grid(probe, noise)
    if not np.any(vals):
        return 0j
    O2 = _fock_observable(rep, probe, probe.z2)
    O1 = _fock_observable(rep, probe, probe.z1)
    Q = {(i, j): _fock_collapse(rep, probe, times[i], [xs[j]]) for i in range(len(times)) for j in range(len(xs))}
    dim = rep.dim
    total = sparse.csr_matrix((dim, dim), dtype=complex)
    # B(t1) = sum over x2 with x2^0 <= t1 (or all x2 without time ordering) of xi(x2) dV Q(x2)
    slab = [sum((vals[i, j] * cell * Q[(i, j)] for j in range(len(xs))), sparse.csr_matrix((dim, dim), dtype=complex))
            for i in range(len(times))]
    everything = sum(slab, sparse.csr_matrix((dim, dim), dtype=complex))
    cum = sparse.csr_matrix((dim, dim), dtype=complex)
    for i in range(len(times)):
        cum = cum + slab[i]
        Bq = cum if probe.time_ordering else everything
        for j in range(len(xs)):
            w1 = vals[i, j] * cell
            if w1 == 0:
                continue
            inner = Q[(i, j)] @ O2 - O2 @ Q[(i, j)]
            total = total + w1 * (Bq @ inner - inner @ Bq)
    if probe.normal_order:
        v = rep.vacuum()
        total = total - complex(np.vdot(v, total @ v)) * rep.identity()
    outer = total @ O1 - O1 @ total
    v = rep.vacuum()
    return -complex(np.vdot(v, outer @ v))


def fock_mcc_oracle(probe: CommutatorProbe, rep: FockRep, noise) -> float:
    """Magnitude of the realisation-averaged Fock-matrix second-order commutator."""
    samples = noise if isinstance(noise, (list, tuple)) else [noise]
    vals = [fock_mcc_value(probe, rep, s) for s in samples]
    return abs(sum(vals) / len(vals))


def _normal_ordered(rep: FockRep, fields):
    """``:f_1 ... f_k:`` for fields given as (t, x): creation parts to the left."""
    dim = rep.dim
    if not fields:
        return rep.identity()
    plus = [rep.phi_plus(t, x) for t, x in fields]
    minus = [rep.phi_minus(t, x) for t, x in fields]
    out = sparse.csr_matrix((dim, dim), dtype=complex)
    for choice in itertools.product((0, 1), repeat=len(fields)):
        left = [minus[i] for i, c in enumerate(choice) if c]
        right = [plus[i] for i, c in enumerate(choice) if not c]
        term = rep.identity()
        for op in left + right:
            term = term @ op
        out = out + term
    return out.tocsr()


def _matchings(idx):
    """All partial matchings (lists of pairs ``(i, j)``, ``i < j``) of the index list."""
    idx = list(idx)
    if len(idx) < 2:
        yield []
        return
    first, rest = idx[0], idx[1:]
    for m in _matchings(rest):      # first left unmatched
        yield m
    for k, j in enumerate(rest):    # first matched with j
        others = rest[:k] + rest[k + 1:]
        for m in _matchings(others):
            yield [(first, j)] + m


@dataclass(frozen=True)
class WickReport:
    protected_deviation: float
    full_deviation: float
    n_fields: int
    n_matchings: int

    @property
    def truncation_only(self) -> bool:
        return self.protected_deviation < 1e-8 <= self.full_deviation


def wick_check(rep: FockRep, ops: Sequence[Sequence], time_order: bool = True) -> WickReport:
    """Compare ``:A...Z:`` with ``T{A...Z} - (all contraction terms)`` entrywise.

    Each entry of ``ops`` is a quadratic operator given as two field points
    ``((t, x), (t', x'))``; a local ``phi^2`` uses the same point twice.
    Fields are put in time order (later to the left, stable for ties); each
    contraction of fields ``i`` before ``j`` is ``<0| f_i f_j |0>``.
    """
    if not 1 <= len(ops) <= 3:
        raise InvalidInput("wick_check takes one to three quadratic operators")
    fields = [tuple((float(p[0]), tuple(np.atleast_1d(p[1]).tolist()))) for op in ops for p in op]
    if time_order:
        fields = sorted(fields, key=lambda f: -f[0])
    n = len(fields)
    phis = [rep.phi(t, x) for t, x in fields]
    v = rep.vacuum()
    contr = {}
    for i in range(n):
        for j in range(i + 1, n):
            contr[(i, j)] = complex(np.vdot(v, phis[i] @ (phis[j] @ v)))
    product = rep.identity()
    for f in phis:
        product = product @ f
    rhs = product.copy()
    count = 0
    for m in _matchings(range(n)):
        if not m:
            continue
        count += 1
        used = {a for pair in m for a in pair}
        coef = np.prod([contr[p] for p in m])
        rest = [fields[i] for i in range(n) if i not in used]
        rhs = rhs - coef * _normal_ordered(rep, rest)
    lhs = _normal_ordered(rep, fields)
    diff = (lhs - rhs).tocsr()
    prot = protected_deviation(rep, diff, n)
    full = float(np.max(np.abs(diff.toarray()))) if diff.nnz else 0.0
    return WickReport(prot, full, n, count + 1)
