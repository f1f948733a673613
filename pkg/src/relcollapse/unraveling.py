"""Finite-dimensional collapse dynamics with coloured noise.

Three stochastic unravelings of the order-gamma collapse master equation are
integrated on a small Hilbert space:

* nonlinear, norm preserving: state feedback through <A_i> and the operators
  ``O_-`` (anti-Hermitian) and ``O_+`` (Hermitian),
* linear, unnormalised: the noise and the memory term act on the freely evolved
  initial state (order-by-order bookkeeping),
* unitary: ``H0 + sqrt(gamma) sum_i A_i xi_i(t)``,

and their ensemble averages are compared with the deterministic order-gamma
density matrix.

Discretisation: the noise is piecewise constant on cells of length ``dt`` and
its covariance is the kernel evaluated at cell midpoints; the deterministic
reference uses the same piecewise-constant kernel, with the time integrals of
the free-evolved collapse operators done by Gauss-Legendre quadrature (exact
to round-off at these cell sizes).  All work is done in the eigenbasis of H0.

Monte Carlo: trajectories come in antithetic pairs and the standard-normal
draws are moment matched (whitened) so the sample second moment of the paths
equals the target covariance exactly; this removes the order-gamma sampling
error of the averaged density matrix.  The nonlinear equation describes the
noise under the physical (Born-rule) measure; its paths are the Gaussian paths
shifted by the leading-order mean ``2 sqrt(gamma) C <B>_0`` (``measure="tilt"``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConvergenceError, InvalidInput, derive_rng, gauss_legendre

MAX_DIM = 64
COMMUTE_TOL = 1e-12
EIG_FLOOR = -1e-12
SCHEMES = ("rk4", "rk2", "perturbative")
MEASURES = ("tilt", "raw")


# ---------------------------------------------------------------------------
# system and configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ExponentialCorrelation:
    """Stationary kernel ``D_ij(t, s) = coupling_ij exp(-|t - s| / tau)``."""

    coupling: tuple
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInput("correlation time must be > 0")

    def __call__(self, t, s):
        c = np.asarray(self.coupling, dtype=float)
        return c * math.exp(-abs(t - s) / self.tau)


@dataclass(frozen=True)
class ZeroCorrelation:
    n_ops: int = 1

    def __call__(self, t, s):
        return np.zeros((self.n_ops, self.n_ops))


def _check_hermitian(m, name):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"{name} must be a square matrix")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise InvalidInput(f"{name} is not Hermitian")


@dataclass
class ToySystem:
    """Hamiltonian, commuting Hermitian collapse operators, noise kernel and initial state."""

    h0: np.ndarray
    collapse_ops: Sequence[np.ndarray]
    corr: Callable
    psi0: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        self.h0 = np.asarray(self.h0, dtype=complex)
        self.collapse_ops = [np.asarray(a, dtype=complex) for a in self.collapse_ops]
        self.psi0 = np.asarray(self.psi0, dtype=complex)
        d = self.h0.shape[0]
        if d > MAX_DIM:
            raise InvalidInput(f"dimension {d} exceeds {MAX_DIM}")
        if not self.collapse_ops:
            raise InvalidInput("need at least one collapse operator")
        _check_hermitian(self.h0, "h0")
        for i, a in enumerate(self.collapse_ops):
            if a.shape != (d, d):
                raise InvalidInput(f"collapse operator {i} has shape {a.shape}, expected {(d, d)}")
            _check_hermitian(a, f"collapse operator {i}")
        worst = max((np.linalg.norm(a @ b - b @ a, 2) for a in self.collapse_ops for b in self.collapse_ops),
                    default=0.0)
        if worst >= COMMUTE_TOL:
            raise InvalidInput(f"collapse operators do not commute (max commutator norm {worst:.3e})")
        if self.psi0.shape != (d,):
            raise InvalidInput("initial state has the wrong dimension")
        if abs(np.vdot(self.psi0, self.psi0).real - 1.0) > 1e-12:
            raise InvalidInput("initial state is not normalised")
        self.energies, self.basis = np.linalg.eigh(self.h0)
        V = self.basis
        self.ops_eig = np.array([V.conj().T @ a @ V for a in self.collapse_ops])
        self.psi0_eig = V.conj().T @ self.psi0

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_ops(self) -> int:
        return len(self.collapse_ops)

    def to_lab(self, x, matrix: bool = False):
        """Eigenbasis -> original basis for state arrays (..., d) or, with ``matrix``, operators (..., d, d)."""
        V = self.basis
        x = np.asarray(x)
        if matrix:
            return V @ x @ V.conj().T
        return x @ V.T


@dataclass(frozen=True)
class TrajectoryConfig:
    """Time grid (noise cells of length ``dt``), ensemble size and integrator options."""

    dt: float = 1.0 / 16.0
    t_final: float = 1.0
    n_traj: int = 512
    gamma: float = 0.1
    seed: int = 20240601
    scheme: str = "rk4"
    substeps: int = 8
    antithetic: bool = True
    whiten: bool = True
    measure: str = "tilt"
    norm_tol: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0 or not self.t_final > 0:
            raise InvalidInput("dt and t_final must be > 0")
        if self.n_traj < 1:
            raise InvalidInput("n_traj must be >= 1")
        if not self.gamma >= 0:
            raise InvalidInput("gamma must be >= 0")
        if self.scheme not in SCHEMES:
            raise InvalidInput(f"scheme must be one of {SCHEMES}")
        if self.measure not in MEASURES:
            raise InvalidInput(f"measure must be one of {MEASURES}")
        if self.substeps < 1:
            raise InvalidInput("substeps must be >= 1")
        if self.antithetic and self.n_traj % 2:
            raise InvalidInput("antithetic sampling needs an even n_traj")
        k = self.t_final / self.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise InvalidInput("t_final must be an integer multiple of dt")

    @property
    def n_cells(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dt


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------
def qubit_preset(tau: float = 0.5, h0_scale: float = 1.0) -> ToySystem:
    """Driven qubit, single sigma_z collapse operator, generic initial state (<A> != 0)."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    h0 = h0_scale * (0.7 * sx + 0.4 * sz)
    th, ph = 0.6, 0.9
    psi0 = np.array([math.cos(th), math.sin(th) * np.exp(1j * ph)])
    return ToySystem(h0, [sz], ExponentialCorrelation(((1.0,),), tau), psi0, name="qubit")


def dephasing_preset(tau: float = 0.5) -> ToySystem:
    """Qubit with H0 = 0, A = sigma_z, initial |+>: pure dephasing."""
    sz = np.diag([1.0, -1.0]).astype(complex)
    psi0 = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    return ToySystem(np.zeros((2, 2), dtype=complex), [sz], ExponentialCorrelation(((1.0,),), tau), psi0,
                     name="dephasing")


def qutrit_preset(tau: float = 0.4) -> ToySystem:
    """Three levels, two commuting diagonal collapse operators with correlated noises."""
    h0 = np.array([[0.0, 0.5, 0.1], [0.5, 0.8, 0.3], [0.1, 0.3, 1.5]], dtype=complex)
    h0[0, 2] = 0.1 + 0.2j
    h0[2, 0] = 0.1 - 0.2j
    a1 = np.diag([1.0, 0.0, -1.0]).astype(complex)
    a2 = np.diag([0.5, 1.0, -0.5]).astype(complex)
    psi0 = np.array([0.6, 0.5 + 0.3j, 0.2 - 0.4j], dtype=complex)
    psi0 /= np.linalg.norm(psi0)
    coupling = ((1.0, 0.3), (0.3, 0.6))
    return ToySystem(h0, [a1, a2], ExponentialCorrelation(coupling, tau), psi0, name="qutrit")


PRESETS = {"qubit": qubit_preset, "dephasing": dephasing_preset, "qutrit": qutrit_preset}


def preset(name: str, **kw) -> ToySystem:
    if name not in PRESETS:
        raise InvalidInput(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kw)


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------
def covariance_matrix(sys: ToySystem, cfg: TrajectoryConfig) -> np.ndarray:
    """Cell-midpoint covariance, index ``k * n_ops + i``."""
    K, N = cfg.n_cells, sys.n_ops
    mids = (np.arange(K) + 0.5) * cfg.dt
    C = np.empty((K * N, K * N))
    for k in range(K):
        for l in range(K):
            blk = np.asarray(sys.corr(mids[k], mids[l]), dtype=float).reshape(N, N)
            C[k * N:(k + 1) * N, l * N:(l + 1) * N] = blk
    if np.max(np.abs(C - C.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(C), initial=0.0)):
        raise InvalidInput("kernel violates D_ij(t, s) = D_ji(s, t)")
    return C


@dataclass
class NoisePaths:
    """Paths ``values[traj, cell, op]`` plus the factorisation diagnostics."""

    values: np.ndarray
    covariance: np.ndarray
    min_eigenvalue: float
    clipped: bool
    whitened: bool
    seed: int


def _factor(C: np.ndarray):
    w, V = np.linalg.eigh(C)
    wmin = float(w.min()) if w.size else 0.0
    if wmin < EIG_FLOOR:
        raise InvalidInput(f"noise covariance is indefinite: smallest eigenvalue {wmin:.3e} < {EIG_FLOOR:g}")
    clipped = bool(wmin < 0)
    return V * np.sqrt(np.clip(w, 0.0, None)), wmin, clipped


def _normals(n: int, M: int, seed: int, antithetic: bool, offset: int = 0) -> np.ndarray:
    if antithetic:
        half = np.array([derive_rng(seed, offset + p).standard_normal(M) for p in range(n // 2)]).reshape(-1, M)
        Z = np.empty((n, M))
        Z[0::2] = half
        Z[1::2] = -half
        return Z
    return np.array([derive_rng(seed, offset + p).standard_normal(M) for p in range(n)]).reshape(n, M)


def _whiten(Z: np.ndarray, active: np.ndarray):
    """Rotate the draws so their sample second moment is exactly the identity on ``active`` columns."""
    sub = Z[:, active]
    S = sub.T @ sub / Z.shape[0]
    w, V = np.linalg.eigh(S)
    if w.size == 0 or w.min() <= 1e-10 * max(1.0, w.max()):
        return Z, False
    out = Z.copy()
    out[:, active] = sub @ (V / np.sqrt(w)) @ V.T
    return out, True


def sample_noise_paths(sys: ToySystem, cfg: TrajectoryConfig, whiten: Optional[bool] = None,
                       batch: int = 0, n: Optional[int] = None) -> NoisePaths:
    """Zero-mean Gaussian paths on the cell grid with covariance ``covariance_matrix``.

    Trajectory ``p`` (pair ``p`` when antithetic) draws from
    ``derive_rng(seed, batch, p)``, so results do not depend on scheduling.
    """
    whiten = cfg.whiten if whiten is None else whiten
    n = cfg.n_traj if n is None else n
    C = covariance_matrix(sys, cfg)
    L, wmin, clipped = _factor(C)
    M = C.shape[0]
    active = np.flatnonzero(np.linalg.norm(L, axis=0) > 0)
    Z = _normals(n, M, cfg.seed, cfg.antithetic, offset=batch * 1_000_003)
    done = False
    if whiten and active.size:
        Z, done = _whiten(Z, active)
    vals = (Z @ L.T).reshape(n, cfg.n_cells, sys.n_ops)
    return NoisePaths(vals, C, wmin, clipped, done, cfg.seed)


# ---------------------------------------------------------------------------
# free-evolution integrals (eigenbasis of H0)
# ---------------------------------------------------------------------------
def _phase_integral(omega, a, b):
    """int_a^b exp(i omega u) du, stable for omega -> 0."""
    omega = np.asarray(omega, dtype=float)
    z = 1j * omega * (b - a)
    safe = np.where(np.abs(z) > 1e-12, z, 1.0)
    phi = np.where(np.abs(z) > 1e-12, np.expm1(safe) / safe, 1.0 + 0.5 * z)
    return np.exp(1j * omega * a) * (b - a) * phi


class _FreeIntegrals:
    """Cell integrals of interaction-picture operators ``A_I(s) = e^{iH0 s} A e^{-iH0 s}``."""

    def __init__(self, sys: ToySystem, cfg: TrajectoryConfig, gl_nodes: int = 20):
        self.sys = sys
        self.cfg = cfg
        E = sys.energies
        self.omega = E[:, None] - E[None, :]
        A = sys.ops_eig
        K, dt = cfg.n_cells, cfg.dt
        edges = np.arange(K + 1) * dt
        # B[k, i] = int_cell A_I
        self.B = np.array([[A[i] * _phase_integral(self.omega, edges[k], edges[k + 1]) for i in range(sys.n_ops)]
                           for k in range(K)])
        # triangle integrals Tri[k, i, j] = int_cell ds int_{t_k}^{s} ds' A_i,I(s) A_j,I(s')
        x, w = gauss_legendre(gl_nodes)
        tri = np.zeros((K, sys.n_ops, sys.n_ops, sys.dim, sys.dim), dtype=complex)
        for k in range(K):
            a, b = edges[k], edges[k + 1]
            s = a + 0.5 * (b - a) * (x + 1.0)
            ws = 0.5 * (b - a) * w
            for si, wi in zip(s, ws):
                inner = np.array([A[j] * _phase_integral(self.omega, a, si) for j in range(sys.n_ops)])
                outer = np.array([A[i] * np.exp(1j * self.omega * si) for i in range(sys.n_ops)])
                tri[k] += wi * np.einsum("iab,jbc->ijac", outer, inner)
        self.tri = tri

    def memory_operator(self, C: np.ndarray, upto: int) -> np.ndarray:
        """``T = int int_{s' < s <= t_upto} D_ij(s, s') A_i,I(s) A_j,I(s')`` (eigenbasis)."""
        N, d = self.sys.n_ops, self.sys.dim
        T = np.zeros((d, d), dtype=complex)
        for k in range(upto):
            for i in range(N):
                for j in range(N):
                    ckk = C[k * N + i, k * N + j]
                    if ckk:
                        T += ckk * self.tri[k, i, j]
                    for l in range(k):
                        c = C[k * N + i, l * N + j]
                        if c:
                            T += c * (self.B[k, i] @ self.B[l, j])
        return T


def _memory_schrodinger(sys: ToySystem, cfg: TrajectoryConfig, C: np.ndarray, t: float, cell: int) -> np.ndarray:
    """``Y(t) = -sum_ij int_0^t ds D_ij(t, s) A_i A_j(s - t)`` with the piecewise-constant kernel."""
    N, dt = sys.n_ops, cfg.dt
    A = sys.ops_eig
    om = sys.energies[:, None] - sys.energies[None, :]
    Y = np.zeros((sys.dim, sys.dim), dtype=complex)
    for l in range(cell + 1):
        a = l * dt
        b = min((l + 1) * dt, t)
        if b <= a:
            continue
        ph = _phase_integral(om, a - t, b - t)
        for j in range(N):
            evolved = A[j] * ph
            for i in range(N):
                c = C[cell * N + i, l * N + j]
                if c:
                    Y -= c * (A[i] @ evolved)
    return Y


def collapse_parts(sys: ToySystem, cfg: TrajectoryConfig, t: float, C: Optional[np.ndarray] = None):
    """``(O_minus, O_plus)`` at time ``t``: anti-Hermitian and Hermitian parts (eigenbasis).

    ``O_-+ = -sum_ij int_0^t D_ij(t,s) [A_i, A_j(s-t)]_-+``, built as ``Y -+ Y^dag``
    so the (anti-)Hermiticity is exact.
    """
    C = covariance_matrix(sys, cfg) if C is None else C
    cell = min(int(t / cfg.dt), cfg.n_cells - 1)
    Y = _memory_schrodinger(sys, cfg, C, t, cell)
    return Y - Y.conj().T, Y + Y.conj().T


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------
@dataclass
class Trajectory:
    """States (eigenbasis of H0) at the grid times, shape (n_traj, K + 1, dim)."""

    times: np.ndarray
    states: np.ndarray
    norm_drift: float
    kind: str
    extra: dict = field(default_factory=dict)

    def lab_states(self, sys: ToySystem) -> np.ndarray:
        return sys.to_lab(self.states)

    def density(self, index: int = -1) -> np.ndarray:
        """Ensemble average of |psi><psi| at grid time ``index`` (eigenbasis)."""
        psi = self.states[:, index, :]
        return _mean_outer(psi)


def _mean_outer(psi: np.ndarray) -> np.ndarray:
    rho = np.einsum("na,nb->ab", psi, psi.conj())
    return rho / psi.shape[0]


def _as_path(sys: ToySystem, cfg: TrajectoryConfig, path) -> np.ndarray:
    vals = path.values if isinstance(path, NoisePaths) else np.asarray(path, dtype=float)
    if vals.ndim == 2:
        vals = vals[None]
    if vals.shape[1:] != (cfg.n_cells, sys.n_ops):
        raise InvalidInput(f"noise path shape {vals.shape[1:]} does not match ({cfg.n_cells}, {sys.n_ops})")
    return vals


def _stage_ops(sys, cfg, C):
    """Memory operators Y at every RK stage time (shared by all trajectories)."""
    S, dt = cfg.substeps, cfg.dt
    h = dt / S
    out = {}
    for k in range(cfg.n_cells):
        for m in range(S):
            t = k * dt + m * h
            for frac in (0.0, 0.5, 1.0):
                key = (k, m, frac)
                out[key] = _memory_schrodinger(sys, cfg, C, t + frac * h, k)
    return out


def _integrate(deriv, psi, cfg, stage_ops, renorm: bool):
    """Fixed-step RK integration over the cell grid; returns states at cell edges and max norm drift."""
    K, S = cfg.n_cells, cfg.substeps
    h = cfg.dt / S
    out = [psi.copy()]
    drift = 0.0
    for k in range(K):
        for m in range(S):
            t = k * cfg.dt + m * h
            Y0, Yh, Y1 = stage_ops[(k, m, 0.0)], stage_ops[(k, m, 0.5)], stage_ops[(k, m, 1.0)]
            if cfg.scheme == "rk2":
                k1 = deriv(k, t, Y0, psi)
                k2 = deriv(k, t + h, Y1, psi + h * k1)
                psi = psi + 0.5 * h * (k1 + k2)
            else:
                k1 = deriv(k, t, Y0, psi)
                k2 = deriv(k, t + 0.5 * h, Yh, psi + 0.5 * h * k1)
                k3 = deriv(k, t + 0.5 * h, Yh, psi + 0.5 * h * k2)
                k4 = deriv(k, t + h, Y1, psi + h * k3)
                psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if renorm:
                nrm = np.linalg.norm(psi, axis=-1)
                drift = max(drift, float(np.max(np.abs(nrm - 1.0))))
        out.append(psi.copy())
    return np.stack(out, axis=1), drift


def physical_shift(sys: ToySystem, cfg: TrajectoryConfig, C: Optional[np.ndarray] = None,
                   fi: Optional[_FreeIntegrals] = None) -> np.ndarray:
    """Leading-order mean of the noise under the Born-rule measure, shape (K, n_ops).

    The physical measure weights a path by the squared norm of the linear
    state; to leading order this shifts the Gaussian mean by
    ``2 sqrt(gamma) C b`` with ``b = <psi0| int_cell A_I |psi0>``.
    """
    C = covariance_matrix(sys, cfg) if C is None else C
    fi = fi or _FreeIntegrals(sys, cfg)
    psi = sys.psi0_eig
    b = np.array([[np.vdot(psi, fi.B[k, i] @ psi).real for i in range(sys.n_ops)] for k in range(cfg.n_cells)])
    return (2.0 * math.sqrt(cfg.gamma) * (C @ b.ravel())).reshape(cfg.n_cells, sys.n_ops)


def evolve_nonlinear(sys: ToySystem, cfg: TrajectoryConfig, path, shift: Optional[np.ndarray] = None) -> Trajectory:
    """Norm-preserving nonlinear equation with <A> feedback and O_-+ memory terms.

    ``path`` holds the zero-mean Gaussian draws; with ``cfg.measure == "tilt"``
    the physical-measure mean shift is added (``shift`` overrides it).
    Raises :class:`ConvergenceError` if the norm drifts beyond ``cfg.norm_tol``.
    """
    xi = _as_path(sys, cfg, path)
    C = covariance_matrix(sys, cfg)
    if cfg.measure == "tilt" and cfg.gamma > 0:
        xi = xi + (physical_shift(sys, cfg, C) if shift is None else shift)[None]
    g = cfg.gamma
    sg = math.sqrt(g)
    E = sys.energies
    A = sys.ops_eig

    def deriv(k, t, Y, psi):
        out = -1j * psi * E[None, :]
        if g == 0:
            return out
        nrm2 = np.einsum("na,na->n", psi.conj(), psi).real
        for i in range(sys.n_ops):
            Ap = psi @ A[i].T
            mean = np.einsum("na,na->n", psi.conj(), Ap).real / nrm2
            out = out + sg * xi[:, k, i][:, None] * (Ap - mean[:, None] * psi)
        Om = Y - Y.conj().T
        Op = Y + Y.conj().T
        Opp = psi @ Op.T
        mp = np.einsum("na,na->n", psi.conj(), Opp).real / nrm2
        out = out + g * (psi @ Om.T) + g * (Opp - mp[:, None] * psi)
        return out

    psi0 = np.repeat(sys.psi0_eig[None], xi.shape[0], axis=0)
    if g == 0:
        # noise decoupled: exact free evolution on the grid
        states = np.exp(-1j * np.outer(cfg.times, E))[None] * psi0[:, None, :]
        return Trajectory(cfg.times, states, 0.0, "nonlinear")
    stage = _stage_ops(sys, cfg, C)
    states, drift = _integrate(deriv, psi0, cfg, stage, renorm=True)
    if drift > cfg.norm_tol:
        raise ConvergenceError(f"nonlinear step-size failure: norm drift {drift:.3e} > {cfg.norm_tol:g}; reduce dt",
                               drift)
    return Trajectory(cfg.times, states, drift, "nonlinear")


def evolve_linear(sys: ToySystem, cfg: TrajectoryConfig, path) -> Trajectory:
    """Unnormalised linear unraveling; drive and memory term act on the free state.

    ``cfg.scheme`` rk4/rk2 integrate the equation step by step;
    ``"perturbative"`` assembles ``phi0 + sqrt(gamma) phi1 + gamma phi2`` from
    exact cell integrals and also returns the three orders in ``extra``.
    """
    xi = _as_path(sys, cfg, path)
    E = sys.energies
    A = sys.ops_eig
    g = cfg.gamma
    sg = math.sqrt(g)
    n = xi.shape[0]
    psi0 = sys.psi0_eig
    free_phase = np.exp(-1j * np.outer(cfg.times, E))  # (K+1, d)
    if g == 0:
        states = np.repeat((free_phase * psi0[None])[None], n, axis=0)
        return Trajectory(cfg.times, states, 0.0, "linear")
    C = covariance_matrix(sys, cfg)
    if cfg.scheme == "perturbative":
        fi = _FreeIntegrals(sys, cfg)
        K = cfg.n_cells
        first = np.zeros((n, K + 1, sys.dim), dtype=complex)
        second = np.zeros((K + 1, sys.dim), dtype=complex)
        acc = np.zeros((n, sys.dim), dtype=complex)
        for k in range(K):
            for i in range(sys.n_ops):
                acc = acc + xi[:, k, i][:, None] * (fi.B[k, i] @ psi0)[None]
            first[:, k + 1] = acc
            second[k + 1] = -(fi.memory_operator(C, k + 1) @ psi0)
        zeroth = np.repeat(psi0[None, None], n, axis=0) * np.ones((1, K + 1, 1))
        # interaction -> Schrodinger picture
        states = (zeroth + sg * first + g * second[None]) * free_phase[None]
        extra = {"orders": (zeroth * free_phase[None], first * free_phase[None], second * free_phase)}
        return Trajectory(cfg.times, states, float(np.max(np.abs(np.linalg.norm(states, axis=-1) - 1.0))),
                          "linear", extra)
    stage = _stage_ops(sys, cfg, C)

    def deriv(k, t, Y, phi):
        f0 = np.exp(-1j * E * t) * psi0
        drive = np.zeros_like(phi)
        for i in range(sys.n_ops):
            drive = drive + sg * xi[:, k, i][:, None] * (A[i] @ f0)[None]
        return -1j * phi * E[None, :] + drive + g * (Y @ f0)[None]

    start = np.repeat(psi0[None], n, axis=0)
    states, _ = _integrate(deriv, start, cfg, stage, renorm=False)
    drift = float(np.max(np.abs(np.linalg.norm(states, axis=-1) - 1.0)))
    return Trajectory(cfg.times, states, drift, "linear")


def evolve_unitary(sys: ToySystem, cfg: TrajectoryConfig, path) -> Trajectory:
    """``H0 + sqrt(gamma) sum_i A_i xi_i`` with the exact exponential on every noise cell."""
    xi = _as_path(sys, cfg, path)
    n = xi.shape[0]
    E = sys.energies
    A = sys.ops_eig
    sg = math.sqrt(cfg.gamma)
    psi = np.repeat(sys.psi0_eig[None], n, axis=0)
    out = [psi.copy()]
    drift = 0.0
    for k in range(cfg.n_cells):
        H = np.diag(E).astype(complex)[None] + sg * np.einsum("ni,iab->nab", xi[:, k, :], A)
        w, V = np.linalg.eigh(H)
        U = np.einsum("nab,nb,ncb->nac", V, np.exp(-1j * w * cfg.dt), V.conj())
        psi = np.einsum("nab,nb->na", U, psi)
        drift = max(drift, float(np.max(np.abs(np.linalg.norm(psi, axis=-1) - 1.0))))
        out.append(psi.copy())
    if drift > cfg.norm_tol:
        raise ConvergenceError(f"unitary step-size failure: norm drift {drift:.3e}", drift)
    return Trajectory(cfg.times, np.stack(out, axis=1), drift, "unitary")


# ---------------------------------------------------------------------------
# deterministic reference
# ---------------------------------------------------------------------------
@dataclass
class DensityTrajectory:
    times: np.ndarray
    rho: np.ndarray           # (K + 1, d, d), eigenbasis of H0
    min_eigenvalue: float
    floor_violation: bool

    def lab(self, sys: ToySystem) -> np.ndarray:
        return sys.to_lab(self.rho, matrix=True)


def master_equation_rho2(sys: ToySystem, cfg: TrajectoryConfig, floor: float = -1e-8) -> DensityTrajectory:
    """Order-gamma density matrix on the grid:

    ``rho_I(t) = rho0 - gamma int_0^t ds int_0^s ds' D_ij(s,s') [A_i(s), [A_j(s'), rho0]]``

    with the cell-midpoint kernel; returned in the Schrodinger picture.
    Eigenvalues below ``floor`` are reported, not corrected.
    """
    C = covariance_matrix(sys, cfg)
    fi = _FreeIntegrals(sys, cfg)
    psi = sys.psi0_eig
    rho0 = np.outer(psi, psi.conj())
    K, N, g = cfg.n_cells, sys.n_ops, cfg.gamma
    E = sys.energies
    out = [rho0.copy()]
    T = np.zeros_like(rho0)
    sandwich = np.zeros_like(rho0)
    Bflat = fi.B.reshape(K * N, sys.dim, sys.dim)
    for k in range(K):
        # memory operator increment from cell k
        for i in range(N):
            for j in range(N):
                T += C[k * N + i, k * N + j] * fi.tri[k, i, j]
                for l in range(k):
                    T += C[k * N + i, l * N + j] * (fi.B[k, i] @ fi.B[l, j])
        # sandwich increment: new row/column of the full square
        for i in range(N):
            a = k * N + i
            for b in range(a + 1):
                c = C[a, b]
                if not c:
                    continue
                term = Bflat[a] @ rho0 @ Bflat[b].conj().T
                sandwich += c * (term if a == b else term + term.conj().T)
        rho_i = rho0 - g * (T @ rho0 + rho0 @ T.conj().T) + g * sandwich
        t = (k + 1) * cfg.dt
        ph = np.exp(-1j * E * t)
        rho = ph[:, None] * rho_i * ph.conj()[None, :]
        out.append(0.5 * (rho + rho.conj().T))
    rho = np.array(out)
    mins = min(float(np.linalg.eigvalsh(r).min()) for r in rho)
    return DensityTrajectory(cfg.times, rho, mins, mins < floor)


def dephasing_coherence_closed_form(gamma: float, t: float, tau: float) -> float:
    """Order-gamma coherence ratio rho01(t)/rho01(0) = 1 - 2 gamma int_0^t int_0^t exp(-|u-v|/tau)."""
    I = 2.0 * tau * (t - tau * (1.0 - math.exp(-t / tau)))
    return 1.0 - 2.0 * gamma * I


def dephasing_coherence_extrapolated(gamma: float, t: float, tau: float, n_cells: Sequence[int] = (32, 64, 128, 256)):
    """Master-equation coherence for decreasing dt, Richardson-extrapolated (error terms dt^2, dt^3, dt^4)."""
    sys = dephasing_preset(tau)
    vals = []
    hs = []
    for K in n_cells:
        cfg = TrajectoryConfig(dt=t / K, t_final=t, n_traj=2, gamma=gamma)
        rho = master_equation_rho2(sys, cfg).lab(sys)[-1]
        vals.append((rho[0, 1] / 0.5).real)
        hs.append(t / K)
    powers = [2, 3, 4][:len(vals) - 1]
    # solve value(h) = v0 + sum_p c_p h^p exactly through the points
    Amat = np.array([[1.0] + [h ** p for p in powers] for h in hs])
    sol = np.linalg.solve(Amat, np.array(vals))
    return float(sol[0]), vals


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------
def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))


def _loglog_fit(g, y, err):
    g = np.asarray(g, dtype=float)
    y = np.asarray(y, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    x = np.log(g[ok])
    ly = np.log(y[ok])
    sig = np.maximum(err[ok] / y[ok], 1e-3)
    w = 1.0 / sig ** 2
    X = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ (X.T @ (w * ly))
    return float(beta[1]), float(math.sqrt(cov[1, 1]))


UNRAVELINGS = ("nonlinear", "linear", "unitary")


def _batch_density(sys, cfg, kind, paths, shift):
    if kind == "nonlinear":
        tr = evolve_nonlinear(sys, cfg, paths, shift=shift)
    elif kind == "linear":
        tr = evolve_linear(sys, cfg, paths)
    else:
        tr = evolve_unitary(sys, cfg, paths)
    psi = tr.states[:, -1, :]
    return _mean_outer(psi), psi


def compare_unravelings(sys: ToySystem, cfg: TrajectoryConfig, gammas: Sequence[float] = (0.03, 0.1, 0.3),
                        batches: int = 4, threshold: float = 1.4) -> dict:
    """Trace distance at ``t_final`` between each averaged unraveling and the order-gamma reference.

    Trajectories are split into ``batches`` independently whitened batches
    sharing the seed bank across gammas; the residual uses the batch mean and
    its Monte Carlo error is the spread of batch residuals.  The scaling
    exponent is a weighted log-log fit over gammas; a gamma row is
    inconclusive when the Monte Carlo error exceeds half the residual.
    """
    gammas = [float(g) for g in gammas]
    if cfg.n_traj % batches:
        raise InvalidInput("n_traj must be divisible by batches")
    nb = cfg.n_traj // batches
    rows = []
    for g in gammas:
        cg = replace(cfg, gamma=g)
        ref = master_equation_rho2(sys, cg)
        rho_ref = ref.rho[-1]
        row = {"gamma": g, "reference_min_eigenvalue": ref.min_eigenvalue}
        shift = physical_shift(sys, cg) if (cg.measure == "tilt" and g > 0) else np.zeros((cg.n_cells, sys.n_ops))
        per = {k: [] for k in UNRAVELINGS}
        raw_err = {}
        for b in range(batches):
            paths = sample_noise_paths(sys, cg, batch=b, n=nb)
            for kind in UNRAVELINGS:
                rho, psi = _batch_density(sys, cg, kind, paths, shift)
                per[kind].append((rho, psi))
        for kind in UNRAVELINGS:
            rhos = np.array([r for r, _ in per[kind]])
            mean = rhos.mean(axis=0)
            dists = np.array([trace_distance(r, rho_ref) for r in rhos])
            resid = trace_distance(mean, rho_ref)
            mc = float(dists.std(ddof=1) / math.sqrt(batches)) if batches > 1 else math.nan
            # unwhitened estimate of the same error for reference
            psi_all = np.concatenate([p for _, p in per[kind]])
            outer = np.einsum("na,nb->nab", psi_all, psi_all.conj())
            raw = 0.5 * float(np.sum(np.linalg.svd(outer.std(axis=0), compute_uv=False)) / math.sqrt(len(psi_all)))
            row[kind] = {"distance": resid, "mc_error": mc, "raw_mc_error": raw,
                         "inconclusive": bool(resid > 0 and mc > 0.5 * resid)}
        ul = trace_distance(np.mean([r for r, _ in per["unitary"]], axis=0),
                            np.mean([r for r, _ in per["linear"]], axis=0))
        row["unitary_vs_linear"] = ul
        rows.append(row)
    fits = {}
    for kind in UNRAVELINGS:
        pos = [r for r in rows if r["gamma"] > 0]
        slope, err = _loglog_fit([r["gamma"] for r in pos], [r[kind]["distance"] for r in pos],
                                 [r[kind]["mc_error"] for r in pos])
        prefactor = max((r[kind]["distance"] - r[kind]["mc_error"]) / r["gamma"] ** 1.5 for r in pos) if pos else math.nan
        fits[kind] = {"exponent": slope, "exponent_error": err, "c_three_halves": prefactor,
                      "passed": bool(slope >= threshold) if not math.isnan(slope) else False,
                      "inconclusive": any(r[kind]["inconclusive"] for r in pos)}
    span = max(gammas) / min(g for g in gammas if g > 0) if any(g > 0 for g in gammas) else 0.0
    return {"system": sys.name, "gammas": gammas, "rows": rows, "fits": fits, "decade": span >= 10.0 - 1e-9,
            "threshold": threshold, "passed": all(f["passed"] for f in fits.values()) and span >= 10.0 - 1e-9}
