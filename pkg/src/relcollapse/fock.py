"""Truncated-Fock matrix representation of a free scalar field on a few modes.

The field on a periodic box of side L is

    phi(t, x) = sum_k (e^{-i(w_k t - k.x)} a_k + h.c.) / sqrt(2 w_k L^d),

split into the annihilation part ``phi_plus`` and the creation part
``phi_minus``.  Each mode keeps occupations ``0..occ_cutoff``, so the
canonical algebra is exact except where a creation operator acts on the top
occupation.  :meth:`FockRep.protected` selects the basis states on which a
product of ``n`` linear factors is untouched by the truncation; identities are
checked on those columns only.

Operators are ``scipy.sparse`` CSR matrices (the dimension may reach a few
thousand).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .core import InvalidInput
from .field_kernel import DiscreteModes

DEFAULT_MAX_DIM = 4096


def _as_x(x, dims):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != dims:
        raise InvalidInput(f"expected a {dims}-component position, got {x.size}")
    return x


@dataclass
class FockRep:
    """Matrices of a truncated bosonic Fock space over ``modes``."""

    modes: DiscreteModes
    occ_cutoff: int
    annihilators: list
    occupations: np.ndarray  # (dim, n_modes) occupation of each basis state

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    @property
    def n_modes(self) -> int:
        return self.occupations.shape[1]

    @property
    def box_length(self) -> float:
        return self.modes.box_length

    def identity(self):
        return sparse.identity(self.dim, dtype=complex, format="csr")

    def annihilation(self, j: int):
        return self.annihilators[j]

    def creation(self, j: int):
        return self.annihilators[j].conj().T.tocsr()

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def state(self, occupation: Sequence[int]) -> np.ndarray:
        """Basis ket with the given per-mode occupations."""
        occ = np.asarray(occupation)
        hit = np.flatnonzero(np.all(self.occupations == occ[None, :], axis=1))
        if hit.size != 1:
            raise InvalidInput(f"occupation {tuple(occ)} not in the truncated space")
        v = np.zeros(self.dim, dtype=complex)
        v[hit[0]] = 1.0
        return v

    def protected(self, n_factors: int) -> np.ndarray:
        """Mask of basis states on which any product of ``n_factors`` linear factors is exact."""
        return np.all(self.occupations <= self.occ_cutoff - n_factors, axis=1)

    # -- field operators ---------------------------------------------------
    def _amps(self, t, x):
        m = self.modes
        x = _as_x(x, m.dims)
        ph = m.omega * t - m.k @ x
        return np.exp(-1j * ph) / np.sqrt(2.0 * m.omega * m.norm)

    def phi_plus(self, t: float, x) -> sparse.csr_matrix:
        """Annihilation (positive-frequency) part of the field at (t, x)."""
        c = self._amps(t, x)
        out = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        for j, cj in enumerate(c):
            out = out + cj * self.annihilators[j]
        return out

    def phi_minus(self, t: float, x) -> sparse.csr_matrix:
        """Creation part of the field at (t, x) (adjoint of :meth:`phi_plus`)."""
        return self.phi_plus(t, x).conj().T.tocsr()

    def phi(self, t: float, x) -> sparse.csr_matrix:
        return (self.phi_plus(t, x) + self.phi_minus(t, x)).tocsr()

    def pi(self, t: float, x) -> sparse.csr_matrix:
        """Conjugate momentum d phi / dt."""
        c = -1j * self.modes.omega * self._amps(t, x)
        out = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        for j, cj in enumerate(c):
            out = out + cj * self.annihilators[j]
        return (out + out.conj().T).tocsr()

    def grad_phi(self, t: float, x, axis: int = 0) -> sparse.csr_matrix:
        c = 1j * self.modes.k[:, axis] * self._amps(t, x)
        out = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        for j, cj in enumerate(c):
            out = out + cj * self.annihilators[j]
        return (out + out.conj().T).tocsr()

    def collapse_operator(self, t: float, x, alpha: float = 1.0) -> sparse.csr_matrix:
        """Local quadratic collapse operator (alpha/2) phi^2."""
        f = self.phi(t, x)
        return (0.5 * alpha * (f @ f)).tocsr()

    def energy_density(self, t: float, x) -> sparse.csr_matrix:
        """(pi^2 + |grad phi|^2 + m^2 phi^2) / 2."""
        p = self.pi(t, x)
        f = self.phi(t, x)
        out = p @ p + self.modes.mass ** 2 * (f @ f)
        for a in range(self.modes.dims):
            g = self.grad_phi(t, x, a)
            out = out + g @ g
        return (0.5 * out).tocsr()

    def hamiltonian(self) -> sparse.csr_matrix:
        """Normal-ordered free Hamiltonian sum_k w_k a_k^dag a_k."""
        diag = self.occupations @ self.modes.omega
        return sparse.diags(diag.astype(complex), format="csr")

    def lattice_delta(self, dx) -> float:
        """Mode-set realisation of the spatial delta function: (1/L^d) sum_k cos(k.dx)."""
        dx = _as_x(dx, self.modes.dims)
        return float(np.sum(np.cos(self.modes.k @ dx)) / self.modes.norm)

    def operator(self, op_id, *args, **kw):
        """Look up an operator by name: phi, phi_plus, phi_minus, pi, Q, H, identity."""
        table = {
            "phi": self.phi, "phi_plus": self.phi_plus, "phi_minus": self.phi_minus,
            "pi": self.pi, "Q": self.collapse_operator, "energy_density": self.energy_density,
            "H": self.hamiltonian, "identity": self.identity,
        }
        if op_id not in table:
            raise InvalidInput(f"unknown operator id {op_id!r}")
        return table[op_id](*args, **kw)


def build_fock(modes: DiscreteModes, occ_cutoff: int, max_dim: int = DEFAULT_MAX_DIM) -> FockRep:
    """Truncated Fock space with occupations ``0..occ_cutoff`` per mode."""
    n = len(modes.momenta)
    if occ_cutoff < 1:
        raise InvalidInput("occ_cutoff must be >= 1")
    dim = (occ_cutoff + 1) ** n
    if dim > max_dim:
        raise InvalidInput(f"truncated dimension {dim} exceeds the bound {max_dim}")
    occ = np.array(list(itertools.product(range(occ_cutoff + 1), repeat=n)), dtype=int).reshape(dim, n)
    # single-mode ladder, embedded by Kronecker products (mode 0 is the slowest index)
    sub = sparse.diags(np.sqrt(np.arange(1, occ_cutoff + 1, dtype=float)), 1, format="csr")
    eye = sparse.identity(occ_cutoff + 1, format="csr")
    ann = []
    for j in range(n):
        mats = [sub if i == j else eye for i in range(n)]
        a = mats[0]
        for mtx in mats[1:]:
            a = sparse.kron(a, mtx, format="csr")
        ann.append(a.astype(complex).tocsr())
    return FockRep(modes=modes, occ_cutoff=int(occ_cutoff), annihilators=ann, occupations=occ)


def _dense(a):
    return a.toarray() if sparse.issparse(a) else np.asarray(a)


def fock_commutator(rep: FockRep, A, B):
    """``AB - BA`` for two operators on ``rep`` (matrices or ``(name, args...)`` tuples)."""
    if isinstance(A, tuple):
        A = rep.operator(*A)
    if isinstance(B, tuple):
        B = rep.operator(*B)
    if A.shape != B.shape or A.shape != (rep.dim, rep.dim):
        raise InvalidInput(f"operator shapes {A.shape} and {B.shape} do not match the representation")
    out = A @ B - B @ A
    return out.tocsr() if sparse.issparse(out) else out


def expectation(op, ket: np.ndarray) -> complex:
    return complex(np.vdot(ket, op @ ket))


def protected_deviation(rep: FockRep, M, n_factors: int) -> float:
    """Max |entry| of ``M`` over columns of protected basis states."""
    cols = np.flatnonzero(rep.protected(n_factors))
    if cols.size == 0:
        raise InvalidInput("no protected states; raise occ_cutoff")
    sub = _dense(M[:, cols]) if sparse.issparse(M) else np.asarray(M)[:, cols]
    return float(np.max(np.abs(sub))) if sub.size else 0.0
