import numpy as np
import pytest
from scipy import sparse

from relcollapse.core import InvalidInput
from relcollapse.field_kernel import box_modes
from relcollapse.fock import build_fock, expectation, fock_commutator, protected_deviation


@pytest.fixture(scope="module")
def rep():
    return build_fock(box_modes([-1, 0, 1], 5.0), 3)


def test_dimension_and_bound():
    assert build_fock(box_modes([0, 1], 5.0), 4).dim == 25
    with pytest.raises(InvalidInput):
        build_fock(box_modes(list(range(-4, 5)), 5.0), 3, max_dim=4096)
    with pytest.raises(InvalidInput):
        build_fock(box_modes([0], 5.0), 0)


def test_canonical_commutator_on_protected_states(rep):
    for j in range(rep.n_modes):
        c = fock_commutator(rep, rep.annihilation(j), rep.creation(j))
        assert protected_deviation(rep, c - rep.identity(), 1) < 1e-14
        if j:
            c2 = fock_commutator(rep, rep.annihilation(0), rep.creation(j))
            assert protected_deviation(rep, c2, 1) < 1e-14


def test_truncation_is_visible_outside_protected_sector(rep):
    c = (fock_commutator(rep, rep.annihilation(0), rep.creation(0)) - rep.identity()).toarray()
    assert np.max(np.abs(c)) > 1.0


def test_field_is_hermitian_and_split(rep):
    f = rep.phi(0.3, [0.2])
    assert abs(f - f.conj().T).max() < 1e-15
    assert abs(rep.phi_plus(0.3, [0.2]) + rep.phi_minus(0.3, [0.2]) - f).max() < 1e-15
    assert np.allclose(rep.phi_plus(0.3, [0.2]) @ rep.vacuum(), 0.0)


def test_heisenberg_equation(rep):
    # i[H, phi] = d phi / dt
    c = fock_commutator(rep, rep.hamiltonian(), rep.phi(0.4, [1.1]))
    assert protected_deviation(rep, 1j * c - rep.pi(0.4, [1.1]), 1) < 1e-13


def test_vacuum_energy_density_is_zero_point(rep):
    e = expectation(rep.energy_density(0.0, [0.0]), rep.vacuum()).real
    m = rep.modes
    expected = np.sum(m.omega) / (2.0 * m.norm)
    assert e == pytest.approx(expected, rel=1e-12)


def test_state_and_operator_lookup(rep):
    v = rep.state((1, 0, 2))
    assert expectation(rep.hamiltonian(), v).real == pytest.approx(rep.modes.omega[0] + 2 * rep.modes.omega[2])
    with pytest.raises(InvalidInput):
        rep.state((9, 0, 0))
    with pytest.raises(InvalidInput):
        rep.operator("psi")
    q = rep.operator("Q", 0.0, [0.0], alpha=2.0)
    f = rep.phi(0.0, [0.0])
    assert abs(q - f @ f).max() < 1e-14
    with pytest.raises(InvalidInput):
        fock_commutator(rep, q, sparse.identity(3))
