import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcollapse import _kernels as K
from relcollapse.core import InvalidInput, OccupancySpec, QuadratureConfig, SpacetimePoint, occupancy_normalize
from relcollapse.field_kernel import (ModeTable, TwoPointContext, box_modes, discrete_kernels,
                                      dtau_pauli_jordan_origin, kernel_table, pauli_jordan,
                                      pauli_jordan_closed_form_1d, symmetric_two_point,
                                      vacuum_symmetric_closed_form_1d, vacuum_symmetric_origin_1d)
from relcollapse.fock import build_fock, expectation, fock_commutator, protected_deviation

SMOOTH = QuadratureConfig(cutoff=200.0, regulator="gaussian", rel_tol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(-20, 20), st.sampled_from([1, 3]))
def test_commutator_vanishes_at_equal_time(x, dims):
    ctx = TwoPointContext(1.0, dims, cfg=QuadratureConfig(cutoff=30.0))
    p = SpacetimePoint(0.0, (x,) + (0.0,) * (dims - 1))
    assert pauli_jordan(ctx, p).value == 0.0
    _, D = ModeTable(ctx, 32).evaluate([0.0], [abs(x)])
    assert D[0] == 0.0


@pytest.mark.parametrize("t,x", [(2.0, 0.5), (1.0, 0.2), (-1.5, 0.3), (0.5, 2.0), (0.2, -3.0)])
def test_commutator_matches_continuum_1d(t, x):
    ctx = TwoPointContext(1.0, 1, cfg=SMOOTH)
    assert pauli_jordan(ctx, SpacetimePoint(t, (x,))).value == pytest.approx(
        pauli_jordan_closed_form_1d(1.0, t, x), abs=2e-5)


@pytest.mark.parametrize("t,x", [(0.0, 1.0), (0.3, 1.5), (2.0, 0.5)])
def test_vacuum_symmetric_matches_continuum_1d(t, x):
    ctx = TwoPointContext(1.0, 1, cfg=SMOOTH, vacuum_half=True)
    assert symmetric_two_point(ctx, SpacetimePoint(t, (x,))).value == pytest.approx(
        vacuum_symmetric_closed_form_1d(1.0, t, x), abs=2e-5)


def test_vacuum_symmetric_origin_sharp_cutoff():
    ctx = TwoPointContext(1.0, 1, cfg=QuadratureConfig(cutoff=30.0), vacuum_half=True)
    assert symmetric_two_point(ctx, SpacetimePoint(0.0, (0.0,))).value == pytest.approx(
        vacuum_symmetric_origin_1d(1.0, 30.0), rel=1e-10)


def test_normal_ordered_vacuum_is_zero():
    ctx = TwoPointContext(1.0, 3, cfg=QuadratureConfig(cutoff=30.0))
    assert symmetric_two_point(ctx, SpacetimePoint(0.4, (0.1, 0.0, 0.0))).value == 0.0


@pytest.mark.parametrize("dims,expected", [(1, lambda L: L / math.pi), (3, lambda L: L ** 3 / (6 * math.pi ** 2))])
def test_regulated_delta_at_origin(dims, expected):
    for L in (10.0, 40.0):
        ctx = TwoPointContext(1.0, dims, cfg=QuadratureConfig(cutoff=L))
        assert dtau_pauli_jordan_origin(ctx) == pytest.approx(expected(L), rel=1e-12)


def test_occupied_symmetric_function_grows_with_occupancy():
    cfg = QuadratureConfig(cutoff=30.0)
    occ = occupancy_normalize(OccupancySpec("shell", q0=1.0, width=0.5, dims=1, n_particles=1.0), cfg)
    occ2 = occupancy_normalize(OccupancySpec("shell", q0=1.0, width=0.5, dims=1, n_particles=2.0), cfg)
    p = SpacetimePoint(0.0, (0.0,))
    n1 = symmetric_two_point(TwoPointContext(1.0, 1, occ, cfg), p).value
    n2 = symmetric_two_point(TwoPointContext(1.0, 1, occ2, cfg), p).value
    assert n1 > 0
    assert n2 == pytest.approx(2 * n1, rel=1e-10)


def test_context_validation():
    with pytest.raises(InvalidInput):
        TwoPointContext(0.0, 1)
    with pytest.raises(InvalidInput):
        TwoPointContext(1.0, 2)
    with pytest.raises(InvalidInput):
        TwoPointContext(1.0, 1, occupancy=OccupancySpec("shell", q0=1.0, width=0.5, dims=3))
    with pytest.raises(InvalidInput):
        pauli_jordan(TwoPointContext(1.0, 1), SpacetimePoint(1.0, (0.0, 0.0, 0.0)))


def test_mode_sum_backends_agree(rng):
    ctx = TwoPointContext(1.0, 3, cfg=QuadratureConfig(cutoff=20.0), vacuum_half=True)
    tab = ModeTable(ctx, 40)
    t = rng.uniform(-3, 3, 50)
    y = rng.uniform(0, 3, 50)
    y[0] = 0.0
    nb, npy = K.IMPLEMENTATIONS["mode_sums"]
    a = nb(t, y, tab.q, tab.om, tab.wc, tab.ws, True)
    b = npy(t, y, tab.q, tab.om, tab.wc, tab.ws, True)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-11, atol=1e-12)


def test_kernel_table_rows():
    ctx = TwoPointContext(1.0, 1, cfg=QuadratureConfig(cutoff=20.0), vacuum_half=True)
    rows = kernel_table(ctx, [SpacetimePoint(0.5, (0.2,)), SpacetimePoint(0.0, (1.0,))])
    assert len(rows) == 2 and rows[1][4] == 0.0


# -- discrete modes against the Fock matrices ------------------------------
def _rep():
    modes = box_modes([-1, 0, 1], 6.0, occupation=(0, 1, 0))
    return modes, build_fock(modes, 3)


def test_wightman_function_in_fock_state():
    modes, rep = _rep()
    v = rep.state((0, 1, 0))
    A = rep.phi(0.7, [0.4])
    B = rep.phi(0.0, [0.0])
    N, D = discrete_kernels(modes, 0.7, [0.4])
    assert expectation(A @ B, v) == pytest.approx(complex(N, -0.5 * D), abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_field_commutator_is_c_number(t, x):
    modes, rep = _rep()
    _, D = discrete_kernels(modes, t, [x])
    C = fock_commutator(rep, rep.phi(t, [x]), rep.phi(0.0, [0.0]))
    assert protected_deviation(rep, C + 1j * D * rep.identity(), 2) < 1e-13
