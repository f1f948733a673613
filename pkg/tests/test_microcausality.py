from dataclasses import replace

import numpy as np
import pytest

from relcollapse.core import InvalidInput, QuadratureConfig, SpacetimePoint as P
from relcollapse.field_kernel import ModeTable, TwoPointContext, box_modes
from relcollapse.fock import build_fock
from relcollapse.microcausality import (COLLAPSE_OPS, CommutatorProbe, CorrelationTable, WightmanTable,
                                        discrete_second_order, fock_mcc_oracle, fock_mcc_value, mcc_second_order,
                                        mcc_sweep, spacelike_verdict, wick_check)
from relcollapse.noise_kernel import KernelSpec, NoiseGrid, invariant_correlation_1d, sample_noise_field

ORIGIN = P(0.0, (0.0,))


def probe(dt, dx, **kw):
    return CommutatorProbe(z2=P(dt, (dx,)), z1=ORIGIN, **kw)


def test_probe_validation():
    with pytest.raises(InvalidInput):
        CommutatorProbe(z2=ORIGIN, z1=P(1.0, (0.0,)))
    with pytest.raises(InvalidInput):
        probe(1.0, 2.0, observable="pi")
    with pytest.raises(InvalidInput):
        probe(1.0, 2.0, collapse_op="cubic")
    with pytest.raises(InvalidInput):
        mcc_second_order(CommutatorProbe(z2=P(1.0, (2.0, 0.0, 0.0)), z1=P(0.0, (0.0, 0.0, 0.0))))


def test_swapped_exchanges_separations():
    p = probe(1.0, 2.0)
    s = p.swapped()
    assert p.interval_class == "spacelike" and s.interval_class == "timelike"
    assert (s.z2.t, s.z2.x) == (2.0, (1.0,))


def test_wightman_table_matches_mode_integral():
    W = WightmanTable(1.0, 20.0, 3.0, 5.0)
    ctx = TwoPointContext(1.0, 1, cfg=QuadratureConfig(cutoff=20.0, regulator="gaussian"), vacuum_half=True)
    tab = ModeTable(ctx, 400)
    t = np.array([0.0, 0.4, 1.3, 2.7, 0.5])
    x = np.array([0.7, 0.1, 2.2, 1.0, 4.5])
    N, D = tab.evaluate(t, x)
    np.testing.assert_allclose(W(t, x), N - 0.5j * D, atol=2e-4)
    # reflection symmetries
    assert W(-0.4, 0.1) == pytest.approx(np.conj(W(0.4, 0.1)))
    assert W(0.4, -0.1) == pytest.approx(W(0.4, 0.1))
    with pytest.raises(InvalidInput):
        W(10.0, 0.0)


def test_correlation_table_tracks_series():
    c = CorrelationTable(1.5)
    s = np.array([-20.0, -3.0, -0.01, 0.02, 0.5, 4.0, 30.0])
    ref, _ = invariant_correlation_1d(1.5, s)
    np.testing.assert_allclose(c(s), ref, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("obs,modes_idx,cut", [("phi", [-1, 0, 1], 6), ("phi_squared", [0, 1], 8)])
@pytest.mark.parametrize("op", COLLAPSE_OPS)
@pytest.mark.parametrize("ordered", [True, False])
def test_c_number_reduction_matches_fock_matrices(obs, modes_idx, cut, op, ordered):
    noise = sample_noise_field(KernelSpec("quartic", beta=1.5), NoiseGrid((6, 5), (0.2, 0.3)), seed=3)
    modes = box_modes(modes_idx, 4.0)
    rep = build_fock(modes, cut)
    p = CommutatorProbe(z2=P(1.0, (0.3,)), z1=P(0.0, (0.5,)), observable=obs, collapse_op=op,
                        time_ordering=ordered)
    a = fock_mcc_value(p, rep, noise)
    b = discrete_second_order(p, modes, noise)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1e-3)
    # normal ordering only removes a constant
    c = fock_mcc_value(replace(p, normal_order=True), rep, noise)
    assert abs(abs(c) - abs(a)) <= 1e-12 * max(abs(a), 1e-3)
    assert fock_mcc_oracle(p, rep, [noise, noise]) == pytest.approx(abs(a), rel=1e-12)


def test_equal_times_give_zero():
    assert mcc_second_order(probe(0.0, 1.0)).magnitude == 0.0


@pytest.fixture(scope="module")
def verdict():
    return spacelike_verdict(probe(1.0, 2.0))


def test_local_ordered_spacelike_probe_passes(verdict):
    passed, res, ref = verdict
    assert passed
    assert res.magnitude < 1e-3 * ref.magnitude
    assert res.interval_class == "spacelike" and ref.interval_class == "timelike"


def test_spacelike_magnitude_decays_with_regulator():
    mags = [mcc_second_order(probe(1.0, 2.0, cfg=QuadratureConfig(cutoff=L, nodes=12))).magnitude
            for L in (5.0, 10.0)]
    assert mags[1] < 1e-2 * mags[0]


@pytest.mark.parametrize("kw", [dict(collapse_op="nonlocal_pm"), dict(time_ordering=False)])
def test_toggles_violate(kw):
    passed, res, ref = spacelike_verdict(probe(1.0, 2.0, **kw))
    assert not passed


def test_normal_ordering_leaves_phi_squared_unchanged():
    a = mcc_second_order(probe(1.0, 2.0, observable="phi_squared"))
    b = mcc_second_order(probe(1.0, 2.0, observable="phi_squared", normal_order=True))
    assert a.magnitude == b.magnitude


def test_sweep_is_thread_independent():
    base = probe(1.0, 0.0, cfg=QuadratureConfig(cutoff=20.0, nodes=8))
    grid = [(0.5, 1.5), (0.5, 0.2), (0.0, 1.0)]
    one = mcc_sweep(base, grid, threads=1)
    many = mcc_sweep(base, grid, threads=3)
    assert one == many
    assert [r[2] for r in one] == ["spacelike", "timelike", "spacelike"]
    assert one[0][6] is True and one[1][6] is None


def test_wick_identity_on_protected_sector():
    rep = build_fock(box_modes([0, 1], 4.0), 7)
    pts = [((0.3, 0.1), (0.3, 0.1)), ((0.1, 0.5), (0.1, 0.5)), ((0.7, -0.2), (0.7, -0.2))]
    for n in (1, 2, 3):
        r = wick_check(rep, pts[:n])
        assert r.protected_deviation < 1e-8
    r3 = wick_check(rep, pts)
    assert r3.n_fields == 6 and r3.n_matchings == 76
    assert r3.truncation_only


def test_wick_check_validation():
    rep = build_fock(box_modes([0], 4.0), 2)
    with pytest.raises(InvalidInput):
        wick_check(rep, [((0.3, 0.1), (0.3, 0.1)), ((0.1, 0.5), (0.1, 0.5))])
    with pytest.raises(InvalidInput):
        wick_check(rep, [])
