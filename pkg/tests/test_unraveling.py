import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcollapse.core import ConvergenceError, InvalidInput
from relcollapse.unraveling import (ExponentialCorrelation, ToySystem, TrajectoryConfig, ZeroCorrelation,
                                    compare_unravelings, covariance_matrix, dephasing_coherence_closed_form,
                                    dephasing_coherence_extrapolated, dephasing_preset, evolve_linear,
                                    evolve_nonlinear, evolve_unitary, master_equation_rho2, preset,
                                    sample_noise_paths, trace_distance)

SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
PLUS = np.array([1.0, 1.0]) / math.sqrt(2)


def small_cfg(**kw):
    base = dict(dt=0.125, t_final=1.0, n_traj=64, gamma=0.1)
    base.update(kw)
    return TrajectoryConfig(**base)


@pytest.mark.parametrize("kw,msg", [
    (dict(h0=np.array([[0, 1], [0, 0]])), "Hermitian"),
    (dict(ops=[SZ, SX]), "commute"),
    (dict(psi0=np.array([1.0, 1.0])), "normalised"),
    (dict(psi0=np.array([1.0, 0.0, 0.0])), "dimension"),
    (dict(ops=[]), "at least one"),
])
def test_toy_system_validation(kw, msg):
    h0 = kw.get("h0", SX)
    ops = kw.get("ops", [SZ])
    psi0 = kw.get("psi0", PLUS)
    with pytest.raises(InvalidInput, match=msg):
        ToySystem(h0, ops, ExponentialCorrelation(((1.0,),), 0.5), psi0)


def test_trajectory_config_validation():
    with pytest.raises(InvalidInput):
        TrajectoryConfig(n_traj=3)
    with pytest.raises(InvalidInput):
        TrajectoryConfig(dt=0.3, t_final=1.0)
    with pytest.raises(InvalidInput):
        TrajectoryConfig(scheme="euler")
    with pytest.raises(InvalidInput):
        preset("ququart")
    assert TrajectoryConfig(dt=0.25).n_cells == 4


def test_covariance_is_symmetric_and_indefinite_kernel_is_refused():
    sys_ = preset("qutrit")
    C = covariance_matrix(sys_, small_cfg())
    assert np.allclose(C, C.T)
    bad = ToySystem(SX, [SZ], ExponentialCorrelation(((-1.0,),), 0.5), PLUS)
    with pytest.raises(InvalidInput, match="smallest eigenvalue"):
        sample_noise_paths(bad, small_cfg())


def test_whitened_antithetic_paths_match_covariance_exactly():
    sys_ = preset("qutrit")
    cfg = small_cfg(n_traj=256)
    p = sample_noise_paths(sys_, cfg)
    X = p.values.reshape(cfg.n_traj, -1)
    assert p.whitened and not p.clipped
    np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-13)
    np.testing.assert_allclose(X.T @ X / cfg.n_traj, p.covariance, atol=1e-12)


def test_paths_are_reproducible_and_batches_differ():
    sys_ = preset("qubit")
    cfg = small_cfg()
    a = sample_noise_paths(sys_, cfg).values
    b = sample_noise_paths(sys_, cfg).values
    c = sample_noise_paths(sys_, cfg, batch=1).values
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


@pytest.mark.parametrize("name", ["qubit", "qutrit"])
def test_zero_coupling_is_free_evolution(name):
    sys_ = preset(name)
    cfg = small_cfg(gamma=0.0, n_traj=4)
    paths = sample_noise_paths(sys_, cfg)
    free = np.exp(-1j * np.outer(cfg.times, sys_.energies)) * sys_.psi0_eig[None, :]
    for fn in (evolve_nonlinear, evolve_linear, evolve_unitary):
        tr = fn(sys_, cfg, paths)
        np.testing.assert_allclose(tr.states, np.broadcast_to(free, tr.states.shape), atol=1e-12)
        assert tr.norm_drift <= 1e-12


def test_zero_correlation_kernel():
    sys_ = ToySystem(SX, [SZ], ZeroCorrelation(1), PLUS)
    cfg = small_cfg(n_traj=4)
    tr = evolve_nonlinear(sys_, cfg, sample_noise_paths(sys_, cfg))
    assert tr.norm_drift <= 1e-10  # only the step integrator's round-off


def test_norms():
    sys_ = preset("qutrit")
    cfg = small_cfg(gamma=0.3)
    paths = sample_noise_paths(sys_, cfg)
    assert evolve_unitary(sys_, cfg, paths).norm_drift < 1e-12
    assert evolve_nonlinear(sys_, cfg, paths).norm_drift <= cfg.norm_tol


def test_nonlinear_norm_contract_raises():
    sys_ = preset("qubit")
    cfg = small_cfg(gamma=0.3, norm_tol=1e-30, substeps=1)
    with pytest.raises(ConvergenceError):
        evolve_nonlinear(sys_, cfg, sample_noise_paths(sys_, cfg))


def test_linear_step_integrator_matches_cell_integrals():
    sys_ = preset("qubit")
    cfg = small_cfg(gamma=0.1, n_traj=8, substeps=16)
    paths = sample_noise_paths(sys_, cfg)
    a = evolve_linear(sys_, cfg, paths).states
    b = evolve_linear(sys_, TrajectoryConfig(**{**cfg.__dict__, "scheme": "perturbative"}), paths).states
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_master_equation_is_hermitian_and_trace_preserving():
    sys_ = preset("qutrit")
    ref = master_equation_rho2(sys_, small_cfg(gamma=0.2))
    for r in ref.rho:
        assert np.trace(r).real == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(r, r.conj().T)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.1, 2.0))
def test_dephasing_master_equation_converges_to_closed_form(gamma, tau):
    value, vals = dephasing_coherence_extrapolated(gamma, 1.0, tau)
    exact = dephasing_coherence_closed_form(gamma, 1.0, tau)
    assert abs(value - exact) < 1e-8
    # the raw values converge monotonically towards it
    errs = [abs(v - exact) for v in vals]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_dephasing_unravelings_in_lab_basis():
    sys_ = dephasing_preset(0.5)
    cfg = TrajectoryConfig(dt=0.0625, t_final=1.0, n_traj=256, gamma=0.05)
    ref = master_equation_rho2(sys_, cfg).lab(sys_)[-1]
    tr = evolve_unitary(sys_, cfg, sample_noise_paths(sys_, cfg))
    psi = tr.lab_states(sys_)[:, -1, :]
    rho = np.einsum("na,nb->ab", psi, psi.conj()) / psi.shape[0]
    assert trace_distance(rho, ref) < 5 * cfg.gamma ** 2


def test_trace_distance_properties(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    a = a @ a.conj().T
    a /= np.trace(a)
    assert trace_distance(a, a) == pytest.approx(0.0, abs=1e-15)
    e0 = np.diag([1.0, 0.0, 0.0])
    e1 = np.diag([0.0, 1.0, 0.0])
    assert trace_distance(e0, e1) == pytest.approx(1.0)


def test_raw_measure_leaves_first_order_residual():
    """Zero-mean noise in the nonlinear equation misses the physical-measure drift."""
    sys_ = preset("qubit")
    cfg = TrajectoryConfig(n_traj=256, measure="raw")
    rep = compare_unravelings(sys_, cfg, batches=4)
    assert rep["fits"]["nonlinear"]["exponent"] < 1.4
    assert rep["fits"]["linear"]["passed"] and rep["fits"]["unitary"]["passed"]


def test_compare_requires_divisible_batches():
    with pytest.raises(InvalidInput):
        compare_unravelings(preset("qubit"), TrajectoryConfig(n_traj=10), batches=4)
