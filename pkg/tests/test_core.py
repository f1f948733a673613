import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcollapse.core import (ConvergenceError, InvalidInput, ModelParams, NormalizationError, OccupancySpec,
                              QuadratureConfig, SpacetimePoint, causal_classify, derive_rng, gl_integrate,
                              interval, occupancy_eval, occupancy_integral, occupancy_normalize, zero_occupancy)


@pytest.mark.parametrize("kw", [dict(mass=0), dict(beta=-1), dict(vol=0), dict(gamma=-0.1),
                                dict(alpha=float("nan"))])
def test_model_params_rejects_bad_values(kw):
    with pytest.raises(InvalidInput):
        ModelParams(**kw)


def test_rate_scale():
    assert ModelParams(gamma=2.0, alpha=3.0, vol=0.5).rate_scale == pytest.approx(9.0)


def test_point_dims_and_difference():
    a = SpacetimePoint(2.0, (1.0, 2.0, 3.0))
    b = SpacetimePoint(0.5, (1.0, 0.0, -1.0))
    d = a - b
    assert d.t == 1.5 and d.x == (0.0, 2.0, 4.0)
    assert d.r == pytest.approx(math.sqrt(20.0))
    with pytest.raises(InvalidInput):
        SpacetimePoint(0.0, (1.0, 2.0))
    with pytest.raises(InvalidInput):
        interval(a, SpacetimePoint(0.0, (0.0,)))


@pytest.mark.parametrize("z2,z1,cls", [
    (SpacetimePoint(2.0, (1.0,)), SpacetimePoint(0.0, (0.0,)), "timelike"),
    (SpacetimePoint(1.0, (2.0,)), SpacetimePoint(0.0, (0.0,)), "spacelike"),
    (SpacetimePoint(1.0, (1.0,)), SpacetimePoint(0.0, (0.0,)), "lightlike"),
    (SpacetimePoint(1e-9, (1e-9,)), SpacetimePoint(0.0, (0.0,)), "lightlike"),
    (SpacetimePoint(2e-9, (1e-9,)), SpacetimePoint(0.0, (0.0,)), "timelike"),
])
def test_causal_classify(z2, z1, cls):
    assert causal_classify(z2, z1) == cls


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5))
def test_interval_is_boost_invariant(t, x, y, rapidity):
    z = SpacetimePoint(t, (x, y, 0.0))
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    zb = SpacetimePoint(ch * t - sh * x, (ch * x - sh * t, y, 0.0))
    o = SpacetimePoint(0.0, (0.0, 0.0, 0.0))
    s = interval(z, o)
    assert interval(zb, o) == pytest.approx(s, abs=1e-9 * (t * t + x * x + y * y) * math.cosh(2 * rapidity) + 1e-9)


def test_quadrature_config_validation():
    with pytest.raises(InvalidInput):
        QuadratureConfig(cutoff=0)
    with pytest.raises(InvalidInput):
        QuadratureConfig(regulator="box")
    with pytest.raises(InvalidInput):
        QuadratureConfig(seed=-1)
    cfg = QuadratureConfig(cutoff=10, regulator="gaussian")
    assert cfg.regulator_factor(10.0) == pytest.approx(math.exp(-1))
    assert cfg.with_cutoff(20).cutoff == 20


def test_derive_rng_depends_only_on_seed_and_index():
    a = derive_rng(7, 3, 1).standard_normal(5)
    b = derive_rng(7, 3, 1).standard_normal(5)
    c = derive_rng(7, 3, 2).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_gl_integrate_polynomial_and_failure():
    val, err = gl_integrate(lambda x: x ** 3 - x, 0.0, 2.0)
    assert val == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ConvergenceError):
        gl_integrate(lambda x: np.sign(x - 0.3141) * np.sin(1e4 * x), 0.0, 1.0, npanels=1, n=4, max_doublings=2)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.05, 0.9), st.floats(0.1, 100.0), st.sampled_from([1, 3]))
def test_shell_normalisation_hits_target(q0, wfrac, n, dims):
    cfg = QuadratureConfig(cutoff=50.0)
    spec = OccupancySpec("shell", q0=q0, width=wfrac * q0, n_particles=n, vol=2.0, dims=dims)
    norm = occupancy_normalize(spec, cfg)
    val, _ = occupancy_integral(norm, cfg)
    assert val == pytest.approx(norm.target_integral, rel=1e-9)


def test_thermal_normalisation_and_zero():
    cfg = QuadratureConfig(cutoff=40.0)
    spec = occupancy_normalize(OccupancySpec("thermal", temperature=2.0, n_particles=3.0), cfg)
    assert occupancy_integral(spec, cfg)[0] == pytest.approx(spec.target_integral, rel=1e-9)
    z = zero_occupancy(3)
    assert z.is_zero()
    assert occupancy_integral(z, cfg) == (0.0, 0.0)


def test_default_norm_constant_is_three_halves_power():
    spec = OccupancySpec("shell", q0=1.0, width=0.5, n_particles=2.0, vol=4.0)
    assert spec.target_integral == pytest.approx((2 * math.pi) ** 1.5 * 0.5)
    alt = OccupancySpec("shell", q0=1.0, width=0.5, n_particles=2.0, vol=4.0, norm_constant=(2 * math.pi) ** 3)
    assert alt.target_integral == pytest.approx((2 * math.pi) ** 3 * 0.5)


def test_occupancy_errors():
    with pytest.raises(InvalidInput):
        OccupancySpec("shell", q0=1.0, width=0.0)
    with pytest.raises(InvalidInput):
        OccupancySpec("thermal")
    with pytest.raises(InvalidInput):
        occupancy_eval(OccupancySpec("shell", q0=1.0, width=0.5), -1.0)
    # shell entirely beyond the cutoff cannot be normalised
    with pytest.raises(NormalizationError):
        occupancy_normalize(OccupancySpec("shell", q0=100.0, width=1.0), QuadratureConfig(cutoff=10.0))


def test_tabulated_occupancy_interpolates():
    spec = OccupancySpec("tabulated", table_q=(0.0, 1.0, 2.0), table_n=(0.0, 2.0, 0.0), dims=1)
    assert spec(0.5) == pytest.approx(1.0)
    assert spec(3.0) == 0.0
