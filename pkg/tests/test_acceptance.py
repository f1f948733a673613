"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are pinned in the ``TOL`` table below.  Lines are collected by
``conftest.pytest_terminal_summary`` so they appear at the end of every run.
"""
import math

import numpy as np
import pytest

from relcollapse.cli import main
from relcollapse.core import OccupancySpec, QuadratureConfig, SpacetimePoint as P, occupancy_normalize, zero_occupancy
from relcollapse.energy_rate import (cutoff_convergence, rate_momentum_space, rate_nr_limit, rate_position_space,
                                     rate_rel_limit, white_noise_divergence_scan)
from relcollapse.field_kernel import ModeTable, TwoPointContext, dtau_pauli_jordan_origin, box_modes, pauli_jordan
from relcollapse.fock import build_fock
from relcollapse.microcausality import CommutatorProbe, mcc_second_order, spacelike_verdict, wick_check
from relcollapse.noise_kernel import KernelSpec, correlation_table, ridge_offset, spectral_eval
from relcollapse.unraveling import (TrajectoryConfig, compare_unravelings, dephasing_coherence_closed_form,
                                    dephasing_coherence_extrapolated, preset)

TOL = {
    "kernel_identity": 4e-16,         # relative, per unit of s^2/beta^4 (exp's condition number), + 1 ulp
    "meijer": 1e-4,                   # relative, transform vs Meijer-G series
    "meijer_floor": 1e-6,             # checked points have |G| >= floor * peak
    "equal_time_D": 1e-10,            # absolute, D(0, x)
    "delta_exp_d1": 0.05,             # relative error of fitted exponent 1
    "delta_exp_d3": 0.03,             # relative error of fitted exponent 3
    "white_exp_d1": 0.05,             # absolute on exponent 1
    "white_exp_d3": 0.1,              # absolute on exponent 3
    "white_prefactor": 0.02,          # relative, prefactor ratio vs 2
    "cutoff_doubling": 0.01,          # relative rate change beyond Lambda*
    "nr_limit": 0.05,
    "rel_limit": 0.10,
    "n_doubling": 0.01,
    "transform_sigma": 3.0,           # combined error bars (+1e-12 relative)
    "mcc_ratio": 1e-3,
    "phi2_normal_order": 1e-12,       # relative difference of magnitudes
    "wick": 1e-8,
    "unravel_exponent": 1.4,
    "dephasing": 1e-8,
}

LINES = []


def report(tag, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def _shell(q0, cfg, dims=3, n=1.0):
    return occupancy_normalize(OccupancySpec("shell", q0=q0, width=q0 / 2, dims=dims, n_particles=n), cfg)


def _fit(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def test_c01_kernel_identity():
    beta = 1.3
    k = KernelSpec("quartic", beta=beta)
    s = np.linspace(-6.0, 6.0, 100)
    v = spectral_eval(k, s)
    ref = np.exp(-s ** 2 / beta ** 4)
    # exp amplifies a rounding of its argument by |argument|, so the error is scaled by 1 + s^2/beta^4
    err = float(np.max(np.abs(v - ref) / ref / (1.0 + s ** 2 / beta ** 4)))
    even = bool(np.array_equal(v, spectral_eval(k, -s)))
    report("C1 kernel identity", err <= TOL["kernel_identity"] and even and (s < 0).any(),
           f"100 s in [-6,6], max scaled rel err {err:.2e} (tol {TOL['kernel_identity']:g}), even exactly: {even}")


def test_c02_meijer_crosscheck():
    ts = np.linspace(0.2, 1.8, 9)
    xs = [0.0, 0.3, 0.7, 1.1, 1.5, 1.9, 2.3, 2.7, 3.1]
    rows = correlation_table(KernelSpec("quartic", beta=1.5), ts, xs, QuadratureConfig(nodes=24))
    peak = max(abs(r[4]) for r in rows)
    checked = [r for r in rows if abs(r[4]) >= TOL["meijer_floor"] * peak]
    worst = max(abs(r[2] - r[4]) / abs(r[4]) for r in checked)
    cell = 0.05
    fine = np.arange(0.0, 6.0 + cell / 2, cell)
    offsets = [ridge_offset(1.5, t, fine) for t in (1.0, 2.0, 3.0)]
    ok = worst <= TOL["meijer"] and max(offsets) <= cell
    report("C2 Meijer-G cross-check", ok,
           f"{len(checked)}/81 points checked, max rel diff {worst:.2e} (tol {TOL['meijer']:g}); "
           f"ridge offsets {[round(float(o), 3) for o in offsets]} (cell {cell})")


def test_c03_equal_time_structure():
    rng = np.random.default_rng(3)
    worst = 0.0
    for dims in (1, 3):
        ctx = TwoPointContext(1.0, dims, cfg=QuadratureConfig(cutoff=30.0))
        table = ModeTable(ctx, 16)
        for x in rng.uniform(-10.0, 10.0, 10):
            worst = max(worst, abs(pauli_jordan(ctx, P(0.0, (x,) + (0.0,) * (dims - 1))).value))
            _, D = table.evaluate([0.0], [abs(x)])
            worst = max(worst, abs(float(D[0])))
    cutoffs = [10.0, 20.0, 40.0, 80.0, 160.0]
    exps = {d: _fit(cutoffs, [dtau_pauli_jordan_origin(TwoPointContext(1.0, d, cfg=QuadratureConfig(cutoff=L)))
                              for L in cutoffs]) for d in (1, 3)}
    ok = (worst <= TOL["equal_time_D"] and abs(exps[1] - 1) <= TOL["delta_exp_d1"]
          and abs(exps[3] - 3) / 3 <= TOL["delta_exp_d3"])
    report("C3 equal-time structure", ok,
           f"max |D(0,x)| over 20 x = {worst:.1e}; delta exponents d=1 {exps[1]:.5f}, d=3 {exps[3]:.5f}")


def test_c04_white_noise_divergence():
    cfg = QuadratureConfig(cutoff=50.0)
    out, ok = [], True
    for dims, target, tol in ((1, 1.0, TOL["white_exp_d1"]), (3, 3.0, TOL["white_exp_d3"])):
        pref = []
        for n in (1.0, 2.0):
            occ = occupancy_normalize(OccupancySpec("thermal", temperature=1.0, dims=dims, n_particles=n), cfg)
            s = white_noise_divergence_scan(None, TwoPointContext(1.0, dims, occ, cfg), [10, 20, 40, 80, 160])
            pref.append(s.prefactor)
            ok &= (not s.flagged) and abs(s.exponent - target) <= tol
        ratio = pref[1] / pref[0]
        ok &= abs(ratio / 2 - 1) <= TOL["white_prefactor"]
        out.append(f"d={dims} exponent {s.exponent:.4f} prefactor ratio {ratio:.6f}")
    report("C4 white-noise divergence", ok, "; ".join(out))


def test_c05_finite_rate():
    k = KernelSpec("quartic", beta=1.0, dims=3)
    cfg = QuadratureConfig(cutoff=50.0)
    lam, rows = cutoff_convergence(None, k, _shell(1.0, cfg), cfg, start=2.0)
    i = [r[0] for r in rows].index(lam)
    change = rows[i + 1][3]
    zero = rate_momentum_space(None, k, zero_occupancy(3), cfg).value
    ok = math.isfinite(lam) and change < TOL["cutoff_doubling"] and zero == 0.0
    report("C5 finite non-Markovian rate", ok,
           f"Lambda* = {lam:g}, change under doubling {change:.2e}; zero-occupancy rate {zero!r}")


def test_c06_limit_consistency():
    k = KernelSpec("quartic", beta=10.0, dims=3)
    cfg = QuadratureConfig(cutoff=50.0)
    nr = []
    for q0 in (0.2, 0.1, 0.05):
        occ = _shell(q0, cfg)
        nr.append(abs(rate_nr_limit(None, k, occ, cfg, threshold=0.5).value /
                      rate_momentum_space(None, k, occ, cfg).value - 1))
    rcfg = QuadratureConfig(cutoff=40000.0)
    rel = []
    for q0 in (5.0, 10.0, 20.0):
        occ = _shell(q0, rcfg)
        rel.append(abs(rate_rel_limit(None, k, occ, rcfg).value / rate_momentum_space(None, k, occ, rcfg).value - 1))
    mono = all(a > b for a, b in zip(nr, nr[1:])) and all(a > b for a, b in zip(rel, rel[1:]))
    ok = nr[-1] <= TOL["nr_limit"] and rel[-1] <= TOL["rel_limit"] and mono
    report("C6 limit consistency", ok,
           f"NR errors q0=0.2,0.1,0.05: {', '.join(f'{e:.2%}' for e in nr)}; "
           f"rel errors q0=5,10,20: {', '.join(f'{e:.2%}' for e in rel)}; monotone {mono}")


def test_c07_particle_number():
    k = KernelSpec("quartic", beta=10.0, dims=3)
    cfg = QuadratureConfig(cutoff=50.0)
    r1 = rate_momentum_space(None, k, _shell(0.05, cfg, n=1.0), cfg).value
    r2 = rate_momentum_space(None, k, _shell(0.05, cfg, n=2.0), cfg).value
    ratio = r2 / r1
    report("C7 N-proportionality", abs(ratio / 2 - 1) <= TOL["n_doubling"], f"rate ratio under N doubling {ratio:.12f}")


def test_c08_transform_pair():
    cfg = QuadratureConfig(cutoff=40.0)
    out, ok = [], True
    for beta, spec in ((1.5, OccupancySpec("shell", q0=0.6, width=0.3, dims=1)),
                       (1.0, OccupancySpec("thermal", temperature=0.5, dims=1))):
        occ = occupancy_normalize(spec, cfg)
        k = KernelSpec("quartic", beta=beta)
        a = rate_position_space(None, k, TwoPointContext(1.0, 1, occ, cfg))
        b = rate_momentum_space(None, k, occ, cfg)
        bound = TOL["transform_sigma"] * (a.stderr + b.stderr) + 1e-12 * abs(b.value)
        ok &= abs(a.value - b.value) <= bound
        out.append(f"{spec.variant} beta={beta}: {a.value:.9g} vs {b.value:.9g} (|diff| {abs(a.value - b.value):.1e})")
    report("C8 transform-pair consistency", ok, "; ".join(out))


def test_c09_mcc_suite():
    def probe(**kw):
        return CommutatorProbe(z2=P(1.0, (2.0,)), z1=P(0.0, (0.0,)), **kw)

    passed, res, ref = spacelike_verdict(probe())
    refine = [mcc_second_order(probe(cfg=QuadratureConfig(cutoff=L, nodes=12))).magnitude for L in (5.0, 10.0, 20.0)]
    decreasing = all(a > b for a, b in zip(refine, refine[1:]))
    toggles = {}
    for name, kw in (("nonlocal", dict(collapse_op="nonlocal_pm")), ("unordered", dict(time_ordering=False))):
        toggles[name] = not spacelike_verdict(probe(**kw))[0]
    a = mcc_second_order(probe(observable="phi_squared")).magnitude
    b = mcc_second_order(probe(observable="phi_squared", normal_order=True)).magnitude
    no_diff = abs(a - b) <= TOL["phi2_normal_order"] * max(a, b, 1e-300)
    ok = passed and res.magnitude < TOL["mcc_ratio"] * ref.magnitude and decreasing and all(toggles.values()) \
        and no_diff
    report("C9 MCC suite", ok,
           f"spacelike {res.magnitude:.1e} vs timelike {ref.magnitude:.3g}; refinement "
           f"{', '.join(f'{m:.1e}' for m in refine)}; toggles violate {toggles}; phi^2 normal-order equal {no_diff}")


def test_c10_wick_check():
    rep = build_fock(box_modes([0, 1], 4.0), 7)
    pts = [((0.3, 0.1), (0.3, 0.1)), ((0.1, 0.5), (0.1, 0.5)), ((0.7, -0.2), (0.7, -0.2))]
    devs = [wick_check(rep, pts[:n]).protected_deviation for n in (1, 2, 3)]
    report("C10 Wick check", max(devs) <= TOL["wick"],
           f"protected-sector deviations for 1,2,3 factors: {', '.join(f'{d:.1e}' for d in devs)}")


def test_c11_unraveling_equivalence():
    out, ok = [], True
    for name in ("qubit", "qutrit"):
        rep = compare_unravelings(preset(name), TrajectoryConfig(n_traj=512), batches=4,
                                  threshold=TOL["unravel_exponent"])
        ok &= bool(rep["passed"]) and rep["decade"]
        out.append(f"{name} exponents " + "/".join(f"{f['exponent']:.2f}" for f in rep["fits"].values()))
    worst = 0.0
    for gamma, tau in ((0.05, 0.5), (0.2, 1.0), (0.4, 0.3), (0.4, 0.1)):
        v, _ = dephasing_coherence_extrapolated(gamma, 1.0, tau)
        worst = max(worst, abs(v - dephasing_coherence_closed_form(gamma, 1.0, tau)))
    ok &= worst <= TOL["dephasing"]
    report("C11 unraveling equivalence", ok, "; ".join(out) + f"; dephasing closed-form error {worst:.1e}")


@pytest.mark.parametrize("argv", [
    ["kernel", "eval", "--config", "preset:kernel_identity"],
    ["rate", "white-scan", "--config", "preset:white_scan_d1"],
    ["rate", "momentum", "--config", "preset:nr_double_n"],
    ["mcc", "sweep", "--dts", "0.5", "--dxs", "1.5,0.2", "--nodes", "8"],
    ["unravel", "compare", "--config", "preset:unravel_qubit", "--n-traj", "128"],
])
def test_c12_reproducibility(tmp_path, argv):
    texts = []
    for i, threads in enumerate((1, 4, 1)):
        out = tmp_path / f"run{i}"
        code = main(argv + ["--threads", str(threads), "-o", str(out)])
        texts.append((code, out.read_bytes()))
    same = texts[0] == texts[1] == texts[2]
    replay = main(["replay", str(tmp_path / "run0"), "--threads", "2"]) == 0
    report(f"C12 reproducibility ({' '.join(argv[:2])})", same and replay,
           f"threads 1/4/1 byte-identical {same}, replay identical {replay}")
