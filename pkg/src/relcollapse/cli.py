"""Command-line interface: ``relcollapse {kernel,rate,mcc,unravel,replay} ...``.

Every output (CSV or JSON) embeds the run configuration and a SHA-256 digest
of (config, payload); ``relcollapse replay FILE`` re-runs the embedded
configuration and checks the result byte-for-byte.

Exit codes: 0 when every requested computation met its tolerance contract,
1 when a numerical contract was violated, 2 on invalid input.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .core import (ArtifactError, ConvergenceError, InvalidInput, ModelParams, OccupancySpec, QuadratureConfig,
                   SpacetimePoint, occupancy_normalize, zero_occupancy)
from .io import load_ini, parse_floats, read_config_echo, render_csv, render_json

log = logging.getLogger("relcollapse")

EXIT_OK, EXIT_CONTRACT, EXIT_INVALID = 0, 1, 2
DEFAULT_SEED = 20240601
# arguments that never influence results and are kept out of the config echo
_NOT_ECHOED = ("output", "threads", "config", "verbose", "handler", "fmt_explicit")


@dataclass
class Outcome:
    """Tabular result of one command plus whether its contract held."""

    columns: List[str]
    rows: List[Sequence]
    summary: Dict = field(default_factory=dict)
    ok: bool = True


# ---------------------------------------------------------------------------
# shared argument groups
# ---------------------------------------------------------------------------
def _floats(text):
    try:
        return parse_floats(text)
    except InvalidInput as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_kernel_args(p, default_beta=None, dims=True):
    p.add_argument("--variant", choices=("quartic", "white", "tabulated"), default="quartic",
                   help="spectral kernel family")
    p.add_argument("--beta", type=float, default=default_beta, help="kernel momentum scale (quartic)")
    p.add_argument("--amplitude", type=float, default=1.0, help="white-kernel amplitude")
    p.add_argument("--table-s", type=_floats, default=None, help="tabulated kernel: invariants s")
    p.add_argument("--table-v", type=_floats, default=None, help="tabulated kernel: values")
    if dims:
        p.add_argument("--dims", type=int, default=1, choices=(1, 3))


def _kernel_from(args, dims: Optional[int] = None):
    from .noise_kernel import KernelSpec

    if args.variant == "quartic" and args.beta is None:
        raise InvalidInput("quartic kernel needs --beta")
    return KernelSpec(variant=args.variant, beta=args.beta, amplitude=args.amplitude,
                      table_s=tuple(args.table_s) if args.table_s else None,
                      table_v=tuple(args.table_v) if args.table_v else None,
                      dims=args.dims if dims is None else dims)


def _add_model_args(p, dims_default=3):
    g = p.add_argument_group("model")
    g.add_argument("--dims", type=int, default=dims_default, choices=(1, 3))
    g.add_argument("--mass", type=float, default=1.0)
    g.add_argument("--gamma", type=float, default=1.0, help="noise coupling (absolute rates only)")
    g.add_argument("--alpha", type=float, default=1.0, help="collapse-operator strength (absolute rates only)")
    g.add_argument("--vol", type=float, default=1.0, help="volume V")
    g.add_argument("--absolute", action="store_true", help="multiply by gamma alpha^2 V")
    o = p.add_argument_group("occupancy")
    o.add_argument("--occupancy", choices=("shell", "thermal", "zero"), default="shell")
    o.add_argument("--q0", type=float, default=1.0, help="shell centre")
    o.add_argument("--width", type=float, default=None, help="shell half-width (default q0/2)")
    o.add_argument("--temperature", type=float, default=1.0)
    o.add_argument("--n-particles", type=float, default=1.0)
    o.add_argument("--norm-constant", type=float, default=None,
                   help="momentum-sum normalisation (default (2 pi)^(3/2))")
    q = p.add_argument_group("quadrature")
    q.add_argument("--cutoff", type=float, default=50.0)
    q.add_argument("--nodes", type=int, default=24)
    q.add_argument("--regulator", choices=("sharp", "gaussian"), default="sharp")
    q.add_argument("--mc-samples", type=int, default=200_000)


def _quad_from(args) -> QuadratureConfig:
    return QuadratureConfig(cutoff=args.cutoff, nodes=args.nodes, regulator=args.regulator,
                            mc_samples=args.mc_samples, seed=args.seed)


def _params_from(args) -> ModelParams:
    beta = getattr(args, "beta", None) or 1.0
    return ModelParams(gamma=args.gamma, alpha=args.alpha, beta=beta, mass=args.mass, vol=args.vol)


def _occupancy_from(args, cfg: QuadratureConfig) -> OccupancySpec:
    if args.occupancy == "zero":
        return zero_occupancy(args.dims, args.mass)
    kw = dict(n_particles=args.n_particles, vol=args.vol, mass=args.mass, dims=args.dims)
    if args.norm_constant is not None:
        kw["norm_constant"] = args.norm_constant
    if args.occupancy == "shell":
        width = args.width if args.width is not None else 0.5 * args.q0
        spec = OccupancySpec(variant="shell", q0=args.q0, width=width, **kw)
    else:
        spec = OccupancySpec(variant="thermal", temperature=args.temperature, **kw)
    return occupancy_normalize(spec, cfg)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------
def cmd_kernel_eval(args) -> Outcome:
    from .noise_kernel import spectral_eval

    k = _kernel_from(args)
    s = np.asarray(args.s, dtype=float)
    vals = np.atleast_1d(spectral_eval(k, s))
    return Outcome(["s", "value"], [(float(a), float(b)) for a, b in zip(s, vals)])


def cmd_kernel_correlate(args) -> Outcome:
    from .noise_kernel import correlation_table

    if args.dims != 1:
        raise InvalidInput("kernel correlate tabulates the 1+1D correlation (--dims 1)")
    k = _kernel_from(args)
    rows = correlation_table(k, args.ts, args.xs, QuadratureConfig(nodes=args.nodes))
    out, worst = [], 0.0
    if k.variant == "quartic":
        peak = max(abs(r[4]) for r in rows if math.isfinite(r[4]))
        for r in rows:
            checked = math.isfinite(r[4]) and abs(r[4]) >= args.floor * peak
            rel = abs(r[2] - r[4]) / abs(r[4]) if checked else math.nan
            if checked:
                worst = max(worst, rel)
            out.append(tuple(r) + (rel, checked))
    else:
        out = [tuple(r) + (math.nan, False) for r in rows]
    ok = worst <= args.tolerance
    return Outcome(["t", "x", "transform", "transform_error", "oracle", "oracle_error", "rel_diff", "checked"],
                   out, {"max_rel_diff": worst, "tolerance": args.tolerance}, ok)


def cmd_kernel_sample(args) -> Outcome:
    from .noise_kernel import default_grid, empirical_covariance, exact_grid_covariance, sample_ensemble

    k = _kernel_from(args)
    if k.variant != "quartic":
        raise InvalidInput("kernel sample uses the quartic kernel on a default grid")
    grid = default_grid(k.beta, args.dims, args.points)
    samples = sample_ensemble(k, grid, args.seed, args.n, threads=args.threads)
    exact = exact_grid_covariance(k, grid)
    rows, ok = [], True
    lags = [(0,) * (1 + args.dims)]
    for ax in range(1 + args.dims):
        lags.append(tuple(1 if i == ax else 0 for i in range(1 + args.dims)))
    for lag in lags:
        est, se = empirical_covariance(samples, lag)
        ref = float(exact[lag])
        z = abs(est - ref) / se if se > 0 else math.inf
        good = z <= args.sigmas
        ok &= good
        rows.append(("/".join(map(str, lag)), est, se, ref, z, good))
    first = samples[0].values.ravel()[: args.head]
    return Outcome(["lag", "empirical", "stderr", "exact", "z_score", "within"], rows,
                   {"grid_shape": list(grid.shape), "grid_spacing": list(grid.spacing), "samples": args.n,
                    "first_values": first.tolist()}, ok)


def cmd_kernel_meijer(args) -> Outcome:
    from .noise_kernel import meijer_g

    z = np.asarray(args.z, dtype=float)
    val, err = meijer_g(z, args.terms)
    return Outcome(["z", "value", "error"], [(float(a), float(b), float(c)) for a, b, c in zip(z, val, err)])


# ---------------------------------------------------------------------------
# rate
# ---------------------------------------------------------------------------
def _refuse_white(args, sub):
    if args.variant == "white":
        raise InvalidInput(f"white kernel is divergent in 'rate {sub}'; use 'rate white-scan' for its cutoff scaling")


def _rate_outcome(res, comparison=None, ok=True) -> Outcome:
    d = res.as_dict()
    cols = list(d)
    summary = {}
    if comparison is not None:
        summary["comparison"] = comparison
    return Outcome(cols, [tuple(d[c] for c in cols)], summary, ok and not res.flagged)


def cmd_rate_position(args) -> Outcome:
    from .energy_rate import rate_position_space
    from .field_kernel import TwoPointContext

    _refuse_white(args, "position")
    if args.dims != 1:
        raise InvalidInput("the position-space rate is evaluated in 1+1D (--dims 1)")
    cfg = _quad_from(args)
    occ = _occupancy_from(args, cfg)
    ctx = TwoPointContext(mass=args.mass, dims=1, occupancy=occ, cfg=cfg, vacuum_half=args.vacuum_half)
    res = rate_position_space(_params_from(args), _kernel_from(args, 1), ctx, absolute=args.absolute)
    return _rate_outcome(res)


def cmd_rate_momentum(args) -> Outcome:
    from .energy_rate import rate_momentum_space

    _refuse_white(args, "momentum")
    cfg = _quad_from(args)
    occ = _occupancy_from(args, cfg)
    res = rate_momentum_space(_params_from(args), _kernel_from(args, args.dims), occ, cfg, method=args.method,
                              absolute=args.absolute, cross_check=args.cross_check)
    return _rate_outcome(res)


def _limit(args, fn, sub):
    from .energy_rate import rate_momentum_space

    _refuse_white(args, sub)
    if args.dims != 3:
        raise InvalidInput("limit formulas are defined for d = 3")
    cfg = _quad_from(args)
    occ = _occupancy_from(args, cfg)
    k = _kernel_from(args, 3)
    kw = {} if args.threshold is None else {"threshold": args.threshold}
    res = fn(_params_from(args), k, occ, cfg, absolute=args.absolute, **kw)
    if not args.compare:
        return _rate_outcome(res)
    full = rate_momentum_space(_params_from(args), k, occ, cfg, absolute=args.absolute)
    rel = abs(res.value - full.value) / abs(full.value) if full.value != 0 else (0.0 if res.value == 0 else math.inf)
    comp = {"full_value": full.value, "full_stderr": full.stderr, "rel_diff": rel, "tolerance": args.tolerance,
            "agrees": bool(rel <= args.tolerance)}
    return _rate_outcome(res, comp, ok=comp["agrees"])


def cmd_rate_nr(args) -> Outcome:
    from .energy_rate import rate_nr_limit

    return _limit(args, rate_nr_limit, "nr")


def cmd_rate_rel(args) -> Outcome:
    from .energy_rate import rate_rel_limit

    return _limit(args, rate_rel_limit, "rel")


def cmd_rate_white_scan(args) -> Outcome:
    from .energy_rate import white_noise_divergence_scan
    from .field_kernel import TwoPointContext

    cfg = _quad_from(args)
    occ = _occupancy_from(args, cfg)
    ctx = TwoPointContext(mass=args.mass, dims=args.dims, occupancy=occ, cfg=cfg, vacuum_half=args.vacuum_half)
    scan = white_noise_divergence_scan(_params_from(args), ctx, args.cutoffs, amplitude=args.amplitude,
                                       residual_tol=args.residual_tol, absolute=args.absolute)
    summary = {"exponent": scan.exponent, "prefactor": scan.prefactor, "residual": scan.residual,
               "flagged": scan.flagged}
    return Outcome(["cutoff", "rate", "regulated_delta", "field_variance"], list(scan.rows), summary,
                   not scan.flagged)


# ---------------------------------------------------------------------------
# microcausality
# ---------------------------------------------------------------------------
def _add_probe_args(p):
    p.add_argument("--observable", choices=("phi", "phi_squared"), default="phi")
    p.add_argument("--nonlocal", dest="nonlocal_q", action="store_true", help="use the nonlocal phi+ phi- collapse operator")
    p.add_argument("--no-time-ordering", action="store_true", help="integrate over the full (unordered) domain")
    p.add_argument("--normal-order", action="store_true", help="normal-order the second-order operator")
    p.add_argument("--beta", type=float, default=1.5, help="quartic kernel scale")
    p.add_argument("--cutoff", type=float, default=20.0, help="Gaussian field regulator scale")
    p.add_argument("--nodes", type=int, default=12)
    p.add_argument("--panels", type=int, default=2)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=1e-3, help="spacelike/timelike pass ratio")
    p.add_argument("--expect-violation", action="store_true",
                   help="the contract is that some spacelike probe fails")


def _probe_from(args, dt=None, dx=None):
    from .microcausality import CommutatorProbe
    from .noise_kernel import KernelSpec

    dt = args.dt if dt is None else dt
    dx = args.dx if dx is None else dx
    return CommutatorProbe(z2=SpacetimePoint(dt, (dx,)), z1=SpacetimePoint(0.0, (0.0,)),
                           observable=args.observable,
                           collapse_op="nonlocal_pm" if args.nonlocal_q else "local_quadratic",
                           time_ordering=not args.no_time_ordering, normal_order=args.normal_order,
                           kernel=KernelSpec("quartic", beta=args.beta),
                           cfg=QuadratureConfig(cutoff=args.cutoff, nodes=args.nodes, regulator="gaussian"),
                           mass=args.mass, alpha=args.alpha, panels=args.panels)


_MCC_COLUMNS = ["dt", "dx", "class", "magnitude", "error", "reference", "passed"]


def _mcc_verdict(rows, expect_violation):
    spacelike = [r for r in rows if r[2] == "spacelike"]
    errors = [r for r in rows if r[2] == "error"]
    violations = [r for r in spacelike if r[6] is False]
    if errors:
        raise InvalidInput(f"probe rejected: {errors[0][6]}")
    ok = bool(violations) if expect_violation else not violations
    return ok, {"spacelike_rows": len(spacelike), "violations": len(violations),
                "expect_violation": bool(expect_violation)}


def cmd_mcc_probe(args) -> Outcome:
    from .microcausality import mcc_second_order

    probe = _probe_from(args)
    res = mcc_second_order(probe)
    ref, passed = math.nan, None
    if res.interval_class == "spacelike":
        if args.dt == 0:
            ref, passed = 0.0, True
        else:
            ref = mcc_second_order(probe.swapped()).magnitude
            passed = bool(res.magnitude < args.ratio * ref)
    rows = [(args.dt, args.dx, res.interval_class, res.magnitude, res.error, ref, passed)]
    ok, summary = _mcc_verdict(rows, args.expect_violation)
    summary.update(value_re=res.value.real, value_im=res.value.imag, interval=res.interval)
    return Outcome(_MCC_COLUMNS, rows, summary, ok)


def cmd_mcc_sweep(args) -> Outcome:
    from .microcausality import mcc_sweep

    base = _probe_from(args, dt=1.0, dx=0.0)
    grid = [(dt, dx) for dt in args.dts for dx in args.dxs]
    rows = mcc_sweep(base, grid, ratio=args.ratio, threads=args.threads)
    ok, summary = _mcc_verdict(rows, args.expect_violation)
    return Outcome(_MCC_COLUMNS, rows, summary, ok)


# ---------------------------------------------------------------------------
# unravelings
# ---------------------------------------------------------------------------
def _add_traj_args(p):
    p.add_argument("--preset", choices=("qubit", "qutrit", "dephasing"), default="qubit")
    p.add_argument("--tau", type=float, default=None, help="noise correlation time (preset default if omitted)")
    p.add_argument("--dt", type=float, default=1.0 / 16.0, help="noise cell length")
    p.add_argument("--t-final", type=float, default=1.0)
    p.add_argument("--n-traj", type=int, default=512)
    p.add_argument("--scheme", choices=("rk4", "rk2", "perturbative"), default="rk4")
    p.add_argument("--substeps", type=int, default=8)
    p.add_argument("--measure", choices=("tilt", "raw"), default="tilt")
    p.add_argument("--no-antithetic", action="store_true")
    p.add_argument("--no-whiten", action="store_true")
    p.add_argument("--norm-tol", type=float, default=1e-6)


def _system_from(args):
    from .unraveling import preset

    return preset(args.preset) if args.tau is None else preset(args.preset, tau=args.tau)


def _traj_cfg(args, gamma):
    from .unraveling import TrajectoryConfig

    return TrajectoryConfig(dt=args.dt, t_final=args.t_final, n_traj=args.n_traj, gamma=gamma, seed=args.seed,
                            scheme=args.scheme, substeps=args.substeps, antithetic=not args.no_antithetic,
                            whiten=not args.no_whiten, measure=args.measure, norm_tol=args.norm_tol)


def cmd_unravel_run(args) -> Outcome:
    from .unraveling import evolve_linear, evolve_nonlinear, evolve_unitary, sample_noise_paths

    sys_ = _system_from(args)
    cfg = _traj_cfg(args, args.gamma)
    paths = sample_noise_paths(sys_, cfg)
    fn = {"nonlinear": evolve_nonlinear, "linear": evolve_linear, "unitary": evolve_unitary}[args.kind]
    tr = fn(sys_, cfg, paths)
    d = sys_.dim
    cols = ["t", "trace", "purity"] + [f"rho_{a}{b}_{part}" for a in range(d) for b in range(d)
                                       for part in ("re", "im")]
    rows = []
    for i, t in enumerate(tr.times):
        rho = _lab_density(sys_, tr, i)
        row = [float(t), float(np.trace(rho).real), float(np.real(np.trace(rho @ rho)))]
        for a in range(d):
            for b in range(d):
                row += [float(rho[a, b].real), float(rho[a, b].imag)]
        rows.append(row)
    ok = args.kind == "linear" or tr.norm_drift <= cfg.norm_tol
    return Outcome(cols, rows, {"kind": args.kind, "norm_drift": tr.norm_drift, "norm_tol": cfg.norm_tol,
                                "min_eigenvalue": paths.min_eigenvalue, "clipped": bool(paths.clipped)}, ok)


def _lab_density(sys_, tr, i):
    V = sys_.basis
    return V @ tr.density(i) @ V.conj().T


def cmd_unravel_compare(args) -> Outcome:
    from .unraveling import UNRAVELINGS, compare_unravelings

    sys_ = _system_from(args)
    cfg = _traj_cfg(args, args.gammas[0])
    rep = compare_unravelings(sys_, cfg, gammas=args.gammas, batches=args.batches, threshold=args.threshold)
    rows = []
    for r in rep["rows"]:
        for kind in UNRAVELINGS:
            e = r[kind]
            rows.append((r["gamma"], kind, e["distance"], e["mc_error"], e["inconclusive"]))
    summary = {"fits": rep["fits"], "decade": rep["decade"], "threshold": rep["threshold"],
               "passed": rep["passed"], "system": rep["system"]}
    return Outcome(["gamma", "unraveling", "trace_distance", "mc_error", "inconclusive"], rows, summary,
                   bool(rep["passed"]))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def _env_seed() -> int:
    raw = os.environ.get("ARTIFACT_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        return DEFAULT_SEED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relcollapse",
                                 description="Relativistic non-Markovian collapse dynamics: kernels, rates, "
                                             "microcausality probes and unravelings.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_env_seed(), help="master seed (env ARTIFACT_SEED)")
    common.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=int, default=None, help="worker bound (env ARTIFACT_THREADS)")
    common.add_argument("--config", default=None,
                        help="INI file (or 'preset:NAME') supplying defaults for this command")
    common.add_argument("-v", "--verbose", action="count", default=0)
    top = ap.add_subparsers(dest="command", required=True)

    # kernel
    kp = top.add_parser("kernel", help="noise kernel evaluation, transforms and sampling")
    ks = kp.add_subparsers(dest="sub", required=True)
    p = ks.add_parser("eval", parents=[common], help="spectral kernel at invariants s")
    _add_kernel_args(p)
    p.add_argument("--s", type=_floats, required=True, help="comma-separated invariants")
    p.set_defaults(handler=cmd_kernel_eval)
    p = ks.add_parser("correlate", parents=[common], help="1+1D position correlation vs the Meijer-G oracle")
    _add_kernel_args(p)
    p.add_argument("--ts", type=_floats, default=[0.5, 1.0, 2.0])
    p.add_argument("--xs", type=_floats, default=[0.0, 0.5, 1.5, 2.5])
    p.add_argument("--nodes", type=int, default=24)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--floor", type=float, default=1e-6, help="relative-to-peak floor for checked points")
    p.set_defaults(handler=cmd_kernel_correlate)
    p = ks.add_parser("sample", parents=[common], help="stationary Gaussian noise samples and covariance check")
    _add_kernel_args(p)
    p.add_argument("--points", type=int, default=32)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--sigmas", type=float, default=5.0)
    p.add_argument("--head", type=int, default=8, help="number of raw values echoed from the first sample")
    p.set_defaults(handler=cmd_kernel_sample)
    p = ks.add_parser("meijer", parents=[common], help="G^{2,0}_{0,3}(z | 0, 0, 1/2) series")
    p.add_argument("--z", type=_floats, required=True)
    p.add_argument("--terms", type=int, default=400)
    p.set_defaults(handler=cmd_kernel_meijer)

    # rate
    rp = top.add_parser("rate", help="energy-increase rates")
    rs = rp.add_subparsers(dest="sub", required=True)
    for name, fn, dims in (("position", cmd_rate_position, 1), ("momentum", cmd_rate_momentum, 3),
                           ("nr", cmd_rate_nr, 3), ("rel", cmd_rate_rel, 3)):
        p = rs.add_parser(name, parents=[common], help=f"{name} rate")
        _add_kernel_args(p, default_beta=1.0, dims=False)
        _add_model_args(p, dims)
        p.set_defaults(handler=fn)
        if name == "position":
            p.add_argument("--vacuum-half", action="store_true", help="include the vacuum 1/2 (not normal ordered)")
        if name == "momentum":
            p.add_argument("--method", choices=("quad", "mc"), default="quad")
            p.add_argument("--cross-check", action="store_true")
        if name in ("nr", "rel"):
            p.add_argument("--threshold", type=float, default=None, help="regime boundary in units of m")
            p.add_argument("--compare", action="store_true", help="also compute the full rate and compare")
            p.add_argument("--tolerance", type=float, default=0.05 if name == "nr" else 0.10)
    p = rs.add_parser("white-scan", parents=[common], help="white-noise rate over a cutoff scan")
    _add_model_args(p, 1)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--cutoffs", type=_floats, default=[10.0, 20.0, 40.0, 80.0])
    p.add_argument("--residual-tol", type=float, default=0.05)
    p.add_argument("--vacuum-half", action="store_true")
    p.set_defaults(handler=cmd_rate_white_scan, occupancy="thermal")

    # mcc
    mp = top.add_parser("mcc", help="second-order microcausality probes (1+1D)")
    ms = mp.add_subparsers(dest="sub", required=True)
    p = ms.add_parser("probe", parents=[common], help="one probe with its swapped timelike reference")
    _add_probe_args(p)
    p.add_argument("--dt", type=float, default=1.0, help="z2 time minus z1 time (>= 0)")
    p.add_argument("--dx", type=float, default=2.0, help="z2 position minus z1 position")
    p.set_defaults(handler=cmd_mcc_probe)
    p = ms.add_parser("sweep", parents=[common], help="probes over a (dt, dx) grid")
    _add_probe_args(p)
    p.add_argument("--dts", type=_floats, default=[0.5, 1.0])
    p.add_argument("--dxs", type=_floats, default=[1.5, 2.0])
    p.set_defaults(handler=cmd_mcc_sweep)

    # unravel
    up = top.add_parser("unravel", help="stochastic unravelings on small systems")
    us = up.add_subparsers(dest="sub", required=True)
    p = us.add_parser("run", parents=[common], help="ensemble-averaged trajectory of one unraveling")
    _add_traj_args(p)
    p.add_argument("--kind", choices=("nonlinear", "linear", "unitary"), default="nonlinear")
    p.add_argument("--gamma", type=float, default=0.1)
    p.set_defaults(handler=cmd_unravel_run)
    p = us.add_parser("compare", parents=[common], help="gamma scaling of unraveling vs master-equation residuals")
    _add_traj_args(p)
    p.add_argument("--gammas", type=_floats, default=[0.03, 0.1, 0.3])
    p.add_argument("--batches", type=int, default=4)
    p.add_argument("--threshold", type=float, default=1.4)
    p.set_defaults(handler=cmd_unravel_compare)

    # replay
    p = top.add_parser("replay", parents=[common], help="re-run the config embedded in an output file")
    p.add_argument("file")
    p.set_defaults(handler=None)
    return ap


def _find_subparser(ap: argparse.ArgumentParser, path: Sequence[str]) -> argparse.ArgumentParser:
    cur = ap
    for name in path:
        act = next(a for a in cur._actions if isinstance(a, argparse._SubParsersAction))
        cur = act.choices[name]
    return cur


def _resolve_config_path(spec: str) -> str:
    if spec.startswith("preset:"):
        name = spec[len("preset:"):]
        path = resources.files("relcollapse").joinpath("presets", f"{name}.ini")
        if not path.is_file():
            raise InvalidInput(f"unknown preset {name!r}")
        return str(path)
    return spec


def _apply_ini(ap, argv: List[str]):
    """Apply INI defaults for the selected subcommand (sections ``[group]`` and ``[group.sub]``)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    sections = load_ini(_resolve_config_path(known.config))
    words = [a for a in argv if not a.startswith("-")]
    if len(words) < 2:
        return
    group, sub = words[0], words[1]
    try:
        sp = _find_subparser(ap, [group, sub])
    except (StopIteration, KeyError):
        return
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for name in (group, f"{group}.{sub}"):
        for key, raw in sections.get(name, {}).items():
            if key not in actions or key in ("config", "output", "help"):
                raise InvalidInput(f"config key {key!r} is not an option of '{group} {sub}'")
            act = actions[key]
            if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                val = configparser.ConfigParser.BOOLEAN_STATES.get(raw.strip().lower())
                if val is None:
                    raise InvalidInput(f"config key {key!r} needs a boolean, got {raw!r}")
                defaults[key] = val
            else:
                try:
                    defaults[key] = act.type(raw) if act.type else raw
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise InvalidInput(f"config key {key!r}: {exc}") from exc
                if act.choices is not None and defaults[key] not in act.choices:
                    raise InvalidInput(f"config key {key!r}: {raw!r} not in {list(act.choices)}")
    sp.set_defaults(**defaults)
    for a in sp._actions:
        if a.dest in defaults:
            a.required = False


def _echo(args) -> Dict:
    d = {k: v for k, v in vars(args).items() if k not in _NOT_ECHOED}
    return d


_HANDLERS: Dict[str, Callable] = {
    "kernel eval": cmd_kernel_eval, "kernel correlate": cmd_kernel_correlate, "kernel sample": cmd_kernel_sample,
    "kernel meijer": cmd_kernel_meijer, "rate position": cmd_rate_position, "rate momentum": cmd_rate_momentum,
    "rate nr": cmd_rate_nr, "rate rel": cmd_rate_rel, "rate white-scan": cmd_rate_white_scan,
    "mcc probe": cmd_mcc_probe, "mcc sweep": cmd_mcc_sweep, "unravel run": cmd_unravel_run,
    "unravel compare": cmd_unravel_compare,
}


def _render(args, outcome: Outcome) -> str:
    config = _echo(args)
    if args.format == "json":
        payload = {"columns": outcome.columns, "rows": [list(r) for r in outcome.rows],
                   "summary": outcome.summary, "ok": outcome.ok}
        return render_json(config, payload)
    summary = dict(outcome.summary)
    summary["ok"] = outcome.ok
    return render_csv(config, outcome.columns, outcome.rows, summary)


def _emit(text: str, path: Optional[str]):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def run(args) -> int:
    """Execute parsed arguments; returns the exit code."""
    if args.command == "replay":
        return _replay(args)
    key = f"{args.command} {args.sub}"
    outcome = _HANDLERS[key](args)
    _emit(_render(args, outcome), args.output)
    if not outcome.ok:
        log.warning("numerical contract violated: %s", outcome.summary)
    return EXIT_OK if outcome.ok else EXIT_CONTRACT


def _replay(args) -> int:
    config = read_config_echo(args.file)
    if "command" not in config or "sub" not in config:
        raise InvalidInput(f"{args.file}: embedded config lacks a command")
    key = f"{config['command']} {config['sub']}"
    if key not in _HANDLERS:
        raise InvalidInput(f"{args.file}: unknown command {key!r}")
    ns = argparse.Namespace(**config)
    ns.threads = args.threads
    ns.output = None
    outcome = _HANDLERS[key](ns)
    text = _render(ns, outcome)
    with open(args.file, newline="") as fh:
        original = fh.read()
    _emit(text, args.output)
    same = text == original
    log.info("replay %s: %s", args.file, "identical" if same else "DIFFERS")
    if not same:
        sys.stderr.write(f"replay of {args.file} differs from the recorded output\n")
    return EXIT_OK if same and outcome.ok else EXIT_CONTRACT


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_ini(ap, argv)
    except InvalidInput as exc:
        sys.stderr.write(f"relcollapse: error: {exc}\n")
        return EXIT_INVALID
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConvergenceError as exc:
        sys.stderr.write(f"relcollapse: contract violated: {exc}\n")
        return EXIT_CONTRACT
    except (InvalidInput, ValueError) as exc:
        sys.stderr.write(f"relcollapse: error: {exc}\n")
        return EXIT_INVALID
    except ArtifactError as exc:
        sys.stderr.write(f"relcollapse: error: {exc}\n")
        return EXIT_CONTRACT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
