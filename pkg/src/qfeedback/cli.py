"""Command-line front end: ``qfeedback {steady,sweep,traj,wigner,compare} --config FILE``.

Every output file starts with ``#`` lines carrying the package version and the
fully resolved configuration, followed by one CSV header row and the data.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bures_distance, default_axes, moments, parity_violation, wigner
from .config import ScenarioConfig, fmt, load
from .errors import ConfigError, ConvergenceError, TruncationError
from .fock import annihilation, basis_vector, ground_levels, number, partial_trace, top_level_population
from .models import (AncillaParams, GeneratorDescriptor, SystemParams, build_ao_adiabatic, build_eo_mode_adiabatic,
                     build_eo_mode_compound_transformed, build_eo_tla_adiabatic, build_eo_tla_compound,
                     build_jc_adiabatic, build_jc_compound_interaction, build_kerr, build_no_feedback,
                     build_simple_feedback, describe_ao_compound, describe_no_feedback, describe_simple_feedback,
                     link_ao, link_eo_mode, link_eo_tla, link_jc)
from .steady import steady_state
from .trajectory import bootstrap_bures, ensemble_average, spectral_gap, steady_estimate

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_TRUNCATION = 0, 2, 3, 4

# exact steady states with more than this in the top Fock level are rejected
HEALTH_LIMIT = 1e-3

ADIABATIC_PARTNER = {
    "eo_tla_compound": "eo_tla_adiabatic",
    "ao_tla_compound": "ao_adiabatic",
    "ao_mode_compound": "ao_adiabatic",
    "jc_compound": "jc_adiabatic",
    "eo_mode_trajectory": "eo_mode_adiabatic",
}


# ---------------------------------------------------------------------------
# scheme registry


def system_params(cfg: ScenarioConfig) -> SystemParams:
    return SystemParams(cfg["sys.lam"], cfg["sys.chi"], cfg["sys.n_max"])


def ancilla_params(cfg: ScenarioConfig, scheme: str, gamma: float | None = None,
                   ancilla_dim: int | None = None) -> AncillaParams | None:
    """Ancilla parameters, linked to chi unless ``anc.g`` is given explicitly."""
    gamma = cfg.get("anc.gamma") if gamma is None else gamma
    if gamma is None:
        return None
    sysp = system_params(cfg)
    dim = int(ancilla_dim or cfg["anc.ancilla_dim"])
    delta = cfg["anc.delta"]
    g = cfg.get("anc.g")
    if scheme.startswith("eo_mode"):
        if cfg.get("anc.eps") is not None:
            eps = cfg["anc.eps"]
            return AncillaParams(gamma, gamma * sysp.chi / (2 * eps) if g is None else g, eps, dim, delta)
        anc = link_eo_mode(sysp, gamma, cfg["anc.diffusion_half"], ancilla_dim=dim, delta=delta)
        return anc if g is None else AncillaParams(gamma, g, anc.eps, dim, delta)
    if scheme.startswith("jc_"):
        if g is None:
            return link_jc(sysp, gamma, delta)
        return AncillaParams(gamma, g, None, 2, delta)
    if scheme.startswith("eo_tla"):
        return link_eo_tla(sysp, gamma, ancilla_dim=dim, delta=delta) if g is None else \
            AncillaParams(gamma, g, None, dim, delta)
    if scheme.startswith("ao_"):
        return link_ao(sysp, gamma, ancilla_dim=dim, delta=delta) if g is None else \
            AncillaParams(gamma, g, None, dim, delta)
    return AncillaParams(gamma, g or 0.0, None, dim, delta)


def build(scheme: str, sysp: SystemParams, anc: AncillaParams | None, form: str | None = None):
    """Generator (SuperOp) or descriptor for a named scheme."""
    if scheme == "none":
        return build_no_feedback(sysp)
    if scheme == "simple":
        return build_simple_feedback(sysp)
    if scheme == "kerr":
        return build_kerr(sysp)
    if scheme == "eo_tla_adiabatic":
        return build_eo_tla_adiabatic(sysp, form or "closed")
    if scheme == "ao_adiabatic":
        return build_ao_adiabatic(sysp, form or "rational")
    if scheme == "eo_mode_adiabatic":
        return build_eo_mode_adiabatic(sysp, anc)
    if scheme == "eo_tla_compound":
        return build_eo_tla_compound(sysp, anc)
    if scheme == "ao_tla_compound":
        return describe_ao_compound(sysp, anc, "tla")
    if scheme == "ao_mode_compound":
        return describe_ao_compound(sysp, anc, "mode")
    if scheme == "jc_compound":
        return build_jc_compound_interaction(sysp, anc)
    if scheme == "jc_adiabatic":
        return build_jc_adiabatic(sysp, anc)
    if scheme == "eo_mode_trajectory":
        return build_eo_mode_compound_transformed(sysp, anc)
    raise ConfigError(f"model.scheme: unknown scheme {scheme!r}")


def _form_for(cfg, scheme):
    form = cfg.get("model.form")
    if form is None:
        return None
    allowed = {"eo_tla_adiabatic": ("closed", "quadrature"), "ao_adiabatic": ("rational", "arctan")}
    if scheme in allowed and form not in allowed[scheme]:
        raise ConfigError(f"model.form: {form!r} not valid for {scheme}")
    return form if scheme in allowed else None


def solve_system_state(scheme: str, sysp: SystemParams, anc, form=None, tol=None):
    """Exact steady state reduced to the system, with its report."""
    gen = build(scheme, sysp, anc, form)
    report = steady_state(gen, tol=tol)
    state = report.state
    if len(state.space.factors) > 1:
        state = partial_trace(state, 0)
    return state, report


def _check_health(report, label: str):
    tops = top_level_population(report.state.space, report.state)
    worst = max(tops.values()) if tops else 0.0
    if worst > HEALTH_LIMIT:
        raise TruncationError(f"{label}: top Fock level holds {worst:.3e} (> {HEALTH_LIMIT:g}); raise n_max")
    return tops


# ---------------------------------------------------------------------------
# output


def _header(cfg: ScenarioConfig, extra: list[str] | None = None) -> list[str]:
    lines = [f"# qfeedback {__version__}"]
    lines += [f"# {ln}" for ln in cfg.lines()]
    lines += [f"# {ln}" for ln in (extra or [])]
    return lines


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    if x is None:
        return ""
    return str(x)


def write_table(path: Path, cfg: ScenarioConfig, header: list[str], rows, extra=None):
    lines = _header(cfg, extra)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_cell(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_complex_matrix(path: Path, cfg: ScenarioConfig, m: np.ndarray, extra=None):
    n = m.shape[1]
    header = [f"{p}_{j}" for j in range(n) for p in ("re", "im")]
    rows = [[v for z in row for v in (float(z.real), float(z.imag))] for row in m]
    write_table(path, cfg, header, rows, extra)


def write_matrix(path: Path, cfg: ScenarioConfig, m: np.ndarray, extra=None):
    lines = _header(cfg, extra)
    for row in m:
        lines.append(",".join(fmt(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# experiments


def run_steady(cfg: ScenarioConfig, out: Path) -> list[Path]:
    sysp = system_params(cfg)
    scheme = cfg.scheme
    anc = ancilla_params(cfg, scheme)
    state, report = solve_system_state(scheme, sysp, anc, _form_for(cfg, scheme), cfg.get("run.tol"))
    tops = _check_health(report, scheme)
    mom = moments(state)
    p1 = out / "steady_rho.csv"
    write_complex_matrix(p1, cfg, state.matrix)
    p2 = out / "steady_summary.csv"
    rows = [["residual", report.residual], ["method", report.method],
            ["parity_violation", parity_violation(state)], ["min_eigenvalue", state.min_eigenvalue]]
    rows += [[f"top_level_{k}", v] for k, v in sorted(tops.items())]
    rows += [[k, v] for k, v in mom.items()]
    write_table(p2, cfg, ["quantity", "value"], rows)
    return [p1, p2]


def _sweep_exact(cfg, scheme, gammas, dims):
    sysp = system_params(cfg)
    partner = ADIABATIC_PARTNER[scheme]
    rows = []
    cached = None
    for gamma, dim in zip(gammas, dims):
        anc = ancilla_params(cfg, scheme, gamma, dim)
        try:
            comp, rep = solve_system_state(scheme, sysp, anc, None, cfg.get("run.tol"))
            # the adiabatic partner depends on Gamma only for the JC and eo-mode cases
            if cached is None or partner in ("jc_adiabatic", "eo_mode_adiabatic"):
                cached = solve_system_state(partner, sysp, anc, _form_for(cfg, partner), cfg.get("run.tol"))
            adia, rep_a = cached
            tops = top_level_population(rep.state.space, rep.state)
        except (ConvergenceError, TruncationError) as exc:
            raise type(exc)(f"Gamma={fmt(gamma)}: {exc}") from exc
        cmp = bures_distance(comp, adia)
        rows.append([gamma, cmp.bures, None, rep.residual, rep_a.residual, tops.get(0, 0.0), tops.get(1, 0.0),
                     parity_violation(comp), rep.method])
    return rows


def _sweep_trajectory(cfg, gammas, dims, workers):
    sysp = system_params(cfg)
    rows = []
    for gamma, dim in zip(gammas, dims):
        anc = ancilla_params(cfg, "eo_mode_trajectory", gamma, dim)
        try:
            adia_gen = build_eo_mode_adiabatic(sysp, anc)
            ref = steady_state(adia_gen).state
            gap = spectral_gap(adia_gen)
            desc = build_eo_mode_compound_transformed(sysp, anc)
            psi0 = basis_vector(desc.space, ground_levels(desc.space))
            obs = _observables(desc.space)
            est = steady_estimate(desc, psi0, cfg["run.n_traj"], cfg["run.seed"], gap, workers,
                                  observables=obs, T=cfg.get("run.T"), keep_reduced=True)
        except (ConvergenceError, TruncationError) as exc:
            raise type(exc)(f"Gamma={fmt(gamma)}: {exc}") from exc
        samples = est.ensemble.reduced_samples[:, -1]
        b, se = bootstrap_bures(samples, ref.matrix, cfg["run.bootstrap"], cfg["run.seed"])
        rows.append([gamma, b, se, None, None, None, None, parity_violation(est.ensemble.reduced_rho[-1]),
                     f"trajectory n={est.ensemble.n_traj} discarded={est.ensemble.n_discarded} T={fmt(est.T)} "
                     f"burn_in_ok={int(est.burn_in_ok)}"])
    return rows


def _observables(space):
    a = annihilation(space, 0)
    x1 = a + a.dag()
    x2 = -1j * (a - a.dag())
    return {"n": number(space, 0), "X1sq": x1 @ x1, "X2sq": x2 @ x2}


def run_sweep(cfg: ScenarioConfig, out: Path) -> list[Path]:
    scheme = cfg.scheme
    gammas = cfg["run.gammas"]
    dims = [int(d) for d in cfg.get("run.ancilla_dims") or [cfg["anc.ancilla_dim"]] * len(gammas)]
    if scheme == "eo_mode_trajectory":
        rows = _sweep_trajectory(cfg, gammas, dims, cfg["run.workers"])
        note = ["bures_se is a bootstrap standard error; the finite-ensemble estimate is biased upward "
                "(one-sided: the ensemble mean lies further from the reference than the true average)"]
    else:
        rows = _sweep_exact(cfg, scheme, gammas, dims)
        note = None
    path = out / "sweep.csv"
    write_table(path, cfg, ["gamma", "bures", "bures_se", "residual_compound", "residual_adiabatic",
                            "top_level_system", "top_level_ancilla", "parity_violation", "method"], rows, note)
    return [path]


def _descriptor(scheme, sysp, anc):
    if scheme == "none":
        return describe_no_feedback(sysp)
    if scheme == "simple":
        return describe_simple_feedback(sysp)
    if scheme in ("ao_tla_compound", "ao_mode_compound"):
        return describe_ao_compound(sysp, anc, "tla" if scheme == "ao_tla_compound" else "mode")
    return build_eo_mode_compound_transformed(sysp, anc)


def run_trajectory(cfg: ScenarioConfig, out: Path) -> list[Path]:
    sysp = system_params(cfg)
    scheme = cfg.scheme
    anc = ancilla_params(cfg, scheme)
    desc: GeneratorDescriptor = _descriptor(scheme, sysp, anc)
    T = cfg.get("run.T")
    if T is None:
        raise ConfigError("run.T: required for traj runs")
    psi0 = basis_vector(desc.space, ground_levels(desc.space))
    ens = ensemble_average(desc, psi0, T, cfg["run.n_traj"], cfg["run.seed"], cfg["run.workers"],
                           sample_times=cfg.get("run.samples"), observables=_observables(desc.space))
    rows = []
    for i, t in enumerate(ens.times):
        row = [t]
        for name in ("n", "X1sq", "X2sq"):
            m, s = ens.observable(name)
            row += [m[i], s[i]]
        rows.append(row)
    p1 = out / "traj_observables.csv"
    write_table(p1, cfg, ["t", "n", "n_se", "X1sq", "X1sq_se", "X2sq", "X2sq_se"], rows,
                [f"n_traj = {ens.n_traj}", f"n_discarded = {ens.n_discarded}"])
    p2 = out / "traj_rho.csv"
    write_complex_matrix(p2, cfg, ens.reduced_rho[-1], [f"t = {fmt(ens.times[-1])}"])
    return [p1, p2]


def run_wigner(cfg: ScenarioConfig, out: Path) -> list[Path]:
    sysp = system_params(cfg)
    scheme = cfg.scheme
    state, report = solve_system_state(scheme, sysp, ancilla_params(cfg, scheme), _form_for(cfg, scheme),
                                       cfg.get("run.tol"))
    _check_health(report, scheme)
    axes = default_axes(cfg["wigner.limit"], cfg["wigner.points"])
    grid = wigner(state, axes, axes)
    p1 = out / "wigner.csv"
    write_matrix(p1, cfg, grid.values, ["rows follow X2, columns follow X1; see wigner_axes.csv",
                                        f"normalization = {fmt(grid.normalization)}"])
    p2 = out / "wigner_axes.csv"
    rows = [["X1", i, x] for i, x in enumerate(grid.x1)] + [["X2", j, x] for j, x in enumerate(grid.x2)]
    write_table(p2, cfg, ["axis", "index", "value"], rows)
    return [p1, p2]


def run_compare(cfg: ScenarioConfig, out: Path) -> list[Path]:
    sysp = system_params(cfg)
    states = {}
    for scheme in cfg["run.schemes"]:
        if scheme == "eo_mode_trajectory":
            raise ConfigError("run.schemes: compare uses exact steady states only")
        state, report = solve_system_state(scheme, sysp, ancilla_params(cfg, scheme), _form_for(cfg, scheme),
                                           cfg.get("run.tol"))
        _check_health(report, scheme)
        states[scheme] = state
    names = list(states)
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            rep = bures_distance(states[a], states[b])
            rows.append([a, b, rep.bures, rep.trace_term])
    path = out / "compare.csv"
    write_table(path, cfg, ["scheme_a", "scheme_b", "bures", "trace_term"], rows)
    return [path]


RUNNERS = {"steady": run_steady, "sweep": run_sweep, "traj": run_trajectory, "wigner": run_wigner,
           "compare": run_compare}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qfeedback", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qfeedback {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--workers", type=int, default=None, help="trajectory worker processes")
    args = parser.parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load(args.config, args.command, args.seed, args.workers)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for path in RUNNERS[args.command](cfg, out):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except TruncationError as exc:
        print(f"truncation error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
