"""Subcommand implementations. Each takes validated settings and returns a RunReport."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import numpy as np

from ..bounds import (
    NonConvergence,
    TheoremViolation,
    bounds_report,
)
from ..liftcheck import run_dictionary
from ..model import TargetMeasure, make_potential
from ..samplers import (
    PhaseState,
    bps_trajectory,
    chain_rngs,
    hamiltonian_flow,
    rhmc_trajectory,
    run_langevin,
    run_overdamped,
)
from ..spectral import (
    assemble_galerkin,
    circle_mixing_times,
    critical_langevin_norm,
    estimate_poincare_constant,
    langevin_gap,
    loglog_slope,
    spectral_gap,
    spectral_report,
)
from .config import parse_eps_rule, range_values
from .report import EXIT_NONCONVERGED, EXIT_VIOLATION, RunReport, output_paths, tagged, write_csv

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"process": "langevin", "potential": "quadratic", "gamma": 1.0, "horizon": 10.0,
                 "chains": 4, "step": 0.01},
    "liftcheck": {"process": "langevin", "potential": "quadratic", "gamma": 1.0, "degree": 4,
                  "samples": 1_000_000, "k": 4.0},
    "spectral": {"process": "langevin", "potential": "quadratic", "gamma": 2.0, "degree": 16,
                 "grid": "0:5:0.01", "eps": [math.exp(-1)]},
    "circle": {"n": [9, 17, 33, 65], "eps_rule": "1/n"},
    "bounds": {"gamma": "auto", "eps": math.exp(-1), "measure": False},
}


def with_defaults(command: str, values: dict[str, Any]) -> dict[str, Any]:
    merged = dict(DEFAULTS.get(command, {}))
    merged.update({k: v for k, v in values.items() if v is not None})
    merged.setdefault("seed", 0)
    return merged


def build_potential(values: dict[str, Any]):
    name = values.get("potential", "quadratic")
    if name == "double_well":
        return make_potential(name, beta=values.get("beta", 0.5))
    return make_potential(name, m=values.get("m", 1.0), d=values.get("d", 1))


def _config_echo(values: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in sorted(values.items()) if k not in ("threads",)}


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    n = a.shape[0]
    se = float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return float(a.mean()), se


# ---------------------------------------------------------------------------
# simulate


def simulate(values: dict[str, Any]) -> RunReport:
    process = values["process"]
    pot = build_potential(values)
    d = pot.dim
    gamma, horizon, chains, h = float(values["gamma"]), float(values["horizon"]), values["chains"], values["step"]
    seed = values["seed"]
    gens = chain_rngs(seed, chains)
    # start near the bulk of mu: exact draws for quadratics
    x0 = np.stack([g.standard_normal(d) * pot.length_scale for g in gens])
    v0 = np.stack([g.standard_normal(d) for g in gens])
    rows: list[list] = []
    counts = np.zeros((chains, 2))
    kinetic = process != "overdamped"

    def row(c, t, x, v, event=""):
        rows.append([c, float(t), *map(float, x), *(map(float, v) if kinetic else ()), event])

    steps = int(round(horizon / h))
    every = max(1, steps // 1000)
    if process in ("overdamped", "langevin", "hamiltonian"):
        state = PhaseState(x0, v0)
        for c in range(chains):
            row(c, 0.0, x0[c], v0[c], "start")
        if process == "overdamped":
            xf, rec = run_overdamped(x0, pot, h, steps, gens, record_every=every)
            snaps = [(xr, v0) for xr in rec]
            final = PhaseState(xf, v0)
        elif process == "langevin":
            final, snaps = run_langevin(state, pot, gamma, h, steps, gens, record_every=every)
        else:
            snaps = []
            final = state
            for i in range(1, steps + 1):
                final = hamiltonian_flow(final, pot, h, h)
                if i % every == 0:
                    snaps.append((final.x, final.v))
        for i, (xs, vs) in enumerate(snaps, start=1):
            for c in range(chains):
                row(c, i * every * h, xs[c], vs[c])
    else:
        xs, vs = [], []
        for c, g in enumerate(gens):
            start = PhaseState(x0[c], v0[c])
            row(c, 0.0, x0[c], v0[c], "start")
            if process == "rhmc":
                end, events = rhmc_trajectory(start, pot, gamma, horizon, g)
            else:
                end, events = bps_trajectory(start, pot, gamma, horizon, g)
            for e in events:
                row(c, e.time, e.x, e.v_post, e.kind)
                counts[c, 0 if e.kind == "bounce" else 1] += 1
            row(c, horizon, end.x, end.v, "end")
            xs.append(end.x)
            vs.append(end.v)
        final = PhaseState(np.array(xs), np.array(vs))
    report_path, csv_path = output_paths(values.get("out"), "samples")
    header = ["chain", "t", *(f"x{i}" for i in range(d)), *((f"v{i}" for i in range(d)) if kinetic else ()), "event"]
    write_csv(csv_path, header, rows)
    report = RunReport("simulate", seed, _config_echo(values), files=[str(csv_path)])
    res = {}
    for i in range(d):
        m, se = _mean_se(final.x[:, i])
        res[f"mean_x{i}"] = tagged(m, "monte-carlo", se)
        m2, se2 = _mean_se(final.x[:, i] ** 2)
        res[f"second_moment_x{i}"] = tagged(m2, "monte-carlo", se2)
        if kinetic:
            m2, se2 = _mean_se(final.v[:, i] ** 2)
            res[f"second_moment_v{i}"] = tagged(m2, "monte-carlo", se2)
    if process in ("rhmc", "bps"):
        for j, kind in enumerate(("bounce", "refresh")):
            m, se = _mean_se(counts[:, j])
            res[f"{kind}_events_per_chain"] = tagged(m, "monte-carlo", se)
    report.results = res
    report.verdicts = {"finite": bool(np.all(np.isfinite(final.x)))}
    report.files.append(str(report_path))
    report.write(report_path)
    return report


# ---------------------------------------------------------------------------
# liftcheck


def liftcheck(values: dict[str, Any]) -> RunReport:
    pot = build_potential(values)
    measure = TargetMeasure(pot)
    lift = run_dictionary(
        values["process"], measure, values["degree"], values["samples"], values["seed"],
        float(values["gamma"]), float(values["k"]),
    )
    ref_tag = "exact" if pot.is_quadratic else "estimated"
    pairs = {}
    verdicts = {}
    for e in lift.entries:
        key = f"{e.f},{e.g}"
        pairs[key] = {
            "first_order": tagged(e.first_order, "monte-carlo", e.first_order_se),
            "first_order_target": tagged(0.0, "exact"),
            "second_order": tagged(e.second_order, "monte-carlo", e.second_order_se),
            "dirichlet": tagged(e.dirichlet, ref_tag),
        }
        verdicts[key] = e.passed
    verdicts["all_pairs"] = lift.passed
    report_path, _ = output_paths(values.get("out"), "liftcheck")
    report = RunReport("liftcheck", values["seed"], _config_echo(values))
    report.results = {"samples": tagged(lift.samples, "exact"), "k": tagged(lift.k, "exact"), "pairs": pairs}
    report.verdicts = verdicts
    if not lift.passed:
        report.exit_code = EXIT_VIOLATION
    report.files.append(str(report_path))
    report.write(report_path)
    return report


# ---------------------------------------------------------------------------
# spectral


def _eps_list(values) -> list[float]:
    eps = values.get("eps", [math.exp(-1)])
    return [float(e) for e in (eps if isinstance(eps, list) else [eps])]


def spectral(values: dict[str, Any]) -> RunReport:
    pot = build_potential(values)
    if values.get("sweep_gamma"):
        return _gamma_sweep(values, pot)
    grid = range_values(values["grid"])
    eps_values = _eps_list(values)
    sr = spectral_report(values["process"], pot, float(values["gamma"]), grid, eps_values, values["degree"])
    report_path, csv_path = output_paths(values.get("out"), "spectral")
    write_csv(csv_path, ["t", "norm"], zip(sr.curve.times.tolist(), sr.curve.values.tolist()))
    res: dict[str, Any] = {
        "gap": tagged(sr.gap, "galerkin"),
        "sing": tagged(sr.sing, "galerkin"),
        "relaxation_times": {f"eps={e:.6g}": tagged(t, "galerkin") for e, t in sr.relaxation_times.items()},
        "convergence": [
            {
                "degree": tagged(r["degree"], "exact"),
                "gap": tagged(r["gap"], "galerkin"),
                "sing": tagged(r["sing"], "galerkin"),
                "relaxation_times": {f"eps={e:.6g}": tagged(t, "galerkin") for e, t in r["relaxation_times"].items()},
            }
            for r in sr.convergence
        ],
    }
    if pot.is_quadratic and values["process"] == "langevin":
        m = pot.stiffness
        res["gap_closed_form"] = tagged(langevin_gap(float(values["gamma"]), m), "exact")
        if float(values["gamma"]) == 2.0 and m == 1.0:
            err = float(np.max(np.abs(sr.curve.values - critical_langevin_norm(grid))))
            res["max_error_vs_closed_form"] = tagged(err, "galerkin")
    report = RunReport("spectral", values["seed"], _config_echo(values), files=[str(csv_path)])
    report.results = res
    report.verdicts = {"converged": sr.converged}
    if not sr.converged:
        report.exit_code = EXIT_NONCONVERGED
    report.files.append(str(report_path))
    report.write(report_path)
    return report


def _gamma_sweep(values, pot) -> RunReport:
    gammas = range_values(values["sweep_gamma"])
    closed = pot.is_quadratic and values["process"] == "langevin"
    if closed:
        gaps = np.array([langevin_gap(g, pot.stiffness) for g in gammas])
    else:
        gaps = np.array([spectral_gap(assemble_galerkin(values["process"], pot, g, values["degree"])) for g in gammas])
    report_path, csv_path = output_paths(values.get("out"), "gap_curve")
    write_csv(csv_path, ["gamma", "gap"], zip(gammas.tolist(), gaps.tolist()))
    i = int(np.argmax(gaps))
    tag = "exact" if closed else "galerkin"
    report = RunReport("spectral", values["seed"], _config_echo(values), files=[str(csv_path)])
    report.results = {"argmax_gamma": tagged(gammas[i], tag), "max_gap": tagged(gaps[i], tag)}
    report.verdicts = {
        "increasing_before_max": bool(np.all(np.diff(gaps[: i + 1]) > 0)),
        "decreasing_after_max": bool(np.all(np.diff(gaps[i:]) < 0)),
    }
    report.files.append(str(report_path))
    report.write(report_path)
    return report


# ---------------------------------------------------------------------------
# circle


def circle(values: dict[str, Any]) -> RunReport:
    ns = list(values["n"])
    rule = parse_eps_rule(values["eps_rule"])
    rows = circle_mixing_times(ns, rule)
    report_path, csv_path = output_paths(values.get("out"), "circle")
    write_csv(
        csv_path,
        ["n", "eps", "base_mixing", "lifted_mixing"],
        [[r["n"], r["eps"], "" if r["base"] is None else r["base"], "" if r["lifted"] is None else r["lifted"]]
         for r in rows],
    )
    res: dict[str, Any] = {
        "mixing_times": {
            str(r["n"]): {"eps": tagged(r["eps"], "exact"), "base": tagged(r["base"], "exact"),
                          "lifted": tagged(r["lifted"], "exact")}
            for r in rows
        }
    }
    verdicts: dict[str, Any] = {}
    for kind in ("base", "lifted"):
        times = [r[kind] for r in rows]
        verdicts[f"{kind}_mixes"] = all(t is not None for t in times)
        if len(ns) >= 2 and all(t is not None for t in times):
            res[f"{kind}_slope"] = tagged(loglog_slope(ns, times), "exact")
    report = RunReport("circle", values["seed"], _config_echo(values), files=[str(csv_path)])
    report.results = res
    report.verdicts = verdicts
    report.files.append(str(report_path))
    report.write(report_path)
    return report


# ---------------------------------------------------------------------------
# bounds


def bounds(values: dict[str, Any]) -> RunReport:
    pot = None
    m_prov = "exact"
    m = values.get("m", 1.0)
    kappa = values.get("kappa_minus", 0.0)
    if "potential" in values:
        pot = build_potential(values)
        kappa = values.get("kappa_minus", pot.kappa_minus)
        if pot.is_quadratic:
            m = pot.stiffness
        else:
            m, converged = estimate_poincare_constant(pot)
            m_prov = "estimated"
            if not converged:
                raise NonConvergence("Poincare constant estimate not converged in truncation degree")
    gamma = None if values.get("gamma", "auto") == "auto" else float(values["gamma"])
    T = values.get("T")
    br = bounds_report(
        m, kappa, T=None if values.get("auto_T") or T is None else T, gamma=gamma,
        eps=float(values.get("eps", math.exp(-1))), m_provenance=m_prov,
        potential=pot if values.get("measure") else None,
    )
    res = {k: tagged(v, br.provenance.get(k, "exact"), exact=br.exact_constants.get(k)) for k, v in br.values().items()}
    report_path, _ = output_paths(values.get("out"), "bounds")
    report = RunReport("bounds", values["seed"], _config_echo(values))
    report.results = res
    verdicts: dict[str, Any] = {"nu_positive": br.nu > 0}
    if br.measured:
        verdicts["ordering_chain"] = True
        verdicts["converged"] = bool(br.converged)
        verdicts["certified_C_conservative"] = br.corollary_C >= br.measured["optimality_C"]
        if not br.converged:
            report.exit_code = EXIT_NONCONVERGED
    report.verdicts = verdicts
    report.files.append(str(report_path))
    report.write(report_path)
    return report


HANDLERS = {"simulate": simulate, "liftcheck": liftcheck, "spectral": spectral, "circle": circle, "bounds": bounds}


def out_dir(values: dict[str, Any], default: str) -> Path:
    return Path(values.get("out") or default)


__all__ = ["HANDLERS", "with_defaults", "build_potential", "TheoremViolation", "out_dir"]
