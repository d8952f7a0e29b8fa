"""Experiment orchestration: dispatch, artifact emission, manifests, sweeps.

Exit-code map: 0 success, 2 config error, 3 numerical failure, 4 acceptance
threshold failure. All validation happens before the first artifact is
written, and files are written atomically, so a failed run leaves no partial
artifacts under their final names.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .chaos import ChaosConfig, run_chaos_experiment
from .closure import OdeConfig, integrate, integrate_polar, integrate_xy
from .csvio import format_value, write_csv, write_manifest
from .cycle import annulus, dulac_margin, find_cycle
from .errors import RodlabError, ScenarioError
from .gaussian import entropy_dissipation_check
from .scenario import Scenario
from .sde import (
    SdeConfig,
    initial_gaussian_ensemble,
    initial_replica_ensemble,
    initial_sphere_ensemble,
    run as run_sde,
)
from .types import QState, conf_from_q, make_shear_kappa

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


@dataclass
class RunResult:
    status: int
    out_dir: str
    manifest: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    error: str | None = None


def _apply_overrides(scenario: Scenario, output_dir, seed, stride) -> Scenario:
    if output_dir is not None:
        scenario = replace(scenario, output_dir=str(output_dir))
    if seed is not None:
        scenario = replace(scenario, seed=int(seed))
    if stride is not None and "stride" in scenario.config:
        config = dict(scenario.config)
        config["stride"] = int(stride)
        scenario = replace(scenario, config=config)
    return scenario


def execute(
    scenario: Scenario,
    output_dir=None,
    seed=None,
    stride=None,
    threads: int | None = None,
    plot: bool = True,
) -> RunResult:
    """Run one scenario and write its artifacts under output_dir/name/."""
    scenario = _apply_overrides(scenario, output_dir, seed, stride)
    out_dir = os.path.join(scenario.output_dir, scenario.name)
    started = time.time()
    handlers = {
        "ode": _run_ode,
        "cycle": _run_cycle,
        "sde": _run_sde_experiment,
        "entropy": _run_entropy,
        "chaos": _run_chaos,
        "full-suite": _run_suite,
    }
    try:
        scalars, writers, status = handlers[scenario.experiment](scenario, threads)
    except ScenarioError as exc:
        return RunResult(EXIT_CONFIG, out_dir, error=str(exc))
    except RodlabError as exc:
        return RunResult(EXIT_NUMERICAL, out_dir, error=f"{type(exc).__name__}: {exc}")

    artifacts = []
    for filename, writer in writers:
        path = os.path.join(out_dir, filename)
        if filename.endswith(".png") and not plot:
            continue
        writer(path)
        artifacts.append(path)
    manifest = {
        "name": scenario.name,
        "experiment": scenario.experiment,
        "code_version": __version__,
        "seed": scenario.seed,
        "pe": scenario.params.pe,
        "a": scenario.params.a,
        "n_conc": scenario.params.n_conc,
        "length": scenario.params.length,
        "dim": scenario.params.dim,
        "status": status,
    }
    manifest.update(scalars)
    manifest["wall_time_s"] = time.time() - started
    manifest_path = os.path.join(out_dir, "manifest.txt")
    write_manifest(manifest_path, manifest)
    artifacts.append(manifest_path)
    return RunResult(status, out_dir, manifest=manifest, artifacts=artifacts)


def _ode_config_from(config, **overrides) -> OdeConfig:
    kwargs = {
        "step": config.get("step", 1e-3),
        "t_end": config.get("t_end", 10.0),
        "method": config.get("method", "rk4"),
        "stride": config.get("stride", 10),
    }
    kwargs.update(overrides)
    return OdeConfig(**kwargs)


def _run_ode(scenario: Scenario, threads):
    cfg = scenario.config
    params = scenario.params
    ode = _ode_config_from(cfg)
    q0 = QState(cfg["x0"], cfg["y0"])
    rep = cfg["representation"]
    if rep == "matrix":
        kappa = make_shear_kappa(params)
        traj = integrate(conf_from_q(q0), params, kappa, ode)
        scalars = {
            "max_trace_drift": traj.meta["max_trace_drift"],
            "max_asymmetry": traj.meta["max_asymmetry"],
            "min_eigenvalue": traj.meta["min_eigenvalue"],
            "final_m11": traj.states[-1][0, 0],
            "final_m12": traj.states[-1][0, 1],
        }
    elif rep == "xy":
        traj = integrate_xy(q0, params, ode)
        scalars = {"final_x": traj.states[-1][0], "final_y": traj.states[-1][1]}
    else:
        traj = integrate_polar(q0.r, q0.phi, params, ode)
        scalars = {"final_r": traj.states[-1][0], "final_phi": traj.states[-1][1]}

    from .report import trajectory_figure

    writers = [
        ("trajectory.csv", traj.to_csv),
        ("trajectory.png", lambda p: trajectory_figure(traj, p)),
    ]
    return scalars, writers, EXIT_OK


def _run_cycle(scenario: Scenario, threads):
    cfg = scenario.config
    params = scenario.params
    spec = annulus(params, cfg["eps1"], cfg["eps2"])
    ode = _ode_config_from({"step": cfg["step"], "t_end": 1.0})
    report = find_cycle(params, spec, ode)
    scalars = {
        "r1": spec.r1,
        "r2": spec.r2,
        "pe_max": spec.pe_max,
        "dulac_margin": dulac_margin(spec, params),
        "x_star": report.x_star,
        "period": report.period,
        "rho": report.rho,
        "rho_tilde": report.rho_tilde,
        "log_rho": report.log_rho,
        "log_rho_tilde": report.log_rho_tilde,
        "decay_rate": report.decay_rate,
        "eig_min": report.eig_min,
        "eig_max": report.eig_max,
    }
    from .report import cycle_figure

    writers = [
        ("cycle_orbit.csv", report.to_csv),
        ("cycle_orbit.png", lambda p: cycle_figure(report, p)),
    ]
    return scalars, writers, EXIT_OK


def _run_sde_experiment(scenario: Scenario, threads):
    cfg = scenario.config
    params = scenario.params
    model = cfg["model"]
    sde_cfg = SdeConfig(
        step=cfg["step"],
        t_end=cfg["t_end"],
        n_particles=cfg["n_particles"],
        seed=scenario.seed,
        scheme=cfg["scheme"],
        stride=cfg["stride"],
    )
    q0 = QState(cfg["x0"], cfg["y0"])
    cov0 = conf_from_q(q0).m * params.length_sq
    if model == "original":
        initial = initial_sphere_ensemble(sde_cfg.n_particles, params, scenario.seed)
    elif model == "replica":
        initial = initial_replica_ensemble(sde_cfg.n_particles, params, scenario.seed, cov0)
    else:
        initial = initial_gaussian_ensemble(
            sde_cfg.n_particles, params, scenario.seed, cov0, model_tag=model)
    kappa = make_shear_kappa(params)
    series = run_sde(model, initial, params, kappa, sde_cfg)
    scalars = {
        "final_msq_norm": series.msq_norm[-1],
        "final_m11": series.m_emp[-1][0, 0],
        "final_m12": series.m_emp[-1][0, 1],
    }
    ode_times = ode_states = None
    if cfg["compare_ode"] and model in ("meanfield-a", "meanfield-b"):
        ode = OdeConfig(step=cfg["step"], t_end=cfg["t_end"], stride=cfg["stride"])
        traj = integrate(series.m_emp[0], params, kappa, ode)
        ode_times, ode_states = traj.times, traj.states
        k = min(len(ode_times), len(series.times))
        sup = float(np.max(np.linalg.norm(
            series.m_emp[:k] - ode_states[:k], axis=(1, 2))))
        scalars["sup_moment_gap"] = sup

    from .report import moments_figure

    writers = [
        ("moments.csv", series.to_csv),
        ("moments.png",
         lambda p: moments_figure(series, p, ode_times=ode_times, ode_states=ode_states)),
    ]
    return scalars, writers, EXIT_OK


def _run_entropy(scenario: Scenario, threads):
    cfg = scenario.config
    params = scenario.params
    kappa = make_shear_kappa(params)
    m1 = conf_from_q(QState(cfg["x1"], cfg["y1"]))
    m2 = conf_from_q(QState(cfg["x2"], cfg["y2"]))
    ode = OdeConfig(step=cfg["step"], t_end=cfg["t_end"], stride=1)
    series = entropy_dissipation_check(m1, m2, params, kappa, ode)
    ok = np.isfinite(series.residual)
    scalars = {
        "entropy_initial": series.entropy[0],
        "entropy_final": series.entropy[-1],
        "max_residual": float(np.max(series.residual[ok])),
        "entropy_monotone": bool(np.all(np.diff(series.entropy) <= 1e-14)),
    }
    from .report import entropy_figure

    writers = [
        ("entropy.csv", series.to_csv),
        ("entropy.png", lambda p: entropy_figure(series, p)),
    ]
    return scalars, writers, EXIT_OK


def _run_chaos(scenario: Scenario, threads):
    cfg = scenario.config
    params = scenario.params
    chaos_cfg = ChaosConfig(
        replica_counts=tuple(cfg["replica_counts"]),
        trials=cfg["trials"],
        horizon=cfg["horizon"],
        step=cfg["step"],
        seed=scenario.seed,
        law_term=cfg["law_term"],
        maier_saupe=cfg["maier_saupe"],
    )
    kappa = make_shear_kappa(params)
    result = run_chaos_experiment(chaos_cfg, params, kappa)
    scalars = {f"mean_I{i}": m for i, m in zip(result.replica_counts, result.means)}
    scalars.update(result.fit_record())
    from .report import chaos_figure

    writers = [
        ("chaos_trials.csv", result.trials_csv),
        ("chaos_summary.csv", result.summary_csv),
        ("chaos_fit.png", lambda p: chaos_figure(result, p)),
    ]
    return scalars, writers, EXIT_OK


def _run_suite(scenario: Scenario, threads):
    from .acceptance import run_criteria

    wanted = scenario.config.get("criteria", "all")
    names = None if wanted in ("all", "") else [w.strip() for w in str(wanted).split(",")]
    results = run_criteria(names)
    scalars = {}
    all_passed = True
    for res in results:
        scalars[f"criterion_{res.cid:02d}_{res.name}"] = "pass" if res.passed else "FAIL"
        scalars[f"criterion_{res.cid:02d}_elapsed_s"] = round(res.elapsed, 3)
        all_passed &= res.passed

    def write_results(path):
        rows = (
            [res.cid, res.name, "pass" if res.passed else "fail", res.elapsed]
            + [f"{k}={format_value(v)}" for k, v in sorted(res.details.items())]
            for res in results
        )
        maxd = max(len(r.details) for r in results) if results else 0
        header = ["id", "name", "status", "elapsed_s"] + [f"detail{i}" for i in range(maxd)]
        padded = (list(r) + [""] * (len(header) - len(r)) for r in rows)
        write_csv(path, header, padded)

    writers = [("suite_results.csv", write_results)]
    return scalars, writers, EXIT_OK if all_passed else EXIT_ACCEPTANCE


def sweep(
    scenario: Scenario,
    axis: str,
    values: list,
    output_dir=None,
    seed=None,
    stride=None,
    threads: int | None = None,
    plot: bool = True,
) -> RunResult:
    """Execute the scenario once per axis value (fail-soft per row).

    axis names either a [params] field or a key of the experiment's config
    block. Emits one artifact directory per row plus a combined CSV keyed by
    the swept value; any failed row is recorded and the final status is
    nonzero if any row failed.
    """
    scenario = _apply_overrides(scenario, output_dir, seed, stride)
    if not values:
        return RunResult(EXIT_CONFIG, scenario.output_dir, error="empty sweep values")
    param_fields = {"pe", "a", "n_conc", "length", "dim"}
    if axis not in param_fields and axis not in scenario.config:
        return RunResult(
            EXIT_CONFIG, scenario.output_dir,
            error=f"unknown sweep axis '{axis}'",
        )

    def row_scenario(value):
        name = f"{scenario.name}-{axis}-{value}"
        if axis in param_fields:
            try:
                params = replace(scenario.params, **{axis: value})
            except RodlabError as exc:
                raise ScenarioError(str(exc)) from exc
            return replace(scenario, name=name, params=params)
        config = dict(scenario.config)
        config[axis] = value
        return replace(scenario, name=name, config=config)

    def run_row(value):
        try:
            row = row_scenario(value)
        except ScenarioError as exc:
            return RunResult(EXIT_CONFIG, scenario.output_dir, error=str(exc))
        return execute(row, threads=1, plot=plot)

    max_workers = max(1, threads or 1)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_row, values))
    else:
        results = [run_row(v) for v in values]

    out_dir = os.path.join(scenario.output_dir, scenario.name)
    skip = {"name", "experiment", "code_version", "wall_time_s", "status"}
    scalar_keys = []
    for res in results:
        for key in res.manifest:
            if key not in skip and key not in scalar_keys:
                scalar_keys.append(key)
    header = [axis, "status", "error"] + scalar_keys
    rows = []
    for value, res in zip(values, results):
        row = [value, res.status, res.error or ""]
        row += [res.manifest.get(k, "") for k in scalar_keys]
        rows.append(row)
    combined = os.path.join(out_dir, "sweep_summary.csv")
    write_csv(combined, header, rows)
    artifacts = [combined]
    if plot:
        from .report import sweep_figure

        numeric_scalars = [
            {k: v for k, v in res.manifest.items()
             if k not in skip and isinstance(v, (int, float))} if res.status == EXIT_OK else None
            for res in results
        ]
        fig_path = os.path.join(out_dir, "sweep_summary.png")
        sweep_figure(axis, values, numeric_scalars, fig_path)
        if os.path.exists(fig_path):
            artifacts.append(fig_path)
    status = EXIT_OK if all(r.status == EXIT_OK for r in results) else (
        max(r.status for r in results))
    manifest = {
        "name": scenario.name,
        "axis": axis,
        "values": ",".join(str(v) for v in values),
        "rows_failed": sum(1 for r in results if r.status != EXIT_OK),
        "status": status,
    }
    write_manifest(os.path.join(out_dir, "sweep_manifest.txt"), manifest)
    return RunResult(status, out_dir, manifest=manifest, artifacts=artifacts)
