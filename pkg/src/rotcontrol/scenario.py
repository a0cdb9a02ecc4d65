"""Scenario orchestration: config -> guess, target, optimization, final dynamics and output files."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .angular import Basis, analytic_operator
from .config import RunConfig, serialize_config
from .dynamics import Ensemble, FieldTrace, TimeGrid, propagate, propagate_density
from .errors import RotControlError, SweepAborted
from .model import MODELS, HamiltonianModel
from .observables import CostSpec, cos2_split_operators, expectation, fidelity
from .optim import DensityObjective, PureStateObjective, krotov_iterate, lapert_iterate
from .targets import boltzmann_state, orientation_target, thermal_alignment_target
from .units import FS_PER_AU

log = logging.getLogger(__name__)

NUMBER_FORMAT = "{:.14e}"  # 15 significant digits


class ScenarioError(RotControlError):
    """Any failure while running a scenario, prefixed with the run name and stage."""


@dataclass
class Task:
    kind: str
    objective: object
    initial: np.ndarray  # ket, or density matrix for the thermal task
    target: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def mixed(self) -> bool:
        return self.initial.ndim == 2


def build_model(cfg: RunConfig) -> HamiltonianModel:
    basis = Basis(cfg.basis.j_max, m=cfg.basis.m)
    params = cfg.molecule.params()
    if cfg.model.kind == "xy":
        return MODELS["xy"](params, basis, cfg.model.phase_diff_rad)
    return MODELS[cfg.model.kind](params, basis)


def build_time_grid(cfg: RunConfig) -> TimeGrid:
    return TimeGrid(cfg.t_f_au, cfg.time.n_steps)


def build_guess(cfg: RunConfig, grid: TimeGrid) -> FieldTrace:
    """Sum of Gaussians A exp(-(t - t0)^2 / 2 sigma^2) per channel, sampled at step midpoints."""
    t = grid.midpoints
    period = cfg.molecule.params().rotational_period
    values = np.zeros((len(cfg.guess.channels), t.size))
    for c, chan in enumerate(cfg.guess.channels):
        for p in chan.pulses:
            t0 = p.center_periods * period
            values[c] += p.amplitude * np.exp(-((t - t0) ** 2) / (2.0 * p.sigma_au**2))
    return FieldTrace(grid, values)


def build_task(cfg: RunConfig, model: HamiltonianModel) -> Task:
    basis = model.basis
    task = cfg.task
    if task.kind == "thermal":
        rho0 = boltzmann_state(task.temperature_K, basis, model.B)
        rho_f, report = thermal_alignment_target(task.temperature_K, task.j_f, basis, model.B)
        obj = DensityObjective(rho0, rho_f, task.ket_cutoff)
        return Task("thermal", obj, rho0, rho_f, report.as_dict())
    psi0 = basis.ket(0, 0)
    if task.kind == "orientation":
        target = orientation_target(task.j_f, basis)
        rep = {"j_f": task.j_f, "coefficients": [float(np.real(target[basis.index(j, 0)]))
                                                  for j in range(task.j_f + 1)]}
    else:
        target = basis.ket(task.j, task.m)
        rep = {"j": task.j, "m": task.m}
    return Task(task.kind, PureStateObjective(psi0, target), psi0, target, rep)


# --------------------------------------------------------------------- observers

def _observers(cfg: RunConfig, basis: Basis) -> dict:
    ops = {}
    for name in cfg.output.observables:
        if name == "cos":
            ops[name] = analytic_operator(basis, ("z",))
        elif name == "cos2":
            ops[name] = analytic_operator(basis, ("z", "z"))
        elif name in ("cos2_p", "cos2_c"):
            perm, coh = cos2_split_operators(basis)
            ops[name] = perm if name == "cos2_p" else coh
    j2 = np.diag(basis.j * (basis.j + 1.0))
    jzd = np.diag(basis.mq.astype(float))
    obs = {name: (lambda s, op=op: expectation(s, op)) for name, op in ops.items()}
    if "jz_orientation" in cfg.output.observables:
        def jz_measure(s):
            n2 = expectation(s, j2)
            return expectation(s, jzd) / math.sqrt(n2) if n2 > 1e-14 else float("nan")
        obs["jz_orientation"] = jz_measure
    if cfg.output.populations:
        def populations(s):
            if isinstance(s, Ensemble):
                return np.abs(s.kets) ** 2 @ s.weights
            return np.abs(s) ** 2
        obs["populations"] = populations
    return obs


OBSERVABLE_UNITS = {"cos": "1", "cos2": "1", "cos2_p": "1", "cos2_c": "1", "jz_orientation": "1"}
OBSERVABLE_COLUMNS = {"cos": "cos_theta", "cos2": "cos2_theta", "cos2_p": "cos2_theta_p",
                      "cos2_c": "cos2_theta_c", "jz_orientation": "jz_over_sqrt_j2"}


def extended_field(cfg: RunConfig, opt: FieldTrace) -> FieldTrace:
    """Optimized field followed by a field-free window of ``output.post_periods`` rotational periods."""
    grid = opt.grid
    n_post = int(round(cfg.output.post_periods * cfg.molecule.params().rotational_period / grid.dt))
    if n_post == 0:
        return opt
    ext = TimeGrid(grid.dt * (grid.n_steps + n_post), grid.n_steps + n_post)
    vals = np.concatenate([opt.values, np.zeros((opt.channels, n_post))], axis=1)
    return FieldTrace(ext, vals)


def final_dynamics(cfg: RunConfig, model: HamiltonianModel, task: Task, fld: FieldTrace):
    obs = _observers(cfg, model.basis)
    run = extended_field(cfg, fld)
    if task.mixed:
        return propagate_density(task.initial, model, run, observers=obs, stride=cfg.output.stride,
                                 cutoff=cfg.task.ket_cutoff)
    return propagate(task.initial, model, run, observers=obs, stride=cfg.output.stride)


# --------------------------------------------------------------------- writers

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return NUMBER_FORMAT.format(float(x))


def write_table(path: Path, names: list[str], units: list[str], rows) -> None:
    """CSV with a column-name row, a units row, then data rows; numbers use 15 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        fh.write(",".join(units) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


CONVERGENCE_COLUMNS = [
    ("iteration", "count", "iteration"),
    ("fidelity", "1", "fidelity"),
    ("running_cost", "1", "running_cost"),
    ("total_cost", "1", "total_cost"),
    ("max_abs_field", "a.u.", "max_field"),
    ("delta_total_cost", "1", "delta_c"),
    ("predicted_gain", "1", "predicted_gain"),
    ("total_variation", "a.u.", "total_variation"),
    ("fallbacks", "count", "fallbacks"),
    ("unresolved", "count", "unresolved"),
]


def write_convergence(path: Path, records) -> None:
    write_table(path, [c[0] for c in CONVERGENCE_COLUMNS], [c[1] for c in CONVERGENCE_COLUMNS],
                ([getattr(r, c[2]) for c in CONVERGENCE_COLUMNS] for r in records))


def write_fields(out: Path, model: HamiltonianModel, guess: FieldTrace, opt: FieldTrace) -> list[str]:
    names = []
    t = guess.grid.midpoints
    for c, ch in enumerate(model.channel_names):
        name = f"field_{ch}.csv"
        write_table(out / name, ["t", "t", "E_guess", "E_opt"], ["a.u.", "fs", "a.u.", "a.u."],
                    zip(t, t * FS_PER_AU, guess.values[c], opt.values[c]))
        names.append(name)
    return names


def write_dynamics(path: Path, cfg: RunConfig, basis: Basis, result) -> None:
    names, units = ["t", "t"], ["a.u.", "fs"]
    cols = [result.times, result.times * FS_PER_AU]
    if cfg.output.populations:
        pops = np.asarray(result.series["populations"])
        for i, (j, m) in enumerate(basis.labels):
            names.append(f"P_j{j}_m{m}")
            units.append("1")
            cols.append(pops[:, i])
    for key in cfg.output.observables:
        names.append(OBSERVABLE_COLUMNS[key])
        units.append(OBSERVABLE_UNITS[key])
        cols.append(result.series[key])
    write_table(path, names, units, zip(*cols))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_summary(path: Path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------- runs

def _post_pulse_stats(cfg: RunConfig, result) -> dict:
    if cfg.output.post_periods <= 0:
        return {}
    t_f = cfg.t_f_au
    mask = result.times >= t_f * (1 - 1e-12)
    stats = {"samples": int(mask.sum())}
    for key in ("cos2_p", "cos2_c", "cos2", "cos"):
        if key in result.series:
            vals = np.asarray(result.series[key])[mask]
            stats[key] = {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max()),
                          "spread": float(vals.max() - vals.min())}
    return stats


def _stage(cfg, stage, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except SweepAborted:
        raise
    except (RotControlError, ValueError, FloatingPointError) as exc:
        raise ScenarioError(f"[{cfg.name}] {stage}: {exc}") from exc


def run_scenario(cfg: RunConfig, out_dir: str | Path, progress=None) -> dict:
    """Run one configuration and write its files into ``out_dir``; returns the summary dict.

    An optimization aborted by the field cap or a non-finite state still writes the
    files for the iterations completed before the abort; ``status`` is then ``aborted``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    (out / "config.yaml").write_text(serialize_config(cfg))
    model = _stage(cfg, "model", build_model, cfg)
    grid = _stage(cfg, "time grid", build_time_grid, cfg)
    guess = _stage(cfg, "guess", build_guess, cfg, grid)
    task = _stage(cfg, "target", build_task, cfg, model)
    opt = cfg.optimizer
    cost = CostSpec(opt.lambda_au, opt.power)
    runner = krotov_iterate if opt.method == "krotov" else lapert_iterate
    status, error = "completed", None
    try:
        res = _stage(cfg, "optimization", runner, model, task.objective, guess, cost, opt.iterations,
                     opt.stagnation_eps, progress, opt.field_cap_au)
    except SweepAborted as exc:
        res, status, error = exc.partial, "aborted", f"[{cfg.name}] optimization: {exc}"
        log.error("%s", error)
    write_convergence(out / "convergence.csv", res.records)
    field_files = write_fields(out, model, guess, res.field)
    dyn = _stage(cfg, "final propagation", final_dynamics, cfg, model, task, res.field)
    write_dynamics(out / "dynamics.csv", cfg, model.basis, dyn)
    last = res.records[-1]
    deltas = [r.delta_c for r in res.records[1:]]
    summary = {
        "name": cfg.name,
        "version": __version__,
        "status": status,
        "error": error,
        "config": cfg.to_dict(),
        "results": {
            "final_fidelity": last.fidelity,
            "iterations": last.iteration,
            "converged_by_stagnation": res.converged,
            "max_abs_field_au": res.field.max_abs(),
            "guess_fidelity": res.records[0].fidelity,
            "monotonic": res.monotonic(),
            "min_delta_total_cost": min(deltas) if deltas else None,
            "fallbacks_total": sum(r.fallbacks for r in res.records),
            "fallbacks_max_fraction_per_iteration":
                max((r.fallbacks for r in res.records), default=0) / grid.n_steps,
            "fallbacks_fraction_total":
                sum(r.fallbacks for r in res.records) / (grid.n_steps * max(1, last.iteration)),
            "unresolved_total": sum(r.unresolved for r in res.records),
            "monotonicity_bound": res.bound_report,
            "final_observables": {k: np.asarray(v)[np.searchsorted(dyn.times, cfg.t_f_au * (1 - 1e-12))]
                                  for k, v in dyn.series.items() if k != "populations"},
            "post_pulse": _post_pulse_stats(cfg, dyn),
            "target": task.report,
            "wall_time_s": time.perf_counter() - t0,
        },
        "files": {"convergence": "convergence.csv", "fields": field_files, "dynamics": "dynamics.csv",
                  "config": "config.yaml"},
    }
    write_summary(out / "summary.json", summary)
    return summary


def propagate_scenario(cfg: RunConfig, out_dir: str | Path, zero_field: bool = False) -> dict:
    """Propagate the guess (or no field) without optimizing; checks the revival for field-free runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = _stage(cfg, "model", build_model, cfg)
    grid = _stage(cfg, "time grid", build_time_grid, cfg)
    guess = FieldTrace.zeros(grid, model.channels) if zero_field else _stage(cfg, "guess", build_guess, cfg, grid)
    task = _stage(cfg, "target", build_task, cfg, model)
    dyn = _stage(cfg, "propagation", final_dynamics, cfg, model, task, guess)
    write_fields(out, model, guess, guess)
    write_dynamics(out / "dynamics.csv", cfg, model.basis, dyn)
    final = dyn.final
    summary = {"name": cfg.name, "version": __version__, "config": cfg.to_dict(),
               "results": {"fidelity": fidelity(final, task.target), "max_abs_field_au": guess.max_abs()}}
    periods = cfg.time.t_f_periods + cfg.output.post_periods
    if guess.max_abs() == 0.0 and abs(periods - round(periods)) < 1e-12:
        dev = float(np.max(np.abs(final - task.initial)))
        summary["results"]["revival"] = {"max_deviation": dev, "tolerance": 1e-8, "pass": dev < 1e-8}
    write_summary(out / "summary.json", summary)
    return summary
