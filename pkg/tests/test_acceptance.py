"""Acceptance criteria 1-10.

Each test appends one ``criterion N: PASS|FAIL ...`` line to the session report (printed in the
terminal summary) before asserting. The optimization criteria use the content-addressed run
cache in ``<repo>/.run_cache`` (override with ROTCONTROL_CACHE); with an empty cache they run the
shipped presets first, which takes hours.
"""
import csv
import itertools
import math
import os
from pathlib import Path

import numpy as np
import pytest

from rotcontrol.angular import COS, COS2, COS2X, COS2Y, COS3, COSXCOSY, AngularGrid, Basis, analytic_operator
from rotcontrol.angular import multiplication_operator
from rotcontrol.cli import coupling_magnitudes, largest_branch_scan, preset_names, preset_text
from rotcontrol.config import parse_batch
from rotcontrol.dynamics import FieldTrace, TimeGrid, dense_step, propagate, revival_time, step
from rotcontrol.model import CO, hamiltonian_xy, hamiltonian_z_full
from rotcontrol.optim import Sweeper, root_sensitivity_scan
from rotcontrol.optim.cubic import CubicUpdateProblem, cubic_residual, real_roots_cubic
from rotcontrol.runcache import cached_run
from rotcontrol.scenario import build_guess, build_model, build_task, build_time_grid
from rotcontrol.targets import boltzmann_state, diagonal_projection_cos2, thermal_alignment_target

CACHE = Path(os.environ.get("ROTCONTROL_CACHE", Path(__file__).resolve().parents[1] / ".run_cache"))


def record(report, n, ok, detail):
    report.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def preset_runs(name):
    return {r.name: r for r in parse_batch(preset_text(name))}


def run(cfg):
    summary, d = cached_run(cfg, CACHE)
    return summary, d


def fidelity_history(d):
    with open(d / "convergence.csv") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("fidelity")
    return [float(r[col]) for r in rows[2:]]


# ---------------------------------------------------------------- 1
def test_criterion_1_exact_identities(criteria_report):
    b = Basis(15)
    c2 = analytic_operator(b, ("z", "z"))
    ext = max(abs(c2[b.index(j, m), b.index(j, m)] - 1 / (2 * j + 3)) for j in range(16) for m in (j, -j))
    quad = 0.0
    for basis, funcs in ((Basis(6), (COS, COS2, COS3, COS2X, COS2Y, COSXCOSY)), (Basis(15, m=0), (COS, COS2, COS3))):
        grid = AngularGrid(basis.j_max)
        for f in funcs:
            quad = max(quad, np.max(np.abs(multiplication_operator(basis, grid, f) - analytic_operator(basis, f.factors))))
    model = hamiltonian_xy(CO, Basis(15), math.pi / 4)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=model.basis.size) + 1j * rng.normal(size=model.basis.size)
    psi /= np.linalg.norm(psi)
    rev = np.max(np.abs(propagate(psi, model, FieldTrace.zeros(TimeGrid(revival_time(model), 64), 2)).final - psi))
    ok = ext < 1e-12 and quad < 1e-12 and rev < 1e-8
    record(criteria_report, 1, ok, f"cos2 extreme-m error {ext:.1e}, quadrature error {quad:.1e}, revival {rev:.1e}")
    assert ok


# ---------------------------------------------------------------- 2
ALL_PRESETS = preset_names()


@pytest.mark.slow
def test_criterion_2_monotonicity_all_presets(criteria_report):
    worst_delta, worst_frac, bad = math.inf, 0.0, []
    n_runs = 0
    for name in ALL_PRESETS:
        for cfg in preset_runs(name).values():
            s, _ = run(cfg)
            res = s["results"]
            n_runs += 1
            d = res["min_delta_total_cost"]
            if d is not None:
                worst_delta = min(worst_delta, d)
            worst_frac = max(worst_frac, res["fallbacks_max_fraction_per_iteration"])
            if (d is not None and d < -1e-10) or res["fallbacks_max_fraction_per_iteration"] >= 0.01:
                bad.append(f"{name}/{cfg.name}")
    ok = not bad
    record(criteria_report, 2, ok,
           f"{n_runs} runs, min dC {worst_delta:.2e}, max fallback fraction {worst_frac:.2%}; "
           f"violations: {', '.join(bad) if bad else 'none'}")
    assert ok


# ---------------------------------------------------------------- 3
@pytest.mark.slow
def test_criterion_3_lambda_table(criteria_report):
    runs = preset_runs("lambda_study")
    res = {k: run(cfg)[0] for k, cfg in runs.items()}

    def fid(k):
        return res[k]["results"]["final_fidelity"]

    kr2, kr1 = fid("krotov_5.0e-2"), fid("krotov_5.0e-1")
    lp6, lp2 = fid("lapert_5.0e+6"), fid("lapert_5.0e+2")
    emax = res["lapert_5.0e+2"]["results"]["max_abs_field_au"]
    checks = {
        f"Kr 5e-2 F={kr2:.4f} ({res['krotov_5.0e-2']['status']}) >= 0.95": kr2 >= 0.95,
        f"Kr 5e-1 F={kr1:.4f} ({res['krotov_5.0e-1']['status']}) <= Kr 5e-2 - 0.3": kr1 <= kr2 - 0.3,
        f"Lp 5e6 F={lp6:.4f} >= 0.95": lp6 >= 0.95,
        f"Lp 5e2 F={lp2:.4f} >= 0.97": lp2 >= 0.97,
        f"Lp 5e2 max|E|={emax:.2e} in [4e-3, 8e-3]": 4e-3 <= emax <= 8e-3,
    }
    ok = all(checks.values())
    record(criteria_report, 3, ok, "; ".join(f"{k} [{'ok' if v else 'no'}]" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------- 4
@pytest.mark.slow
def test_criterion_4_convergence_shape(criteria_report):
    krotov, lapert = {}, {}
    for name in ("convergence_pair", "lambda_study", "orientation_krotov", "orientation_lapert"):
        for cfg in preset_runs(name).values():
            s, d = run(cfg)
            if s["status"] != "completed" or s["results"]["iterations"] < 20:
                continue
            (krotov if cfg.optimizer.method == "krotov" else lapert)[f"{cfg.optimizer.lambda_au:g}"] = \
                fidelity_history(d)
    # "first few iterations" is taken as iterations 1, 2 and 3
    pairs, near = [], []
    for (lk, fk), (ll, fl) in itertools.product(krotov.items(), lapert.items()):
        lead = next((i for i in range(1, 21) if fl[i] <= fk[i]), 21) - 1
        if fk[20] > fl[20]:
            (pairs if lead >= 3 else near).append(
                f"Kr {lk} / Lp {ll} (Lp leads {lead} it, F20 {fk[20]:.4f} vs {fl[20]:.4f})")
    ok = bool(pairs)
    record(criteria_report, 4, ok, f"qualifying pairings: {', '.join(pairs) if pairs else 'none'}; "
           f"best others: {', '.join(sorted(near, key=lambda s: -int(s.split('leads ')[1].split()[0]))[:2])}")
    assert ok


# ---------------------------------------------------------------- 5
@pytest.mark.slow
def test_criterion_5_delocalization(criteria_report):
    parts, ok = [], True
    for name in ("delocalization_krotov", "delocalization_lapert"):
        (cfg,) = preset_runs(name).values()
        s, _ = run(cfg)
        f = s["results"]["final_fidelity"]
        c2 = s["results"]["final_observables"]["cos2"]
        good = f >= 0.90 and c2 <= 0.15
        ok &= good
        parts.append(f"{cfg.optimizer.method}: |<4,4|psi>|^2={f:.4f}, cos2={c2:.4f} [{'ok' if good else 'no'}]")
    record(criteria_report, 5, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 6
def test_criterion_6_thermal_targets(criteria_report):
    b = Basis(15)
    _, rep5 = thermal_alignment_target(5.0, 4, b, CO.B)
    _, rep0 = thermal_alignment_target(0.0, 4, b, CO.B)
    iso = 0.0
    for temp in (0.0, 5.0):
        rho0 = boltzmann_state(temp, b, CO.B)
        rho_f, _ = thermal_alignment_target(temp, 4, b, CO.B)
        for parity in (0, 1):
            idx = [i for i in range(b.size) if b.j[i] <= 4 and b.j[i] % 2 == parity]
            ev_f = np.sort(np.linalg.eigvalsh(rho_f[np.ix_(idx, idx)]))
            iso = max(iso, np.max(np.abs(ev_f - np.sort(np.real(np.diag(rho0))[idx]))))
    c5 = abs(rep5.max_alignment - 0.518) <= 0.005
    c0 = abs(rep0.max_alignment - 0.600) <= 1e-6
    ok = c5 and c0 and iso < 1e-12
    record(criteria_report, 6, ok,
           f"T=5K max cos2_p={rep5.max_alignment:.6f} [{'ok' if c5 else 'no'}]; "
           f"T=0 max cos2_p={rep0.max_alignment:.6f} vs 0.600 [{'ok' if c0 else 'no'}] "
           f"(parity-free bound {rep0.unconstrained_max:.6f}); isospectral error {iso:.1e}")
    assert ok


# ---------------------------------------------------------------- 7
@pytest.mark.slow
def test_criterion_7_thermal_optimization(criteria_report):
    parts, ok = [], True
    for name in ("thermal_krotov", "thermal_lapert"):
        (cfg,) = preset_runs(name).values()
        s, _ = run(cfg)
        post = s["results"]["post_pulse"]["cos2_p"]
        good = post["min"] >= 0.45 and post["spread"] < 1e-8
        ok &= good
        parts.append(f"{cfg.optimizer.method}: cos2_p={post['mean']:.4f} spread {post['spread']:.1e}, "
                     f"{s['results']['iterations']} it, {s['results']['wall_time_s'] / 60:.0f} min "
                     f"[{'ok' if good else 'no'}]")
    record(criteria_report, 7, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 8
def test_criterion_8_gradient_check(criteria_report):
    (cfg,) = preset_runs("orientation_lapert").values()
    model = build_model(cfg)
    grid = build_time_grid(cfg)
    guess = build_guess(cfg, grid)
    task = build_task(cfg, model)
    sw = Sweeper(model, task.objective, grid)
    _, grad = sw.gradient(guess)
    errs = []
    for seed in range(10):
        d = np.random.default_rng(seed).normal(size=guess.values.shape)
        d *= 1e-6 / np.linalg.norm(d)
        fp = task.objective.value(sw.forward(FieldTrace(grid, guess.values + d)))
        fm = task.objective.value(sw.forward(FieldTrace(grid, guess.values - d)))
        fd = (fp - fm) / 2
        errs.append(abs(float(np.sum(grad * d)) - fd) / abs(fd))
    ok = max(errs) < 1e-3
    record(criteria_report, 8, ok, f"max relative error {max(errs):.1e} over 10 perturbations of norm 1e-6")
    assert ok


# ---------------------------------------------------------------- 9
def test_criterion_9_root_scan(criteria_report):
    lams = [1e2, 1e4, 1e7]
    xs = np.linspace(-1, 1, 401)
    mags = coupling_magnitudes("z_full", 15)
    im0, im1, im2 = (2.0 * k * mags[k] for k in (1, 2, 3))

    def slopes(rows):
        roots = np.array([r[2] for r in rows]).reshape(len(lams), xs.size)
        return np.max(np.abs(np.diff(roots, axis=1) / np.diff(xs)), axis=1)

    sel = slopes(root_sensitivity_scan(lams, xs, im2, im1, im0))
    big = slopes(largest_branch_scan(lams, xs, im2, im1, im0))
    ok = bool(np.all(np.diff(sel) < 0))
    record(criteria_report, 9, ok,
           "selected-root max|d root/dx| " + ", ".join(f"{v:.3g}" for v in sel)
           + " for lambda 1e2, 1e4, 1e7; largest-magnitude branch " + ", ".join(f"{v:.3g}" for v in big))
    assert ok


# ---------------------------------------------------------------- 10
def test_criterion_10_oracles(criteria_report):
    zmodel = hamiltonian_z_full(CO, Basis(15, m=0))
    xymodel = hamiltonian_xy(CO, Basis(12), math.pi / 4)
    step_err = 0.0
    rng = np.random.default_rng(3)
    # support j <= 4; near the cutoff the projected grid kick and the matrix exponential differ
    for _ in range(5):
        v = np.zeros(16, dtype=complex)
        v[:5] = rng.normal(size=5) + 1j * rng.normal(size=5)
        v /= np.linalg.norm(v)
        for e in (1e-3, 5e-3, -1e-2):
            step_err = max(step_err, np.max(np.abs(step(v, zmodel, [e], 87.2) - dense_step(v, zmodel, [e], 87.2))))
    b = xymodel.basis
    for ket in (b.ket(0, 0), b.ket(1, 1), (b.ket(2, 2) + b.ket(2, -2)) / math.sqrt(2)):
        for fields in ([0.01, 0.0], [0.005, -0.008]):
            step_err = max(step_err, np.max(np.abs(step(ket, xymodel, fields, 80.0)
                                                    - dense_step(ket, xymodel, fields, 80.0))))

    res_err = 0.0
    for _ in range(2000):
        a3, a2, a1, a0 = rng.normal(size=4) * 10.0 ** rng.uniform(-6, 6, size=4)
        for r in real_roots_cubic(a3, a2, a1, a0):
            scale = abs(a3 * r**3) + abs(a2 * r * r) + abs(a1 * r) + abs(a0)
            res_err = max(res_err, cubic_residual(r, a3, a2, a1, a0) / scale)
    for lam in (1e2, 5e6):
        prob = CubicUpdateProblem(4 * lam, 2e-3, 27.9e-3, 31.2e-3, 0.22e-3)
        for r in prob.roots():
            u = r - 2e-3
            scale = abs(4 * lam * u**3) + 27.9e-3 * r * r + 31.2e-3 * abs(r) + 0.22e-3
            res_err = max(res_err, prob.residual(r) / scale)

    brute_err = 0.0
    bb = Basis(4)
    for j_f, temp in itertools.product((0, 1, 2), (0.0, 2.0, 5.0, 30.0)):
        pops = np.real(np.diag(boltzmann_state(temp, bb, CO.B)))
        chi = np.real(np.diag(diagonal_projection_cos2(bb, j_f)))
        best = 0.0
        for parity in (0, 1):
            idx = [i for i in range(bb.size) if bb.j[i] <= j_f and bb.j[i] % 2 == parity]
            if idx:
                best += max(float(np.dot(chi[idx], pops[list(p)])) for p in itertools.permutations(idx))
        _, rep = thermal_alignment_target(temp, j_f, bb, CO.B)
        brute_err = max(brute_err, abs(rep.max_alignment - best))

    ok = step_err < 1e-10 and res_err < 1e-12 and brute_err < 1e-15
    record(criteria_report, 10, ok,
           f"step vs dense {step_err:.1e}, cubic relative residual {res_err:.1e}, brute force {brute_err:.1e}")
    assert ok
