"""Command line front end: ``rotcontrol {optimize,propagate,target,scan-roots,presets}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .angular import Basis
from .config import RunConfig, apply_overrides, parse_batch, serialize_config
from .errors import RotControlError
from .model import CO, MODELS
from .optim.core import spectral_radius
from .optim.cubic import CubicUpdateProblem
from .optim.lapert import root_sensitivity_scan
from .scenario import propagate_scenario, run_scenario
from .targets import orientation_target, thermal_alignment_target

log = logging.getLogger("rotcontrol")


def preset_names() -> list[str]:
    root = resources.files("rotcontrol") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    path = resources.files("rotcontrol") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise RotControlError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def _numeric_override(item: str) -> str:
    # YAML 1.1 reads 1e-8 or 5.0e6 as strings; rewrite such values so they parse as floats
    key, sep, raw = item.partition("=")
    if not sep or "e" not in raw.lower():
        return item
    try:
        float(raw)
    except ValueError:
        return item
    mant, _, exp = raw.lower().partition("e")
    if "." not in mant:
        mant += ".0"
    if exp[0] not in "+-":
        exp = "+" + exp
    return f"{key}={mant}e{exp}"


def load_runs(args) -> list[RunConfig]:
    if bool(args.config) == bool(args.preset):
        raise RotControlError("give exactly one of --config or --preset")
    text = Path(args.config).read_text() if args.config else preset_text(args.preset)
    runs = parse_batch(text)
    if args.set:
        overrides = [_numeric_override(a) for a in args.set]
        runs = [apply_overrides(r, overrides) for r in runs]
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise RotControlError(f"run names in a batch must be unique: {names}")
    return runs


def _run_dirs(runs, out: Path):
    return [out if len(runs) == 1 else out / r.name for r in runs]


def _print_record(name):
    def cb(r):
        print(f"[{name}] it {r.iteration:4d}  F={r.fidelity:.8f}  R={r.running_cost:.3e}  "
              f"dC={r.delta_c:+.3e}  max|E|={r.max_field:.3e}  fb={r.fallbacks}  t={r.wall_time:.1f}s",
              flush=True)
    return cb


def _optimize_one(cfg: RunConfig, out: str, quiet: bool) -> dict:
    return run_scenario(cfg, out, None if quiet else _print_record(cfg.name))


def cmd_optimize(args) -> int:
    runs = load_runs(args)
    out = Path(args.out or Path("runs") / (args.preset or Path(args.config).stem))
    dirs = _run_dirs(runs, out)
    if args.threads > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            summaries = list(pool.map(_optimize_one, runs, map(str, dirs), [True] * len(runs)))
    else:
        summaries = [_optimize_one(r, str(d), args.quiet) for r, d in zip(runs, dirs)]
    for s, d in zip(summaries, dirs):
        res = s["results"]
        print(f"{s['name']}: {s['status']}  fidelity={res['final_fidelity']:.6f}  "
              f"iterations={res['iterations']}  max|E|={res['max_abs_field_au']:.4e} a.u.  -> {d}")
    return 0 if all(s["status"] == "completed" for s in summaries) else 3


def cmd_propagate(args) -> int:
    runs = load_runs(args)
    out = Path(args.out or Path("runs") / ((args.preset or Path(args.config).stem) + "_propagate"))
    ok = True
    for cfg, d in zip(runs, _run_dirs(runs, out)):
        s = propagate_scenario(cfg, d, zero_field=args.zero_field)
        res = s["results"]
        print(f"{cfg.name}: fidelity={res['fidelity']:.8f}  -> {d}")
        if "revival" in res:
            rv = res["revival"]
            print(f"revival check: {'pass' if rv['pass'] else 'FAIL'} "
                  f"(max deviation {rv['max_deviation']:.3e}, tolerance {rv['tolerance']:.0e})")
            ok &= rv["pass"]
    return 0 if ok else 1


def _kv(items: list[str]) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise RotControlError(f"expected key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k] = v
    return out


def cmd_target(args) -> int:
    kv = _kv(args.params)
    j_max = int(kv.pop("j_max", 15))
    if args.kind == "orientation":
        j_f = int(kv.pop("j_f", 4))
        psi = orientation_target(j_f, Basis(j_max, m=0))
        coeffs = [float(np.real(psi[j])) for j in range(j_f + 1)]
        report = {"kind": "orientation", "j_f": j_f, "coefficients": coeffs,
                  "cos_theta": float(np.real(np.vdot(psi, _cos(j_max) @ psi)))}
        if not args.json:
            print(f"orientation target, j_f = {j_f}")
            for j, c in enumerate(coeffs):
                print(f"  |{j},0>  {c:+.6f}")
            print(f"  <cos theta> = {report['cos_theta']:.6f}")
    elif args.kind == "thermal":
        temp = float(kv.pop("T", 5.0))
        j_f = int(kv.pop("j_f", 4))
        _, rep = thermal_alignment_target(temp, j_f, Basis(j_max), CO.B)
        report = {"kind": "thermal", **rep.as_dict()}
        if not args.json:
            print(f"thermal alignment target, T = {temp} K, j_f = {j_f}, j_max = {j_max}")
            print(f"  max <cos^2 theta>_p (j-parity pairing)   = {rep.max_alignment:.6f}")
            print(f"  unconstrained rearrangement bound       = {rep.unconstrained_max:.6f}")
            print(f"  (j, m)-parity resolved bound            = {rep.m_parity_max:.6f}")
            print(f"  population inside j <= j_f              = {rep.restricted_trace:.6f}")
    else:
        raise RotControlError(f"unknown target kind {args.kind!r}")
    if kv:
        raise RotControlError(f"unused target parameters: {sorted(kv)}")
    if args.json:
        print(json.dumps(report, indent=2))
    return 0


def _cos(j_max):
    from .angular import cos_theta_matrix
    return cos_theta_matrix(Basis(j_max, m=0))


def coupling_magnitudes(model_kind: str, j_max: int) -> dict[int, float]:
    """Largest eigenvalue magnitude of each field-power coupling operator, keyed by the power."""
    basis = Basis(j_max, m=0)
    model = MODELS[model_kind](CO, basis)
    return {cp.exponents[0]: spectral_radius(cp.operator) for cp in model.couplings}


def largest_branch_scan(lams, xs, im2, im1, im0):
    """Largest-magnitude root of the cubic update (with E_old = 0) over the grid of x values."""
    rows = []
    for lam in lams:
        for x in xs:
            prob = CubicUpdateProblem(4.0 * lam, 0.0, x * im2, x * im1, x * im0)
            rows.append((float(lam), float(x), max(prob.roots(), key=abs)))
    return rows


def cmd_scan_roots(args) -> int:
    lams = [float(x) for x in args.lambdas.split(",")]
    xs = np.linspace(args.x_min, args.x_max, args.n_x)
    mags = coupling_magnitudes(args.model, args.j_max)
    im0, im1, im2 = (2.0 * k * mags.get(k, 0.0) for k in (1, 2, 3))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.branch == "closest":
        rows = root_sensitivity_scan(lams, xs, im2, im1, im0, path=out)
    else:
        rows = largest_branch_scan(lams, xs, im2, im1, im0)
        with open(out, "w", newline="") as fh:
            fh.write("lambda,x,root\n")
            for r in rows:
                fh.write(",".join(f"{v:.15g}" for v in r) + "\n")
    roots = np.array([r[2] for r in rows]).reshape(len(lams), xs.size)
    slopes = np.max(np.abs(np.diff(roots, axis=1) / np.diff(xs)), axis=1)
    print("operator magnitudes (a.u.): " + ", ".join(f"E^{k}: {v:.6g}" for k, v in sorted(mags.items())))
    for lam, s in zip(lams, slopes):
        print(f"lambda = {lam:.3g}: max |d root / dx| = {s:.6e}")
    order = np.argsort(lams)
    dec = bool(np.all(np.diff(slopes[order]) < 0))
    print(f"{args.branch} root, sensitivity decreases with lambda: {'yes' if dec else 'no'}  -> {out}")
    return 0


def cmd_presets(args) -> int:
    for name in preset_names():
        runs = parse_batch(preset_text(name))
        print(f"{name:32s} {len(runs)} run(s)")
        if args.show == name:
            for r in runs:
                print(serialize_config(r))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotcontrol", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def selection(sp):
        sp.add_argument("--config", help="YAML run file")
        sp.add_argument("--preset", help="name of a shipped preset (see the presets subcommand)")
        sp.add_argument("--out", help="output directory (one subdirectory per run for batches)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. optimizer.iterations=5")

    sp = sub.add_parser("optimize", help="optimize a control field and write all result files")
    selection(sp)
    sp.add_argument("--threads", type=int, default=1, help="runs of a batch executed in parallel")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("propagate", help="propagate the guess field (or no field) without optimizing")
    selection(sp)
    sp.add_argument("--threads", type=int, default=1, help="accepted for symmetry; runs are sequential")
    sp.add_argument("--zero-field", action="store_true")
    sp.set_defaults(func=cmd_propagate)

    sp = sub.add_parser("target", help="construct and print a target state")
    sp.add_argument("kind", choices=["orientation", "thermal"])
    sp.add_argument("params", nargs="*", help="key=value: j_f, T (kelvin), j_max")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_target)

    sp = sub.add_parser("scan-roots", help="root of the cubic update versus the bracket value x")
    sp.add_argument("--lambdas", default="1e2,1e4,1e7")
    sp.add_argument("--x-min", type=float, default=-1.0)
    sp.add_argument("--x-max", type=float, default=1.0)
    sp.add_argument("--n-x", type=int, default=401)
    sp.add_argument("--model", choices=["z_full", "z_averaged"], default="z_full")
    sp.add_argument("--j-max", type=int, default=15)
    sp.add_argument("--branch", choices=["closest", "largest"], default="closest",
                    help="closest: the root the optimizer selects; largest: the root of largest magnitude")
    sp.add_argument("--out", default="roots.csv")
    sp.set_defaults(func=cmd_scan_roots)

    sp = sub.add_parser("presets", help="list shipped presets")
    sp.add_argument("--show", metavar="NAME", help="print the expanded runs of one preset")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RotControlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
