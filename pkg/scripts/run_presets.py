"""Run shipped presets through the result cache used by the acceptance tests.

    python scripts/run_presets.py                      # every preset
    python scripts/run_presets.py thermal_lapert -v    # selected presets, live progress

Runs whose configuration and package sources are unchanged are not repeated.
"""
import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from rotcontrol.cli import preset_names, preset_text
from rotcontrol.config import parse_batch
from rotcontrol.runcache import cached_run

ROOT = Path(__file__).resolve().parents[1] / ".run_cache"


def _one(args):
    cfg, root, verbose = args
    t0 = time.perf_counter()
    summary, d = cached_run(cfg, root, verbose)
    res = summary["results"]
    return (f"{cfg.name:28s} {summary['status']:9s} F={res['final_fidelity']:.6f} "
            f"it={res['iterations']:3d} max|E|={res['max_abs_field_au']:.3e} "
            f"({time.perf_counter() - t0:.0f}s) {d}")


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("presets", nargs="*")
    p.add_argument("--cache", type=Path, default=ROOT)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args(argv)
    names = a.presets or preset_names()
    jobs = [(cfg, a.cache, a.verbose) for n in names for cfg in parse_batch(preset_text(n))]
    if a.threads > 1:
        with ProcessPoolExecutor(a.threads) as pool:
            for line in pool.map(_one, jobs):
                print(line, flush=True)
    else:
        for job in jobs:
            print(_one(job), flush=True)


if __name__ == "__main__":
    sys.exit(main())
