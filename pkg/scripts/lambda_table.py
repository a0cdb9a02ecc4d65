"""Tabulate final fidelity and peak field of the lambda studies from the run cache.

    python scripts/lambda_table.py                  # lambda_study and krotov_lambda_scan
    python scripts/lambda_table.py convergence_pair --csv table.csv

Only cached runs are listed; missing ones are reported and skipped (run them with
scripts/run_presets.py first).
"""
import argparse
import csv
import sys
from pathlib import Path

from rotcontrol.cli import preset_text
from rotcontrol.config import parse_batch
from rotcontrol.runcache import lookup

ROOT = Path(__file__).resolve().parents[1] / ".run_cache"
COLUMNS = ["preset", "run", "method", "lambda_au", "status", "iterations", "fidelity", "max_abs_field_au",
           "monotonic", "fallbacks_max_fraction"]


def rows_for(preset, root):
    for cfg in parse_batch(preset_text(preset)):
        s = lookup(cfg, root)
        if s is None:
            print(f"not cached: {preset}/{cfg.name}", file=sys.stderr)
            continue
        r = s["results"]
        yield [preset, cfg.name, cfg.optimizer.method, f"{cfg.optimizer.lambda_au:g}", s["status"], r["iterations"],
               f"{r['final_fidelity']:.6f}", f"{r['max_abs_field_au']:.4e}", r["monotonic"],
               f"{r['fallbacks_max_fraction_per_iteration']:.4f}"]


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("presets", nargs="*", default=["lambda_study", "krotov_lambda_scan"])
    p.add_argument("--cache", type=Path, default=ROOT)
    p.add_argument("--csv", type=Path)
    a = p.parse_args(argv)
    rows = [row for name in a.presets for row in rows_for(name, a.cache)]
    widths = [max(len(str(x)) for x in col) for col in zip(COLUMNS, *rows)]
    for row in [COLUMNS, *rows]:
        print("  ".join(str(x).ljust(w) for x, w in zip(row, widths)))
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            csv.writer(fh).writerows([COLUMNS, *rows])


if __name__ == "__main__":
    sys.exit(main())
