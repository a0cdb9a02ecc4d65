"""Content-addressed cache of scenario runs.

A run is stored under ``<root>/<name>-<key>`` where the key hashes the serialized
configuration together with the package sources, so any code or config change
forces a fresh run.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path

from .config import RunConfig, serialize_config
from .scenario import run_scenario

PACKAGE_DIR = Path(__file__).resolve().parent


# modules that cannot change numerical results are left out of the key
_NOT_HASHED = {"cli.py", "runcache.py", "__init__.py"}


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(PACKAGE_DIR.rglob("*.py")):
        if path.parent == PACKAGE_DIR and path.name in _NOT_HASHED:
            continue
        h.update(path.relative_to(PACKAGE_DIR).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_key(cfg: RunConfig) -> str:
    h = hashlib.sha256(serialize_config(cfg).encode())
    h.update(source_digest().encode())
    return h.hexdigest()[:16]


def default_root() -> Path:
    return Path(os.environ.get("ROTCONTROL_CACHE", Path.cwd() / ".run_cache"))


def cached_dir(cfg: RunConfig, root: Path | None = None) -> Path:
    return Path(root or default_root()) / f"{cfg.name}-{run_key(cfg)}"


def lookup(cfg: RunConfig, root: Path | None = None) -> dict | None:
    d = cached_dir(cfg, root)
    if (d / "summary.json").is_file() and (d / "COMPLETE").is_file():
        return json.loads((d / "summary.json").read_text())
    return None


def cached_run(cfg: RunConfig, root: Path | None = None, verbose: bool = False) -> tuple[dict, Path]:
    """Return (summary, directory), running the scenario first if no complete entry exists."""
    d = cached_dir(cfg, root)
    hit = lookup(cfg, root)
    if hit is not None:
        return hit, d
    tmp = d.with_name(d.name + ".partial")
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir(parents=True)
    with open(tmp / "progress.log", "w") as log:
        def progress(r):
            line = (f"{r.iteration} F={r.fidelity:.10f} dC={r.delta_c:+.3e} max|E|={r.max_field:.4e} "
                    f"fallbacks={r.fallbacks} unresolved={r.unresolved} t={r.wall_time:.1f}s")
            log.write(line + "\n")
            log.flush()
            if verbose:
                print(f"[{cfg.name}] {line}", flush=True)
        summary = run_scenario(cfg, tmp, progress)
    (tmp / "COMPLETE").write_text("")
    shutil.rmtree(d, ignore_errors=True)
    tmp.rename(d)
    return summary, d
