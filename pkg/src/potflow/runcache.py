"""Disk cache of completed training runs, keyed by the semantic config.

Training is deterministic given the config and seed (bit-identical
reports), so a finished run directory is a faithful stand-in for
re-running.  Logging and checkpoint cadence do not affect the parameter
trajectory and are excluded from the key.  The benchmark driver and the
acceptance suite share this cache; delete the directory to force fresh
runs.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path

from .trainer import RunConfig, train

SCHEMA = "potflow-run-1"
_NON_SEMANTIC = {"eval_every", "checkpoint_every"}


def semantic_key(cfg: RunConfig) -> str:
    d = {k: v for k, v in cfg.to_dict().items() if k not in _NON_SEMANTIC}
    payload = SCHEMA + json.dumps(d, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def ensure_run(cfg: RunConfig, cache_root, problem=None) -> Path:
    """Return a directory holding a finished run for this config, training
    it now if absent."""
    root = Path(cache_root)
    run_dir = root / semantic_key(cfg)
    report = run_dir / "report.json"
    if report.exists():
        stored = json.loads(report.read_text())["config"]
        live = cfg.to_dict()
        mismatched = [k for k in live
                      if k not in _NON_SEMANTIC and stored.get(k) != live[k]]
        if mismatched:
            raise RuntimeError(f"cache collision at {run_dir}: {mismatched}")
        return run_dir
    if run_dir.exists():
        shutil.rmtree(run_dir)   # interrupted run; rebuild
    train(cfg, run_dir, problem=problem)
    return run_dir


def load_report(run_dir) -> dict:
    return json.loads((Path(run_dir) / "report.json").read_text())
