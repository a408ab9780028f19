"""Training runs behind the end-to-end acceptance checks, with an on-disk cache.

Each run is keyed by its config digest and a hash of the simulation sources,
so editing the simulator invalidates stale results automatically. Fill the
cache ahead of time (hours on one core) with::

    python tests/acceptance_runs.py [--jobs N]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

import dlma
from dlma import harness, metrics

CACHE = Path(os.environ.get("DLMA_ACCEPTANCE_CACHE",
                            Path(__file__).resolve().parent.parent / ".acceptance_cache"))
_SIM_SOURCES = ("agent", "env", "fairness", "harness", "neural", "replay", "rng", "trainer")
_ARRAYS = ("actions", "indicators", "ack_ok", "u", "a", "eps", "loss")

FIG9 = "fig9"
RUNS = {
    "c1_alpha0": ("table3", ["sweep={}", "alpha=0"]),
    "c1_alpha1": ("table3", ["sweep={}", "alpha=1"]),
    "c2_e06_K8": (FIG9, ["sweep={}", "channel.e_down=0.6", "K=8"]),
    "c2_e06_K1": (FIG9, ["sweep={}", "channel.e_down=0.6", "K=1"]),
    "c2_e01_K2": (FIG9, ["sweep={}", "channel.e_down=0.1", "K=2"]),
    "c2_e01_K8": (FIG9, ["sweep={}", "channel.e_down=0.1", "K=8"]),
    "c2_e01_K16": (FIG9, ["sweep={}", "channel.e_down=0.1", "K=16"]),
    "c3_fig10": ("fig10", ["sweep={}", "channel.e_down=0.2", "K=8"]),
    "c4_dependent": ("table4", ["sweep={}", "alpha=0"]),
    "c4_independent": ("table5", ["sweep={}", "alpha=0"]),
}


def source_hash() -> str:
    h = hashlib.sha256()
    root = Path(dlma.__file__).parent
    for name in _SIM_SOURCES:
        h.update((root / f"{name}.py").read_bytes())
    return h.hexdigest()[:16]


def config(key: str) -> harness.ExperimentConfig:
    preset, overrides = RUNS[key]
    (cfg,) = harness.load_configs(preset, overrides)
    return cfg


def _paths(cfg):
    stem = CACHE / f"{cfg.digest()}-{source_hash()}"
    return stem.with_suffix(".npz"), stem.with_suffix(".json")


def cached(key: str):
    """``(RunLog, extras)`` from the cache, or ``None``."""
    cfg = config(key)
    npz, meta = _paths(cfg)
    if not (npz.exists() and meta.exists()):
        return None
    extras = json.loads(meta.read_text())
    run_log = metrics.RunLog(tuple(extras["kinds"]), 0)
    with np.load(npz) as data:
        for name in _ARRAYS:
            setattr(run_log, name, data[name])
    run_log.capacity = run_log.n = run_log.actions.shape[0]
    return run_log, extras


def run(key: str):
    """Cached result for ``key``, computing and storing it if needed."""
    hit = cached(key)
    if hit is not None:
        return hit
    cfg = config(key)
    run_log, summary = harness.run_experiment(cfg)
    npz, meta = _paths(cfg)
    CACHE.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(npz, **{name: getattr(run_log, name) for name in _ARRAYS})
    extras = {"key": key, "kinds": list(run_log.kinds), "replay": summary["replay"],
              "benchmark": summary["benchmark"], "name": cfg.name}
    meta.write_text(json.dumps(extras, indent=2))
    return run_log, extras


def _job(key):
    run(key)
    return key


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("keys", nargs="*", default=list(RUNS))
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    todo = [k for k in args.keys if cached(k) is None]
    print(f"{len(todo)} runs to compute: {todo}", flush=True)
    with ProcessPoolExecutor(args.jobs) as pool:
        for key in pool.map(_job, todo):
            print(f"done {key}", flush=True)


if __name__ == "__main__":
    main()
