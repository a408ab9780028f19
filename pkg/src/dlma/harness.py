"""Experiment configuration, the lock-step run loop, and multi-run suites."""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np
import torch
import yaml

from . import metrics
from .env import AGENT, ALOHA, TDMA, ChannelConfig, Environment, UserSpec
from .oracle import OracleCapabilityError, optimal_coexistence
from .rng import Streams
from .trainer import DLMAAgent, TrainConfig, train_slot

log = logging.getLogger(__name__)

DEFAULT_SLOTS = 100_000

_prob = {"type": "number", "minimum": 0, "maximum": 1}
SCHEMA = {
    "type": "object",
    "required": ["users"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "total_slots": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "minimum": 0},
        "K": {"type": "integer", "minimum": 1},
        "M": {"type": "integer", "minimum": 1},
        "window": {"type": "integer", "minimum": 1},
        "ack_window": {"type": ["integer", "null"], "minimum": 1},
        "output": {"type": "string"},
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "e_up": _prob,
                "e_down": _prob,
                "downlink_mode": {"enum": ["dependent", "independent"]},
            },
        },
        "users": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": [AGENT, TDMA, ALOHA]},
                    "count": {"type": "integer", "minimum": 1},
                    "frame": {"type": "integer", "minimum": 1},
                    "slots": {"type": "array", "minItems": 1,
                              "items": {"type": "integer", "minimum": 1}},
                    "p": _prob,
                    "e_up": _prob,
                },
            },
        },
        "train": {
            "type": "object",
            "properties": {
                **{k: {"type": "integer", "minimum": 1}
                   for k in ("batch_size", "buffer_size", "target_sync", "K", "M", "hidden")},
                **{k: {"type": "number", "minimum": 0}
                   for k in ("gamma", "eps_start", "eps_decay", "eps_min", "alpha", "lr",
                             "rms_rho", "rms_eps", "grad_clip")},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": {"type": "array", "minItems": 1},
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    users: tuple
    channel: ChannelConfig = ChannelConfig()
    train: TrainConfig = TrainConfig()
    total_slots: int = DEFAULT_SLOTS
    seed: int = 0
    name: str = "experiment"
    window: int = metrics.DEFAULT_WINDOW
    ack_window: Optional[int] = None
    output: Optional[str] = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        kinds = [u.kind for u in self.users]
        n_agents = kinds.count(AGENT)
        if n_agents < 1:
            raise ConfigError("users", "at least one agent (L >= 1) is required")
        if kinds[:n_agents] != [AGENT] * n_agents:
            raise ConfigError("users", "agents must be listed before non-agent users")
        if self.total_slots < 1:
            raise ConfigError("total_slots", "must be >= 1")

    @property
    def n_agents(self) -> int:
        return sum(u.kind == AGENT for u in self.users)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def alpha(self) -> float:
        return self.train.alpha

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def _error_path(err: jsonschema.ValidationError) -> str:
    out = ""
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _build_users(raw_users) -> tuple:
    users = []
    for k, u in enumerate(raw_users):
        path = f"users[{k}]"
        kind = u["kind"]
        extra = {"e_up": u.get("e_up")}
        try:
            if kind == AGENT:
                spec = UserSpec(AGENT, **extra)
            elif kind == TDMA:
                if "frame" not in u or "slots" not in u:
                    raise ConfigError(path, "tdma users need 'frame' and 'slots'")
                bad = [s for s in u["slots"] if s > u["frame"]]
                if bad:
                    raise ConfigError(f"{path}.slots", f"{bad} outside 1..{u['frame']}")
                spec = UserSpec(TDMA, tdma_frame=u["frame"],
                                tdma_slots=frozenset(s - 1 for s in u["slots"]), **extra)
            else:
                if "p" not in u:
                    raise ConfigError(path, "aloha users need 'p'")
                spec = UserSpec(ALOHA, aloha_p=float(u["p"]), **extra)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(path, str(exc)) from exc
        users.extend([spec] * u.get("count", 1))
    return tuple(users)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a single (already sweep-expanded) config mapping."""
    raw = copy.deepcopy(raw)
    raw.pop("sweep", None)
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(_error_path(err), err.message) from None
    users = _build_users(raw["users"])
    ch = raw.get("channel", {})
    channel = ChannelConfig(float(ch.get("e_up", 0.0)), float(ch.get("e_down", 0.0)),
                            ch.get("downlink_mode", "dependent"))
    train_raw = dict(raw.get("train", {}))
    unknown = set(train_raw) - TrainConfig.field_names()
    if unknown:
        raise ConfigError("train", f"unknown keys {sorted(unknown)}")
    for key in ("alpha", "K", "M"):
        if key in raw:
            if key in train_raw:
                raise ConfigError(f"train.{key}", f"also given at top level as '{key}'")
            train_raw[key] = raw[key]
    try:
        train = TrainConfig(**train_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None
    return ExperimentConfig(
        users=users, channel=channel, train=train,
        total_slots=raw.get("total_slots", DEFAULT_SLOTS), seed=raw.get("seed", 0),
        name=raw.get("name", "experiment"), window=raw.get("window", metrics.DEFAULT_WINDOW),
        ack_window=raw.get("ack_window"), output=raw.get("output"), raw=raw)


def set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        set_path(raw, key.strip(), yaml.safe_load(value))
    return raw


def _label(key: str, value) -> str:
    return f"{key.rsplit('.', 1)[-1]}={value}"


def expand(raw: dict) -> list[dict]:
    """Expand the optional ``sweep`` mapping into one mapping per grid point."""
    sweep = raw.get("sweep") or {}
    if not sweep:
        return [copy.deepcopy(raw)]
    keys = list(sweep)
    out = []
    for values in itertools.product(*(sweep[k] for k in keys)):
        item = copy.deepcopy(raw)
        item.pop("sweep")
        for k, v in zip(keys, values):
            set_path(item, k, v)
        suffix = ",".join(_label(k, v) for k, v in zip(keys, values))
        item["name"] = f"{raw.get('name', 'experiment')}[{suffix}]"
        out.append(item)
    return out


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("dlma.presets").iterdir()
                  if p.name.endswith(".yaml"))


def load_raw(source) -> dict:
    """Read a config file, or a shipped preset by name (e.g. ``fig9``)."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in preset_names():
        text = resources.files("dlma.presets").joinpath(f"{source}.yaml").read_text()
    else:
        raise ConfigError("", f"no such config file or preset: {source}")
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping")
    raw.setdefault("name", path.stem if path.is_file() else str(source))
    return raw


def load_configs(source, overrides: Sequence[str] = ()) -> list[ExperimentConfig]:
    raw = apply_overrides(load_raw(source), overrides)
    return [config_from_dict(item) for item in expand(raw)]


def benchmark(cfg: ExperimentConfig) -> Optional[dict]:
    try:
        policy, x, value = optimal_coexistence(cfg.users, cfg.channel, cfg.alpha)
    except OracleCapabilityError:
        return None
    return {"policy": list(policy.probs), "throughputs": [float(v) for v in x],
            "sum_throughput": float(x.sum()), "sum_log_throughput": metrics.sum_log(x),
            "objective": float(value)}


def run_experiment(cfg: ExperimentConfig, out_dir=None, log_every: int = 10_000):
    """Simulate ``cfg.total_slots`` slots; returns ``(RunLog, summary)``.

    Per slot: agents choose (u, a) -> non-agents act -> uplink -> AP builds
    ACK -> ACK delivery -> each agent observes, stores/recovers, trains.
    """
    torch.set_num_threads(1)
    streams = Streams(cfg.seed)
    env = Environment(cfg.users, cfg.channel, cfg.train.K, streams, cfg.ack_window)
    agents = [DLMAAgent(l, cfg.n_users, cfg.n_agents, cfg.train, streams)
              for l in range(cfg.n_agents)]
    run_log = metrics.RunLog(tuple(u.kind for u in cfg.users), cfg.total_slots)
    t0 = time.perf_counter()
    for t in range(cfg.total_slots):
        try:
            rec = train_slot(env, agents)
        except Exception as exc:
            raise SimulationError(f"{cfg.name}: slot {t}: {exc}") from exc
        run_log.append(rec)
        if log_every and (t + 1) % log_every == 0:
            x = metrics.short_term_throughput
            st = [round(x(run_log, i, t + 1, cfg.window), 4) for i in range(cfg.n_users)]
            log.info("%s slot %d  short-term %s  (%.0fs)", cfg.name, t + 1, st,
                     time.perf_counter() - t0)
    summary = metrics.summarize(run_log, cfg.alpha, cfg.window)
    summary.update(name=cfg.name, seed=cfg.seed, config_digest=cfg.digest(),
                   benchmark=benchmark(cfg), replay=[_replay_stats(a) for a in agents])
    if out_dir is not None:
        write_outputs(Path(out_dir), cfg, run_log, summary)
    return run_log, summary


def _replay_stats(agent: DLMAAgent) -> dict:
    b = agent.buffer
    return {"complete_direct": b.n_complete_direct, "recovered": b.n_recovered,
            "discarded": b.n_discarded, "pending": len(b.incomplete)}


def write_outputs(out: Path, cfg: ExperimentConfig, run_log: metrics.RunLog, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run.csv", "w", newline="") as fh:
        metrics.write_csv(run_log, fh)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=True))
    ts, series = metrics.throughput_series(run_log, cfg.window)
    with open(out / "series.csv", "w") as fh:
        users = ",".join(f"user{i}" for i in range(cfg.n_users))
        fh.write(f"slot,{users},sum,sum_log\n")
        for t, row in zip(ts, series):
            vals = ",".join(f"{v:.6f}" for v in row)
            fh.write(f"{t},{vals},{row.sum():.6f},{metrics.sum_log(row):.6f}\n")


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=," else "_" for c in name)


def _run_one(args):
    cfg, out_dir = args
    try:
        _, summary = run_experiment(cfg, out_dir)
        return summary
    except Exception as exc:  # isolate per-experiment failures
        return {"name": cfg.name, "seed": cfg.seed, "error": f"{type(exc).__name__}: {exc}"}


def _aggregate(summaries: list[dict]) -> dict:
    groups: dict[str, list[dict]] = {}
    for s in summaries:
        if "error" not in s:
            groups.setdefault(s["name"], []).append(s)
    out = {}
    for name, runs in groups.items():
        entry = {"runs": len(runs)}
        for key in ("sum_throughput", "sum_log_throughput", "objective"):
            vals = [r[key] for r in runs]
            entry[key] = {"mean": statistics.fmean(vals),
                          "std": statistics.stdev(vals) if len(vals) > 1 else 0.0}
        per_user = np.array([r["throughputs"] for r in runs])
        entry["throughputs"] = {"mean": per_user.mean(axis=0).tolist(),
                                "std": (per_user.std(axis=0, ddof=1) if len(runs) > 1
                                        else np.zeros(per_user.shape[1])).tolist()}
        out[name] = entry
    return out


def run_suite(sources: Sequence, out_root, parallelism: int = 1, seeds: Optional[int] = None,
              overrides: Sequence[str] = ()) -> list[dict]:
    """Run every config (and every sweep point); with ``seeds`` each one is
    repeated for seeds ``0..seeds-1``. Writes ``index.json`` under ``out_root``."""
    out_root = Path(out_root)
    jobs, summaries = [], []
    for src in sources:
        try:
            cfgs = load_configs(src, overrides)
        except (ConfigError, OSError, yaml.YAMLError) as exc:
            summaries.append({"name": str(src), "error": f"{type(exc).__name__}: {exc}"})
            continue
        for cfg in cfgs:
            seed_list = [cfg.seed] if seeds is None else range(seeds)
            for seed in seed_list:
                c = replace(cfg, seed=seed, raw={**cfg.raw, "seed": seed})
                jobs.append((c, out_root / _safe_name(c.name) / f"seed{seed}"))
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            summaries.extend(pool.map(_run_one, jobs))
    else:
        summaries.extend(map(_run_one, jobs))
    index = {"experiments": summaries, "aggregate": _aggregate(summaries)}
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return summaries


def describe_benchmark(cfg: ExperimentConfig) -> dict[str, Any]:
    bench = benchmark(cfg)
    if bench is None:
        raise OracleCapabilityError(f"{cfg.name}: frame too long for the oracle")
    return {"name": cfg.name, "alpha": cfg.alpha, "kinds": [u.kind for u in cfg.users], **bench}
