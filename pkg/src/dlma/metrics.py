"""Run logs, windowed throughputs and end-of-run summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .env import AGENT
from .fairness import objective

CSV_COLUMNS = ("slot", "user_id", "kind", "action", "indicator", "ack_ok", "u", "eps", "loss")
DEFAULT_WINDOW = 2000
SUMMARY_WINDOWS = 10
COLLISION_TAIL = 10_000


@dataclass
class RunLog:
    """Append-only per-slot record, stored column-wise."""

    kinds: tuple
    capacity: int
    n: int = 0
    actions: np.ndarray = field(init=False)
    indicators: np.ndarray = field(init=False)
    ack_ok: np.ndarray = field(init=False)
    u: np.ndarray = field(init=False)
    a: np.ndarray = field(init=False)
    eps: np.ndarray = field(init=False)
    loss: np.ndarray = field(init=False)

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        n_users = len(self.kinds)
        n_agents = sum(k == AGENT for k in self.kinds)
        self.actions = np.zeros((self.capacity, n_users), dtype=np.int8)
        self.indicators = np.zeros((self.capacity, n_users), dtype=bool)
        self.ack_ok = np.zeros((self.capacity, n_agents), dtype=bool)
        self.u = np.zeros((self.capacity, n_agents), dtype=np.int8)
        self.a = np.zeros((self.capacity, n_agents), dtype=np.int8)
        self.eps = np.zeros((self.capacity, n_agents), dtype=np.float64)
        self.loss = np.full((self.capacity, n_agents), np.nan)

    @property
    def n_users(self) -> int:
        return len(self.kinds)

    @property
    def n_agents(self) -> int:
        return self.ack_ok.shape[1]

    def append(self, record) -> None:
        """Add a :class:`dlma.trainer.SlotRecord`."""
        i = self.n
        if i >= self.capacity:
            raise IndexError("run log is full")
        if record.result.slot != i:
            raise ValueError(f"expected slot {i}, got {record.result.slot}")
        self.actions[i] = record.result.transmitted
        self.indicators[i] = record.result.indicator
        self.ack_ok[i] = record.ack_ok
        self.u[i] = [d.u for d in record.decisions]
        self.a[i] = [d.a for d in record.decisions]
        self.eps[i] = [d.eps for d in record.decisions]
        self.loss[i] = record.losses
        self.n += 1

    def view(self) -> "RunLog":
        """Log truncated to the slots actually recorded."""
        out = RunLog.__new__(RunLog)
        out.kinds, out.capacity, out.n = self.kinds, self.n, self.n
        for name in ("actions", "indicators", "ack_ok", "u", "a", "eps", "loss"):
            setattr(out, name, getattr(self, name)[:self.n])
        return out

    def inter_agent_collisions(self, start: int = 0, stop: int | None = None) -> int:
        stop = self.n if stop is None else stop
        acts = self.actions[start:stop, :self.n_agents]
        return int(np.count_nonzero(acts.sum(axis=1) >= 2))


def short_term_throughput(log: RunLog, user: int, t: int, window: int = DEFAULT_WINDOW) -> float:
    """Success rate of ``user`` over slots ``(t - W, t]``, counting slots from 1;
    the window is truncated at the start of the run."""
    if t < 1:
        raise ValueError("t must be >= 1")
    lo = max(0, t - window)
    return float(log.indicators[lo:t, user].sum()) / (t - lo)


def throughput_series(log: RunLog, window: int = DEFAULT_WINDOW, every: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Short-term throughput of every user at slots ``every, 2*every, ...``."""
    csum = np.vstack([np.zeros((1, log.n_users)), np.cumsum(log.indicators[:log.n], axis=0)])
    ts = np.arange(every, log.n + 1, every)
    lo = np.maximum(ts - window, 0)
    return ts, (csum[ts] - csum[lo]) / (ts - lo)[:, None]


def final_throughputs(log: RunLog, window: int = DEFAULT_WINDOW, n_windows: int = SUMMARY_WINDOWS) -> np.ndarray:
    """Mean of the last ``n_windows`` disjoint short-term windows."""
    span = min(log.n, window * n_windows)
    return log.indicators[log.n - span:log.n].mean(axis=0)


def sum_log(x) -> float:
    return objective(x, 1.0)


def summarize(log: RunLog, alpha: float, window: int = DEFAULT_WINDOW) -> dict:
    x = final_throughputs(log, window)
    tail = min(COLLISION_TAIL, log.n)
    return {
        "slots": int(log.n),
        "kinds": list(log.kinds),
        "throughputs": [float(v) for v in x],
        "sum_throughput": float(x.sum()),
        "sum_log_throughput": sum_log(x),
        "objective": objective(x, alpha),
        "alpha": float(alpha),
        "inter_agent_collisions": log.inter_agent_collisions(),
        "inter_agent_collisions_tail": log.inter_agent_collisions(log.n - tail),
        "collision_tail_slots": int(tail),
        "ack_loss_rate": float(1.0 - log.ack_ok.mean()) if log.n and log.n_agents else 0.0,
    }


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(log: RunLog, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    L = log.n_agents
    for t in range(log.n):
        for i, kind in enumerate(log.kinds):
            ind = "S" if log.indicators[t, i] else "F"
            if i < L:
                w.writerow((t, i, kind, int(log.actions[t, i]), ind, int(log.ack_ok[t, i]),
                            int(log.u[t, i]), _fmt(log.eps[t, i]), _fmt(log.loss[t, i])))
            else:
                w.writerow((t, i, kind, int(log.actions[t, i]), ind, "", "", "", ""))


def read_csv(fh) -> RunLog:
    """Rebuild a log from :func:`write_csv` output (agent ``a`` equals the action column)."""
    rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty run CSV")
    n_users = 1 + max(int(r["user_id"]) for r in rows)
    kinds = [""] * n_users
    for r in rows[:n_users]:
        kinds[int(r["user_id"])] = r["kind"]
    n = len(rows) // n_users
    log = RunLog(tuple(kinds), n)
    for r in rows:
        t, i = int(r["slot"]), int(r["user_id"])
        log.actions[t, i] = int(r["action"])
        log.indicators[t, i] = r["indicator"] == "S"
        if r["kind"] == AGENT:
            log.ack_ok[t, i] = r["ack_ok"] == "1"
            log.u[t, i] = int(r["u"])
            log.a[t, i] = int(r["action"])
            log.eps[t, i] = float(r["eps"])
            log.loss[t, i] = float(r["loss"]) if r["loss"] else np.nan
    log.n = n
    return log


def csv_text(log: RunLog) -> str:
    buf = io.StringIO()
    write_csv(log, buf)
    return buf.getvalue()
