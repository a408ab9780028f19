"""Model-aware benchmark: best periodic transmit policy for the agent network.

The benchmark network knows every TDMA schedule and ALOHA probability and
has perfect feedback, so its only decision is a transmit probability for
each position of the (lcm) TDMA frame. One agent transmits at a time and
transmissions rotate over agents.

Every user's expected throughput is affine in those probabilities and the
alpha-fair objective is concave in throughput, so the search below (all
deterministic policies plus coordinate ascent) finds the global optimum.
Positions with the same set of TDMA transmitters are interchangeable, which
keeps the enumeration small.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .env import AGENT, ALOHA, TDMA, ChannelConfig, UserSpec, uplink_erasures
from .fairness import objective

MAX_ENUM_FRAME = 32
MAX_FRAME = 1024
MAX_ENUM_POLICIES = 1 << 20
GRID_STEP = 0.01


class OracleCapabilityError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicPolicy:
    probs: tuple  # transmit probability per frame position

    def __post_init__(self):
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ValueError("policy probabilities must be in [0, 1]")

    @property
    def frame(self) -> int:
        return len(self.probs)

    @classmethod
    def constant(cls, p: float, frame: int) -> "PeriodicPolicy":
        return cls(tuple([float(p)] * frame))


def frame_length(users: Sequence[UserSpec]) -> int:
    frames = [u.tdma_frame for u in users if u.kind == TDMA]
    return math.lcm(*frames) if frames else 1


def _tdma_sets(users, frame) -> list[frozenset]:
    return [frozenset(i for i, u in enumerate(users)
                      if u.kind == TDMA and (j % u.tdma_frame) in u.tdma_slots)
            for j in range(frame)]


class _Model:
    """Throughput as ``base + coef @ s`` in the per-class transmit probability ``s``."""

    def __init__(self, users: Sequence[UserSpec], cfg: ChannelConfig):
        self.users = tuple(users)
        self.n = len(self.users)
        self.agents = [i for i, u in enumerate(self.users) if u.kind == AGENT]
        if not self.agents:
            raise ValueError("need at least one agent")
        self.frame = frame_length(self.users)
        if self.frame > MAX_FRAME:
            raise OracleCapabilityError(f"frame length {self.frame} exceeds {MAX_FRAME}")
        self.ok = 1.0 - uplink_erasures(self.users, cfg)
        self.q = np.array([u.aloha_p if u.kind == ALOHA else 0.0 for u in self.users])
        sets = _tdma_sets(self.users, self.frame)
        self.classes = sorted(set(sets), key=lambda s: (len(s), sorted(s)))
        self.positions = [[j for j in range(self.frame) if sets[j] == c] for c in self.classes]
        self.base = np.zeros(self.n)
        self.coef = np.zeros((self.n, len(self.classes)))
        for c, (tset, pos) in enumerate(zip(self.classes, self.positions)):
            w = len(pos) / self.frame
            b, k = self._position(tset)
            self.base += w * b
            self.coef[:, c] = w * k

    def _position(self, tset):
        """Success probabilities at one position as ``b + k * p``."""
        b, k = np.zeros(self.n), np.zeros(self.n)
        quiet = np.prod(1.0 - self.q)
        L = len(self.agents)
        if not tset:
            for i in self.agents:
                k[i] = self.ok[i] * quiet / L
        for i, u in enumerate(self.users):
            if u.kind == TDMA and i in tset and len(tset) == 1:
                b[i] = self.ok[i] * quiet
                k[i] = -b[i]
            elif u.kind == ALOHA and not tset:
                others = np.prod([1.0 - self.q[j] for j in range(self.n) if j != i])
                b[i] = self.q[i] * self.ok[i] * others
                k[i] = -b[i]
        return b, k

    def throughputs(self, s) -> np.ndarray:
        return self.base + self.coef @ np.asarray(s, dtype=np.float64)

    def class_probs(self, policy: PeriodicPolicy) -> np.ndarray:
        if policy.frame != self.frame:
            raise ValueError(f"policy frame {policy.frame} != model frame {self.frame}")
        return np.array([np.mean([policy.probs[j] for j in pos]) for pos in self.positions])

    def to_policy(self, s, counts=None) -> PeriodicPolicy:
        probs = [0.0] * self.frame
        for c, pos in enumerate(self.positions):
            if counts is not None:
                for j in pos[:counts[c]]:
                    probs[j] = 1.0
            else:
                for j in pos:
                    probs[j] = float(s[c])
        return PeriodicPolicy(tuple(probs))


def evaluate_policy(policy: PeriodicPolicy, users: Sequence[UserSpec], cfg: ChannelConfig) -> np.ndarray:
    """Exact expected per-user throughput of a periodic policy."""
    model = _Model(users, cfg)
    return np.clip(model.throughputs(model.class_probs(policy)), 0.0, 1.0)


def _score(model: _Model, s, alpha: float) -> float:
    return objective(np.clip(model.throughputs(s), 0.0, 1.0), alpha)


def _enumerate(model: _Model, alpha: float):
    sizes = [len(p) for p in model.positions]
    if alpha == 0.0:
        # linear objective: each class independently all-on or all-off
        gain = model.coef.sum(axis=0)
        counts = [n if g > 0 else 0 for n, g in zip(sizes, gain)]
        s = np.array([c / n for c, n in zip(counts, sizes)])
        return s, counts, _score(model, s, alpha)
    best = (None, None, -math.inf)
    for counts in itertools.product(*(range(n + 1) for n in sizes)):
        s = np.array([c / n for c, n in zip(counts, sizes)])
        v = _score(model, s, alpha)
        if v > best[2]:
            best = (s, list(counts), v)
    return best


def _refine(model: _Model, s0, alpha: float, sweeps: int = 200):
    s = np.array(s0, dtype=np.float64)
    n_c = len(s)
    if n_c <= 2:
        grid = np.round(np.arange(0.0, 1.0 + GRID_STEP / 2, GRID_STEP), 10)
        best = _score(model, s, alpha)
        for point in itertools.product(grid, repeat=n_c):
            v = _score(model, point, alpha)
            if v > best:
                best, s = v, np.array(point)
    value = _score(model, s, alpha)
    for _ in range(sweeps):
        start = value
        for c in range(n_c):
            def neg(p, c=c):
                trial = s.copy()
                trial[c] = p
                return -_score(model, trial, alpha)
            res = minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded",
                                  options={"xatol": 1e-10})
            for cand in (res.x, 0.0, 1.0):
                if -neg(cand) > value:
                    value, s[c] = -neg(cand), cand
        if value - start <= 1e-13:
            break
    return s, value


def optimal_coexistence(users: Sequence[UserSpec], cfg: ChannelConfig, alpha: float,
                        n_agents: int | None = None):
    """Return ``(policy, throughputs, objective)`` of the best benchmark policy.

    Downlink erasure is ignored: the benchmark user has perfect feedback.
    """
    model = _Model(users, cfg)
    if n_agents is not None and n_agents != len(model.agents):
        raise ValueError(f"n_agents={n_agents} but users contain {len(model.agents)} agents")
    n_det = math.prod(len(p) + 1 for p in model.positions)
    enumerable = model.frame <= MAX_ENUM_FRAME and (alpha == 0.0 or n_det <= MAX_ENUM_POLICIES)
    if enumerable:
        s_det, counts, v_det = _enumerate(model, alpha)
    else:
        s_det, counts, v_det = np.full(len(model.positions), 0.5), None, -math.inf
    s, v = _refine(model, s_det, alpha)
    if v > v_det + 1e-12 or counts is None:
        policy = model.to_policy(s)
    else:
        s, v, policy = s_det, v_det, model.to_policy(s_det, counts)
    x = evaluate_policy(policy, users, cfg)
    return policy, x, objective(x, alpha)


def monte_carlo(policy: PeriodicPolicy, users: Sequence[UserSpec], cfg: ChannelConfig,
                slots: int, rng: np.random.Generator):
    """Simulate a fixed policy slot by slot (vectorised).

    Returns ``(mean, stderr)`` of per-user throughput. Agent transmissions
    rotate round-robin over agents.
    """
    users = tuple(users)
    n = len(users)
    agents = [i for i, u in enumerate(users) if u.kind == AGENT]
    t = np.arange(slots)
    probs = np.asarray(policy.probs)
    tx = np.zeros((slots, n), dtype=np.int8)
    net_tx = rng.random(slots) < probs[t % policy.frame]
    turn = (np.cumsum(net_tx) - 1) % len(agents)
    for k, i in enumerate(agents):
        tx[:, i] = net_tx & (turn == k)
    for i, u in enumerate(users):
        if u.kind == TDMA:
            tx[:, i] = np.isin(t % u.tdma_frame, list(u.tdma_slots))
        elif u.kind == ALOHA:
            tx[:, i] = rng.random(slots) < u.aloha_p
    lone = tx.sum(axis=1) == 1
    e_up = uplink_erasures(users, cfg)
    draws = rng.random(slots)
    succ = (tx == 1) & lone[:, None] & (draws[:, None] >= e_up[None, :])
    mean = succ.mean(axis=0)
    stderr = succ.std(axis=0, ddof=1) / np.sqrt(slots)
    return mean, stderr
