"""Slotted shared channel with TDMA/ALOHA coexistors and erasure links.

Indicators are stored as booleans: ``True`` is S (packet received by the
AP), ``False`` is F.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

AGENT, TDMA, ALOHA = "agent", "tdma", "aloha"
DEPENDENT, INDEPENDENT = "dependent", "independent"


@dataclass(frozen=True)
class UserSpec:
    kind: str
    tdma_frame: int = 0
    tdma_slots: frozenset = frozenset()  # zero-indexed frame positions
    aloha_p: float = 0.0
    e_up: Optional[float] = None  # per-user uplink override

    def __post_init__(self):
        if self.kind not in (AGENT, TDMA, ALOHA):
            raise ValueError(f"unknown user kind {self.kind!r}")
        if self.kind == TDMA:
            if self.tdma_frame < 1:
                raise ValueError("tdma_frame must be >= 1")
            if not self.tdma_slots or any(not 0 <= s < self.tdma_frame for s in self.tdma_slots):
                raise ValueError(f"tdma_slots {sorted(self.tdma_slots)} outside [0, {self.tdma_frame})")
        if self.kind == ALOHA and not 0.0 <= self.aloha_p <= 1.0:
            raise ValueError(f"aloha_p must be in [0, 1], got {self.aloha_p}")
        if self.e_up is not None and not 0.0 <= self.e_up <= 1.0:
            raise ValueError(f"e_up override must be in [0, 1], got {self.e_up}")

    @classmethod
    def agent(cls) -> "UserSpec":
        return cls(AGENT)

    @classmethod
    def tdma(cls, frame: int, nth: Sequence[int] | int) -> "UserSpec":
        """TDMA user sending in the ``nth`` slot(s) of each frame, one-indexed."""
        nth = [nth] if isinstance(nth, int) else list(nth)
        return cls(TDMA, tdma_frame=frame, tdma_slots=frozenset(n - 1 for n in nth))

    @classmethod
    def aloha(cls, p: float) -> "UserSpec":
        return cls(ALOHA, aloha_p=p)


@dataclass(frozen=True)
class ChannelConfig:
    e_up: float = 0.0
    e_down: float = 0.0
    downlink_mode: str = DEPENDENT

    def __post_init__(self):
        for name in ("e_up", "e_down"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.downlink_mode not in (DEPENDENT, INDEPENDENT):
            raise ValueError(f"downlink_mode must be dependent or independent, got {self.downlink_mode!r}")


@dataclass(frozen=True)
class SlotResult:
    slot: int
    transmitted: np.ndarray  # int8 per user
    indicator: np.ndarray  # bool per user, True == S
    channel_busy: bool


@dataclass(frozen=True)
class AckPacket:
    """Feedback broadcast by the AP at the end of a slot.

    ``histories[i, k]`` is user ``i``'s indicator ``k`` slots ago (column 0
    is the current slot).
    """

    slot: int
    histories: np.ndarray  # (N, K) bool
    agent_throughputs: np.ndarray  # (L,) float

    @property
    def depth(self) -> int:
        return self.histories.shape[1]


def non_agent_action(user: UserSpec, t: int, rng: np.random.Generator | None = None) -> int:
    if user.kind == TDMA:
        return int((t % user.tdma_frame) in user.tdma_slots)
    if user.kind == ALOHA:
        return int(rng.random() < user.aloha_p)
    raise ValueError("agents choose their own actions")


def uplink_erasures(users: Sequence[UserSpec], cfg: ChannelConfig) -> np.ndarray:
    return np.array([cfg.e_up if u.e_up is None else u.e_up for u in users], dtype=np.float64)


def step(actions, t: int, cfg: ChannelConfig, rng: np.random.Generator,
         e_up: np.ndarray | None = None) -> SlotResult:
    """Resolve one slot: collisions, then uplink erasure of a lone packet.

    One uniform is consumed per slot whether or not it is needed, so the
    uplink stream stays aligned across configurations.
    """
    tx = np.asarray(actions, dtype=np.int8)
    draw = rng.random()
    indicator = np.zeros(tx.shape[0], dtype=bool)
    n_tx = int(tx.sum())
    if n_tx == 1:
        who = int(np.flatnonzero(tx)[0])
        p_err = cfg.e_up if e_up is None else e_up[who]
        indicator[who] = draw >= p_err
    return SlotResult(t, tx, indicator, n_tx > 0)


class ThroughputTracker:
    """Per-user success rate R/W, cumulative or over a sliding window."""

    def __init__(self, n_users: int, window: int | None = None):
        self.window = window
        self.successes = np.zeros(n_users, dtype=np.int64)
        self.elapsed = 0
        self._recent: deque = deque()

    def update(self, result: SlotResult) -> np.ndarray:
        self.successes += result.indicator
        self.elapsed += 1
        if self.window is not None:
            self._recent.append(result.indicator)
            if len(self._recent) > self.window:
                self.successes -= self._recent.popleft()
        return self.throughputs()

    def throughputs(self) -> np.ndarray:
        w = self.elapsed if self.window is None else min(self.elapsed, self.window)
        if w == 0:
            return np.zeros_like(self.successes, dtype=np.float64)
        return self.successes / w


def update_throughputs(result: SlotResult, tracker: ThroughputTracker) -> np.ndarray:
    return tracker.update(result)


def build_ack(t: int, history: Sequence[SlotResult], agent_throughputs, depth: int,
              n_users: int | None = None) -> AckPacket:
    """Assemble the ACK for slot ``t`` from the most recent results.

    ``history`` is ordered oldest to newest and its last element must be slot
    ``t``. Slots before time 0 are padded with F.
    """
    if n_users is None:
        n_users = history[-1].indicator.shape[0]
    hist = np.zeros((n_users, depth), dtype=bool)
    for res in history:
        k = t - res.slot
        if 0 <= k < depth:
            hist[:, k] = res.indicator
    return AckPacket(t, hist, np.array(agent_throughputs, dtype=np.float64))


def deliver_ack(ack: AckPacket, cfg: ChannelConfig, rng: np.random.Generator,
                n_agents: int) -> list[Optional[AckPacket]]:
    if cfg.downlink_mode == DEPENDENT:
        ok = rng.random() >= cfg.e_down
        return [ack if ok else None] * n_agents
    draws = rng.random(n_agents)
    return [ack if d >= cfg.e_down else None for d in draws]


@dataclass
class Environment:
    """AP-side world state: users, link models, K-deep indicator history."""

    users: Sequence[UserSpec]
    channel: ChannelConfig
    ack_depth: int
    streams: object  # dlma.rng.Streams
    throughput_window: int | None = None
    t: int = 0
    _history: deque = field(init=False, repr=False)

    def __post_init__(self):
        self.users = tuple(self.users)
        self.n_users = len(self.users)
        self.agent_ids = [i for i, u in enumerate(self.users) if u.kind == AGENT]
        self.n_agents = len(self.agent_ids)
        self.tracker = ThroughputTracker(self.n_users, self.throughput_window)
        self._e_up = uplink_erasures(self.users, self.channel)
        self._history = deque(maxlen=self.ack_depth)
        self._uplink = self.streams.get("uplink")
        self._downlink = self.streams.get("downlink")
        self._aloha = {i: self.streams.get(f"aloha/{i}")
                       for i, u in enumerate(self.users) if u.kind == ALOHA}

    def non_agent_actions(self) -> dict[int, int]:
        return {i: non_agent_action(u, self.t, self._aloha.get(i))
                for i, u in enumerate(self.users) if u.kind != AGENT}

    def step(self, agent_actions: Sequence[int]):
        """Advance one slot; returns the result and each agent's delivered ACK."""
        actions = np.zeros(self.n_users, dtype=np.int8)
        for i, a in zip(self.agent_ids, agent_actions):
            actions[i] = a
        for i, a in self.non_agent_actions().items():
            actions[i] = a
        result = step(actions, self.t, self.channel, self._uplink, self._e_up)
        x = self.tracker.update(result)
        self._history.append(result)
        ack = build_ack(self.t, self._history, x[self.agent_ids], self.ack_depth, self.n_users)
        delivered = deliver_ack(ack, self.channel, self._downlink, self.n_agents)
        self.t += 1
        return result, delivered
