"""Per-agent observations, reward vectors, state, and two-stage action selection."""

from __future__ import annotations

from enum import IntEnum
from typing import Callable, NamedTuple, Optional

import numpy as np

from .env import AckPacket
from .fairness import network_scores

NULL = -1  # reward value when the ACK was lost


class Obs(IntEnum):
    B = 0  # silent, channel used by someone else
    I = 1  # silent, channel idle  # noqa: E741
    S = 2  # transmitted, ACK says success
    F = 3  # transmitted, ACK says failure
    NULL = 4  # transmitted, ACK lost


class ChannelState(NamedTuple):
    action: int
    obs: Obs
    rewards: np.ndarray  # (N,) int8 in {0, 1, NULL}


def observe(a: int, busy: bool, ack: Optional[AckPacket], self_index: int) -> Obs:
    """Table of the five possible observations.

    ``busy`` is what the agent senses on the medium while silent; it is not
    affected by downlink loss. A transmitting agent learns its outcome only
    from the ACK.
    """
    if not a:
        return Obs.B if busy else Obs.I
    if ack is None:
        return Obs.NULL
    return Obs.S if ack.histories[self_index, 0] else Obs.F


def derive_rewards(zz: Optional[np.ndarray], n_users: int | None = None) -> np.ndarray:
    """Reward per user from the ACK's history part; all NULL if it was lost."""
    if zz is None:
        if n_users is None:
            raise ValueError("n_users required when the ACK is lost")
        return np.full(n_users, NULL, dtype=np.int8)
    return zz[:, 0].astype(np.int8)


def encoding_width(n_users: int) -> int:
    return 7 + 3 * n_users


def encode(c: ChannelState) -> np.ndarray:
    """One-hot action (2) + one-hot observation (5) + per-user one-hot
    reward over {0, 1, null} (3 each)."""
    n = c.rewards.shape[0]
    v = np.zeros(encoding_width(n), dtype=np.float32)
    v[c.action] = 1.0
    v[2 + int(c.obs)] = 1.0
    idx = np.where(c.rewards == NULL, 2, c.rewards).astype(np.int64)
    v[7 + 3 * np.arange(n) + idx] = 1.0
    return v


class AgentState:
    """The last ``M`` encoded channel states, newest first.

    Slots before the start of the run are all-zero rows (no category set).
    """

    __slots__ = ("rows",)

    def __init__(self, rows: np.ndarray):
        self.rows = rows

    @classmethod
    def initial(cls, m: int, n_users: int) -> "AgentState":
        return cls(np.zeros((m, encoding_width(n_users)), dtype=np.float32))

    def __len__(self):
        return self.rows.shape[0]

    def sequence(self) -> np.ndarray:
        """Rows ordered oldest to newest, as the recurrent layer consumes them."""
        return np.ascontiguousarray(self.rows[::-1])


def advance_state(s: AgentState, c_new: ChannelState) -> AgentState:
    rows = np.empty_like(s.rows)
    rows[0] = encode(c_new)
    rows[1:] = s.rows[:-1]
    return AgentState(rows)


QFunction = Callable[[np.ndarray], np.ndarray]


def select_network_action(s: AgentState, q_fn: QFunction, eps: float, alpha: float,
                          n_agents: int, rng: np.random.Generator) -> int:
    """Epsilon-greedy network action.

    ``q_fn`` maps a batch of oldest-first sequences ``(B, M, D)`` to Q values
    ``(B, heads, 2)``. Greedy ties resolve to 1.
    """
    if rng.random() < eps:
        return int(rng.integers(2))
    q = q_fn(s.sequence()[None])[0]
    sc = network_scores(q, n_agents, alpha)
    return int(sc[1] >= sc[0])


def select_agent_action(u: int, y, index: int) -> int:
    """Stage two: transmit only if the network action is 1 and this agent has
    the smallest known throughput, lowest index winning ties.

    ``index`` is zero-based.
    """
    if not u:
        return 0
    y = np.asarray(y)
    mine = y[index]
    if mine != y.min():
        return 0
    return int(np.all(y[:index] > mine))
