"""Vector-reward DQN training and the per-slot agent loop."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch

from .agent import (AgentState, ChannelState, derive_rewards, encoding_width,
                    observe, select_agent_action, select_network_action,
                    advance_state)
from .env import AckPacket, Environment, SlotResult
from .fairness import greedy_actions
from .neural import (RMSProp, build_network, clip_by_global_norm, forward,
                     q_values, sync_target)
from .replay import Batch, DualBuffer, Experience


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    batch_size: int = 64
    buffer_size: int = 1000
    target_sync: int = 20
    eps_start: float = 1.0
    eps_decay: float = 0.995
    eps_min: float = 0.05
    K: int = 8
    M: int = 20
    alpha: float = 0.0
    lr: float = 2e-4
    rms_rho: float = 0.9
    rms_eps: float = 1e-6
    grad_clip: float = 10.0
    hidden: int = 64

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def epsilon_update(eps: float, decay: float = 0.995, floor: float = 0.05) -> float:
    return max(decay * eps, floor)


def target_action(q_next, n_agents: int, alpha: float) -> np.ndarray:
    """Greedy next network action under the target network (ties -> 1).

    ``q_next`` is ``(B, heads, 2)`` (or a single ``(heads, 2)``) from the
    target network evaluated at the next states.
    """
    return greedy_actions(q_next, n_agents, alpha)


def head_rewards(rewards: np.ndarray, n_agents: int) -> np.ndarray:
    """Per-head rewards: head 0 is the sum over agents, then one per non-agent."""
    r = np.asarray(rewards, dtype=np.float64)
    return np.concatenate([r[..., :n_agents].sum(axis=-1, keepdims=True), r[..., n_agents:]], axis=-1)


def td_targets(batch: Batch, target, n_agents: int, cfg: TrainConfig) -> np.ndarray:
    q_next = q_values(target, batch.next_states).astype(np.float64)
    u_next = target_action(q_next, n_agents, cfg.alpha)
    boot = q_next[np.arange(q_next.shape[0]), :, u_next]
    return head_rewards(batch.rewards, n_agents) + cfg.gamma * boot


def loss(batch: Batch, net, target, n_agents: int, cfg: TrainConfig):
    """Summed squared TD error over the batch and all heads.

    Returns ``(loss, grads)``; the target network only enters through the
    constant TD targets.
    """
    if np.any(batch.rewards < 0):
        raise ValueError("training batch contains null rewards")
    y = torch.as_tensor(td_targets(batch, target, n_agents, cfg), dtype=net.dtype)
    q = forward(net, batch.states)
    idx = torch.as_tensor(batch.actions, dtype=torch.long).view(-1, 1, 1).expand(-1, q.shape[1], 1)
    q_sa = q.gather(2, idx).squeeze(2)
    value = ((y - q_sa) ** 2).sum()
    grads = torch.autograd.grad(value, list(net.parameters()))
    return value.item(), grads


class SlotDecision(NamedTuple):
    u: int
    a: int
    eps: float


class DLMAAgent:
    """One learning user: its network pair, buffers, state and known throughputs.

    Agents must be the first ``n_agents`` users, so ``index`` is both the
    agent index and the user index.
    """

    def __init__(self, index: int, n_users: int, n_agents: int, cfg: TrainConfig, streams):
        self.index = index
        self.n_users = n_users
        self.n_agents = n_agents
        self.cfg = cfg
        d = encoding_width(n_users)
        self.net = build_network(d, n_users - n_agents + 1, streams.get(f"agent/{index}/init"), cfg.hidden)
        self.target = sync_target(self.net)
        self.opt = RMSProp(self.net.parameters(), cfg.lr, cfg.rms_rho, cfg.rms_eps)
        self.buffer = DualBuffer(cfg.buffer_size, (cfg.M, d), n_users, cfg.K)
        self.state = AgentState.initial(cfg.M, n_users)
        self.y = np.zeros(n_agents)
        self.eps = cfg.eps_start
        self._explore = streams.get(f"agent/{index}/explore")
        self._sample = streams.get(f"agent/{index}/replay")
        self._last: Optional[SlotDecision] = None

    def q_fn(self, x):
        return q_values(self.net, x)

    def act(self) -> SlotDecision:
        u = select_network_action(self.state, self.q_fn, self.eps, self.cfg.alpha,
                                  self.n_agents, self._explore)
        a = select_agent_action(u, self.y, self.index)
        self._last = SlotDecision(u, a, self.eps)
        self.eps = epsilon_update(self.eps, self.cfg.eps_decay, self.cfg.eps_min)
        return self._last

    def learn(self, t: int, busy: bool, ack: Optional[AckPacket]) -> float:
        """Process the slot's feedback, store/recover experience, train once.

        Returns the training loss, or NaN when the buffer was not ready.
        """
        dec = self._last
        o = observe(dec.a, busy, ack, self.index)
        zz = None if ack is None else ack.histories
        r = derive_rewards(zz, self.n_users)
        if ack is not None:
            self.y = ack.agent_throughputs.copy()
        s_next = advance_state(self.state, ChannelState(dec.a, o, r))
        e = Experience(self.state.rows, dec.u, r, s_next.rows, t)
        if ack is not None:
            self.buffer.recover(t, zz)
        self.buffer.store(e)
        self.state = s_next
        value = self.train_step()
        if t % self.cfg.target_sync == 0:
            self.target = sync_target(self.net)
        return value

    def train_step(self) -> float:
        batch = self.buffer.sample(self.cfg.batch_size, self._sample)
        if batch is None:
            return float("nan")
        value, grads = loss(batch, self.net, self.target, self.n_agents, self.cfg)
        grads, _ = clip_by_global_norm(grads, self.cfg.grad_clip)
        self.opt.step(grads)
        return value


class SlotRecord(NamedTuple):
    result: SlotResult
    ack_ok: tuple
    decisions: tuple
    losses: tuple


def train_slot(env: Environment, agents: Sequence[DLMAAgent]) -> SlotRecord:
    """One lock-step slot: every agent acts, the channel resolves, the AP
    broadcasts, then every agent learns from what reached it."""
    t = env.t
    decisions = tuple(ag.act() for ag in agents)
    result, delivered = env.step([d.a for d in decisions])
    losses = []
    for ag, d, ack in zip(agents, decisions, delivered):
        busy = bool(result.transmitted.sum() - d.a > 0)
        losses.append(ag.learn(t, busy, ack))
    return SlotRecord(result, tuple(a is not None for a in delivered), decisions, tuple(losses))
