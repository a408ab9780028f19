"""Two-buffer experience replay with delayed reward recovery.

Experiences whose ACK was lost wait in a short incomplete buffer. The next
received ACK carries the last ``K`` indicators of every user, which fills in
the rewards of anything at most ``K - 1`` slots old; the rest is dropped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .agent import NULL


@dataclass
class Experience:
    s: np.ndarray  # (M, D) newest-first rows
    u: int
    rewards: np.ndarray  # (N,) int8
    s_next: np.ndarray
    slot: int

    @property
    def complete(self) -> bool:
        return not np.any(self.rewards == NULL)


class Batch(NamedTuple):
    states: np.ndarray  # (B, M, D) oldest first
    actions: np.ndarray  # (B,)
    rewards: np.ndarray  # (B, N)
    next_states: np.ndarray
    slots: np.ndarray


class DualBuffer:
    def __init__(self, capacity: int, state_shape: tuple[int, int], n_users: int, depth: int):
        self.capacity = capacity
        self.depth = depth
        self.incomplete: deque[Experience] = deque()
        self._s = np.zeros((capacity, *state_shape), dtype=np.float32)
        self._s_next = np.zeros_like(self._s)
        self._u = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros((capacity, n_users), dtype=np.int8)
        self._slot = np.zeros(capacity, dtype=np.int64)
        self._ptr = 0
        self.size = 0
        self.n_complete_direct = 0
        self.n_recovered = 0
        self.n_discarded = 0

    def __len__(self):
        return self.size

    def _push(self, e: Experience) -> None:
        i = self._ptr
        # stored oldest-first so sampling needs no reordering
        self._s[i] = e.s[::-1]
        self._s_next[i] = e.s_next[::-1]
        self._u[i] = e.u
        self._r[i] = e.rewards
        self._slot[i] = e.slot
        self._ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def store(self, e: Experience) -> None:
        if e.complete:
            self._push(e)
            self.n_complete_direct += 1
        else:
            if np.any(e.rewards != NULL):
                raise ValueError("reward vector must be all null or all concrete")
            self.incomplete.append(e)
            # the earliest future ACK is at e.slot + 1 and reaches back K - 1 slots
            while self.incomplete and e.slot - self.incomplete[0].slot >= self.depth - 1:
                self.incomplete.popleft()
                self.n_discarded += 1

    def recover(self, t: int, zz: np.ndarray) -> int:
        """Back-fill rewards of incomplete experiences from the ACK received
        at slot ``t`` and promote them; then clear the incomplete buffer."""
        n = 0
        for e in self.incomplete:
            dt = t - e.slot
            if 1 <= dt <= self.depth - 1:
                e.rewards = zz[:, dt].astype(np.int8)
                self._push(e)
                n += 1
            else:
                self.n_discarded += 1
        self.incomplete.clear()
        self.n_recovered += n
        return n

    def sample(self, n: int, rng: np.random.Generator) -> Optional[Batch]:
        """``n`` distinct complete experiences, or ``None`` if fewer are stored."""
        if self.size < n:
            return None
        idx = rng.choice(self.size, size=n, replace=False)
        return Batch(self._s[idx], self._u[idx], self._r[idx], self._s_next[idx], self._slot[idx])

    def complete_experiences(self) -> list[Experience]:
        order = [(self._ptr - self.size + k) % self.capacity for k in range(self.size)]
        return [Experience(self._s[i][::-1].copy(), int(self._u[i]), self._r[i].copy(),
                           self._s_next[i][::-1].copy(), int(self._slot[i])) for i in order]

    def dump(self, path) -> None:
        """Debug dump: one line per complete experience (oldest first)."""
        import hashlib

        with open(path, "w") as fh:
            fh.write("slot,u,rewards,state_hash\n")
            for e in self.complete_experiences():
                digest = hashlib.sha1(e.s.tobytes()).hexdigest()[:12]
                rw = "".join(str(int(r)) for r in e.rewards)
                fh.write(f"{e.slot},{e.u},{rw},{digest}\n")
