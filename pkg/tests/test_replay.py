import numpy as np
import pytest

from dlma.agent import NULL
from dlma.env import AckPacket, ChannelConfig, deliver_ack
from dlma.replay import DualBuffer, Experience


def _exp(slot, rewards, n=2):
    s = np.full((2, 3), slot, np.float32)
    r = np.array(rewards if rewards is not None else [NULL] * n, dtype=np.int8)
    return Experience(s, slot % 2, r, s + 1, slot)


def test_store_routes_by_completeness():
    buf = DualBuffer(10, (2, 3), 2, depth=8)
    buf.store(_exp(0, [1, 0]))
    buf.store(_exp(1, None))
    assert len(buf) == 1 and len(buf.incomplete) == 1
    with pytest.raises(ValueError):
        buf.store(_exp(2, [1, NULL]))


def test_recover_back_fills_from_history():
    buf = DualBuffer(10, (2, 3), 2, depth=8)
    buf.store(_exp(5, None))
    zz = np.zeros((2, 8), bool)
    zz[0, 3] = True
    assert buf.recover(8, zz) == 1
    (e,) = buf.complete_experiences()
    assert e.rewards.tolist() == [1, 0] and e.slot == 5
    assert not buf.incomplete


def test_recover_discards_out_of_reach():
    buf = DualBuffer(10, (2, 3), 2, depth=4)
    buf.store(_exp(0, None))
    assert buf.recover(4, np.ones((2, 4), bool)) == 0
    assert buf.n_discarded == 1 and len(buf) == 0


def test_depth_one_recovers_nothing():
    buf = DualBuffer(10, (2, 3), 2, depth=1)
    buf.store(_exp(0, None))
    assert buf.recover(1, np.ones((2, 1), bool)) == 0
    assert not buf.incomplete


def test_lazy_prune_keeps_only_recoverable():
    buf = DualBuffer(10, (2, 3), 2, depth=3)
    for t in range(5):
        buf.store(_exp(t, None))
    # a future ACK at slot 5 reaches back to slot 3 only
    assert [e.slot for e in buf.incomplete] == [3, 4]
    assert buf.n_discarded == 3


def test_sample_sizes():
    rng = np.random.default_rng(0)
    buf = DualBuffer(1000, (2, 3), 2, depth=8)
    for t in range(10):
        buf.store(_exp(t, [1, 1]))
    assert buf.sample(64, rng) is None
    full = buf.sample(10, rng)
    assert sorted(full.slots.tolist()) == list(range(10))
    for t in range(10, 1200):
        buf.store(_exp(t, [0, 1]))
    batch = buf.sample(64, rng)
    assert len(set(batch.slots.tolist())) == 64
    assert len(buf) == 1000 and batch.slots.min() >= 200


def test_sample_returns_oldest_first_sequences():
    buf = DualBuffer(4, (2, 3), 2, depth=8)
    s = np.array([[1.0] * 3, [0.0] * 3], np.float32)  # newest first
    buf.store(Experience(s, 1, np.array([1, 0], np.int8), s, 0))
    b = buf.sample(1, np.random.default_rng(0))
    assert b.states[0, -1].tolist() == [1.0] * 3


def test_dump(tmp_path):
    buf = DualBuffer(4, (2, 3), 2, depth=8)
    buf.store(_exp(0, [1, 0]))
    buf.dump(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "slot,u,rewards,state_hash" and lines[1].startswith("0,0,10,")


def discard_fraction(e_down, depth, slots, seed=0):
    """Drive dependent ACK delivery and a replay buffer; fraction never completed."""
    cfg = ChannelConfig(e_down=e_down)
    rng = np.random.default_rng(seed)
    buf = DualBuffer(16, (1, 1), 1, depth)
    zz = np.ones((1, depth), bool)
    s = np.zeros((1, 1), np.float32)
    for t in range(slots):
        (ack,) = deliver_ack(AckPacket(t, zz, np.zeros(1)), cfg, rng, 1)
        if ack is not None:
            buf.recover(t, zz)
            buf.store(Experience(s, 0, np.ones(1, np.int8), s, t))
        else:
            buf.store(Experience(s, 0, np.full(1, NULL, np.int8), s, t))
    # trailing experiences may still be recoverable; they are excluded
    pending = len(buf.incomplete)
    return buf.n_discarded / (slots - pending)


def discard_stderr(e_down, depth, slots):
    """Standard error of the discard fraction; discard events of slots less
    than ``depth`` apart share downlink draws."""
    p = e_down ** depth
    var = p * (1 - p) + 2 * sum(e_down ** (depth + d) - p * p for d in range(1, depth))
    return np.sqrt(var / slots)


@pytest.mark.parametrize("e_down,depth", [(0.3, 2), (0.5, 3)])
def test_discard_fraction_follows_power_law(e_down, depth):
    n = 30_000
    frac = discard_fraction(e_down, depth, n, seed=1)
    assert abs(frac - e_down ** depth) < 3 * discard_stderr(e_down, depth, n)
