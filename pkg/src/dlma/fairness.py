"""Alpha-fair utilities and the network-action score built on them."""

from __future__ import annotations

import math

import numpy as np

X_FLOOR = 1e-6
Q_FLOOR = 1e-6


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha >= 0.0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return alpha


def utility(x: float, alpha: float) -> float:
    """Alpha-fair utility of a single throughput value.

    ``alpha == 0`` is the identity, ``alpha == 1`` is ``log``. For any
    ``alpha > 0`` the argument is clamped to ``X_FLOOR`` so zero throughput
    maps to a large negative number instead of ``-inf``/NaN.
    """
    alpha = _check_alpha(alpha)
    if x < 0:
        raise ValueError(f"throughput must be nonnegative, got {x}")
    if alpha == 0.0:
        return float(x)
    x = max(float(x), X_FLOOR)
    if alpha == 1.0:
        return math.log(x)
    return x ** (1.0 - alpha) / (1.0 - alpha)


def utility_array(x, alpha: float, floor: float = X_FLOOR) -> np.ndarray:
    """Vectorised utility. Unlike :func:`utility`, negative entries are
    clamped rather than rejected (used on Q estimates)."""
    alpha = _check_alpha(alpha)
    x = np.asarray(x, dtype=np.float64)
    if alpha == 0.0:
        return x.copy()
    x = np.maximum(x, floor)
    if alpha == 1.0:
        return np.log(x)
    return x ** (1.0 - alpha) / (1.0 - alpha)


def objective(x, alpha: float) -> float:
    """Sum of per-user utilities of a throughput vector."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("throughputs must be nonnegative")
    return float(np.sum(utility_array(x, alpha)))


def network_scores(q, n_agents: int, alpha: float) -> np.ndarray:
    """Score of each network action for one or more Q vectors.

    ``q`` has shape ``(..., heads, 2)``: head 0 is the aggregate agent head,
    heads 1.. are the non-agent users, the last axis is the network action.
    Returns shape ``(..., 2)``.
    """
    q = np.asarray(q, dtype=np.float64)
    if alpha == 0.0:
        agg = q[..., 0, :]
    else:
        agg = n_agents * utility_array(np.maximum(q[..., 0, :], Q_FLOOR) / n_agents, alpha)
    others = utility_array(q[..., 1:, :], alpha, Q_FLOOR).sum(axis=-2)
    return agg + others


def network_score(q, action: int, n_agents: int, alpha: float) -> float:
    """Score of one network action; ``q`` has shape ``(heads, 2)``."""
    return float(network_scores(q, n_agents, alpha)[action])


def greedy_actions(q, n_agents: int, alpha: float) -> np.ndarray:
    """Argmax network action per Q vector; ties go to action 1."""
    s = network_scores(q, n_agents, alpha)
    return (s[..., 1] >= s[..., 0]).astype(np.int64)
