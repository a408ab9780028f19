"""Recurrent Q-network: LSTM -> dense -> dense -> multi-head output.

Gradients come from torch autograd; the optimiser and initialisation are
implemented here so both are reproducible from a numpy seed.
"""

from __future__ import annotations

import copy
import io
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class QNetwork(nn.Module):
    """Maps ``(B, M, D)`` oldest-first sequences to ``(B, heads, 2)`` Q values.

    Head 0 is the aggregate agent head, heads 1.. are non-agent users.
    """

    def __init__(self, input_dim: int, n_heads: int, hidden: int = 64,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.input_dim = input_dim
        self.n_heads = n_heads
        self.hidden = hidden
        self.lstm = nn.LSTM(input_dim, hidden, batch_first=True, dtype=dtype)
        self.fc1 = nn.Linear(hidden, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, hidden, dtype=dtype)
        self.out = nn.Linear(hidden, 2 * n_heads, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, (h, _) = self.lstm(x)
        z = torch.relu(self.fc1(h[-1]))
        z = torch.relu(self.fc2(z))
        return self.out(z).view(-1, self.n_heads, 2)

    @property
    def dtype(self) -> torch.dtype:
        return self.out.weight.dtype


def init_params(net: QNetwork, rng: np.random.Generator) -> QNetwork:
    """Uniform fan-in init for dense layers, uniform(+-1/sqrt(H)) for the
    recurrent weights, forget-gate bias 1."""
    h = net.hidden
    fan_in = {"lstm": h, "fc1": h, "fc2": h, "out": h}
    with torch.no_grad():
        for name, p in net.named_parameters():
            layer = name.split(".", 1)[0]
            bound = 1.0 / np.sqrt(fan_in[layer])
            if name.startswith("lstm.bias"):
                vals = np.zeros(p.shape)
                if name == "lstm.bias_ih_l0":
                    vals[h:2 * h] = 1.0  # gate order i, f, g, o
            else:
                vals = rng.uniform(-bound, bound, size=p.shape)
            p.copy_(torch.as_tensor(vals, dtype=p.dtype))
    return net


def build_network(input_dim: int, n_heads: int, rng: np.random.Generator, hidden: int = 64,
                  dtype: torch.dtype = torch.float32) -> QNetwork:
    return init_params(QNetwork(input_dim, n_heads, hidden, dtype), rng)


def forward(net: QNetwork, x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=net.dtype)
    q = net(x)
    if not torch.isfinite(q).all():
        bad = [n for n, p in net.named_parameters() if not torch.isfinite(p).all()]
        raise NonFiniteError(
            f"non-finite Q values (input finite: {bool(torch.isfinite(x).all())}, "
            f"non-finite params: {bad or 'none'})")
    return q


def q_values(net: QNetwork, x) -> np.ndarray:
    with torch.no_grad():
        return forward(net, x).numpy()


def sync_target(net: QNetwork) -> QNetwork:
    target = copy.deepcopy(net)
    for p in target.parameters():
        p.requires_grad_(False)
    return target


class RMSProp:
    """``v <- rho v + (1 - rho) g^2;  w <- w - lr g / sqrt(v + eps)``."""

    def __init__(self, params, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-6):
        self.params = list(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.v = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter expected")
        if not all_finite(grads):
            raise NonFiniteError("non-finite gradient")
        torch._foreach_mul_(self.v, self.rho)
        torch._foreach_addcmul_(self.v, grads, grads, value=1.0 - self.rho)
        denom = torch._foreach_add(self.v, self.eps)
        torch._foreach_sqrt_(denom)
        torch._foreach_addcdiv_(self.params, grads, denom, value=-self.lr)


def all_finite(tensors) -> bool:
    return bool(torch.isfinite(torch.cat([t.reshape(-1) for t in tensors])).all())


def train_on_batch(net: QNetwork, grads, opt: RMSProp) -> QNetwork:
    opt.step(grads)
    return net


def clip_by_global_norm(grads, max_norm: float):
    total = float(torch.linalg.vector_norm(torch.stack(torch._foreach_norm(grads))))
    if total > max_norm:
        grads = torch._foreach_mul(grads, max_norm / total)
    return grads, total


def save_checkpoint(path, net: QNetwork, opt: RMSProp | None = None) -> None:
    """Dump every tensor (and optimiser accumulators) into an ``.npz``."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION),
              "__arch__": np.array([net.input_dim, net.n_heads, net.hidden])}
    for name, p in net.named_parameters():
        arrays[f"param/{name}"] = p.detach().numpy().copy()
    if opt is not None:
        for (name, _), v in zip(net.named_parameters(), opt.v):
            arrays[f"rms/{name}"] = v.numpy().copy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, opt_kwargs: dict | None = None):
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        d, heads, hidden = (int(v) for v in data["__arch__"])
        first = data["param/out.weight"]
        net = QNetwork(d, heads, hidden, dtype=torch.from_numpy(first).dtype)
        with torch.no_grad():
            for name, p in net.named_parameters():
                p.copy_(torch.from_numpy(data[f"param/{name}"]))
        opt = None
        if any(k.startswith("rms/") for k in data.files):
            opt = RMSProp(net.parameters(), **(opt_kwargs or {}))
            for (name, _), v in zip(net.named_parameters(), opt.v):
                v.copy_(torch.from_numpy(data[f"rms/{name}"]))
    return net, opt


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_forward(net: QNetwork, x: np.ndarray, return_gates: bool = False):
    """Plain numpy evaluation of the same network, step by step."""
    p = {n: t.detach().double().numpy() for n, t in net.named_parameters()}
    x = np.asarray(x, dtype=np.float64)
    b, m, _ = x.shape
    hdim = net.hidden
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    gates = []
    for t in range(m):
        z = x[:, t] @ p["lstm.weight_ih_l0"].T + p["lstm.bias_ih_l0"] \
            + h @ p["lstm.weight_hh_l0"].T + p["lstm.bias_hh_l0"]
        i = _sigmoid(z[:, :hdim])
        f = _sigmoid(z[:, hdim:2 * hdim])
        g = np.tanh(z[:, 2 * hdim:3 * hdim])
        o = _sigmoid(z[:, 3 * hdim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates.append((i, f, g, o))
    z = np.maximum(h @ p["fc1.weight"].T + p["fc1.bias"], 0)
    z = np.maximum(z @ p["fc2.weight"].T + p["fc2.bias"], 0)
    q = (z @ p["out.weight"].T + p["out.bias"]).reshape(b, net.n_heads, 2)
    return (q, gates) if return_gates else q
